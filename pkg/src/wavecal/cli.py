"""Command-line entry point: ``wavecal <subcommand> --config cfg.json [--seed N] [--out DIR]``.

Exit codes: 0 on success, 1 on a validation or usage error, 2 when a
calibration diverged.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ModelConfig, load_model_config
from .errors import DivergenceError, ValidationError, WavecalError
from .experiments import (
    PerturbationSpec,
    default_depth_grid,
    make_ground_truth_psf,
    psf_model,
    run_depth_evaluation,
    run_pm_recovery,
    run_psf_recovery,
    synthesize_stack,
)
from .gradcheck import primitive_suite
from .io import write_complex_pfm, write_csv, write_json, write_pfm, write_pgm
from .psf import gen_ideal_psf

log = logging.getLogger("wavecal")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 (validation error) instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON model/experiment config")
    common.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    common.add_argument("--out", default="out", help="output directory (created if missing)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for trial pools")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="wavecal", description="Differentiable wave-optics microscope simulation and calibration.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-psf", parents=[common], help="write the ideal PSF field for the config objective")
    g.add_argument("--defocus", type=float, default=0.0, help="object-space defocus (µm)")
    sub.add_parser("simulate", parents=[common], help="synthesize the configured model's depth stack")
    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    c.add_argument("--coords", type=int, default=20, help="random coordinates per parameter")
    for name, text in (("calibrate-psf", "PSF-recovery trials"), ("calibrate-pm", "phase-mask recovery trials")):
        t = sub.add_parser(name, parents=[common], help=text)
        t.add_argument("--trials", type=int, default=None, help="override experiment.n_trials")
    sub.add_parser("predict-depth", parents=[common], help="calibrate once, then predict a -50..50 µm stack")
    sub.add_parser("make-synthetic", parents=[common], help="write a perturbed ground truth and its observations")
    return p


def _manifest(args, cfg: ModelConfig, seed: int, wall: float, extra: dict | None = None) -> dict:
    m = {
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": seed,
        "threads": args.threads,
        "config": cfg.raw,
        "effective_settings": _settings_dict(cfg),
        "versions": {
            "wavecal": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": wall,
    }
    if extra:
        m.update(extra)
    return m


def _settings_dict(cfg: ModelConfig) -> dict:
    s = cfg.settings().to_dict()
    s["n_trials"] = cfg.n_trials
    return s


def _trial_rows(reports):
    return [(r.seed, r.image_nmse, r.param_nmse, r.iterations) for r in reports]


def cmd_gen_psf(args, cfg: ModelConfig, seed: int, out: Path) -> dict:
    img_dz = args.defocus
    u = gen_ideal_psf(cfg.objective, cfg.grid, img_dz).array()
    write_complex_pfm(out / "psf", u)
    write_pgm(out / "psf_irradiance.pgm", np.abs(u) ** 2)
    return {"defocus_um": img_dz}


def cmd_simulate(args, cfg: ModelConfig, seed: int, out: Path) -> dict:
    s = cfg.settings()
    model = cfg.build_model()
    obj = s.target()
    imgs = model.forward(obj, list(s.depths_um))
    write_pfm(out / "object.pfm", obj.array())
    rows = []
    for i, (d, im) in enumerate(zip(s.depths_um, imgs)):
        write_pfm(out / f"image_{i:03d}.pfm", im.array())
        write_pgm(out / f"image_{i:03d}.pgm", im.array())
        rows.append((i, d))
    write_csv(out / "depths.csv", ["index", "depth_um"], rows)
    return {"n_images": len(imgs)}


def cmd_gradcheck(args, cfg: ModelConfig, seed: int, out: Path) -> dict:
    n = min(cfg.grid.n_side, 64)
    results = primitive_suite(n, seed, args.coords)
    write_csv(
        out / "gradcheck.csv",
        ["primitive", "max_rel_error", "n_coords"],
        [(r.name, r.max_rel_error, r.n_coords) for r in results],
    )
    worst = max(r.max_rel_error for r in results)
    if worst > GRADCHECK_TOL:
        bad = [r.name for r in results if r.max_rel_error > GRADCHECK_TOL]
        raise ValidationError([f"gradient check failed for {', '.join(bad)} (worst {worst:.3e})"])
    return {"grid_side": n, "worst_rel_error": worst}


def _run_trials(args, cfg: ModelConfig, seed: int, out: Path, pm: bool) -> dict:
    s = cfg.settings()
    n = args.trials if args.trials is not None else cfg.n_trials
    recovered: list = []
    runner = run_pm_recovery if pm else run_psf_recovery
    reports, agg = runner(n, None, seed, s, args.threads, recovered)
    write_csv(out / "trials.csv", ["seed", "image_nmse", "param_nmse", "iters"], _trial_rows(reports))
    write_json(out / "aggregate.json", agg)
    for i, a in enumerate(recovered):
        if a is None:
            continue
        if pm:
            write_pfm(out / f"pm_{i:03d}.pfm", a)
        else:
            write_complex_pfm(out / f"psf_{i:03d}", a)
    if agg["n_diverged"]:
        raise DivergenceError(-1, float("nan"))
    return {"n_trials": n}


def cmd_calibrate_psf(args, cfg, seed, out):
    return _run_trials(args, cfg, seed, out, pm=False)


def cmd_calibrate_pm(args, cfg, seed, out):
    return _run_trials(args, cfg, seed, out, pm=True)


def cmd_predict_depth(args, cfg: ModelConfig, seed: int, out: Path) -> dict:
    res = run_depth_evaluation(seed, cfg.settings())
    rows = zip(res["true_depth"], res["calibrated"], res["ideal"])
    write_csv(out / "depth.csv", ["true_depth", "predicted_depth", "ideal_predicted_depth"], rows)
    summary = {k: res[k] for k in ("seed", "calibrated_mae", "ideal_mae", "ideal_sign_flips")}
    summary["trial"] = asdict(res["trial"])
    write_json(out / "depth_summary.json", summary)
    return {"calibrated_mae": res["calibrated_mae"]}


def cmd_make_synthetic(args, cfg: ModelConfig, seed: int, out: Path) -> dict:
    s = cfg.settings()
    base = gen_ideal_psf(s.objective, s.grid, 0.0)
    spec = PerturbationSpec(seed=seed)
    gt = make_ground_truth_psf(base, spec)
    obj = s.target()
    stack = synthesize_stack(psf_model(s, gt.array(), False), obj, default_depth_grid(), s.noise_sigma_rel, seed)
    write_complex_pfm(out / "gt_psf", gt.array())
    write_pfm(out / "object.pfm", obj.array())
    rows = []
    for i, (d, im) in enumerate(zip(stack.depths_um, stack.images)):
        write_pfm(out / f"obs_{i:03d}.pfm", im.array())
        rows.append((i, d))
    write_csv(out / "depths.csv", ["index", "depth_um"], rows)
    return {"perturbation": spec.sample()}


COMMANDS = {
    "gen-psf": cmd_gen_psf,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
    "calibrate-psf": cmd_calibrate_psf,
    "calibrate-pm": cmd_calibrate_pm,
    "predict-depth": cmd_predict_depth,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = load_model_config(args.config)
    except OSError as exc:
        print(f"wavecal: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as exc:
        for e in exc.errors:
            print(f"wavecal: config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if args.threads < 1:
        print("wavecal: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    seed = args.seed if args.seed is not None else cfg.seed
    if args.seed is not None:
        cfg = replace(cfg, experiment={**cfg.experiment, "seed": seed})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    code, extra = EXIT_OK, {}
    try:
        extra = COMMANDS[args.command](args, cfg, seed, out) or {}
    except DivergenceError as exc:
        print(f"wavecal: numerical divergence: {exc}", file=sys.stderr)
        code = EXIT_DIVERGED
    except ValidationError as exc:
        for e in exc.errors:
            print(f"wavecal: {e}", file=sys.stderr)
        code = EXIT_INVALID
    except WavecalError as exc:
        print(f"wavecal: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    extra["exit_code"] = code
    write_json(out / "manifest.json", _manifest(args, cfg, seed, time.perf_counter() - t0, extra))
    return code


if __name__ == "__main__":
    sys.exit(main())
