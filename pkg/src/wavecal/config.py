"""JSON configuration describing one microscope model plus its experiment.

Example::

    {
      "grid": {"n_side": 256, "pitch_um": 6.9, "wavelength_um": 0.633},
      "objective": {"magnification": 20, "na": 0.45, "tube_length_um": 165000},
      "blocks": [
        {"kind": "psf_source", "param": "psf"},
        {"kind": "wp", "distance_um": 0},
        {"kind": "lens", "focal_length_um": 150000, "pupil_radius_um": 25400},
        {"kind": "phase_mask", "param": "pm"},
        {"kind": "lens", "focal_length_um": 150000, "pupil_radius_um": 25400},
        {"kind": "camera"}
      ],
      "trainable": ["pm"],
      "optimizer": {"lr": 0.05, "max_iters": 400},
      "experiment": {"n_trials": 20, "seed": 0, "noise_sigma_rel": 0.0}
    }

Validation runs to completion and reports every problem at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autodiff import TrainableParam
from .blocks import (
    MIN_WP_DISTANCE_UM,
    CameraBlock,
    LensBlock,
    MicroscopeModel,
    PhaseMaskBlock,
    PsfSource,
    WavePropagation,
)
from .errors import ValidationError, WavecalError
from .experiments import ExperimentSettings
from .field import GridSpec
from .optim import AdamConfig
from .psf import ObjectiveSpec, gen_ideal_psf

BLOCK_FIELDS = {
    "psf_source": (set(), {"param", "defocus_um", "spherical_waves"}),
    "wp": ({"distance_um"}, set()),
    "lens": ({"focal_length_um", "pupil_radius_um"}, {"front_focal"}),
    "phase_mask": (set(), {"param", "init", "peak_phase"}),
    "camera": (set(), set()),
}
EXPERIMENT_FIELDS = {
    "n_trials",
    "seed",
    "noise_sigma_rel",
    "depths_um",
    "target_seed",
    "pm_bounds",
    "depth_gt_spherical_waves",
}
OBJECTIVE_FIELDS = {"magnification", "na", "tube_length_um"}


@dataclass
class ModelConfig:
    grid: GridSpec
    objective: ObjectiveSpec
    blocks: list[dict]
    trainable: list[str]
    optimizer: AdamConfig
    experiment: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def build_model(self) -> MicroscopeModel:
        """Instantiate the block stack; the PSF source starts at the ideal PSF."""
        blocks, params = [], []
        n = self.grid.n_side
        for spec in self.blocks:
            kind = spec["kind"]
            name = spec.get("param")
            if name is not None and name not in self.trainable:
                name = None
            if kind == "psf_source":
                u = gen_ideal_psf(
                    self.objective, self.grid, spec.get("defocus_um", 0.0), spec.get("spherical_waves", 0.0)
                ).array()
                blocks.append(PsfSource(u, name))
                if name is not None:
                    params.append(TrainableParam.from_complex(name, u))
            elif kind == "wp":
                blocks.append(WavePropagation(float(spec["distance_um"])))
            elif kind == "lens":
                blocks.append(
                    LensBlock(
                        float(spec["focal_length_um"]),
                        float(spec["pupil_radius_um"]),
                        bool(spec.get("front_focal", True)),
                    )
                )
            elif kind == "phase_mask":
                phi = _initial_mask(spec, n)
                blocks.append(PhaseMaskBlock(phi, name))
                if name is not None:
                    params.append(TrainableParam(name, phi.copy(), kind="phase"))
            elif kind == "camera":
                blocks.append(CameraBlock())
        return MicroscopeModel(self.grid, blocks, params, magnification=self.objective.magnification)

    def settings(self) -> ExperimentSettings:
        """Experiment settings with this config's grid, objective and optimizer."""
        ex = self.experiment
        s = ExperimentSettings(
            n_side=self.grid.n_side,
            pitch_um=self.grid.pitch_um,
            wavelength_um=self.grid.wavelength_um,
            magnification=self.objective.magnification,
            na=self.objective.na,
            tube_length_um=self.objective.tube_length_um,
        )
        lenses = [b for b in self.blocks if b["kind"] == "lens"]
        if lenses:
            s = replace(
                s,
                relay_focal_um=float(lenses[0]["focal_length_um"]),
                relay_pupil_radius_um=float(lenses[0]["pupil_radius_um"]),
            )
        over = {k: ex[k] for k in ("noise_sigma_rel", "target_seed", "pm_bounds", "depth_gt_spherical_waves") if k in ex}
        if "depths_um" in ex:
            over["depths_um"] = tuple(float(d) for d in ex["depths_um"])
        s = replace(s, **over)
        if "optimizer" in self.raw:
            if any(b["kind"] == "phase_mask" for b in self.blocks):
                s = replace(s, pm_adam=self.optimizer)
            else:
                s = replace(s, psf_adam=self.optimizer)
        return s

    @property
    def n_trials(self) -> int:
        return int(self.experiment.get("n_trials", 20))

    @property
    def seed(self) -> int:
        return int(self.experiment.get("seed", 0))


def _initial_mask(spec: dict, n: int) -> np.ndarray:
    from .targets import circular_gradient_mask, cubic_mask

    init = spec.get("init", "zero")
    peak = float(spec.get("peak_phase", np.pi))
    if init == "cubic":
        return cubic_mask(n, peak)
    if init == "circular":
        return circular_gradient_mask(n, peak, 0.5)
    return np.zeros((n, n))


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def parse_model_config(text: str) -> ModelConfig:
    """Parse and fully validate a JSON model config.

    Raises:
        ValidationError: with ``.errors`` listing every problem found.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"invalid JSON: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ValidationError(["top level must be a JSON object"])
    errors: list[str] = []

    unknown = set(doc) - {"grid", "objective", "blocks", "trainable", "optimizer", "experiment"}
    errors += [f"unknown top-level field {k!r}" for k in sorted(unknown)]

    grid = _parse_grid(doc.get("grid"), errors)
    objective = _parse_objective(doc.get("objective", {}), grid, errors)
    blocks = _parse_blocks(doc.get("blocks"), errors)

    trainable = doc.get("trainable", [])
    if not isinstance(trainable, list) or not all(isinstance(t, str) for t in trainable):
        errors.append("trainable must be a list of parameter names")
        trainable = []
    referenced = [b.get("param") for b in blocks if isinstance(b.get("param"), str)]
    for name in trainable:
        if name not in referenced:
            errors.append(f"trainable parameter {name!r} is not referenced by any block")
    dupes = {r for r in referenced if referenced.count(r) > 1}
    errors += [f"parameter {d!r} is referenced by more than one block" for d in sorted(dupes)]

    optimizer = _parse_optimizer(doc.get("optimizer", {}), errors)
    experiment = doc.get("experiment", {})
    if not isinstance(experiment, dict):
        errors.append("experiment must be an object")
        experiment = {}
    errors += [f"unknown experiment field {k!r}" for k in sorted(set(experiment) - EXPERIMENT_FIELDS)]
    if "n_trials" in experiment and not (isinstance(experiment["n_trials"], int) and experiment["n_trials"] >= 1):
        errors.append("experiment.n_trials must be an integer >= 1")
    if "seed" in experiment and not isinstance(experiment["seed"], int):
        errors.append("experiment.seed must be an integer")
    if "noise_sigma_rel" in experiment and not (
        _is_number(experiment["noise_sigma_rel"]) and experiment["noise_sigma_rel"] >= 0
    ):
        errors.append("experiment.noise_sigma_rel must be a number >= 0")

    if errors:
        raise ValidationError(errors)
    cfg = ModelConfig(grid, objective, blocks, list(trainable), optimizer, dict(experiment), doc)
    try:
        cfg.build_model()
    except WavecalError as exc:
        raise ValidationError([str(exc)]) from None
    return cfg


def _parse_grid(g, errors: list[str]) -> GridSpec | None:
    if not isinstance(g, dict):
        errors.append("missing field 'grid'")
        return None
    missing = [k for k in ("n_side", "pitch_um", "wavelength_um") if k not in g]
    errors += [f"missing field 'grid.{k}'" for k in missing]
    if missing:
        return None
    try:
        return GridSpec(int(g["n_side"]), float(g["pitch_um"]), float(g["wavelength_um"]))
    except (WavecalError, TypeError, ValueError) as exc:
        errors.append(f"grid: {exc}")
        return None


def _parse_objective(o, grid: GridSpec | None, errors: list[str]) -> ObjectiveSpec | None:
    if not isinstance(o, dict):
        errors.append("objective must be an object")
        return None
    errors += [f"unknown objective field {k!r}" for k in sorted(set(o) - OBJECTIVE_FIELDS)]
    kw = {k: float(v) for k, v in o.items() if k in OBJECTIVE_FIELDS and _is_number(v)}
    bad = [k for k, v in o.items() if k in OBJECTIVE_FIELDS and not _is_number(v)]
    errors += [f"objective.{k} must be a number" for k in bad]
    if grid is None:
        return None
    try:
        return ObjectiveSpec(wavelength_um=grid.wavelength_um, **kw)
    except WavecalError as exc:
        errors.append(f"objective: {exc}")
        return None


def _parse_blocks(blocks, errors: list[str]) -> list[dict]:
    if not isinstance(blocks, list) or not blocks:
        errors.append("missing field 'blocks' (a non-empty list)")
        return []
    good: list[dict] = []
    for i, b in enumerate(blocks):
        where = f"blocks[{i}]"
        if not isinstance(b, dict) or "kind" not in b:
            errors.append(f"{where}: missing field 'kind'")
            continue
        kind = b["kind"]
        if kind not in BLOCK_FIELDS:
            errors.append(f"{where}: unknown block kind {kind!r}")
            continue
        required, optional = BLOCK_FIELDS[kind]
        errors += [f"{where} ({kind}): missing field {k!r}" for k in sorted(required - set(b))]
        errors += [f"{where} ({kind}): unknown field {k!r}" for k in sorted(set(b) - required - optional - {"kind"})]
        for k in ("distance_um", "focal_length_um", "pupil_radius_um", "defocus_um", "spherical_waves", "peak_phase"):
            if k in b and not _is_number(b[k]):
                errors.append(f"{where} ({kind}): {k} must be a finite number")
        if "param" in b and not isinstance(b["param"], str):
            errors.append(f"{where} ({kind}): param must be a string")
        if kind == "wp" and _is_number(b.get("distance_um")):
            z = float(b["distance_um"])
            if z != 0 and abs(z) < MIN_WP_DISTANCE_UM:
                errors.append(
                    f"{where} (wp): distance {z:g} µm is below the minimum distance of {MIN_WP_DISTANCE_UM:g} µm"
                )
        if kind == "lens":
            for k in ("focal_length_um", "pupil_radius_um"):
                if _is_number(b.get(k)) and b[k] <= 0:
                    errors.append(f"{where} (lens): {k} must be positive")
        if kind == "phase_mask" and b.get("init", "zero") not in ("zero", "cubic", "circular"):
            errors.append(f"{where} (phase_mask): init must be one of zero, cubic, circular")
        good.append(b)

    kinds = [b["kind"] for b in good]
    if kinds and kinds[0] != "psf_source":
        errors.append("the first block must be a psf_source")
    if kinds and kinds[-1] != "camera":
        errors.append("the last block must be a camera")
    lenses = [b for b in good if b["kind"] == "lens"]
    if len(lenses) % 2:
        errors.append("lenses must come in 4-f pairs so the camera sees the source pitch")
    for a, b in zip(lenses[::2], lenses[1::2]):
        fa, fb = a.get("focal_length_um"), b.get("focal_length_um")
        if _is_number(fa) and _is_number(fb) and fa != fb:
            errors.append(
                f"4-f lens pair focal lengths differ ({fa:g} vs {fb:g} µm): pitch mismatch at the camera"
            )
    return good


def _parse_optimizer(o, errors: list[str]) -> AdamConfig:
    if not isinstance(o, dict):
        errors.append("optimizer must be an object")
        return AdamConfig()
    names = {f.name for f in fields(AdamConfig)}
    errors += [f"unknown optimizer field {k!r}" for k in sorted(set(o) - names)]
    kw = {k: v for k, v in o.items() if k in names}
    bad = [k for k, v in kw.items() if not _is_number(v)]
    errors += [f"optimizer.{k} must be a number" for k in bad]
    try:
        return AdamConfig(**{k: v for k, v in kw.items() if k not in bad})
    except WavecalError as exc:
        errors.append(f"optimizer: {exc}")
        return AdamConfig()


def load_model_config(path) -> ModelConfig:
    with open(path) as fh:
        return parse_model_config(fh.read())
