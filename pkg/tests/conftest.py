import numpy as np
import pytest


def direct_dft(f: np.ndarray) -> np.ndarray:
    """O(n^4) centered DFT, independent of any FFT library."""
    n = f.shape[0]
    idx = np.arange(n) - n // 2
    W = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    out = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            out[a, b] = np.sum(f * W[a][:, None] * W[b][None, :])
    return out


def direct_conv(h: np.ndarray, o: np.ndarray) -> np.ndarray:
    """Linear convolution about the center sample, by explicit summation."""
    n = h.shape[0]
    c = n // 2
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            s = 0.0
            for p in range(n):
                q = a - (p - c)
                if not 0 <= q < n:
                    continue
                for r in range(n):
                    t = b - (r - c)
                    if 0 <= t < n:
                        s += h[p, r] * o[q, t]
            out[a, b] = s
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
