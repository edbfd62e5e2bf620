"""Measurement-to-key conversion and key quality metrics.

Pipeline: remove the per-party sample mean, normalize to unit mean power,
quantize real and imaginary parts against the party's median, then compare
the two bit strings and run a subset of the NIST SP 800-22 tests.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

log = logging.getLogger(__name__)

PASS_THRESHOLD = 0.01
BLOCK_FREQ_M = 16


@dataclass
class MeasurementSeries:
    """``T_d x D`` complex measurements of one party."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2:
            raise ValueError("samples must be T_d x D")

    @property
    def shape(self):
        return self.samples.shape


@dataclass
class KeyMaterial:
    bits_a: np.ndarray
    bits_b: np.ndarray
    bdr: float
    p_values: dict = field(default_factory=dict)


def preprocess(series: MeasurementSeries) -> MeasurementSeries:
    """Subtract the mean over blocks and scale to unit mean power per entry."""
    X = series.samples
    if X.shape[0] < 2:
        raise ValueError("need at least two blocks")
    X = X - X.mean(axis=0)
    power = float(np.mean(np.abs(X) ** 2))
    if not power > 0:
        raise ValueError("series is constant; nothing to quantize")
    return MeasurementSeries(X / np.sqrt(power))


def _stream(series: MeasurementSeries) -> np.ndarray:
    """Real parts then imaginary parts, each ordered dimension by dimension."""
    X = series.samples
    return np.concatenate([X.real.T.ravel(), X.imag.T.ravel()])


def cdf_quantize(series: MeasurementSeries) -> np.ndarray:
    """Single-bit quantization: 1 where the value exceeds the party's median."""
    x = _stream(series)
    return (x > np.median(x)).astype(np.uint8)


def bdr(bits_a, bits_b) -> float:
    """Fraction of disagreeing bits."""
    a, b = np.asarray(bits_a), np.asarray(bits_b)
    if a.shape != b.shape:
        raise ValueError("bit strings differ in length")
    if a.size == 0:
        raise ValueError("empty bit strings")
    return float(np.count_nonzero(a != b) / a.size)


class TestResults(dict):
    """Map test name to p-value; ``skipped`` holds tests left out and why."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.skipped: dict[str, str] = {}

    def passed(self, threshold: float = PASS_THRESHOLD) -> dict:
        return {k: v > threshold for k, v in self.items()}


def monobit(eps: np.ndarray) -> float:
    n = eps.size
    s = np.sum(2.0 * eps - 1.0)
    return float(erfc(abs(s) / np.sqrt(2 * n)))


def block_frequency(eps: np.ndarray, M: int = BLOCK_FREQ_M) -> float:
    n_blocks = eps.size // M
    pi = eps[: n_blocks * M].reshape(n_blocks, M).mean(axis=1)
    chi2 = 4.0 * M * np.sum((pi - 0.5) ** 2)
    return float(gammaincc(n_blocks / 2.0, chi2 / 2.0))


def runs(eps: np.ndarray) -> float:
    n = eps.size
    pi = eps.mean()
    if abs(pi - 0.5) >= 2.0 / np.sqrt(n):
        return 0.0
    v_obs = 1 + np.count_nonzero(eps[1:] != eps[:-1])
    num = abs(v_obs - 2.0 * n * pi * (1 - pi))
    return float(erfc(num / (2.0 * np.sqrt(2.0 * n) * pi * (1 - pi))))


_LONGEST_RUN = {
    # (block length, class lower edge, class upper edge, probabilities)
    8: (1, 4, [0.2148, 0.3672, 0.2305, 0.1875]),
    128: (4, 9, [0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124]),
}


def _longest_run_in_rows(blocks: np.ndarray) -> np.ndarray:
    best = np.zeros(blocks.shape[0], dtype=int)
    cur = np.zeros(blocks.shape[0], dtype=int)
    for col in blocks.T:
        cur = np.where(col == 1, cur + 1, 0)
        best = np.maximum(best, cur)
    return best


def longest_run(eps: np.ndarray) -> float:
    n = eps.size
    M = 8 if n < 6272 else 128
    lo, hi, pi = _LONGEST_RUN[M]
    n_blocks = n // M
    runs_ = _longest_run_in_rows(eps[: n_blocks * M].reshape(n_blocks, M))
    nu = np.bincount(np.clip(runs_, lo, hi) - lo, minlength=hi - lo + 1)
    expected = n_blocks * np.asarray(pi)
    chi2 = np.sum((nu - expected) ** 2 / expected)
    return float(gammaincc((len(pi) - 1) / 2.0, chi2 / 2.0))


def cumulative_sums(eps: np.ndarray, reverse: bool = False) -> float:
    x = 2.0 * eps - 1.0
    if reverse:
        x = x[::-1]
    n = x.size
    z = float(np.max(np.abs(np.cumsum(x))))
    if z == 0:
        return 1.0
    sq = np.sqrt(n)
    # summation limits truncate toward zero, as in the reference implementation
    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    s1 = np.sum(norm.cdf((4 * k1 + 1) * z / sq) - norm.cdf((4 * k1 - 1) * z / sq))
    s2 = np.sum(norm.cdf((4 * k2 + 3) * z / sq) - norm.cdf((4 * k2 + 1) * z / sq))
    return float(min(max(1.0 - s1 + s2, 0.0), 1.0))


_MIN_LENGTH = {
    "monobit": 100,
    "block_frequency": 100,
    "runs": 100,
    "longest_run": 128,
    "cusum_forward": 100,
    "cusum_reverse": 100,
}

_TESTS = {
    "monobit": monobit,
    "block_frequency": block_frequency,
    "runs": runs,
    "longest_run": longest_run,
    "cusum_forward": cumulative_sums,
    "cusum_reverse": lambda e: cumulative_sums(e, reverse=True),
}


def randomness_tests(bits) -> TestResults:
    """p-values of monobit, block frequency (M = 16), runs, longest run of
    ones and forward/reverse cumulative sums.

    A test whose minimum length is not met is omitted and listed in
    ``skipped`` with the reason.
    """
    eps = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(eps > 1):
        raise ValueError("bits must be 0 or 1")
    out = TestResults()
    for name, fn in _TESTS.items():
        if eps.size < _MIN_LENGTH[name]:
            out.skipped[name] = f"needs at least {_MIN_LENGTH[name]} bits, got {eps.size}"
        elif name == "longest_run" and eps.size >= 750_000:
            out.skipped[name] = "sequences of 750000 bits or more are not supported"
        else:
            out[name] = fn(eps)
    for name, why in out.skipped.items():
        log.info("randomness test %s skipped: %s", name, why)
    return out


def generate_keys(samples_a, samples_b, run_tests: bool = True) -> KeyMaterial:
    """Preprocess, quantize and score both parties' measurement series."""
    sa, sb = MeasurementSeries(samples_a), MeasurementSeries(samples_b)
    if sa.shape != sb.shape:
        raise ValueError("parties' series must have identical shape")
    ka = cdf_quantize(preprocess(sa))
    kb = cdf_quantize(preprocess(sb))
    pv = dict(randomness_tests(ka)) if run_tests else {}
    return KeyMaterial(ka, kb, bdr(ka, kb), pv)


def export_bits(bits, path) -> int:
    """Write bits packed MSB-first, zero-padding the last byte; returns bytes written."""
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="big")
    with open(path, "wb") as fh:
        fh.write(packed.tobytes())
    return int(packed.size)
