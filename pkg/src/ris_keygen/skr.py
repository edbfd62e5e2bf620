"""Secret key rate between two noisy observations of a Gaussian channel.

All rates are in bits per probing round.  Every determinant is evaluated as
a sum of log-eigenvalues of a Hermitian matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

NEG_EIG_TOL = 1e-9
JITTER = 1e-12
MAX_COND = 1e12


@dataclass(frozen=True)
class NoiseScales:
    """Effective noise variances seen by the two parties.

    ``sigma_hat_a2 = sigma_a2 / (Q P_b)`` and ``sigma_hat_b2 = sigma_b2 / (N P_a)``.
    """

    sigma_hat_a2: float
    sigma_hat_b2: float

    def __post_init__(self):
        if not (self.sigma_hat_a2 > 0 and self.sigma_hat_b2 > 0):
            raise ValueError("effective noise variances must be positive")

    @classmethod
    def from_physical(cls, sigma_a2: float, sigma_b2: float, P_a: float, P_b: float,
                      N: int, Q: int = 1) -> "NoiseScales":
        return cls(sigma_a2 / (Q * P_b), sigma_b2 / (N * P_a))

    @property
    def a(self) -> float:
        return 1.0 / self.sigma_hat_a2

    @property
    def b(self) -> float:
        return 1.0 / self.sigma_hat_b2


@dataclass
class SkrReport:
    bits_per_probe: float
    per_subchannel_bits: Optional[np.ndarray] = None


def logdet_hermitian(A: np.ndarray) -> float:
    """Natural log-determinant of a Hermitian PSD matrix.

    Eigenvalues below ``-1e-9 * trace`` raise ``np.linalg.LinAlgError``;
    smaller negatives are clamped.  A ``1e-12 * trace`` jitter is added to
    exactly singular matrices.
    """
    A = 0.5 * (A + A.conj().T)
    w = np.linalg.eigvalsh(A)
    tr = float(np.sum(np.abs(w)))
    if w.min() < -NEG_EIG_TOL * tr:
        raise np.linalg.LinAlgError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    if w.min() <= 0.0:
        w = w + JITTER * max(tr, np.finfo(float).tiny)
    return float(np.sum(np.log(w)))


def _as_R(R_h) -> np.ndarray:
    return R_h.R_h if hasattr(R_h, "R_h") else np.asarray(R_h)


def skr_analytic(W: np.ndarray, R_h, noise: NoiseScales) -> float:
    """SKR of the probing map ``z = W^T h_r + noise`` for both parties.

    Parameters
    ----------
    W : ndarray, shape (D, K)
        Design matrix (either an unconstrained ``W`` or ``kron(Phi_bar, P)``).
    R_h : CorrelationModel or ndarray, shape (D, D)
    noise : NoiseScales

    Returns
    -------
    float
        ``-log2 det(I - R_W (R_W + Ga)^-1 R_W (R_W + Gb)^-1)`` with
        ``R_W = W^T R_h W^*``, evaluated as
        ``logdet(R_W + Ga) + logdet(R_W + Gb) - logdet(joint)``.
    """
    R = _as_R(R_h)
    W = np.asarray(W)
    R_W = W.T @ R @ W.conj()
    if not np.all(np.isfinite(R_W)):
        raise FloatingPointError("R_W has non-finite entries")
    R_W = 0.5 * (R_W + R_W.conj().T)
    K = R_W.shape[0]
    eye = np.eye(K)
    Sa = R_W + noise.sigma_hat_a2 * eye
    Sb = R_W + noise.sigma_hat_b2 * eye
    joint = np.block([[Sa, R_W], [R_W, Sb]])
    nats = logdet_hermitian(Sa) + logdet_hermitian(Sb) - logdet_hermitian(joint)
    return max(nats / np.log(2.0), 0.0)


def per_subchannel_bits(p, noise: NoiseScales) -> np.ndarray:
    """``log2((1 + a p)(1 + b p) / (1 + (a + b) p))`` elementwise."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be nonnegative")
    a, b = noise.a, noise.b
    nats = np.log1p(a * p) + np.log1p(b * p) - np.log1p((a + b) * p)
    return np.clip(nats / np.log(2.0), 0.0, None)


def skr_from_powers(p, noise: NoiseScales) -> float:
    """Diagonal-form SKR ``sum_i log2(1 + ab p_i^2 / ((a + b) p_i + 1))``."""
    return float(np.sum(per_subchannel_bits(p, noise)))


def skr_report(p, noise: NoiseScales) -> SkrReport:
    bits = per_subchannel_bits(p, noise)
    return SkrReport(float(bits.sum()), bits)


def gaussian_mi_estimate(samples_a: np.ndarray, samples_b: np.ndarray,
                         center: bool = True) -> float:
    """Gaussian mutual information from sample covariances, in bits.

    Parameters
    ----------
    samples_a, samples_b : ndarray, shape (T, d)
        Paired complex observations, one row per round.
    center : bool
        Subtract the sample means first.  With ``False`` the second-moment
        matrices are used, matching a covariance model that keeps the mean.

    Raises
    ------
    ValueError
        If ``T < 10 d`` or any covariance has condition number above 1e12.
    """
    A = np.asarray(samples_a)
    B = np.asarray(samples_b)
    if A.ndim == 1:
        A, B = A[:, None], B.reshape(-1, 1)
    if A.shape != B.shape:
        raise ValueError("sample arrays must have equal shape")
    T, d = A.shape
    if T < 10 * d:
        raise ValueError(f"need at least {10 * d} samples, got {T}")
    X = np.concatenate([A, B], axis=1)
    if center:
        X = X - X.mean(axis=0)
    K = X.T @ X.conj() / T
    K = 0.5 * (K + K.conj().T)
    Ka, Kb = K[:d, :d], K[d:, d:]
    for name, S in (("a", Ka), ("b", Kb), ("joint", K)):
        w = np.linalg.eigvalsh(S)
        if w.min() <= 0 or w.max() / w.min() > MAX_COND:
            raise ValueError(f"sample covariance {name} is ill-conditioned")
    nats = logdet_hermitian(Ka) + logdet_hermitian(Kb) - logdet_hermitian(K)
    return max(nats / np.log(2.0), 0.0)


def sa_skr(v_bar, R_e: np.ndarray, sigma_a2: float, sigma_b2: float) -> float:
    """Single-antenna SKR for phase vector ``v_bar``.

    ``p_e = v_bar^T R_e v_bar^*`` and the rate is
    ``log2(1 + p_e / (sigma_a2 + sigma_b2 + sigma_a2 sigma_b2 / p_e))``.
    """
    v = np.asarray(v_bar)
    p_e = float(np.real(v @ R_e @ v.conj()))
    if p_e <= 0:
        return 0.0
    return float(np.log2(1 + p_e / (sigma_a2 + sigma_b2 + sigma_a2 * sigma_b2 / p_e)))
