"""Phase design for a single-antenna BS probing the equivalent channel.

The BS and UE both observe ``h_e = v_bar^T c`` with ``c = [h; g * f]``.
Maximizing the equivalent-channel power ``p_e = v_bar^T R_e v_bar^*`` over
discrete unit-modulus phases is handled by an eigenvector relaxation,
Gaussian randomization around it, and a coordinate-ascent polish.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel
from .skr import sa_skr


@dataclass
class SaProblem:
    R_e: np.ndarray
    sigma_a2: float
    sigma_b2: float
    K_q: int = 2

    def __post_init__(self):
        self.R_e = 0.5 * (self.R_e + self.R_e.conj().T)
        if self.K_q < 2:
            raise ValueError("K_q must be >= 2")

    @property
    def M(self) -> int:
        return self.R_e.shape[0] - 1

    def power(self, v_bar) -> float:
        v = np.asarray(v_bar)
        return float(np.real(v @ self.R_e @ v.conj()))

    def skr(self, v_bar) -> float:
        return sa_skr(v_bar, self.R_e, self.sigma_a2, self.sigma_b2)


def build_R_e(model: ChannelModel, trials: int, rng, sigma_a2: float, sigma_b2: float,
              K_q: int = 2, G=None, chunk: int = 20000, center: bool = True) -> SaProblem:
    """Monte Carlo equivalent-channel covariance for an ``N = 1`` model.

    ``R_e = blockdiag(var h, cov c)`` with ``c = g * f`` elementwise, so
    that ``v_bar^T R_e v_bar^*`` is the power of the random part of the
    equivalent channel.  The direct/cascaded cross terms are left out
    (independence assumption).  ``center=False`` keeps raw second moments,
    which lets the phases chase the deterministic LoS term.
    """
    if model.geom.n != 1:
        raise ValueError("single-antenna design needs an N = 1 geometry")
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials")
    M = model.geom.m
    pow_h = 0.0
    R_arb = np.zeros((M, M), dtype=complex)
    sum_h, sum_c = 0j, np.zeros(M, dtype=complex)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        h, f, Gs = model.sample_batch(rng, t, G)
        c = Gs[..., 0] * f
        pow_h += float(np.sum(np.abs(h[:, 0]) ** 2))
        R_arb += c.T @ c.conj()
        sum_h += h[:, 0].sum()
        sum_c += c.sum(axis=0)
        done += t
    R_e = np.zeros((M + 1, M + 1), dtype=complex)
    R_e[0, 0] = pow_h / trials
    R_e[1:, 1:] = R_arb / trials
    if center:
        m_h, m_c = sum_h / trials, sum_c / trials
        R_e[0, 0] = max(R_e[0, 0].real - abs(m_h) ** 2, 0.0)
        R_e[1:, 1:] -= np.outer(m_c, m_c.conj())
    return SaProblem(R_e, sigma_a2, sigma_b2, K_q)


def quantize_phases(x: np.ndarray, K_q: int) -> np.ndarray:
    """Project rows of ``x`` onto ``K_q``-level phases with first entry 1.

    Returns ``v_bar`` such that ``v_bar^*`` is phase-aligned with ``x``.
    """
    x = np.atleast_2d(x)
    rel = np.angle(x.conj() * x[:, :1])  # phases of conj(x) relative to entry 0
    k = np.mod(np.round(rel * K_q / (2 * np.pi)), K_q)
    return np.exp(2j * np.pi * k / K_q)


def _coordinate_ascent(v: np.ndarray, R: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Cycle through entries 1..M, moving each to its best level, until stable."""
    v = v.copy()
    val = float(np.real(v @ R @ v.conj()))
    improved = True
    while improved:
        improved = False
        for m in range(1, v.size):
            # p(v) in v_m alone: R_mm + 2 Re(v_m s) + const
            s = R[m] @ v.conj() - R[m, m] * v[m].conj()
            gains = 2 * np.real(levels * s) - 2 * np.real(v[m] * s)
            k = int(np.argmax(gains))
            if gains[k] > 1e-12 * max(abs(val), 1e-300):
                v[m] = levels[k]
                val = float(np.real(v @ R @ v.conj()))
                improved = True
    return v


def optimize_phase_sa(prob: SaProblem, n_rand: int = 100, rng=None,
                      polish: bool = True) -> np.ndarray:
    """Discrete phase vector maximizing ``v_bar^T R_e v_bar^*``.

    Candidates, in order: all ones, the quantized dominant eigenvector
    ``u``, then ``n_rand`` quantized draws from ``CN(u, tau I)`` with
    ``tau = 0.1 max|u|``.  Each candidate is optionally polished by
    coordinate ascent and the first best one is returned.
    """
    if n_rand < 1:
        raise ValueError("n_rand must be >= 1")
    rng = np.random.default_rng(rng)
    R = prob.R_e
    M1 = R.shape[0]
    w, U = np.linalg.eigh(R)
    u = U[:, -1]
    tau = 0.1 * float(np.max(np.abs(u)))
    g = rng.standard_normal((n_rand, M1, 2))
    xi = u + np.sqrt(tau / 2) * (g[..., 0] + 1j * g[..., 1])
    cands = np.vstack([np.ones((1, M1), dtype=complex), quantize_phases(u, prob.K_q),
                       quantize_phases(xi, prob.K_q)])
    levels = np.exp(2j * np.pi * np.arange(prob.K_q) / prob.K_q)
    best, best_val = None, -np.inf
    for v in cands:
        if polish:
            v = _coordinate_ascent(v, R, levels)
        val = float(np.real(v @ R @ v.conj()))
        if val > best_val * (1 + 1e-12) + 1e-300 or best is None:
            best, best_val = v, val
    bound = M1 * max(float(w[-1]), 0.0)
    if best_val > bound * (1 + 1e-9) + 1e-300:
        raise AssertionError("objective exceeds the relaxation bound")
    return best


def exhaustive_phase_sa(prob: SaProblem) -> np.ndarray:
    """Best of all ``K_q**M`` phase vectors (first entry fixed to 1)."""
    levels = np.exp(2j * np.pi * np.arange(prob.K_q) / prob.K_q)
    best, best_val = None, -np.inf
    for combo in itertools.product(range(prob.K_q), repeat=prob.M):
        v = np.concatenate([[1.0 + 0j], levels[list(combo)]])
        val = prob.power(v)
        if val > best_val:
            best, best_val = v, val
    return best
