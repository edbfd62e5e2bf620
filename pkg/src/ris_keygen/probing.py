"""Uplink/downlink probing of the cascaded channel over ``V`` packets.

Packet ``t`` uses RIS phases ``Phi_bar[:, t]`` (first entry 1 for the
direct path) and the BS precoder/combiner ``P``.  Stacking the LS
estimates of all packets gives ``z = kron(Phi_bar^T, P^T) h_r + noise``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import dft, hadamard

from .channel import ChannelModel, ChannelRealization, cascade, crandn


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def hadamard_phase_matrix(M: int, K_q: int = 2, V=None) -> np.ndarray:
    """Sylvester-Hadamard reflection pattern.

    Parameters
    ----------
    M : int
        Number of RIS elements; the pattern has ``M + 1`` rows.
    K_q : int
        Phase levels (must be even so that -1 is representable).
    V : int, optional
        Packet count, a power of two ``>= M + 1``.  The first ``M + 1``
        rows of the order-``V`` matrix are returned, so rows stay
        orthogonal (``Phi Phi^T = V I``).  When omitted, ``M + 1`` must
        itself be a power of two.
    """
    if K_q < 2 or K_q % 2:
        raise ValueError("K_q must be an even number >= 2")
    if V is None:
        if not _is_pow2(M + 1):
            raise ValueError(f"M + 1 = {M + 1} is not a power of two; pass V explicitly")
        V = M + 1
    if not _is_pow2(V) or V < M + 1:
        raise ValueError(f"V must be a power of two >= M + 1, got {V}")
    return hadamard(V)[: M + 1].astype(complex)


@dataclass
class ProbeDesign:
    """Phase schedule, precoder and link budget of one probing round."""

    Phi_bar: np.ndarray
    P: np.ndarray
    P_a: float
    P_b: float
    sigma_a2: float
    sigma_b2: float
    Q: int = 1
    K_q: int = 2

    def __post_init__(self):
        Phi, P = np.asarray(self.Phi_bar, dtype=complex), np.asarray(self.P, dtype=complex)
        self.Phi_bar, self.P = Phi, P
        if not np.allclose(Phi[0], 1.0, atol=1e-12):
            raise ValueError("first row of Phi_bar must be all ones")
        if not np.allclose(np.abs(Phi), 1.0, atol=1e-12):
            raise ValueError("Phi_bar entries must be unit modulus")
        k = np.angle(Phi) * self.K_q / (2 * np.pi)
        if not np.allclose(k, np.round(k), atol=1e-9):
            raise ValueError("Phi_bar phases must lie on the K_q-level grid")
        if self.V < self.M + 1 or np.linalg.matrix_rank(Phi) < self.M + 1:
            raise ValueError("Phi_bar must have full row rank M + 1")
        if not np.allclose(P.conj().T @ P, np.eye(P.shape[1]), atol=1e-10):
            raise ValueError("precoder columns must be orthonormal")
        if min(self.P_a, self.P_b) <= 0 or min(self.sigma_a2, self.sigma_b2) < 0 or self.Q < 1:
            raise ValueError("invalid power, noise or pilot parameters")

    @property
    def M(self) -> int:
        return self.Phi_bar.shape[0] - 1

    @property
    def V(self) -> int:
        return self.Phi_bar.shape[1]

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def N_s(self) -> int:
        return self.P.shape[1]

    @property
    def W(self) -> np.ndarray:
        """``kron(Phi_bar, P)``, shape ``(D, N_s V)``."""
        return np.kron(self.Phi_bar, self.P)

    @property
    def noise_std_a(self) -> float:
        return float(np.sqrt(self.sigma_a2 / (self.Q * self.P_b)))

    @property
    def noise_std_b(self) -> float:
        return float(np.sqrt(self.sigma_b2 / (self.N * self.P_a)))


@dataclass
class MeasurementPair:
    z_a: np.ndarray
    z_b: np.ndarray


def _signal(h_r, design: ProbeDesign) -> np.ndarray:
    return design.W.T @ h_r


def uplink_probe(real: ChannelRealization, design: ProbeDesign, rng,
                 full_pilot: bool = False) -> np.ndarray:
    """BS-side measurement ``z_a`` (length ``V N_s``).

    With ``full_pilot`` the UE pilot ``s = sqrt(P_b) 1_Q`` is sent through
    the equivalent channel of every packet, the BS receives
    ``Y_t = h_e(t) s + N_t``, combines with ``P^T`` and LS-estimates.  The
    received noise is built from the same standard draws as the fast path
    (its component along ``P^* s``; the rest is removed by the estimator).
    """
    eta = crandn(rng, design.V * design.N_s) * np.sqrt(design.sigma_a2)
    if not full_pilot:
        return _signal(cascade(real), design) + eta / np.sqrt(design.Q * design.P_b)
    s = np.full(design.Q, np.sqrt(design.P_b), dtype=complex)
    energy = float(np.real(s @ s.conj()))
    out = []
    for t in range(design.V):
        h_e = real.equivalent(design.Phi_bar[1:, t])
        eta_t = eta[t * design.N_s:(t + 1) * design.N_s]
        noise = np.outer(design.P.conj() @ eta_t, s) / np.sqrt(energy)
        Y = np.outer(h_e, s) + noise
        out.append(design.P.T @ Y @ s.conj() / energy)
    return np.concatenate(out)


def downlink_probe(real: ChannelRealization, design: ProbeDesign, rng,
                   full_pilot: bool = False) -> np.ndarray:
    """UE-side measurement ``z_b`` (length ``V N``).

    With ``full_pilot`` the BS sends ``P S_d`` with the scaled DFT pilot
    ``S_d = sqrt(N P_a) F`` (``S_d^H S_d = N P_a I``) and the UE
    LS-estimates ``P^T h_e(t)`` from ``y_t^T = h_e(t)^T P S_d + n_t^T``.
    """
    if design.N_s != design.N:
        raise ValueError("downlink probing needs N_s = N")
    N = design.N
    eta = crandn(rng, design.V * N) * np.sqrt(design.sigma_b2)
    if not full_pilot:
        return _signal(cascade(real), design) + eta / np.sqrt(N * design.P_a)
    S_d = np.sqrt(N * design.P_a) * dft(N, scale="sqrtn")
    out = []
    for t in range(design.V):
        h_e = real.equivalent(design.Phi_bar[1:, t])
        n_t = S_d.T @ eta[t * N:(t + 1) * N] / np.sqrt(N * design.P_a)
        y = h_e @ design.P @ S_d + n_t
        out.append(y @ S_d.conj().T / (N * design.P_a))
    return np.concatenate(out)


def probe(real: ChannelRealization, design: ProbeDesign, rng) -> MeasurementPair:
    """One round: uplink then downlink, with independent noise."""
    return MeasurementPair(uplink_probe(real, design, rng), downlink_probe(real, design, rng))


def probe_batch(model: ChannelModel, W: np.ndarray, noise_std_a: float, noise_std_b: float,
                T: int, rng, G=None, chunk: int = 20000, noise_rng=None):
    """``T`` independent rounds of ``z = W^T h_r + noise`` for both parties.

    Each round redraws the fading (``G`` stays fixed when given).  ``rng``
    drives the fading (one generator or one per link) and ``noise_rng``
    the receiver noise; when ``rng`` is a single generator it may also
    drive the noise.

    Returns
    -------
    Z_a, Z_b : ndarray, shape (T, W.shape[1])
    """
    if noise_rng is None:
        if not isinstance(rng, np.random.Generator):
            raise ValueError("noise_rng is required when rng is a per-link triple")
        noise_rng = rng
    K = W.shape[1]
    Z_a = np.empty((T, K), dtype=complex)
    Z_b = np.empty((T, K), dtype=complex)
    done = 0
    while done < T:
        t = min(chunk, T - done)
        S = model.sample_cascaded(rng, t, G) @ W
        Z_a[done:done + t] = S + noise_std_a * crandn(noise_rng, (t, K))
        Z_b[done:done + t] = S + noise_std_b * crandn(noise_rng, (t, K))
        done += t
    return Z_a, Z_b
