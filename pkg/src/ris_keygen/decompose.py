"""Split an unconstrained design ``W`` into ``kron(Phi_bar, P)``.

``Phi_bar`` is the Hadamard pattern and ``P`` the closest column-orthonormal
matrix to the phase-weighted block mean of ``W`` (orthogonal Procrustes).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .probing import hadamard_phase_matrix
from .skr import NoiseScales, skr_analytic


@dataclass
class DecompositionResult:
    Phi_bar: np.ndarray
    P: np.ndarray
    residual: float
    skr_gap_db: float = float("nan")
    skr: float = float("nan")
    skr_upper: float = float("nan")

    @property
    def W(self) -> np.ndarray:
        return np.kron(self.Phi_bar, self.P)


def _blocks(W: np.ndarray, Phi_bar: np.ndarray, N_s: int) -> np.ndarray:
    """View ``W`` as an (M+1, N, V, N_s) array of blocks ``W_{m,t}``."""
    M1, V = Phi_bar.shape
    D, cols = W.shape
    if D % M1 or cols != V * N_s:
        raise ValueError(f"W of shape {W.shape} does not tile into {M1}x{V} blocks")
    return W.reshape(M1, D // M1, V, N_s)


def block_average(W: np.ndarray, Phi_bar: np.ndarray, N_s=None) -> np.ndarray:
    """``C = sum_{m,t} conj(phi_{m,t}) W_{m,t} / ((M + 1) V)``."""
    M1, V = Phi_bar.shape
    if N_s is None:
        if W.shape[1] % V:
            raise ValueError("cannot infer N_s from W and Phi_bar")
        N_s = W.shape[1] // V
    B = _blocks(np.asarray(W), Phi_bar, N_s)
    return np.einsum("mt,mitj->ij", Phi_bar.conj(), B) / (M1 * V)


def procrustes_objective(P: np.ndarray, C: np.ndarray) -> float:
    return float(np.linalg.norm(P - C) ** 2)


def _polar(A: np.ndarray) -> np.ndarray:
    U, _, Vh = np.linalg.svd(A, full_matrices=False)
    return U @ Vh


def orthonormal_fit(C: np.ndarray) -> np.ndarray:
    """Nearest column-orthonormal matrix ``U V^H`` to ``C``.

    Each left singular vector is rotated so its largest-magnitude entry
    is real positive (the right vector takes the compensating phase),
    which makes rank-deficient cases reproducible.
    """
    C = np.asarray(C, dtype=complex)
    if C.shape[1] > C.shape[0]:
        raise ValueError("need N_s <= N")
    U, _, Vh = np.linalg.svd(C, full_matrices=False)
    idx = np.argmax(np.abs(U), axis=0)
    ph = U[idx, np.arange(U.shape[1])]
    ph = ph / np.abs(ph)
    U = U * ph.conj()
    Vh = Vh * ph[:, None]
    return U @ Vh


def riemannian_refine(P0: np.ndarray, C: np.ndarray, max_iters: int = 500,
                      step: float = 0.5, tol: float = 1e-14) -> np.ndarray:
    """Projected-gradient descent of ``||P - C||_F^2`` on the Stiefel manifold.

    Each iteration projects the Euclidean gradient onto the tangent space,
    steps, and retracts with the polar factor.  Backtracking halves the
    step until the Armijo condition holds, so the objective is nonincreasing
    and a retraction that maps back onto ``P`` is never accepted.
    """
    P = np.asarray(P0, dtype=complex).copy()
    if step <= 0:
        return P
    f = procrustes_objective(P, C)
    for _ in range(max_iters):
        G = 2 * (P - C)
        sym = 0.5 * (P.conj().T @ G + G.conj().T @ P)
        rgrad = G - P @ sym
        g2 = float(np.linalg.norm(rgrad) ** 2)
        if np.sqrt(g2) < tol:
            break
        alpha = step
        for _ in range(60):
            cand = _polar(P - alpha * rgrad)
            fc = procrustes_objective(cand, C)
            if fc <= f - 1e-4 * alpha * g2:
                break
            alpha /= 2
        else:
            break
        done = f - fc <= tol * max(f, 1.0)
        P, f = cand, fc
        if done:
            break
    return P


def decompose(W_dagger: np.ndarray, M: int, V=None, K_q: int = 2, N_s=None,
              R_h=None, noise: NoiseScales = None) -> DecompositionResult:
    """Hadamard pattern plus Procrustes precoder closest to ``W_dagger``.

    ``N_s`` defaults to ``N`` and ``V`` to the column count over ``N_s``.  When ``R_h``
    and ``noise`` are given, the SKR of both designs and the gap
    ``10 log10(skr / skr_upper)`` are filled in.
    """
    W_dagger = np.asarray(W_dagger)
    D, cols = W_dagger.shape
    if D % (M + 1):
        raise ValueError("row count of W is not a multiple of M + 1")
    N = D // (M + 1)
    if V is None:
        V = cols // (N_s or N)
    Phi = hadamard_phase_matrix(M, K_q, V if V != M + 1 else None)
    C = block_average(W_dagger, Phi, N_s)
    P = orthonormal_fit(C)
    res = DecompositionResult(Phi, P, float(np.linalg.norm(np.kron(Phi, P) - W_dagger)))
    if R_h is not None and noise is not None:
        res.skr = skr_analytic(res.W, R_h, noise)
        res.skr_upper = skr_analytic(W_dagger, R_h, noise)
        if res.skr_upper > 0:
            res.skr_gap_db = float(10 * np.log10(res.skr / res.skr_upper)) if res.skr > 0 else -np.inf
    return res
