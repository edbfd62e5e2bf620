"""KKT water-filling over cascaded subchannels with lower-bound thresholds.

The problem is

    maximize    sum_i I(p_i)
    subject to  sum_i p_i / p_h,i = budget

where ``I`` is the per-subchannel key rate (convex below ``p_co``, concave
above).  Active channels sit on the concave branch at a common marginal
rate ``y_i(p_i) = p_h,i I'(p_i) = mu``; inactive ones are pinned to
``gamma_i = p_h,i p_co``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .skr import NoiseScales, skr_analytic, skr_from_powers

LN2 = np.log(2.0)
MAX_DOUBLINGS = 60


def design_budget(M: int, V: int, N_s: int) -> float:
    """Frobenius budget ``||kron(Phi_bar, P)||_F^2 = (M + 1) V N_s``."""
    return float((M + 1) * V * N_s)


def _d1(p, a, b):
    """``I'(p)`` in bits; ``ab p (2 + c p) / ((1 + ap)(1 + bp)(1 + cp) ln 2)``."""
    c = a + b
    return a * b * p * (2 + c * p) / ((1 + a * p) * (1 + b * p) * (1 + c * p) * LN2)


def _d2(p, a, b):
    c = a + b
    return (-(a / (1 + a * p)) ** 2 - (b / (1 + b * p)) ** 2 + (c / (1 + c * p)) ** 2) / LN2


def rate_derivative(p, noise: NoiseScales):
    """First derivative of the per-subchannel rate, bits per unit power."""
    return _d1(np.asarray(p, dtype=float), noise.a, noise.b)


def rate_second_derivative(p, noise: NoiseScales):
    return _d2(np.asarray(p, dtype=float), noise.a, noise.b)


def rate_function(p, p_hi, noise: NoiseScales):
    """Marginal rate ``y_i(p) = p_h,i dI/dp``."""
    return np.asarray(p_hi, dtype=float) * rate_derivative(p, noise)


def concavity_threshold(noise: NoiseScales, rtol: float = 1e-13) -> float:
    """Positive root of ``d2I/dp2``, found by log-space bisection.

    The bracket starts at ``1 / (a + b)`` and is shrunk or grown
    geometrically until the second derivative changes sign.

    Raises
    ------
    RuntimeError
        If no sign change appears within 60 doublings.
    """
    a, b = noise.a, noise.b
    lo = hi = 1.0 / (a + b)
    for _ in range(MAX_DOUBLINGS):
        if _d2(lo, a, b) > 0:
            break
        lo /= 2
    else:
        raise RuntimeError("concavity threshold: no convex region found")
    for _ in range(MAX_DOUBLINGS):
        if _d2(hi, a, b) < 0:
            break
        hi *= 2
    else:
        raise RuntimeError("concavity threshold: no concave region found")
    x_lo, x_hi = np.log(lo), np.log(hi)
    while x_hi - x_lo > rtol:
        mid = 0.5 * (x_lo + x_hi)
        if _d2(np.exp(mid), a, b) > 0:
            x_lo = mid
        else:
            x_hi = mid
    return float(np.exp(0.5 * (x_lo + x_hi)))


def _solve_concave(t: np.ndarray, p_co: float, a: float, b: float) -> np.ndarray:
    """Solve ``I'(p) = t`` on ``p >= p_co`` for every entry of ``t``.

    Entries with ``t >= I'(p_co)`` return ``p_co``.  Safeguarded Newton
    in ``log p`` with a bisection fallback; all channels advance together.
    """
    t = np.asarray(t, dtype=float)
    x_co = np.log(p_co)
    d_co = _d1(p_co, a, b)
    out = np.full(t.shape, p_co)
    todo = t < d_co
    if not np.any(todo):
        return out
    tt = t[todo]
    lo = np.full(tt.shape, x_co)
    # I'(p) ~ 1/(p ln2) for large p, so this guess sits near the root
    hi = np.maximum(np.log(1.0 / (tt * LN2)) + 1.0, x_co + 1e-12)
    for _ in range(4 * MAX_DOUBLINGS):
        grow = _d1(np.exp(hi), a, b) > tt
        if not np.any(grow):
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, hi + 1.0, hi)
    x = 0.5 * (lo + hi)
    done = np.zeros(tt.shape, dtype=bool)
    for _ in range(200):
        p = np.exp(x)
        d1 = _d1(p, a, b)
        F = np.log(d1) - np.log(tt)
        lo = np.where(F > 0, x, lo)
        hi = np.where(F < 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = F / (p * _d2(p, a, b) / d1)
        x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new < lo) | (x_new > hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        done = (F == 0) | (~bad & (np.abs(step) <= 1e-13)) | (hi - lo <= 1e-13)
        x = np.where(F == 0, x, x_new)
        if np.all(done):
            break
    out[todo] = np.exp(x)
    return out


@dataclass
class PowerAllocation:
    """Water-filling result.

    Attributes
    ----------
    p : ndarray
        Allocated subchannel powers (eigenvalues of ``R_W``).
    mu : float
        Water level.
    active : ndarray of bool
    gamma : ndarray
        Inactive-channel powers ``p_h,i p_co`` (0 for dropped channels).
    p_co : float
    budget : float
    p_h : ndarray
    """

    p: np.ndarray
    mu: float
    active: np.ndarray
    gamma: np.ndarray
    p_co: float
    budget: float
    p_h: np.ndarray

    def budget_used(self) -> float:
        pos = self.p_h > 0
        return float(np.sum(self.p[pos] / self.p_h[pos]))

    def kkt_residuals(self, noise: NoiseScales) -> tuple[float, float, float]:
        """(max |y_i - mu| on active, max |p_i - gamma_i| on inactive, |budget gap|)."""
        y = rate_function(self.p, self.p_h, noise)
        r1 = float(np.max(np.abs(y[self.active] - self.mu), initial=0.0))
        r2 = float(np.max(np.abs(self.p[~self.active] - self.gamma[~self.active]), initial=0.0))
        return r1, r2, abs(self.budget_used() - self.budget)

    def skr(self, noise: NoiseScales) -> float:
        return skr_from_powers(self.p, noise)


@dataclass
class OptimalDesign:
    W: np.ndarray
    achieved_skr: float


def _allocate(mu, p_h, active, gamma, p_co, a, b):
    p = gamma.copy()
    idx = np.flatnonzero(active)
    if idx.size:
        p[idx] = _solve_concave(mu / p_h[idx], p_co, a, b)
    return p


def _used(p, p_h):
    pos = p_h > 0
    return float(np.sum(p[pos] / p_h[pos]))


def bisection_solve(p_h, budget: float, noise: NoiseScales, active, gamma=None,
                    mu_bounds=None, eps1: float = 1e-8, eps2=None, p_co=None):
    """Find the water level for a fixed active set.

    Active channels are solved on the concave branch ``p >= p_co`` (clamped
    to ``p_co`` when ``y_i(p_co) < mu``); inactive ones take ``gamma``.
    The outer search over ``log mu`` uses Brent's bracketed method, with
    the bracket expanded automatically when ``mu_bounds`` does not
    straddle the budget.

    Returns
    -------
    p : ndarray
    mu : float

    Raises
    ------
    RuntimeError
        If the budget residual exceeds ``eps2`` or a stationarity residual
        exceeds ``eps1`` at exit.
    ValueError
        If the active set cannot reach the concave branch within budget.
    """
    p_h = np.asarray(p_h, dtype=float)
    active = np.asarray(active, dtype=bool)
    if p_co is None:
        p_co = concavity_threshold(noise)
    if gamma is None:
        gamma = p_h * p_co
    gamma = np.where(active, 0.0, np.asarray(gamma, dtype=float))
    if eps2 is None:
        eps2 = 1e-6 * budget
    a, b = noise.a, noise.b
    if np.any(active & (p_h <= 0)):
        raise ValueError("channels with zero eigenvalue cannot be active")
    fixed = _used(gamma, p_h)
    if not np.any(active):
        return gamma, 0.0

    def resid(s):
        return _used(_allocate(np.exp(s), p_h, active, gamma, p_co, a, b), p_h) - budget

    s_top = float(np.log(np.max(rate_function(p_co, p_h[active], noise))))
    if fixed + np.sum(p_co / p_h[active]) > budget + eps2:
        raise ValueError("budget too small for the active set on the concave branch")
    if mu_bounds is not None:
        s_lo, s_hi = np.log(mu_bounds[0]), min(np.log(mu_bounds[1]), s_top)
    else:
        s_lo, s_hi = s_top - 1.0, s_top
    r_hi = resid(s_hi)
    if r_hi > 0:
        s_hi = s_top
        r_hi = resid(s_hi)
    step = 1.0
    r_lo = resid(s_lo)
    while r_lo < 0:
        s_lo -= step
        step *= 2
        if step > 2.0 ** MAX_DOUBLINGS:
            raise RuntimeError("could not bracket the water level")
        r_lo = resid(s_lo)
    if abs(r_hi) <= eps2:
        s = s_hi
    else:
        s = brentq(resid, s_lo, s_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=10_000)
    mu = float(np.exp(s))
    p = _allocate(mu, p_h, active, gamma, p_co, a, b)
    res = _used(p, p_h) - budget
    if abs(res) > eps2:
        raise RuntimeError(f"budget residual {res:.3e} exceeds tolerance {eps2:.3e}")
    on_branch = active & (rate_function(p_co, p_h, noise) >= mu)
    y = rate_function(p, p_h, noise)
    if np.any(np.abs(y[on_branch] - mu) > eps1):
        raise RuntimeError("inner search did not reach the stationarity tolerance")
    return p, mu


def water_fill(p_h, budget: float, noise: NoiseScales, eps1: float = 1e-8,
               eps2=None, refine: bool = True) -> PowerAllocation:
    """Water-filling with lower-bound thresholds.

    Parameters
    ----------
    p_h : array_like
        Subchannel eigenvalues, descending and nonnegative.  Zero entries
        are inactive with ``gamma = 0``.
    budget : float
        Weighted budget ``sum p_i / p_h,i``.
    noise : NoiseScales
    eps1, eps2 : float
        Stationarity and budget tolerances (``eps2`` defaults to
        ``1e-6 * budget``).
    refine : bool
        After the KKT loop, keep deactivating the weakest active channel
        while the SKR strictly improves.

    Notes
    -----
    A channel is moved to the inactive set when it has no stationary
    point on the concave branch at the current water level.  When even
    ``sum gamma_i / p_h,i`` exceeds the budget the weakest channels are
    dropped (``gamma = 0``) first.
    """
    p_h = np.asarray(p_h, dtype=float)
    if p_h.ndim != 1 or p_h.size == 0:
        raise ValueError("p_h must be a nonempty vector")
    if np.any(p_h < 0) or np.any(np.diff(p_h) > 0):
        raise ValueError("p_h must be nonnegative and sorted descending")
    if budget <= 0:
        raise ValueError("budget must be positive")
    if eps2 is None:
        eps2 = 1e-6 * budget
    p_co = concavity_threshold(noise)
    pos = p_h > 0
    gamma = np.where(pos, p_h * p_co, 0.0)
    # drop weakest channels until the thresholds fit the budget
    n_keep = int(pos.sum())
    while n_keep > 0 and n_keep * p_co > budget:
        n_keep -= 1
    if n_keep == 0:
        raise ValueError("budget is infeasible: below the threshold of a single channel")
    gamma[n_keep:] = 0.0
    eligible = np.zeros(p_h.size, dtype=bool)
    eligible[:n_keep] = True

    def inactive_cost(k):
        return (n_keep - k) * p_co

    def solve(k):
        """KKT loop starting from the strongest ``k`` channels active."""
        while k > 0:
            act = np.zeros(p_h.size, dtype=bool)
            act[:k] = True
            if inactive_cost(k) + np.sum(p_co / p_h[:k]) > budget:
                k -= 1
                continue
            p, mu = bisection_solve(p_h, budget, noise, act, gamma, eps1=eps1,
                                    eps2=eps2, p_co=p_co)
            below = act & (rate_function(p_co, p_h, noise) < mu)
            if not np.any(below):
                return k, p, mu
            k = int(np.flatnonzero(act & ~below).max(initial=-1)) + 1
        return 0, gamma.copy(), 0.0

    k, p, mu = solve(n_keep)
    if k == 0:
        # no channel reaches the concave branch: the rate is convex there,
        # so the spare budget goes to the strongest channel
        p = gamma.copy()
        p[0] = p_h[0] * (budget - inactive_cost(1))
        mu = float(rate_function(p[0], p_h[0], noise))
        k = 1
        refine = False
    if refine:
        best = skr_from_powers(p, noise)
        while k > 1:
            k2, p2, mu2 = solve(k - 1)
            if k2 == 0:
                break
            val = skr_from_powers(p2, noise)
            if val <= best * (1 + 1e-12):
                break
            k, p, mu, best = k2, p2, mu2, val
    active = np.zeros(p_h.size, dtype=bool)
    active[:k] = True
    return PowerAllocation(p=p, mu=mu, active=active, gamma=gamma, p_co=p_co,
                           budget=float(budget), p_h=p_h)


def build_W(alloc: PowerAllocation, corr, cols=None, noise: NoiseScales = None) -> OptimalDesign:
    """Design matrix ``W = (U_h Lambda_h^{-1/2} Lambda)^*`` with ``R_W = diag(p)``.

    ``Lambda`` is ``D x cols`` with ``sqrt(p)`` on its diagonal; extra
    columns are zero.  ``achieved_skr`` is computed when ``noise`` is given.
    """
    U_h, p_h = corr.U_h, corr.p_h
    D = p_h.size
    cols = D if cols is None else int(cols)
    if cols < D:
        raise ValueError("need at least D columns")
    p = alloc.p
    zero = p_h <= 0
    if np.any(zero & (p > 0)):
        raise ValueError("power assigned to a zero-eigenvalue channel")
    scale = np.zeros(D)
    scale[~zero] = np.sqrt(p[~zero] / p_h[~zero])
    W = np.zeros((D, cols), dtype=complex)
    W[:, :D] = (U_h * scale).conj()
    skr = skr_analytic(W, corr.R_h, noise) if noise is not None else float("nan")
    return OptimalDesign(W=W, achieved_skr=skr)
