"""Geometry, array responses and correlated Rician channels for the RIS link.

Conventions
-----------
* The BS carries an ``n``-element ULA along the x-axis, the RIS is a
  ``m_y x m_z`` UPA parallel to the y-z plane and the UE has one antenna.
* ``G`` is the ``M x N`` BS-RIS matrix, ``f`` the ``M`` UE-RIS vector and
  ``h`` the ``N`` UE-BS (direct) vector.  Row ``m`` of ``G`` transposed is
  the element-to-BS vector ``g_m``.
* The cascaded channel stacks the direct channel with the per-element
  products, ``h_r = [h; g_1 f_1; ...; g_M f_M]`` (length ``N (M + 1)``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EIG_CLAMP = 1e-10


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric standard complex normals."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemGeometry:
    """Positions and array parameters, all lengths in meters."""

    n: int
    m_y: int
    m_z: int
    d_a: float
    d_r: float
    wavelength: float
    u1: np.ndarray
    bs_pos: np.ndarray
    ue_pos: np.ndarray

    def __post_init__(self):
        if self.n < 1 or self.m_y < 1 or self.m_z < 1:
            raise ValueError("array sizes must be >= 1")
        if min(self.d_a, self.d_r, self.wavelength) <= 0:
            raise ValueError("spacings and wavelength must be positive")
        for name in ("u1", "bs_pos", "ue_pos"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def normalized(cls, n, m_y, m_z, d_a, d_r, wavelength, u1, bs_pos, ue_pos):
        """Build from spacings given in wavelengths."""
        return cls(n, m_y, m_z, d_a * wavelength, d_r * wavelength, wavelength,
                   u1, bs_pos, ue_pos)

    @property
    def m(self) -> int:
        return self.m_y * self.m_z

    @property
    def dim(self) -> int:
        """Cascaded channel dimension ``N (M + 1)``."""
        return self.n * (self.m + 1)

    def element_positions(self) -> np.ndarray:
        idx = np.arange(self.m)
        y = idx % self.m_y
        z = idx // self.m_y
        offsets = np.stack([np.zeros(self.m), y, z], axis=1)
        return self.u1 + self.d_r * offsets

    def ris_center(self) -> np.ndarray:
        return self.element_positions().mean(axis=0)

    def with_n(self, n: int) -> "SystemGeometry":
        return SystemGeometry(n, self.m_y, self.m_z, self.d_a, self.d_r, self.wavelength,
                              self.u1, self.bs_pos, self.ue_pos)


def ula_response(psi, n: int, d_a: float, wavelength: float) -> np.ndarray:
    """ULA steering vector ``exp(j 2 pi k d_a sin(psi) / lambda)``, k = 0..n-1."""
    k = np.arange(n)
    return np.exp(1j * 2 * np.pi * k * d_a * np.sin(psi) / wavelength)


def upa_response(theta, phi, geom: SystemGeometry) -> np.ndarray:
    """RIS steering vector ``a_z(phi) kron a_y(theta, phi)``.

    The horizontal index runs fastest, matching the element numbering of
    :meth:`SystemGeometry.element_positions`.
    """
    scale = 2 * np.pi * geom.d_r / geom.wavelength
    a_y = np.exp(1j * scale * np.arange(geom.m_y) * np.cos(phi) * np.sin(theta))
    a_z = np.exp(1j * scale * np.arange(geom.m_z) * np.sin(phi))
    return np.kron(a_z, a_y)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def ris_angles(geom: SystemGeometry, point) -> tuple[float, float]:
    """Azimuth/elevation of ``point`` seen from the first RIS element."""
    k = _unit(np.asarray(point) - geom.u1)
    phi = float(np.arcsin(np.clip(k[2], -1, 1)))
    theta = float(np.arctan2(k[1], k[0]))
    return theta, phi


def bs_angle(geom: SystemGeometry, point) -> float:
    """Angle from broadside of the x-axis ULA towards ``point``."""
    k = _unit(np.asarray(point) - geom.bs_pos)
    return float(np.arcsin(np.clip(k[0], -1, 1)))


def corr_matrix_ris(geom: SystemGeometry, gamma: float = 1.0) -> np.ndarray:
    """Isotropic-scattering element correlation ``gamma * sin(x)/x``, ``x = 2 pi d / lambda``."""
    pos = geom.element_positions()
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    # np.sinc(t) = sin(pi t) / (pi t), so t = 2 d / lambda
    return gamma * np.sinc(2.0 * dist / geom.wavelength)


def corr_matrix_bs(n: int, r: float) -> np.ndarray:
    """Exponential antenna correlation ``r**|i-j|``."""
    if not 0 <= r < 1:
        raise ValueError(f"correlation coefficient must be in [0, 1), got {r}")
    k = np.arange(n)
    return r ** np.abs(k[:, None] - k[None, :]).astype(float)


def default_gamma(d_r: float, mu1: float = 1.0) -> float:
    """Normalizer ``1 / (A mu1)`` with element area ``A = d_r**2``."""
    return 1.0 / (d_r ** 2 * mu1)


def psd_sqrt(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Hermitian square root of a PSD matrix.

    Raises ``np.linalg.LinAlgError`` when an eigenvalue is below
    ``-tol * trace``.
    """
    R = 0.5 * (R + R.conj().T)
    w, U = np.linalg.eigh(R)
    scale = max(float(np.real(np.trace(R))), np.finfo(float).tiny)
    if w.min() < -tol * scale:
        raise np.linalg.LinAlgError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


@dataclass(frozen=True)
class LinkParams:
    """Large-scale parameters of one Rician link.

    ``n_paths`` and ``gain_variance`` only matter for the discrete path-sum
    NLoS generator.
    """

    k_factor: float
    beta: float
    n_paths: int = 1
    gain_variance: float = 1.0

    def __post_init__(self):
        if self.k_factor < 0 or self.beta < 0 or self.n_paths < 1:
            raise ValueError("need k_factor >= 0, beta >= 0, n_paths >= 1")

    @property
    def los_amp(self) -> float:
        if np.isinf(self.k_factor):
            return float(np.sqrt(self.beta))
        return float(np.sqrt(self.k_factor * self.beta / (1 + self.k_factor)))

    @property
    def nlos_amp(self) -> float:
        if np.isinf(self.k_factor):
            return 0.0
        return float(np.sqrt(self.beta / (1 + self.k_factor)))


@dataclass(frozen=True)
class Links:
    bs_ris: LinkParams
    ue_ris: LinkParams
    ue_bs: LinkParams


@dataclass
class ChannelRealization:
    h: np.ndarray
    f: np.ndarray
    G: np.ndarray

    @property
    def h_r(self) -> np.ndarray:
        return cascade(self)

    def equivalent(self, v) -> np.ndarray:
        """Channel seen for RIS phases ``v``: ``h + G^T diag(v) f``."""
        return self.h + self.G.T @ (np.asarray(v) * self.f)


@dataclass
class CorrelationModel:
    """Cascaded-channel covariance with its descending eigendecomposition."""

    R_a: np.ndarray
    R_r: np.ndarray
    R_h: np.ndarray
    U_h: np.ndarray = field(init=False)
    p_h: np.ndarray = field(init=False)

    def __post_init__(self):
        self.R_h = 0.5 * (self.R_h + self.R_h.conj().T)
        self.U_h, self.p_h = eig_descending(self.R_h)

    @property
    def dim(self) -> int:
        return self.R_h.shape[0]


def eig_descending(R: np.ndarray, tol: float = EIG_CLAMP):
    """Eigendecomposition sorted descending with small negatives clamped to 0.

    Ties keep the solver's original index order (stable sort).
    """
    w, U = np.linalg.eigh(R)
    scale = max(float(np.abs(w).max(initial=0.0)), np.finfo(float).tiny)
    if w.min(initial=0.0) < -tol * max(scale, 1.0) and w.min() < -1e-6 * scale:
        raise np.linalg.LinAlgError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
    order = np.argsort(-w, kind="stable")
    return U[:, order], np.clip(w[order], 0.0, None)


def cascade(real: ChannelRealization) -> np.ndarray:
    """``vec([h, G^T diag(f)])`` for one realization."""
    per_element = real.G * real.f[:, None]  # row m is (g_m f_m)^T
    return np.concatenate([real.h, per_element.ravel()])


def cascade_batch(h: np.ndarray, f: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Vectorized :func:`cascade`; ``h`` is (T, N), ``f`` (T, M), ``G`` (M, N) or (T, M, N)."""
    per_element = G * f[..., :, None]
    T = h.shape[0]
    return np.concatenate([h, per_element.reshape(T, -1)], axis=1)


class ChannelModel:
    """Correlated Rician generator for the three links of the RIS system.

    Parameters
    ----------
    geom : SystemGeometry
    links : Links
        Large-scale parameters of the BS-RIS, UE-RIS and UE-BS links.
    R_a, R_r : ndarray
        BS antenna and RIS element correlation matrices.
    nlos : {"gaussian", "paths"}
        NLoS synthesis.  ``"gaussian"`` draws correlated complex normals
        (``R^{1/2} w``); ``"paths"`` sums ``n_paths`` plane waves with random
        directions and gains of variance ``gain_variance``.
    """

    def __init__(self, geom: SystemGeometry, links: Links, R_a: np.ndarray,
                 R_r: np.ndarray, nlos: str = "gaussian"):
        if R_a.shape != (geom.n, geom.n) or R_r.shape != (geom.m, geom.m):
            raise ValueError("correlation matrices do not match the geometry")
        if nlos not in ("gaussian", "paths"):
            raise ValueError(f"unknown NLoS mode {nlos!r}")
        self.geom = geom
        self.links = links
        self.R_a = R_a
        self.R_r = R_r
        self.nlos = nlos
        self.sqrt_R_a = psd_sqrt(R_a)
        self.sqrt_R_r = psd_sqrt(R_r)

        theta_ar, phi_ar = ris_angles(geom, geom.bs_pos)
        theta_br, phi_br = ris_angles(geom, geom.ue_pos)
        psi_ar = bs_angle(geom, geom.ris_center())
        psi_ba = bs_angle(geom, geom.ue_pos)
        b_ar = ula_response(psi_ar, geom.n, geom.d_a, geom.wavelength)
        self.G_los = np.outer(upa_response(theta_ar, phi_ar, geom), b_ar.conj())
        self.f_los = upa_response(theta_br, phi_br, geom)
        self.h_los = ula_response(psi_ba, geom.n, geom.d_a, geom.wavelength)

    # -- LoS means -----------------------------------------------------
    @property
    def mean_h(self) -> np.ndarray:
        return self.links.ue_bs.los_amp * self.h_los

    @property
    def mean_f(self) -> np.ndarray:
        return self.links.ue_ris.los_amp * self.f_los

    @property
    def mean_G(self) -> np.ndarray:
        return self.links.bs_ris.los_amp * self.G_los

    # -- NLoS draws ------------------------------------------------------
    def _random_ula(self, rng, size):
        # uniform directions on the sphere: sin(psi) ~ U(-1, 1)
        s = rng.uniform(-1, 1, size)
        k = np.arange(self.geom.n)
        return np.exp(1j * 2 * np.pi * s[..., None] * k * self.geom.d_a / self.geom.wavelength)

    def _random_upa(self, rng, size):
        theta = rng.uniform(0, 2 * np.pi, size)
        phi = np.arcsin(rng.uniform(-1, 1, size))
        pos = self.geom.element_positions() - self.geom.u1
        k = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], -1)
        return np.exp(1j * 2 * np.pi * (k @ pos.T) / self.geom.wavelength)

    def _paths(self, rng, T, link: LinkParams, kind):
        L = link.n_paths
        c = crandn(rng, (T, L)) * np.sqrt(link.gain_variance / L)
        if kind == "h":
            return np.einsum("tl,tln->tn", c, self._random_ula(rng, (T, L)))
        if kind == "f":
            return np.einsum("tl,tlm->tm", c, self._random_upa(rng, (T, L)))
        a = self._random_upa(rng, (T, L))
        b = self._random_ula(rng, (T, L))
        return np.einsum("tl,tlm,tln->tmn", c, a, b.conj())

    def nlos_h(self, rng, T):
        if self.nlos == "paths":
            return self._paths(rng, T, self.links.ue_bs, "h")
        return crandn(rng, (T, self.geom.n)) @ self.sqrt_R_a.T

    def nlos_f(self, rng, T):
        if self.nlos == "paths":
            return self._paths(rng, T, self.links.ue_ris, "f")
        return crandn(rng, (T, self.geom.m)) @ self.sqrt_R_r.T

    def nlos_G(self, rng, T):
        if self.nlos == "paths":
            return self._paths(rng, T, self.links.bs_ris, "G")
        H = crandn(rng, (T, self.geom.m, self.geom.n))
        return self.sqrt_R_r @ H @ self.sqrt_R_a

    # -- public sampling -------------------------------------------------
    def sample_G(self, rng, T: Optional[int] = None) -> np.ndarray:
        lk = self.links.bs_ris
        G = lk.los_amp * self.G_los + lk.nlos_amp * self.nlos_G(rng, 1 if T is None else T)
        return G[0] if T is None else G

    def sample_batch(self, rng, T: int, G: Optional[np.ndarray] = None):
        """Draw ``T`` independent (h, f, G); a given ``G`` is held fixed.

        ``rng`` is one generator or a triple feeding the UE-BS, UE-RIS and
        BS-RIS links separately, so one link's draws do not shift when
        another link changes size.
        """
        r_h, r_f, r_g = _link_streams(rng)
        lh, lf = self.links.ue_bs, self.links.ue_ris
        h = lh.los_amp * self.h_los + lh.nlos_amp * self.nlos_h(r_h, T)
        f = lf.los_amp * self.f_los + lf.nlos_amp * self.nlos_f(r_f, T)
        if G is None:
            G = self.sample_G(r_g, T)
        return h, f, G

    def sample_cascaded(self, rng, T: int, G: Optional[np.ndarray] = None) -> np.ndarray:
        """(T, D) matrix of cascaded-channel draws."""
        return cascade_batch(*self.sample_batch(rng, T, G))


def _link_streams(rng):
    if isinstance(rng, np.random.Generator):
        return rng, rng, rng
    streams = tuple(rng)
    if len(streams) != 3:
        raise ValueError("expected one generator or one per link (h, f, G)")
    return streams


def sample_channels(model: ChannelModel, rng: np.random.Generator,
                    G: Optional[np.ndarray] = None) -> ChannelRealization:
    """One draw of (h, f, G) from ``model``."""
    h, f, Gs = model.sample_batch(rng, 1, G)
    return ChannelRealization(h[0], f[0], Gs if G is not None else Gs[0])


def estimate_R_h(model: ChannelModel, trials: int, rng: np.random.Generator,
                 G: Optional[np.ndarray] = None, subtract_mean: bool = False,
                 chunk: int = 20000) -> CorrelationModel:
    """Monte Carlo estimate of ``R_h = E{h_r h_r^H}``.

    Parameters
    ----------
    model : ChannelModel
    trials : int
        Number of independent draws, at least 1000.
    rng : numpy.random.Generator or triple of them (see ``sample_batch``)
    G : ndarray, optional
        Hold the BS-RIS matrix fixed (the covariance is then conditional on
        this realization of the infrastructure link).
    subtract_mean : bool
        Estimate the centered covariance instead of the second moment.
    chunk : int
        Draws generated per batch; the result depends on it only
        through floating-point summation order, so keep it fixed for
        reproducibility.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    D = model.geom.dim
    acc = np.zeros((D, D), dtype=complex)
    total = np.zeros(D, dtype=complex)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        hr = model.sample_cascaded(rng, t, G)
        acc += hr.T @ hr.conj()
        total += hr.sum(axis=0)
        done += t
    R = acc / trials
    if subtract_mean:
        mu = total / trials
        R = R - np.outer(mu, mu.conj())
    return CorrelationModel(model.R_a, model.R_r, R)
