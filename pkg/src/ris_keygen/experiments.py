"""Scenario runner: the five probing strategies, parameter sweeps and CSV output.

Strategies (all rates per probing round):

``ma_no_ris``
    Multi-antenna BS probing only the direct channel.
``ma_ris_raw``
    RIS with all-ones phases and ``P = I``: one packet of the equivalent channel.
``sa_ris_opt``
    Single BS antenna, RIS phases optimized for equivalent-channel power.
``upper_bound``
    Unconstrained water-filling design ``W``.
``proposed``
    Hadamard phase schedule with the Procrustes precoder fitted to ``W``.
"""
from __future__ import annotations

import csv
import logging
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import (ChannelModel, CorrelationModel, LinkParams, Links, SystemGeometry,
                      corr_matrix_bs, corr_matrix_ris, default_gamma, estimate_R_h)
from .config import ALGORITHMS, ScenarioConfig, db_to_lin
from .decompose import decompose
from .keypipe import KeyMaterial, generate_keys
from .probing import next_pow2, probe_batch
from .sa_design import build_R_e, optimize_phase_sa
from .skr import NoiseScales, gaussian_mi_estimate, sa_skr, skr_analytic
from .waterfill import build_W, design_budget, water_fill

log = logging.getLogger(__name__)

CSV_HEADER = ("algorithm", "sweep_var", "sweep_value", "skr_bits", "skr_mc_bits", "bdr")
THREADS_ENV = "RIS_KEYGEN_THREADS"

# streams derived from (seed, realization, purpose)
_STREAM_G, _STREAM_COV, _STREAM_SA, _STREAM_MC = 0, 1, 2, 3


@dataclass
class ReportRow:
    algorithm: str
    sweep_var: str
    sweep_value: object
    skr_bits: float
    skr_mc_bits: float = float("nan")
    bdr: float = float("nan")
    p_values: Optional[dict] = None

    def csv_fields(self):
        def fmt(x):
            return "" if x is None else repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
        return [self.algorithm, self.sweep_var, fmt(self.sweep_value),
                fmt(self.skr_bits), fmt(self.skr_mc_bits), fmt(self.bdr)]


@dataclass
class CaseResult:
    """Design and rate of one strategy on one channel realization."""

    algorithm: str
    W: np.ndarray
    skr: float
    noise: NoiseScales
    model: ChannelModel
    G: Optional[np.ndarray]
    extra: dict = field(default_factory=dict)


# -- model construction ----------------------------------------------------

def geometry(cfg: ScenarioConfig, n: Optional[int] = None) -> SystemGeometry:
    g = cfg.geometry
    return SystemGeometry.normalized(g.n if n is None else n, g.m_y, g.m_z, g.d_a, g.d_r,
                                     g.wavelength, g.ris_pos, g.bs_pos, g.ue_pos)


def path_gain(cfg: ScenarioConfig, dist: float, exponent: float) -> float:
    lk = cfg.links
    return db_to_lin(lk.beta0_db) * (dist / lk.d0) ** (-exponent)


def build_model(cfg: ScenarioConfig, n: Optional[int] = None) -> ChannelModel:
    geom = geometry(cfg, n)
    lk = cfg.links
    K = db_to_lin(lk.k_db)
    ctr = geom.ris_center()
    d_ar = float(np.linalg.norm(ctr - geom.bs_pos))
    d_br = float(np.linalg.norm(ctr - geom.ue_pos))
    d_ba = float(np.linalg.norm(geom.ue_pos - geom.bs_pos))
    cc = cfg.correlation
    gamma = cc.gamma if cc.gamma is not None else default_gamma(geom.d_r / geom.wavelength, cc.mu1)
    # path-sum NLoS then has the same per-element variance as the Gaussian mode
    var = gamma
    links = Links(
        bs_ris=LinkParams(K, path_gain(cfg, d_ar, lk.exponent_bs_ris), lk.n_paths, var),
        ue_ris=LinkParams(K, path_gain(cfg, d_br, lk.exponent_ue_ris), lk.n_paths, var),
        ue_bs=LinkParams(K, path_gain(cfg, d_ba, lk.exponent_ue_bs), lk.n_paths, var),
    )
    R_r = corr_matrix_ris(geom, gamma)
    R_a = corr_matrix_bs(geom.n, cc.r)
    return ChannelModel(geom, links, R_a, R_r, nlos=cfg.model.nlos)


def packets(cfg: ScenarioConfig) -> int:
    M = cfg.geometry.m
    return cfg.probing.v if cfg.probing.v is not None else next_pow2(M + 1)


def noise_scales(cfg: ScenarioConfig, n: Optional[int] = None) -> NoiseScales:
    p = cfg.power
    N = cfg.geometry.n if n is None else n
    return NoiseScales.from_physical(p.noise_w, p.noise_w, p.pt_w, p.pt_w, N, cfg.probing.q)


def _rng(cfg: ScenarioConfig, realization: int, stream: int, *extra: int):
    return np.random.default_rng(np.random.SeedSequence([cfg.run.seed, realization, stream, *extra]))


def _link_rngs(cfg: ScenarioConfig, realization: int, stream: int, *extra: int):
    """Independent generators for the h, f and G draws."""
    return tuple(_rng(cfg, realization, stream, *extra, j) for j in range(3))


def _channel_key(cfg: ScenarioConfig):
    return (cfg.geometry, cfg.links, cfg.correlation, cfg.model, cfg.run.seed)


@dataclass
class Realization:
    model: ChannelModel
    G: Optional[np.ndarray]
    corr: CorrelationModel


_CACHE: "OrderedDict[tuple, object]" = OrderedDict()
_CACHE_SIZE = 64


def _cached(key, build):
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    val = build()
    _CACHE[key] = val
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return val


def realization(cfg: ScenarioConfig, index: int = 0) -> Realization:
    """Channel model, fixed BS-RIS matrix and covariance of one realization.

    Results are cached on the channel-relevant part of the config, so
    sweeps over power reuse the same covariance estimate.
    """
    def build():
        model = build_model(cfg)
        G = model.sample_G(_rng(cfg, index, _STREAM_G)) if cfg.model.static_ris_link else None
        corr = estimate_R_h(model, cfg.model.cov_trials, _link_rngs(cfg, index, _STREAM_COV), G=G,
                            subtract_mean=cfg.model.subtract_mean)
        return Realization(model, G, corr)
    return _cached(("cov", _channel_key(cfg), index), build)


def _sa_design(cfg: ScenarioConfig, index: int):
    def build():
        real = realization(cfg, index)
        model1 = build_model(cfg, n=1)
        G1 = real.G[:, :1] if real.G is not None else None
        prob = build_R_e(model1, cfg.run.sa_trials, _link_rngs(cfg, index, _STREAM_SA), 1.0, 1.0,
                         cfg.probing.k_q, G=G1)
        v = optimize_phase_sa(prob, cfg.run.sa_randomizations, _rng(cfg, index, _STREAM_SA, 3))
        return model1, G1, prob.R_e, v
    key = ("sa", _channel_key(cfg), cfg.run.sa_trials, cfg.run.sa_randomizations,
           cfg.probing.k_q, index)
    return _cached(key, build)


# -- the five strategies ----------------------------------------------------

def design_case(cfg: ScenarioConfig, case: str, index: int = 0) -> CaseResult:
    """Build the probing matrix of ``case`` and its analytic SKR."""
    if case not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {case!r}")
    N, M = cfg.geometry.n, cfg.geometry.m
    if case == "sa_ris_opt":
        if N > 1:
            log.info("sa_ris_opt uses the first BS antenna of the %d-antenna geometry", N)
        model1, G1, R_e, v = _sa_design(cfg, index)
        noise = noise_scales(cfg, n=1)
        skr = sa_skr(v, R_e, noise.sigma_hat_a2, noise.sigma_hat_b2)
        return CaseResult(case, v[:, None], skr, noise, model1, G1, {"v_bar": v, "R_e": R_e})
    real = realization(cfg, index)
    noise = noise_scales(cfg)
    D = N * (M + 1)
    extra = {}
    if case == "ma_no_ris":
        W = np.zeros((D, N), dtype=complex)
        W[:N] = np.eye(N)
    elif case == "ma_ris_raw":
        W = np.kron(np.ones((M + 1, 1)), np.eye(N)).astype(complex)
    else:
        V = packets(cfg)
        alloc = water_fill(real.corr.p_h, design_budget(M, V, N), noise)
        W = build_W(alloc, real.corr, cols=N * V).W
        extra["alloc"] = alloc
        if case == "proposed":
            dec = decompose(W, M, V=V, K_q=cfg.probing.k_q)
            extra["decomposition"] = dec
            W = dec.W
    skr = skr_analytic(W, real.corr, noise)
    return CaseResult(case, W, skr, noise, real.model, real.G, extra)


def simulate_case(res: CaseResult, cfg: ScenarioConfig, rounds: int, index: int = 0):
    """Probe ``rounds`` independent fading blocks with the case design.

    Returns the two parties' measurement matrices (rounds x columns).
    """
    stream = ALGORITHMS.index(res.algorithm)
    links = _link_rngs(cfg, index, _STREAM_MC, stream)
    noise_rng = _rng(cfg, index, _STREAM_MC, stream, 3)
    std_a = np.sqrt(res.noise.sigma_hat_a2)
    std_b = np.sqrt(res.noise.sigma_hat_b2)
    return probe_batch(res.model, res.W, std_a, std_b, rounds, links, G=res.G,
                       noise_rng=noise_rng)


def key_material(cfg: ScenarioConfig, case: str, rounds: int, index: int = 0,
                 run_tests: bool = True) -> KeyMaterial:
    res = design_case(cfg, case, index)
    Z_a, Z_b = simulate_case(res, cfg, rounds, index)
    return generate_keys(Z_a, Z_b, run_tests=run_tests)


def run_case(cfg: ScenarioConfig, case: str, sweep_var: str = "none",
             sweep_value=None) -> ReportRow:
    """Average analytic SKR, Monte Carlo SKR and BDR over the realizations."""
    skr, mc, bdrs = [], [], []
    for r in range(cfg.run.realizations):
        res = design_case(cfg, case, r)
        skr.append(res.skr)
        if cfg.run.trials > 0:
            Z_a, Z_b = simulate_case(res, cfg, cfg.run.trials, r)
            try:
                mc.append(gaussian_mi_estimate(Z_a, Z_b, center=cfg.model.subtract_mean))
            except ValueError as err:
                log.warning("%s: Monte Carlo SKR unavailable (%s)", case, err)
                mc.append(float("nan"))
            bdrs.append(generate_keys(Z_a, Z_b, run_tests=False).bdr)
    mean = (lambda xs: float(np.mean(xs)) if xs else float("nan"))
    return ReportRow(case, sweep_var, sweep_value, mean(skr), mean(mc), mean(bdrs))


# -- sweeps -----------------------------------------------------------------

def split_elements(M: int) -> tuple[int, int]:
    """Near-square ``(m_y, m_z)`` with ``m_y >= m_z`` and ``m_y m_z = M``."""
    m_z = max(d for d in range(1, int(np.sqrt(M)) + 1) if M % d == 0)
    return M // m_z, m_z


def apply_sweep(cfg: ScenarioConfig, var: str, value) -> ScenarioConfig:
    if var == "pt":
        return cfg.replace(power={"pt_dbm": float(value)})
    if var == "k":
        return cfg.replace(links={"k_db": float(value)})
    if var == "dr":
        return cfg.replace(geometry={"d_r": float(value)})
    if var == "m":
        M = int(value)
        if M != value or M < 1:
            raise ValueError(f"element count must be a positive integer, got {value}")
        m_y, m_z = split_elements(M)
        return cfg.replace(geometry={"m_y": m_y, "m_z": m_z})
    raise ValueError(f"unknown sweep variable {var!r}")


def _grid_point(args):
    cfg, var, value = args
    point = apply_sweep(cfg, var, value)
    return [run_case(point, case, var, value) for case in cfg.run.algorithms]


def worker_count(n_tasks: int) -> int:
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    if cap < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1")
    return max(1, min(cap, n_tasks))


def sweep(cfg: ScenarioConfig, var: Optional[str] = None, grid=None) -> list[ReportRow]:
    """One row per (grid point, algorithm), in grid then algorithm order.

    Every grid point reuses the same per-realization seeds, so trends are
    not masked by independent channel draws.
    """
    var = var or cfg.sweep.var
    grid = list(cfg.sweep.grid if grid is None else grid)
    if var is None or not grid:
        raise ValueError("sweep needs a variable and a nonempty grid")
    tasks = [(cfg, var, v) for v in grid]
    workers = worker_count(len(tasks))
    if workers == 1:
        chunks = [_grid_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_grid_point, tasks))
    return [row for chunk in chunks for row in chunk]


def run(cfg: ScenarioConfig) -> list[ReportRow]:
    """All configured algorithms at the configured operating point."""
    return [run_case(cfg, case) for case in cfg.run.algorithms]


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.csv_fields())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
