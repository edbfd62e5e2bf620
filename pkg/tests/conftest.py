import numpy as np
import pytest

from ris_keygen.channel import (ChannelModel, LinkParams, Links, SystemGeometry,
                                corr_matrix_bs, corr_matrix_ris)
from ris_keygen.skr import NoiseScales


def small_model(n=2, m_y=2, m_z=1, k=10.0, beta=(1.0, 1.0, 1.0), r=0.5, d_r=0.5,
                nlos="gaussian"):
    geom = SystemGeometry.normalized(n, m_y, m_z, 0.5, d_r, 0.1, (39.0, 4.9, 4.9),
                                     (0.0, 0.0, 1.0), (39.0, 4.2, 5.4))
    b_ar, b_br, b_ba = beta
    links = Links(LinkParams(k, b_ar, 4), LinkParams(k, b_br, 4),
                  LinkParams(k, b_ba, 4))
    return ChannelModel(geom, links, corr_matrix_bs(n, r), corr_matrix_ris(geom), nlos=nlos)


def random_psd(rng, d, rank=None):
    rank = d if rank is None else rank
    A = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    return A @ A.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_noise():
    return NoiseScales(1.0, 1.0)


def grid_optimum(p_h, budget, noise, p_co, n=4001):
    """Dense grid maximum of the SKR over budget splits with p_i >= p_h,i p_co.

    Channels that cannot all meet the threshold are dropped weakest first
    (lower bound 0), mirroring the feasible set of the water-filling problem.
    """
    from ris_keygen.skr import skr_from_powers

    p_h = np.asarray(p_h, dtype=float)
    D = p_h.size
    keep = D
    while keep * p_co > budget:
        keep -= 1
    lo = np.where(np.arange(D) < keep, p_co, 0.0)  # lower bounds in budget units
    spare = budget - lo.sum()
    t = np.linspace(0.0, 1.0, n)
    if D == 2:
        shares = np.stack([t, 1 - t], axis=1)
    elif D == 3:
        m = int(np.sqrt(2 * n))
        s = np.linspace(0.0, 1.0, m)
        a, b = np.meshgrid(s, s, indexing="ij")
        ok = a + b <= 1 + 1e-12
        shares = np.stack([a[ok], b[ok], np.clip(1 - a[ok] - b[ok], 0, None)], axis=1)
    else:
        raise ValueError("grid oracle supports D = 2 or 3")
    x = lo + spare * shares
    p = x * p_h
    a_, b_ = noise.a, noise.b
    vals = (np.log1p(a_ * p) + np.log1p(b_ * p) - np.log1p((a_ + b_) * p)).sum(axis=1) / np.log(2)
    i = int(np.argmax(vals))
    # local refinement around the best grid point
    best, best_x = vals[i], x[i]
    step = spare / (n - 1)
    for _ in range(40):
        improved = False
        for d in range(D):
            for e in range(D):
                if d == e:
                    continue
                cand = best_x.copy()
                cand[d] += step
                cand[e] -= step
                if cand[e] < lo[e]:
                    continue
                v = skr_from_powers(cand * p_h, noise)
                if v > best:
                    best, best_x, improved = v, cand, True
        if not improved:
            step /= 2
    return best
