import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_keygen.channel import (ChannelRealization, CorrelationModel, LinkParams, Links,
                                SystemGeometry, cascade, corr_matrix_bs, corr_matrix_ris,
                                eig_descending, estimate_R_h, psd_sqrt, sample_channels,
                                ula_response, upa_response)

from conftest import small_model


def geom(m_y=2, m_z=2, d_r=0.5, n=2):
    return SystemGeometry.normalized(n, m_y, m_z, 0.5, d_r, 0.1, (0, 0, 0), (10, 0, 0), (0, 10, 0))


def test_ula_broadside_is_all_ones():
    assert np.allclose(ula_response(0.0, 5, 0.05, 0.1), 1.0)


def test_ula_half_wavelength_endfire():
    assert np.allclose(ula_response(np.pi / 2, 2, 0.05, 0.1), [1, -1])


def test_ula_matches_scalar_loop():
    a = ula_response(0.3, 4, 0.05, 0.1)
    ref = [np.exp(2j * np.pi * k * 0.05 * np.sin(0.3) / 0.1) for k in range(4)]
    assert np.allclose(a, ref)


def test_upa_zero_angles_all_ones():
    assert np.allclose(upa_response(0.0, 0.0, geom(3, 2)), 1.0)


def test_upa_kronecker_ordering():
    g = geom(2, 2)
    th, ph = 0.4, 0.7
    s = 2 * np.pi * 0.5
    ay = [1, np.exp(1j * s * np.cos(ph) * np.sin(th))]
    az = [1, np.exp(1j * s * np.sin(ph))]
    ref = [az[0] * ay[0], az[0] * ay[1], az[1] * ay[0], az[1] * ay[1]]
    assert np.allclose(upa_response(th, ph, g), ref)


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi / 2, np.pi / 2))
@settings(max_examples=50, deadline=None)
def test_upa_unit_modulus(th, ph):
    a = upa_response(th, ph, geom(4, 3))
    assert np.allclose(np.abs(a), 1.0)
    assert np.isclose(np.vdot(a, a).real, 12)


def test_corr_ris_diagonal_and_half_wavelength_zero():
    R = corr_matrix_ris(geom(2, 1), gamma=1.7)
    assert np.allclose(np.diag(R), 1.7)
    assert abs(R[0, 1]) < 1e-15


def test_corr_ris_small_spacing_psd():
    R = corr_matrix_ris(geom(2, 2, d_r=0.25))
    assert np.allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() >= -1e-10


def test_corr_bs():
    assert np.allclose(corr_matrix_bs(3, 0.0), np.eye(3))
    assert np.allclose(corr_matrix_bs(2, 0.5), [[1, 0.5], [0.5, 1]])
    np.linalg.cholesky(corr_matrix_bs(5, 0.9))
    with pytest.raises(ValueError):
        corr_matrix_bs(2, 1.0)


def test_psd_sqrt_squares_back(rng):
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    R = A @ A.conj().T
    S = psd_sqrt(R)
    assert np.allclose(S @ S, R)
    with pytest.raises(np.linalg.LinAlgError):
        psd_sqrt(-np.eye(2))


def test_link_amplitudes():
    lk = LinkParams(4.0, 2.0)
    assert np.isclose(lk.los_amp ** 2 + lk.nlos_amp ** 2, 2.0)
    assert np.isclose(lk.los_amp ** 2 / lk.nlos_amp ** 2, 4.0)
    with pytest.raises(ValueError):
        LinkParams(-1.0, 1.0)


def test_large_k_gives_los(rng):
    model = small_model(k=1e12)
    real = sample_channels(model, rng)
    assert np.allclose(real.h, model.mean_h, rtol=1e-5, atol=0)
    assert np.allclose(real.f, model.mean_f, rtol=1e-5, atol=0)


def test_zero_gain_gives_zero_channels(rng):
    real = sample_channels(small_model(beta=(0.0, 0.0, 0.0)), rng)
    assert not np.any(real.h) and not np.any(real.f) and not np.any(real.G)


@pytest.mark.parametrize("nlos", ["gaussian", "paths"])
def test_rayleigh_f_covariance(rng, nlos):
    model = small_model(k=0.0, beta=(1.0, 2.0, 1.0), d_r=0.2, nlos=nlos)
    _, f, _ = model.sample_batch(rng, 100_000)
    S = f.T @ f.conj() / f.shape[0]
    target = 2.0 * model.R_r
    # plane waves from uniform directions reproduce the sinc kernel
    assert np.linalg.norm(S - target) / np.linalg.norm(target) < 0.03


def test_cascade_scalar_case():
    real = ChannelRealization(np.array([2.0 + 1j]), np.array([3.0]), np.array([[1j]]))
    assert np.allclose(cascade(real), [2 + 1j, 3j])


def test_cascade_equivalent_channel_identity(rng):
    N, M = 2, 3
    h = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    f = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    G = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    v = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
    real = ChannelRealization(h, f, G)
    hr = cascade(real)
    assert hr.size == N * (M + 1)
    lhs = np.kron(np.concatenate([[1], v]), np.eye(N)) @ hr
    assert np.allclose(lhs, real.equivalent(v))


def test_estimate_R_h_trace_oracle(rng):
    # pure NLoS, random G: E||h_r||^2 = N b_ba + M N b_br b_ar (unit-diagonal R_a, R_r)
    model = small_model(n=2, m_y=2, m_z=1, k=0.0, beta=(0.5, 2.0, 3.0))
    corr = estimate_R_h(model, 100_000, rng)
    expected = 2 * 3.0 + 2 * 2 * 2.0 * 0.5
    assert abs(np.trace(corr.R_h).real / expected - 1) < 0.02
    assert np.allclose(corr.R_h, corr.R_h.conj().T)
    assert corr.p_h.min() >= 0 and np.all(np.diff(corr.p_h) <= 0)


def test_estimate_R_h_fixed_G_closed_form(rng):
    model = small_model(n=2, m_y=2, m_z=1, k=3.0, beta=(1.0, 1.0, 1.0))
    G = model.sample_G(rng)
    corr = estimate_R_h(model, 200_000, rng, G=G)
    # closed form conditional on G: blockdiag(E hh^H, E[(G*f)(G*f)^H])
    lh, lf = model.links.ue_bs, model.links.ue_ris
    Rh = np.outer(model.mean_h, model.mean_h.conj()) + lh.nlos_amp ** 2 * model.R_a
    Rf = np.outer(model.mean_f, model.mean_f.conj()) + lf.nlos_amp ** 2 * model.R_r
    cols = G.reshape(-1)  # entry (m, n) multiplies f_m
    rows = np.repeat(np.arange(2), 2)
    Rc = Rf[rows][:, rows] * np.outer(cols, cols.conj())
    ref = np.zeros((6, 6), dtype=complex)
    ref[:2, :2] = Rh
    ref[2:, 2:] = Rc
    ref[:2, 2:] = np.outer(model.mean_h, (model.mean_f[rows] * cols).conj())
    ref[2:, :2] = ref[:2, 2:].conj().T
    assert np.linalg.norm(corr.R_h - ref) / np.linalg.norm(ref) < 0.02


def test_estimate_R_h_rejects_few_trials(rng):
    with pytest.raises(ValueError):
        estimate_R_h(small_model(), 999, rng)


def test_eig_descending_clamps_and_sorts():
    U, w = eig_descending(np.diag([1.0, 3.0, -1e-18]))
    assert np.allclose(w, [3, 1, 0])
    assert np.allclose(np.abs(U[:, 0]), [0, 1, 0])


def test_correlation_model_hermitizes():
    R = np.array([[2.0, 1.0 + 1e-9j], [1.0, 2.0]])
    cm = CorrelationModel(np.eye(1), np.eye(1), R)
    assert np.allclose(cm.R_h, cm.R_h.conj().T)


def test_geometry_dimensions():
    g = geom(4, 4, n=2)
    assert g.m == 16 and g.dim == 34
    assert np.allclose(g.ris_center(), [0, 0.075, 0.075])
    with pytest.raises(ValueError):
        SystemGeometry.normalized(0, 1, 1, 0.5, 0.5, 0.1, (0, 0, 0), (0, 0, 0), (0, 0, 0))


def test_seeded_sampling_is_reproducible():
    model = small_model()
    a = model.sample_cascaded(np.random.default_rng(7), 10)
    b = model.sample_cascaded(np.random.default_rng(7), 10)
    assert np.array_equal(a, b)
