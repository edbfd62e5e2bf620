import numpy as np
import pytest

from ris_keygen.channel import ChannelRealization, cascade, sample_channels
from ris_keygen.probing import (ProbeDesign, downlink_probe, hadamard_phase_matrix, next_pow2,
                                probe, probe_batch, uplink_probe)

from conftest import small_model


def rand_real(rng, N, M):
    c = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    return ChannelRealization(c(N), c(M), c(M, N))


def design(M=3, N=2, sa=1.0, sb=1.0, Pa=1.0, Pb=1.0, V=None, P=None):
    Phi = hadamard_phase_matrix(M, V=V)
    return ProbeDesign(Phi, np.eye(N) if P is None else P, Pa, Pb, sa, sb)


def test_next_pow2():
    assert [next_pow2(n) for n in (1, 2, 3, 17, 32)] == [1, 2, 4, 32, 32]


def test_hadamard_small_orders():
    assert np.allclose(hadamard_phase_matrix(1), [[1, 1], [1, -1]])
    H = hadamard_phase_matrix(3)
    assert np.allclose(H @ H.T, 4 * np.eye(4))
    assert np.linalg.matrix_rank(hadamard_phase_matrix(7)) == 8


def test_hadamard_padded_packets():
    H = hadamard_phase_matrix(16, V=32)
    assert H.shape == (17, 32)
    assert np.allclose(H[0], 1) and np.allclose(H @ H.T, 32 * np.eye(17))
    with pytest.raises(ValueError):
        hadamard_phase_matrix(16)
    with pytest.raises(ValueError):
        hadamard_phase_matrix(3, K_q=3)


def test_design_validation():
    with pytest.raises(ValueError):
        ProbeDesign(-hadamard_phase_matrix(3), np.eye(2), 1, 1, 1, 1)
    with pytest.raises(ValueError):
        ProbeDesign(hadamard_phase_matrix(3), 2 * np.eye(2), 1, 1, 1, 1)
    with pytest.raises(ValueError):
        ProbeDesign(np.ones((2, 2)), np.eye(2), 1, 1, 1, 1)


def test_noiseless_uplink_is_kronecker_map(rng):
    real = rand_real(rng, 2, 3)
    d = design(sa=0.0)
    z = uplink_probe(real, d, rng)
    assert np.allclose(z, np.kron(d.Phi_bar.T, d.P.T) @ cascade(real))


def test_scalar_hand_expansion(rng):
    real = ChannelRealization(np.array([1.0 + 2j]), np.array([0.5j]), np.array([[2.0]]))
    d = design(M=1, N=1, sa=0.0, sb=0.0)
    ga = real.G[0, 0] * real.f[0]
    assert np.allclose(uplink_probe(real, d, rng), [real.h[0] + ga, real.h[0] - ga])


def test_uplink_noise_covariance(rng):
    real = ChannelRealization(np.zeros(2), np.zeros(3), np.zeros((3, 2)))
    d = design(sa=2.0, Pb=4.0)
    Z = np.array([uplink_probe(real, d, rng) for _ in range(10_000)])
    S = Z.T @ Z.conj() / Z.shape[0]
    target = 0.5 * np.eye(8)
    assert np.linalg.norm(S - target) / np.linalg.norm(target) < 0.05


def test_noiseless_reciprocity(rng):
    real = rand_real(rng, 2, 3)
    d = design(sa=0.0, sb=0.0)
    assert np.allclose(uplink_probe(real, d, rng), downlink_probe(real, d, rng))
    assert downlink_probe(real, d, rng).size == 8


def test_parties_identically_distributed(rng):
    real = rand_real(rng, 2, 3)
    d = design(sa=1.0, sb=1.0, Pa=1.0, Pb=2.0)
    pairs = [probe(real, d, rng) for _ in range(10_000)]
    za = np.array([p.z_a for p in pairs])
    zb = np.array([p.z_b for p in pairs])
    assert np.isclose(np.var(za, axis=0).mean(), np.var(zb, axis=0).mean(), rtol=0.05)
    assert np.allclose(za.mean(0), zb.mean(0), atol=0.05)


def test_full_pilot_matches_fast_path():
    rng = np.random.default_rng(0)
    for _ in range(50):
        N = int(rng.integers(1, 4))
        M = int(rng.choice([1, 3, 7]))
        P, _ = np.linalg.qr(rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)))
        d = ProbeDesign(hadamard_phase_matrix(M), P, rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                        rng.uniform(0.1, 1), rng.uniform(0.1, 1), Q=int(rng.integers(1, 4)))
        real = rand_real(rng, N, M)
        seed = int(rng.integers(2 ** 32))
        for fn in (uplink_probe, downlink_probe):
            fast = fn(real, d, np.random.default_rng(seed))
            full = fn(real, d, np.random.default_rng(seed), full_pilot=True)
            assert np.max(np.abs(fast - full)) <= 1e-10


def test_probe_batch_matches_per_round_signal(rng):
    model = small_model(n=2, m_y=2, m_z=1)
    d = design(M=2, N=2, sa=0.0, sb=0.0, V=4)
    G = model.sample_G(rng)
    Za, Zb = probe_batch(model, d.W, 0.0, 0.0, 5, np.random.default_rng(1), G=G)
    hr = model.sample_cascaded(np.random.default_rng(1), 5, G)
    assert np.allclose(Za, hr @ d.W) and np.allclose(Za, Zb)


def test_probe_uses_channel_from_model(rng):
    model = small_model()
    real = sample_channels(model, rng)
    d = design(M=2, N=2, V=4)
    assert probe(real, d, rng).z_a.shape == (8,)
