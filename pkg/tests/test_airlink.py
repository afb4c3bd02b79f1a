import numpy as np
import pytest

from xlcris.airlink import (
    beamspace_steering, combined_noise, dump_tensor, load_tensor, make_pilot_block, noiseless_tensor,
    qam_alphabet, ris_projection, ris_projection_grid, superpose, synthesize,
)
from xlcris.channel import bs_ris_channel, cascade_bs_ue_vector, ris_ue_channel
from xlcris.scenario import default_config, rng_stream, sample_realization, subcarrier_frequency


def per_symbol_oracle(real, pilots, cfg, nb, m, k):
    """One received vector built hop by hop: W^T H diag(psi_m) Z F x_nb."""
    H, Z = ris_ue_channel(real, cfg, k), bs_ris_channel(real.link, cfg, k)
    return pilots.W.T @ H @ (pilots.Xi[:, m][:, None] * Z) @ pilots.F @ pilots.X[:, nb]


def test_qam_alphabet():
    a = qam_alphabet(4)
    assert len(a) == 4 and np.mean(np.abs(a) ** 2) == pytest.approx(1.0)
    assert len(qam_alphabet(16)) == 16
    with pytest.raises(ValueError):
        qam_alphabet(8)


def test_superposition_weights():
    users = np.array([[[1.0]], [[1j]]])
    x = superpose(users, (0.8, 0.2), 2.0)
    assert x[0, 0] == pytest.approx(np.sqrt(1.6) + 1j * np.sqrt(0.4))


def test_pilot_block_invariants(small_cfg):
    p = make_pilot_block(small_cfg, 4)
    np.testing.assert_allclose(np.linalg.norm(p.F, axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(p.W, axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(p.Xi), 1.0, atol=1e-12)
    assert p.X.shape == (small_cfg.n_streams, small_cfg.n_noma_symbols)
    np.testing.assert_allclose(p.upsilon, np.kron(p.F @ p.X, p.W), atol=1e-14)
    q = make_pilot_block(small_cfg, 4)
    np.testing.assert_array_equal(p.Xi, q.Xi)


def test_kronecker_vectorization_identity():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    A = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    Fx = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    lhs = W.T @ A @ Fx
    rhs = np.kron(Fx[:, None], W).T @ A.reshape(-1, order="F")
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_beamspace_steering_matches_upsilon(small_cfg):
    cfg = small_cfg
    p = make_pilot_block(cfg, 2)
    f = subcarrier_frequency(cfg, 3)
    thetas = np.array([0.4, 1.9])
    direct = p.upsilon.T @ cascade_bs_ue_vector(0.7, thetas, f, cfg)
    np.testing.assert_allclose(beamspace_steering(p, cfg, 0.7, thetas, f), direct, atol=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_tensor_matches_per_symbol_oracle(small_cfg, seed):
    cfg = small_cfg
    real, p = sample_realization(cfg, seed), make_pilot_block(cfg, seed)
    G = noiseless_tensor(real, p, cfg)
    ns = cfg.n_streams
    for nb in range(cfg.n_noma_symbols):
        for m in (0, cfg.n_slots - 1):
            for k in (1, cfg.n_pilots):
                y = per_symbol_oracle(real, p, cfg, nb, m, k)
                got = G[nb * ns:(nb + 1) * ns, m, k - 1]
                assert np.linalg.norm(got - y) <= 1e-10 * np.linalg.norm(y)


def test_noiseless_synthesis_bit_exact(small_case):
    cfg, real, pilots, rx = small_case
    assert rx.sigma2 == 0.0 and rx.snr_db == np.inf
    np.testing.assert_array_equal(rx.Y, rx.G)


def test_synthesis_hits_target_snr(small_cfg):
    cfg = small_cfg
    real, p = sample_realization(cfg, 1), make_pilot_block(cfg, 1)
    rx = synthesize(real, p, cfg, 15.0, 99)
    assert rx.snr_db == pytest.approx(15.0, abs=0.3)
    again = synthesize(real, p, cfg, 15.0, 99)
    np.testing.assert_array_equal(rx.Y, again.Y)


def test_synthesis_rejects_nan(small_case):
    cfg, real, pilots, _ = small_case
    with pytest.raises(ValueError):
        synthesize(real, pilots, cfg, float("nan"), 0)


def test_combined_noise_block_structure(small_cfg):
    """Different NOMA symbols never share noise; one block's covariance is W^T W^*."""
    cfg = small_cfg.with_(n_noma_symbols=2, n_slots=50, n_pilots=40)
    p = make_pilot_block(cfg, 0)
    nw = combined_noise(p, cfg, rng_stream(0, "noise"), 2.0)
    x = nw.reshape(2 * cfg.n_streams, -1)
    C = x @ x.conj().T / x.shape[1]
    target = 2.0 * np.kron(np.eye(2), p.W.T @ p.W.conj())
    assert np.linalg.norm(C - target) / np.linalg.norm(target) < 0.15


def test_tensor_dump_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    Y = (rng.standard_normal((4, 3, 2)) + 1j * rng.standard_normal((4, 3, 2))).astype(np.complex64)
    path = tmp_path / "y.bin"
    dump_tensor(path, Y)
    np.testing.assert_array_equal(load_tensor(path), Y)
    raw = path.read_bytes()
    assert raw[:4] == b"XLCT" and len(raw) == 4 + 4 + 3 * 8 + Y.size * 8
    (path.parent / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_tensor(path.parent / "bad.bin")


def test_projection_grid_matches_direct(small_cfg):
    cfg = small_cfg
    real, p = sample_realization(cfg, 3), make_pilot_block(cfg, 3)
    f = subcarrier_frequency(cfg, 2)
    phi, d, V = ris_projection_grid(p, cfg, real.link, f, 3, [1 / 40, 1 / 7], stride=2)
    assert np.all((phi > -np.pi / 2) & (phi < 0))
    direct = ris_projection(p, cfg, real.link, phi, d, f).T
    np.testing.assert_allclose(V, direct, atol=1e-12)
