"""Acceptance suite.  Each test prints one PASS/FAIL line, then asserts.

The Monte Carlo criteria run at N_R = 256 so that the whole module stays
within desk time; everything else uses the default system.
"""

import numpy as np
import pytest

from xlcris.airlink import combined_noise, make_pilot_block, noiseless_slice, noiseless_tensor, synthesize
from xlcris.bench import ExperimentSpec, align_paths, nmse, parameter_mse, run_experiment
from xlcris.channel import bs_ris_channel, ris_ue_channel
from xlcris.crb import PARAMS, fim, signal_gradient, signal_jacobian
from xlcris.msnfce import estimate
from xlcris.scenario import default_config, rng_stream, sample_realization

pytestmark = pytest.mark.slow

MC_CFG = default_config().with_(n_ris=256)
MC_TRIALS = 200
MC_SEED = 1
SNR_POINTS = (0.0, 10.0, 20.0, 30.0)


@pytest.fixture
def report(capsys):
    def emit(number, text, ok):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
        return ok
    return emit


@pytest.fixture(scope="module")
def snr_rows():
    spec = ExperimentSpec("snr", SNR_POINTS, n_trials=MC_TRIALS, master_seed=MC_SEED,
                          methods=("msnfce", "somp", "crb"))
    rows = run_experiment(spec, MC_CFG)
    return {(r.method, r.sweep): r for r in rows}


def test_criterion_1_model_cross_oracle(report):
    cfg = default_config()
    worst, ranks_ok = 0.0, True
    for seed in range(50):
        real, p = sample_realization(cfg, seed), make_pilot_block(cfg, seed)
        G = noiseless_tensor(real, p, cfg)
        for k in range(1, cfg.n_pilots + 1):
            H, Z = ris_ue_channel(real, cfg, k), bs_ris_channel(real.link, cfg, k)
            ZFX = Z @ p.F @ p.X                                    # (N_R, N_b)
            # one received vector per (symbol, slot): W^T H diag(psi_m) Z F x
            oracle = np.stack([p.W.T @ H @ (p.Xi[:, m][:, None] * ZFX) for m in range(cfg.n_slots)], axis=2)
            oracle = oracle.transpose(1, 0, 2).reshape(-1, cfg.n_slots)    # rows ordered symbol-major
            err = np.max(np.abs(G[:, :, k - 1] - oracle)) / np.max(np.abs(oracle))
            worst = max(worst, err)
            ranks_ok &= np.linalg.matrix_rank(G[:, :, k - 1]) == cfg.n_paths
    ok = report(1, f"50 realizations, worst entrywise relative error {worst:.2e} (<1e-10), "
                   f"every slice rank L: {ranks_ok}", worst < 1e-10 and ranks_ok)
    assert ok


def test_criterion_2_noiseless_exactness(report):
    cfg = default_config()
    limits = {"theta": 1e-6, "phi": 1e-6, "d": 1e-4, "tau": 1e-22, "rho": 1e-8}
    worst = {p: 0.0 for p in limits}
    worst_nmse = 0.0
    for seed in range(20):
        real, p = sample_realization(cfg, seed), make_pilot_block(cfg, seed)
        rx = synthesize(real, p, cfg, np.inf, seed)
        res = estimate(rx, p, cfg, real.link)
        res = res.permuted(align_paths(real, res))
        for k, v in parameter_mse(real, res).items():
            worst[k] = max(worst[k], v)
        worst_nmse = max(worst_nmse, nmse(real, res, cfg))
    ok = all(worst[k] < limits[k] for k in limits) and worst_nmse < 1e-10
    detail = ", ".join(f"{k} {worst[k]:.1e}" for k in limits)
    assert report(2, f"20 seeds, worst MSE {detail}, NMSE {worst_nmse:.1e}", ok)


def test_criterion_3_gradients_and_fim(report):
    cfg = default_config()
    steps = {"theta": 1e-6, "phi": 1e-6, "tau": 1e-15, "d": 1e-6}
    fields = {"theta": "theta_rm", "phi": "phi_rm", "tau": "tau", "d": "d_rm"}
    worst, fim_ok = 0.0, True

    def g_vector(real, p, **override):
        q = dict(theta=real.theta_rm, phi=real.phi_rm, d=real.d_rm, tau=real.tau, rho=real.rho)
        q.update(override)
        slices = [noiseless_slice(real.link, q["theta"], q["phi"], q["d"], q["tau"], q["rho"], p, cfg, k)
                  for k in range(1, cfg.n_pilots + 1)]
        return np.stack(slices, axis=2).reshape(-1, order="F")

    for seed in range(50):
        real, p = sample_realization(cfg, seed), make_pilot_block(cfg, seed)
        for param, field in fields.items():
            base = np.array(getattr(real, field), dtype=float)
            for l in range(cfg.n_paths):
                h = steps[param] * (base[l] if param == "d" else 1.0)
                up, down = base.copy(), base.copy()
                up[l] += h
                down[l] -= h
                fd = (g_vector(real, p, **{param: up}) - g_vector(real, p, **{param: down})) / (2 * h)
                an = signal_gradient(real, p, cfg, param, l)
                worst = max(worst, np.linalg.norm(an - fd) / np.linalg.norm(an))
        D = signal_jacobian(real, p, cfg)
        g = g_vector(real, p)
        L = cfg.n_paths
        worst = max(worst, np.linalg.norm(D[:, 4 * L:] @ real.rho - g) / np.linalg.norm(g))
        F = fim(real, p, cfg, 1e-3).fim
        fim_ok &= bool(np.abs(F - F.conj().T).max() <= 1e-12 * np.abs(F).max())
        fim_ok &= bool(np.linalg.eigvalsh(F).min() >= -1e-9 * np.linalg.norm(F))
    ok = worst < 1e-5 and fim_ok
    assert report(3, f"50 realizations, worst relative derivative error {worst:.2e} (<1e-5), "
                     f"FIM Hermitian PSD every time: {fim_ok}", ok)


def test_criterion_4_bound_ordering(report, snr_rows):
    lines, ok = [], True
    for snr in SNR_POINTS:
        row = snr_rows[("msnfce", snr)]
        for p in PARAMS:
            good = row.mse(p) >= 0.9 * row.crb(p)
            ok &= good
            if not good:
                lines.append(f"{p}@{snr:g}dB mse {row.mse(p):.2e} < 0.9 crb {row.crb(p):.2e}")
    curve = [snr_rows[("msnfce", s)].nmse for s in SNR_POINTS]
    decreasing = all(b < a for a, b in zip(curve, curve[1:]))
    ok &= decreasing
    detail = "NMSE " + " > ".join(f"{v:.2e}" for v in curve) + (f"; {'; '.join(lines)}" if lines else "")
    assert report(4, f"MSE >= 0.9 CRB everywhere and NMSE strictly decreasing: {detail}", ok)


def test_criterion_5_baseline_saturation(report, snr_rows):
    somp = snr_rows[("somp", 20.0)].mse_theta / snr_rows[("somp", 30.0)].mse_theta
    ours = snr_rows[("msnfce", 20.0)].mse_theta / snr_rows[("msnfce", 30.0)].mse_theta
    ok = 1 / 3 <= somp <= 3 and ours >= 10
    assert report(5, f"theta MSE ratio 20->30 dB: baseline {somp:.2f} (within 3x), "
                     f"proposed {ours:.1f} (>= 10x)", ok)


def _plateau(rows):
    """(decreased, later-half average / minimum) per parameter."""
    out = {}
    half = len(rows) // 2
    for p in PARAMS:
        curve = np.array([r.mse(p) for r in rows])
        late = curve[half:].mean()
        out[p] = (curve[0] > late, late / curve.min())
    return out


@pytest.mark.parametrize("sweep,values", [("pilots", tuple(range(4, 41, 4))), ("symbols", tuple(range(1, 14)))])
def test_criterion_6_pilot_and_symbol_sweeps(report, sweep, values):
    spec = ExperimentSpec(sweep, values, n_trials=MC_TRIALS, master_seed=MC_SEED, methods=("msnfce",), snr_db=20.0)
    rows = run_experiment(spec, MC_CFG)
    shape = _plateau(rows)
    ok = all(dec and ratio <= 1.2 for dec, ratio in shape.values())
    detail = ", ".join(f"{p} {'down' if dec else 'not down'}/{ratio:.2f}" for p, (dec, ratio) in shape.items())
    assert report(6, f"{sweep} sweep {values[0]}..{values[-1]}, later-half average / minimum: {detail}", ok)


def test_criterion_7_determinism(report, tmp_path):
    spec = dict(sweep="snr", values=(10.0, 20.0), n_trials=4, master_seed=MC_SEED, methods=("msnfce", "somp", "crb"))
    texts = []
    for name in ("a.csv", "b.csv"):
        run_experiment(ExperimentSpec(**spec, out=str(tmp_path / name)), MC_CFG)
        texts.append((tmp_path / name).read_bytes())
    ok = texts[0] == texts[1] and len(texts[0]) > 0
    assert report(7, f"two runs with master seed {MC_SEED} give byte-identical CSV ({len(texts[0])} bytes)", ok)


def test_criterion_8_noise_covariance(report):
    cfg = default_config().with_(n_noma_symbols=2, n_slots=500, n_pilots=20)
    p = make_pilot_block(cfg, 0)
    sigma2 = 0.7
    draws = combined_noise(p, cfg, rng_stream(8, "noise"), sigma2)
    x = draws.reshape(draws.shape[0], -1)
    assert x.shape[1] == 10_000
    emp = x @ x.conj().T / x.shape[1]
    target = sigma2 * np.kron(np.eye(cfg.n_noma_symbols), p.W.T @ p.W.conj())
    err = np.linalg.norm(emp - target) / np.linalg.norm(target)
    assert report(8, f"10^4 draws, relative Frobenius error {err:.3f} (<0.05)", err < 0.05)
