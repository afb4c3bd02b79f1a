import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlcris.bench import (
    CSV_HEADER, ExperimentSpec, MetricRow, align_paths, nmse, parameter_mse, read_csv, run_experiment, write_csv,
)
from xlcris.channel import cascade_channel
from xlcris.cli import main
from xlcris.msnfce import EstimationResult, reconstruct_cascade
from xlcris.scenario import sample_realization

from conftest import truth_as_result

SMALL_TOML = "n_ris = 64\nn_pilots = 4\nn_slots = 16\nn_noma_symbols = 3\n"


def fake_result(theta, L):
    z = np.zeros(L)
    return EstimationResult(theta=np.asarray(theta, float), phi=z, d=z + 1, tau=z, rho=z.astype(complex))


def test_align_recovers_permutation(small_cfg):
    real = sample_realization(small_cfg, 3)
    for perm in itertools.permutations(range(3)):
        est = truth_as_result(real, list(perm))
        order = align_paths(real, est)
        aligned = est.permuted(order)
        assert all(v == 0 for v in parameter_mse(real, aligned).values())


def test_align_single_path(small_cfg):
    real = sample_realization(small_cfg.with_(n_paths=1), 0)
    assert align_paths(real, truth_as_result(real)).tolist() == [0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3), st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3))
def test_align_is_brute_force_optimal(small_cfg, truth_theta, est_theta):
    real = sample_realization(small_cfg, 0)
    real = type(real).from_paths(real.link, real.beta, np.array(truth_theta), real.phi_rm, real.tau, real.d_rm,
                                 small_cfg.f_c)
    est = fake_result(est_theta, 3)
    cost = lambda p: sum((truth_theta[i] - est_theta[p[i]]) ** 2 for i in range(3))
    best = min(cost(p) for p in itertools.permutations(range(3)))
    assert cost(align_paths(real, est)) == pytest.approx(best, abs=1e-15)


def test_align_near_tie(small_cfg):
    truth = np.array([1.0, 1.0 + 2e-4, 2.0])
    est = np.array([1.0 + 1.5e-4, 2.0, 1.0 + 0.4e-4])
    real = sample_realization(small_cfg, 0)
    real = type(real).from_paths(real.link, real.beta, truth, real.phi_rm, real.tau, real.d_rm, small_cfg.f_c)
    order = align_paths(real, fake_result(est, 3))
    assert order.tolist() == [2, 0, 1]


def test_mse_values(small_cfg):
    real = sample_realization(small_cfg, 1)
    est = truth_as_result(real)
    shifted = EstimationResult(theta=est.theta + np.array([0.1, 0.0, -0.2]), phi=est.phi, d=est.d, tau=est.tau,
                               rho=est.rho + 1j * 0.3)
    mse = parameter_mse(real, shifted)
    assert mse["theta"] == pytest.approx((0.01 + 0.04) / 3)
    assert mse["rho"] == pytest.approx(0.09)
    assert mse["phi"] == mse["tau"] == mse["d"] == 0


def test_nmse_matches_dense_oracle(small_cfg):
    cfg = small_cfg.with_(n_subcarriers=16, f_s=5e7)
    real = sample_realization(cfg, 4)
    est = truth_as_result(real)
    est = EstimationResult(theta=est.theta + 1e-3, phi=est.phi - 2e-3, d=est.d * 1.01, tau=est.tau + 1e-10,
                           rho=est.rho * 0.98)
    dense = np.mean([np.linalg.norm(cascade_channel(real, cfg, k) - reconstruct_cascade(est, cfg, real.link, k)) ** 2
                     / np.linalg.norm(cascade_channel(real, cfg, k)) ** 2 for k in range(1, 17)])
    assert nmse(real, est, cfg) == pytest.approx(dense, rel=1e-9)
    # Gram-form differences cancel only down to roughly machine epsilon
    assert nmse(real, truth_as_result(real, [1, 2, 0]), cfg) < 1e-14


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(sweep="bandwidth", values=(1,))
    with pytest.raises(ValueError):
        ExperimentSpec(sweep="snr", values=())
    with pytest.raises(ValueError):
        ExperimentSpec(sweep="snr", values=(1,), n_trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec(sweep="snr", values=(1,), methods=("omp",))
    assert ExperimentSpec(sweep="pilots", values=(4,)).sweep == "n_pilots"


def test_noiseless_single_trial(small_cfg):
    rows = run_experiment(ExperimentSpec("snr", (math.inf,), n_trials=1, methods=("msnfce", "crb")), small_cfg)
    (row,) = rows
    assert row.method == "msnfce" and row.trials_ok == 1
    for p in ("theta", "phi", "tau", "d", "rho"):
        assert row.mse(p) < 1e-8
        assert row.crb(p) == 0
    assert row.nmse < 1e-10


def test_crb_only_rows(small_cfg):
    rows = run_experiment(ExperimentSpec("snr", (0.0, 20.0), n_trials=2, methods=("crb",)), small_cfg)
    assert [r.method for r in rows] == ["crb", "crb"]
    assert rows[0].crb("theta") > rows[1].crb("theta") > 0
    assert math.isnan(rows[0].mse("theta"))


def test_csv_round_trip(tmp_path):
    rows = [MetricRow(sweep=10.0, method="msnfce", mse_theta=1.25e-5, nmse=0.5, crb_theta=3e-7, trials_ok=7),
            MetricRow(sweep=4, method="crb", crb_rho=1e-3, trials_ok=2)]
    path = tmp_path / "r.csv"
    text = write_csv(rows, path)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = read_csv(path)
    assert write_csv(back) == text
    assert back[0].mse_theta == 1.25e-5 and math.isnan(back[0].mse_phi) and back[1].trials_ok == 2
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "bad.csv")


def test_deterministic_and_parallel_consistent(small_cfg, tmp_path):
    spec = dict(sweep="snr", values=(5.0, 15.0), n_trials=3, master_seed=9, methods=("msnfce", "somp", "crb"))
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    run_experiment(ExperimentSpec(**spec, out=str(a)), small_cfg)
    run_experiment(ExperimentSpec(**spec, out=str(b)), small_cfg)
    run_experiment(ExperimentSpec(**spec, out=str(c)), small_cfg, jobs=2)
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_unwritable_output_fails_before_running(small_cfg, tmp_path):
    spec = ExperimentSpec("snr", (10.0,), n_trials=10 ** 6, out=str(tmp_path / "missing" / "r.csv"))
    with pytest.raises(OSError):
        run_experiment(spec, small_cfg)


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "small.toml"
    cfg.write_text(SMALL_TOML)
    out = tmp_path / "out.csv"
    dump = tmp_path / "y.bin"
    rc = main(["sweep-symbols", "--config", str(cfg), "--values", "2,3", "--trials", "1", "--methods", "msnfce",
               "--out", str(out), "--dump-tensor", str(dump)])
    assert rc == 0
    rows = read_csv(out)
    assert [r.sweep for r in rows] == [2.0, 3.0] and dump.exists()

    assert main(["run", "--config", str(cfg), "--values", "10", "--trials", "1", "--methods", "crb"]) == 0
    assert capsys.readouterr().out.startswith("sweep,method,")

    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2
    (tmp_path / "bad.toml").write_text("n_antennas = 3\n")
    assert main(["run", "--config", str(tmp_path / "bad.toml")]) == 2
    assert main(["run", "--config", str(cfg), "--trials", "0"]) == 2
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "no" / "dir.csv")]) == 3
    with pytest.raises(SystemExit):
        main(["run", "--methods", "magic"])
