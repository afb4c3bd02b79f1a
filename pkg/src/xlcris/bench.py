"""Monte Carlo experiments: parameter MSE, channel NMSE and bound, per sweep point.

Seeding uses common random numbers.  Trial ``t`` draws its channel, pilots
and noise from ``derive_seed(master_seed, t)``, whatever the sweep value, so
neighbouring sweep points differ only in the swept quantity.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .airlink import dump_tensor, make_pilot_block, synthesize
from .baseline import somp_estimate
from .channel import cascade_factors, factored_frobenius2
from .crb import PARAMS, fim
from .msnfce import EstimationResult, estimate
from .scenario import ChannelRealization, SystemConfig, derive_seed, sample_realization

log = logging.getLogger(__name__)

CSV_HEADER = ("sweep", "method", "mse_theta", "mse_phi", "mse_tau", "mse_d", "mse_rho", "nmse",
              "crb_theta", "crb_phi", "crb_tau", "crb_d", "crb_rho", "trials_ok")

SWEEPS = {"snr": "snr_db", "snr_db": "snr_db",
          "pilots": "n_pilots", "n_pilots": "n_pilots",
          "symbols": "n_noma_symbols", "n_noma_symbols": "n_noma_symbols"}
ESTIMATORS = {"msnfce": estimate, "somp": somp_estimate}
METHODS = ("msnfce", "somp", "crb")


def align_paths(truth: ChannelRealization, est: EstimationResult) -> np.ndarray:
    """Order of estimated paths that minimizes the total squared theta error.

    ``est.permuted(order)`` lines up with ``truth`` path by path.
    """
    L = truth.n_paths
    if est.n_paths != L:
        raise ValueError("estimate and truth have different path counts")
    cost = (truth.theta_rm[:, None] - est.theta[None, :]) ** 2
    if L <= 7:
        best = min(itertools.permutations(range(L)), key=lambda p: (cost[range(L), p].sum(), p))
        return np.array(best)
    _, cols = linear_sum_assignment(cost)
    return cols


def parameter_mse(truth: ChannelRealization, est: EstimationResult) -> dict:
    """``(1/L) ||eta - eta_hat||^2`` for each parameter; ``est`` must already be aligned."""
    pairs = {"theta": (truth.theta_rm, est.theta), "phi": (truth.phi_rm, est.phi),
             "tau": (truth.tau, est.tau), "d": (truth.d_rm, est.d), "rho": (truth.rho, est.rho)}
    return {p: float(np.mean(np.abs(a - b) ** 2)) for p, (a, b) in pairs.items()}


def nmse(truth: ChannelRealization, est: EstimationResult, cfg: SystemConfig) -> float:
    """Cascade-channel NMSE averaged over all ``N`` subcarriers."""
    link = truth.link
    total = 0.0
    for k in range(1, cfg.n_subcarriers + 1):
        S, c, R = cascade_factors(link, truth.theta_rm, truth.phi_rm, truth.d_rm, truth.tau, truth.rho, cfg, k)
        Se, ce, Re = cascade_factors(link, est.theta, est.phi, est.d, est.tau, est.rho, cfg, k)
        err = factored_frobenius2(np.hstack([S, Se]), np.concatenate([c, -ce]), np.hstack([R, Re]))
        total += max(err, 0.0) / factored_frobenius2(S, c, R)
    return total / cfg.n_subcarriers


@dataclass(frozen=True)
class ExperimentSpec:
    """What to sweep, how often and with which methods."""

    sweep: str
    values: tuple
    n_trials: int = 200
    master_seed: int = 0
    methods: tuple = ("msnfce", "somp", "crb")
    snr_db: float = 20.0
    out: str | None = None
    dump_tensor: str | None = None

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep {self.sweep!r}; choose from {sorted(set(SWEEPS))}")
        object.__setattr__(self, "sweep", SWEEPS[self.sweep])
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")

    def check_writable(self) -> None:
        """Fail early, before any trial runs, if an output file cannot be created."""
        for target in (self.out, self.dump_tensor):
            if not target:
                continue
            path = Path(target)
            parent = path.parent if str(path.parent) else Path(".")
            if path.is_dir() or not parent.is_dir() or not os.access(parent, os.W_OK):
                raise OSError(f"cannot write {target}")


@dataclass
class MetricRow:
    """Trial-averaged metrics of one method at one sweep value (NaN = not applicable)."""

    sweep: float
    method: str
    mse_theta: float = math.nan
    mse_phi: float = math.nan
    mse_tau: float = math.nan
    mse_d: float = math.nan
    mse_rho: float = math.nan
    nmse: float = math.nan
    crb_theta: float = math.nan
    crb_phi: float = math.nan
    crb_tau: float = math.nan
    crb_d: float = math.nan
    crb_rho: float = math.nan
    trials_ok: int = 0

    def mse(self, param: str) -> float:
        return getattr(self, f"mse_{param}")

    def crb(self, param: str) -> float:
        return getattr(self, f"crb_{param}")

    def csv_fields(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "method":
                out.append(v)
            elif f.name == "trials_ok":
                out.append(str(int(v)))
            else:
                out.append(_fmt(v))
        return out


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(rows, path=None) -> str:
    """Serialize rows with the fixed header; also write them to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_csv(path) -> list[MetricRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError("unexpected CSV header")
        rows = []
        for rec in reader:
            kw = {k: (float(v) if v != "" else math.nan) for k, v in rec.items() if k not in ("method", "trials_ok")}
            rows.append(MetricRow(method=rec["method"], trials_ok=int(rec["trials_ok"]), **kw))
        return rows


@dataclass
class _Accumulator:
    mse: dict = field(default_factory=lambda: {p: [] for p in PARAMS})
    nmse: list = field(default_factory=list)
    crb: dict = field(default_factory=lambda: {p: [] for p in PARAMS})
    ok: int = 0


def _point_config(cfg: SystemConfig, spec: ExperimentSpec, value) -> tuple[SystemConfig, float]:
    if spec.sweep == "snr_db":
        return cfg, float(value)
    return cfg.with_(**{spec.sweep: int(value)}), spec.snr_db


def run_trial(cfg: SystemConfig, spec: ExperimentSpec, trial: int) -> list[dict]:
    """All sweep points of one trial; one dict of per-method outcomes per point."""
    seed = derive_seed(spec.master_seed, trial)
    out = []
    for j, value in enumerate(spec.values):
        pcfg, snr = _point_config(cfg, spec, value)
        real = sample_realization(pcfg, seed)
        pilots = make_pilot_block(pcfg, seed)
        rx = synthesize(real, pilots, pcfg, snr, seed)
        if spec.dump_tensor and trial == 0 and j == 0:
            dump_tensor(spec.dump_tensor, rx.Y)
        point = {}
        for method in spec.methods:
            if method == "crb":
                if rx.sigma2 > 0:
                    report = fim(real, pilots, pcfg, rx.sigma2)
                    point["crb"] = {p: report.mean(p) for p in PARAMS}
                else:
                    point["crb"] = {p: 0.0 for p in PARAMS}
                continue
            try:
                res = ESTIMATORS[method](rx, pilots, pcfg, real.link)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                log.info("trial %d, %s=%s, %s failed: %s", trial, spec.sweep, value, method, exc)
                point[method] = None
                continue
            if not res.ok:
                log.info("trial %d, %s=%s, %s flagged: %s", trial, spec.sweep, value, method, res.flags)
                point[method] = None
                continue
            res = res.permuted(align_paths(real, res))
            point[method] = {"mse": parameter_mse(real, res), "nmse": nmse(real, res, pcfg)}
        out.append(point)
    return out


def _trial_job(args):
    return run_trial(*args)


def run_experiment(spec: ExperimentSpec, cfg: SystemConfig, jobs: int = 1) -> list[MetricRow]:
    """Run every trial, aggregate per sweep value and method, write the CSV if requested."""
    spec.check_writable()
    jobs_args = [(cfg, spec, t) for t in range(spec.n_trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, jobs_args, chunksize=max(1, spec.n_trials // (4 * jobs))))
    else:
        results = [run_trial(*a) for a in jobs_args]

    rows = []
    estimators = [m for m in spec.methods if m != "crb"]
    with_crb = "crb" in spec.methods
    for j, value in enumerate(spec.values):
        crb_vals = [r[j]["crb"] for r in results] if with_crb else []
        crb_mean = {p: float(np.mean([c[p] for c in crb_vals])) for p in PARAMS} if crb_vals else {}
        for method in estimators:
            done = [r[j][method] for r in results if r[j][method] is not None]
            row = MetricRow(sweep=float(value), method=method, trials_ok=len(done))
            if done:
                for p in PARAMS:
                    setattr(row, f"mse_{p}", float(np.mean([d["mse"][p] for d in done])))
                row.nmse = float(np.mean([d["nmse"] for d in done]))
            for p, v in crb_mean.items():
                setattr(row, f"crb_{p}", v)
            rows.append(row)
        if with_crb and not estimators:
            row = MetricRow(sweep=float(value), method="crb", trials_ok=len(crb_vals))
            for p, v in crb_mean.items():
                setattr(row, f"crb_{p}", v)
            rows.append(row)
    if spec.out:
        write_csv(rows, spec.out)
    return rows
