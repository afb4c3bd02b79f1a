"""On-grid simultaneous OMP baseline.

Angles and distances are restricted to a fixed dictionary, so the estimate
can never be better than the grid spacing.  This grid-mismatch floor is
what makes its error saturate at high SNR.  Delays and gains reuse stages 3
and 4 of the multi-stage estimator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .airlink import PilotBlock, beamspace_steering, ris_projection_grid
from .msnfce import EstimationResult, MsnfceOptions, _freqs, _tensor, stage3_tau, stage4_rho, unmix_ris_factor
from .scenario import BsRisLink, SystemConfig

log = logging.getLogger(__name__)


@dataclass(eq=False)
class GridDictionary:
    """Candidate (theta, phi, d) grid with per-subcarrier atoms built on demand.

    The angle/distance part is a lattice aligned with the RIS element
    azimuths (``n_offsets`` sub-steps, every ``stride``-th point) crossed with
    ``inv_d``, evenly spaced in inverse distance.
    """

    cfg: SystemConfig
    pilots: PilotBlock
    link: BsRisLink
    theta_grid: np.ndarray
    inv_d: np.ndarray
    n_offsets: int = 1
    stride: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def ris_atoms(self, k: int):
        """``(phi, d, V)`` for 0-based pilot index ``k``; ``V`` rows are ``Xi^T a_r``."""
        if k not in self._cache:
            f_k = self.cfg.f_c + self.cfg.f_s / self.cfg.n_subcarriers * k
            self._cache[k] = ris_projection_grid(self.pilots, self.cfg, self.link, f_k,
                                                 self.n_offsets, self.inv_d, stride=self.stride)
        return self._cache[k]

    def ue_atoms(self, k: int) -> np.ndarray:
        f_k = self.cfg.f_c + self.cfg.f_s / self.cfg.n_subcarriers * k
        return beamspace_steering(self.pilots, self.cfg, self.link.phi_br, self.theta_grid, f_k)

    @property
    def phi_grid(self) -> np.ndarray:
        return np.unique(self.ris_atoms(0)[0])

    @property
    def d_grid(self) -> np.ndarray:
        return np.sort(1.0 / self.inv_d)


def default_dictionary(cfg: SystemConfig, pilots: PilotBlock, link: BsRisLink,
                       n_theta: int = 512, n_phi: int = 128, n_d: int = 32) -> GridDictionary:
    """Grid of ``n_theta`` angle midpoints on (0, pi) and roughly ``n_phi x n_d`` RIS points."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    per_offset = max(cfg.n_ris // 4, 1)        # lattice points per offset in a quarter circle
    if per_offset >= n_phi:
        n_offsets, stride = 1, per_offset // n_phi
    else:
        n_offsets, stride = -(-n_phi // per_offset), 1
    inv_d = np.linspace(1.0 / cfg.d_rm_max, 1.0 / cfg.d_rm_min, n_d)
    return GridDictionary(cfg, pilots, link, theta, inv_d, n_offsets, stride)


def somp_estimate(Y, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
                  dictionary: GridDictionary | None = None,
                  options: MsnfceOptions | None = None) -> EstimationResult:
    """Greedy joint (theta, phi, d) selection, then delays and gains."""
    Y = _tensor(Y)
    n_rows, M, K = Y.shape
    L = cfg.n_paths
    D = dictionary or default_dictionary(cfg, pilots, link)

    U = [D.ue_atoms(k) for k in range(K)]
    U_n = [u / np.linalg.norm(u, axis=0) for u in U]
    ris = [D.ris_atoms(k) for k in range(K)]
    V_n = [V / np.linalg.norm(V, axis=1, keepdims=True) for _, _, V in ris]
    n_ris_atoms = V_n[0].shape[0]
    if D.theta_grid.size < L:
        raise ValueError("angle grid has fewer points than paths")

    residual = Y.copy()
    chosen: list[tuple[int, int]] = []
    residual_norms = [float(np.linalg.norm(residual))]
    for _ in range(L):
        score = np.zeros((D.theta_grid.size, n_ris_atoms))
        for k in range(K):
            score += np.abs(U_n[k].conj().T @ residual[:, :, k] @ V_n[k].conj().T)
        # paths are angularly separated, so an angle is used at most once
        for i, _ in chosen:
            score[i, :] = -np.inf
        i, g = np.unravel_index(np.argmax(score), score.shape)
        if not np.isfinite(score[i, g]):
            raise ValueError("grid too coarse to select a distinct angle for every path")
        chosen.append((int(i), int(g)))

        for k in range(K):
            atoms = np.stack([np.outer(U[k][:, a], ris[k][2][b]).ravel() for a, b in chosen], axis=1)
            coef, *_ = np.linalg.lstsq(atoms, Y[:, :, k].ravel(), rcond=None)
            residual[:, :, k] = Y[:, :, k] - (atoms @ coef).reshape(n_rows, M)
        residual_norms.append(float(np.linalg.norm(residual)))

    theta = D.theta_grid[[i for i, _ in chosen]]
    phi = ris[0][0][[g for _, g in chosen]]
    d = ris[0][1][[g for _, g in chosen]]
    opt = options or MsnfceOptions()
    flags: set = set()
    P = unmix_ris_factor(Y, theta, pilots, cfg, link, opt, flags)
    s3 = stage3_tau(P, phi, d, pilots, cfg, link, opt)
    s4 = stage4_rho(Y, theta, phi, d, s3.tau, pilots, cfg, link, opt)
    diagnostics = {"atoms": np.array(chosen), "residual_norms": np.array(residual_norms), "tau_t": s3.t}
    return EstimationResult(theta=theta, phi=phi, d=d, tau=s3.tau, rho=s4.rho, diagnostics=diagnostics,
                            flags=tuple(sorted(flags | s3.flags | s4.flags)))
