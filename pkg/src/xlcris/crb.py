"""Fisher information and Cramer-Rao bound for the RIS-UE path parameters.

The parameter vector is ``[theta; phi; tau; d; rho]`` (``5 L`` entries, the
first four real and ``rho`` complex).  The observation is the mode-1
unfolding ``y_(1)`` of the received tensor: row index fastest, then time
slot, then pilot subcarrier, i.e. ``Y.reshape(-1, order="F")``.

Combined noise has covariance ``sigma2 * (I kron W^T W^*)``, one identical
``N_s x N_s`` block per (NOMA symbol, slot, subcarrier).  It is applied
through the block whitener and never formed densely.

By default the complex-gain entries enter the information matrix without
the ``2 Re`` used for the real parameters, and the real/complex cross blocks
are assembled so the matrix stays Hermitian.  ``real_gains=True`` instead
splits each gain into real and imaginary parts and uses ``2 Re`` throughout.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .airlink import PilotBlock, beamspace_derivative, beamspace_steering, ris_projection
from .channel import ris_phase_profile
from .scenario import ChannelRealization, SystemConfig

log = logging.getLogger(__name__)

PARAMS = ("theta", "phi", "tau", "d", "rho")


@dataclass(frozen=True)
class NoiseCovariance:
    """``sigma2 * (I_n kron G)`` with ``G = W^T W^*``, stored as one block."""

    block: np.ndarray
    sigma2: float
    n_blocks: int

    @property
    def dim(self) -> int:
        return self.block.shape[0] * self.n_blocks

    def dense(self) -> np.ndarray:
        """Materialize the full matrix; only for small test cases."""
        return self.sigma2 * np.kron(np.eye(self.n_blocks), self.block)

    def whitener(self) -> np.ndarray:
        """``(sigma2 G)^{-1/2}`` for one block."""
        vals, vecs = np.linalg.eigh(self.sigma2 * self.block)
        return (vecs / np.sqrt(vals)) @ vecs.conj().T

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Apply ``C^{-1/2}`` to the leading axis of ``v``."""
        n = self.block.shape[0]
        shape = v.shape
        w = self.whitener() @ v.reshape(self.n_blocks, n, -1).transpose(1, 0, 2).reshape(n, -1)
        return w.reshape(n, self.n_blocks, -1).transpose(1, 0, 2).reshape(shape)

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Apply ``C^{-1}`` to the leading axis of ``v``."""
        n = self.block.shape[0]
        shape = v.shape
        blocks = v.reshape(self.n_blocks, n, -1)
        out = np.linalg.solve(self.sigma2 * self.block, blocks.transpose(1, 0, 2).reshape(n, -1))
        return out.reshape(n, self.n_blocks, -1).transpose(1, 0, 2).reshape(shape)


def noise_covariance(pilots: PilotBlock, cfg: SystemConfig, sigma2: float, n_subcarriers: int | None = None) -> NoiseCovariance:
    """Covariance of the combined noise in ``y_(1)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    G = pilots.W.T @ pilots.W.conj()
    vals = np.linalg.eigvalsh(G)
    if vals[0] <= 1e-12 * vals[-1]:
        raise ValueError("combiner Gram matrix is singular")
    K = cfg.n_pilots if n_subcarriers is None else n_subcarriers
    return NoiseCovariance(block=G, sigma2=float(sigma2), n_blocks=cfg.n_noma_symbols * cfg.n_slots * K)


def _ris_phase_derivatives(angles, d, cfg: SystemConfig):
    """Derivatives of the RIS phase profile in angle and distance, element axis last."""
    angles = np.asarray(angles, dtype=float)[..., None]
    d = np.asarray(d, dtype=float)[..., None]
    delta = angles - cfg.zeta
    r_c = cfg.r_c
    d_angle = -r_c * np.sin(delta) * (1.0 + r_c / d * np.cos(delta))
    d_dist = r_c**2 / (2.0 * d**2) * np.sin(delta) ** 2
    return d_angle, d_dist


def signal_jacobian(real: ChannelRealization, pilots: PilotBlock, cfg: SystemConfig) -> np.ndarray:
    """Complex derivatives of ``g_(1)``, shape ``(N_s N_b M K, 5 L)``.

    Columns follow ``PARAMS`` blocks of ``L``: all theta columns, then phi,
    tau, d and rho.  The rho columns are the holomorphic derivatives.
    """
    link = real.link
    L = real.n_paths
    K = cfg.n_pilots
    kappa_base = 2.0 * np.pi / cfg.speed_of_light
    d_ang, d_dist = _ris_phase_derivatives(real.phi_rm, real.d_rm, cfg)
    base = ris_phase_profile(link.theta_br, link.d_br, cfg)
    prof = base + ris_phase_profile(real.phi_rm, real.d_rm, cfg)          # (L, N_R)
    blocks = []
    for k in range(K):
        f_k = cfg.f_c + cfg.f_s / cfg.n_subcarriers * k
        kappa = kappa_base * f_k
        A_s = beamspace_steering(pilots, cfg, link.phi_br, real.theta_rm, f_k)
        dA_s = beamspace_derivative(pilots, cfg, link.phi_br, real.theta_rm, f_k)
        a_r = np.exp(1j * kappa * prof) / cfg.n_ris                        # (L, N_R)
        A_r = (a_r @ pilots.Xi).T                                          # (M, L)
        dA_r_phi = ((1j * kappa * d_ang * a_r) @ pilots.Xi).T
        dA_r_d = ((1j * kappa * d_dist * a_r) @ pilots.Xi).T
        ramp = -2j * np.pi * cfg.f_s / cfg.n_subcarriers * k
        e = np.exp(ramp * real.tau)
        c = real.rho * e

        def outer(S, R, w):
            return np.einsum("il,ml,l->iml", S, R, w).reshape(-1, L, order="F")

        blocks.append(np.hstack([
            outer(dA_s, A_r, c),
            outer(A_s, dA_r_phi, c),
            outer(A_s, A_r, ramp * c),
            outer(A_s, dA_r_d, c),
            outer(A_s, A_r, e),
        ]))
    return np.vstack(blocks)


def signal_gradient(real: ChannelRealization, pilots: PilotBlock, cfg: SystemConfig, param: str, path: int) -> np.ndarray:
    """Derivative of ``g_(1)`` with respect to one parameter of one path."""
    if param not in PARAMS:
        raise ValueError(f"unknown parameter {param!r}; expected one of {PARAMS}")
    if not 0 <= path < real.n_paths:
        raise ValueError(f"path index {path} out of range")
    return signal_jacobian(real, pilots, cfg)[:, PARAMS.index(param) * real.n_paths + path]


@dataclass(frozen=True, eq=False)
class CrbReport:
    """Information matrix, bound and numerical diagnostics.

    ``crb`` maps each parameter name to its per-path variance bound; for
    ``rho`` this is the bound on ``E|rho_hat - rho|^2``.
    """

    fim: np.ndarray
    crb: dict
    condition_number: float
    sigma2: float
    real_gains: bool
    pseudo_inverse: bool

    def mean(self, param: str) -> float:
        """Bound averaged over paths."""
        return float(np.mean(self.crb[param]))

    def rows(self):
        for p in PARAMS:
            for l, v in enumerate(self.crb[p]):
                yield p, l, float(v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "path", "crb_value"])
        for p, l, v in self.rows():
            w.writerow([p, l, repr(v)])
        return buf.getvalue()


def fisher_information(D: np.ndarray, cov: NoiseCovariance, n_paths: int, real_gains: bool = False) -> np.ndarray:
    """Assemble the information matrix from the signal Jacobian ``D``."""
    Dw = cov.whiten(D)
    J = Dw.conj().T @ Dw
    n_real = 4 * n_paths
    if real_gains:
        Dr = np.hstack([Dw, 1j * Dw[:, n_real:]])
        return 2.0 * np.real(Dr.conj().T @ Dr)
    F = J.copy()
    F[:n_real, :n_real] = 2.0 * np.real(J[:n_real, :n_real])
    # the rho cross blocks are used as they are, which keeps F Hermitian
    return F


def _scaled_inverse(F: np.ndarray, cond_limit: float = 1e14):
    """Inverse through symmetric diagonal (Jacobi) scaling; pinv when singular."""
    diag = np.real(np.diag(F))
    if np.any(diag <= 0):
        return np.linalg.pinv(F, hermitian=True), np.inf, True
    s = 1.0 / np.sqrt(diag)
    Fs = F * s[:, None] * s[None, :]
    cond = float(np.linalg.cond(Fs))
    if cond > cond_limit:
        log.warning("information matrix is near singular (scaled condition %.2e); using pseudo-inverse", cond)
        inv = np.linalg.pinv(Fs, hermitian=True)
        return inv * s[:, None] * s[None, :], cond, True
    inv = np.linalg.inv(Fs)
    return inv * s[:, None] * s[None, :], cond, False


def fim(real: ChannelRealization, pilots: PilotBlock, cfg: SystemConfig, sigma2: float,
        real_gains: bool = False) -> CrbReport:
    """Information matrix and CRB at one channel realization and noise level."""
    L = real.n_paths
    cov = noise_covariance(pilots, cfg, sigma2)
    F = fisher_information(signal_jacobian(real, pilots, cfg), cov, L, real_gains)
    inv, cond, pinv = _scaled_inverse(F)
    diag = np.real(np.diag(inv))
    crb = {p: diag[i * L:(i + 1) * L].copy() for i, p in enumerate(PARAMS[:4])}
    if real_gains:
        crb["rho"] = diag[4 * L:5 * L] + diag[5 * L:6 * L]
    else:
        crb["rho"] = diag[4 * L:5 * L].copy()
    return CrbReport(fim=F, crb=crb, condition_number=cond, sigma2=float(sigma2),
                     real_gains=real_gains, pseudo_inverse=pinv)
