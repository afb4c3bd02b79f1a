"""Pilot design, received-tensor synthesis and noise calibration.

The observation on pilot subcarrier ``k`` is the ``(N_s N_b, M)`` matrix

    Y_k = Upsilon^T O[k] Xi + noise,   Upsilon = (F X) kron W,

whose row ``nb * N_s + s`` holds stream ``s`` of NOMA symbol ``nb``.  The
slices are stacked into a ``(N_s N_b, M, K)`` tensor.  Because
``a_s = a_B kron a_U``, the beamspace steering ``Upsilon^T a_s`` factors into
``((F X)^T a_B) kron (W^T a_U)``; :func:`beamspace_steering` uses that to
avoid forming ``Upsilon``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import cascade_ris_vector, delay_phase, ris_phase_profile, steer_ula, ula_response
from .scenario import BsRisLink, ChannelRealization, SystemConfig, rng_stream


def qam_alphabet(order: int) -> np.ndarray:
    """Square QAM constellation with unit average energy."""
    side = int(round(np.sqrt(order)))
    if side * side != order:
        raise ValueError("QAM order must be a perfect square")
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    points = (levels[:, None] + 1j * levels[None, :]).ravel()
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _normalize_columns(A: np.ndarray) -> np.ndarray:
    return A / np.linalg.norm(A, axis=0, keepdims=True)


def _hybrid(rng, n_ant: int, n_rf: int, n_s: int) -> np.ndarray:
    rf = np.exp(1j * rng.uniform(0.0, 2 * np.pi, (n_ant, n_rf)))
    bb = (rng.standard_normal((n_rf, n_s)) + 1j * rng.standard_normal((n_rf, n_s))) / np.sqrt(2)
    return _normalize_columns(rf @ bb)


@dataclass(frozen=True, eq=False)
class PilotBlock:
    """Training signals shared by all pilot subcarriers.

    Attributes
    ----------
    F : (N_BS, N_s) hybrid precoder, unit-norm columns.
    W : (N_UE, N_s) hybrid combiner, unit-norm columns.
    X : (N_s, N_b) superposed NOMA pilot symbols.
    Xi : (N_R, M) RIS phase schedule, one column per time slot.
    user_symbols : (N_U, N_s, N_b) per-user QAM symbols before superposition.
    """

    F: np.ndarray
    W: np.ndarray
    X: np.ndarray
    Xi: np.ndarray
    user_symbols: np.ndarray

    @property
    def FX(self) -> np.ndarray:
        return self.F @ self.X

    @property
    def upsilon(self) -> np.ndarray:
        """Sensing operator ``(F X) kron W``, shape ``(N_BS N_UE, N_b N_s)``."""
        return np.kron(self.FX, self.W)


def superpose(user_symbols: np.ndarray, power_fractions, total_power: float) -> np.ndarray:
    """NOMA superposition ``sum_i sqrt(iota_i P_t) x_i``."""
    w = np.sqrt(np.asarray(power_fractions) * total_power)
    return np.tensordot(w, user_symbols, axes=1)


def make_pilot_block(cfg: SystemConfig, seed: int) -> PilotBlock:
    """Random hybrid precoder/combiner, QAM NOMA pilots and RIS phases.

    Uses ``M_BS = M_UE = N_s`` RF chains.  Drawn from the ``pilots`` stream.
    """
    rng = rng_stream(seed, "pilots")
    n_s = cfg.n_streams
    F = _hybrid(rng, cfg.n_bs, n_s, n_s)
    W = _hybrid(rng, cfg.n_ue, n_s, n_s)
    alphabet = qam_alphabet(cfg.qam_order)
    users = rng.choice(alphabet, size=(cfg.n_users, n_s, cfg.n_noma_symbols))
    X = superpose(users, cfg.power_fractions, cfg.total_power)
    Xi = np.exp(1j * rng.uniform(0.0, 2 * np.pi, (cfg.n_ris, cfg.n_slots)))
    for a in (F, W, X, Xi, users):
        a.setflags(write=False)
    return PilotBlock(F=F, W=W, X=X, Xi=Xi, user_symbols=users)


def beamspace_steering(pilots: PilotBlock, cfg: SystemConfig, phi_br: float, thetas, f_k: float) -> np.ndarray:
    """``Upsilon^T a_s(phi_br, theta, f_k)`` for each theta, shape ``(N_b N_s, n_theta)``."""
    c = pilots.FX.T @ steer_ula(phi_br, f_k, cfg.f_c, cfg.n_bs)
    w = pilots.W.T @ ula_response(thetas, f_k, cfg.f_c, cfg.n_ue)
    return (c[:, None, None] * w[None, :, :]).reshape(c.size * w.shape[0], -1)


def beamspace_derivative(pilots: PilotBlock, cfg: SystemConfig, phi_br: float, thetas, f_k: float) -> np.ndarray:
    """Derivative of :func:`beamspace_steering` with respect to each theta."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    c = pilots.FX.T @ steer_ula(phi_br, f_k, cfg.f_c, cfg.n_bs)
    m = np.arange(cfg.n_ue)[:, None]
    da = ula_response(thetas, f_k, cfg.f_c, cfg.n_ue) * (-1j * np.pi * f_k / cfg.f_c) * m * np.sin(thetas)
    w = pilots.W.T @ da
    return (c[:, None, None] * w[None, :, :]).reshape(c.size * w.shape[0], -1)


def ris_projection(pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink, phi_rm, d_rm, f_k: float) -> np.ndarray:
    """``Xi^T a_r(theta_br, phi, f_k, d_br, d)`` for each ``(phi, d)`` pair, shape ``(M, n)``."""
    a_r = cascade_ris_vector(link.theta_br, np.atleast_1d(phi_rm), f_k, link.d_br, np.atleast_1d(d_rm), cfg)
    return pilots.Xi.T @ a_r.T


def noiseless_slice(link: BsRisLink, theta, phi, d, tau, rho, pilots: PilotBlock, cfg: SystemConfig, k: int) -> np.ndarray:
    """``A_s,k diag(rho e^{-j 2 pi (f_s/N)(k-1) tau}) A_r,k^T`` for 1-based ``k``."""
    f_k = cfg.f_c + cfg.f_s / cfg.n_subcarriers * (k - 1)
    A_s = beamspace_steering(pilots, cfg, link.phi_br, theta, f_k)
    A_r = ris_projection(pilots, cfg, link, phi, d, f_k)
    coeff = np.asarray(rho) * delay_phase(tau, cfg, k)
    return (A_s * coeff) @ A_r.T


def noiseless_tensor(real: ChannelRealization, pilots: PilotBlock, cfg: SystemConfig) -> np.ndarray:
    """Noiseless observation tensor, shape ``(N_s N_b, M, K)``."""
    return np.stack(
        [noiseless_slice(real.link, real.theta_rm, real.phi_rm, real.d_rm, real.tau, real.rho, pilots, cfg, k)
         for k in range(1, cfg.n_pilots + 1)],
        axis=2,
    )


def combined_noise(pilots: PilotBlock, cfg: SystemConfig, rng: np.random.Generator, sigma2: float = 1.0) -> np.ndarray:
    """``W^T n`` for i.i.d. ``CN(0, sigma2 I)`` antenna noise, stacked like the signal tensor."""
    shape = (cfg.n_ue, cfg.n_noma_symbols, cfg.n_slots, cfg.n_pilots)
    n = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(sigma2 / 2)
    nw = np.einsum("us,ubmk->bsmk", pilots.W, n)
    return nw.reshape(cfg.n_noma_symbols * cfg.n_streams, cfg.n_slots, cfg.n_pilots)


@dataclass(frozen=True, eq=False)
class ReceivedTensor:
    """Noisy observation ``Y = G + N^W`` with its noise level.

    ``snr_db`` is the realized ratio ``||Y - N^W||_F^2 / ||N^W||_F^2``.
    """

    Y: np.ndarray
    G: np.ndarray
    sigma2: float
    snr_db: float

    @property
    def noise(self) -> np.ndarray:
        return self.Y - self.G


def noise_variance_for_snr(G: np.ndarray, pilots: PilotBlock, cfg: SystemConfig, snr_db: float) -> float:
    """Antenna noise variance giving ``snr_db`` in expectation.

    ``E ||N^W||^2 = sigma^2 M K N_b trace(W^T W^*)``.
    """
    if np.isposinf(snr_db):
        return 0.0
    trace = float(np.real(np.trace(pilots.W.T @ pilots.W.conj())))
    expected_unit = cfg.n_slots * cfg.n_pilots * cfg.n_noma_symbols * trace
    return float(np.linalg.norm(G) ** 2 / (10 ** (snr_db / 10) * expected_unit))


def synthesize(real: ChannelRealization, pilots: PilotBlock, cfg: SystemConfig, snr_db: float, noise_seed: int) -> ReceivedTensor:
    """Simulate the pilot observation tensor at a target SNR (dB; ``inf`` for noiseless)."""
    if np.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    for arr in (real.rho, real.tau, real.theta_rm, real.phi_rm, real.d_rm, pilots.F, pilots.W, pilots.X, pilots.Xi):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite channel or pilot parameters")
    G = noiseless_tensor(real, pilots, cfg)
    sigma2 = noise_variance_for_snr(G, pilots, cfg, snr_db)
    if sigma2 == 0.0:
        return ReceivedTensor(Y=G.copy(), G=G, sigma2=0.0, snr_db=float("inf"))
    nw = combined_noise(pilots, cfg, rng_stream(noise_seed, "noise"), sigma2)
    realized = 10 * np.log10(np.linalg.norm(G) ** 2 / np.linalg.norm(nw) ** 2)
    return ReceivedTensor(Y=G + nw, G=G, sigma2=sigma2, snr_db=float(realized))


# Tensor dump: little-endian, b"XLCT", uint32 ndim, ndim x uint64 dims, then
# complex64 samples in column-major (Fortran) order.
_MAGIC = b"XLCT"


def dump_tensor(path: str | Path, Y: np.ndarray) -> None:
    """Write a complex tensor in the binary dump layout."""
    Y = np.asarray(Y)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", Y.ndim))
        fh.write(struct.pack(f"<{Y.ndim}Q", *Y.shape))
        fh.write(np.asarray(Y, dtype="<c8").tobytes(order="F"))


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor written by :func:`dump_tensor`."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a tensor dump")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}Q", raw, 8)
    data = np.frombuffer(raw, dtype="<c8", offset=8 + 8 * ndim)
    return data.reshape(dims, order="F")


def ris_projection_grid(pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink, f_k: float,
                        n_offsets: int, inv_d, sector=(-np.pi / 2, 0.0), stride: int = 1):
    """``Xi^T a_r`` on an angle/inverse-distance lattice, via circular convolution.

    The RIS angles are ``2 pi (i + o / n_offsets) / N_R`` for integer ``i``
    and ``o = 0..n_offsets-1``, i.e. the element azimuths refined
    ``n_offsets`` times; only angles inside the open ``sector`` are kept
    (every ``stride``-th lattice point).  On such a lattice the cascade RIS
    response is a circulant function of ``i - n``, so all angles for one
    ``(offset, 1/d)`` pair come out of a single FFT per time slot.

    Returns
    -------
    phi : (G,) angles in rad, sorted ascending within each distance.
    d : (G,) distances in m.
    V : (G, M) projections, row ``g`` equal to ``Xi^T a_r(phi[g], d[g])``.
    """
    n_r = cfg.n_ris
    kappa = 2.0 * np.pi * f_k / cfg.speed_of_light
    r_c = cfg.r_c
    inv_d = np.atleast_1d(np.asarray(inv_d, dtype=float))

    c = np.exp(1j * kappa * ris_phase_profile(link.theta_br, link.d_br, cfg)) / n_r
    E_f = np.fft.fft(pilots.Xi * c[:, None], axis=0)

    offsets = np.arange(n_offsets) / n_offsets * (2 * np.pi / n_r)
    delta = offsets[:, None] + 2 * np.pi * np.arange(n_r)[None, :] / n_r
    h = np.exp(1j * kappa * r_c * (np.cos(delta)[:, None, :]
                                   - r_c * inv_d[None, :, None] / 2 * np.sin(delta)[:, None, :] ** 2))
    H_f = np.fft.fft(h, axis=-1)

    wrapped = np.angle(np.exp(1j * delta))
    phis, ds, blocks = [], [], []
    for o in range(n_offsets):
        keep = np.flatnonzero((wrapped[o] > sector[0]) & (wrapped[o] < sector[1]))
        keep = keep[np.argsort(wrapped[o, keep])][::stride]
        V = np.fft.ifft(H_f[o][:, :, None] * E_f[None, :, :], axis=1)[:, keep, :]
        for j, u in enumerate(inv_d):
            phis.append(wrapped[o, keep])
            ds.append(np.full(keep.size, 1.0 / u))
            blocks.append(V[j])
    return np.concatenate(phis), np.concatenate(ds), np.concatenate(blocks, axis=0)
