"""Array responses and wideband near-field channel matrices.

Every steering vector carries the subcarrier frequency ``f_k`` so that beam
squint is part of the model: the ULA phase step is ``pi (f_k / f_c) cos``
and the RIS phase profile scales with ``2 pi f_k / v_c``.

RIS responses use the second-order (Fresnel) distance expansion

    d_n - d = -r_c cos(angle - zeta_n) + r_c^2 / (2 d) sin^2(angle - zeta_n)

and the phase ``exp(-j 2 pi f_k (d_n - d) / v_c)``, which equals
``exp(+j 2 pi f_k / v_c * r_c (cos - r_c / (2 d) sin^2))``.  The BS-RIS and
RIS-UE factors therefore multiply into the single cascade profile used by the
estimator and the bound without any extra sign bookkeeping.

Subcarrier indices ``k`` are 1-based throughout.
"""

from __future__ import annotations

import numpy as np

from .scenario import BsRisLink, ChannelRealization, SystemConfig, subcarrier_frequency


def ula_response(angles, f_k: float, f_c: float, n_elem: int) -> np.ndarray:
    """ULA responses for several angles, shape ``(n_elem, len(angles))``."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    m = np.arange(n_elem)[:, None]
    return np.exp(1j * np.pi * (f_k / f_c) * m * np.cos(angles)[None, :]) / np.sqrt(n_elem)


def steer_ula(angle: float, f_k: float, f_c: float, n_elem: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(j pi (f_k/f_c) m cos(angle)) / sqrt(n)``."""
    if n_elem < 1:
        raise ValueError("n_elem must be >= 1")
    return ula_response(angle, f_k, f_c, n_elem)[:, 0]


def nearfield_distance(d, r_c: float, angle: float, zeta):
    """Fresnel approximation of the distance from a point source to each RIS element."""
    if np.any(np.asarray(d) <= r_c):
        raise ValueError("source distance must exceed the RIS radius")
    delta = angle - np.asarray(zeta)
    return d - r_c * np.cos(delta) + r_c**2 / (2.0 * d) * np.sin(delta) ** 2


def exact_distance(d, r_c: float, angle: float, zeta):
    """Law-of-cosines distance from a source at ``(d, angle)`` to each RIS element."""
    delta = angle - np.asarray(zeta)
    return np.sqrt(d**2 + r_c**2 - 2.0 * r_c * d * np.cos(delta))


def ris_phase_profile(angle, d, cfg: SystemConfig) -> np.ndarray:
    """Path-length advance ``r_c (cos(a - zeta) - r_c / (2 d) sin^2(a - zeta))`` per element.

    ``angle`` and ``d`` may be arrays of equal shape; the element axis is last.
    """
    angle = np.asarray(angle, dtype=float)[..., None]
    d = np.asarray(d, dtype=float)[..., None]
    delta = angle - cfg.zeta
    r_c = cfg.r_c
    return r_c * (np.cos(delta) - r_c / (2.0 * d) * np.sin(delta) ** 2)


def steer_ris_nearfield(angle: float, f_k: float, d: float, cfg: SystemConfig) -> np.ndarray:
    """Near-field UCA response of the RIS, unit 2-norm."""
    kappa = 2.0 * np.pi * f_k / cfg.speed_of_light
    return np.exp(1j * kappa * ris_phase_profile(angle, d, cfg)) / np.sqrt(cfg.n_ris)


def steer_ris_spherical(angle: float, f_k: float, d: float, cfg: SystemConfig) -> np.ndarray:
    """RIS response with exact spherical path lengths (no Fresnel expansion)."""
    kappa = 2.0 * np.pi * f_k / cfg.speed_of_light
    extra = exact_distance(d, cfg.r_c, angle, cfg.zeta) - d
    return np.exp(-1j * kappa * extra) / np.sqrt(cfg.n_ris)


def cascade_ris_vector(theta_br, phi_rm, f_k: float, d_br, d_rm, cfg: SystemConfig) -> np.ndarray:
    """Element-wise product of the BS-RIS and RIS-UE RIS responses, scale ``1/N_R``.

    ``phi_rm`` and ``d_rm`` may be arrays; the result then has the element
    axis last.
    """
    kappa = 2.0 * np.pi * f_k / cfg.speed_of_light
    phase = ris_phase_profile(theta_br, d_br, cfg) + ris_phase_profile(phi_rm, d_rm, cfg)
    return np.exp(1j * kappa * phase) / cfg.n_ris


def cascade_bs_ue_vector(phi_br: float, theta_rm, f_k: float, cfg: SystemConfig) -> np.ndarray:
    """``a_B(phi_br) kron a_U(theta)`` for one or several UE angles, shape ``(N_BS N_UE, ...)``."""
    a_b = steer_ula(phi_br, f_k, cfg.f_c, cfg.n_bs)
    a_u = ula_response(theta_rm, f_k, cfg.f_c, cfg.n_ue)
    out = (a_b[:, None, None] * a_u[None, :, :]).reshape(cfg.n_bs * cfg.n_ue, -1)
    return out[:, 0] if np.ndim(theta_rm) == 0 else out


def delay_phase(tau, cfg: SystemConfig, k: int) -> np.ndarray:
    """Subcarrier delay term ``exp(-j 2 pi (f_s / N)(k - 1) tau)``."""
    return np.exp(-2j * np.pi * cfg.f_s / cfg.n_subcarriers * (k - 1) * np.asarray(tau))


def bs_ris_channel(link: BsRisLink, cfg: SystemConfig, k: int) -> np.ndarray:
    """BS-RIS matrix ``Z[k]``, shape ``(N_R, N_BS)``."""
    f_k = subcarrier_frequency(cfg, k)
    a_r = steer_ris_nearfield(link.theta_br, f_k, link.d_br, cfg)
    a_b = steer_ula(link.phi_br, f_k, cfg.f_c, cfg.n_bs)
    return link.alpha * np.exp(-2j * np.pi * f_k * link.tau_br) * np.outer(a_r, a_b)


def ris_ue_channel(real: ChannelRealization, cfg: SystemConfig, k: int) -> np.ndarray:
    """RIS-UE matrix ``H[k]``, shape ``(N_UE, N_R)``."""
    f_k = subcarrier_frequency(cfg, k)
    H = np.zeros((cfg.n_ue, cfg.n_ris), dtype=complex)
    for beta, theta, phi, tau, d in zip(real.beta, real.theta_rm, real.phi_rm, real.tau_rm, real.d_rm):
        a_u = steer_ula(theta, f_k, cfg.f_c, cfg.n_ue)
        a_r = steer_ris_nearfield(phi, f_k, d, cfg)
        H += beta * np.exp(-2j * np.pi * f_k * tau) * np.outer(a_u, a_r)
    return H


def cascade_factors(link: BsRisLink, theta_rm, phi_rm, d_rm, tau, rho, cfg: SystemConfig, k: int):
    """Rank-``L`` factors ``(S, c, R)`` with ``O[k] = S diag(c) R^T``.

    ``S`` is ``(N_BS N_UE, L)``, ``R`` is ``(N_R, L)`` and ``c`` holds
    ``rho_l exp(-j 2 pi (f_s/N)(k-1) tau_l)``.
    """
    f_k = subcarrier_frequency(cfg, k)
    S = cascade_bs_ue_vector(link.phi_br, np.atleast_1d(theta_rm), f_k, cfg)
    R = cascade_ris_vector(link.theta_br, np.atleast_1d(phi_rm), f_k, link.d_br, np.atleast_1d(d_rm), cfg).T
    c = np.asarray(rho) * delay_phase(tau, cfg, k)
    return S, c, R


def cascade_channel(real: ChannelRealization, cfg: SystemConfig, k: int) -> np.ndarray:
    """Dense cascade channel ``O[k]``, shape ``(N_BS N_UE, N_R)``."""
    S, c, R = cascade_factors(real.link, real.theta_rm, real.phi_rm, real.d_rm, real.tau, real.rho, cfg, k)
    return (S * c) @ R.T


def factored_frobenius2(S, c, R) -> float:
    """``||S diag(c) R^T||_F^2`` without forming the product."""
    gram = (S.conj().T @ S) * (R.conj().T @ R)
    return float(np.real(np.conj(c) @ gram @ c))
