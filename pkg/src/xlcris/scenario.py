"""System configuration, random scenario sampling and seed management.

All randomness in the package flows through :func:`rng_stream`, which maps a
``(seed, stream, *extra)`` key onto an independent ``numpy`` generator via
``SeedSequence(seed, spawn_key=(stream_id, *extra))``.  Stream ids are fixed:

=========  ==
scenario   0
pilots     1
noise      2
=========  ==

so the channel realization, the pilot block and the noise of one experiment
can be reseeded independently of each other.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

STREAMS = {"scenario": 0, "pilots": 1, "noise": 2}

_U64 = (1 << 64) - 1


def rng_stream(seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Return the generator for one named sub-stream of ``seed``."""
    key = (STREAMS[stream],) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & _U64, spawn_key=key))


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a fresh 64-bit seed."""
    ss = np.random.SeedSequence([int(k) & _U64 for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SystemConfig:
    """Static dimensions, frequencies and geometry of the link.

    Frequencies are in Hz, distances in m and delays in s.  ``r_c`` follows
    the half-wavelength UCA rule ``lambda / (4 sin(pi / N_R))`` unless
    ``radius`` is set explicitly.  The last block of fields controls the
    random scenario sampler.
    """

    f_c: float = 30e9
    f_s: float = 1e9
    n_subcarriers: int = 256
    n_pilots: int = 20
    n_bs: int = 32
    n_ue: int = 32
    n_ris: int = 1024
    n_streams: int = 4
    n_slots: int = 32
    n_noma_symbols: int = 7
    n_paths: int = 3
    n_users: int = 2
    total_power: float = 1.0
    power_fractions: tuple[float, ...] = (0.8, 0.2)
    qam_order: int = 4
    speed_of_light: float = 299_792_458.0
    radius: float | None = None
    # scenario sampler
    d_br: float = 20.0
    d_rm_min: float = 5.0
    d_rm_max: float = 50.0
    min_separation_deg: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "power_fractions", tuple(float(p) for p in self.power_fractions))
        counts = ("n_subcarriers", "n_pilots", "n_bs", "n_ue", "n_ris", "n_streams",
                  "n_slots", "n_noma_symbols", "n_paths", "n_users", "qam_order")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_pilots > self.n_subcarriers:
            raise ValueError("n_pilots must not exceed n_subcarriers")
        if self.n_streams > min(self.n_bs, self.n_ue):
            raise ValueError("n_streams must not exceed the BS or UE antenna count")
        if self.n_paths > min(self.n_streams * self.n_noma_symbols, self.n_slots):
            raise ValueError("n_paths must not exceed min(N_s * N_b, M)")
        if len(self.power_fractions) != self.n_users:
            raise ValueError("need one power fraction per NOMA user")
        if abs(sum(self.power_fractions) - 1.0) > 1e-12:
            raise ValueError("power fractions must sum to 1")
        if math.isqrt(self.qam_order) ** 2 != self.qam_order:
            raise ValueError("only square QAM orders are supported")
        if not 0 < self.d_rm_min < self.d_rm_max:
            raise ValueError("need 0 < d_rm_min < d_rm_max")
        if self.d_rm_min <= self.r_c or self.d_br <= self.r_c:
            raise ValueError("RIS distances must exceed the array radius")

    @property
    def wavelength(self) -> float:
        return self.speed_of_light / self.f_c

    @property
    def r_c(self) -> float:
        if self.radius is not None:
            return float(self.radius)
        return self.wavelength / (4.0 * math.sin(math.pi / self.n_ris))

    @property
    def zeta(self) -> np.ndarray:
        """Azimuth of each RIS element, ``2 pi (n - 1) / N_R``."""
        return 2.0 * np.pi * np.arange(self.n_ris) / self.n_ris

    @property
    def delay_period(self) -> float:
        """Delay ambiguity ``N / f_s`` of the subcarrier phase slope."""
        return self.n_subcarriers / self.f_s

    def frequencies(self, n: int | None = None) -> np.ndarray:
        """Frequencies of the first ``n`` subcarriers (default: the pilots)."""
        n = self.n_pilots if n is None else n
        return self.f_c + self.f_s / self.n_subcarriers * np.arange(n)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


def default_config() -> SystemConfig:
    """Baseline configuration: 30 GHz carrier, 1 GHz bandwidth, 1024-element RIS."""
    return SystemConfig()


_TOML_KEYS = {f.name for f in fields(SystemConfig)}


def load_config(path: str | Path, base: SystemConfig | None = None) -> SystemConfig:
    """Read a flat TOML file of ``SystemConfig`` field overrides.

    Example::

        n_ris = 256
        n_pilots = 20
        power_fractions = [0.8, 0.2]
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - _TOML_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ValueError(f"config must be flat; {key!r} is a table")
    if "power_fractions" in data:
        data["power_fractions"] = tuple(data["power_fractions"])
    return replace(base or default_config(), **data)


def subcarrier_frequency(cfg: SystemConfig, k: int) -> float:
    """Frequency of the 1-based subcarrier ``k``: ``f_c + (f_s / N)(k - 1)``."""
    if not 1 <= k <= cfg.n_subcarriers:
        raise ValueError(f"subcarrier index {k} outside 1..{cfg.n_subcarriers}")
    return cfg.f_c + cfg.f_s / cfg.n_subcarriers * (k - 1)


@dataclass(frozen=True)
class BsRisLink:
    """Line-of-sight BS-RIS hop; known to the receiver."""

    alpha: complex
    theta_br: float
    phi_br: float
    tau_br: float
    d_br: float


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Ground truth of one channel draw.

    Per-path arrays have length ``L``.  ``rho`` and ``tau`` are the cascade
    gains and delays, ``rho = alpha * beta * exp(-2j pi f_c tau)`` with
    ``tau = tau_rm + tau_br``; build through :meth:`from_paths` so that they
    stay consistent with the primitive fields.
    """

    link: BsRisLink
    beta: np.ndarray
    theta_rm: np.ndarray
    phi_rm: np.ndarray
    tau_rm: np.ndarray
    d_rm: np.ndarray
    rho: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)

    @classmethod
    def from_paths(cls, link, beta, theta_rm, phi_rm, tau_rm, d_rm, f_c):
        beta = np.atleast_1d(np.asarray(beta, dtype=complex))
        tau_rm = np.atleast_1d(np.asarray(tau_rm, dtype=float))
        tau, rho = cascade_parameters(link, beta, tau_rm, f_c)
        arrays = dict(
            beta=beta,
            theta_rm=np.atleast_1d(np.asarray(theta_rm, dtype=float)),
            phi_rm=np.atleast_1d(np.asarray(phi_rm, dtype=float)),
            tau_rm=tau_rm,
            d_rm=np.atleast_1d(np.asarray(d_rm, dtype=float)),
            rho=rho,
            tau=tau,
        )
        for a in arrays.values():
            a.setflags(write=False)
        return cls(link=link, **arrays)

    @property
    def n_paths(self) -> int:
        return len(self.beta)

    def permuted(self, order) -> "ChannelRealization":
        """Same channel with paths listed in a different order."""
        order = np.asarray(order)
        return ChannelRealization(
            link=self.link, beta=self.beta[order], theta_rm=self.theta_rm[order],
            phi_rm=self.phi_rm[order], tau_rm=self.tau_rm[order], d_rm=self.d_rm[order],
            rho=self.rho[order], tau=self.tau[order],
        )


def cascade_parameters(link: BsRisLink, beta, tau_rm, f_c):
    """Cascade delays ``tau_rm + tau_br`` and gains ``alpha beta e^{-j 2 pi f_c tau}``."""
    tau = np.asarray(tau_rm, dtype=float) + link.tau_br
    rho = link.alpha * np.asarray(beta) * np.exp(-2j * np.pi * f_c * tau)
    return tau, rho


def _min_gap(x: np.ndarray) -> float:
    if len(x) < 2:
        return np.inf
    return float(np.min(np.diff(np.sort(x))))


def _crandn(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def sample_realization(cfg: SystemConfig, seed: int, max_tries: int = 10_000) -> ChannelRealization:
    """Draw a random channel from the ``scenario`` stream of ``seed``.

    Angles are uniform on their sector, gains standard complex normal,
    ``d_rm`` uniform in ``[d_rm_min, d_rm_max]`` and the RIS-UE delay is the
    line-of-flight delay plus an excess that keeps ``tau_rm`` below half way
    between ``d_rm / v_c`` and the delay period ``N / f_s``.
    """
    rng = rng_stream(seed, "scenario")
    L = cfg.n_paths
    alpha = complex(_crandn(rng, None))
    theta_br = rng.uniform(-np.pi, -np.pi / 2)
    phi_br = rng.uniform(0.0, np.pi / 2)
    link = BsRisLink(alpha=alpha, theta_br=theta_br, phi_br=phi_br,
                     tau_br=cfg.d_br / cfg.speed_of_light, d_br=cfg.d_br)

    sep = np.deg2rad(cfg.min_separation_deg)
    for _ in range(max_tries):
        theta_rm = rng.uniform(0.0, np.pi, L)
        phi_rm = rng.uniform(-np.pi / 2, 0.0, L)
        if _min_gap(theta_rm) >= sep and _min_gap(phi_rm) >= sep:
            break
    else:
        raise RuntimeError("could not satisfy the path separation floor")

    beta = _crandn(rng, L)
    d_rm = rng.uniform(cfg.d_rm_min, cfg.d_rm_max, L)
    flight = d_rm / cfg.speed_of_light
    if np.any(flight >= cfg.delay_period):
        raise ValueError("d_rm_max exceeds the unambiguous delay range N / f_s")
    excess = rng.uniform(0.0, 1.0, L) * 0.5 * (cfg.delay_period - flight)
    return ChannelRealization.from_paths(link, beta, theta_rm, phi_rm, flight + excess, d_rm, cfg.f_c)
