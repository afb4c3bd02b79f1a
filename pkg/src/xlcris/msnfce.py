"""Multi-stage near-field channel estimator.

Four stages recover the RIS-UE path parameters from the received tensor,
given the known BS-RIS link:

1. beamspace MUSIC per pilot subcarrier for the UE arrival angles, fused
   across subcarriers by 1-D K-means and one-sigma outlier rejection;
2. least-squares unmixing of the RIS-side factor, then a correlation search
   over a coarse (angle, inverse distance) lattice refined by Nelder-Mead,
   for the RIS departure angles and distances;
3. the Vandermonde phase progression of the recovered path gains across
   subcarriers for the delays;
4. per-subcarrier least squares for the complex cascade gains.

Stages 2-4 inherit the path order produced by stage 1, so the five
parameters of each path stay paired without any matching step.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .airlink import PilotBlock, ReceivedTensor, beamspace_steering, ris_projection, ris_projection_grid
from .channel import cascade_factors, ris_phase_profile, steer_ula, ula_response
from .scenario import BsRisLink, SystemConfig
from .simplex import nelder_mead

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MsnfceOptions:
    """Tuning knobs of the estimator.

    ``music_step_deg`` is the coarse MUSIC grid; ``phi_offsets`` refines the
    stage-2 angle lattice beyond the element spacing ``2 pi / N_R`` and
    ``n_inv_d`` sets the number of inverse-distance points.  ``music_select``
    picks each subcarrier's ``L`` angles from its candidates either by the
    wideband subspace fit of the whole set (``"fit"``) or by ranking single
    candidates on their wideband MUSIC denominator (``"score"``).  Candidates
    closer than ``music_group_deg`` count as one; the ``music_refine`` best
    sets have their angles jointly refined before the final comparison.
    ``nm_xatol`` is
    the Nelder-Mead stopping extent in (rad, m); ``nm_frtol`` stops it earlier
    on a numerically flat simplex.
    """

    music_step_deg: float = 0.1
    music_normalize: bool = True
    music_candidates: int = 3
    music_reduce: bool = True
    music_select: str = "fit"
    music_group_deg: float = 0.5
    music_refine: int = 4
    unmix_whiten: bool = True
    phi_offsets: int = 2
    n_inv_d: int = 32
    nm_xatol: tuple[float, float] = (1e-9, 1e-7)
    nm_frtol: float = 1e-14
    nm_max_iter: int = 1000
    pinv_cond_limit: float = 1e8
    gamma_cond_limit: float = 1e12
    tau_unreliable: float = 1e-3
    kmeans_max_iter: int = 100


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Per-path estimates, co-indexed across the five parameters.

    ``tau`` is the full cascade delay (BS-RIS plus RIS-UE) and ``rho`` the
    cascade gain.  ``flags`` lists soft failures; a trial is usable when
    :attr:`ok` is true.
    """

    theta: np.ndarray
    phi: np.ndarray
    d: np.ndarray
    tau: np.ndarray
    rho: np.ndarray
    diagnostics: dict = field(default_factory=dict, repr=False)
    flags: tuple[str, ...] = ()

    @property
    def n_paths(self) -> int:
        return len(self.theta)

    @property
    def ok(self) -> bool:
        finite = all(np.all(np.isfinite(a)) for a in (self.theta, self.phi, self.d, self.tau, self.rho))
        return finite and "nm_not_converged" not in self.flags

    def permuted(self, order) -> "EstimationResult":
        order = np.asarray(order)
        return EstimationResult(self.theta[order], self.phi[order], self.d[order], self.tau[order],
                                self.rho[order], self.diagnostics, self.flags)

    def report(self) -> str:
        """JSON report of the estimates and scalar diagnostics."""
        def enc(v):
            if isinstance(v, np.ndarray):
                v = v.tolist()
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, list):
                return [enc(x) for x in v]
            return v

        body = {
            "theta": enc(self.theta), "phi": enc(self.phi), "d": enc(self.d), "tau": enc(self.tau),
            "rho_re": enc(self.rho.real), "rho_im": enc(self.rho.imag), "flags": list(self.flags),
            "diagnostics": {k: enc(v) for k, v in self.diagnostics.items() if k != "music_spectra"},
        }
        return json.dumps(body, indent=2, default=lambda o: enc(np.asarray(o)))


# --------------------------------------------------------------------------
# helpers


def _tensor(Y) -> np.ndarray:
    return np.asarray(Y.Y if isinstance(Y, ReceivedTensor) else Y)


def _freqs(cfg: SystemConfig, K: int) -> np.ndarray:
    return cfg.f_c + cfg.f_s / cfg.n_subcarriers * np.arange(K)


def kmeans_1d(x, n_clusters: int, max_iter: int = 100, init=None):
    """Deterministic Lloyd iterations on scalars.

    Seeds are ``init`` when given, else the quantile midpoints.  Returns
    ``(centers, labels)``; clusters are ordered by center.
    """
    x = np.asarray(x, dtype=float)
    if init is None:
        centers = np.quantile(x, (np.arange(n_clusters) + 0.5) / n_clusters)
    else:
        centers = np.array(init, dtype=float)
    labels = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(n_clusters):
            if np.any(labels == c):
                centers[c] = x[labels == c].mean()
    order = np.argsort(centers, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(n_clusters)
    return centers[order], remap[labels]


def one_sigma_mean(x) -> float:
    """Mean of the samples within one standard deviation of the sample mean."""
    x = np.asarray(x, dtype=float)
    mu, sd = x.mean(), x.std()
    keep = np.abs(x - mu) <= sd * (1 + 1e-12)
    return float(x[keep].mean()) if keep.any() else float(mu)


def _pinv(A: np.ndarray, cond_limit: float, flags: set, tag: str) -> np.ndarray:
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > cond_limit:
        log.warning("%s: ill-conditioned factor (cond %.2e), using truncated pseudo-inverse", tag,
                    s[0] / s[-1] if s[-1] > 0 else np.inf)
        flags.add(f"{tag}_regularized")
        return np.linalg.pinv(A, rcond=1.0 / cond_limit)
    return np.linalg.pinv(A)


def detect_rank(Y, threshold: float = 0.05) -> int:
    """Most frequent per-subcarrier rank, counting singular values above ``threshold * s_max``."""
    Y = _tensor(Y)
    ranks = []
    for k in range(Y.shape[2]):
        s = np.linalg.svd(Y[:, :, k], compute_uv=False)
        ranks.append(int(np.sum(s > threshold * s[0])) if s[0] > 0 else 0)
    values, counts = np.unique(ranks, return_counts=True)
    return int(values[np.argmax(counts)])


# --------------------------------------------------------------------------
# stage 1


@dataclass(frozen=True, eq=False)
class ThetaStage:
    theta: np.ndarray
    raw: list
    labels: np.ndarray
    grid: np.ndarray
    spectra: np.ndarray


def music_denominator(Qn: np.ndarray, V: np.ndarray, normalize: bool = True) -> np.ndarray:
    """``||Qn^H v||^2`` for each column ``v`` of ``V`` (optionally divided by ``||v||^2``)."""
    proj = np.sum(np.abs(Qn.conj().T @ V) ** 2, axis=0)
    if normalize:
        proj = proj / np.sum(np.abs(V) ** 2, axis=0)
    return proj


def _local_maxima(s: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([-np.inf], s, [-np.inf]))
    mid = padded[1:-1]
    return np.flatnonzero((mid >= padded[:-2]) & (mid > padded[2:]))


def combiner_whitener(pilots: PilotBlock) -> np.ndarray:
    """``(W^T W^*)^{-1/2}``, which whitens the combined noise of one NOMA symbol."""
    gram = pilots.W.T @ pilots.W.conj()
    vals, vecs = np.linalg.eigh(gram)
    if vals[0] <= 1e-12 * vals[-1]:
        raise ValueError("combiner Gram matrix is singular")
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


def reduced_snapshots(Yk: np.ndarray, pilots: PilotBlock, cfg: SystemConfig, phi_br: float, f_k: float,
                      whitener: np.ndarray | None = None) -> np.ndarray:
    """Project a slice onto the signal-bearing subspace ``c kron C^{N_s}`` and whiten.

    Every beamspace steering vector factors as ``c kron (W^T a_U)`` with the
    known ``c = (F X)^T a_B(phi_br)``, so the slice carries angle information
    only along ``c``.  Returns ``(N_s, M)`` snapshots whose noise is white.
    """
    B = combiner_whitener(pilots) if whitener is None else whitener
    c = pilots.FX.T @ steer_ula(phi_br, f_k, cfg.f_c, cfg.n_bs)
    Z = np.einsum("b,bsm->sm", c.conj(), Yk.reshape(c.size, cfg.n_streams, -1)) / np.linalg.norm(c)
    return B @ Z


def reduced_steering(pilots: PilotBlock, cfg: SystemConfig, thetas, f_k: float, whitener: np.ndarray) -> np.ndarray:
    """Whitened UE-side beamspace response ``B W^T a_U(theta)``, shape ``(N_s, n_theta)``."""
    return whitener @ (pilots.W.T @ ula_response(thetas, f_k, cfg.f_c, cfg.n_ue))


def stage1_theta(Y, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
                 options: MsnfceOptions | None = None) -> ThetaStage:
    """UE arrival angles from per-subcarrier beamspace MUSIC, fused by clustering.

    By default MUSIC runs on :func:`reduced_snapshots`; ``music_reduce=False``
    uses the raw ``N_s N_b``-row slices instead.
    """
    opt = options or MsnfceOptions()
    Y = _tensor(Y)
    n_rows, M, K = Y.shape
    L = cfg.n_paths
    dim = cfg.n_streams if opt.music_reduce else n_rows
    if L >= dim:
        raise ValueError(f"MUSIC needs fewer paths than its observation dimension ({dim})")
    step = np.deg2rad(opt.music_step_deg)
    grid = np.arange(step, np.pi - step / 2, step)
    freqs = _freqs(cfg, K)
    B = combiner_whitener(pilots) if opt.music_reduce else None

    def steering(thetas, f_k):
        if opt.music_reduce:
            return reduced_steering(pilots, cfg, thetas, f_k, B)
        return beamspace_steering(pilots, cfg, link.phi_br, thetas, f_k)

    spectra = np.empty((K, grid.size))
    noise_spaces, covariances = [], []
    for k, f_k in enumerate(freqs):
        Yk = reduced_snapshots(Y[:, :, k], pilots, cfg, link.phi_br, f_k, B) if opt.music_reduce else Y[:, :, k]
        R = Yk @ Yk.conj().T / M
        if not np.all(np.isfinite(R)) or np.linalg.norm(R) == 0:
            raise ValueError(f"degenerate covariance on subcarrier {k + 1}")
        _, Q = np.linalg.eigh(R)
        Qn = Q[:, : dim - L]
        noise_spaces.append(Qn)
        covariances.append(R)
        den = music_denominator(Qn, steering(grid, f_k), opt.music_normalize)
        spectra[k] = 1.0 / np.maximum(den, np.finfo(float).tiny)

    def wideband_score(thetas):
        # Near endfire, beam squint creates a grating-lobe null that moves with
        # the subcarrier; true angles are nulls on every subcarrier.
        return sum(music_denominator(Qn, steering(thetas, f), opt.music_normalize)
                   for Qn, f in zip(noise_spaces, freqs)) / K

    def subset_fit(centers, subsets):
        # energy captured by the span of each candidate set, summed over subcarriers
        # (orthonormal basis with rank cut: nearly collinear sets stay bounded by tr R)
        fit = np.zeros(len(subsets))
        for Rk, f in zip(covariances, freqs):
            A = steering(centers, f)[:, subsets].transpose(1, 0, 2)      # (n_sets, dim, L)
            U, sv, _ = np.linalg.svd(A, full_matrices=False)
            keep = sv > 1e-6 * sv[:, :1]
            fit += np.einsum("sil,ij,sjl,sl->s", U.conj(), Rk, U, keep).real
        return fit

    R_all = np.array(covariances)
    BW = B @ pilots.W.T if opt.music_reduce else None
    m_ue = np.arange(cfg.n_ue)[None, :, None]

    def joint_fit(thetas):
        # subset_fit of one set, vectorised over subcarriers
        if np.any(thetas <= 0) or np.any(thetas >= np.pi):
            return -np.inf
        if opt.music_reduce:
            ph = np.pi * (freqs / cfg.f_c)[:, None, None] * m_ue * np.cos(thetas)[None, None, :]
            A = BW @ (np.exp(1j * ph) / np.sqrt(cfg.n_ue))
        else:
            A = np.stack([steering(thetas, f) for f in freqs])
        U, sv, _ = np.linalg.svd(A, full_matrices=False)
        keep = sv > 1e-6 * sv[:, :1]
        return float(np.einsum("kil,kij,kjl,kl->", U.conj(), R_all, U, keep).real)

    per_k = []
    for k, f_k in enumerate(freqs):
        Qn = noise_spaces[k]
        peaks = _local_maxima(spectra[k])
        if peaks.size < L:
            log.info("subcarrier %d: only %d MUSIC peaks", k + 1, peaks.size)
        peaks = peaks[np.argsort(spectra[k, peaks])[::-1][: opt.music_candidates * L]]

        def objective(t):
            return float(music_denominator(Qn, steering(t, f_k), opt.music_normalize)[0])

        cand = []
        for i in peaks:
            lo, hi = max(grid[i] - step, 1e-9), min(grid[i] + step, np.pi - 1e-9)
            res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-13, "maxiter": 200})
            cand.append(res.x if res.fun <= 1.0 / spectra[k, i] else grid[i])
        per_k.append(np.asarray(cand))

    init = None
    if opt.music_select == "fit":
        # A weak path's null can be shallower than a near-null elsewhere when
        # the observation has few dimensions.  Group the candidates of all
        # subcarriers, then keep the L groups whose joint span explains the
        # most energy on every subcarrier.
        tol = opt.music_group_deg * np.pi / 180
        flat = np.sort(np.concatenate(per_k))
        groups = np.split(flat, np.flatnonzero(np.diff(flat) > tol) + 1)
        groups.sort(key=len, reverse=True)
        centers = np.array([np.median(g) for g in groups[: max(opt.music_candidates * L, L)]])
        if centers.size < L:
            raise ValueError("too few MUSIC peaks to resolve all paths")
        subsets = np.array(list(itertools.combinations(range(centers.size), L)))
        fits = subset_fit(centers, subsets)
        # Near endfire two almost collinear columns can soak up the model
        # error of a strong path; comparing locally optimal angles removes it.
        best, init = -np.inf, None
        for i in np.argsort(fits)[::-1][: max(opt.music_refine, 1)]:
            x0 = centers[subsets[i]]
            if opt.music_refine > 0:
                res = nelder_mead(lambda t: -joint_fit(t), x0, step, xatol=1e-7, max_iter=400)
                x, val = res.x, -res.fun
            else:
                x, val = x0, fits[i]
            if val > best:
                best, init = val, np.sort(x)
        raw = []
        for cand in per_k:
            near = [cand[np.argmin(np.abs(cand - c))] for c in init]
            raw.append(np.array([v for v, c in zip(near, init) if abs(v - c) <= tol]))
    else:
        raw = [cand[np.argsort(wideband_score(cand), kind="stable")[:L]] for cand in per_k]

    pooled = np.concatenate(raw)
    if pooled.size < L:
        raise ValueError("too few MUSIC peaks to resolve all paths")
    _, labels = kmeans_1d(pooled, L, opt.kmeans_max_iter, init)
    theta = np.array([one_sigma_mean(pooled[labels == c]) if np.any(labels == c) else np.nan
                      for c in range(L)])
    if np.any(np.isnan(theta)):
        raise ValueError("empty angle cluster")
    return ThetaStage(theta=theta, raw=raw, labels=labels, grid=grid, spectra=spectra)


# --------------------------------------------------------------------------
# stage 2


@dataclass(frozen=True, eq=False)
class PhiDistanceStage:
    phi: np.ndarray
    d: np.ndarray
    P: list
    phi_init: np.ndarray
    d_init: np.ndarray
    objective_init: np.ndarray
    objective_final: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    flags: frozenset


def unmix_ris_factor(Y, theta, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
                     options: MsnfceOptions | None = None, flags: set | None = None) -> list:
    """``P_k = (pinv(A_s,k) Y_k)^T`` for each pilot subcarrier, each ``(M, L)``.

    With ``unmix_whiten`` both factors are first premultiplied by the noise
    whitener, which leaves noiseless data unchanged.
    """
    opt = options or MsnfceOptions()
    flags = set() if flags is None else flags
    Y = _tensor(Y)
    # generalized least squares: whiten the combined noise of every NOMA symbol
    n_sym = Y.shape[0] // cfg.n_streams
    T = np.kron(np.eye(n_sym), combiner_whitener(pilots)) if opt.unmix_whiten else np.eye(Y.shape[0])
    P = []
    for k, f_k in enumerate(_freqs(cfg, Y.shape[2])):
        A_s = T @ beamspace_steering(pilots, cfg, link.phi_br, theta, f_k)
        P.append((_pinv(A_s, opt.pinv_cond_limit, flags, "stage2") @ (T @ Y[:, :, k])).T)
    return P


def correlation_objective(P: list, l: int, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink):
    """Negative summed normalized correlation between ``P_k[:, l]`` and ``Xi^T a_r``.

    Returns a function of ``x = (phi, d)``.
    """
    K = len(P)
    kappa = 2 * np.pi * _freqs(cfg, K) / cfg.speed_of_light
    base = ris_phase_profile(link.theta_br, link.d_br, cfg)
    p = np.stack([Pk[:, l] for Pk in P])                  # (K, M)
    p_norm = np.linalg.norm(p, axis=1)
    Xi = pilots.Xi

    def f(x):
        phi, d = x
        if d <= cfg.r_c:
            return 0.0
        prof = base + ris_phase_profile(phi, d, cfg)
        V = np.exp(1j * kappa[:, None] * prof[None, :]) @ Xi    # (K, M), scale 1/N_R dropped
        num = np.abs(np.sum(p.conj() * V, axis=1))
        return -float(np.sum(num / (p_norm * np.linalg.norm(V, axis=1))))

    return f


def stage2_phi_d(Y, theta, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
                 options: MsnfceOptions | None = None) -> PhiDistanceStage:
    """RIS departure angles and distances, co-indexed with ``theta``."""
    opt = options or MsnfceOptions()
    flags: set = set()
    Y = _tensor(Y)
    theta = np.asarray(theta, dtype=float)
    L, K = theta.size, Y.shape[2]
    P = unmix_ris_factor(Y, theta, pilots, cfg, link, opt, flags)

    inv_d = np.linspace(1 / cfg.d_rm_max, 1 / cfg.d_rm_min, opt.n_inv_d)
    du = inv_d[1] - inv_d[0] if inv_d.size > 1 else 1 / cfg.d_rm_min
    dphi = 2 * np.pi / (cfg.n_ris * opt.phi_offsets)
    coarse_phi = np.empty((K, L))
    coarse_d = np.empty((K, L))
    for k, f_k in enumerate(_freqs(cfg, K)):
        phis, ds, V = ris_projection_grid(pilots, cfg, link, f_k, opt.phi_offsets, inv_d)
        v_norm = np.linalg.norm(V, axis=1)
        corr = np.abs(V @ P[k].conj()) / v_norm[:, None]       # (G, L); ||p|| is constant per column
        best = np.argmax(corr, axis=0)
        coarse_phi[k], coarse_d[k] = phis[best], ds[best]

    phi_out, d_out = np.empty(L), np.empty(L)
    phi_init, d_init = np.empty(L), np.empty(L)
    f_init, f_final = np.empty(L), np.empty(L)
    iters = np.zeros(L, dtype=int)
    conv = np.zeros(L, dtype=bool)
    for l in range(L):
        phi0 = one_sigma_mean(coarse_phi[:, l])
        d0 = one_sigma_mean(coarse_d[:, l])
        f = correlation_objective(P, l, pilots, cfg, link)
        res = nelder_mead(f, [phi0, d0], step=[dphi / 2, d0**2 * du / 2],
                          xatol=opt.nm_xatol, frtol=opt.nm_frtol, max_iter=opt.nm_max_iter)
        phi_init[l], d_init[l], f_init[l] = phi0, d0, f([phi0, d0])
        phi_hat, d_hat = res.x
        phi_hat = float(np.angle(np.exp(1j * phi_hat)))
        if not (-np.pi / 2 <= phi_hat <= 0 and cfg.d_rm_min <= d_hat <= cfg.d_rm_max):
            flags.add("stage2_clipped")
            phi_hat = float(np.clip(phi_hat, -np.pi / 2, 0.0))
            d_hat = float(np.clip(d_hat, cfg.d_rm_min, cfg.d_rm_max))
        phi_out[l], d_out[l] = phi_hat, d_hat
        f_final[l], iters[l], conv[l] = res.fun, res.n_iter, res.converged
    if not conv.all():
        flags.add("nm_not_converged")
    return PhiDistanceStage(phi=phi_out, d=d_out, P=P, phi_init=phi_init, d_init=d_init,
                            objective_init=f_init, objective_final=f_final, iterations=iters,
                            converged=conv, flags=frozenset(flags))


# --------------------------------------------------------------------------
# stage 3


@dataclass(frozen=True, eq=False)
class DelayStage:
    tau: np.ndarray
    t: np.ndarray
    s: np.ndarray
    unreliable: np.ndarray
    flags: frozenset


def stage3_tau(P: list, phi, d, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
               options: MsnfceOptions | None = None) -> DelayStage:
    """Cascade delays from the subcarrier-to-subcarrier phase of the recovered gains."""
    opt = options or MsnfceOptions()
    flags: set = set()
    K = len(P)
    if K < 2:
        raise ValueError("delay estimation needs at least two pilot subcarriers")
    s = np.empty((K, len(phi)), dtype=complex)
    for k, f_k in enumerate(_freqs(cfg, K)):
        A_r = ris_projection(pilots, cfg, link, phi, d, f_k)
        s[k] = np.diag(_pinv(A_r, opt.pinv_cond_limit, flags, "stage3") @ P[k])
    ratio = (s[1:] / s[:-1]).mean(axis=0)
    t = ratio / np.exp(-2j * np.pi * cfg.f_s * link.tau_br / cfg.n_subcarriers)
    tau_rm = np.mod(-cfg.n_subcarriers * np.angle(t) / (2 * np.pi * cfg.f_s), cfg.delay_period)
    unreliable = np.abs(t) < opt.tau_unreliable
    if unreliable.any():
        flags.add("tau_unreliable")
    return DelayStage(tau=link.tau_br + tau_rm, t=t, s=s, unreliable=unreliable, flags=frozenset(flags))


# --------------------------------------------------------------------------
# stage 4


@dataclass(frozen=True, eq=False)
class GainStage:
    rho: np.ndarray
    rho_per_k: np.ndarray
    gamma_cond: np.ndarray
    flags: frozenset


def path_atoms(theta, phi, d, tau, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink, k: int) -> np.ndarray:
    """``Phi_{l,k}`` for all paths, shape ``(L, N_s N_b, M)``; ``k`` is 1-based."""
    f_k = cfg.f_c + cfg.f_s / cfg.n_subcarriers * (k - 1)
    A_s = beamspace_steering(pilots, cfg, link.phi_br, theta, f_k)
    A_r = ris_projection(pilots, cfg, link, phi, d, f_k)
    phase = np.exp(-2j * np.pi * (k - 1) * cfg.f_s * np.asarray(tau) / cfg.n_subcarriers)
    return np.einsum("l,il,ml->lim", phase, A_s, A_r)


def stage4_rho(Y, theta, phi, d, tau, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
               options: MsnfceOptions | None = None) -> GainStage:
    """Cascade gains by per-subcarrier least squares, averaged over subcarriers."""
    opt = options or MsnfceOptions()
    flags: set = set()
    Y = _tensor(Y)
    K = Y.shape[2]
    rho_k = np.empty((K, len(theta)), dtype=complex)
    conds = np.empty(K)
    for k in range(K):
        Phi = path_atoms(theta, phi, d, tau, pilots, cfg, link, k + 1)
        flat = Phi.reshape(Phi.shape[0], -1)
        gamma = flat.conj() @ flat.T              # Gamma[i, j] = Tr(Phi_j Phi_i^H)
        zeta = flat.conj() @ Y[:, :, k].ravel()   # zeta[i] = Tr(Y Phi_i^H)
        conds[k] = np.linalg.cond(gamma)
        if conds[k] > opt.gamma_cond_limit:
            flags.add("stage4_regularized")
            rho_k[k] = np.linalg.lstsq(gamma, zeta, rcond=1.0 / opt.gamma_cond_limit)[0]
        else:
            rho_k[k] = np.linalg.solve(gamma, zeta)
    return GainStage(rho=rho_k.mean(axis=0), rho_per_k=rho_k, gamma_cond=conds, flags=frozenset(flags))


# --------------------------------------------------------------------------
# pipeline


def estimate(Y, pilots: PilotBlock, cfg: SystemConfig, link: BsRisLink,
             options: MsnfceOptions | None = None) -> EstimationResult:
    """Run all four stages on a received tensor."""
    opt = options or MsnfceOptions()
    s1 = stage1_theta(Y, pilots, cfg, link, opt)
    s2 = stage2_phi_d(Y, s1.theta, pilots, cfg, link, opt)
    s3 = stage3_tau(s2.P, s2.phi, s2.d, pilots, cfg, link, opt)
    s4 = stage4_rho(Y, s1.theta, s2.phi, s2.d, s3.tau, pilots, cfg, link, opt)
    diagnostics = {
        "music_spectra": s1.spectra,
        "theta_raw": s1.raw,
        "theta_labels": s1.labels,
        "phi_init": s2.phi_init,
        "d_init": s2.d_init,
        "objective_init": s2.objective_init,
        "objective_final": s2.objective_final,
        "nm_iterations": s2.iterations,
        "tau_t": s3.t,
        "gamma_cond": s4.gamma_cond,
    }
    flags = tuple(sorted(s2.flags | s3.flags | s4.flags))
    return EstimationResult(theta=s1.theta, phi=s2.phi, d=s2.d, tau=s3.tau, rho=s4.rho,
                            diagnostics=diagnostics, flags=flags)


def reconstruct_cascade(result: EstimationResult, cfg: SystemConfig, link: BsRisLink, k: int) -> np.ndarray:
    """Dense cascade channel rebuilt from the estimates, any subcarrier ``1..N``."""
    S, c, R = cascade_factors(link, result.theta, result.phi, result.d, result.tau, result.rho, cfg, k)
    return (S * c) @ R.T
