"""Synthetic slice telemetry with known causal structure.

Each slice carries a ``d``-dimensional VAR(p) whose coefficient matrices are
simultaneously diagonalisable, so the companion spectral radius is exactly
the configured value.  Innovations are centred Student-t (the degrees of
freedom fix the excess kurtosis) passed through an AR(1) filter that sets the
long-run variance ratio.  Shared-resource confounding enters through the
contemporaneous utilization of a hot resource; attack hops are lagged
cross-slice couplings switched on at their onset; regime changes shift the
intercept of every slice.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import brentq

from .core import InputError, NumericalError, TelemetryWindow, load_window, save_window
from .kernels import ar1_filter, simulate_var

logger = logging.getLogger(__name__)

MAX_DRAWS = 100
HOP_SCALES = ("raw", "effect")


@dataclass(frozen=True)
class AttackHop:
    slice: int
    onset: int
    lag: int = 1
    coefficient: float = 0.0


@dataclass(frozen=True)
class RegimeChange:
    time: int
    magnitude: float


@dataclass(frozen=True)
class PathHop:
    slice: int
    time: int
    gamma: float | None = None
    interval: tuple | None = None


@dataclass(frozen=True)
class AttributionPath:
    hops: tuple = ()
    product_score: float = 0.0

    @property
    def slices(self) -> tuple:
        return tuple(h.slice for h in self.hops)

    @property
    def edges(self) -> tuple:
        s = self.slices
        return tuple(zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {
            "hops": [
                {"slice": h.slice, "time": h.time, "gamma": h.gamma,
                 "interval": list(h.interval) if h.interval is not None else None}
                for h in self.hops
            ],
            "product_score": self.product_score,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation settings.

    ``confounder_loading`` scales the standardised utilization of the shared
    resource in both slices of every confounder pair.  ``hot_share`` is the
    allocation each confounded slice holds on its shared resource.
    """

    n_slices: int = 15
    n_resources: int = 3
    horizon: int = 300
    n_metrics: int = 1
    lags: int = 5
    spectral_radius: float = 0.72
    innovation_kurtosis: float = 0.31
    longrun_ratio: float = 1.8
    confounder_pairs: tuple = ()
    confounder_loading: float = 0.8
    attack_path: tuple = ()
    attack_resource: int = 0
    regime_changes: tuple = ()
    allocation_noise_sigma: float = 0.0
    hot_share: float = 0.45
    util_persistence: float = 0.98
    util_sd: float = 0.08
    burn_in: int = 200
    sample_period: float = 1.0
    hop_scale: str = "raw"
    seed: int = 0

    def __post_init__(self):
        if self.n_slices < 2 or self.n_resources < 1 or self.horizon < 1 or self.n_metrics < 1:
            raise InputError("need N >= 2, K >= 1, T >= 1, d >= 1")
        if self.lags < 1:
            raise InputError("lags must be positive")
        if not 0.0 < self.spectral_radius < 1.0:
            raise InputError("spectral_radius must lie in (0, 1)")
        if self.innovation_kurtosis < 0:
            raise InputError("innovation_kurtosis must be >= 0")
        if self.longrun_ratio < 1.0:
            raise InputError("longrun_ratio must be >= 1")
        if self.allocation_noise_sigma < 0:
            raise InputError("allocation_noise_sigma must be >= 0")
        if self.hop_scale not in HOP_SCALES:
            raise InputError(f"hop_scale must be one of {HOP_SCALES}")
        onsets = [h.onset for h in self.attack_path]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise InputError("attack_path onset times must be strictly increasing")
        for h in self.attack_path:
            if not 0 <= h.slice < self.n_slices:
                raise InputError(f"attack hop slice {h.slice} out of range")
            if h.lag < 1:
                raise InputError("attack hop lag must be >= 1")
        for i, j, k in self.confounder_pairs:
            if i == j or not (0 <= i < self.n_slices and 0 <= j < self.n_slices):
                raise InputError(f"bad confounder pair {(i, j, k)}")
            if not 0 <= k < self.n_resources:
                raise InputError(f"confounder resource {k} out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confounder_pairs"] = [list(c) for c in self.confounder_pairs]
        d["attack_path"] = [asdict(h) for h in self.attack_path]
        d["regime_changes"] = [asdict(r) for r in self.regime_changes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["confounder_pairs"] = tuple(tuple(int(v) for v in c) for c in d.get("confounder_pairs", ()))
        d["attack_path"] = tuple(
            AttackHop(**h) if isinstance(h, dict) else AttackHop(*h) for h in d.get("attack_path", ())
        )
        d["regime_changes"] = tuple(
            RegimeChange(**r) if isinstance(r, dict) else RegimeChange(*r)
            for r in d.get("regime_changes", ())
        )
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    window: TelemetryWindow
    truth_path: AttributionPath
    truth_changepoints: tuple
    config: ScenarioConfig
    ar_coefficients: np.ndarray = field(repr=False, default=None)
    cross_coefficients: np.ndarray = field(repr=False, default=None)


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def student_dof(kappa4: float) -> float:
    """Degrees of freedom giving the requested excess kurtosis (inf for 0)."""
    return np.inf if kappa4 == 0 else 4.0 + 6.0 / kappa4


def ar1_coefficient(longrun_ratio: float) -> float:
    """AR(1) coefficient whose long-run to marginal variance ratio is given."""
    return (longrun_ratio - 1.0) / (longrun_ratio + 1.0)


def draw_innovations(rng, shape, kappa4: float) -> np.ndarray:
    """Unit-variance, zero-mean innovations with the given excess kurtosis."""
    nu = student_dof(kappa4)
    if np.isinf(nu):
        return rng.standard_normal(shape)
    return rng.standard_t(nu, size=shape) * np.sqrt((nu - 2.0) / nu)


def ar_from_roots(rng, p: int, radius: float) -> np.ndarray:
    """AR(p) coefficients whose characteristic roots have max modulus ``radius``.

    One real root sits exactly at ``radius``; the others are real or complex
    pairs drawn strictly inside it.
    """
    roots = [radius]
    while len(roots) < p:
        if p - len(roots) >= 2 and rng.random() < 0.5:
            mod = radius * rng.uniform(0.2, 0.9)
            ang = rng.uniform(0.2, np.pi - 0.2)
            roots += [mod * np.exp(1j * ang), mod * np.exp(-1j * ang)]
        else:
            roots.append(radius * rng.uniform(-0.9, 0.9))
    poly = np.real(np.poly(roots))
    return -poly[1:]


def companion_radius(ar: np.ndarray) -> float:
    """Spectral radius of the companion matrix of one AR(p) polynomial."""
    p = len(ar)
    c = np.zeros((p, p))
    c[0] = ar
    c[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(c))))


def system_radius(ar: np.ndarray, src, dst, lag, coef) -> float:
    """Spectral radius of the full channel system including cross couplings."""
    n, p = ar.shape
    pl = max([p] + [int(v) for v in lag])
    a = np.zeros((pl, n, n))
    for l in range(p):
        a[l] += np.diag(ar[:, l])
    for s, d, l, c in zip(src, dst, lag, coef):
        a[l - 1, d, s] += c
    comp = np.zeros((n * pl, n * pl))
    comp[:n] = np.concatenate(list(a), axis=1)
    comp[n:, :-n] = np.eye(n * (pl - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _state_space(ar: np.ndarray, src, dst, lag, coef, innov_ar: float, depth: int):
    """Transition and noise covariance of the coupled system.

    The state holds ``depth`` lags of every channel followed by the AR(1)
    innovation of every channel (unit marginal variance).
    """
    n, p = ar.shape
    pl = max([p, depth] + [int(v) for v in lag])
    a = np.zeros((pl, n, n))
    for l in range(p):
        a[l] += np.diag(ar[:, l])
    for s_, d_, l, c in zip(src, dst, lag, coef):
        a[l - 1, d_, s_] += c
    dim = n * (pl + 1)
    trans = np.zeros((dim, dim))
    trans[:n, :n * pl] = np.concatenate(list(a), axis=1)
    trans[:n, n * pl:] = innov_ar * np.eye(n)
    trans[n:n * pl, :n * (pl - 1)] = np.eye(n * (pl - 1))
    trans[n * pl:, n * pl:] = innov_ar * np.eye(n)
    g = np.zeros((dim, n))
    g[:n] = g[n * pl:] = np.sqrt(1.0 - innov_ar ** 2) * np.eye(n)
    return trans, g @ g.T, pl


def stationary_variance(ar: np.ndarray, src, dst, lag, coef, innov_ar: float) -> np.ndarray:
    """Per-channel stationary variance of the coupled system."""
    n = ar.shape[0]
    trans, noise, _ = _state_space(ar, src, dst, lag, coef, innov_ar, 1)
    return np.diag(solve_discrete_lyapunov(trans, noise))[:n].copy()


def granger_effect(ar: np.ndarray, src, dst, lag, coef, innov_ar: float,
                   source: int, target: int, p: int, q: int) -> float:
    """Population Granger effect ``sigma2_R / sigma2_U - 1`` of ``source -> target``.

    ``sigma2_R`` is the one-step error of the best linear predictor of the
    target from its own ``p`` lags, ``sigma2_U`` adds ``q`` source lags.
    """
    n = ar.shape[0]
    trans, noise, pl = _state_space(ar, src, dst, lag, coef, innov_ar, max(p, q))
    cov = solve_discrete_lyapunov(trans, noise)
    lagged = trans @ cov  # Cov(state_t, state_{t-1})
    own = [l * n + target for l in range(p)]
    both = own + [l * n + source for l in range(q)]

    def err(cols):
        c = lagged[target, cols]
        return cov[target, target] - c @ np.linalg.solve(cov[np.ix_(cols, cols)], c)

    return float(err(own) / err(both) - 1.0)


def scale_hops(ar: np.ndarray, src, dst, lag, effect, innov_ar: float, p: int) -> np.ndarray:
    """Coefficients giving each hop the requested population Granger effect.

    Hops are solved in path order so upstream couplings are already in
    place.  The effect grows with the coefficient, so a bracketing root
    search suffices.
    """
    out = np.zeros(len(effect))
    for h in range(len(effect)):
        if effect[h] <= 0:
            continue

        def gap(c, h=h):
            trial = out.copy()
            trial[h] = c
            return granger_effect(ar, src[:h + 1], dst[:h + 1], lag[:h + 1], trial[:h + 1],
                                  innov_ar, int(src[h]), int(dst[h]), p, p) - effect[h]

        hi = 0.1
        while gap(hi) < 0:
            hi *= 2.0
            if hi > 64:
                raise NumericalError(f"hop {h} cannot reach Granger effect {effect[h]}")
        out[h] = brentq(gap, 0.0, hi, xtol=1e-10)
    return out


def draw_allocations(rng, cfg: ScenarioConfig) -> np.ndarray:
    """Static ``N x K`` allocation matrix with column sums at most one."""
    n, k = cfg.n_slices, cfg.n_resources
    alloc = rng.dirichlet(np.ones(n + 1), size=k).T[:n] * 0.6
    pinned = np.zeros((n, k), dtype=bool)
    for i, j, kk in cfg.confounder_pairs:
        for s in (i, j):
            alloc[s, kk] = cfg.hot_share
            pinned[s, kk] = True
    path_slices = sorted({h.slice for h in cfg.attack_path})
    if path_slices:
        kk = cfg.attack_resource
        share = min(cfg.hot_share, 0.9 / len(path_slices))
        for s in path_slices:
            if not pinned[s, kk]:
                alloc[s, kk] = share
                pinned[s, kk] = True
    for kk in range(k):
        col = alloc[:, kk]
        fixed = col[pinned[:, kk]].sum()
        if fixed > 1.0:
            col[pinned[:, kk]] *= 1.0 / fixed
            fixed = 1.0
        free = ~pinned[:, kk]
        room = max(0.0, 1.0 - fixed)
        if col[free].sum() > room:
            col[free] *= room / col[free].sum()
    return np.clip(alloc, 0.0, 1.0)


def draw_utilization(rng, alloc: np.ndarray, cfg: ScenarioConfig, n_total: int):
    """Utilization = allocated load plus persistent AR(1) fluctuation, clamped.

    Returns the clamped series and the mean/sd used to standardise it.
    """
    k = cfg.n_resources
    phi = cfg.util_persistence
    shock = rng.standard_normal((n_total, k)) * cfg.util_sd * np.sqrt(1.0 - phi * phi)
    noise = ar1_filter(shock, phi)
    base = alloc.sum(axis=0)
    u = np.clip(base[None, :] + noise, 0.0, 1.0)
    return u, base, np.full(k, cfg.util_sd)


def inject_regime_change(intercept: np.ndarray, time: int, magnitude: float) -> np.ndarray:
    """Add ``magnitude`` to the intercept path from ``time`` onward (in place)."""
    if not 0 <= time < intercept.shape[0]:
        raise InputError(f"regime change time {time} outside [0, {intercept.shape[0]})")
    intercept[time:] += magnitude
    return intercept


def _mixing_matrix(rng, d):
    if d == 1:
        return np.ones((1, 1))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def generate(cfg: ScenarioConfig) -> Scenario:
    """Draw one scenario; identical configs give bit-identical output."""
    rng = np.random.default_rng(cfg.seed)
    n, k, d, p = cfg.n_slices, cfg.n_resources, cfg.n_metrics, cfg.lags
    burn = cfg.burn_in
    n_total = cfg.horizon + burn

    hops = cfg.attack_path
    src = np.array([a.slice for a in hops[:-1]], dtype=np.int64)
    dst = np.array([b.slice for b in hops[1:]], dtype=np.int64)
    lag = np.array([b.lag for b in hops[1:]], dtype=np.int64)
    coef = np.array([b.coefficient for b in hops[1:]], dtype=float)
    onset = np.array([b.onset for b in hops[1:]], dtype=np.int64)

    # Channels are (slice, eigen-direction) pairs; couplings act per direction.
    ch = n * d
    for attempt in range(MAX_DRAWS):
        ar = np.stack([ar_from_roots(rng, p, cfg.spectral_radius) for _ in range(ch)])
        c_src = np.concatenate([src * d + e for e in range(d)]) if len(src) else src
        c_dst = np.concatenate([dst * d + e for e in range(d)]) if len(dst) else dst
        c_lag = np.tile(lag, d)
        c_coef = np.tile(coef, d)
        if cfg.hop_scale == "effect" and len(c_coef):
            c_coef = scale_hops(ar, c_src, c_dst, c_lag, c_coef,
                                ar1_coefficient(cfg.longrun_ratio), p)
        if system_radius(ar, c_src, c_dst, c_lag, c_coef) < 1.0:
            break
    else:
        raise NumericalError("could not satisfy spectral radius")
    c_onset = np.tile(onset, d) + burn

    mix = _mixing_matrix(rng, d)
    unmix = np.linalg.inv(mix)

    alloc_static = draw_allocations(rng, cfg)
    util, u_mean, u_sd = draw_utilization(rng, alloc_static, cfg, n_total)

    a = ar1_coefficient(cfg.longrun_ratio)
    innov = draw_innovations(rng, (n_total, ch), cfg.innovation_kurtosis)
    innov = ar1_filter(innov, a) * np.sqrt(1.0 - a * a)

    # Observation-space drive, then rotated into the eigen-directions.
    drive = innov.reshape(n_total, n, d)
    load = np.zeros((n_total, n))
    for i, j, kk in cfg.confounder_pairs:
        z = (util[:, kk] - u_mean[kk]) / u_sd[kk]
        load[:, i] += cfg.confounder_loading * z
        load[:, j] += cfg.confounder_loading * z
    intercept = np.zeros(n_total)
    for rc in cfg.regime_changes:
        if not 0 <= rc.time < cfg.horizon:
            raise InputError(f"regime change time {rc.time} outside [0, {cfg.horizon})")
        inject_regime_change(intercept, rc.time + burn, rc.magnitude)
    obs_drive = drive + (load + intercept[:, None])[:, :, None]
    eig_drive = np.einsum("ef,tnf->tne", unmix, obs_drive).reshape(n_total, ch)

    state = simulate_var(ar, c_src, c_dst, c_lag, c_coef, c_onset, eig_drive)
    telemetry = np.einsum("ef,tnf->tne", mix, state.reshape(n_total, n, d))[burn:]

    allocation = np.broadcast_to(alloc_static, (cfg.horizon, n, k)).copy()
    window = TelemetryWindow(
        telemetry=np.ascontiguousarray(telemetry),
        allocation=allocation,
        utilization=np.ascontiguousarray(util[burn:]),
        sample_period=cfg.sample_period,
    )
    if cfg.allocation_noise_sigma > 0:
        window = apply_allocation_noise(window, cfg.allocation_noise_sigma, cfg.seed + 1)

    truth = AttributionPath(
        hops=tuple(PathHop(h.slice, h.onset) for h in hops),
        product_score=0.0,
    )
    cross = np.zeros((n, n))
    for s, t_, c in zip(src, dst, c_coef[:len(src)]):
        cross[t_, s] = c
    return Scenario(
        window=window,
        truth_path=truth,
        truth_changepoints=tuple(rc.time for rc in cfg.regime_changes),
        config=cfg,
        ar_coefficients=ar,
        cross_coefficients=cross,
    )


def apply_allocation_noise(w: TelemetryWindow, sigma: float, seed) -> TelemetryWindow:
    """Copy of ``w`` with i.i.d. N(0, sigma^2) added to allocations, clamped to [0, 1]."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    if sigma == 0:
        return replace(w, allocation=w.allocation.copy())
    rng = np.random.default_rng(seed)
    noisy = w.allocation + rng.normal(0.0, sigma, size=w.allocation.shape)
    return replace(w, allocation=np.clip(noisy, 0.0, 1.0))


def estimate_ar_radius(series: np.ndarray, p: int) -> float:
    """Companion spectral radius of an OLS AR(p) fit to one series."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    design = np.column_stack([x[p - l:n - l] for l in range(1, p + 1)])
    coef, *_ = np.linalg.lstsq(design, x[p:], rcond=None)
    return companion_radius(coef)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_scenario(s: Scenario, directory) -> Path:
    directory = save_window(s.window, directory)
    truth = {
        "path": s.truth_path.to_dict(),
        "changepoints": list(s.truth_changepoints),
        "config": s.config.to_dict(),
    }
    (directory / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return directory


def load_truth(directory):
    path = Path(directory) / "truth.json"
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    hops = tuple(PathHop(h["slice"], h["time"]) for h in data["path"]["hops"])
    return AttributionPath(hops=hops), tuple(data["changepoints"]), ScenarioConfig.from_dict(data["config"])


def load_scenario(directory) -> Scenario:
    window = load_window(directory)
    truth = load_truth(directory)
    if truth is None:
        raise InputError(f"{directory}: no truth.json")
    path, cps, cfg = truth
    return Scenario(window=window, truth_path=path, truth_changepoints=cps, config=cfg)
