"""CUSUM change-point detection and segment construction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .core import BoundConstants, InputError, Segment, TelemetryWindow
from .kernels import cusum_gaussian

logger = logging.getLogger(__name__)

REFERENCE_MIN_SEGMENT = 206


@dataclass
class CusumState:
    s: float
    alarms: list = field(default_factory=list)
    kappa: float = 0.0
    h: float = 4.6


@dataclass(frozen=True)
class CusumConfig:
    """Detector settings.

    ``shift_sd`` is the minimum mean shift to detect, in units of the
    per-slice innovation standard deviation; on a single standardised
    series that is also the statistic's own scale.  ``kappa=None``
    calibrates the drift so a stationary window of ``window`` samples raises
    a false alarm with probability ``false_alarm``.  ``guard`` is the number
    of samples the pipeline scan skips after an alarm before it re-estimates
    the level.
    """

    h: float = 4.6
    shift_sd: float = 3.0
    kappa: float | None = None
    false_alarm: float = 0.05
    window: int = 300
    two_sided: bool = True
    calibration_fraction: float = 0.2
    prewhiten_lags: int = 5
    pooling: str = "mean"
    guard: int = 30
    enabled: bool = True


def gaussian_kl(mean0: float, mean1: float, var: float) -> float:
    return (mean1 - mean0) ** 2 / (2.0 * var)


def mean_delay_bound(h: float, kl: float) -> float:
    """Wald-type bound ``h / KL`` on the expected detection delay."""
    if not kl > 0:
        raise InputError("KL divergence must be positive")
    return h / kl


def cusum_scan(series, mean0: float, mean1: float, var: float, kappa: float, h: float,
               return_state: bool = False):
    """One-sided Page CUSUM for a Gaussian mean change ``mean0 -> mean1``.

    Returns alarm times (0-based sample indices).  After each alarm the
    statistic restarts at zero and the post-change law becomes the new
    pre-change law, so a second shift of the same size can be caught.
    """
    if not var > 0 or not h > 0:
        raise InputError("var and h must be positive")
    times, starts, scores, s_last = cusum_gaussian(series, mean0, mean1 - mean0, var, kappa, h)
    alarms = [int(t) for t in times]
    if return_state:
        state = CusumState(s=float(s_last), alarms=list(zip(alarms, scores.tolist())), kappa=kappa, h=h)
        return alarms, [int(v) for v in starts], state
    return alarms


def false_alarm_probability(kappa: float, h: float, shift_sd: float, window: int,
                            n_states: int = 400) -> float:
    """P(at least one alarm in ``window`` pre-change samples), one-sided.

    Brook-Evans Markov chain on a discretised ``[0, h]``; the score under the
    pre-change law is ``N(-d^2/2, d^2)`` with ``d = shift_sd``.
    """
    d = float(shift_sd)
    mu, sd = -0.5 * d * d - kappa, d
    width = h / n_states
    # state i represents S in [i w, (i+1) w); state 0 also carries the atom at 0
    centres = (np.arange(n_states) + 0.5) * width
    centres[0] = 0.0
    upper = (np.arange(n_states) + 1.0) * width
    lower = np.arange(n_states) * width
    trans = np.empty((n_states, n_states))
    for i, c in enumerate(centres):
        cdf_up = norm.cdf((upper - c - mu) / sd)
        cdf_lo = norm.cdf((lower - c - mu) / sd)
        row = cdf_up - cdf_lo
        row[0] = cdf_up[0]  # everything at or below zero lands in state 0
        trans[i] = row
    dist = np.zeros(n_states)
    dist[0] = 1.0
    for _ in range(window):
        dist = dist @ trans
    return float(1.0 - dist.sum())


def calibrate_kappa(h: float, shift_sd: float, window: int, false_alarm: float,
                    two_sided: bool = True) -> float:
    """Drift that makes the per-window false-alarm probability hit the target."""
    target = 1.0 - math.sqrt(1.0 - false_alarm) if two_sided else false_alarm

    def gap(k):
        return false_alarm_probability(k, h, shift_sd, window) - target

    if gap(0.0) <= 0:
        return 0.0
    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
    return float(brentq(gap, 0.0, hi, xtol=1e-6))


def resolve_kappa(cfg: CusumConfig, shift_in_sd: float | None = None) -> float:
    if cfg.kappa is not None:
        return float(cfg.kappa)
    d = cfg.shift_sd if shift_in_sd is None else shift_in_sd
    # two significant digits keep the cache small without moving the rate much
    d = float(f"{d:.2g}")
    return _cached_kappa(cfg.h, d, cfg.window, cfg.false_alarm, cfg.two_sided)


_KAPPA_CACHE: dict = {}


def _cached_kappa(h, shift_sd, window, false_alarm, two_sided):
    key = (h, shift_sd, window, false_alarm, two_sided)
    if key not in _KAPPA_CACHE:
        _KAPPA_CACHE[key] = calibrate_kappa(h, shift_sd, window, false_alarm, two_sided)
    return _KAPPA_CACHE[key]


def detect_changes(series, mean0: float, var: float, cfg: CusumConfig,
                   shift: float | None = None, recentre: bool = False, guard: int = 0) -> list:
    """Two-sided (or upward) detection of mean shifts.

    ``shift`` is the absolute minimum shift; by default ``cfg.shift_sd``
    standard deviations of the series.  Returns ``(change_estimate,
    alarm_time)`` pairs, the estimate being the start of the excursion that
    raised the alarm.  Up- and down-detectors run jointly; whichever alarms
    first wins and both restart after it.  Without ``recentre`` the
    pre-change mean then moves by exactly ``shift`` as in
    :func:`cusum_scan`.  With ``recentre`` the scan skips ``guard`` samples
    while the level settles and restarts from the median of the second half
    of that stretch (the excursion mean if ``guard`` is zero), so a shift
    larger than the minimum does not set off a train of follow-up alarms.
    """
    x = np.asarray(series, dtype=float)
    if shift is None:
        shift = cfg.shift_sd * math.sqrt(var)
    kappa = resolve_kappa(cfg, shift / math.sqrt(var))
    changes = []
    begin, mu = 0, float(mean0)
    n = x.shape[0]
    while begin < n:
        seg = x[begin:]
        cands = []
        t_up, s_up, _, _ = cusum_gaussian(seg, mu, shift, var, kappa, cfg.h)
        if t_up.size:
            cands.append((int(t_up[0]), int(s_up[0]), +1))
        if cfg.two_sided:
            t_dn, s_dn, _, _ = cusum_gaussian(seg, mu, -shift, var, kappa, cfg.h)
            if t_dn.size:
                cands.append((int(t_dn[0]), int(s_dn[0]), -1))
        if not cands:
            break
        t_alarm, t_start, sign = min(cands)
        changes.append((begin + t_start, begin + t_alarm))
        if not recentre:
            mu += sign * shift
        elif guard > 0:
            settle = seg[t_alarm + 1 + guard // 2:t_alarm + 1 + guard]
            if settle.size == 0:
                break
            mu = float(np.median(settle))
            begin += guard
        else:
            mu = float(seg[t_start:t_alarm + 1].mean())
        begin += t_alarm + 1
    return changes


def prewhiten(series, lags: int, calib: int):
    """Residuals of an AR(``lags``) fitted on the first ``calib`` samples,
    applied to the whole series.  Returns ``(residuals, mean, var)`` where
    mean and var are measured on the calibration residuals."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if calib <= 2 * lags + 2:
        raise InputError(f"calibration span {calib} too short for {lags} lags")
    design = np.column_stack([np.ones(n - lags)] + [x[lags - l:n - l] for l in range(1, lags + 1)])
    target = x[lags:]
    coef, *_ = np.linalg.lstsq(design[:calib - lags], target[:calib - lags], rcond=None)
    resid = target - design @ coef
    cal = resid[:calib - lags]
    return resid, float(cal.mean()), float(cal.var(ddof=lags + 1))


def robust_diff_var(x) -> float:
    """Variance from the MAD of first differences; level shifts barely move it."""
    d = np.diff(np.asarray(x, dtype=float))
    mad = float(np.median(np.abs(d - np.median(d))))
    return (1.4826 * mad) ** 2 / 2.0


def window_changepoints(window: TelemetryWindow, cfg: CusumConfig, coord: int = 0) -> list:
    """Change times detected on a telemetry window.

    With ``pooling="mean"`` the prewhitened, standardised residuals of all
    slices are averaged into one series and scanned once, which suits
    shifts common to all slices and keeps a single false-alarm budget.
    ``pooling="union"`` scans every slice and merges the alarms.
    """
    if not cfg.enabled:
        return []
    n_t = window.horizon
    calib = max(int(round(cfg.calibration_fraction * n_t)), 2 * cfg.prewhiten_lags + 3)
    if calib >= n_t:
        return []
    lags = cfg.prewhiten_lags
    resid = []
    for i in range(window.n_slices):
        r, m, v = prewhiten(window.telemetry[:, i, coord], lags, calib)
        if not v > 0.0:
            logger.warning("slice %d has a constant calibration span; left out of the scan", i)
            continue
        resid.append((r - m) / math.sqrt(v))
    if not resid:
        return []
    resid = np.array(resid)
    if cfg.pooling == "mean":
        pooled = resid.mean(axis=0)
        cal = pooled[:calib - lags]
        var = robust_diff_var(pooled)
        if not var > 0.0:
            return []
        # each standardised residual moves by shift_sd under a common shift,
        # so the average does too, while its noise is much smaller
        found = detect_changes(pooled, float(cal.mean()), var, cfg,
                               shift=cfg.shift_sd, recentre=True, guard=cfg.guard)
        times = [s for s, _ in found]
    elif cfg.pooling == "union":
        times = []
        for r in resid:
            if not robust_diff_var(r) > 0.0:
                continue
            cal = r[:calib - lags]
            times += [s for s, _ in detect_changes(r, float(cal.mean()), robust_diff_var(r), cfg,
                                                   recentre=True, guard=cfg.guard)]
    else:
        raise InputError(f"unknown pooling {cfg.pooling!r}")
    # residual index i corresponds to sample i + lags
    return sorted({int(t) + lags for t in times})


def min_segment_length(p: int, q: int, k: int) -> int:
    return p + q + k + 2


def build_segments(t: int, changepoints, p: int, q: int, k: int,
                   constants: BoundConstants | None = None, delta_max: float = 4.0):
    """Half-open segments between change points, short ones merged.

    A segment shorter than ``p + q + K + 2`` is merged into its predecessor
    (the first segment, having none, is merged into its successor).  Returns
    ``(segments, bounds)`` with the per-segment validity bound
    ``(C1 kappa4 + C3 delta_max) / T_m``.
    """
    cps = [int(c) for c in changepoints]
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise InputError("changepoints must be strictly increasing")
    if cps and (cps[0] <= 0 or cps[-1] >= t):
        cps = [c for c in cps if 0 < c < t]
    min_len = min_segment_length(p, q, k)
    edges = [0] + cps + [t]
    segs = [[a, b] for a, b in zip(edges[:-1], edges[1:])]
    merged = []
    for seg in segs:
        if merged and seg[1] - seg[0] < min_len:
            merged[-1][1] = seg[1]
        else:
            merged.append(seg)
    if len(merged) > 1 and merged[0][1] - merged[0][0] < min_len:
        merged[1][0] = merged[0][0]
        merged.pop(0)
    segments = [Segment(a, b) for a, b in merged]
    c = constants or BoundConstants()
    bounds = [segment_validity_bound(s.length, c, delta_max) for s in segments]
    return segments, bounds


def segment_validity_bound(t_m: int, constants: BoundConstants, delta_max: float = 4.0) -> float:
    return (constants.c1 * constants.kappa4 + constants.c3 * delta_max) / t_m


def required_segment_length(constants: BoundConstants, epsilon: float = 0.05,
                            delta_max: float = 4.0) -> dict:
    """Smallest ``T_m`` with validity bound at most ``epsilon``.

    The reference operational figure is reported next to it because the two
    disagree.
    """
    num = constants.c1 * constants.kappa4 + constants.c3 * delta_max
    t_m = math.ceil(num / epsilon - 1e-12)
    return {
        "numerator": num,
        "epsilon": epsilon,
        "formula_min_length": t_m,
        "reference_min_length": REFERENCE_MIN_SEGMENT,
        "discrepancy": t_m != REFERENCE_MIN_SEGMENT,
    }
