"""Hot inner loops, each with a compiled and a numpy implementation.

Every kernel ``foo`` exists as ``foo_jit`` (numba, loop form) and
``foo_numpy`` (vectorised numpy or plain python).  The public name is bound
to one of the two at import time according to ``SLICE_ATTRIB_BACKEND``.
Both variants must agree to floating-point round-off; the test-suite checks
that, and ``benchmarks/bench_kernels.py`` times them against each other.
"""

import math

import numpy as np
from scipy.signal import lfilter

from ._jit import USE_NUMBA, njit

__all__ = [
    "simulate_var",
    "ar1_filter",
    "cusum_gaussian",
    "banded_apply",
    "betainc",
    "f_sf",
    "BACKEND",
]

BACKEND = "numba" if USE_NUMBA else "numpy"

BETACF_MAXITER = 200
BETACF_EPS = 1e-12
_FPMIN = 1e-300


# --------------------------------------------------------------------------
# VAR recursion with time-gated cross-slice couplings
# --------------------------------------------------------------------------


@njit
def simulate_var_jit(ar, hop_src, hop_dst, hop_lag, hop_coef, hop_onset, drive):
    n_t, n = drive.shape
    p = ar.shape[1]
    y = np.zeros((n_t, n))
    n_hops = hop_src.shape[0]
    for t in range(n_t):
        for i in range(n):
            acc = drive[t, i]
            for lag in range(1, p + 1):
                if t - lag >= 0:
                    acc += ar[i, lag - 1] * y[t - lag, i]
            y[t, i] = acc
        for h in range(n_hops):
            lag = hop_lag[h]
            if t >= hop_onset[h] and t - lag >= 0:
                y[t, hop_dst[h]] += hop_coef[h] * y[t - lag, hop_src[h]]
    return y


def simulate_var_numpy(ar, hop_src, hop_dst, hop_lag, hop_coef, hop_onset, drive):
    n_t, n = drive.shape
    p = ar.shape[1]
    y = np.zeros((n_t, n))
    for t in range(n_t):
        acc = drive[t].copy()
        for lag in range(1, min(p, t) + 1):
            acc += ar[:, lag - 1] * y[t - lag]
        live = (t >= hop_onset) & (t - hop_lag >= 0)
        if live.any():
            np.add.at(
                acc,
                hop_dst[live],
                hop_coef[live] * y[t - hop_lag[live], hop_src[live]],
            )
        y[t] = acc
    return y


# --------------------------------------------------------------------------
# AR(1) pre-filter
# --------------------------------------------------------------------------


@njit
def ar1_filter_jit(u, a):
    out = np.empty_like(u)
    n_t, n = u.shape
    for i in range(n):
        prev = 0.0
        for t in range(n_t):
            prev = a * prev + u[t, i]
            out[t, i] = prev
    return out


def ar1_filter_numpy(u, a):
    return lfilter([1.0], [1.0, -a], u, axis=0)


# --------------------------------------------------------------------------
# Gaussian mean-shift CUSUM with restart
# --------------------------------------------------------------------------


@njit
def cusum_gaussian_jit(x, mu0, shift, var, kappa, h):
    n = x.shape[0]
    times = np.empty(n, dtype=np.int64)
    starts = np.empty(n, dtype=np.int64)
    scores = np.empty(n)
    n_alarm = 0
    s = 0.0
    start = 0
    scale = shift / var
    for t in range(n):
        llr = scale * (x[t] - mu0 - 0.5 * shift)
        s = s + llr - kappa
        if s <= 0.0:
            s = 0.0
            start = t + 1
        if s > h:
            times[n_alarm] = t
            starts[n_alarm] = start
            scores[n_alarm] = s
            n_alarm += 1
            s = 0.0
            start = t + 1
            mu0 += shift
    return times[:n_alarm], starts[:n_alarm], scores[:n_alarm], s


def cusum_gaussian_numpy(x, mu0, shift, var, kappa, h):
    # Lindley form: S_t = C_t - min(0, min_{s<=t} C_s) on each run between
    # alarms, C being the cumulative sum of the drift-corrected increments.
    x = np.asarray(x, dtype=float)
    scale = shift / var
    times, starts, scores = [], [], []
    begin, s_last = 0, 0.0
    while begin < x.shape[0]:
        inc = scale * (x[begin:] - mu0 - 0.5 * shift) - kappa
        c = np.cumsum(inc)
        s = c - np.minimum(np.minimum.accumulate(c), 0.0)
        s[s <= 0.0] = 0.0
        hit = np.flatnonzero(s > h)
        if hit.size == 0:
            s_last = float(s[-1])
            break
        first = int(hit[0])
        zeros = np.flatnonzero(s[:first] == 0.0)
        times.append(begin + first)
        starts.append(begin + (int(zeros[-1]) + 1 if zeros.size else 0))
        scores.append(float(s[first]))
        mu0 += shift
        begin = begin + first + 1
        s_last = 0.0
    return (
        np.asarray(times, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
        np.asarray(scores, dtype=float),
        s_last,
    )


# --------------------------------------------------------------------------
# Banded symmetric Toeplitz product  Gamma @ Q
# --------------------------------------------------------------------------


@njit
def banded_apply_jit(gamma, q):
    n, r = q.shape
    bw = gamma.shape[0] - 1
    out = np.empty((n, r))
    for t in range(n):
        lo = max(0, t - bw)
        hi = min(n - 1, t + bw)
        for j in range(r):
            acc = 0.0
            for s in range(lo, hi + 1):
                acc += gamma[abs(t - s)] * q[s, j]
            out[t, j] = acc
    return out


def banded_apply_numpy(gamma, q):
    q = np.asarray(q, dtype=float)
    out = gamma[0] * q
    n = q.shape[0]
    for h in range(1, min(gamma.shape[0], n)):
        out[h:] += gamma[h] * q[:-h]
        out[:-h] += gamma[h] * q[h:]
    return out


# --------------------------------------------------------------------------
# Regularised incomplete beta via modified Lentz continued fraction
# --------------------------------------------------------------------------


def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    f = d
    for m in range(1, BETACF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        f *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < BETACF_EPS:
            break
    return f


def _betainc(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def _f_sf(x, d1, d2):
    if not x > 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    # P(F > x) = I_{d2/(d2 + d1 x)}(d2/2, d1/2)
    return _betainc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))


_betacf_jit = njit(_betacf)


@njit
def _betainc_compiled(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf_jit(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf_jit(b, a, 1.0 - x) / b


@njit
def f_sf_jit(x, d1, d2):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        xi = x[i]
        if not xi > 0.0:
            out[i] = 1.0
        elif math.isinf(xi):
            out[i] = 0.0
        else:
            out[i] = _betainc_compiled(0.5 * d2[i], 0.5 * d1[i], d2[i] / (d2[i] + d1[i] * xi))
    return out


def f_sf_numpy(x, d1, d2):
    return np.array([_f_sf(float(a), float(b), float(c)) for a, b, c in zip(x, d1, d2)])


@njit
def betainc_jit(a, b, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _betainc_compiled(a[i], b[i], x[i])
    return out


def betainc_numpy(a, b, x):
    return np.array([_betainc(float(i), float(j), float(k)) for i, j, k in zip(a, b, x)])


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def _as_f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def simulate_var(ar, hop_src, hop_dst, hop_lag, hop_coef, hop_onset, drive):
    """Run ``y_t = sum_l ar[:, l] * y_{t-l} + couplings + drive_t`` from zero state."""
    ar, hop_coef, drive = _as_f64(ar, hop_coef, drive)
    ints = [np.ascontiguousarray(v, dtype=np.int64) for v in (hop_src, hop_dst, hop_lag, hop_onset)]
    impl = simulate_var_jit if USE_NUMBA else simulate_var_numpy
    return impl(ar, ints[0], ints[1], ints[2], hop_coef, ints[3], drive)


def ar1_filter(u, a):
    """Filter columns of ``u`` through ``e_t = a e_{t-1} + u_t`` (zero start)."""
    (u,) = _as_f64(u)
    squeeze = u.ndim == 1
    if squeeze:
        u = u[:, None]
    out = ar1_filter_jit(u, float(a)) if USE_NUMBA else ar1_filter_numpy(u, float(a))
    return out[:, 0] if squeeze else out


def cusum_gaussian(x, mu0, shift, var, kappa, h):
    """Page CUSUM on the Gaussian log-likelihood ratio, restarting after alarms.

    Returns ``(alarm_times, excursion_starts, alarm_scores, final_statistic)``.
    ``excursion_starts[m]`` is the first sample after the statistic last sat
    at zero before alarm ``m``, the usual change-time estimate.  After an
    alarm the statistic resets to zero and the post-change mean becomes the
    new pre-change mean (the shift is kept).
    """
    (x,) = _as_f64(x)
    impl = cusum_gaussian_jit if USE_NUMBA else cusum_gaussian_numpy
    return impl(x, float(mu0), float(shift), float(var), float(kappa), float(h))


def banded_apply(gamma, q):
    """Multiply the symmetric Toeplitz matrix with first row ``gamma`` (zero
    beyond ``len(gamma) - 1``) into the columns of ``q``."""
    gamma, q = _as_f64(gamma, q)
    squeeze = q.ndim == 1
    if squeeze:
        q = q[:, None]
    out = banded_apply_jit(gamma, q) if USE_NUMBA else banded_apply_numpy(gamma, q)
    return out[:, 0] if squeeze else out


def betainc(a, b, x):
    """Regularised incomplete beta ``I_x(a, b)``, elementwise."""
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, b, x)))
    shape = x.shape
    a, b, x = (np.ascontiguousarray(v).ravel() for v in (a, b, x))
    out = betainc_jit(a, b, x) if USE_NUMBA else betainc_numpy(a, b, x)
    return out.reshape(shape)


def f_sf(x, d1, d2):
    """Upper tail ``P(F_{d1,d2} > x)`` for real-valued degrees of freedom."""
    x, d1, d2 = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, d1, d2)))
    shape = x.shape
    x, d1, d2 = (np.ascontiguousarray(v).ravel() for v in (x, d1, d2))
    out = f_sf_jit(x, d1, d2) if USE_NUMBA else f_sf_numpy(x, d1, d2)
    return out.reshape(shape)
