"""Serial-dependence correction for the Granger F ratio.

The residual autocovariance is estimated with a Bartlett-tapered kernel and
treated as a banded Toeplitz matrix ``G``.  For an orthogonal projector ``A``
of rank ``r`` the quadratic form ``e' A e`` is matched to a scaled chi-square
through

    nu  = tr(A G)^2 / tr(A G A G)
    psi = tr(A G A G) / (tr(A G)^2 / r)

All traces are computed from the projector's orthonormal basis and the band
of ``G``; the ``n x n`` matrices are never formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import BoundConstants, InputError, NumericalError
from .granger import Projection, RawFStat
from .kernels import banded_apply, f_sf

logger = logging.getLogger(__name__)

OPERATORS = ("as_written", "difference_operator")


def icbrt(n: int) -> int:
    """Integer cube root, exact for perfect cubes (``n ** (1/3)`` is not)."""
    if n < 0:
        raise InputError("icbrt of a negative number")
    r = int(round(n ** (1.0 / 3.0)))
    while r ** 3 > n:
        r -= 1
    while (r + 1) ** 3 <= n:
        r += 1
    return r


@dataclass(frozen=True)
class AutocovEstimate:
    gamma: np.ndarray
    trunc_lag: int
    toeplitz_dim: int

    @property
    def long_run_ratio(self) -> float:
        return float((self.gamma[0] + 2.0 * self.gamma[1:].sum()) / self.gamma[0])


@dataclass(frozen=True)
class CorrectedFStat:
    f_tilde: float
    nu_num: float
    nu_den: float
    psi_num: float
    psi_den: float
    p_value: float
    operator: str = "as_written"


def estimate_autocov(residuals, trunc_lag: int | None = None) -> AutocovEstimate:
    """Bartlett-tapered sample autocovariance up to lag ``floor(n^(1/3))``."""
    e = np.asarray(residuals, dtype=float)
    n = e.shape[0]
    if n < 8:
        raise InputError(f"need at least 8 residuals, got {n}")
    e = e - e.mean()
    g0 = float(e @ e) / n
    if not g0 > 1e-300 or np.ptp(e) == 0.0:
        raise NumericalError("zero variance residuals")
    lag = icbrt(n) if trunc_lag is None else int(trunc_lag)
    lag = min(lag, n - 1)
    gamma = np.empty(lag + 1)
    gamma[0] = g0
    for h in range(1, lag + 1):
        gamma[h] = (1.0 - h / (lag + 1.0)) * float(e[h:] @ e[:-h]) / n
    return AutocovEstimate(gamma=gamma, trunc_lag=lag, toeplitz_dim=n)


def white_autocov(n: int, sigma2: float = 1.0) -> AutocovEstimate:
    """The exact i.i.d. covariance ``sigma2 * I`` in estimate form."""
    return AutocovEstimate(gamma=np.array([float(sigma2)]), trunc_lag=0, toeplitz_dim=int(n))


def _trace_gamma_sq(gamma, n):
    h = np.arange(1, min(len(gamma), n))
    return n * gamma[0] ** 2 + 2.0 * np.sum((n - h) * gamma[h] ** 2)


def projection_traces(proj: Projection, autocov: AutocovEstimate):
    """``(tr(A G), tr(A G A G))`` for the projector ``A``."""
    q = proj.basis
    n = q.shape[0]
    if autocov.toeplitz_dim != n:
        raise InputError(f"autocovariance dimension {autocov.toeplitz_dim} != projector dimension {n}")
    gamma = autocov.gamma
    if q.shape[1] == 0:
        t1, t2 = 0.0, 0.0
        gq_norm2 = 0.0
    else:
        gq = banded_apply(gamma, q)
        qgq = q.T @ gq
        t1 = float(np.trace(qgq))
        t2 = float(np.sum(qgq * qgq))
        gq_norm2 = float(np.sum(gq * gq))
    if proj.complement:
        t1 = n * gamma[0] - t1
        t2 = _trace_gamma_sq(gamma, n) - 2.0 * gq_norm2 + t2
    return t1, t2


def effective_dof(proj: Projection, autocov: AutocovEstimate):
    """``(nu, psi)`` for an orthogonal projector under the banded covariance."""
    r = proj.rank
    if r <= 0:
        raise InputError("rank-0 operator has no degrees of freedom")
    t1, t2 = projection_traces(proj, autocov)
    if not t1 > 0.0 or not t2 > 0.0:
        raise NumericalError(f"invalid autocovariance: tr(A G) = {t1!r}")
    nu = t1 * t1 / t2
    psi = t2 / (t1 * t1 / r)
    return nu, psi


def corrected_f(raw: RawFStat, autocov: AutocovEstimate, operator: str = "as_written") -> CorrectedFStat:
    """Dependence-corrected F ratio and its p-value.

    ``operator="as_written"`` divides the numerator by the inflation factor of
    the restricted projector; ``"difference_operator"`` uses the inflation of
    the projector the numerator quadratic form actually lives on.
    """
    if operator not in OPERATORS:
        raise InputError(f"unknown correction operator {operator!r}; expected one of {OPERATORS}")
    if raw.difference is None or raw.residual is None:
        raise InputError("raw statistic carries no projector handles")
    nu_num, psi_diff = effective_dof(raw.difference, autocov)
    nu_den, psi_den = effective_dof(raw.residual, autocov)
    if operator == "as_written":
        _, psi_num = effective_dof(raw.restricted, autocov)
    else:
        psi_num = psi_diff
    numerator = max(raw.rss_r - raw.rss_u, 0.0) / psi_num / nu_num
    denominator = raw.rss_u / psi_den / nu_den
    f_tilde = numerator / denominator
    p_value = float(f_sf(f_tilde, nu_num, nu_den))
    return CorrectedFStat(
        f_tilde=float(f_tilde),
        nu_num=float(nu_num),
        nu_den=float(nu_den),
        psi_num=float(psi_num),
        psi_den=float(psi_den),
        p_value=p_value,
        operator=operator,
    )


def raw_p_value(raw: RawFStat) -> float:
    """Classical p-value with integer degrees of freedom."""
    return float(f_sf(raw.f, raw.q_num, raw.den_dof))


def ks_bound_corrected(t: float, constants: BoundConstants, p: int, q: int, k: int) -> float:
    if t <= 0:
        raise InputError("T must be positive")
    return constants.c1 * constants.kappa4 / t + constants.c2 * (p + q + k) ** 2 / t ** 2


def ks_bound_iid(t: float, constants: BoundConstants, table_calibrated: bool = False) -> float:
    """First-order KS error of the uncorrected test.

    ``table_calibrated`` swaps ``C3 * Sigma_gamma`` for the product calibrated
    on the reference KS-bound column.
    """
    if t <= 0:
        raise InputError("T must be positive")
    if table_calibrated:
        return constants.c3_sigma_gamma_table / t
    return constants.c3 * constants.sigma_gamma / t
