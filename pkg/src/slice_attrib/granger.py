"""Resource-conditioned Granger regressions and the raw F ratio.

The unrestricted model regresses ``y_t`` on an intercept, ``p`` own lags,
the contemporaneous utilization vector ``z_t`` and ``q`` lags of ``x``.  The
restricted model drops the ``x`` lags.  Both are solved on the same rows
``max(p, q) .. T-1`` with a single Householder QR of the unrestricted design,
whose leading columns are exactly the restricted design.  That ordering means
the first ``r_R`` columns of ``Q`` span the restricted fit and the trailing
``q`` columns span the difference of the two hat matrices, which is what the
dependence correction needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, NumericalError, PairSeries

RANK_TOL = 1e-10
DEGENERATE_TOL = 1e-20


class CollinearDesignError(NumericalError):
    def __init__(self, column: str):
        super().__init__(f"collinear design: column {column!r} is numerically dependent")
        self.column = column


class DegenerateFitError(NumericalError):
    pass


@dataclass(frozen=True)
class Projection:
    """Orthogonal projector given by an orthonormal basis.

    ``complement=True`` represents ``I - Q Q'``.
    """

    basis: np.ndarray
    complement: bool = False

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])

    @property
    def rank(self) -> int:
        r = int(self.basis.shape[1])
        return self.dim - r if self.complement else r

    def dense(self) -> np.ndarray:
        p = self.basis @ self.basis.T
        return np.eye(self.dim) - p if self.complement else p


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    rss: float
    residuals: np.ndarray
    design_rank: int
    hat_trace: float
    column_names: tuple
    y_energy: float = 1.0


@dataclass(frozen=True)
class RawFStat:
    f: float
    q_num: int
    den_dof: int
    rss_u: float
    rss_r: float
    difference: Projection
    restricted: Projection
    residual: Projection


@dataclass(frozen=True)
class _Design:
    y: np.ndarray
    matrix: np.ndarray
    names: tuple
    n_restricted: int


def build_design(s: PairSeries, p: int, q: int, include_z: bool = True) -> _Design:
    if p < 1 or q < 1:
        raise InputError("lag orders must be positive")
    n_t = s.horizon
    start = max(p, q)
    k = s.z.shape[1] if include_z else 0
    n = n_t - start
    if n <= p + q + k + 1:
        raise InputError(
            f"window too short: {n_t} samples leave {n} rows for {p + q + k + 1} regressors"
        )
    cols = [np.ones(n)]
    names = ["const"]
    for lag in range(1, p + 1):
        cols.append(s.y[start - lag:n_t - lag])
        names.append(f"y_lag{lag}")
    if include_z:
        for j in range(k):
            cols.append(s.z[start:, j])
            names.append(f"z{j}")
    n_restricted = len(cols)
    for lag in range(1, q + 1):
        cols.append(s.x[start - lag:n_t - lag])
        names.append(f"x_lag{lag}")
    return _Design(
        y=np.asarray(s.y[start:], dtype=float),
        matrix=np.column_stack(cols).astype(float),
        names=tuple(names),
        n_restricted=n_restricted,
    )


def _qr_checked(x, names):
    q_mat, r_mat = np.linalg.qr(x, mode="reduced")
    diag = np.abs(np.diag(r_mat))
    # Scale-free test: compare each pivot with the column norm it came from.
    norms = np.linalg.norm(x, axis=0)
    norms[norms == 0] = 1.0
    rel = diag / norms
    bad = np.flatnonzero(rel < RANK_TOL * max(rel.max(), 1.0))
    if bad.size:
        raise CollinearDesignError(names[bad[0]])
    return q_mat, r_mat


def _solve(q_mat, r_mat, y, names):
    qty = q_mat.T @ y
    coef = np.linalg.solve(np.triu(r_mat), qty) if r_mat.size else np.zeros(0)
    fitted = q_mat @ qty
    resid = y - fitted
    return OlsFit(
        coefficients=coef,
        rss=float(resid @ resid),
        residuals=resid,
        design_rank=int(r_mat.shape[1]),
        hat_trace=float(r_mat.shape[1]),
        column_names=tuple(names),
        y_energy=float(y @ y),
    )


def fit_models(s: PairSeries, p: int = 5, q: int = 5, include_z: bool = True):
    """Least-squares fits of the unrestricted and restricted models.

    Returns ``(unrestricted, restricted, projections)`` where ``projections``
    is a dict with the difference, restricted and residual projectors on the
    effective sample.
    """
    d = build_design(s, p, q, include_z)
    q_mat, r_mat = _qr_checked(d.matrix, d.names)
    r0 = d.n_restricted
    unrestricted = _solve(q_mat, r_mat, d.y, d.names)
    restricted = _solve(q_mat[:, :r0], r_mat[:r0, :r0], d.y, d.names[:r0])
    projections = {
        "difference": Projection(q_mat[:, r0:]),
        "restricted": Projection(q_mat[:, :r0]),
        "residual": Projection(q_mat, complement=True),
    }
    return unrestricted, restricted, projections


def f_statistic(u: OlsFit, r: OlsFit, q: int, p: int, k: int, n: int, projections=None) -> RawFStat:
    """Nested-model F ratio.

    ``n`` is the number of rows in the common effective sample, so the
    denominator degrees of freedom ``n - p - q - k - 1`` equal the rank of the
    residual projector.
    """
    den = n - p - q - k - 1
    if den <= 0:
        raise InputError(f"window too short: residual degrees of freedom {den}")
    if u.rss <= DEGENERATE_TOL * u.y_energy:
        raise DegenerateFitError("degenerate fit: zero residual variance")
    num = max(r.rss - u.rss, 0.0)
    f = (num / q) / (u.rss / den)
    proj = projections or {}
    return RawFStat(
        f=float(f),
        q_num=int(q),
        den_dof=int(den),
        rss_u=float(u.rss),
        rss_r=float(r.rss),
        difference=proj.get("difference"),
        restricted=proj.get("restricted"),
        residual=proj.get("residual"),
    )


def granger_test(s: PairSeries, p: int = 5, q: int = 5, include_z: bool = True) -> RawFStat:
    """Fit both models and return the raw F ratio with projector handles."""
    u, r, proj = fit_models(s, p, q, include_z)
    n = u.residuals.shape[0]
    k = s.z.shape[1] if include_z else 0
    return f_statistic(u, r, q, p, k, n, proj)
