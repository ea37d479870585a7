"""Shared domain types, window validation and pair extraction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9


class SliceAttribError(Exception):
    """Base class for errors raised by this package."""


class InputError(SliceAttribError, ValueError):
    pass


class NumericalError(SliceAttribError, ArithmeticError):
    pass


@dataclass(frozen=True)
class TelemetryWindow:
    """One analysis window of slice telemetry.

    Attributes
    ----------
    telemetry : ndarray, shape (T, N, d)
        Per-slice metric vectors.
    allocation : ndarray, shape (T, N, K)
        Fraction of resource ``k`` held by slice ``i`` at time ``t``.
    utilization : ndarray, shape (T, K)
        Load of each resource, in ``[0, 1]``.
    sample_period : float
        Seconds between samples.
    """

    telemetry: np.ndarray
    allocation: np.ndarray
    utilization: np.ndarray
    sample_period: float = 1.0

    @property
    def horizon(self) -> int:
        return int(self.telemetry.shape[0])

    @property
    def n_slices(self) -> int:
        return int(self.telemetry.shape[1])

    @property
    def n_metrics(self) -> int:
        return int(self.telemetry.shape[2])

    @property
    def n_resources(self) -> int:
        return int(self.utilization.shape[1])

    def slice_time(self, start: int, end: int) -> "TelemetryWindow":
        return TelemetryWindow(
            self.telemetry[start:end],
            self.allocation[start:end],
            self.utilization[start:end],
            self.sample_period,
        )


@dataclass(frozen=True)
class PairSeries:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        if len(self.y) != n or self.z.shape[0] != n:
            raise InputError(
                f"pair series lengths differ: x={n}, y={len(self.y)}, z={self.z.shape[0]}"
            )

    @property
    def horizon(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class ModelParams:
    """Fusion, contention and testing parameters."""

    w: tuple = (0.45, 0.31, 0.24)
    tau: tuple = (0.7, 0.7, 0.7)
    omega1: float = 0.67
    omega2: float = 0.33
    lam: float = 1e-3
    p: int = 5
    q: int = 5
    alpha: float = 0.05
    tau_causal: float = 0.5

    def __post_init__(self):
        if abs(self.omega1 + self.omega2 - 1.0) > 1e-12:
            raise InputError(f"omega1 + omega2 must be 1, got {self.omega1 + self.omega2!r}")
        if not (0.0 <= self.omega1 <= 1.0 and 0.0 <= self.omega2 <= 1.0):
            raise InputError("omega1 and omega2 must lie in [0, 1]")
        if any(v <= 0 for v in self.w):
            raise InputError(f"contention weights must be positive, got {self.w}")
        if len(self.w) != len(self.tau):
            raise InputError("w and tau must have the same length")
        if self.lam <= 0:
            raise InputError("lam must be positive")
        if self.p < 1 or self.q < 1:
            raise InputError("lag orders must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if not 0.0 <= self.tau_causal <= 1.0:
            raise InputError("tau_causal must lie in [0, 1]")

    @property
    def n_resources(self) -> int:
        return len(self.w)

    def to_dict(self) -> dict:
        return {
            "w": list(self.w),
            "tau": list(self.tau),
            "omega1": self.omega1,
            "omega2": self.omega2,
            "lam": self.lam,
            "p": self.p,
            "q": self.q,
            "alpha": self.alpha,
            "tau_causal": self.tau_causal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        for key in ("w", "tau"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


# Provenance of each default, written into every report.
BOUND_PROVENANCE = {
    "c1": "back-solved from the worked segment-length example (C1*kappa4 = 0.031)",
    "c2": "no reference value; set to 1.0",
    "c3": "back-solved from the worked segment-length example (C3*Delta_max = 3.2, Delta_max = 4)",
    "c4": "calibrated on the reference adversarial bound column (10.1 pp per unit, stored as a fraction)",
    "c3_sigma_gamma_table": "calibrated on the reference KS-bound column (exact 1/T scaling)",
    "kappa4": "reference innovation excess kurtosis",
    "sigma_gamma": "reference long-run variance ratio",
    "c_beta": "reference mixing constant",
    "beta_mix": "reference mixing rate",
}


@dataclass(frozen=True)
class BoundConstants:
    c1: float = 0.1
    c2: float = 1.0
    c3: float = 0.8
    c4: float = 0.101
    kappa4: float = 0.31
    sigma_gamma: float = 1.8
    c_beta: float = 2.1
    beta_mix: float = 0.329
    c3_sigma_gamma_table: float = 18.1

    def __post_init__(self):
        for name in ("c1", "c3", "c4", "c_beta", "beta_mix", "c3_sigma_gamma_table"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if self.c2 < 0:
            raise InputError("c2 must be >= 0")
        if self.kappa4 < -2:
            raise InputError("kappa4 must be >= -2")
        if self.sigma_gamma < 1:
            raise InputError("sigma_gamma must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    detection_delay: Optional[int] = None

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class Violation:
    field: str
    index: tuple
    value: object
    message: str

    def __str__(self):
        return f"{self.field}{list(self.index)}: {self.message} (observed {self.value!r})"


def validate_window(w: TelemetryWindow, max_reports: int = 50) -> list:
    """Check the structural and range invariants of a window.

    Returns a list of :class:`Violation`; empty means the window is usable.
    Never raises.  At most ``max_reports`` violations per category are
    listed so a badly broken window does not produce millions of records.
    """
    out = []
    tel = np.asarray(w.telemetry)
    alloc = np.asarray(w.allocation)
    util = np.asarray(w.utilization)

    if tel.ndim != 3:
        out.append(Violation("telemetry", (), tel.shape, "telemetry must be T x N x d"))
        return out
    n_t, n, d = tel.shape
    if n_t < 1:
        out.append(Violation("horizon", (), n_t, "horizon must be >= 1"))
    if n < 2:
        out.append(Violation("slices", (), n, "need at least 2 slices"))
    if d < 1:
        out.append(Violation("metrics", (), d, "need at least 1 metric per slice"))
    if util.ndim != 2 or util.shape[0] != n_t:
        out.append(Violation("utilization", (), util.shape, "utilization must be T x K"))
        return out
    k = util.shape[1]
    if k < 1:
        out.append(Violation("resources", (), k, "need at least 1 resource"))
    if alloc.shape != (n_t, n, k):
        out.append(Violation("allocation", (), alloc.shape, f"allocation must be {(n_t, n, k)}"))
        return out
    if not np.all(np.isfinite(tel)):
        idx = tuple(int(v) for v in np.argwhere(~np.isfinite(tel))[0])
        out.append(Violation("telemetry", idx, float(tel[idx]), "non-finite value"))

    for name, arr in (("allocation", alloc), ("utilization", util)):
        bad = np.argwhere(~((arr >= 0.0) & (arr <= 1.0)))
        for idx in bad[:max_reports]:
            idx = tuple(int(v) for v in idx)
            out.append(Violation(name, idx, float(arr[idx]), "entry outside [0, 1]"))

    sums = alloc.sum(axis=1)
    for t, kk in np.argwhere(sums > 1.0 + SIMPLEX_TOL)[:max_reports]:
        out.append(
            Violation("allocation", (int(t), int(kk)), float(sums[t, kk]),
                      "allocations of one resource sum above 1")
        )
    if not w.sample_period > 0:
        out.append(Violation("sample_period", (), w.sample_period, "must be positive"))
    return out


def extract_pair(w: TelemetryWindow, i: int, j: int, coord: int = 0) -> PairSeries:
    """Source ``i`` and target ``j`` scalar series plus the utilization matrix."""
    n, d = w.n_slices, w.n_metrics
    for name, v, hi in (("source", i, n), ("target", j, n), ("coord", coord, d)):
        if not 0 <= v < hi:
            raise IndexError(f"{name} index {v} out of range [0, {hi})")
    if i == j:
        raise InputError(f"self-pair rejected: ({i}, {j})")
    return PairSeries(
        x=w.telemetry[:, i, coord].copy(),
        y=w.telemetry[:, j, coord].copy(),
        z=w.utilization.copy(),
    )


# --------------------------------------------------------------------------
# directory format
# --------------------------------------------------------------------------


def _long_rows(arr):
    idx = np.indices(arr.shape).reshape(arr.ndim, -1).T
    return np.column_stack([idx, arr.reshape(-1)])


def _write_csv(path, header, rows, n_index):
    fmt = ["%d"] * n_index + ["%.17g"]
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt=fmt)


def _read_csv(path, shape):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.full(shape, np.nan)
    if data.size:
        idx = tuple(data[:, c].astype(np.int64) for c in range(len(shape)))
        out[idx] = data[:, -1]
    if np.isnan(out).any():
        raise InputError(f"{path}: missing entries for a {shape} array")
    return out


def save_window(w: TelemetryWindow, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(directory / "telemetry.csv", ["t", "slice", "coord", "value"], _long_rows(w.telemetry), 3)
    _write_csv(directory / "allocation.csv", ["t", "slice", "resource", "value"], _long_rows(w.allocation), 3)
    _write_csv(directory / "utilization.csv", ["t", "resource", "value"], _long_rows(w.utilization), 2)
    meta = {
        "N": w.n_slices,
        "K": w.n_resources,
        "T": w.horizon,
        "d": w.n_metrics,
        "sample_period": w.sample_period,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def load_window(directory) -> TelemetryWindow:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"window directory not found: {directory}")
    meta = json.loads((directory / "meta.json").read_text())
    n_t, n, k, d = meta["T"], meta["N"], meta["K"], meta["d"]
    return TelemetryWindow(
        telemetry=_read_csv(directory / "telemetry.csv", (n_t, n, d)),
        allocation=_read_csv(directory / "allocation.csv", (n_t, n, k)),
        utilization=_read_csv(directory / "utilization.csv", (n_t, k)),
        sample_period=float(meta.get("sample_period", 1.0)),
    )
