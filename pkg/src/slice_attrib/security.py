"""Utilization-spoofing adversary, robustness certificates and privacy calculators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import BoundConstants, InputError, ModelParams

STRATEGIES = ("uniform-up", "uniform-down", "worst-case-sign", "random")


@dataclass(frozen=True)
class AdversarySpec:
    """Budget of a utilization spoofer: at most ``k`` channels per sample,
    each moved by at most ``delta``."""

    delta: float
    k: int
    strategy: str = "uniform-up"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise InputError("delta must lie in [0, 1]")
        if self.k < 1:
            raise InputError("k must be >= 1")
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")


def spoof(u_series, spec: AdversarySpec, params: ModelParams | None = None, joint=None):
    """Perturbed copy of a ``T x K`` utilization series.

    ``uniform-up``/``uniform-down`` push channels ``0..k-1`` by ``+-delta``;
    ``random`` picks ``k`` channels and signs at random each sample;
    ``worst-case-sign`` picks, per sample, the ``k`` channels and signs with
    the largest contention change for a pair whose joint allocation
    ``A_ik * A_jk`` is ``joint`` (all ones if omitted).  Results are clamped
    to ``[0, 1]``.
    """
    u = np.array(u_series, dtype=float)
    if u.ndim != 2:
        raise InputError("utilization must be T x K")
    t, k_res = u.shape
    if spec.k > k_res:
        raise InputError(f"k={spec.k} exceeds the {k_res} resource channels")
    if spec.delta == 0.0:
        return u
    d = spec.delta
    eps = np.zeros_like(u)
    if spec.strategy in ("uniform-up", "uniform-down"):
        eps[:, :spec.k] = d if spec.strategy == "uniform-up" else -d
    elif spec.strategy == "random":
        rng = np.random.default_rng(spec.seed)
        for s in range(t):
            chans = rng.choice(k_res, size=spec.k, replace=False)
            eps[s, chans] = d * rng.choice((-1.0, 1.0), size=spec.k)
    else:
        params = params or ModelParams()
        w = np.asarray(params.w, dtype=float)
        tau = np.asarray(params.tau, dtype=float)
        a = np.ones(k_res) if joint is None else np.asarray(joint, dtype=float)
        base = expit(u - tau)
        up = np.abs(expit(np.clip(u + d, 0.0, 1.0) - tau) - base)
        dn = np.abs(expit(np.clip(u - d, 0.0, 1.0) - tau) - base)
        sign = np.where(up >= dn, 1.0, -1.0)
        gain = w * a * np.maximum(up, dn)
        # stable sort keeps the lowest channel index on ties
        top = np.argsort(-gain, axis=1, kind="stable")[:, :spec.k]
        rows = np.arange(t)[:, None]
        eps[rows, top] = d * sign[rows, top]
    return np.clip(u + eps, 0.0, 1.0)


def contention_perturbation_bound(w_max: float, k: int, delta: float) -> float:
    """``W_max k delta / 4``: the sigmoid's slope is at most 1/4."""
    return w_max * k * delta / 4.0


def fdr_inflation_bound(fdr0: float, delta: float, k: int, n_resources: int, n_slices: int,
                        alpha: float, omega2: float, w_max: float, c4: float) -> float:
    """``fdr0 + C4 omega2 W_max k delta sqrt(K ln(N / alpha))``.

    ``fdr0`` and the result share units; with ``C4`` as a fraction both are
    fractions.
    """
    return fdr0 + c4 * omega2 * w_max * k * delta * math.sqrt(n_resources * math.log(n_slices / alpha))


def breakdown_point(omega1: float, omega2: float, w_max: float, k: int, delta_phi: float,
                    form: str = "proof") -> float:
    """Smallest spoofing magnitude that can move a fused score across its margin.

    ``form="proof"`` compares ``omega2 W_max k delta / 4`` with the
    ``omega1 delta_phi / 4`` margin; ``form="statement"`` keeps the extra
    factor 1/4 of the closed form as usually quoted.
    """
    if min(omega1, omega2, w_max, k, delta_phi) <= 0:
        raise InputError("all breakdown inputs must be positive")
    value = omega1 * delta_phi / (omega2 * w_max * k)
    if form == "proof":
        return value
    if form == "statement":
        return value / 4.0
    raise InputError(f"unknown form {form!r}")


def decision_flips(phi: float, a_i, a_j, u_series, params: ModelParams, spec: AdversarySpec) -> bool:
    """Whether spoofing ``u_series`` moves the pair's fused score across ``tau_causal``.

    The contention term is time-averaged exactly as in attribution.
    """
    u = np.asarray(u_series, dtype=float)
    joint = np.asarray(a_i, dtype=float) * np.asarray(a_j, dtype=float)
    w = np.asarray(params.w, dtype=float)
    tau = np.asarray(params.tau, dtype=float)

    def gamma(series):
        rho = float(np.mean(expit(series - tau) @ (w * joint)))
        return params.omega1 * phi + params.omega2 * rho

    before = gamma(u) > params.tau_causal
    after = gamma(spoof(u, spec, params, joint)) > params.tau_causal
    return before != after


# --------------------------------------------------------------------------
# privacy
# --------------------------------------------------------------------------


def gaussian_dp_sigma(sensitivity: float, epsilon: float, dp_delta: float) -> float:
    """Classical Gaussian-mechanism scale ``Delta_f sqrt(2 ln(1.25/delta)) / epsilon``."""
    if sensitivity <= 0 or epsilon <= 0 or not 0 < dp_delta < 1:
        raise InputError("need sensitivity > 0, epsilon > 0 and 0 < delta < 1")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / dp_delta)) / epsilon


def per_hop_sigma(sensitivity: float, epsilon: float, dp_delta: float, path_len: int) -> float:
    """Noise scale when the end-to-end budget is split evenly over ``path_len`` hops."""
    if path_len < 1:
        raise InputError("path length must be >= 1")
    return gaussian_dp_sigma(sensitivity, epsilon / path_len, dp_delta)


def sensitivity_for_sigma(sigma: float, epsilon: float, dp_delta: float) -> float:
    """Inverse of :func:`gaussian_dp_sigma` in the sensitivity."""
    return sigma / gaussian_dp_sigma(1.0, epsilon, dp_delta)


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float
    dp_delta: float
    sensitivity: float
    path_len: int = 5
    n_slices: int = 15
    path_entropy: float | None = None

    @property
    def sigma_dp(self) -> float:
        return gaussian_dp_sigma(self.sensitivity, self.epsilon, self.dp_delta)


def dp_perturb(gammas, sigma_dp: float, seed=0) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma^2)`` to fused scores and clamp to ``[0, 1]``."""
    g = np.asarray(gammas, dtype=float)
    if sigma_dp < 0:
        raise InputError("sigma_dp must be >= 0")
    if sigma_dp == 0:
        return g.copy()
    rng = np.random.default_rng(seed)
    return np.clip(g + rng.normal(0.0, sigma_dp, size=g.shape), 0.0, 1.0)


@dataclass(frozen=True)
class PrivacyBound:
    value: float
    vacuous: bool


def privacy_floor(n: int, l: int, path_entropy: float) -> PrivacyBound:
    """Leakage floor ``H - 1 - log(2 N^L)`` in nats; vacuous when not positive."""
    if n < 2 or l < 1:
        raise InputError("need N >= 2 and L >= 1")
    v = path_entropy - 1.0 - (math.log(2.0) + l * math.log(n))
    return PrivacyBound(v, v <= 0.0)


def min_epsilon(n: int, l: int, dp_delta: float, path_entropy: float) -> PrivacyBound:
    """Smallest epsilon any post-processing of the path can reach; vacuous when not positive."""
    if not 0 < dp_delta < 1:
        raise InputError("dp_delta must lie in (0, 1)")
    floor = privacy_floor(n, l, path_entropy).value
    scale = l * math.log(n)
    v = floor / scale - math.log(1.0 / dp_delta) / scale
    return PrivacyBound(v, v <= 0.0)


def entropy_for_min_epsilon(n: int, l: int, dp_delta: float, epsilon: float) -> float:
    """Path entropy (nats) at which :func:`min_epsilon` equals ``epsilon``."""
    scale = l * math.log(n)
    return epsilon * scale + math.log(1.0 / dp_delta) + 1.0 + math.log(2.0) + scale


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

REFERENCE_FDR0 = 0.124
REFERENCE_DELTA_PHI = 0.21
REFERENCE_DP = {"epsilon": 0.89, "dp_delta": 0.02, "sigma_dp": 0.31, "entropy_bits": 14.3}


def certificate_report(params: ModelParams | None = None, constants: BoundConstants | None = None,
                       n_slices: int = 15, path_len: int = 5, k: int = 3,
                       deltas=(0.0, 0.1, 0.25, 0.5, 0.75, 1.0), sensitivity: float = 0.0959) -> dict:
    """Every robustness and privacy number with its vacuity flags."""
    params = params or ModelParams()
    constants = constants or BoundConstants()
    k_res = params.n_resources
    w_max = max(params.w)
    fdr = [
        {"delta": d,
         "bound": fdr_inflation_bound(REFERENCE_FDR0, d, k, k_res, n_slices, params.alpha,
                                      params.omega2, w_max, constants.c4),
         "contention_bound": contention_perturbation_bound(w_max, k, d)}
        for d in deltas
    ]
    h_uniform = path_len * math.log(n_slices)
    eps_ref = REFERENCE_DP["epsilon"]
    h_needed = entropy_for_min_epsilon(n_slices, path_len, REFERENCE_DP["dp_delta"], eps_ref)
    floor_uniform = privacy_floor(n_slices, path_len, h_uniform)
    eps_uniform = min_epsilon(n_slices, path_len, REFERENCE_DP["dp_delta"], h_uniform)
    return {
        "fdr_inflation": fdr,
        "fdr0": REFERENCE_FDR0,
        "c4": constants.c4,
        "breakdown_point": {
            "proof_form": breakdown_point(params.omega1, params.omega2, w_max, 1, REFERENCE_DELTA_PHI),
            "statement_form": breakdown_point(params.omega1, params.omega2, w_max, 1,
                                              REFERENCE_DELTA_PHI, form="statement"),
            "delta_phi": REFERENCE_DELTA_PHI,
            "w_max": w_max,
        },
        "privacy": {
            "sigma_dp": gaussian_dp_sigma(sensitivity, eps_ref, REFERENCE_DP["dp_delta"]),
            "sensitivity": sensitivity,
            "per_hop_sigma": {l: per_hop_sigma(sensitivity, eps_ref, REFERENCE_DP["dp_delta"], l)
                              for l in range(1, path_len + 1)},
            "uniform_path_entropy_nats": h_uniform,
            "uniform_path_entropy_bits": h_uniform / math.log(2.0),
            "floor_at_uniform_entropy": floor_uniform.value,
            "floor_vacuous": floor_uniform.vacuous,
            "min_epsilon_at_uniform_entropy": eps_uniform.value,
            "min_epsilon_vacuous": eps_uniform.vacuous,
            "entropy_for_reference_epsilon_nats": h_needed,
            "entropy_for_reference_epsilon_bits": h_needed / math.log(2.0),
            "reference": dict(REFERENCE_DP),
            "consistent_with_reference": abs(h_needed / math.log(2.0) - REFERENCE_DP["entropy_bits"]) < 0.05,
        },
    }
