"""Regularised maximum-likelihood fit of the fusion and contention parameters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import InputError, ModelParams, NumericalError

logger = logging.getLogger(__name__)

W_FLOOR = 1e-6
GAMMA_FLOOR = 1e-12
REFERENCE_RADIUS_NOTE = (
    "the reference worked example multiplies 2000 by 0.523 and reports 0.52; "
    "the formula itself gives the value reported here"
)


def effective_sample_size(t: float, c_beta: float, beta_mix: float) -> float:
    """``T beta / (C_beta (1 - exp(-beta)) + beta)``."""
    if t <= 0 or c_beta < 0 or beta_mix <= 0:
        raise InputError("T and beta must be positive, C_beta nonnegative")
    return t * beta_mix / (c_beta * (1.0 - math.exp(-beta_mix)) + beta_mix)


def convergence_radius(t_eff: float, k: int, lam: float, delta: float) -> float:
    """``(2 / lam) sqrt((2K + 2) log(2 / delta) / t_eff)``."""
    if t_eff <= 0 or lam <= 0 or not 0 < delta < 1:
        raise InputError("t_eff, lam must be positive and delta in (0, 1)")
    return (2.0 / lam) * math.sqrt((2 * k + 2) * math.log(2.0 / delta) / t_eff)


def lipschitz_gamma(omega2: float, n: int, k: int, w_max: float) -> float:
    return omega2 * n * k * w_max / 4.0


# --------------------------------------------------------------------------
# parameter vector
# --------------------------------------------------------------------------


def pack(params: ModelParams) -> np.ndarray:
    return np.concatenate([params.w, params.tau, [params.omega1, params.omega2]]).astype(float)


def unpack(theta: np.ndarray, template: ModelParams) -> ModelParams:
    k = template.n_resources
    return ModelParams(
        w=tuple(float(v) for v in theta[:k]),
        tau=tuple(float(v) for v in theta[k:2 * k]),
        omega1=float(theta[2 * k]),
        omega2=float(theta[2 * k + 1]),
        lam=template.lam,
        p=template.p,
        q=template.q,
        alpha=template.alpha,
        tau_causal=template.tau_causal,
    )


def project(theta: np.ndarray, k: int) -> np.ndarray:
    out = np.array(theta, dtype=float)
    out[:k] = np.maximum(out[:k], W_FLOOR)
    # Euclidean projection of (omega1, omega2) onto the segment o1 + o2 = 1, o >= 0;
    # points already on it are kept so that projecting twice changes nothing
    o1, o2 = out[2 * k], out[2 * k + 1]
    if 0.0 <= o1 <= 1.0 and 0.0 <= o2 <= 1.0 and abs(o1 + o2 - 1.0) <= 4 * np.finfo(float).eps:
        return out
    o1 = np.clip(0.5 * (o1 - o2 + 1.0), 0.0, 1.0)
    out[2 * k], out[2 * k + 1] = o1, 1.0 - o1
    return out


# --------------------------------------------------------------------------
# likelihood
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HopData:
    """Everything one labelled hop contributes to the likelihood.

    ``phi[j]`` is the normalised evidence of ``source -> j`` and
    ``joint[t, j, k] = A_source,k(t) * A_j,k(t)``; ``util`` is ``T x K``.
    ``candidates`` masks the competing targets (all slices but the source).
    """

    source: int
    target: int
    phi: np.ndarray
    joint: np.ndarray
    util: np.ndarray
    candidates: np.ndarray


def _gamma_and_grad(theta, hop: HopData, k: int):
    w, tau = theta[:k], theta[k:2 * k]
    o1, o2 = theta[2 * k], theta[2 * k + 1]
    s = expit(hop.util - tau)  # T x K
    ds = s * (1.0 - s)
    feat_w = np.einsum("tjk,tk->jk", hop.joint, s) / hop.util.shape[0]  # N x K
    feat_tau = -np.einsum("tjk,tk->jk", hop.joint, ds) / hop.util.shape[0]
    rho = feat_w @ w
    gamma = o1 * hop.phi + o2 * rho
    n = gamma.shape[0]
    grad = np.zeros((n, theta.shape[0]))
    grad[:, :k] = o2 * feat_w
    grad[:, k:2 * k] = o2 * feat_tau * w
    grad[:, 2 * k] = hop.phi
    grad[:, 2 * k + 1] = rho
    return gamma, grad


def log_likelihood(theta, hops, k: int, lam: float, with_grad: bool = True):
    """Penalised path log-likelihood and its gradient.

    Each hop contributes ``log Gamma_ab - log sum_j Gamma_aj`` over competing
    targets ``j``.
    """
    total = 0.0
    grad = np.zeros_like(theta)
    for hop in hops:
        gamma, g = _gamma_and_grad(theta, hop, k)
        gamma = np.maximum(gamma, GAMMA_FLOOR)
        mask = hop.candidates
        z = gamma[mask].sum()
        total += math.log(gamma[hop.target]) - math.log(z)
        if with_grad:
            grad += g[hop.target] / gamma[hop.target] - g[mask].sum(axis=0) / z
    total -= lam * float(theta @ theta)
    grad -= 2.0 * lam * theta
    return (total, grad) if with_grad else total


def numerical_gradient(theta, hops, k, lam, step=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (log_likelihood(theta + e, hops, k, lam, False)
                - log_likelihood(theta - e, hops, k, lam, False)) / (2 * step)
    return g


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FitReport:
    theta: ModelParams
    objective: float
    iterations: int
    grad_norm: float
    t_eff: float
    convergence_radius: float
    lipschitz_gamma: float
    converged: bool
    note: str = REFERENCE_RADIUS_NOTE

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "objective": self.objective,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "t_eff": self.t_eff,
            "convergence_radius": self.convergence_radius,
            "lipschitz_gamma": self.lipschitz_gamma,
            "converged": self.converged,
            "note": self.note,
        }


def scenario_hops(scenario, params: ModelParams, options=None) -> list:
    """Labelled hops of one scenario with the Granger evidence precomputed."""
    from .inference import AttributionOptions, _segment_tests, normalize_f

    options = options or AttributionOptions()
    w = scenario.window
    truth = scenario.truth_path.slices
    if len(truth) < 2:
        return []
    warnings_out: list = []
    rows = _segment_tests(w, 0, params, options, warnings_out)
    ok = [r for r in rows if r[2] is not None]
    phi_vals = normalize_f([r[2] for r in ok])
    n = w.n_slices
    phi = np.zeros((n, n))
    for r, v in zip(ok, phi_vals):
        phi[r[0], r[1]] = v
    hops = []
    for a, b in zip(truth[:-1], truth[1:]):
        joint = w.allocation[:, a, None, :] * w.allocation
        cand = np.ones(n, dtype=bool)
        cand[a] = False
        hops.append(HopData(a, b, phi[a].copy(), joint, w.utilization.copy(), cand))
    return hops


def fit(scenarios, params: ModelParams | None = None, lam: float | None = None,
        tol: float = 1e-6, max_iter: int = 10000, constants=None, delta: float = 0.05,
        hops=None) -> FitReport:
    """Projected gradient ascent with Armijo backtracking.

    ``hops`` may be passed directly (precomputed with :func:`scenario_hops`)
    to skip the Granger stage.
    """
    from .core import BoundConstants

    params = params or ModelParams()
    constants = constants or BoundConstants()
    lam = params.lam if lam is None else float(lam)
    k = params.n_resources
    if hops is None:
        if not scenarios:
            raise InputError("need at least one scenario")
        hops = [h for s in scenarios for h in scenario_hops(s, params)]
    if not hops:
        raise InputError("scenarios carry no labelled hops")

    theta = project(pack(params), k)
    obj, grad = log_likelihood(theta, hops, k, lam)
    if not np.any(np.abs(grad) > 0):
        raise NumericalError("uninformative scenarios: zero gradient at the start")

    def pg_norm(th, g):
        return float(np.linalg.norm(project(th + g, k) - th))

    step = 1.0
    it = 0
    gnorm = pg_norm(theta, grad)
    while it < max_iter and gnorm >= tol:
        it += 1
        while True:
            cand = project(theta + step * grad, k)
            diff = cand - theta
            new_obj, new_grad = log_likelihood(cand, hops, k, lam)
            if new_obj >= obj + 1e-4 * float(grad @ diff) or step < 1e-14:
                break
            step *= 0.5
        if new_obj < obj - 1e-9:
            break
        theta, obj, grad = cand, new_obj, new_grad
        gnorm = pg_norm(theta, grad)
        step = min(step * 2.0, 1e6)

    horizon = scenarios[0].window.horizon if scenarios else hops[0].util.shape[0]
    n = hops[0].phi.shape[0]
    t_eff = effective_sample_size(horizon, constants.c_beta, constants.beta_mix)
    fitted = unpack(theta, params)
    return FitReport(
        theta=fitted,
        objective=float(obj),
        iterations=it,
        grad_norm=gnorm,
        t_eff=t_eff,
        convergence_radius=convergence_radius(t_eff, k, lam, delta),
        lipschitz_gamma=lipschitz_gamma(fitted.omega2, n, k, max(fitted.w)),
        converged=gnorm < tol,
    )


def kfold_indices(m: int, folds: int, seed=0):
    """Deterministic shuffled K-fold split; yields ``(train, test)`` index arrays."""
    if not 2 <= folds <= m:
        raise InputError("need 2 <= folds <= number of items")
    order = np.random.default_rng(seed).permutation(m)
    parts = np.array_split(order, folds)
    for i in range(folds):
        test = np.sort(parts[i])
        train = np.sort(np.concatenate([parts[j] for j in range(folds) if j != i]))
        yield train, test
