"""Resource contention score and the Itakura-Saito comparison of scoring rules."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import digamma, expit
from scipy.stats import beta as beta_dist

from .core import InputError, ModelParams

logger = logging.getLogger(__name__)

RULES = ("sigmoid", "min", "additive")


def sigmoid(x):
    """Logistic function; ``scipy.special.expit`` is stable for large ``|x|``."""
    return expit(x)


@dataclass(frozen=True)
class ContentionScore:
    rho: float
    per_resource: np.ndarray


def joint_allocation(a_i, a_j, rule: str = "sigmoid"):
    """Pairwise allocation factor of a scoring rule (elementwise)."""
    if rule == "sigmoid":
        return a_i * a_j
    if rule == "min":
        return np.minimum(a_i, a_j)
    if rule == "additive":
        return a_i + a_j
    raise InputError(f"unknown contention rule {rule!r}; expected one of {RULES}")


def score(a_i, a_j, u, params: ModelParams, rule: str = "sigmoid") -> ContentionScore:
    """``rho_ij = sum_k w_k * A_ik * A_jk * sigmoid(U_k - tau_k)``.

    ``rule`` swaps the product of allocations for ``min`` or the sum, which
    only the ablation study uses.
    """
    a_i, a_j, u = (np.asarray(v, dtype=float) for v in (a_i, a_j, u))
    w = np.asarray(params.w, dtype=float)
    tau = np.asarray(params.tau, dtype=float)
    if not (a_i.shape == a_j.shape == u.shape == w.shape):
        raise InputError(
            f"length mismatch: a_i {a_i.shape}, a_j {a_j.shape}, u {u.shape}, K={w.shape[0]}"
        )
    terms = w * joint_allocation(a_i, a_j, rule) * sigmoid(u - tau)
    return ContentionScore(rho=float(terms.sum()), per_resource=terms)


def pair_scores(alloc, util, params: ModelParams, rule: str = "sigmoid", weights=None):
    """Time-averaged contention for every ordered slice pair.

    ``alloc`` is ``T x N x K`` and ``util`` is ``T x K``.  Returns an ``N x N``
    matrix with zero diagonal.
    """
    alloc = np.asarray(alloc, dtype=float)
    util = np.asarray(util, dtype=float)
    w = np.asarray(params.w if weights is None else weights, dtype=float)
    s = sigmoid(util - np.asarray(params.tau, dtype=float)) * w  # T x K
    if rule == "sigmoid":
        rho = np.einsum("tik,tjk,tk->ij", alloc, alloc, s)
    else:
        a_i = alloc[:, :, None, :]
        a_j = alloc[:, None, :, :]
        rho = np.einsum("tijk,tk->ij", joint_allocation(a_i, a_j, rule), s)
    rho /= alloc.shape[0]
    np.fill_diagonal(rho, 0.0)
    return rho


def is_divergence(c, h):
    """Itakura-Saito divergence ``c/h - log(c/h) - 1``."""
    c = np.asarray(c, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(c <= 0) or np.any(h <= 0):
        raise InputError("Itakura-Saito divergence needs positive arguments")
    r = c / h
    out = r - np.log(r) - 1.0
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# scoring-rule comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ContentionDesign:
    """Setting for comparing scoring rules.

    Observed contention on resource ``k`` is ``c_k * A_i * A_j *
    sigmoid(U_k - tau_k) * xi`` with ``xi`` a mean-one Gamma(shape) noise,
    and ``U_k`` drawn from ``Beta(u_a, u_b)``.
    """

    c: tuple
    a_i: tuple
    a_j: tuple
    tau: tuple
    u_a: float = 1.0
    u_b: float = 1.0
    noise_shape: float = 4.0


def _rule_prediction(rule, design, k, u):
    a_i, a_j = design.a_i[k], design.a_j[k]
    return design.c[k] * joint_allocation(a_i, a_j, rule) * sigmoid(u - design.tau[k])


def _observed_mean(design, k, u):
    return design.c[k] * design.a_i[k] * design.a_j[k] * sigmoid(u - design.tau[k])


def _expected_is(mean, pred, shape):
    # E[B(m xi || h)] for xi ~ Gamma(shape, 1/shape):
    #   m/h - log(m/h) - E[log xi] - 1,  E[log xi] = digamma(s) - log(s)
    r = mean / pred
    return r - np.log(r) - (digamma(shape) - np.log(shape)) - 1.0


def compare_rules(design: ContentionDesign, n_draws: int = 20000, seed=0, rules=RULES) -> dict:
    """Monte Carlo total I-S divergence of each rule against noisy observations.

    Returns ``{rule: total}``.  The multiplicative sigmoid rule is the
    conditional mean of the observations, so it is the I-S minimiser.
    """
    if n_draws < 1000:
        raise InputError("need at least 1000 utilization draws")
    if design.u_a <= 0 or design.u_b <= 0:
        raise InputError("Beta parameters must be positive")
    if min(design.u_a, design.u_b) > 1e6:
        warnings.warn("utilization distribution is (nearly) a single atom", RuntimeWarning)
    rng = np.random.default_rng(seed)
    k_res = len(design.c)
    u = rng.beta(design.u_a, design.u_b, size=(n_draws, k_res))
    xi = rng.gamma(design.noise_shape, 1.0 / design.noise_shape, size=(n_draws, k_res))
    out = {}
    for rule in rules:
        total = 0.0
        for k in range(k_res):
            obs = _observed_mean(design, k, u[:, k]) * xi[:, k]
            pred = _rule_prediction(rule, design, k, u[:, k])
            total += float(np.mean(is_divergence(obs, pred)))
        out[rule] = total
    return out


def _beta_grid(design, n_points):
    eps = 1e-9
    grid = np.linspace(eps, 1.0 - eps, n_points)
    dens = beta_dist.pdf(grid, design.u_a, design.u_b)
    return grid, dens / trapezoid(dens, grid)


def expected_divergence(design: ContentionDesign, predictor, n_points: int = 10000) -> float:
    """Quadrature value of the total expected I-S divergence of ``predictor``.

    ``predictor(k, u)`` returns the predicted contention of resource ``k``
    on the utilization grid ``u``.
    """
    grid, dens = _beta_grid(design, n_points)
    total = 0.0
    for k in range(len(design.c)):
        m = _observed_mean(design, k, grid)
        h = predictor(k, grid)
        total += float(trapezoid(_expected_is(m, h, design.noise_shape) * dens, grid))
    return total


def compare_rules_quadrature(design: ContentionDesign, n_points: int = 10000, rules=RULES) -> dict:
    """Deterministic counterpart of :func:`compare_rules` (trapezoid over ``U``)."""
    return {
        rule: expected_divergence(
            design, lambda k, u, rule=rule: _rule_prediction(rule, design, k, u), n_points
        )
        for rule in rules
    }


def random_design(rng, k: int = 3) -> ContentionDesign:
    a = rng.uniform(0.05, 0.6, size=(2, k))
    return ContentionDesign(
        c=tuple(rng.uniform(0.1, 2.0, size=k)),
        a_i=tuple(a[0]),
        a_j=tuple(a[1]),
        tau=tuple(rng.uniform(0.3, 0.9, size=k)),
        u_a=float(rng.uniform(0.5, 5.0)),
        u_b=float(rng.uniform(0.5, 5.0)),
        noise_shape=float(rng.uniform(2.0, 10.0)),
    )
