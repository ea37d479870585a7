"""Seeded Monte Carlo experiments and their machine-readable reports.

Every experiment returns an :class:`ExperimentResult` holding a summary
tree, flat table rows for CSV output and a list of checks.  Checks of kind
``acceptance`` decide the exit status; ``diagnostic`` checks are reported
but never fail a run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest, bootstrap

from . import __version__
from .contention import compare_rules_quadrature, pair_scores, random_design
from .core import BOUND_PROVENANCE, BoundConstants, InputError, ModelParams, extract_pair
from .correction import (
    corrected_f,
    estimate_autocov,
    ks_bound_corrected,
    ks_bound_iid,
    raw_p_value,
)
from .granger import CollinearDesignError, f_statistic, fit_models
from .inference import (
    AttributionOptions,
    NoAdmissibleEdges,
    attribute,
    bh_adjust,
    collect_evidence,
    edge_f1,
    false_edges,
    path_matches,
    prds_null_ensemble,
    simes_fkg_bound,
    union_bound,
)
from .kernels import BACKEND
from .learning import REFERENCE_RADIUS_NOTE, convergence_radius, effective_sample_size
from .security import (
    REFERENCE_DELTA_PHI,
    REFERENCE_FDR0,
    AdversarySpec,
    breakdown_point,
    certificate_report,
    decision_flips,
    fdr_inflation_bound,
    per_hop_sigma,
    spoof,
)
from .segmentation import (
    CusumConfig,
    cusum_scan,
    detect_changes,
    gaussian_kl,
    mean_delay_bound,
    required_segment_length,
    resolve_kappa,
    window_changepoints,
)
from .simulator import (
    AttackHop,
    RegimeChange,
    ScenarioConfig,
    apply_allocation_noise,
    generate,
)

logger = logging.getLogger(__name__)

EXPERIMENTS = ("type1", "nonstationary", "adversarial", "noise", "ablation", "case-study", "bounds")

# Default trial counts; the full suite stays under half an hour on one core.
DEFAULT_TRIALS = {
    "type1": 5000,
    "nonstationary": 200,
    "adversarial": 100,
    "noise": 200,
    "ablation": 200,
    "case-study": 100,
    "bounds": 1,
}

REFERENCE_TYPE1 = {
    100: {"standard": 0.091, "corrected": 0.059, "ks_bound": 0.181},
    200: {"standard": 0.073, "corrected": 0.053, "ks_bound": 0.091},
    500: {"standard": 0.061, "corrected": 0.051, "ks_bound": 0.037},
    1000: {"standard": 0.053, "corrected": 0.050, "ks_bound": 0.019},
}
REFERENCE_FDR_BOUND = {0.0: 0.124, 0.1: 0.146, 0.25: 0.167, 0.5: 0.213, 0.75: 0.261, 1.0: 0.310}
CASE_STUDY_PATH = (2, 5, 7, 11, 13, 9)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    trials: int | None = None
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InputError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.trials is not None and self.trials < 1:
            raise InputError("trials must be >= 1")
        if self.seed < 0:
            raise InputError("seed must be a nonnegative integer")

    @property
    def n_trials(self) -> int:
        return DEFAULT_TRIALS[self.experiment] if self.trials is None else int(self.trials)

    def canonical(self) -> dict:
        return {
            "experiment": self.experiment,
            "trials": self.n_trials,
            "seed": int(self.seed),
            "overrides": self.overrides,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentResult:
    summary: dict
    rows: list
    checks: list

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks if c["kind"] == "acceptance")


# --------------------------------------------------------------------------
# plumbing
# --------------------------------------------------------------------------


def trial_seed(master: int, stream: str, index: int) -> int:
    """Counter-based seed of trial ``index`` in a named stream.

    Depends only on its arguments, so any execution order or worker count
    sees the same seeds.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(zlib.crc32(stream.encode()), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def seeds(master: int, stream: str, n: int) -> list:
    return [trial_seed(master, stream, i) for i in range(n)]


def pmap(fn, items, jobs: int = 1) -> list:
    """Ordered map, optionally over a process pool."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def wilson(k: int, n: int) -> list:
    if n == 0:
        return [float("nan"), float("nan")]
    ci = binomtest(int(k), int(n)).proportion_ci(0.95, method="wilson")
    return [float(ci.low), float(ci.high)]


def bootstrap_mean(values, seed: int) -> list:
    """Percentile bootstrap (1000 resamples) for a mean."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return [float("nan"), float("nan")]
    if v.size < 2 or np.ptp(v) == 0.0:
        m = float(v.mean())
        return [m, m]
    res = bootstrap((v,), np.mean, n_resamples=1000, method="percentile",
                    rng=np.random.default_rng(seed), vectorized=True)
    return [float(res.confidence_interval.low), float(res.confidence_interval.high)]


def rate(flags) -> dict:
    flags = [bool(f) for f in flags]
    k, n = sum(flags), len(flags)
    return {"value": k / n if n else float("nan"), "count": k, "n": n, "ci95": wilson(k, n)}


def mean_ci(values, seed: int) -> dict:
    v = np.asarray(values, dtype=float)
    return {"value": float(v.mean()) if v.size else float("nan"), "n": int(v.size),
            "ci95": bootstrap_mean(v, seed)}


def check(name: str, value, target: str, passed: bool, kind: str = "acceptance", note: str = "") -> dict:
    out = {"name": name, "value": value, "target": target, "passed": bool(passed), "kind": kind}
    if note:
        out["note"] = note
    return out


def row(table: str, label, metric: str, value, ci=None) -> dict:
    lo, hi = (ci if ci is not None else (None, None))
    return {"table": table, "label": str(label), "metric": metric, "value": value,
            "ci_low": lo, "ci_high": hi}


def _opt(overrides: dict, key: str, default):
    return overrides.get(key, default)


# --------------------------------------------------------------------------
# scenario families
# --------------------------------------------------------------------------


def corpus_config(seed: int, horizon: int = 600, effect: float = 0.5, lengths=(3, 4),
                  n_slices: int = 15) -> ScenarioConfig:
    """One scenario of the fixed attribution corpus.

    A random path of 3 or 4 slices with equal per-hop effect size, two
    confounded pairs on random resources and a random attacked resource.
    """
    rng = np.random.default_rng((int(seed), 1))
    length = int(rng.choice(lengths))
    perm = rng.permutation(n_slices)
    path, rest = perm[:length], perm[length:]
    k1, k2 = (int(v) for v in rng.integers(0, 3, 2))
    hops = (AttackHop(int(path[0]), 0, 1, 0.0),) + tuple(
        AttackHop(int(s), 10 * (i + 1), 1, effect) for i, s in enumerate(path[1:])
    )
    return ScenarioConfig(
        n_slices=n_slices, horizon=horizon, attack_path=hops, hop_scale="effect",
        confounder_pairs=((int(rest[0]), int(rest[1]), k1), (int(rest[2]), int(rest[3]), k2)),
        attack_resource=int(rng.integers(0, 3)), seed=int(seed),
    )


def regime_config(seed: int, horizon: int = 1000, effect: float = 0.5, magnitude: float = 3.0,
                  phased: bool = True, n_slices: int = 15) -> ScenarioConfig:
    """One scenario of the regime-change corpus.

    Two to four level shifts common to all slices, at least 100 samples
    apart, of size ``U(m, 2m)`` in innovation units with random sign.  With
    ``phased`` the attack grows in steps: the first hop starts at once and
    every later hop starts at one of the shifts, so each regime carries a
    longer chain.  Without it all hops start at the beginning.
    """
    rng = np.random.default_rng((int(seed), 2))
    length = int(rng.choice((3, 4)))
    perm = rng.permutation(n_slices)
    path, rest = perm[:length], perm[length:]
    n_changes = int(rng.integers(max(2, length - 2), 5))
    grid = np.arange(horizon // 10, 9 * horizon // 10)
    while True:
        times = np.sort(rng.choice(grid, n_changes, replace=False))
        if np.all(np.diff(times) >= 100):
            break
    if phased:
        onsets = [0, 1] + [int(t) for t in times[:length - 2]]
    else:
        onsets = list(range(length))
    hops = (AttackHop(int(path[0]), onsets[0], 1, 0.0),) + tuple(
        AttackHop(int(s), onsets[i + 1], 1, effect) for i, s in enumerate(path[1:])
    )
    changes = tuple(
        RegimeChange(int(t), float(rng.uniform(magnitude, 2 * magnitude) * rng.choice((-1.0, 1.0))))
        for t in times
    )
    return ScenarioConfig(
        n_slices=n_slices, horizon=horizon, attack_path=hops, hop_scale="effect",
        regime_changes=changes,
        confounder_pairs=((int(rest[0]), int(rest[1]), 0), (int(rest[2]), int(rest[3]), 1)),
        seed=int(seed),
    )


def case_study_config(seed: int, horizon: int = 3000, effect: float = 0.5) -> ScenarioConfig:
    """Fixed five-hop chain through six slices with two CPU-confounded pairs."""
    hops = (AttackHop(CASE_STUDY_PATH[0], 0, 1, 0.0),) + tuple(
        AttackHop(s, 10 * (i + 1), 1, effect) for i, s in enumerate(CASE_STUDY_PATH[1:])
    )
    return ScenarioConfig(
        horizon=horizon, attack_path=hops, hop_scale="effect",
        confounder_pairs=((0, 1, 0), (3, 4, 0)), seed=int(seed),
    )


def _discoveries(report, truth) -> tuple:
    found = {(e.source, e.target) for e in report.graph.edges}
    false = len(found - set(truth.edges))
    return len(found), false


# --------------------------------------------------------------------------
# type1
# --------------------------------------------------------------------------


def _pair_rejections(window, params: ModelParams, conditioning: bool = True):
    ps = extract_pair(window, 0, 1)
    u, r, proj = fit_models(ps, params.p, params.q, conditioning)
    k = window.n_resources if conditioning else 0
    raw = f_statistic(u, r, params.q, params.p, k, u.residuals.shape[0], proj)
    ac = estimate_autocov(u.residuals)
    a = params.alpha
    return (raw_p_value(raw) < a,
            corrected_f(raw, ac, "as_written").p_value < a,
            corrected_f(raw, ac, "difference_operator").p_value < a)


def _null_trial(args):
    """Rejection flags of one null pair, or None when a utilization column
    sits clamped for the whole window and the design is collinear."""
    horizon, seed = args
    sc = generate(ScenarioConfig(n_slices=2, horizon=horizon, seed=seed))
    try:
        return _pair_rejections(sc.window, ModelParams())
    except CollinearDesignError:
        return None


def _confounder_trial(args):
    horizon, seed = args
    sc = generate(ScenarioConfig(n_slices=2, horizon=horizon, confounder_pairs=((0, 1, 0),), seed=seed))
    params = ModelParams()
    try:
        cond = _pair_rejections(sc.window, params, True)[1]
    except CollinearDesignError:
        return None
    uncond = _pair_rejections(sc.window, params, False)[1]
    return cond, uncond


def _prds_trial(seed):
    params = ModelParams()
    rng = np.random.default_rng(seed)
    p, is_null = prds_null_ensemble(rng)
    _, rej = bh_adjust(p, params.alpha)
    n_rej = int(rej.sum())
    fdp = float((rej & is_null).sum()) / max(n_rej, 1)
    order = np.argsort(p, kind="stable")
    ranks = np.empty(p.size, dtype=int)
    ranks[order] = np.arange(1, p.size + 1)
    m, m0 = p.size, int(is_null.sum())
    null_ranks = ranks[is_null]
    simes = simes_fkg_bound(null_ranks, m, m0, params.alpha)
    union = union_bound(null_ranks, m, m0, params.alpha)
    return fdp, simes <= union + 1e-15


def run_type1(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    horizons = [int(t) for t in _opt(ov, "horizons", [100, 200, 500, 1000])]
    n = cfg.n_trials
    n_conf = int(_opt(ov, "confounder_trials", 2000))
    conf_t = int(_opt(ov, "confounder_horizon", 300))
    n_prds = int(_opt(ov, "prds_trials", 10000))
    params, consts = ModelParams(), BoundConstants()
    rows, checks, table = [], [], {}

    for t in horizons:
        out = pmap(_null_trial, [(t, s) for s in seeds(cfg.seed, f"type1-null-{t}", n)], jobs)
        done = [o for o in out if o is not None]
        std, cor, dif = (rate([o[i] for o in done]) for i in range(3))
        entry = {
            "skipped_collinear": len(out) - len(done),
            "standard": std,
            "corrected": cor,
            "corrected_difference_operator": dif,
            "ks_bound_iid": ks_bound_iid(t, consts, table_calibrated=True),
            "ks_bound_corrected": ks_bound_corrected(t, consts, params.p, params.q, params.n_resources),
            "reference": REFERENCE_TYPE1.get(t),
        }
        table[str(t)] = entry
        for key in ("standard", "corrected", "corrected_difference_operator"):
            rows.append(row("type1", t, key, entry[key]["value"], entry[key]["ci95"]))
        rows.append(row("type1", t, "ks_bound_iid", entry["ks_bound_iid"]))

    def band(t, key, lo, hi, kind="acceptance"):
        if str(t) in table:
            v = table[str(t)][key]["value"]
            checks.append(check(f"{key}_type1_T{t}", v, f"[{lo}, {hi}]", lo <= v <= hi, kind))

    band(200, "standard", 0.063, 0.083)
    band(200, "corrected", 0.043, 0.063)
    band(1000, "corrected", 0.045, 0.055)
    band(200, "corrected_difference_operator", 0.043, 0.063, "diagnostic")
    band(1000, "corrected_difference_operator", 0.045, 0.055, "diagnostic")

    out = pmap(_confounder_trial, [(conf_t, s) for s in seeds(cfg.seed, "type1-confounder", n_conf)], jobs)
    done = [o for o in out if o is not None]
    cond, uncond = rate([o[0] for o in done]), rate([o[1] for o in done])
    confounder = {"horizon": conf_t, "conditioned": cond, "unconditioned": uncond,
                  "skipped_collinear": len(out) - len(done)}
    rows += [row("confounder", conf_t, "conditioned", cond["value"], cond["ci95"]),
             row("confounder", conf_t, "unconditioned", uncond["value"], uncond["ci95"])]
    checks.append(check("confounder_conditioned_rate", cond["value"], f"alpha +- 0.02 ({params.alpha})",
                        abs(cond["value"] - params.alpha) <= 0.02))
    checks.append(check("confounder_unconditioned_rate", uncond["value"], ">= 0.30",
                        uncond["value"] >= 0.30))

    out = pmap(_prds_trial, seeds(cfg.seed, "type1-prds", n_prds), jobs)
    fdr = mean_ci([o[0] for o in out], trial_seed(cfg.seed, "type1-prds-boot", 0))
    ordered = all(o[1] for o in out)
    prds = {"fdr": fdr, "simes_le_union_every_instance": ordered, "alpha": params.alpha}
    rows.append(row("prds", "bh", "fdr", fdr["value"], fdr["ci95"]))
    checks.append(check("prds_fdr", fdr["value"], f"<= {params.alpha}", fdr["value"] <= params.alpha))
    checks.append(check("simes_fkg_le_union", ordered, "every instance", ordered))

    summary = {"type1": table, "confounder": confounder, "prds": prds, "trials_per_horizon": n}
    return ExperimentResult(summary, rows, checks)


# --------------------------------------------------------------------------
# nonstationary
# --------------------------------------------------------------------------


def _fa_trial(seed):
    cfg = CusumConfig()
    x = np.random.default_rng(seed).standard_normal(cfg.window)
    return len(detect_changes(x, 0.0, 1.0, cfg)) > 0


def _pipeline_fa_trial(seed):
    sc = generate(ScenarioConfig(seed=seed))
    return len(window_changepoints(sc.window, CusumConfig())) > 0


def _delay_trial(args):
    seed, change, length, shift = args
    cfg = CusumConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(length)
    x[change:] += shift
    kappa = resolve_kappa(cfg, shift)
    alarms = cusum_scan(x, 0.0, shift, 1.0, kappa, cfg.h)
    if any(a < change for a in alarms):
        return None
    after = [a for a in alarms if a >= change]
    if not after:
        return float(length - change)
    return float(after[0] - change)


def _identity_trial(seed):
    cfg = corpus_config(seed, horizon=300)
    w = generate(cfg).window
    seg = attribute(w)
    single = attribute(w, cusum=CusumConfig(enabled=False))
    same = (seg.path.slices == single.path.slices
            and sorted((e.source, e.target, e.segment) for e in seg.graph.edges)
            == sorted((e.source, e.target, e.segment) for e in single.graph.edges))
    return len(seg.changepoints) == 0, same


def _regime_trial(args):
    seed, horizon, effect, magnitude, phased = args
    sc = generate(regime_config(seed, horizon, effect, magnitude, phased))
    seg = attribute(sc.window)
    single = attribute(sc.window, cusum=CusumConfig(enabled=False))
    truth = sc.truth_changepoints
    errs = []
    for t in truth:
        near = [abs(c - t) for c in seg.changepoints if abs(c - t) <= 50]
        if near:
            errs.append(min(near))
    return (path_matches(seg.path, sc.truth_path), path_matches(single.path, sc.truth_path),
            len(seg.changepoints), len(truth), errs)


def run_nonstationary(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    n = cfg.n_trials
    horizon = int(_opt(ov, "horizon", 1000))
    effect = float(_opt(ov, "effect", 0.5))
    magnitude = float(_opt(ov, "magnitude", 3.0))
    phased = bool(_opt(ov, "phased", True))
    n_fa = int(_opt(ov, "false_alarm_trials", 2000))
    n_pfa = int(_opt(ov, "pipeline_false_alarm_trials", 200))
    n_delay = int(_opt(ov, "delay_trials", 1000))
    n_ident = int(_opt(ov, "identity_trials", 20))
    cus = CusumConfig()
    rows, checks = [], []

    fa = rate(pmap(_fa_trial, seeds(cfg.seed, "ns-fa", n_fa), jobs))
    checks.append(check("cusum_false_alarm_rate", fa["value"], f"{cus.false_alarm} +- 0.015",
                        abs(fa["value"] - cus.false_alarm) <= 0.015))
    pfa = rate(pmap(_pipeline_fa_trial, seeds(cfg.seed, "ns-pipeline-fa", n_pfa), jobs))
    rows += [row("cusum", "detector", "false_alarm", fa["value"], fa["ci95"]),
             row("cusum", "pipeline", "false_alarm", pfa["value"], pfa["ci95"])]

    shift = cus.shift_sd
    delays = pmap(_delay_trial, [(s, 100, 300, shift) for s in seeds(cfg.seed, "ns-delay", n_delay)], jobs)
    kept = [d for d in delays if d is not None]
    kl = gaussian_kl(0.0, shift, 1.0)
    bound = mean_delay_bound(cus.h, kl)
    delay = mean_ci(kept, trial_seed(cfg.seed, "ns-delay-boot", 0))
    delay.update({"excluded_prechange_alarm": len(delays) - len(kept), "wald_bound": bound, "kl": kl})
    rows.append(row("cusum", "single-shift", "mean_delay", delay["value"], delay["ci95"]))
    checks.append(check("cusum_mean_delay", delay["value"], f"<= h/KL + 1 = {bound + 1:.4f}",
                        delay["value"] <= bound + 1.0))
    checks.append(check("cusum_delay_nonnegative", min(kept) if kept else None, ">= 0",
                        bool(kept) and min(kept) >= 0))

    ident = pmap(_identity_trial, seeds(cfg.seed, "ns-identity", n_ident), jobs)
    quiet = [same for no_alarm, same in ident if no_alarm]
    identity = {"windows": len(ident), "without_alarm": len(quiet),
                "identical_without_alarm": sum(quiet), "identical_overall": sum(s for _, s in ident)}
    checks.append(check("stationary_segmented_equals_single", identity["identical_without_alarm"],
                        f"== {len(quiet)} windows without alarms", all(quiet)))

    args = [(s, horizon, effect, magnitude, phased) for s in seeds(cfg.seed, "ns-corpus", n)]
    out = pmap(_regime_trial, args, jobs)
    seg_ok = np.array([o[0] for o in out], dtype=float)
    one_ok = np.array([o[1] for o in out], dtype=float)
    seg_acc = rate(seg_ok)
    one_acc = rate(one_ok)
    diff = mean_ci(seg_ok - one_ok, trial_seed(cfg.seed, "ns-corpus-boot", 0))
    errs = [e for o in out for e in o[4]]
    n_true = sum(o[3] for o in out)
    corpus = {
        "scenarios": n, "horizon": horizon, "effect": effect, "magnitude": magnitude, "phased": phased,
        "segmented_accuracy": seg_acc, "single_window_accuracy": one_acc,
        "difference": diff,
        "changes_true": n_true, "changes_detected": sum(o[2] for o in out),
        "changes_matched_within_50": len(errs),
        "mean_abs_location_error": float(np.mean(errs)) if errs else None,
    }
    rows += [row("regime_corpus", "segmented", "accuracy", seg_acc["value"], seg_acc["ci95"]),
             row("regime_corpus", "single_window", "accuracy", one_acc["value"], one_acc["ci95"]),
             row("regime_corpus", "segmented_minus_single", "accuracy", diff["value"], diff["ci95"])]
    checks.append(check("segmented_beats_single_window", diff["value"], ">= 0.03", diff["value"] >= 0.03))
    checks.append(check("segmented_gain_ci_excludes_zero", diff["ci95"][0], "> 0",
                        diff["ci95"][0] > 0, kind="diagnostic"))

    summary = {"false_alarm": {"detector": fa, "pipeline": pfa, "window": cus.window, "h": cus.h},
               "delay": delay, "stationary_identity": identity, "corpus": corpus}
    return ExperimentResult(summary, rows, checks)


# --------------------------------------------------------------------------
# adversarial
# --------------------------------------------------------------------------


def _adversarial_trial(args):
    seed, horizon, deltas, k, strategy = args
    sc = generate(corpus_config(seed, horizon=horizon))
    w = sc.window
    out = []
    for d in deltas:
        spec = AdversarySpec(delta=d, k=k, strategy=strategy, seed=seed % (2 ** 32))
        sw = replace(w, utilization=spoof(w.utilization, spec))
        try:
            rep = attribute(sw)
        except NoAdmissibleEdges:
            out.append((0.0, 0, True))
            continue
        found, false = _discoveries(rep, sc.truth_path)
        out.append((false / max(found, 1), found, False))
    return out


def _flip_fixture(args):
    seed, deltas, side = args
    params = ModelParams()
    rng = np.random.default_rng(seed)
    a_i = rng.uniform(0.0, 1.0, params.n_resources)
    a_j = rng.uniform(0.0, 1.0, params.n_resources)
    u = rng.uniform(0.0, 1.0, (50, params.n_resources))
    rho = float(pair_scores(np.stack([a_i, a_j])[None].repeat(u.shape[0], 0), u, params)[0, 1])
    margin = params.omega1 * REFERENCE_DELTA_PHI / 4.0
    phi = (params.tau_causal + side * margin - params.omega2 * rho) / params.omega1
    flips = []
    for d in deltas:
        spec = AdversarySpec(delta=d, k=1, strategy="worst-case-sign", seed=seed % (2 ** 32))
        flips.append(decision_flips(phi, a_i, a_j, u, params, spec))
    return flips


def run_adversarial(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    n = cfg.n_trials
    deltas = [float(d) for d in _opt(ov, "deltas", [0.0, 0.1, 0.25, 0.5, 0.75, 1.0])]
    k = int(_opt(ov, "k", 3))
    strategy = _opt(ov, "strategy", "worst-case-sign")
    horizon = int(_opt(ov, "horizon", 300))
    n_fix = int(_opt(ov, "flip_fixtures", 200))
    params, consts = ModelParams(), BoundConstants()
    w_max = max(params.w)
    rows, checks = [], []

    out = pmap(_adversarial_trial, [(s, horizon, tuple(deltas), k, strategy)
                                    for s in seeds(cfg.seed, "adv-corpus", n)], jobs)
    fdr0 = float(np.mean([o[0][0] for o in out])) if 0.0 in deltas else REFERENCE_FDR0
    table = []
    for i, d in enumerate(deltas):
        fdps = [o[i][0] for o in out]
        emp = mean_ci(fdps, trial_seed(cfg.seed, "adv-boot", i))
        bound = fdr_inflation_bound(fdr0, d, k, params.n_resources, 15, params.alpha,
                                    params.omega2, w_max, consts.c4)
        ref_bound = fdr_inflation_bound(REFERENCE_FDR0, d, k, params.n_resources, 15, params.alpha,
                                        params.omega2, w_max, consts.c4)
        entry = {"delta": d, "empirical_fdr": emp, "bound_from_empirical_fdr0": bound,
                 "bound_from_reference_fdr0": ref_bound,
                 "reference_bound": REFERENCE_FDR_BOUND.get(d),
                 "mean_discoveries": float(np.mean([o[i][1] for o in out])),
                 "refused_windows": int(sum(o[i][2] for o in out))}
        table.append(entry)
        rows += [row("adversarial", d, "empirical_fdr", emp["value"], emp["ci95"]),
                 row("adversarial", d, "bound", bound),
                 row("adversarial", d, "bound_reference_fdr0", ref_bound)]
        checks.append(check(f"fdr_within_bound_delta_{d}", emp["value"], f"<= {bound:.4f}",
                            emp["value"] <= bound))
        if d in REFERENCE_FDR_BOUND:
            gap = abs(ref_bound - REFERENCE_FDR_BOUND[d])
            checks.append(check(f"bound_column_delta_{d}", ref_bound,
                                f"{REFERENCE_FDR_BOUND[d]} +- 0.005", gap <= 0.005))

    bp = breakdown_point(params.omega1, params.omega2, w_max, 1, REFERENCE_DELTA_PHI)
    bp_stmt = breakdown_point(params.omega1, params.omega2, w_max, 1, REFERENCE_DELTA_PHI, "statement")
    checks.append(check("breakdown_point_proof_form", bp, "0.947 +- 0.001", abs(bp - 0.947) <= 0.001))

    below = [d for d in (0.1, 0.25, 0.5, 0.75, 0.9) if d < bp] + [round(bp - 1e-3, 6)]
    above = [1.0]
    fixtures = [(s, tuple(below + above), side)
                for side in (1.0, -1.0) for s in seeds(cfg.seed, f"adv-flip-{side}", n_fix)]
    flips = pmap(_flip_fixture, fixtures, jobs)
    n_below = sum(sum(f[:len(below)]) for f in flips)
    n_above = sum(f[-1] for f in flips)
    flip = {"fixtures": len(flips), "deltas_below": below, "flips_below": int(n_below),
            "delta_above": above[0], "flips_above": int(n_above)}
    checks.append(check("no_flip_below_breakdown", int(n_below), "== 0", n_below == 0))

    summary = {"table": table, "k": k, "strategy": strategy, "horizon": horizon, "fdr0_empirical": fdr0,
               "breakdown_point": {"proof_form": bp, "statement_form": bp_stmt}, "flips": flip}
    return ExperimentResult(summary, rows, checks)


# --------------------------------------------------------------------------
# noise and ablation (shared corpus)
# --------------------------------------------------------------------------

NOISE_LEVELS = (0.0, 0.01, 0.05, 0.10, 0.20)
VARIANTS = ("full", "no_conditioning", "no_correction", "min_rule", "additive_rule", "uniform_weights")


def _noise_trial(args):
    seed, horizon, sigmas, dp_sigmas = args
    sc = generate(corpus_config(seed, horizon=horizon))
    w = sc.window
    ev = collect_evidence(w)
    hits = []
    for i, s in enumerate(sigmas):
        noisy = apply_allocation_noise(w, s, trial_seed(seed, "noise", i))
        hits.append(path_matches(attribute(noisy, evidence=ev).path, sc.truth_path))
    dp = []
    for i, s in enumerate(dp_sigmas):
        opts = AttributionOptions(dp_sigma=s, dp_seed=trial_seed(seed, "dp", i))
        dp.append(path_matches(attribute(w, options=opts, evidence=ev).path, sc.truth_path))
    return hits, dp


def _ablation_trial(args):
    seed, horizon = args
    sc = generate(corpus_config(seed, horizon=horizon))
    w, truth = sc.window, sc.truth_path
    ev = collect_evidence(w)
    k = w.n_resources
    shared = {
        "full": AttributionOptions(),
        "min_rule": AttributionOptions(rule="min"),
        "additive_rule": AttributionOptions(rule="additive"),
        "uniform_weights": AttributionOptions(weights=(1.0 / k,) * k),
    }
    out = {}
    for name, opts in shared.items():
        rep = attribute(w, options=opts, evidence=ev)
        out[name] = (path_matches(rep.path, truth), edge_f1(rep.path, truth))
    for name, opts in (("no_conditioning", AttributionOptions(conditioning=False)),
                       ("no_correction", AttributionOptions(correction=False))):
        rep = attribute(w, options=opts)
        out[name] = (path_matches(rep.path, truth), edge_f1(rep.path, truth))
    return out


def run_noise(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    n = cfg.n_trials
    horizon = int(_opt(ov, "horizon", 600))
    sigmas = tuple(float(s) for s in _opt(ov, "sigmas", NOISE_LEVELS))
    dp_sigmas = tuple(float(s) for s in _opt(ov, "dp_sigmas", [0.31]))
    out = pmap(_noise_trial, [(s, horizon, sigmas, dp_sigmas) for s in seeds(cfg.seed, "corpus", n)], jobs)
    rows, checks, table = [], [], []
    acc = []
    for i, s in enumerate(sigmas):
        r = rate([o[0][i] for o in out])
        acc.append(r["value"])
        table.append({"sigma": s, "accuracy": r})
        rows.append(row("noise", s, "accuracy", r["value"], r["ci95"]))
    dp = []
    for i, s in enumerate(dp_sigmas):
        r = rate([o[1][i] for o in out])
        dp.append({"sigma_dp": s, "accuracy": r})
        rows.append(row("dp", s, "accuracy", r["value"], r["ci95"]))
    mono = all(b <= a for a, b in zip(acc, acc[1:]))
    checks.append(check("accuracy_nonincreasing_in_noise", acc, "nonincreasing", mono))
    if {0.0, 0.05, 0.10} <= set(sigmas):
        base = acc[sigmas.index(0.0)]
        d05, d10 = base - acc[sigmas.index(0.05)], base - acc[sigmas.index(0.10)]
        checks.append(check("drop_005_below_drop_010", [d05, d10], "drop(0.05) < drop(0.10)", d05 < d10))
    if dp and 0.0 in sigmas:
        drop = acc[sigmas.index(0.0)] - dp[0]["accuracy"]["value"]
        checks.append(check("dp_accuracy_drop", drop, "0 < drop < 0.10", 0.0 < drop < 0.10, kind="diagnostic"))
    summary = {"horizon": horizon, "scenarios": n, "table": table, "dp": dp}
    return ExperimentResult(summary, rows, checks)


def run_ablation(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    n = cfg.n_trials
    horizon = int(_opt(ov, "horizon", 600))
    n_designs = int(_opt(ov, "designs", 20))
    rows, checks = [], []

    div = []
    for s in seeds(cfg.seed, "ablation-is", n_designs):
        design = random_design(np.random.default_rng(s))
        div.append(compare_rules_quadrature(design))
    wins = [d["sigmoid"] < min(v for r, v in d.items() if r != "sigmoid") for d in div]
    checks.append(check("sigmoid_lowest_is_divergence", sum(wins), f"== {n_designs}", all(wins)))
    for i, d in enumerate(div):
        for r, v in d.items():
            rows.append(row("is_divergence", i, r, v))

    out = pmap(_ablation_trial, [(s, horizon) for s in seeds(cfg.seed, "corpus", n)], jobs)
    table = {}
    for v in VARIANTS:
        acc = rate([o[v][0] for o in out])
        f1 = mean_ci([o[v][1] for o in out], trial_seed(cfg.seed, f"ablation-f1-{v}", 0))
        table[v] = {"accuracy": acc, "edge_f1": f1}
        rows += [row("ablation", v, "accuracy", acc["value"], acc["ci95"]),
                 row("ablation", v, "edge_f1", f1["value"], f1["ci95"])]
    a = {v: table[v]["accuracy"]["value"] for v in VARIANTS}
    ordering = a["full"] > a["uniform_weights"] > max(a["min_rule"], a["additive_rule"])
    checks.append(check("ablation_ordering", a, "full > uniform_weights > min_rule, additive_rule", ordering))
    worse = all(a["full"] > a[v] for v in VARIANTS if v != "full")
    checks.append(check("every_ablation_below_full", a, "full strictly best", worse, kind="diagnostic"))
    summary = {"horizon": horizon, "scenarios": n, "table": table, "is_divergence": div}
    return ExperimentResult(summary, rows, checks)


# --------------------------------------------------------------------------
# case study
# --------------------------------------------------------------------------


def _case_trial(args):
    seed, horizon, effect = args
    sc = generate(case_study_config(seed, horizon, effect))
    rep = attribute(sc.window)
    fe = false_edges(rep.graph, sc.truth_path)
    return path_matches(rep.path, sc.truth_path), fe, edge_f1(rep.path, sc.truth_path)


def run_case_study(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    ov = cfg.overrides
    n = cfg.n_trials
    horizon = int(_opt(ov, "horizon", 3000))
    effect = float(_opt(ov, "effect", 0.5))
    out = pmap(_case_trial, [(s, horizon, effect) for s in seeds(cfg.seed, "case-study", n)], jobs)
    exact = rate([m and fe == 0 for m, fe, _ in out])
    path_only = rate([m for m, _, _ in out])
    clean = rate([fe == 0 for _, fe, _ in out])
    f1 = mean_ci([f for _, _, f in out], trial_seed(cfg.seed, "case-boot", 0))
    rows = [row("case_study", "hop_exact_no_false_edges", "rate", exact["value"], exact["ci95"]),
            row("case_study", "hop_exact", "rate", path_only["value"], path_only["ci95"]),
            row("case_study", "no_false_edges", "rate", clean["value"], clean["ci95"]),
            row("case_study", "edge_f1", "mean", f1["value"], f1["ci95"])]
    checks = [check("case_study_recovery", exact["value"], ">= 0.95", exact["value"] >= 0.95)]
    summary = {"path": list(CASE_STUDY_PATH), "horizon": horizon, "effect": effect, "runs": n,
               "hop_exact_no_false_edges": exact, "hop_exact": path_only, "no_false_edges": clean,
               "edge_f1": f1}
    return ExperimentResult(summary, rows, checks)


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------


def run_bounds(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    params, consts = ModelParams(), BoundConstants()
    rows, checks = [], []
    t_eff = effective_sample_size(300, consts.c_beta, consts.beta_mix)
    radius = convergence_radius(108, params.n_resources, params.lam, 0.05)
    seg = required_segment_length(consts)
    cert = certificate_report(params, consts)
    priv = cert["privacy"]
    per_hop = [per_hop_sigma(priv["sensitivity"], 0.89, 0.02, l) for l in range(1, 6)]
    linear = all(abs(s - (l + 1) * per_hop[0]) <= 1e-12 * s for l, s in enumerate(per_hop))

    checks += [
        check("t_eff_300", t_eff, "107.7 +- 0.1", abs(t_eff - 107.7) <= 0.1),
        check("convergence_radius", radius, "1045.5 +- 0.5", abs(radius - 1045.5) <= 0.5),
        check("segment_length_formula", seg["formula_min_length"], "== 65 with discrepancy flag",
              seg["formula_min_length"] == 65 and seg["discrepancy"]),
        check("sigma_dp", priv["sigma_dp"], "0.31 +- 0.005", abs(priv["sigma_dp"] - 0.31) <= 0.005),
        check("sigma_dp_linear_in_path_length", per_hop, "sigma(L) = L sigma(1)", linear),
        check("privacy_floor_vacuous_at_uniform_entropy", priv["floor_vacuous"], "True",
              priv["floor_vacuous"] is True),
        check("breakdown_point_proof_form", cert["breakdown_point"]["proof_form"], "0.947 +- 0.001",
              abs(cert["breakdown_point"]["proof_form"] - 0.947) <= 0.001),
    ]
    for entry in cert["fdr_inflation"]:
        d = entry["delta"]
        if d in REFERENCE_FDR_BOUND:
            checks.append(check(f"bound_column_delta_{d}", entry["bound"], f"{REFERENCE_FDR_BOUND[d]} +- 0.005",
                                abs(entry["bound"] - REFERENCE_FDR_BOUND[d]) <= 0.005))
        rows.append(row("fdr_inflation", d, "bound", entry["bound"]))
    ks = {t: {"iid_table_calibrated": ks_bound_iid(t, consts, True),
              "iid": ks_bound_iid(t, consts),
              "corrected": ks_bound_corrected(t, consts, params.p, params.q, params.n_resources)}
          for t in (100, 200, 500, 1000)}
    for t, v in ks.items():
        for key, val in v.items():
            rows.append(row("ks_bound", t, key, val))
    rows += [row("certificate", "t_eff_300", "value", t_eff),
             row("certificate", "convergence_radius", "value", radius),
             row("certificate", "segment_length_formula", "value", seg["formula_min_length"]),
             row("certificate", "segment_length_reference", "value", seg["reference_min_length"]),
             row("privacy", "sigma_dp", "value", priv["sigma_dp"])]
    summary = {
        "t_eff_300": t_eff,
        "convergence_radius": {"value": radius, "inputs": {"t_eff": 108, "K": params.n_resources,
                                                           "lam": params.lam, "delta": 0.05},
                               "note": REFERENCE_RADIUS_NOTE},
        "segment_length": seg,
        "ks_bounds": {str(t): v for t, v in ks.items()},
        "certificate": cert,
        "per_hop_sigma": per_hop,
    }
    return ExperimentResult(summary, rows, checks)


RUNNERS = {
    "type1": run_type1,
    "nonstationary": run_nonstationary,
    "adversarial": run_adversarial,
    "noise": run_noise,
    "ablation": run_ablation,
    "case-study": run_case_study,
    "bounds": run_bounds,
}


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def versions() -> dict:
    import scipy

    return {"slice_attrib": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "backend": BACKEND}


def build_report(cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    return _jsonable({
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "config_hash": cfg.digest(),
        "versions": versions(),
        "model_params": ModelParams().to_dict(),
        "constants": BoundConstants().to_dict(),
        "constant_provenance": BOUND_PROVENANCE,
        "results": result.summary,
        "checks": result.checks,
        "passed": result.passed,
    })


def write_report(report: dict, rows: list, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        with open(out / "results.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["table", "label", "metric", "value", "ci_low", "ci_high"])
            writer.writeheader()
            for r in rows:
                writer.writerow(_jsonable(r))
    except OSError as exc:
        raise InputError(f"cannot write to output directory {out}: {exc}") from exc
    return out


def run(cfg: ExperimentConfig, jobs: int = 1, out_dir=None):
    """Run one experiment; writes the report files when an output is given.

    Returns ``(report, result)``.
    """
    if jobs < 1:
        raise InputError("jobs must be >= 1")
    logger.info("running %s with %d trials (seed %d, %d jobs)", cfg.experiment, cfg.n_trials, cfg.seed, jobs)
    result = RUNNERS[cfg.experiment](cfg, jobs)
    report = build_report(cfg, result)
    target = out_dir or cfg.out
    if target is not None:
        write_report(report, result.rows, target)
    for c in result.checks:
        logger.info("%s %s: %s (target %s)", "PASS" if c["passed"] else "FAIL", c["name"], c["value"], c["target"])
    return report, result

