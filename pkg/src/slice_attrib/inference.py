"""Evidence fusion, FDR control, graph construction and path decoding."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .contention import pair_scores
from .core import (
    BoundConstants,
    InputError,
    ModelParams,
    SliceAttribError,
    TelemetryWindow,
    extract_pair,
)
from .correction import corrected_f, estimate_autocov, ks_bound_corrected, raw_p_value
from .granger import DegenerateFitError, f_statistic, fit_models
from .learning import convergence_radius, effective_sample_size, lipschitz_gamma
from .segmentation import CusumConfig, build_segments, window_changepoints
from .simulator import AttributionPath, PathHop

logger = logging.getLogger(__name__)


class NoAdmissibleEdges(SliceAttribError):
    pass


@dataclass(frozen=True)
class PairTestResult:
    source: int
    target: int
    segment: int
    f_tilde: float
    p_value: float
    p_adjusted: float
    rho: float
    gamma: float
    accepted: bool
    f_raw: float = float("nan")
    time: int = 0


@dataclass(frozen=True)
class CausalGraph:
    nodes: tuple
    edges: tuple

    def __post_init__(self):
        seen = set()
        for e in self.edges:
            if e.source == e.target:
                raise InputError(f"self-loop on slice {e.source}")
            key = (e.source, e.target, e.segment)
            if key in seen:
                raise InputError(f"duplicate edge {key}")
            seen.add(key)


@dataclass(frozen=True)
class AttributionOptions:
    """Switches used by the pipeline and its ablations.

    ``conditioning=False`` drops the utilization columns from both
    regressions; ``correction=False`` uses the classical F test; ``rule`` and
    ``weights`` change the contention model; ``dp_sigma`` adds Gaussian noise
    to every fused score before thresholding.
    """

    coord: int = 0
    conditioning: bool = True
    correction: bool = True
    operator: str = "as_written"
    rule: str = "sigmoid"
    weights: tuple | None = None
    dp_sigma: float = 0.0
    dp_seed: int = 0
    delta_max: float = 4.0
    confidence_delta: float = 0.05


@dataclass
class AttributionReport:
    graph: CausalGraph
    path: AttributionPath
    tests: list
    segments: list
    segment_bounds: list
    changepoints: list
    bounds: dict
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "path": self.path.to_dict(),
            "edges": [_pair_dict(e) for e in self.graph.edges],
            "tests": [_pair_dict(t) for t in self.tests],
            "segments": [[s.start, s.end] for s in self.segments],
            "segment_bounds": self.segment_bounds,
            "changepoints": self.changepoints,
            "bounds": self.bounds,
            "warnings": self.warnings,
        }


def _pair_dict(t: PairTestResult) -> dict:
    return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in t.__dict__.items()}


# --------------------------------------------------------------------------
# scalar building blocks
# --------------------------------------------------------------------------


def normalize_f(values) -> np.ndarray:
    """Min-max map into [0, 1]; all 0.5 when every value is equal."""
    f = np.asarray(values, dtype=float)
    if f.size == 0:
        return f
    lo, hi = float(f.min()), float(f.max())
    if hi == lo:
        return np.full_like(f, 0.5)
    return (f - lo) / (hi - lo)


def bh_adjust(p_values, alpha: float):
    """Benjamini-Hochberg step-up adjusted p-values and rejection mask."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return p.copy(), np.zeros(0, dtype=bool)
    if np.any((p < 0) | (p > 1)):
        raise InputError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.empty(m)
    adj[order] = np.minimum(adj_sorted, 1.0)
    return adj, adj < alpha


def bh_reject_stepup(p_values, alpha: float) -> np.ndarray:
    """Classical step-up rule, largest ``k`` with ``p_(k) <= k alpha / m``."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    ok = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    mask = np.zeros(m, dtype=bool)
    if ok.size:
        mask[order[: ok[-1] + 1]] = True
    return mask


def simes_fkg_bound(ranks, m: int, m0: int, alpha: float) -> float:
    """``1 - prod(1 - alpha m0 / (m r))`` over the ranks of the true nulls."""
    terms = []
    for r in ranks:
        if not 1 <= r <= m:
            raise InputError(f"rank {r} outside 1..{m}")
        t = alpha * m0 / (m * r)
        if t >= 1.0:
            raise InputError("bound vacuous: a factor alpha m0 / (m r) reaches 1")
        terms.append(min(max(t, 0.0), 1.0))
    return float(1.0 - np.prod([1.0 - t for t in terms]))


def union_bound(ranks, m: int, m0: int, alpha: float) -> float:
    return float(sum(alpha * m0 / (m * r) for r in ranks))


# --------------------------------------------------------------------------
# path decoding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Edge:
    source: int
    target: int
    gamma: float
    time: int
    record: object = None


def _collapse(edges):
    best = {}
    for e in edges:
        key = (e.source, e.target)
        cur = best.get(key)
        if cur is None or (e.gamma, -e.time) > (cur.gamma, -cur.time):
            best[key] = e
    return [best[k] for k in sorted(best)]


def _find_cycle(edges):
    adj = {}
    for e in edges:
        adj.setdefault(e.source, []).append(e)
    for v in adj:
        adj[v].sort(key=lambda e: e.target)
    color = {}
    stack_edges = []

    def dfs(u):
        color[u] = 1
        for e in adj.get(u, []):
            c = color.get(e.target, 0)
            if c == 1:
                cyc = [e]
                for f in reversed(stack_edges):
                    cyc.append(f)
                    if f.source == e.target:
                        break
                return cyc
            if c == 0:
                stack_edges.append(e)
                found = dfs(e.target)
                if found:
                    return found
                stack_edges.pop()
        color[u] = 2
        return None

    for v in sorted(adj):
        if color.get(v, 0) == 0:
            found = dfs(v)
            if found:
                return found
    return None


def prepare_graph(edges, warnings_out=None):
    """Break cycles of the slice graph, keeping every segment copy of the rest.

    Cycles are found on the pair graph where each ordered pair is
    represented by its strongest copy; each cycle loses that pair (all its
    copies) at its weakest link, ties going to the lexicographically largest
    ``(source, target)``.
    """
    edges = list(edges)
    strongest = _collapse(edges)
    dropped = set()
    while True:
        cyc = _find_cycle(strongest)
        if cyc is None:
            break
        drop = min(cyc, key=lambda e: (e.gamma, -e.source, -e.target))
        msg = (
            f"cycle {[(e.source, e.target) for e in cyc]} broken by removing "
            f"{drop.source}->{drop.target} (gamma={drop.gamma:.6g})"
        )
        logger.warning(msg)
        if warnings_out is not None:
            warnings_out.append(msg)
        dropped.add((drop.source, drop.target))
        strongest = [e for e in strongest if e is not drop]
    kept = [e for e in edges if (e.source, e.target) not in dropped]
    return sorted(kept, key=lambda e: (e.source, e.target, e.time))


def _topo_order(edges):
    nodes = sorted({e.source for e in edges} | {e.target for e in edges})
    indeg = {v: 0 for v in nodes}
    out = {v: [] for v in nodes}
    for e in edges:
        indeg[e.target] += 1
        out[e.source].append(e.target)
    ready = sorted(v for v in nodes if indeg[v] == 0)
    order = []
    import heapq

    heapq.heapify(ready)
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    return {v: i for i, v in enumerate(order)}


def _better(a, b):
    """Is candidate ``a = (score, seq)`` preferred to ``b``?"""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] < b[1]


def decode_edges(edges):
    """Best maximal time-respecting path on an acyclic edge list.

    A path ``e1 .. eL`` needs ``src(e_{k+1}) = dst(e_k)`` and nondecreasing
    edge times; it is maximal if no edge can be prepended or appended.  Among
    maximal paths the largest product of gammas wins, then the
    lexicographically smallest slice sequence.  Returns ``(score, seq,
    edge_list)`` or ``None`` for an empty graph.
    """
    if not edges:
        return None
    rank = _topo_order(edges)
    incoming = {}
    outgoing = {}
    for e in edges:
        incoming.setdefault(e.target, []).append(e)
        outgoing.setdefault(e.source, []).append(e)
    order = sorted(edges, key=lambda e: (rank[e.source], e.time, rank[e.target]))
    best = {}
    for e in order:
        preds = [g for g in incoming.get(e.source, []) if g.time <= e.time]
        if not preds:
            best[id(e)] = (e.gamma, (e.source, e.target), (e,))
            continue
        cand = None
        for g in preds:
            sg, seqg, path_g = best[id(g)]
            c = (sg * e.gamma, seqg + (e.target,), path_g + (e,))
            if _better(c[:2], None if cand is None else cand[:2]):
                cand = c
        best[id(e)] = cand
    winner = None
    for e in order:
        if any(f.time >= e.time for f in outgoing.get(e.target, [])):
            continue
        c = best[id(e)]
        if _better(c[:2], None if winner is None else winner[:2]):
            winner = c
    return winner


def brute_force_decode(edges):
    """Exhaustive enumeration counterpart of :func:`decode_edges`."""
    if not edges:
        return None
    outgoing = {}
    incoming = {}
    for e in edges:
        outgoing.setdefault(e.source, []).append(e)
        incoming.setdefault(e.target, []).append(e)
    winner = None

    def extend(path, visited):
        nonlocal winner
        last = path[-1]
        nxt = [f for f in outgoing.get(last.target, []) if f.time >= last.time]
        if not nxt:
            score = 1.0
            for f in path:
                score *= f.gamma
            seq = (path[0].source,) + tuple(f.target for f in path)
            if _better((score, seq), None if winner is None else winner[:2]):
                winner = (score, seq, tuple(path))
            return
        for f in nxt:
            if f.target in visited:
                continue
            extend(path + [f], visited | {f.target})

    for e in edges:
        if any(g.time <= e.time for g in incoming.get(e.source, [])):
            continue
        extend([e], {e.source, e.target})
    return winner


def viterbi_decode(g: CausalGraph, segment_starts=None, interval_halfwidth: float = 0.0,
                   gamma_cap: float = 1.0, warnings_out=None) -> AttributionPath:
    """Maximum-product attribution path through the accepted edges."""
    edges = [_Edge(e.source, e.target, e.gamma, e.segment, e) for e in g.edges]
    for e in edges:
        if not 0.0 < e.gamma <= 1.0:
            raise InputError(f"edge gamma {e.gamma} outside (0, 1]")
    edges = prepare_graph(edges, warnings_out)
    res = decode_edges(edges)
    if res is None:
        return AttributionPath(hops=(), product_score=0.0)
    score, seq, path = res
    starts = segment_starts or {}

    def when(seg):
        return int(starts[seg]) if seg in starts else int(seg)

    hops = [PathHop(seq[0], when(path[0].time), None, None)]
    for e in path:
        pv = e.record.p_adjusted if e.record is not None else None
        lo = max(0.0, e.gamma - interval_halfwidth)
        hi = min(gamma_cap, e.gamma + interval_halfwidth)
        hops.append(PathHop(e.target, when(e.time), e.gamma, (pv, lo, hi)))
    return AttributionPath(hops=tuple(hops), product_score=float(score))


# --------------------------------------------------------------------------
# end-to-end
# --------------------------------------------------------------------------


def _segment_tests(window: TelemetryWindow, seg_index: int, params: ModelParams,
                   options: AttributionOptions, warnings_out):
    n = window.n_slices
    k = window.n_resources
    rows = []
    for i, j in itertools.permutations(range(n), 2):
        ps = extract_pair(window, i, j, options.coord)
        try:
            u, r, proj = fit_models(ps, params.p, params.q, options.conditioning)
            kk = k if options.conditioning else 0
            raw = f_statistic(u, r, params.q, params.p, kk, u.residuals.shape[0], proj)
            if options.correction:
                cf = corrected_f(raw, estimate_autocov(u.residuals), options.operator)
                f_val, p_val = cf.f_tilde, cf.p_value
            else:
                f_val, p_val = raw.f, raw_p_value(raw)
        except (DegenerateFitError, SliceAttribError, np.linalg.LinAlgError) as exc:
            warnings_out.append(f"segment {seg_index} pair {i}->{j} skipped: {exc}")
            rows.append((i, j, None, 1.0, float("nan")))
            continue
        rows.append((i, j, f_val, p_val, raw.f))
    return rows


@dataclass(frozen=True)
class Evidence:
    """Segmentation and per-segment Granger rows of one window.

    Everything here depends on the telemetry, the utilization and the test
    switches only, so contention and noise variants can share it.
    """

    changepoints: list
    segments: list
    segment_bounds: list
    rows: list
    warnings: list


def collect_evidence(window: TelemetryWindow, params: ModelParams | None = None,
                     constants: BoundConstants | None = None, cusum: CusumConfig | None = None,
                     options: AttributionOptions | None = None) -> Evidence:
    params = params or ModelParams()
    constants = constants or BoundConstants()
    cusum = cusum or CusumConfig()
    options = options or AttributionOptions()
    if window.n_resources != params.n_resources:
        raise InputError(
            f"window has {window.n_resources} resources, parameters have {params.n_resources}"
        )
    warnings_out: list = []
    changepoints = window_changepoints(window, cusum, options.coord)
    segments, seg_bounds = build_segments(
        window.horizon, changepoints, params.p, params.q, window.n_resources,
        constants, options.delta_max,
    )
    rows = [_segment_tests(window.slice_time(seg.start, seg.end), m, params, options, warnings_out)
            for m, seg in enumerate(segments)]
    return Evidence(changepoints, segments, seg_bounds, rows, warnings_out)


def attribute(window: TelemetryWindow, params: ModelParams | None = None,
              constants: BoundConstants | None = None, cusum: CusumConfig | None = None,
              options: AttributionOptions | None = None,
              evidence: Evidence | None = None) -> AttributionReport:
    """Run segmentation, pairwise testing, fusion, FDR control and decoding.

    ``evidence`` from :func:`collect_evidence` skips the first two stages; it
    must come from the same telemetry, utilization and test switches.
    """
    params = params or ModelParams()
    constants = constants or BoundConstants()
    options = options or AttributionOptions()
    if evidence is None:
        evidence = collect_evidence(window, params, constants, cusum, options)
    warnings_out = list(evidence.warnings)
    segments, seg_bounds = evidence.segments, evidence.segment_bounds
    dp_rng = np.random.default_rng(options.dp_seed) if options.dp_sigma > 0 else None

    t_eff = effective_sample_size(window.horizon, constants.c_beta, constants.beta_mix)
    radius = convergence_radius(t_eff, window.n_resources, params.lam, options.confidence_delta)
    w_arr = np.asarray(params.w if options.weights is None else options.weights, dtype=float)
    l_gamma = lipschitz_gamma(params.omega2, window.n_slices, window.n_resources, float(w_arr.max()))
    halfwidth = l_gamma * radius
    gamma_cap = params.omega1 + params.omega2 * float(w_arr.sum()) * (
        2.0 if options.rule == "additive" else 1.0
    )

    tests = []
    any_ok = False
    for m, (seg, rows) in enumerate(zip(segments, evidence.rows)):
        ok = [r for r in rows if r[2] is not None]
        if not ok:
            continue
        any_ok = True
        sub = window.slice_time(seg.start, seg.end)
        phi_vals = normalize_f([r[2] for r in ok])
        phi = {(r[0], r[1]): v for r, v in zip(ok, phi_vals)}
        rho = pair_scores(sub.allocation, sub.utilization, params, options.rule, options.weights)
        p_adj, _ = bh_adjust([r[3] for r in rows], params.alpha)
        for (i, j, f_val, p_val, f_raw), pa in zip(rows, p_adj):
            if f_val is None:
                continue
            gamma = params.omega1 * phi[(i, j)] + params.omega2 * float(rho[i, j])
            if dp_rng is not None:
                gamma = float(np.clip(gamma + dp_rng.normal(0.0, options.dp_sigma), 0.0, 1.0))
            accepted = bool(gamma > params.tau_causal and pa < params.alpha)
            tests.append(PairTestResult(
                source=i, target=j, segment=m, f_tilde=float(f_val), p_value=float(p_val),
                p_adjusted=float(pa), rho=float(rho[i, j]), gamma=float(gamma),
                accepted=accepted, f_raw=float(f_raw), time=seg.start,
            ))
    if not any_ok:
        raise NoAdmissibleEdges("no admissible edges: every pair was degenerate")

    edges = tuple(t for t in tests if t.accepted and t.gamma > 0.0)
    graph = CausalGraph(nodes=tuple(range(window.n_slices)), edges=edges)
    capped = tuple(replace(e, gamma=min(e.gamma, 1.0)) for e in edges)
    path = viterbi_decode(
        CausalGraph(graph.nodes, capped),
        segment_starts={m: s.start for m, s in enumerate(segments)},
        interval_halfwidth=halfwidth,
        gamma_cap=min(gamma_cap, 1.0),
        warnings_out=warnings_out,
    )
    bounds = {
        "ks_corrected": [ks_bound_corrected(s.length, constants, params.p, params.q,
                                            window.n_resources) for s in segments],
        "segment_validity": seg_bounds,
        "t_eff": t_eff,
        "convergence_radius": radius,
        "lipschitz_gamma": l_gamma,
        "gamma_error_halfwidth": halfwidth,
    }
    return AttributionReport(
        graph=graph, path=path, tests=tests, segments=segments, segment_bounds=seg_bounds,
        changepoints=list(evidence.changepoints), bounds=bounds, warnings=warnings_out,
    )


def path_matches(decoded: AttributionPath, truth: AttributionPath) -> bool:
    """Exact match of the slice sequences (empty truth needs an empty path)."""
    return decoded.slices == truth.slices


def edge_f1(decoded: AttributionPath, truth: AttributionPath) -> float:
    d, t = set(decoded.edges), set(truth.edges)
    if not d and not t:
        return 1.0
    if not d or not t:
        return 0.0
    tp = len(d & t)
    if tp == 0:
        return 0.0
    prec, rec = tp / len(d), tp / len(t)
    return 2 * prec * rec / (prec + rec)


def false_edges(graph: CausalGraph, truth: AttributionPath) -> int:
    true = set(truth.edges)
    return len({(e.source, e.target) for e in graph.edges} - true)


def prds_null_ensemble(rng, n_slices: int = 15, n_resources: int = 3, corr: float = 0.5,
                       n_alt: int = 10, alt_shift: float = 3.0):
    """One-sided Gaussian tests over all ordered pairs with shared-resource factors.

    Every pair loads on the factor of the resource its source is bound to,
    giving nonnegatively correlated statistics (a PRDS family).  The first
    ``n_alt`` pairs carry a true effect.  Returns ``(p_values, is_null)``.
    """
    from scipy.stats import norm

    pairs = list(itertools.permutations(range(n_slices), 2))
    m = len(pairs)
    res_of = rng.integers(0, n_resources, size=n_slices)
    factors = rng.standard_normal(n_resources)
    idio = rng.standard_normal(m)
    z = np.array([math.sqrt(corr) * factors[res_of[i]] for i, _ in pairs]) + math.sqrt(1 - corr) * idio
    is_null = np.ones(m, dtype=bool)
    alt = rng.choice(m, size=n_alt, replace=False) if n_alt else np.array([], dtype=int)
    is_null[alt] = False
    z[~is_null] += alt_shift
    return norm.sf(z), is_null
