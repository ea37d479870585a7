import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slice_attrib.core import InputError, ModelParams
from slice_attrib.inference import (
    AttributionOptions,
    CausalGraph,
    NoAdmissibleEdges,
    PairTestResult,
    _Edge,
    attribute,
    bh_adjust,
    bh_reject_stepup,
    brute_force_decode,
    collect_evidence,
    decode_edges,
    edge_f1,
    normalize_f,
    path_matches,
    prds_null_ensemble,
    prepare_graph,
    simes_fkg_bound,
    union_bound,
    viterbi_decode,
)
from slice_attrib.simulator import AttackHop, AttributionPath, PathHop, ScenarioConfig, generate


def edge(i, j, g, seg=0):
    return PairTestResult(i, j, seg, 1.0, 0.0, 0.0, 0.0, g, True)


# --------------------------------------------------------------------------
# normalisation and multiple testing
# --------------------------------------------------------------------------


def test_normalize_f():
    np.testing.assert_array_equal(normalize_f([2, 6, 10]), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_f([3, 3, 3]), [0.5, 0.5, 0.5])
    assert normalize_f([]).size == 0


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
def test_normalize_preserves_order(values):
    phi = normalize_f(values)
    assert np.all((phi >= 0) & (phi <= 1))
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(phi[order]) >= 0)


def test_bh_examples():
    _, rej = bh_adjust([0.001, 0.01, 0.02, 0.5], 0.05)
    assert list(rej) == [True, True, True, False]
    _, none = bh_adjust(np.ones(10), 0.05)
    assert not none.any()
    with pytest.raises(InputError):
        bh_adjust([0.5, 1.5], 0.05)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.floats(0.001, 0.3))
def test_adjusted_rule_matches_stepup(p, alpha):
    adj, rej = bh_adjust(p, alpha)
    classical = bh_reject_stepup(p, alpha)
    # adjusted < alpha versus p_(k) <= k alpha / m differ only at exact ties with alpha
    boundary = np.isclose(adj, alpha, rtol=1e-12, atol=0)
    assert np.array_equal(rej[~boundary], classical[~boundary])
    assert np.all(adj >= np.asarray(p) - 1e-15)


def test_fdr_independent_nulls():
    rng = np.random.default_rng(0)
    m, m0, alpha = 20, 15, 0.05
    fdp = []
    for _ in range(10000):
        p = np.concatenate([rng.uniform(size=m0), rng.uniform(size=m - m0) * 1e-3])
        _, rej = bh_adjust(p, alpha)
        r = rej.sum()
        fdp.append(rej[:m0].sum() / r if r else 0.0)
    assert np.mean(fdp) <= alpha * m0 / m + 3 * np.std(fdp) / 100


def test_simes_examples():
    assert simes_fkg_bound([3, 4], 4, 2, 0.05) == pytest.approx(
        1 - (1 - 0.05 * 2 / 12) * (1 - 0.05 * 2 / 16), rel=1e-14)
    assert simes_fkg_bound([3, 4], 4, 2, 0.05) == pytest.approx(0.0145312, abs=1e-7)
    m = 9
    assert simes_fkg_bound([m], m, 3, 0.05) == pytest.approx(0.05 * 3 / m**2, rel=1e-14)


@given(st.integers(2, 200), st.floats(0.001, 0.2), st.data())
def test_simes_below_union(m, alpha, data):
    m0 = data.draw(st.integers(1, m))
    ranks = data.draw(st.lists(st.integers(1, m), min_size=1, max_size=m0, unique=True))
    try:
        s = simes_fkg_bound(ranks, m, m0, alpha)
    except InputError:
        return
    assert s <= union_bound(ranks, m, m0, alpha) + 1e-15


def test_prds_ensemble_shapes():
    p, null = prds_null_ensemble(np.random.default_rng(1))
    assert p.shape == (210,) and null.sum() == 200


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------


def test_chain_beats_distractor():
    a, b, c = 0, 1, 2
    g = CausalGraph((0, 1, 2), (edge(a, b, 0.9), edge(b, c, 0.8), edge(a, c, 0.5)))
    path = viterbi_decode(g)
    assert path.slices == (0, 1, 2)
    assert path.product_score == pytest.approx(0.72, rel=1e-15)


def test_empty_graph_gives_empty_path():
    assert viterbi_decode(CausalGraph((0, 1), ())).hops == ()


def test_single_edge():
    path = viterbi_decode(CausalGraph((0, 1, 2), (edge(2, 0, 0.6),)))
    assert path.slices == (2, 0)


def test_lexicographic_tie():
    g = CausalGraph(tuple(range(4)), (edge(0, 2, 0.5), edge(1, 3, 0.5)))
    first = viterbi_decode(g).slices
    assert first == (0, 2)
    rev = CausalGraph(tuple(range(4)), tuple(reversed(g.edges)))
    assert viterbi_decode(rev).slices == first


def test_graph_rejects_self_loops_and_duplicates():
    with pytest.raises(InputError):
        CausalGraph((0,), (edge(0, 0, 0.5),))
    with pytest.raises(InputError):
        CausalGraph((0, 1), (edge(0, 1, 0.5), edge(0, 1, 0.6)))
    with pytest.raises(InputError):
        viterbi_decode(CausalGraph((0, 1), (edge(0, 1, 1.5),)))


def test_two_cycle_loses_weaker_direction():
    warn = []
    kept = prepare_graph([_Edge(0, 1, 0.9, 0), _Edge(1, 0, 0.6, 0), _Edge(1, 2, 0.7, 0)], warn)
    assert {(e.source, e.target) for e in kept} == {(0, 1), (1, 2)}
    assert len(warn) == 1 and "1->0" in warn[0]


def test_later_segment_copy_extends_path():
    # 1->2 is strongest in segment 0, before 0->1 exists; 5->1 makes that copy
    # a continuation rather than a path start.  Only the weaker copy in
    # segment 2 lets 0->1 extend, and a non-maximal 0->1 cannot win alone.
    edges = [_Edge(5, 1, 0.3, 0), _Edge(1, 2, 0.95, 0), _Edge(0, 1, 0.9, 1), _Edge(1, 2, 0.5, 2)]
    score, seq, _ = decode_edges(prepare_graph(edges))
    assert seq == (0, 1, 2)
    assert score == pytest.approx(0.45)
    assert brute_force_decode(prepare_graph(edges))[1] == seq


@st.composite
def random_graphs(draw):
    n = draw(st.integers(2, 7))
    pairs = [p for p in itertools.permutations(range(n), 2)]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=0, max_size=14))
    edges = []
    seen = set()
    for i, j in chosen:
        t = draw(st.integers(0, 3))
        if (i, j, t) in seen:
            continue
        seen.add((i, j, t))
        g = draw(st.sampled_from([0.25, 0.5, 0.8, 1.0]) | st.floats(0.01, 1.0))
        edges.append(_Edge(i, j, g, t))
    return edges


@given(random_graphs())
def test_decoder_matches_enumeration(edges):
    kept = prepare_graph(edges)
    a, b = decode_edges(kept), brute_force_decode(kept)
    if a is None or b is None:
        assert a is None and b is None
        return
    assert a[0] == pytest.approx(b[0], rel=0, abs=1e-12)
    assert a[1] == b[1]


# --------------------------------------------------------------------------
# end to end
# --------------------------------------------------------------------------


def small_scenario(seed=0, **kw):
    cfg = dict(n_slices=5, horizon=600, seed=seed, hop_scale="effect",
               attack_path=(AttackHop(1, 0), AttackHop(3, 1, 1, 0.5)))
    cfg.update(kw)
    return generate(ScenarioConfig(**cfg))


def test_single_true_edge_is_recovered():
    s = small_scenario(1)
    r = attribute(s.window)
    assert r.path.slices == (1, 3)
    assert path_matches(r.path, s.truth_path)
    assert edge_f1(r.path, s.truth_path) == 1.0
    lo, hi = r.path.hops[1].interval[1:]
    assert lo <= r.path.hops[1].gamma <= hi


def test_attribution_is_deterministic():
    s = small_scenario(2)
    a = attribute(s.window).to_dict()
    b = attribute(s.window).to_dict()
    assert a == b


def test_fused_scores_within_bounds():
    p = ModelParams()
    r = attribute(small_scenario(3).window, p)
    cap = p.omega1 + p.omega2 * sum(p.w)
    assert all(0.0 <= t.gamma <= cap for t in r.tests)
    assert len(r.tests) == 20


def test_evidence_reuse_matches_fresh_run():
    s = small_scenario(4)
    ev = collect_evidence(s.window)
    opts = AttributionOptions(weights=(1 / 3, 1 / 3, 1 / 3))
    assert attribute(s.window, options=opts, evidence=ev).to_dict() == attribute(s.window, options=opts).to_dict()


def test_resource_count_mismatch():
    s = small_scenario(5, n_resources=2)
    with pytest.raises(InputError):
        attribute(s.window)


def test_constant_window_has_no_admissible_edges():
    s = small_scenario(6)
    w = s.window.__class__(np.ones_like(s.window.telemetry), s.window.allocation, s.window.utilization)
    with pytest.raises(NoAdmissibleEdges):
        attribute(w)


def test_pure_confounder_mostly_empty():
    empty = 0
    for seed in range(20):
        s = small_scenario(100 + seed, attack_path=(), confounder_pairs=((0, 1, 0),))
        empty += len(attribute(s.window).graph.edges) == 0
    assert empty >= 17


def test_edge_f1_and_matches():
    t = AttributionPath((PathHop(0, 0), PathHop(1, 0), PathHop(2, 0)))
    d = AttributionPath((PathHop(0, 0), PathHop(1, 0)))
    assert edge_f1(d, t) == pytest.approx(2 / 3)
    assert not path_matches(d, t)
    assert edge_f1(AttributionPath(), AttributionPath()) == 1.0
