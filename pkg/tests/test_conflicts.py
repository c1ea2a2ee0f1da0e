import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import linear_release_step
from sttcbs.conflicts import (
    AvoidanceTable,
    Conflict,
    MergedSegment,
    NominalAvoidanceTable,
    _first_clear_step,
    detect_conflicts,
    nominal_pair_conflicts,
    nominal_release_time,
    release_time,
)
from sttcbs.instance import AgentTask, DelayModel, Edge, Graph, GraphNode, ProblemInstance
from sttcbs.lowlevel import DirectedEdge, NodeElement, build_path, plan
from sttcbs.prob import (
    DEFAULT_QUADRATURE as CFG,
    EdgeConflictQuery,
    NodeConflictQuery,
    edge_conflict_bound,
    edge_conflict_prob,
    node_conflict_bound,
    node_conflict_prob,
)
from sttcbs.search import SolverConfig, compute_release_time, find_most_likely_conflict
from sttcbs.sim import mc_node_conflict

LAM = 5.0


def cross(lam=LAM):
    """Node 0 in the middle of four unit arms; agent 0 goes 1->2, agent 1 goes 3->4."""
    g = Graph(tuple(GraphNode(i) for i in range(5)), tuple(Edge(0, i, 1.0) for i in range(1, 5)))
    return ProblemInstance(g, DelayModel(lam), (AgentTask(0, 1, 2), AgentTask(1, 3, 4)))


def line(n, tasks):
    g = Graph(tuple(GraphNode(i) for i in range(n)), tuple(Edge(i, i + 1, 1.0) for i in range(n - 1)))
    return ProblemInstance(g, DelayModel(LAM), tuple(AgentTask(*t) for t in tasks))


def paths_of(inst):
    return {t.id: plan(inst, t.id) for t in inst.tasks}


def test_disjoint_paths_have_no_conflict():
    g = Graph(tuple(GraphNode(i) for i in range(4)), (Edge(0, 1, 1.0), Edge(2, 3, 1.0)))
    inst = ProblemInstance(g, DelayModel(LAM), (AgentTask(0, 0, 1), AgentTask(1, 2, 3)))
    assert find_most_likely_conflict(inst, paths_of(inst), SolverConfig(epsilon=1e-9)) is None


def test_symmetric_crossing_is_the_most_likely_conflict():
    inst = cross()
    c = find_most_likely_conflict(inst, paths_of(inst), SolverConfig(epsilon=0.1))
    assert (c.kind, c.element, c.a1, c.a2) == ("node", NodeElement(0), 0, 1)
    assert (c.t1, c.t2, c.n1, c.n2, c.n_m) == (1.0, 1.0, 1.0, 1.0, 1.0)
    v0 = mc_node_conflict(NodeConflictQuery(0.0, 1.0, 1.0, 1.0, LAM), 200_000, seed=1)
    assert c.probability > 0.1
    assert v0.agrees_with(c.probability)


def test_head_on_run_merges_into_one_segment():
    inst = line(3, [(0, 0, 2), (1, 2, 0)])
    found = detect_conflicts(inst, paths_of(inst), CFG, floor=1e-12)
    edges = [c for c in found if c.kind == "edge"]
    assert len(edges) == 1
    seg = edges[0]
    assert seg.element == MergedSegment((0, 1, 2)) and seg.t_e == 2.0
    single = edge_conflict_prob(EdgeConflictQuery(seg.t1 - seg.t2, seg.n1, seg.n2, 1.0, LAM))
    assert seg.probability >= single
    assert seg.element_for(0) == DirectedEdge(0, 1)
    assert seg.element_for(1) == DirectedEdge(2, 1)


def test_a_planned_wait_splits_the_segment():
    inst = line(3, [(0, 0, 2), (1, 2, 0)])
    pa = build_path(inst, 0, [0, 1, 2], [0.0, 1.5])
    pb = build_path(inst, 1, [2, 1, 0], [0.0, 1.0])
    edges = [c for c in detect_conflicts(inst, {0: pa, 1: pb}, CFG, 1e-12) if c.kind == "edge"]
    assert sorted(c.element.nodes for c in edges) == [(0, 1), (1, 2)]


def test_goal_visitor_is_barred_and_resident_waits():
    # agent 1 passes through agent 0's goal right after agent 0 settles there
    inst = line(4, [(0, 0, 2), (1, 1, 3)])
    paths = {0: build_path(inst, 0, [0, 1, 2], [0.0, 1.0]), 1: build_path(inst, 1, [1, 2, 3], [0.0, 1.5])}
    goal = [c for c in detect_conflicts(inst, paths, CFG, 0.01) if c.kind == "goal"]
    assert goal and goal[0].resident == 0
    cfg = SolverConfig(epsilon=0.01)
    assert compute_release_time(goal[0], 1, cfg) == math.inf
    rel = compute_release_time(goal[0], 0, cfg)
    assert math.isfinite(rel) and rel > goal[0].t1


def test_release_probability_clears_epsilon():
    inst = cross()
    c = find_most_likely_conflict(inst, paths_of(inst), SolverConfig(epsilon=0.1))
    for eps in (0.1, 1e-3, 1e-5):
        for bs in (False, True):
            cfg = SolverConfig(epsilon=eps, dt=0.1, use_binary_search=bs)
            r = compute_release_time(c, 0, cfg)
            assert c.probability_with_delay(0, r - c.t1, CFG) < eps
            # equal shapes at delta = 0: both agents must yield by the same amount
            assert compute_release_time(c, 1, cfg) == r


def test_binary_search_within_one_step_of_stepping():
    inst = cross()
    c = find_most_likely_conflict(inst, paths_of(inst), SolverConfig(epsilon=0.1))
    for eps in (0.1, 1e-2, 1e-4):
        step = compute_release_time(c, 0, SolverConfig(epsilon=eps, dt=0.1))
        bs = compute_release_time(c, 0, SolverConfig(epsilon=eps, dt=0.1, use_binary_search=True, bs_time_tol=1e-4))
        assert bs <= step + 0.1
        # bisection lands close to the threshold from below
        p = c.probability_with_delay(0, bs - c.t1, CFG)
        assert p < eps
        assert c.probability_with_delay(0, bs - c.t1 - 2e-4, CFG) >= p


@settings(max_examples=150)
@given(st.integers(1, 5000))
def test_galloping_matches_linear_scan_on_prefixes(first_clear):
    calls = []

    def clear(k):
        calls.append(k)
        return k >= first_clear

    assert _first_clear_step(clear) == first_clear
    assert len(calls) <= 2 * math.ceil(math.log2(first_clear + 1)) + 2


node_queries = st.builds(
    NodeConflictQuery,
    st.floats(-1.5, 1.5),
    st.sampled_from([0.5, 1.0, 3.0, 6.0]),
    st.sampled_from([0.5, 1.0, 3.0, 6.0]),
    st.sampled_from([0.5, 1.0]),
    st.just(LAM),
    st.sampled_from([0.0, 0.3]),
    st.sampled_from([0.0, 0.3]),
)


def _as_conflict(q: NodeConflictQuery) -> Conflict:
    return Conflict(0, 1, "node", NodeElement(0), node_conflict_prob(q), q.delta, 0.0, q.n1, q.n2, q.lam,
                    n_m=q.n_m, w1=q.wait1, w2=q.wait2)


@settings(max_examples=40)
@given(node_queries, st.sampled_from([0.1, 1e-2, 1e-3]), st.sampled_from([0.05, 0.2]), st.sampled_from([0, 1]))
def test_stepping_release_equals_linear_scan(q, eps, dt, yielder):
    c = _as_conflict(q)
    assume(c.probability > eps)
    got = release_time(c, yielder, eps, dt, CFG)
    k = linear_release_step(lambda k: c.probability_with_delay(yielder, k * dt, CFG), eps)
    assert got == c.planned_time(yielder) + k * dt


def test_nominal_detection_and_release():
    inst = cross()
    paths = paths_of(inst)
    found = nominal_pair_conflicts(inst, paths[0], paths[1])
    assert len(found) == 1 and found[0].element == NodeElement(0)
    assert nominal_release_time(found[0], 1, dt=0.1) == paths[0].visits[1].departure + 0.1
    # touching intervals count, separated ones do not
    lingering = build_path(inst, 0, [1, 0, 2], [0.0, 1.5])
    touching = build_path(inst, 1, [3, 0, 4], [0.5, 1.5])
    assert nominal_pair_conflicts(inst, lingering, touching)
    apart = build_path(inst, 1, [3, 0, 4], [0.6, 1.6])
    assert not nominal_pair_conflicts(inst, lingering, apart)


def test_nominal_edge_swap():
    inst = line(2, [(0, 0, 1), (1, 1, 0)])
    found = nominal_pair_conflicts(inst, *paths_of(inst).values())
    kinds = sorted(c.kind for c in found)
    assert "edge" in kinds
    e = next(c for c in found if c.kind == "edge")
    assert nominal_release_time(e, 0, dt=0.1) == e.t2 + 1.0 + 0.1


# avoidance counters agree with the screening bounds ----------------------------------------


def _two_visit_instance():
    g = Graph(tuple(GraphNode(i) for i in range(3)), (Edge(0, 1, 1.0), Edge(1, 2, 1.0)))
    return ProblemInstance(g, DelayModel(LAM, 1.0, {1: 0.7}), (AgentTask(0, 0, 2), AgentTask(1, 2, 0)))


@settings(max_examples=200)
@given(st.floats(0, 4), st.floats(0, 2), st.floats(0, 4), st.sampled_from([1.0, 2.0, 5.0]), st.sampled_from([0.1, 1e-3]))
def test_avoidance_node_count_matches_bound(arr_other, wait_other, arr_me, s_me, eps):
    inst = _two_visit_instance()
    other = build_path(inst, 1, [2, 1, 0], [arr_other, arr_other + 1.0 + wait_other])
    v = other.visits[1]
    q = NodeConflictQuery(arr_me - v.arrival, s_me, v.shape_before, 0.7, LAM, 0.0, v.departure - v.arrival)
    b = node_conflict_bound(q)
    assume(abs(b - eps) > 1e-9)
    table = AvoidanceTable(inst, [other], eps)
    assert table.node(1, arr_me, s_me, is_goal=False) == int(b > eps)


@settings(max_examples=200)
@given(st.floats(0, 4), st.floats(0, 4), st.sampled_from([1.0, 2.7]), st.sampled_from([0.1, 1e-3]))
def test_avoidance_edge_count_matches_bound(dep_other, dep_me, s_me, eps):
    inst = _two_visit_instance()
    other = build_path(inst, 1, [2, 1, 0], [dep_other, dep_other + 1.0])
    q = EdgeConflictQuery(dep_me - dep_other, s_me, 1.0, 1.0, LAM)
    b = edge_conflict_bound(q)
    assume(abs(b - eps) > 1e-9)
    table = AvoidanceTable(inst, [other], eps)
    assert table.edge(1, 2, dep_me, s_me) == int(b > eps)


def test_nominal_avoidance_counts_overlaps():
    inst = cross()
    other = plan(inst, 0)
    t = NominalAvoidanceTable(inst, [other])
    assert t.node(0, 1.0, 0.0, False) == 1
    assert t.node(0, 1.5, 0.0, False) == 0
    # a goal arrival before the other agent leaves still clashes later on
    assert t.node(0, 0.5, 0.0, True) == 1


@pytest.mark.parametrize("delta", [0.0, 0.4, -0.4])
def test_every_step_short_of_the_release_still_conflicts(delta):
    c = _as_conflict(NodeConflictQuery(delta, 1.0, 1.0, 1.0, LAM))
    eps, dt = 0.05, 0.05
    for yielder in (0, 1):
        k = round((release_time(c, yielder, eps, dt, CFG) - c.planned_time(yielder)) / dt)
        for i in range(k):
            assert c.probability_with_delay(yielder, i * dt, CFG) > eps
