"""Pairwise conflict detection over planned schedules, and release times."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable

from .instance import ProblemInstance
from .lowlevel import DirectedEdge, NodeElement, TimedPath
from .prob import (
    EdgeConflictQuery,
    NodeConflictQuery,
    QuadratureConfig,
    edge_conflict_bound,
    edge_conflict_prob,
    goal_conflict_bound,
    goal_occupancy_conflict_prob,
    node_conflict_bound,
    node_conflict_prob,
)
from .prob.gamma import upper_quantile

_KIND_ORDER = {"node": 0, "goal": 1, "edge": 2}


@dataclass(frozen=True, order=True)
class MergedSegment:
    """Consecutive edges traversed head-on by two agents, in the first agent's order."""

    nodes: tuple[int, ...]

    def first_edge(self, reverse: bool = False) -> DirectedEdge:
        if reverse:
            return DirectedEdge(self.nodes[-1], self.nodes[-2])
        return DirectedEdge(self.nodes[0], self.nodes[1])

    def __str__(self):
        return "segment " + "-".join(map(str, self.nodes))


@dataclass(frozen=True)
class Conflict:
    """A probable collision between agents ``a1 < a2``.

    ``t1``/``t2`` are planned node arrivals (node and goal kinds) or segment
    entry times (edge kind); ``n1``/``n2`` are the delay shapes accumulated
    at those instants. For segments ``n_m`` is the summed shape of the
    interior nodes, zero for a single edge.
    """

    a1: int
    a2: int
    kind: str
    element: NodeElement | MergedSegment
    probability: float
    t1: float
    t2: float
    n1: float
    n2: float
    lam: float
    n_m: float = 0.0
    t_e: float = 0.0
    w1: float = 0.0
    w2: float = 0.0
    resident: int | None = None

    def sort_key(self):
        return (-self.probability, min(self.t1, self.t2), self.a1, self.a2, _KIND_ORDER[self.kind], self.element)

    def other(self, agent: int) -> int:
        return self.a2 if agent == self.a1 else self.a1

    def element_for(self, agent: int) -> NodeElement | DirectedEdge:
        """Element a yielding agent is constrained on."""
        if self.kind == "edge":
            return self.element.first_edge(reverse=agent == self.a2)
        return self.element

    def planned_time(self, agent: int) -> float:
        return self.t1 if agent == self.a1 else self.t2

    def probability_at(self, shift1: float, shift2: float, cfg: QuadratureConfig) -> float:
        """Conflict probability with both agents' planned times shifted later."""
        t1, t2 = self.t1 + shift1, self.t2 + shift2
        if self.kind == "node":
            q = NodeConflictQuery(t1 - t2, self.n1, self.n2, self.n_m, self.lam, self.w1, self.w2)
            return node_conflict_prob(q, cfg)
        if self.kind == "edge":
            return _segment_prob(_segment_query(t1 - t2, self.n1, self.n2, self.t_e, self.n_m, self.lam), cfg)
        if self.resident == self.a1:
            return goal_occupancy_conflict_prob(t1 - t2, self.n1, self.n2, self.n_m, self.lam, cfg, self.w2)
        return goal_occupancy_conflict_prob(t2 - t1, self.n2, self.n1, self.n_m, self.lam, cfg, self.w1)

    def probability_with_delay(self, agent: int, shift: float, cfg: QuadratureConfig) -> float:
        if agent == self.a1:
            return self.probability_at(shift, 0.0, cfg)
        return self.probability_at(0.0, shift, cfg)


def _is_resident(path: TimedPath, k: int, goal: int) -> bool:
    return k == len(path.visits) - 1 and path.visits[k].node == goal


def pair_conflicts(
    inst: ProblemInstance, pa: TimedPath, pb: TimedPath, cfg: QuadratureConfig, floor: float
) -> list[Conflict]:
    """All node, goal and head-on segment conflicts with probability above ``floor``.

    Candidates are screened by closed-form upper bounds first, so only pairs
    close enough in time reach the quadrature.
    """
    if pa.agent > pb.agent:
        pa, pb = pb, pa
    lam = inst.delay.lam
    shape = inst.delay.shape
    ga, gb = inst.task(pa.agent).goal, inst.task(pb.agent).goal
    out: list[Conflict] = []

    where_a: dict[int, list[int]] = {}
    for k, v in enumerate(pa.visits):
        where_a.setdefault(v.node, []).append(k)

    for j, vb in enumerate(pb.visits):
        for k in where_a.get(vb.node, ()):
            va = pa.visits[k]
            n_m = shape(va.node)
            wa, wb = va.departure - va.arrival, vb.departure - vb.arrival
            res_a, res_b = _is_resident(pa, k, ga), _is_resident(pb, j, gb)
            if res_a or res_b:
                if res_a:
                    delta, n_res, n_vis, w_vis = va.arrival - vb.arrival, va.shape_before, vb.shape_before, wb
                else:
                    delta, n_res, n_vis, w_vis = vb.arrival - va.arrival, vb.shape_before, va.shape_before, wa
                if goal_conflict_bound(delta, n_vis, n_m, lam, w_vis) <= floor:
                    continue
                p = goal_occupancy_conflict_prob(delta, n_res, n_vis, n_m, lam, cfg, w_vis)
                c = Conflict(
                    pa.agent, pb.agent, "goal", NodeElement(va.node), p,
                    va.arrival, vb.arrival, va.shape_before, vb.shape_before, lam,
                    n_m=n_m, w1=wa, w2=wb, resident=pa.agent if res_a else pb.agent,
                )
            else:
                q = NodeConflictQuery(va.arrival - vb.arrival, va.shape_before, vb.shape_before, n_m, lam, wa, wb)
                if node_conflict_bound(q) <= floor:
                    continue
                p = node_conflict_prob(q, cfg)
                c = Conflict(
                    pa.agent, pb.agent, "node", NodeElement(va.node), p,
                    va.arrival, vb.arrival, va.shape_before, vb.shape_before, lam, n_m=n_m, w1=wa, w2=wb,
                )
            if p > floor:
                out.append(c)

    out.extend(_segment_conflicts(inst, pa, pb, cfg, floor))
    return out


def _opposing_runs(pa: TimedPath, pb: TimedPath):
    """Maximal runs of head-on edge traversals as (k, l, length).

    ``k`` indexes a's first edge of the run and ``l`` b's last edge, so a
    traverses edges k..k+length-1 while b traverses l..l-length+1 backwards.
    A planned wait at an interior node breaks the run.
    """
    b_edges: dict[tuple[int, int], list[int]] = {}
    for l in range(len(pb.visits) - 1):
        b_edges.setdefault((pb.visits[l].node, pb.visits[l + 1].node), []).append(l)
    pairs = set()
    for k in range(len(pa.visits) - 1):
        for l in b_edges.get((pa.visits[k + 1].node, pa.visits[k].node), ()):
            pairs.add((k, l))

    def joined(k, l):
        # (k, l) continues into (k + 1, l - 1) through a.visits[k + 1] == b.visits[l]
        return (k + 1, l - 1) in pairs and pa.wait(k + 1) == 0 and pb.wait(l) == 0

    runs = []
    for k, l in sorted(pairs):
        if (k - 1, l + 1) in pairs and joined(k - 1, l + 1):
            continue
        length = 1
        while joined(k + length - 1, l - length + 1):
            length += 1
        runs.append((k, l, length))
    return runs


def _segment_conflicts(inst, pa, pb, cfg, floor):
    g = inst.graph
    lam = inst.delay.lam
    shape = inst.delay.shape
    out = []
    for k, l, length in _opposing_runs(pa, pb):
        nodes = tuple(pa.visits[i].node for i in range(k, k + length + 1))
        t_e = sum(g.edge_time(nodes[i], nodes[i + 1]) for i in range(length))
        va = pa.visits[k]
        vb = pb.visits[l - length + 1]
        n1 = va.shape_before + shape(va.node)
        n2 = vb.shape_before + shape(vb.node)
        n_int = math.fsum(shape(n) for n in nodes[1:-1])
        q = _segment_query(va.departure - vb.departure, n1, n2, t_e, n_int, lam)
        if _segment_bound(q) <= floor:
            continue
        p = _segment_prob(q, cfg)
        if p > floor:
            out.append(
                Conflict(
                    pa.agent, pb.agent, "edge", MergedSegment(nodes), p,
                    va.departure, vb.departure, n1, n2, lam, n_m=n_int, t_e=t_e,
                )
            )
    return out


def _segment_query(delta, n1, n2, t_e, n_interior, lam):
    """Head-on traversal of a run of edges.

    Each agent holds the run from its entry until its exit, ``t_e`` plus the
    delays picked up at interior nodes later, and both cross the same
    interior nodes. That is the node event with both dwells equal to ``t_e``
    and the interior shape as the node delay; a single edge has no interior
    delay and uses the edge formula.
    """
    if n_interior > 0:
        return NodeConflictQuery(delta, n1, n2, n_interior, lam, t_e, t_e)
    return EdgeConflictQuery(delta, n1, n2, t_e, lam)


def _segment_prob(q, cfg):
    if isinstance(q, NodeConflictQuery):
        return node_conflict_prob(q, cfg)
    return edge_conflict_prob(q, cfg)


def _segment_bound(q):
    if isinstance(q, NodeConflictQuery):
        return node_conflict_bound(q)
    return edge_conflict_bound(q)


class ConflictDetector:
    """Memoizes pairwise detection across constraint-tree nodes.

    Children share all but one path with their parent, so most pairs are
    looked up rather than recomputed.
    """

    def __init__(self, inst: ProblemInstance, cfg: QuadratureConfig, floor: float):
        self.inst = inst
        self.cfg = cfg
        self.floor = floor
        self._cache: dict[tuple[int, int], tuple[TimedPath, TimedPath, list[Conflict]]] = {}
        self.evaluations = 0

    def pair(self, pa: TimedPath, pb: TimedPath) -> list[Conflict]:
        key = (id(pa), id(pb))
        hit = self._cache.get(key)
        if hit is not None and hit[0] is pa and hit[1] is pb:
            return hit[2]
        self.evaluations += 1
        found = pair_conflicts(self.inst, pa, pb, self.cfg, self.floor)
        self._cache[key] = (pa, pb, found)
        return found

    def all(self, paths: dict[int, TimedPath]) -> list[Conflict]:
        ids = sorted(paths)
        found = []
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                found.extend(self.pair(paths[a], paths[b]))
        found.sort(key=Conflict.sort_key)
        return found


def detect_conflicts(
    inst: ProblemInstance, paths: dict[int, TimedPath], cfg: QuadratureConfig, floor: float
) -> list[Conflict]:
    """Every conflict above ``floor``, most likely first."""
    return ConflictDetector(inst, cfg, floor).all(paths)


def max_pair_probability(
    inst: ProblemInstance, paths: dict[int, TimedPath], cfg: QuadratureConfig
) -> tuple[float, Conflict | None]:
    found = detect_conflicts(inst, paths, cfg, floor=cfg.abs_tol)
    if not found:
        return 0.0, None
    return found[0].probability, found[0]


# Release times -----------------------------------------------------------------

_MAX_STEPS = 200_000
_MAX_BISECT = 200


class ReleaseTimeError(RuntimeError):
    pass


def release_time(
    conflict: Conflict,
    yielder: int,
    epsilon: float,
    dt: float,
    cfg: QuadratureConfig,
    binary_search: bool = False,
    bs_time_tol: float = 1e-3,
) -> float:
    """Earliest planned time at which ``yielder`` may use the conflict element.

    Stepping mode returns ``t + k * dt`` for the smallest ``k >= 1`` whose
    recomputed probability is below ``epsilon``. Binary-search mode doubles
    the delay from ``dt`` until the probability drops below ``epsilon`` and
    then bisects the bracket down to ``bs_time_tol``. A goal visitor can
    never wait out a resident that stays forever, so it is barred outright.
    """
    if conflict.kind == "goal" and yielder != conflict.resident:
        return math.inf
    t0 = conflict.planned_time(yielder)

    def prob(s):
        return conflict.probability_with_delay(yielder, s, cfg)

    if not binary_search:
        return t0 + _first_clear_step(lambda k: prob(k * dt) < epsilon) * dt

    lo, hi = 0.0, dt
    for _ in range(_MAX_BISECT):
        if prob(hi) < epsilon:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ReleaseTimeError("bracket doubling did not terminate")
    for _ in range(_MAX_BISECT):
        if hi - lo <= bs_time_tol:
            break
        mid = 0.5 * (lo + hi)
        if prob(mid) < epsilon:
            hi = mid
        else:
            lo = mid
    return t0 + hi


def _first_clear_step(clear) -> int:
    """Smallest ``k >= 1`` with ``clear(k)``, as a linear scan would find it.

    The probability is unimodal in the yielder's delay, so once step 1 is
    blocked the blocked steps form a prefix and galloping plus bisection over
    ``k`` lands on the same step with logarithmically many evaluations.
    """
    if clear(1):
        return 1
    lo, hi = 1, 2
    while not clear(hi):
        if hi >= _MAX_STEPS:
            raise ReleaseTimeError(f"no release time found within {_MAX_STEPS} steps")
        lo, hi = hi, min(2 * hi, _MAX_STEPS)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if clear(mid):
            hi = mid
        else:
            lo = mid
    return hi


# Deterministic (zero-delay) conflicts for the baseline -----------------------------------


def nominal_pair_conflicts(inst: ProblemInstance, pa: TimedPath, pb: TimedPath) -> list[Conflict]:
    """Overlaps of nominal occupancy intervals; probability is reported as 1."""
    if pa.agent > pb.agent:
        pa, pb = pb, pa
    g = inst.graph
    lam = inst.delay.lam
    ga, gb = inst.task(pa.agent).goal, inst.task(pb.agent).goal
    out = []
    for k, va in enumerate(pa.visits):
        ea = math.inf if _is_resident(pa, k, ga) else va.departure
        for j, vb in enumerate(pb.visits):
            if vb.node != va.node:
                continue
            eb = math.inf if _is_resident(pb, j, gb) else vb.departure
            if va.arrival <= eb and vb.arrival <= ea:
                resident = pa.agent if ea == math.inf else pb.agent if eb == math.inf else None
                out.append(
                    Conflict(
                        pa.agent, pb.agent, "goal" if resident is not None else "node", NodeElement(va.node), 1.0,
                        va.arrival, vb.arrival, va.shape_before, vb.shape_before, lam,
                        n_m=inst.delay.shape(va.node), w1=va.departure - va.arrival, w2=vb.departure - vb.arrival,
                        resident=resident,
                    )
                )
    for k in range(len(pa.visits) - 1):
        u, v = pa.visits[k].node, pa.visits[k + 1].node
        te = g.edge_time(u, v)
        da = pa.visits[k].departure
        for l in range(len(pb.visits) - 1):
            if (pb.visits[l].node, pb.visits[l + 1].node) != (v, u):
                continue
            db = pb.visits[l].departure
            if da <= db + te and db <= da + te:
                out.append(
                    Conflict(pa.agent, pb.agent, "edge", MergedSegment((u, v)), 1.0, da, db, 0.0, 0.0, lam, t_e=te)
                )
    return out


def nominal_release_time(conflict: Conflict, yielder: int, dt: float) -> float:
    """Yielder waits until the other agent has left the element, plus ``dt``."""
    other = conflict.other(yielder)
    if conflict.kind == "goal" and yielder != conflict.resident:
        return math.inf
    t_other = conflict.planned_time(other)
    if conflict.kind == "edge":
        return t_other + conflict.t_e + dt
    w_other = conflict.w1 if other == conflict.a1 else conflict.w2
    return t_other + w_other + dt


def earliest_first(conflicts: Iterable[Conflict]) -> list[Conflict]:
    return sorted(conflicts, key=lambda c: (min(c.t1, c.t2), c.a1, c.a2, _KIND_ORDER[c.kind], c.element))


# Conflict-avoidance tables for low-level tie-breaking ------------------------------------


class _OccupancyIndex:
    def __init__(self, inst: ProblemInstance, paths: Iterable[TimedPath]):
        self.inst = inst
        self.visits: dict[int, list[tuple[float, float, float, bool]]] = {}
        self.moves: dict[tuple[int, int], list[tuple[float, float]]] = {}
        shape = inst.delay.shape
        for p in paths:
            goal = inst.task(p.agent).goal
            for k, v in enumerate(p.visits):
                self.visits.setdefault(v.node, []).append((v.arrival, v.departure, v.shape_before, _is_resident(p, k, goal)))
                if k + 1 < len(p.visits):
                    nxt = p.visits[k + 1].node
                    self.moves.setdefault((v.node, nxt), []).append((v.departure, v.shape_before + shape(v.node)))


class AvoidanceTable(_OccupancyIndex):
    """Counts other-agent events whose closed-form probability bound exceeds ``threshold``.

    Each bound is a gamma tail ``sf_n(x)``, compared as ``x < isf_n(threshold)``.
    The candidate's own wait is unknown while it is being planned and is taken as zero.
    """

    def __init__(self, inst: ProblemInstance, paths: Iterable[TimedPath], threshold: float):
        super().__init__(inst, paths)
        lam = inst.delay.lam
        self._reach = functools.lru_cache(maxsize=None)(lambda n: upper_quantile(threshold, n, lam))

    def node(self, node, arrival, shape_before, is_goal):
        reach = self._reach
        n_m = self.inst.delay.shape(node)
        count = 0
        for arr, dep, n_o, resident in self.visits.get(node, ()):
            d = arrival - arr
            if resident:
                count += -d < reach(shape_before + n_m)
            elif is_goal:
                count += d - (dep - arr) < reach(n_o + n_m)
            else:
                count += d - (dep - arr) < reach(n_o + n_m) and -d < reach(shape_before + n_m)
        return count

    def edge(self, u, v, departure, shape):
        te = self.inst.graph.edge_time(u, v)
        reach = self._reach
        count = 0
        for dep, n_o in self.moves.get((v, u), ()):
            d = departure - dep
            count += d - te < reach(n_o) and -d - te < reach(shape)
        return count


class NominalAvoidanceTable(_OccupancyIndex):
    """Counts overlaps of nominal occupancy intervals, as the baseline's detector does."""

    def node(self, node, arrival, shape_before, is_goal):
        count = 0
        for arr, dep, _, resident in self.visits.get(node, ()):
            end = math.inf if resident else dep
            count += arr <= arrival <= end or (is_goal and arrival <= dep)
        return count

    def edge(self, u, v, departure, shape):
        te = self.inst.graph.edge_time(u, v)
        return sum(dep <= departure + te and departure <= dep + te for dep, _ in self.moves.get((v, u), ()))
