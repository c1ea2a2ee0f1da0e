"""Single-agent planning under release-time constraints.

A constraint forbids an agent from arriving at a node, or entering a
directed edge, before its release time. The planner minimizes expected
travel time: planned goal arrival plus accumulated delay shape over the rate.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Protocol

from .instance import ProblemInstance


class NoPathError(Exception):
    """No plan reaches the goal under the given constraints."""


@dataclass(frozen=True, order=True)
class NodeElement:
    node: int

    def __str__(self):
        return f"node {self.node}"


@dataclass(frozen=True, order=True)
class DirectedEdge:
    u: int
    v: int

    def __str__(self):
        return f"edge {self.u}->{self.v}"


Element = NodeElement | DirectedEdge


@dataclass(frozen=True)
class Constraint:
    agent: int
    element: Element
    release_time: float  # math.inf forbids the element outright

    def sort_key(self):
        kind = 0 if isinstance(self.element, NodeElement) else 1
        return (self.agent, kind, self.element, self.release_time)


@dataclass(frozen=True)
class Visit:
    node: int
    arrival: float
    departure: float
    shape_before: float  # delay shape accumulated strictly before this visit


@dataclass(frozen=True)
class TimedPath:
    agent: int
    visits: tuple[Visit, ...]
    total_shape: float

    @property
    def goal_arrival(self) -> float:
        return self.visits[-1].arrival

    @property
    def nodes(self) -> list[int]:
        return [v.node for v in self.visits]

    def wait(self, k: int) -> float:
        v = self.visits[k]
        return v.departure - v.arrival


@dataclass(frozen=True)
class PathCost:
    expected_travel_time: float


def expected_cost(path: TimedPath, lam: float) -> PathCost:
    return PathCost(path.goal_arrival + path.total_shape / lam)


def build_path(inst: ProblemInstance, agent: int, nodes: list[int], departures: list[float]) -> TimedPath:
    """Assemble a TimedPath from a node sequence and departure times.

    ``departures[k]`` is the planned departure from ``nodes[k]``; its length is
    ``len(nodes) - 1``.
    """
    visits = []
    shape = 0.0
    arrival = 0.0
    for k, node in enumerate(nodes):
        dep = departures[k] if k < len(departures) else arrival
        if dep < arrival:
            raise ValueError(f"departure before arrival at visit {k}")
        visits.append(Visit(node, arrival, dep, shape))
        shape += inst.delay.shape(node)
        if k + 1 < len(nodes):
            arrival = dep + inst.graph.edge_time(node, nodes[k + 1])
    return TimedPath(agent, tuple(visits), shape)


def path_satisfies(path: TimedPath, constraints: Iterable[Constraint], inst: ProblemInstance) -> bool:
    for c in constraints:
        if c.agent != path.agent:
            continue
        for k, v in enumerate(path.visits):
            if isinstance(c.element, NodeElement):
                if v.node == c.element.node and v.arrival < c.release_time:
                    return False
            elif k + 1 < len(path.visits):
                if (v.node, path.visits[k + 1].node) == (c.element.u, c.element.v) and v.departure < c.release_time:
                    return False
    return True


class ConflictCounter(Protocol):
    """Counts likely clashes of a candidate move with other agents' plans.

    Used only to break ties between equal-cost plans.
    """

    def node(self, node: int, arrival: float, shape_before: float, is_goal: bool) -> int: ...

    def edge(self, u: int, v: int, departure: float, shape: float) -> int: ...


class LowLevelPlanner:
    """Shortest-expected-time planner for one instance.

    Search labels are (node, arrival time, accumulated shape, visit count); a
    label is pruned when another label at the same node is no later, carries
    no more shape and has no more visits, so revisits remain possible
    whenever constraints make them worthwhile.
    """

    def __init__(self, inst: ProblemInstance, delay_aware: bool = True, max_labels: int = 2_000_000):
        self.inst = inst
        self.shape_weight = 1.0 / inst.delay.lam if delay_aware else 0.0
        self.max_labels = max_labels
        self._h: dict[int, dict[int, float]] = {}
        g, shape = inst.graph, inst.delay.shape
        self._out = {n.id: tuple((v, g.edge_time(n.id, v), shape(v)) for v in g.neighbors(n.id)) for n in g.nodes}

    def heuristic(self, goal: int) -> dict[int, float]:
        """Unconstrained cost-to-go: travel time plus weighted shape of every node still to visit.

        This is exact without constraints and a lower bound with them, since
        constraints only add waits and detours. With the shape weight at zero
        it is the nominal shortest travel time.
        """
        if goal not in self._h:
            w = self.shape_weight
            dist = {goal: 0.0}
            pq = [(0.0, goal)]
            while pq:
                d, v = heapq.heappop(pq)
                if d > dist[v]:
                    continue
                step_in = w * self.inst.delay.shape(v)
                for u, te, _ in self._out[v]:
                    nd = d + te + step_in
                    if nd < dist.get(u, math.inf):
                        dist[u] = nd
                        heapq.heappush(pq, (nd, u))
            self._h[goal] = dist
        return self._h[goal]

    def plan(
        self, agent: int, constraints: Iterable[Constraint] = (), avoid: ConflictCounter | None = None
    ) -> TimedPath:
        """Minimum expected-cost plan respecting ``constraints``.

        Equal-cost plans are ranked by ``avoid``'s clash count when given, then
        by fewer visits, then by node sequence.
        """
        inst = self.inst
        task = inst.task(agent)
        node_rel: dict[int, float] = {}
        edge_rel: dict[tuple[int, int], float] = {}
        for c in constraints:
            if c.agent != agent:
                raise ValueError(f"constraint for agent {c.agent} passed while planning agent {agent}")
            if isinstance(c.element, NodeElement):
                node_rel[c.element.node] = max(node_rel.get(c.element.node, -math.inf), c.release_time)
            else:
                key = (c.element.u, c.element.v)
                edge_rel[key] = max(edge_rel.get(key, -math.inf), c.release_time)

        h = self.heuristic(task.goal)
        if task.start not in h:
            raise NoPathError(f"goal of agent {agent} unreachable from its start")
        if node_rel.get(task.start, -math.inf) > 0:
            raise NoPathError(f"agent {agent} is released from its start node only after time 0")

        w = self.shape_weight
        out = self._out
        s0 = inst.delay.shape(task.start)
        c0 = avoid.node(task.start, 0.0, 0.0, task.start == task.goal) if avoid else 0
        # label: (node, arrival, shape incl. this node, visits, parent index, departure from parent)
        labels = [(task.start, 0.0, s0, 1, -1, 0.0)]
        heap = [(w * s0 + h[task.start], c0, 1, (task.start,), 0)]
        closed: dict[int, list[tuple[float, float, int, int]]] = {}

        while heap:
            _, clash, nvis, seq, idx = heapq.heappop(heap)
            u, t, s, _, _, _ = labels[idx]
            front = closed.setdefault(u, [])
            if any(ft <= t and fs <= s and fn <= nvis and fc <= clash for ft, fs, fn, fc in front):
                continue
            front.append((t, s, nvis, clash))
            if u == task.goal:
                return self._reconstruct(agent, labels, idx)
            for v, te, sh in out[u]:
                hv = h.get(v)
                if hv is None:
                    continue
                rn = node_rel.get(v, -math.inf)
                re = edge_rel.get((u, v), -math.inf)
                if rn == math.inf or re == math.inf:
                    continue
                dep = max(t, re, rn - te)
                while dep + te < rn:
                    dep = math.nextafter(dep, math.inf)
                arr = dep + te
                sv = s + sh
                cv = clash
                if avoid is not None:
                    cv += avoid.edge(u, v, dep, s) + avoid.node(v, arr, s, v == task.goal)
                if any(ft <= arr and fs <= sv and fn <= nvis + 1 and fc <= cv for ft, fs, fn, fc in closed.get(v, ())):
                    continue
                labels.append((v, arr, sv, nvis + 1, idx, dep))
                if len(labels) > self.max_labels:
                    raise NoPathError(f"label budget exhausted while planning agent {agent}")
                heapq.heappush(heap, (arr + w * sv + hv, cv, nvis + 1, seq + (v,), len(labels) - 1))
        raise NoPathError(f"no plan for agent {agent} satisfies its constraints")

    def _reconstruct(self, agent, labels, idx) -> TimedPath:
        chain = []
        while idx >= 0:
            chain.append(labels[idx])
            idx = labels[idx][4]
        chain.reverse()
        visits = []
        shape_before = 0.0
        for k, (node, arr, s_incl, _, _, _) in enumerate(chain):
            dep = chain[k + 1][5] if k + 1 < len(chain) else arr
            visits.append(Visit(node, arr, dep, shape_before))
            shape_before = s_incl
        return TimedPath(agent, tuple(visits), shape_before)


def plan(
    inst: ProblemInstance,
    agent: int,
    constraints: Iterable[Constraint] = (),
    delay_aware: bool = True,
    avoid: ConflictCounter | None = None,
) -> TimedPath:
    """Minimum expected-cost plan for ``agent`` respecting ``constraints``.

    Ties are broken by ``avoid``'s clash count if given, then by fewer visits,
    then by the lexicographically smallest node sequence.
    """
    return LowLevelPlanner(inst, delay_aware).plan(agent, constraints, avoid)
