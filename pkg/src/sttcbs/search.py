"""Constraint-tree search over stochastic schedules, plus a zero-delay baseline."""
from __future__ import annotations

import heapq
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from enum import Enum

from .conflicts import (
    AvoidanceTable,
    Conflict,
    ConflictDetector,
    earliest_first,
    NominalAvoidanceTable,
    max_pair_probability,
    nominal_pair_conflicts,
    nominal_release_time,
    release_time,
)
from .instance import InstanceError, ProblemInstance
from .lowlevel import Constraint, LowLevelPlanner, NoPathError, TimedPath, build_path, expected_cost
from .prob import DEFAULT_QUADRATURE, QuadratureConfig

log = logging.getLogger(__name__)


class Mode(str, Enum):
    STOCHASTIC = "stt"
    BASELINE = "cbs"


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.01
    dt: float = 0.1
    use_binary_search: bool = False
    bs_time_tol: float = 1e-3
    quadrature: QuadratureConfig = DEFAULT_QUADRATURE
    node_budget: int = 5000
    mode: Mode = Mode.STOCHASTIC
    # adopt an equal-cost child with fewer conflicts instead of splitting
    bypass: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon out of range (0, 1): {self.epsilon}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.bs_time_tol > 0:
            raise ValueError(f"bs_time_tol must be positive, got {self.bs_time_tol}")
        if self.node_budget < 1:
            raise ValueError("node_budget must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))


class BudgetExhausted(RuntimeError):
    def __init__(self, message: str, stats: dict, best_cost: float):
        super().__init__(message)
        self.stats = stats
        self.best_cost = best_cost


@dataclass
class CTNode:
    constraints: frozenset
    paths: dict[int, TimedPath]
    cost: float
    n_conflicts: int
    index: int
    conflict: Conflict | None
    depth: int = 0

    def key(self):
        return (self.cost, self.n_conflicts, self.index)


@dataclass
class Solution:
    paths: dict[int, TimedPath]
    cost: float
    nominal_cost: float
    max_pair_prob: float
    stats: dict = field(default_factory=dict)


def total_cost(paths: dict[int, TimedPath], lam: float) -> float:
    return math.fsum(expected_cost(paths[a], lam).expected_travel_time for a in sorted(paths))


def nominal_cost(paths: dict[int, TimedPath]) -> float:
    return math.fsum(paths[a].goal_arrival for a in sorted(paths))


class _Search:
    """Shared best-first driver; subclasses define conflicts and costs."""

    def __init__(self, inst: ProblemInstance, config: SolverConfig, delay_aware: bool):
        self.inst = inst
        self.config = config
        self.planner = LowLevelPlanner(inst, delay_aware=delay_aware)
        self.generated = 0
        self.expanded = 0
        self.pruned = 0
        self.bypassed = 0
        self.expanded_costs: list[float] = []

    # hooks
    def conflicts(self, paths) -> list[Conflict]:
        raise NotImplementedError

    def release(self, conflict: Conflict, yielder: int) -> float:
        raise NotImplementedError

    def cost(self, paths) -> float:
        raise NotImplementedError

    def avoidance(self, paths):
        raise NotImplementedError

    def replan(self, agent, constraints, paths, skip) -> TimedPath:
        others = [p for a, p in sorted(paths.items()) if a != skip]
        return self.planner.plan(agent, constraints, self.avoidance(others))

    def make_node(self, constraints, paths, depth) -> CTNode:
        found = self.conflicts(paths)
        node = CTNode(constraints, paths, self.cost(paths), len(found), self.generated, found[0] if found else None, depth)
        self.generated += 1
        return node

    def root(self) -> CTNode:
        paths: dict[int, TimedPath] = {}
        for a in sorted(self.inst.agent_ids):
            paths[a] = self.replan(a, (), paths, a)
        return self.make_node(frozenset(), paths, 0)

    def expand(self, node: CTNode, conflict: Conflict) -> list[CTNode | None]:
        children = []
        for yielder in (conflict.a1, conflict.a2):
            rel = self.release(conflict, yielder)
            c = Constraint(yielder, conflict.element_for(yielder), rel)
            if c in node.constraints:
                # Releases strictly exceed the current plan's time, so this signals a bug.
                log.warning("duplicate constraint %s pruned", c)
                self.pruned += 1
                children.append(None)
                continue
            constraints = node.constraints | {c}
            mine = [k for k in constraints if k.agent == yielder]
            try:
                new_path = self.replan(yielder, mine, node.paths, yielder)
            except NoPathError:
                self.pruned += 1
                children.append(None)
                continue
            paths = dict(node.paths)
            paths[yielder] = new_path
            children.append(self.make_node(constraints, paths, node.depth + 1))
        return children

    def run(self) -> tuple[CTNode, dict]:
        t0 = time.perf_counter()
        root = self.root()
        heap = [(root.key(), root)]
        while heap:
            _, node = heapq.heappop(heap)
            if node.conflict is None:
                return node, self.stats(t0)
            if self.expanded >= self.config.node_budget:
                raise BudgetExhausted(
                    f"node budget of {self.config.node_budget} expansions exhausted",
                    self.stats(t0),
                    node.cost,
                )
            self.expanded += 1
            self.expanded_costs.append(node.cost)
            children = [c for c in self.expand(node, node.conflict) if c is not None]
            shortcut = self._bypass(node, children) if self.config.bypass else None
            if shortcut is not None:
                self.bypassed += 1
                heapq.heappush(heap, (shortcut.key(), shortcut))
                continue
            for child in children:
                heapq.heappush(heap, (child.key(), child))
        raise BudgetExhausted("constraint tree exhausted without a valid solution", self.stats(t0), math.inf)

    @staticmethod
    def _bypass(node: CTNode, children: list[CTNode]) -> CTNode | None:
        # The child's paths satisfy the parent's constraints too, so the parent can
        # take them over without the new constraint and keep its whole subtree.
        better = [c for c in children if c.cost <= node.cost and c.n_conflicts < node.n_conflicts]
        if not better:
            return None
        best = min(better, key=CTNode.key)
        return CTNode(node.constraints, best.paths, best.cost, best.n_conflicts, best.index, best.conflict, node.depth)

    def stats(self, t0) -> dict:
        return {
            "expanded": self.expanded,
            "generated": self.generated,
            "pruned": self.pruned,
            "bypassed": self.bypassed,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }


class _StochasticSearch(_Search):
    def __init__(self, inst, config):
        super().__init__(inst, config, delay_aware=True)
        self.detector = ConflictDetector(inst, config.quadrature, floor=config.epsilon)

    def conflicts(self, paths):
        return self.detector.all(paths)

    def release(self, conflict, yielder):
        c = self.config
        return release_time(conflict, yielder, c.epsilon, c.dt, c.quadrature, c.use_binary_search, c.bs_time_tol)

    def cost(self, paths):
        return total_cost(paths, self.inst.delay.lam)

    def avoidance(self, paths):
        return AvoidanceTable(self.inst, paths, self.config.epsilon)

    def stats(self, t0):
        out = super().stats(t0)
        out["pair_evaluations"] = self.detector.evaluations
        return out


class _NominalSearch(_Search):
    def __init__(self, inst, config):
        super().__init__(inst, config, delay_aware=False)
        self._cache: dict = {}

    def conflicts(self, paths):
        ids = sorted(paths)
        found = []
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                pa, pb = paths[a], paths[b]
                key = (id(pa), id(pb))
                hit = self._cache.get(key)
                if hit is None or hit[0] is not pa or hit[1] is not pb:
                    hit = (pa, pb, nominal_pair_conflicts(self.inst, pa, pb))
                    self._cache[key] = hit
                found.extend(hit[2])
        return earliest_first(found)

    def release(self, conflict, yielder):
        return nominal_release_time(conflict, yielder, self.config.dt)

    def cost(self, paths):
        return nominal_cost(paths)

    def avoidance(self, paths):
        return NominalAvoidanceTable(self.inst, paths)


def _finish(inst, config, node: CTNode, stats: dict) -> Solution:
    lam = inst.delay.lam
    p_max, _ = max_pair_probability(inst, node.paths, config.quadrature)
    stats = dict(stats, mode=config.mode.value, ct_constraints=len(node.constraints), epsilon=config.epsilon, dt=config.dt)
    return Solution(node.paths, total_cost(node.paths, lam), nominal_cost(node.paths), p_max, stats)


def solve(inst: ProblemInstance, config: SolverConfig = SolverConfig()) -> Solution:
    """Minimum expected-cost solution whose pairwise conflict probabilities are all at most epsilon.

    Dispatches to the zero-delay baseline when ``config.mode`` asks for it.
    """
    if config.mode is Mode.BASELINE:
        return solve_deterministic_baseline(inst, config)
    search = _StochasticSearch(inst, config)
    node, stats = search.run()
    stats["expanded_costs"] = search.expanded_costs
    return _finish(inst, config, node, stats)


def solve_deterministic_baseline(inst: ProblemInstance, config: SolverConfig = SolverConfig()) -> Solution:
    """Classic CBS on nominal schedules: conflicts are overlapping occupancy intervals."""
    search = _NominalSearch(inst, config)
    node, stats = search.run()
    stats["expanded_costs"] = search.expanded_costs
    return _finish(inst, SolverConfig(**{**config.__dict__, "mode": Mode.BASELINE}), node, stats)


def find_most_likely_conflict(
    inst: ProblemInstance, paths: dict[int, TimedPath], config: SolverConfig = SolverConfig()
) -> Conflict | None:
    found = ConflictDetector(inst, config.quadrature, floor=config.epsilon).all(paths)
    return found[0] if found else None


def compute_release_time(conflict: Conflict, yielder: int, config: SolverConfig = SolverConfig()) -> float:
    return release_time(
        conflict, yielder, config.epsilon, config.dt, config.quadrature, config.use_binary_search, config.bs_time_tol
    )


def expand(
    ct_node: CTNode, conflict: Conflict, inst: ProblemInstance, config: SolverConfig = SolverConfig()
) -> tuple[CTNode | None, CTNode | None]:
    """Children where ``conflict.a1`` and ``conflict.a2`` yield, respectively."""
    search = _StochasticSearch(inst, config) if config.mode is Mode.STOCHASTIC else _NominalSearch(inst, config)
    search.generated = ct_node.index + 1
    a, b = search.expand(ct_node, conflict)
    return a, b


def root_node(inst: ProblemInstance, config: SolverConfig = SolverConfig()) -> CTNode:
    search = _StochasticSearch(inst, config) if config.mode is Mode.STOCHASTIC else _NominalSearch(inst, config)
    return search.root()


# serialization ---------------------------------------------------------------------


def solution_to_dict(sol: Solution, include_timing: bool = True) -> dict:
    stats = dict(sol.stats)
    if not include_timing:
        stats.pop("wall_ms", None)
    return {
        "cost": sol.cost,
        "nominal_cost": sol.nominal_cost,
        "max_pair_prob": sol.max_pair_prob,
        "paths": {
            str(a): [{"node": v.node, "arr": v.arrival, "dep": v.departure} for v in p.visits]
            for a, p in sorted(sol.paths.items())
        },
        "stats": stats,
    }


def save_solution(sol: Solution, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(solution_to_dict(sol), fh, indent=1)
        fh.write("\n")


def paths_from_dict(inst: ProblemInstance, data: dict) -> dict[int, TimedPath]:
    """Rebuild TimedPaths from serialized visits, checking them against ``inst``."""
    raw = data.get("paths")
    if not isinstance(raw, dict):
        raise InstanceError("solution has no paths object")
    if sorted(int(a) for a in raw) != sorted(inst.agent_ids):
        raise InstanceError("solution agents do not match the instance")
    paths = {}
    for key, visits in raw.items():
        agent = int(key)
        task = inst.task(agent)
        nodes = [int(v["node"]) for v in visits]
        if not nodes or nodes[0] != task.start or nodes[-1] != task.goal:
            raise InstanceError(f"path of agent {agent} does not join its start and goal")
        for u, v in zip(nodes, nodes[1:]):
            if not inst.graph.has_edge(u, v):
                raise InstanceError(f"path of agent {agent} uses missing edge ({u}, {v})")
        deps = [float(v["dep"]) for v in visits[:-1]]
        try:
            path = build_path(inst, agent, nodes, deps)
        except ValueError as exc:
            raise InstanceError(f"path of agent {agent}: {exc}") from None
        for v, rec in zip(path.visits, visits):
            if not math.isclose(v.arrival, float(rec["arr"]), rel_tol=1e-12, abs_tol=1e-9):
                raise InstanceError(f"path of agent {agent}: arrival times inconsistent with edge times")
        paths[agent] = path
    return paths


def load_solution(inst: ProblemInstance, path: str | os.PathLike) -> tuple[dict, dict[int, TimedPath]]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: malformed JSON: {exc}") from None
    return data, paths_from_dict(inst, data)
