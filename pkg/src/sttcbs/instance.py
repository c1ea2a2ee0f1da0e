"""Problem instances: graph, delay model and agent tasks, plus JSON IO."""
from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field
from typing import Mapping


class InstanceError(ValueError):
    """An instance is malformed or violates an invariant."""


@dataclass(frozen=True)
class GraphNode:
    id: int
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    t: float


@dataclass(frozen=True)
class Graph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[Edge, ...]
    _adj: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _times: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate node id")
        known = set(ids)
        adj = {i: [] for i in ids}
        times = {}
        for e in self.edges:
            if e.u not in known or e.v not in known:
                raise InstanceError(f"edge ({e.u}, {e.v}) references unknown node")
            if e.u == e.v:
                raise InstanceError(f"self-loop at node {e.u}")
            if not (isinstance(e.t, (int, float)) and math.isfinite(e.t) and e.t > 0):
                raise InstanceError(f"nonpositive edge time on ({e.u}, {e.v}): {e.t}")
            key = (min(e.u, e.v), max(e.u, e.v))
            if key in times:
                raise InstanceError(f"duplicate edge ({e.u}, {e.v})")
            times[key] = float(e.t)
            adj[e.u].append(e.v)
            adj[e.v].append(e.u)
        object.__setattr__(self, "_adj", {k: tuple(sorted(v)) for k, v in adj.items()})
        object.__setattr__(self, "_times", times)

    def __contains__(self, node_id) -> bool:
        return node_id in self._adj

    def neighbors(self, node_id: int) -> tuple[int, ...]:
        return self._adj[node_id]

    def edge_time(self, u: int, v: int) -> float:
        try:
            return self._times[(min(u, v), max(u, v))]
        except KeyError:
            raise KeyError(f"no edge between {u} and {v}") from None

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._times


@dataclass(frozen=True)
class DelayModel:
    lam: float
    default_shape: float = 1.0
    node_shape: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if isinstance(self.node_shape, Mapping):
            object.__setattr__(self, "node_shape", tuple(sorted(self.node_shape.items())))
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InstanceError(f"lambda must be positive, got {self.lam}")
        for _, s in ((None, self.default_shape), *self.node_shape):
            if not (math.isfinite(s) and s > 0):
                raise InstanceError(f"node shapes must be positive, got {s}")
        object.__setattr__(self, "_lookup", dict(self.node_shape))

    def shape(self, node_id: int) -> float:
        return self._lookup.get(node_id, self.default_shape)


@dataclass(frozen=True)
class AgentTask:
    id: int
    start: int
    goal: int


@dataclass(frozen=True)
class ProblemInstance:
    graph: Graph
    delay: DelayModel
    tasks: tuple[AgentTask, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        validate(self)

    def task(self, agent_id: int) -> AgentTask:
        for t in self.tasks:
            if t.id == agent_id:
                return t
        raise KeyError(f"unknown agent {agent_id}")

    @property
    def agent_ids(self) -> list[int]:
        return [t.id for t in self.tasks]


def validate(inst: ProblemInstance) -> None:
    ids = [t.id for t in inst.tasks]
    if len(set(ids)) != len(ids):
        raise InstanceError("duplicate agent id")
    for t in inst.tasks:
        if t.start not in inst.graph or t.goal not in inst.graph:
            raise InstanceError(f"agent {t.id} references unknown node")
    starts = [t.start for t in inst.tasks]
    goals = [t.goal for t in inst.tasks]
    if len(set(starts)) != len(starts):
        raise InstanceError("duplicate start node")
    if len(set(goals)) != len(goals):
        raise InstanceError("duplicate goal node")
    for nid, _ in inst.delay.node_shape:
        if nid not in inst.graph:
            raise InstanceError(f"delay shape given for unknown node {nid}")


# JSON ----------------------------------------------------------------------------

_TOP_KEYS = {"nodes", "edges", "delay", "agents"}


def _require_keys(obj, allowed: set, required: set, where: str):
    if not isinstance(obj, dict):
        raise InstanceError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise InstanceError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise InstanceError(f"{where}: missing keys {sorted(missing)}")


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        raise InstanceError(f"{where}: expected an integer, got {v!r}")
    return v


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InstanceError(f"{where}: expected a number, got {v!r}")
    return float(v)


def from_dict(data: dict) -> ProblemInstance:
    _require_keys(data, _TOP_KEYS, _TOP_KEYS, "instance")
    nodes = []
    for n in data["nodes"]:
        _require_keys(n, {"id", "x", "y"}, {"id"}, "node")
        nodes.append(
            GraphNode(
                _int(n["id"], "node.id"),
                _num(n["x"], "node.x") if "x" in n else None,
                _num(n["y"], "node.y") if "y" in n else None,
            )
        )
    edges = []
    for e in data["edges"]:
        _require_keys(e, {"u", "v", "t"}, {"u", "v", "t"}, "edge")
        edges.append(Edge(_int(e["u"], "edge.u"), _int(e["v"], "edge.v"), _num(e["t"], "edge.t")))
    d = data["delay"]
    _require_keys(d, {"lambda", "default_shape", "node_shape"}, {"lambda", "default_shape"}, "delay")
    shapes = d.get("node_shape", {})
    if not isinstance(shapes, dict):
        raise InstanceError("delay.node_shape: expected an object")
    try:
        node_shape = {int(k): _num(v, "delay.node_shape") for k, v in shapes.items()}
    except ValueError as exc:
        raise InstanceError(f"delay.node_shape: {exc}") from None
    delay = DelayModel(_num(d["lambda"], "delay.lambda"), _num(d["default_shape"], "delay.default_shape"), node_shape)
    tasks = []
    for a in data["agents"]:
        _require_keys(a, {"id", "start", "goal"}, {"id", "start", "goal"}, "agent")
        tasks.append(AgentTask(_int(a["id"], "agent.id"), _int(a["start"], "agent.start"), _int(a["goal"], "agent.goal")))
    return ProblemInstance(Graph(tuple(nodes), tuple(edges)), delay, tuple(tasks))


def to_dict(inst: ProblemInstance) -> dict:
    nodes = []
    for n in inst.graph.nodes:
        rec = {"id": n.id}
        if n.x is not None:
            rec["x"] = n.x
        if n.y is not None:
            rec["y"] = n.y
        nodes.append(rec)
    return {
        "nodes": nodes,
        "edges": [{"u": e.u, "v": e.v, "t": e.t} for e in inst.graph.edges],
        "delay": {
            "lambda": inst.delay.lam,
            "default_shape": inst.delay.default_shape,
            "node_shape": {str(k): v for k, v in inst.delay.node_shape},
        },
        "agents": [{"id": t.id, "start": t.start, "goal": t.goal} for t in inst.tasks],
    }


def dumps(inst: ProblemInstance) -> str:
    # float repr is the shortest string that round-trips, so values are bit-exact.
    return json.dumps(to_dict(inst), indent=1)


def load_instance(path: str | os.PathLike) -> ProblemInstance:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: malformed JSON: {exc}") from None
    return from_dict(data)


def save_instance(inst: ProblemInstance, path: str | os.PathLike) -> None:
    validate(inst)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(inst))
        fh.write("\n")


def grid_edge_count(rows: int, cols: int) -> int:
    return 2 * rows * cols - rows - cols


def generate_grid(
    rows: int,
    cols: int,
    n_agents: int,
    seed: int,
    edge_time: float = 1.0,
    shape: float = 1.0,
    lam: float = 5.0,
) -> ProblemInstance:
    """4-connected grid with random distinct starts and distinct goals.

    Node ``r * cols + c`` sits at ``(x=c, y=r)``.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise InstanceError("grid needs at least two cells")
    if n_agents < 1:
        raise InstanceError("need at least one agent")
    if n_agents > rows * cols:
        raise InstanceError(f"too many agents: {n_agents} > {rows * cols} cells")
    nodes = tuple(GraphNode(r * cols + c, float(c), float(r)) for r in range(rows) for c in range(cols))
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append(Edge(i, i + 1, float(edge_time)))
            if r + 1 < rows:
                edges.append(Edge(i, i + cols, float(edge_time)))
    rng = random.Random(seed)
    cells = list(range(rows * cols))
    starts = rng.sample(cells, n_agents)
    goals = rng.sample(cells, n_agents)
    tasks = tuple(AgentTask(i, s, g) for i, (s, g) in enumerate(zip(starts, goals)))
    return ProblemInstance(Graph(nodes, tuple(edges)), DelayModel(float(lam), float(shape)), tasks)
