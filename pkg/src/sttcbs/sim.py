"""Monte Carlo execution of planned schedules under sampled gamma delays.

Every node visit draws one delay ``Gamma(shape(node), lam)``. The delay is
spent at the node before the planned wait, so an agent occupies visit ``k``
over ``[arrival_k + D_{<k}, departure_k + D_{<=k}]`` where ``D_{<k}`` is the
delay accumulated before the visit. The agent then crosses the outgoing edge
in exactly its nominal time. A goal is held through the end of the rollout.

Samples come in fixed-size chunks; chunk ``c`` of seed ``s`` always draws
from ``SeedSequence(s, spawn_key=(c,))``, so estimates depend only on the
seed and the sample count, never on how chunks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .conflicts import MergedSegment
from .instance import ProblemInstance
from .lowlevel import DirectedEdge, NodeElement, TimedPath
from .prob import EdgeConflictQuery, NodeConflictQuery

CHUNK = 4096


class ElementNotShared(ValueError):
    """The element does not lie on both agents' paths."""


@dataclass(frozen=True)
class Estimate:
    p: float
    se: float
    n: int

    @classmethod
    def from_counts(cls, hits: int, n: int) -> "Estimate":
        p = hits / n
        return cls(p, math.sqrt(max(p * (1.0 - p), 0.0) / n), n)

    def agrees_with(self, value: float, k: float = 3.0, floor: float = 0.0) -> bool:
        """``|value - p| <= k * se``, where se is the larger of the sample's and ``value``'s binomial error.

        The second term keeps a zero-hit sample from rejecting a small true probability.
        """
        se_ref = math.sqrt(max(value * (1.0 - value), 0.0) / self.n)
        return abs(value - self.p) <= max(k * max(self.se, se_ref), floor)


def element_record(element) -> dict:
    if isinstance(element, NodeElement):
        return {"kind": "node", "node": element.node}
    if isinstance(element, DirectedEdge):
        return {"kind": "edge", "u": element.u, "v": element.v}
    if isinstance(element, MergedSegment):
        return {"kind": "segment", "nodes": list(element.nodes)}
    raise TypeError(f"unknown element {element!r}")


def estimate_record(pair: tuple[int, int], element, est: Estimate) -> dict:
    """JSON record ``{"pair": [a, b], "element": ..., "p": .., "se": .., "n": ..}``."""
    return {"pair": [int(pair[0]), int(pair[1])], "element": element_record(element), "p": est.p, "se": est.se, "n": est.n}


def csv_fields(est: Estimate | None) -> tuple[str, str]:
    if est is None:
        return "", ""
    return repr(est.p), repr(est.se)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _chunks(n_samples: int):
    for c in range(-(-n_samples // CHUNK)):
        yield c, min(CHUNK, n_samples - c * CHUNK)


# Rollouts ------------------------------------------------------------------------


@dataclass(frozen=True)
class _Schedule:
    """Per-agent planned arrays: arrivals, departures and node shapes by visit."""

    agent: int
    nodes: tuple[int, ...]
    arrival: np.ndarray
    departure: np.ndarray
    shape: np.ndarray


def _schedules(inst: ProblemInstance, paths: dict[int, TimedPath]) -> list[_Schedule]:
    out = []
    for a in sorted(paths):
        p = paths[a]
        out.append(
            _Schedule(
                a,
                tuple(v.node for v in p.visits),
                np.array([v.arrival for v in p.visits]),
                np.array([v.departure for v in p.visits]),
                np.array([inst.delay.shape(v.node) for v in p.visits]),
            )
        )
    return out


def _realize(schedules: list[_Schedule], lam: float, rng: np.random.Generator, m: int):
    """Realized (arrival, departure) arrays of shape ``(m, visits)`` per agent.

    Goal departures are left at their realized value; callers extend them.
    A full chunk is always drawn and cut to ``m`` rows, so sample ``i`` of a
    chunk is the same whatever the sample count.
    """
    out = {}
    for s in schedules:
        d = rng.gamma(s.shape, 1.0 / lam, size=(CHUNK, len(s.nodes)))[:m]
        acc = np.cumsum(d, axis=1)
        before = acc - d
        out[s.agent] = (s.arrival + before, s.departure + acc)
    return out


@dataclass(frozen=True)
class Rollout:
    """One sampled execution.

    ``arrival[a][k]`` and ``departure[a][k]`` are realized times of agent
    ``a``'s visit ``k``; the final departure is the moment the goal is
    reached plus its node delay, and the goal is held until ``horizon``.
    """

    seed: int
    index: int
    arrival: dict[int, tuple[float, ...]]
    departure: dict[int, tuple[float, ...]]
    horizon: float


def rollout(inst: ProblemInstance, paths: dict[int, TimedPath], seed: int, index: int = 0) -> Rollout:
    """Sample ``index`` of the stream that the estimators draw for ``seed``."""
    chunk, offset = divmod(index, CHUNK)
    real = _realize(_schedules(inst, paths), inst.delay.lam, _chunk_rng(seed, chunk), CHUNK)
    arrival = {a: tuple(float(x) for x in r[0][offset]) for a, r in real.items()}
    departure = {a: tuple(float(x) for x in r[1][offset]) for a, r in real.items()}
    horizon = max(max(d) for d in departure.values()) if departure else 0.0
    return Rollout(seed, index, arrival, departure, horizon)


@dataclass(frozen=True)
class ConflictEvent:
    pair: tuple[int, int]
    element: NodeElement | DirectedEdge
    interval: tuple[float, float]


def conflict_events(inst: ProblemInstance, paths: dict[int, TimedPath], ro: Rollout) -> list[ConflictEvent]:
    """Every pairwise overlap of realized occupancy in one rollout."""
    events = []
    ids = sorted(paths)
    g = inst.graph
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            na, nb = paths[a].nodes, paths[b].nodes
            for k, u in enumerate(na):
                sa = (ro.arrival[a][k], ro.horizon if k == len(na) - 1 else ro.departure[a][k])
                for j, w in enumerate(nb):
                    if u != w:
                        continue
                    sb = (ro.arrival[b][j], ro.horizon if j == len(nb) - 1 else ro.departure[b][j])
                    lo, hi = max(sa[0], sb[0]), min(sa[1], sb[1])
                    if lo <= hi:
                        events.append(ConflictEvent((a, b), NodeElement(u), (lo, hi)))
            for k in range(len(na) - 1):
                for j in range(len(nb) - 1):
                    if (na[k], na[k + 1]) != (nb[j + 1], nb[j]):
                        continue
                    te = g.edge_time(na[k], na[k + 1])
                    da, db = ro.departure[a][k], ro.departure[b][j]
                    lo, hi = max(da, db), min(da, db) + te
                    if lo <= hi:
                        events.append(ConflictEvent((a, b), DirectedEdge(na[k], na[k + 1]), (lo, hi)))
    return events


# Estimators ----------------------------------------------------------------------


def _node_hits(sa: _Schedule, ra, sb: _Schedule, rb, node: int, m: int) -> np.ndarray:
    hit = np.zeros(m, dtype=bool)
    last_a, last_b = len(sa.nodes) - 1, len(sb.nodes) - 1
    for k in (i for i, u in enumerate(sa.nodes) if u == node):
        a0, a1 = ra[0][:, k], np.inf if k == last_a else ra[1][:, k]
        for j in (i for i, u in enumerate(sb.nodes) if u == node):
            b0, b1 = rb[0][:, j], np.inf if j == last_b else rb[1][:, j]
            hit |= (a0 <= b1) & (b0 <= a1)
    return hit


def _run_hits(sa, ra, sb, rb, run: tuple[int, ...], m: int) -> np.ndarray:
    """Head-on overlaps on ``run`` (a's node order), occupied from entry departure to exit arrival."""
    hit = np.zeros(m, dtype=bool)
    L = len(run) - 1
    rev = run[::-1]
    for k in range(len(sa.nodes) - L):
        if sa.nodes[k : k + L + 1] != run:
            continue
        a0, a1 = ra[1][:, k], ra[0][:, k + L]
        for j in range(len(sb.nodes) - L):
            if sb.nodes[j : j + L + 1] != rev:
                continue
            b0, b1 = rb[1][:, j], rb[0][:, j + L]
            hit |= (a0 <= b1) & (b0 <= a1)
    return hit


def _on_path(nodes: tuple[int, ...], run: tuple[int, ...]) -> bool:
    L = len(run)
    return any(nodes[k : k + L] == run for k in range(len(nodes) - L + 1))


def estimate_pairwise_prob(
    inst: ProblemInstance,
    paths: dict[int, TimedPath],
    pair: tuple[int, int],
    element: NodeElement | DirectedEdge | MergedSegment,
    n_samples: int,
    seed: int,
) -> Estimate:
    """Fraction of rollouts in which the pair's realized occupancies of ``element`` intersect.

    A directed edge ``u -> v`` is taken in that direction by the first agent
    and reversed by the second; a merged segment likewise, occupied as one
    stretch from the entry departure to the exit arrival.
    """
    a, b = pair
    if a == b:
        raise ValueError("pair needs two distinct agents")
    scheds = {s.agent: s for s in _schedules(inst, {a: paths[a], b: paths[b]})}
    sa, sb = scheds[a], scheds[b]
    if isinstance(element, NodeElement):
        if element.node not in sa.nodes or element.node not in sb.nodes:
            raise ElementNotShared(f"{element} is not on both paths")
        run = None
    else:
        run = (element.u, element.v) if isinstance(element, DirectedEdge) else tuple(element.nodes)
        if not (_on_path(sa.nodes, run) and _on_path(sb.nodes, run[::-1])):
            raise ElementNotShared(f"{element} is not traversed head-on by agents {a} and {b}")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    # Realize every agent so the per-agent draws match the global estimator's stream.
    all_s = _schedules(inst, paths)
    hits = 0
    for c, m in _chunks(n_samples):
        real = _realize(all_s, inst.delay.lam, _chunk_rng(seed, c), m)
        if run is None:
            h = _node_hits(sa, real[a], sb, real[b], element.node, m)
        else:
            h = _run_hits(sa, real[a], sb, real[b], run, m)
        hits += int(h.sum())
    return Estimate.from_counts(hits, n_samples)


def _pair_any_hits(sa, ra, sb, rb, m) -> np.ndarray:
    hit = np.zeros(m, dtype=bool)
    for node in set(sa.nodes) & set(sb.nodes):
        hit |= _node_hits(sa, ra, sb, rb, node, m)
    b_moves = {(sb.nodes[j], sb.nodes[j + 1]) for j in range(len(sb.nodes) - 1)}
    for k in range(len(sa.nodes) - 1):
        u, v = sa.nodes[k], sa.nodes[k + 1]
        if (v, u) in b_moves:
            hit |= _run_hits(sa, ra, sb, rb, (u, v), m)
    return hit


def estimate_global_prob(
    inst: ProblemInstance, paths: dict[int, TimedPath], n_samples: int, seed: int
) -> Estimate:
    """Fraction of rollouts with at least one conflict event anywhere, over the whole horizon."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    scheds = _schedules(inst, paths)
    hits = 0
    for c, m in _chunks(n_samples):
        real = _realize(scheds, inst.delay.lam, _chunk_rng(seed, c), m)
        any_hit = np.zeros(m, dtype=bool)
        for i, sa in enumerate(scheds):
            for sb in scheds[i + 1 :]:
                any_hit |= _pair_any_hits(sa, real[sa.agent], sb, real[sb.agent], m)
        hits += int(any_hit.sum())
    return Estimate.from_counts(hits, n_samples)


def mean_goal_arrival(inst: ProblemInstance, paths: dict[int, TimedPath], agent: int, n_samples: int, seed: int) -> Estimate:
    """Sample mean and standard error of ``agent``'s realized goal arrival."""
    scheds = _schedules(inst, paths)
    total, total_sq = 0.0, 0.0
    for c, m in _chunks(n_samples):
        real = _realize(scheds, inst.delay.lam, _chunk_rng(seed, c), m)
        x = real[agent][0][:, -1]
        total += float(x.sum())
        total_sq += float((x * x).sum())
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return Estimate(mean, math.sqrt(var / n_samples), n_samples)


# Event oracles for the analytic probabilities -----------------------------------------


def _draw(rng: np.random.Generator, shape: float, lam: float, m: int) -> np.ndarray:
    return rng.gamma(shape, 1.0 / lam, size=m) if shape > 0 else np.zeros(m)


def _sampled(n_samples: int, seed: int, body) -> Estimate:
    hits = 0
    for c, m in _chunks_big(n_samples):
        hits += int(body(_chunk_rng(seed, c), m).sum())
    return Estimate.from_counts(hits, n_samples)


_ORACLE_CHUNK = 1 << 18


def _chunks_big(n_samples: int):
    for c in range(-(-n_samples // _ORACLE_CHUNK)):
        yield c, min(_ORACLE_CHUNK, n_samples - c * _ORACLE_CHUNK)


def mc_node_conflict(q: NodeConflictQuery, n_samples: int, seed: int) -> Estimate:
    """Both stays overlap: ``X1 + w1 + D1 >= X2`` and ``X2 + w2 + D2 >= X1``."""

    def body(rng, m):
        x1 = q.delta + _draw(rng, q.n1, q.lam, m)
        x2 = _draw(rng, q.n2, q.lam, m)
        d1 = _draw(rng, q.n_m, q.lam, m)
        d2 = _draw(rng, q.n_m, q.lam, m)
        return (x1 + q.wait1 + d1 >= x2) & (x2 + q.wait2 + d2 >= x1)

    return _sampled(n_samples, seed, body)


def mc_edge_conflict(q: EdgeConflictQuery, n_samples: int, seed: int) -> Estimate:
    """Opposing traversals of length ``t_e`` overlap: ``|X1 - X2| <= t_e``."""

    def body(rng, m):
        x1 = q.delta + _draw(rng, q.n1, q.lam, m)
        x2 = _draw(rng, q.n2, q.lam, m)
        return np.abs(x1 - x2) <= q.t_e

    return _sampled(n_samples, seed, body)


def mc_goal_conflict(
    delta: float, n_resident: float, n_visitor: float, n_m: float, lam: float, n_samples: int, seed: int,
    wait_visitor: float = 0.0,
) -> Estimate:
    """The visitor is still present when the resident arrives for good."""

    def body(rng, m):
        xr = delta + _draw(rng, n_resident, lam, m)
        xv = _draw(rng, n_visitor, lam, m)
        dv = _draw(rng, n_m, lam, m)
        return xv + wait_visitor + dv >= xr

    return _sampled(n_samples, seed, body)


def max_estimated_pair_prob(
    inst: ProblemInstance, paths: dict[int, TimedPath], elements: Iterable[tuple[tuple[int, int], object]],
    n_samples: int, seed: int,
) -> tuple[Estimate, tuple[int, int] | None, object]:
    """Largest MC pairwise estimate among ``elements``."""
    best, where = Estimate(0.0, 0.0, n_samples), (None, None)
    for pair, el in elements:
        est = estimate_pairwise_prob(inst, paths, pair, el, n_samples, seed)
        if est.p > best.p:
            best, where = est, (pair, el)
    return best, where[0], where[1]
