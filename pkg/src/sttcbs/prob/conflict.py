"""Conflict probabilities between two agents whose delays are gamma distributed.

Agent ``i`` reaches the element at ``t_i + nu_i`` where ``nu_i ~ Gamma(n_i, lam)``
is the delay accumulated so far. At a node each agent is further held for
its planned wait plus a node delay ``Gamma(n_m, lam)``.

Two evaluation routes exist for the node and goal probabilities:

``"convolution"``
    integrates the density of ``y = nu_1 - nu_2`` (itself a convolution
    integral) against the node-delay tail evaluated at ``|delta + y|``.
``"marginal"``
    conditions on one agent's delay at a time. The event splits by which
    agent arrives first, and each half reduces to a gamma density times a
    difference of gamma CDFs, so a single one-dimensional integral suffices.

Both compute the same quantity; the marginal route is an order of magnitude
cheaper and is the default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np
from scipy import special

from . import gamma as G
from .quadrature import (
    QuadratureConfig,
    QuadratureError,
    adaptive_simpson,
    golden_section_max,
    simpson_batch,
)

DEFAULT_QUADRATURE = QuadratureConfig()


@dataclass(frozen=True)
class NodeConflictQuery:
    """Two agents scheduled through one node.

    ``delta`` is ``t_A1 - t_A2``. Shapes ``n1``/``n2`` may be zero for an agent
    still at its start node. ``wait1``/``wait2`` are planned dwell times.
    """

    delta: float
    n1: float
    n2: float
    n_m: float
    lam: float
    wait1: float = 0.0
    wait2: float = 0.0

    def __post_init__(self):
        _check_shapes(self.n1, self.n2)
        if not self.n_m > 0:
            raise ValueError(f"node shape must be positive, got {self.n_m}")
        _check_rate(self.lam)
        if self.wait1 < 0 or self.wait2 < 0:
            raise ValueError("waits must be nonnegative")

    def swapped(self) -> "NodeConflictQuery":
        return NodeConflictQuery(-self.delta, self.n2, self.n1, self.n_m, self.lam, self.wait2, self.wait1)


@dataclass(frozen=True)
class EdgeConflictQuery:
    """Two agents entering one edge from opposite ends; ``delta = t_A1 - t_A2``."""

    delta: float
    n1: float
    n2: float
    t_e: float
    lam: float

    def __post_init__(self):
        if not (self.n1 > 0 and self.n2 > 0):
            raise ValueError("edge-entry shapes must be positive")
        _check_rate(self.lam)
        if not (self.t_e >= 0 and math.isfinite(self.t_e)):
            raise ValueError(f"edge time must be finite and nonnegative, got {self.t_e}")

    def swapped(self) -> "EdgeConflictQuery":
        return EdgeConflictQuery(-self.delta, self.n2, self.n1, self.t_e, self.lam)


def _check_shapes(*shapes):
    for n in shapes:
        if not (n >= 0 and math.isfinite(n)):
            raise ValueError(f"shape must be finite and nonnegative, got {n}")
    if all(n == 0 for n in shapes):
        raise ValueError("at least one agent must carry a stochastic delay")


def _check_rate(lam):
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"rate must be positive and finite, got {lam}")


def _finish(value: float, cfg: QuadratureConfig) -> float:
    if value < -cfg.abs_tol or value > 1.0 + cfg.abs_tol:
        raise QuadratureError(f"probability {value!r} outside [0, 1] beyond tolerance")
    return min(max(value, 0.0), 1.0)


def _window(n: float, lam: float, cfg: QuadratureConfig) -> tuple[float, float]:
    """Support interval of Gamma(n, lam) omitting at most ``tail_mass``."""
    if n == 0:
        return 0.0, 0.0
    lo = 0.0 if n < 1 else G.quantile(cfg.tail_mass / 2, n, lam)
    hi = G.quantile(1.0 - cfg.tail_mass / 2, n, lam)
    return lo, hi


def _expect(
    n: float,
    lam: float,
    h: Callable[[np.ndarray], np.ndarray],
    kinks: Iterable[float],
    tol: float,
    cfg: QuadratureConfig,
    lower: float = -math.inf,
) -> float:
    """E[h(X); X >= lower] for X ~ Gamma(n, lam), with ``h`` bounded in [0, 1]."""
    if n == 0:
        return float(h(np.zeros(1))[0]) if lower <= 0 else 0.0
    lo, hi = _window(n, lam, cfg)
    lo = max(lo, lower)
    if lo >= hi:
        return 0.0
    pts = [lo, hi]
    mode = (n - 1.0) / lam
    pts += [x for x in (*kinks, mode) if lo < x < hi]
    if n >= 1:
        return adaptive_simpson(lambda x: G.pdf(x, n, lam) * h(x), pts, tol, cfg.max_subdivisions)
    # x = u**(1/n) turns the integrable pole at zero into a smooth integrand.
    p = 1.0 / n
    logc = n * math.log(lam) + math.log(p) - special.gammaln(n)

    def f(u):
        x = u**p
        return np.exp(logc - lam * x) * h(x)

    return adaptive_simpson(f, [x**n for x in pts], tol, cfg.max_subdivisions)


# marginal route ---------------------------------------------------------------


@lru_cache(maxsize=1 << 16)
def _node_marginal(delta, n1, n2, n_m, lam, w1, w2, cfg) -> float:
    tol = (cfg.abs_tol - 2 * cfg.tail_mass) / 2
    # R2 arrives first and is still present when R1 arrives.
    if n2 == 0:
        first = _expect(n1, lam, lambda a: G.sf(delta + a - w2, n_m, lam), [], tol, cfg, lower=-delta)
    else:
        first = _expect(
            n1,
            lam,
            lambda a: G.cdf(delta + a, n2, lam) - G.cdf(delta + a - w2, n2 + n_m, lam),
            [-delta, w2 - delta],
            tol,
            cfg,
        )
    # R1 arrives first and is still present when R2 arrives.
    if n1 == 0:
        second = _expect(n2, lam, lambda b: G.sf(b - delta - w1, n_m, lam), [], tol, cfg, lower=delta)
    else:
        second = _expect(
            n2,
            lam,
            lambda b: G.cdf(b - delta, n1, lam) - G.cdf(b - delta - w1, n1 + n_m, lam),
            [delta, delta + w1],
            tol,
            cfg,
        )
    return first + second


@lru_cache(maxsize=1 << 16)
def _edge(delta, n1, n2, t_e, lam, cfg) -> float:
    if t_e == 0:
        return 0.0
    tol = cfg.abs_tol - cfg.tail_mass
    return _expect(
        n1,
        lam,
        lambda a: G.cdf(a + delta + t_e, n2, lam) - G.cdf(a + delta - t_e, n2, lam),
        [-delta - t_e, -delta + t_e],
        tol,
        cfg,
    )


@lru_cache(maxsize=1 << 16)
def _goal_marginal(delta, n_res, n_vis, n_m, lam, w_vis, cfg) -> float:
    tol = cfg.abs_tol - cfg.tail_mass
    shift = delta - w_vis
    return _expect(n_res, lam, lambda a: G.sf(shift + a, n_vis + n_m, lam), [-shift], tol, cfg)


# convolution route --------------------------------------------------------------


def _logpdf_arr(x, n, lam):
    """Gamma log-density with elementwise shapes."""
    safe = np.where(x > 0, x, 1.0)
    out = n * np.log(lam) + (n - 1.0) * np.log(safe) - lam * safe - special.gammaln(n)
    return np.where(x > 0, out, -np.inf)


def diff_density(y, n1: float, n2: float, lam: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Density of ``nu_1 - nu_2`` for independent Gamma(n1, lam), Gamma(n2, lam).

    For ``y > 0`` integrates ``G(y + t | n1) G(t | n2)`` over ``t``; for
    ``y <= 0`` integrates ``G(t | n1) G(t - y | n2)``.
    """
    _check_shapes(n1, n2)
    _check_rate(lam)
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if n1 == 0:
        out = G.pdf(-y, n2, lam)
    elif n2 == 0:
        out = G.pdf(y, n1, lam)
    else:
        out = _diff_density_batch(y, n1, n2, lam, cfg)
    return float(out[0]) if scalar else out


def _diff_density_batch(y, n1, n2, lam, cfg):
    pos = y > 0
    shifted = np.where(pos, n1, n2)  # shape of the variable evaluated at t + |y|
    base = np.where(pos, n2, n1)  # shape of the variable evaluated at t
    ay = np.abs(y)
    expo = 1.0 / np.minimum(base, 1.0)  # t = u**expo smooths a pole in the base density

    windows = {n: _window(n, lam, cfg) for n in {n1, n2}}
    bps = []
    for k in range(y.size):
        s_lo, s_hi = windows[shifted[k]]
        b_lo, b_hi = windows[base[k]]
        t_lo = max(0.0, b_lo, s_lo - ay[k])
        t_hi = min(b_hi, s_hi - ay[k])
        if t_hi <= t_lo:
            bps.append([t_lo])
            continue
        pts = [t_lo, t_hi]
        for cand in ((base[k] - 1) / lam, (shifted[k] - 1) / lam - ay[k]):
            if t_lo < cand < t_hi:
                pts.append(cand)
        bps.append([p ** (1.0 / expo[k]) for p in pts])

    def f(u, own):
        e = expo[own]
        t = u**e
        jac = np.where(e == 1.0, 1.0, e * u ** np.maximum(e - 1.0, 0.0))
        lp = _logpdf_arr(t, base[own], lam) + _logpdf_arr(t + ay[own], shifted[own], lam)
        return np.exp(lp) * jac

    tol = cfg.abs_tol * 1e-2
    return simpson_batch(f, bps, [tol] * y.size, cfg.max_subdivisions * 10)


def _y_window(n1, n2, lam, cfg):
    lo = -_window(n2, lam, cfg)[1]
    hi = _window(n1, lam, cfg)[1]
    return lo, hi


def diff_mode(n1: float, n2: float, lam: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Mode of the delay difference, located by golden-section search."""
    lo, hi = _y_window(n1, n2, lam, cfg)
    return golden_section_max(lambda v: diff_density(v, n1, n2, lam, cfg), lo, hi, xtol=1e-7)


def _integrate_over_difference(n1, n2, lam, weight, kinks, cfg) -> float:
    """Integral of ``diff_density(y) * weight(y)`` over the truncated y-window.

    Only shapes of zero or at least one are accepted: below one the difference
    density has a cusp whose inner-quadrature noise stalls the outer refinement.
    """
    if any(0 < n < 1 for n in (n1, n2)):
        raise ValueError("the convolution route needs delay shapes of 0 or >= 1; use method='marginal'")
    if n1 == 0 or n2 == 0:
        # The difference is a single gamma variable (possibly negated).
        if n2 == 0:
            return _expect(n1, lam, weight, kinks, cfg.abs_tol / 2, cfg)
        return _expect(n2, lam, lambda b: weight(-b), [-k for k in kinks], cfg.abs_tol / 2, cfg)
    lo, hi = _y_window(n1, n2, lam, cfg)
    mode = diff_mode(n1, n2, lam, cfg)
    pts = [lo, hi] + [x for x in (0.0, mode, *kinks) if lo < x < hi]
    return adaptive_simpson(
        lambda v: diff_density(v, n1, n2, lam, cfg) * weight(v),
        pts,
        cfg.abs_tol / 2,
        cfg.max_subdivisions,
    )


def _node_convolution(delta, n1, n2, n_m, lam, w1, w2, cfg) -> float:
    def tail(v):
        arg = np.maximum(-delta - w1 - v, delta + v - w2)
        return G.sf(np.maximum(arg, 0.0), n_m, lam)

    return _integrate_over_difference(n1, n2, lam, tail, [-delta - w1, -delta + w2], cfg)


def _goal_convolution(delta, n_res, n_vis, n_m, lam, w_vis, cfg) -> float:
    return _integrate_over_difference(
        n_res, n_vis, lam, lambda v: G.sf(np.maximum(delta + v - w_vis, 0.0), n_m, lam), [w_vis - delta], cfg
    )


# public API ---------------------------------------------------------------------


def node_conflict_prob(
    q: NodeConflictQuery, cfg: QuadratureConfig = DEFAULT_QUADRATURE, method: str = "marginal"
) -> float:
    """Probability that both agents are present at the node at a common time."""
    args = (float(q.delta), float(q.n1), float(q.n2), float(q.n_m), float(q.lam), float(q.wait1), float(q.wait2), cfg)
    if method == "marginal":
        value = _node_marginal(*args)
    elif method == "convolution":
        value = _node_convolution(*args)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _finish(value, cfg)


def edge_conflict_prob(q: EdgeConflictQuery, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Probability that head-on traversals of one edge overlap in time."""
    value = _edge(float(q.delta), float(q.n1), float(q.n2), float(q.t_e), float(q.lam), cfg)
    return _finish(value, cfg)


def goal_occupancy_conflict_prob(
    delta: float,
    n_resident: float,
    n_visitor: float,
    n_m: float,
    lam: float,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    wait_visitor: float = 0.0,
    method: str = "marginal",
) -> float:
    """Probability that a visitor is still at a node when its resident arrives.

    The resident parks at the node forever once it arrives; ``delta`` is
    ``t_resident - t_visitor``.
    """
    _check_shapes(n_resident, n_visitor)
    _check_rate(lam)
    if not n_m > 0:
        raise ValueError("node shape must be positive")
    args = (float(delta), float(n_resident), float(n_visitor), float(n_m), float(lam), float(wait_visitor), cfg)
    if method == "marginal":
        value = _goal_marginal(*args)
    elif method == "convolution":
        value = _goal_convolution(*args)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _finish(value, cfg)


# cheap upper bounds used to skip pairs far apart in time -------------------------


def node_conflict_bound(q: NodeConflictQuery) -> float:
    """Closed-form upper bound on the node conflict probability.

    If R1 is later (``delta >= 0``), R2 must still be present after ``delta``
    seconds: ``nu_2 + D_2 >= delta - wait2``. The symmetric bound holds too.
    """
    b2 = G.sf(q.delta - q.wait2, q.n2 + q.n_m, q.lam)
    b1 = G.sf(-q.delta - q.wait1, q.n1 + q.n_m, q.lam)
    return float(min(b1, b2))


def edge_conflict_bound(q: EdgeConflictQuery) -> float:
    b2 = G.sf(q.delta - q.t_e, q.n2, q.lam)
    b1 = G.sf(-q.delta - q.t_e, q.n1, q.lam)
    return float(min(b1, b2))


def goal_conflict_bound(delta: float, n_visitor: float, n_m: float, lam: float, wait_visitor: float = 0.0) -> float:
    return float(G.sf(delta - wait_visitor, n_visitor + n_m, lam))


def separation_horizon(n1: float, n2: float, lam: float, k: float = 12.0) -> float:
    """``|mean(nu_1 - nu_2)| + k * std(nu_1 - nu_2)``."""
    return abs(n1 - n2) / lam + k * math.sqrt(n1 + n2) / lam
