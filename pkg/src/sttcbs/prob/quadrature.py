"""Vectorized adaptive Simpson quadrature.

Many independent integrals can be refined together: every subinterval carries
the index of the integral it belongs to, and each refinement level issues a
single vectorized call to the integrand.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive refinement did not reach the requested tolerance."""


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-6
    tail_mass: float = 1e-9
    max_subdivisions: int = 200_000

    def __post_init__(self):
        if not 0.0 < self.abs_tol < 1.0:
            raise ValueError(f"abs_tol must lie in (0, 1), got {self.abs_tol}")
        if not 0.0 < self.tail_mass < self.abs_tol:
            raise ValueError(f"tail_mass must lie in (0, abs_tol), got {self.tail_mass}")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be positive")


# Panels per breakpoint interval before any refinement; keeps narrow features
# from slipping between the first five Simpson nodes.
_INITIAL_PANELS = 32


def simpson_batch(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    breakpoints: Sequence[Sequence[float]],
    tols: Sequence[float],
    max_subdivisions: int,
) -> np.ndarray:
    """Integrate ``f`` over several partitions at once.

    ``breakpoints[k]`` is a sorted sequence of points partitioning the domain
    of integral ``k``; ``f(x, owner)`` must return the integrand of integral
    ``owner[i]`` at ``x[i]``. Tolerances are absolute and are spread over each
    domain in proportion to subinterval width.
    """
    lo_list, hi_list, own_list, tol_list = [], [], [], []
    for k, (pts, tol) in enumerate(zip(breakpoints, tols)):
        pts = np.unique(np.asarray(pts, dtype=float))
        if pts.size < 2:
            continue
        span = pts[-1] - pts[0]
        edges = np.concatenate(
            [np.linspace(a, b, _INITIAL_PANELS + 1)[:-1] for a, b in zip(pts[:-1], pts[1:])]
            + [pts[-1:]]
        )
        a, b = edges[:-1], edges[1:]
        keep = b > a
        a, b = a[keep], b[keep]
        lo_list.append(a)
        hi_list.append(b)
        own_list.append(np.full(a.size, k))
        tol_list.append(tol * (b - a) / span)

    result = np.zeros(len(breakpoints))
    if not lo_list:
        return result

    a = np.concatenate(lo_list)
    b = np.concatenate(hi_list)
    owner = np.concatenate(own_list)
    tol = np.concatenate(tol_list)
    m = 0.5 * (a + b)

    n = a.size
    vals = f(np.concatenate([a, m, b]), np.concatenate([owner, owner, owner]))
    fa, fm, fb = vals[:n], vals[n : 2 * n], vals[2 * n :]
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    used = n

    while a.size:
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        n = a.size
        vals = f(np.concatenate([lm, rm]), np.concatenate([owner, owner]))
        flm, frm = vals[:n], vals[n:]
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if not np.all(np.isfinite(err)):
            raise QuadratureError("integrand produced non-finite values")

        done = np.abs(err) <= 15.0 * tol
        # Subintervals at floating-point resolution cannot be split further.
        done |= (m <= a) | (m >= b)
        np.add.at(result, owner[done], (left + right + err / 15.0)[done])

        go = ~done
        if not go.any():
            break
        used += int(go.sum())
        if used > max_subdivisions:
            raise QuadratureError(
                f"adaptive Simpson exceeded {max_subdivisions} subdivisions"
            )
        a, m_old, b = a[go], m[go], b[go]
        a = np.concatenate([a, m_old])
        b = np.concatenate([m_old, b])
        fa, fm, fb = (
            np.concatenate([fa[go], fm[go]]),
            np.concatenate([flm[go], frm[go]]),
            np.concatenate([fm[go], fb[go]]),
        )
        whole = np.concatenate([left[go], right[go]])
        owner = np.concatenate([owner[go], owner[go]])
        tol = np.concatenate([tol[go], tol[go]]) * 0.5
        m = 0.5 * (a + b)

    return result


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints: Sequence[float],
    tol: float,
    max_subdivisions: int = 200_000,
) -> float:
    """Integrate vectorized ``f`` from the first to the last breakpoint."""
    out = simpson_batch(lambda x, _owner: f(x), [breakpoints], [tol], max_subdivisions)
    return float(out[0])


def golden_section_max(
    f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-9, max_iter: int = 200
) -> float:
    """Locate the maximizer of a unimodal scalar function on ``[lo, hi]``."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)
