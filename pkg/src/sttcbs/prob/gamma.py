"""Gamma distribution helpers in the shape/rate parameterization.

A shape of exactly zero is accepted by the vectorized helpers and stands for
the point mass at zero: an agent that has not traversed any node yet carries
no accumulated delay.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and np.isfinite(self.shape)):
            raise ValueError(f"gamma shape must be positive and finite, got {self.shape}")
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise ValueError(f"gamma rate must be positive and finite, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate**2

    @property
    def mode(self) -> float:
        return max(self.shape - 1.0, 0.0) / self.rate


def logpdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    xp = x[pos]
    out[pos] = shape * np.log(rate) + (shape - 1.0) * np.log(xp) - rate * xp - special.gammaln(shape)
    return out


def pdf(x, shape: float, rate: float):
    return np.exp(logpdf(x, shape, rate))


def cdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    if shape == 0:
        return (x >= 0).astype(float)
    return special.gammainc(shape, rate * np.maximum(x, 0.0))


def sf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    if shape == 0:
        return (x < 0).astype(float)
    return special.gammaincc(shape, rate * np.maximum(x, 0.0))


def quantile(q: float, shape: float, rate: float) -> float:
    if shape == 0:
        return 0.0
    return float(special.gammaincinv(shape, q) / rate)


def upper_quantile(p: float, shape: float, rate: float) -> float:
    """Smallest ``x`` with ``sf(x) <= p``, so ``sf(x) > p`` exactly when ``x`` lies below it."""
    if shape == 0:
        return 0.0
    return float(special.gammainccinv(shape, p) / rate)


def gamma_pdf(x, p: GammaParams):
    """Density of Gamma(p.shape, p.rate); zero on the non-positive half-line."""
    out = pdf(x, p.shape, p.rate)
    return float(out) if np.ndim(out) == 0 else out


def gamma_cdf(x, p: GammaParams):
    """Regularized lower incomplete gamma P(shape, rate * x)."""
    out = cdf(x, p.shape, p.rate)
    return float(out) if np.ndim(out) == 0 else out


def gamma_sf(x, p: GammaParams):
    out = sf(x, p.shape, p.rate)
    return float(out) if np.ndim(out) == 0 else out
