"""
Growth and consumption rate laws for the competitive chemostat.

A rate law is a callable ``s -> rate`` that vanishes at ``s = 0``, is
positive for ``s > 0`` and bounded.  Two concrete laws are provided:
:class:`Monod` (Michaelis-Menten) and :class:`CustomRate` for user
supplied functions.  Yield constants are folded into the consumption law
``g`` by the caller, e.g. ``g = Monod(K * a, k)`` for ``g = K * mu``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import (
    DegenerateKineticsError,
    DomainError,
    EvaluationError,
    UnsupportedModelError,
)

__all__ = [
    "GrowthModel",
    "Monod",
    "CustomRate",
    "SpeciesParams",
    "QuadraticCoeffs",
    "eval_mu",
    "kappa",
    "kappa_fd",
    "observability_quadratic",
    "FD_REL_STEP",
]

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class Monod:
    """Michaelis-Menten rate ``a * s / (k + s)``."""

    a: float
    k: float

    def __post_init__(self):
        if not (self.a > 0 and self.k > 0):
            raise DomainError(f"Monod needs a > 0 and k > 0, got a={self.a}, k={self.k}")
        if not (math.isfinite(self.a) and math.isfinite(self.k)):
            raise DomainError("Monod parameters must be finite")

    def __call__(self, s):
        return self.a * s / (self.k + s)

    @property
    def sup(self):
        return self.a

    def scaled(self, factor):
        """Return the law ``factor * mu`` (still Monod)."""
        return Monod(self.a * factor, self.k)

    def inverse(self, rate):
        """Concentration at which the law reaches ``rate`` (``rate < a``)."""
        if not 0 <= rate < self.a:
            raise DomainError(f"rate {rate} not attainable (sup = {self.a})")
        return self.k * rate / (self.a - rate)


@dataclass(frozen=True)
class CustomRate:
    """User supplied rate law.

    ``fn`` must be bounded by ``bound``, continuously differentiable, zero at
    ``s = 0`` and positive for ``s > 0``.  Only the value at zero and the
    bound at a few probe points are checked here.
    """

    fn: Callable[[float], float]
    bound: float

    def __post_init__(self):
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise DomainError("CustomRate needs a finite positive bound")
        if self.fn(0.0) != 0:
            raise DomainError("CustomRate must vanish at s = 0")
        for s in (1e-3, 1.0, 1e3):
            v = self.fn(s)
            if not 0 < v <= self.bound:
                raise DomainError(f"CustomRate value {v} at s={s} outside (0, bound]")

    def __call__(self, s):
        if np.ndim(s):
            return np.array([self.fn(float(v)) for v in np.ravel(s)]).reshape(np.shape(s))
        return self.fn(s)

    @property
    def sup(self):
        return self.bound

    def scaled(self, factor):
        fn = self.fn
        return CustomRate(lambda s: factor * fn(s), factor * self.bound)


GrowthModel = Monod | CustomRate


@dataclass(frozen=True)
class SpeciesParams:
    """One species: specific growth ``mu``, consumption ``g``, mortality ``b``."""

    mu: Monod | CustomRate
    g: Monod | CustomRate
    b: float = 0.0

    def __post_init__(self):
        if not (self.b >= 0 and math.isfinite(self.b)):
            raise DomainError(f"mortality rate must be >= 0, got {self.b}")

    @classmethod
    def monod(cls, a, k, b=0.0, K=1.0):
        """Monod species with constant yield, ``g = K * mu``."""
        mu = Monod(a, k)
        return cls(mu=mu, g=mu if K == 1.0 else mu.scaled(K), b=b)

    @property
    def is_monod_g_eq_mu(self):
        return isinstance(self.mu, Monod) and self.g == self.mu


class QuadraticCoeffs(NamedTuple):
    c2: float
    c1: float
    c0: float

    def __call__(self, s):
        return (self.c2 * s + self.c1) * s + self.c0

    def negated(self):
        return QuadraticCoeffs(-self.c2, -self.c1, -self.c0)


def eval_mu(model, s):
    """Evaluate a rate law at ``s >= 0``."""
    if np.any(np.asarray(s) < 0):
        raise DomainError(f"concentration must be >= 0, got {s}")
    return model(s)


def kappa_fd(g1, g2, s):
    """Central finite difference of ``ln(g1/g2)`` with step ``1e-6 (1 + s)``."""
    h = FD_REL_STEP * (1.0 + s)
    lo = np.maximum(s - h, 0.5 * s)
    hi = s + h
    with np.errstate(divide="ignore", invalid="ignore"):
        f_hi = np.log(g1(hi) / g2(hi))
        f_lo = np.log(g1(lo) / g2(lo))
    if not (np.all(np.isfinite(f_hi)) and np.all(np.isfinite(f_lo))):
        raise EvaluationError(f"ln(g1/g2) not finite near s={s}")
    return (f_hi - f_lo) / (hi - lo)


def kappa(g1, g2, s):
    """Logarithmic derivative ``d/ds ln(g1(s)/g2(s))`` for ``s > 0``.

    Closed form for two Monod laws, finite differences otherwise.
    """
    if np.any(np.asarray(s) <= 0):
        raise DomainError(f"kappa needs s > 0, got {s}")
    if isinstance(g1, Monod) and isinstance(g2, Monod):
        return (g1.k - g2.k) / ((g1.k + s) * (g2.k + s))
    return kappa_fd(g1, g2, s)


def observability_quadratic(p1: SpeciesParams, p2: SpeciesParams) -> QuadraticCoeffs:
    """Coefficients of ``(mu2 - mu1 + b1 - b2) / kappa`` for a Monod pair.

    Both species must use Monod growth with ``g = mu``.  The ratio is then the
    quadratic ``c2 s^2 + c1 s + c0``; it is invariant under swapping the two
    species.
    """
    for p in (p1, p2):
        if not p.is_monod_g_eq_mu:
            raise UnsupportedModelError("observability_quadratic needs Monod kinetics with g = mu")
    a1, k1, b1 = p1.mu.a, p1.mu.k, p1.b
    a2, k2, b2 = p2.mu.a, p2.mu.k, p2.b
    dk = k2 - k1
    if dk == 0:
        raise DegenerateKineticsError("k1 == k2: kappa vanishes identically")
    db = b2 - b1
    return QuadraticCoeffs(
        (a1 - a2 + db) / dk,
        (a1 * k2 - a2 * k1 + db * (k1 + k2)) / dk,
        k1 * k2 * db / dk,
    )
