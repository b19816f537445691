"""
Forward simulation of the chemostat with n competing species

    x_i' = (mu_i(s) - D - b_i) x_i
    s'   = D (s_in - s) - sum_i g_i(s) x_i

under piecewise-constant inputs on a fixed grid.  Batch culture is the
special case ``D = 0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

from .exceptions import DomainError, IntegrationDomainError, WashoutError
from .kinetics import Monod, SpeciesParams
from .numerics import rk4_step, steps_in

log = logging.getLogger(__name__)

__all__ = [
    "OpenHalfLine",
    "BoundedByInflow",
    "ChemostatModel",
    "InputSignal",
    "State",
    "Trajectory",
    "rhs",
    "integrate",
    "equilibrium",
    "EPS_DOMAIN",
    "EPS_CLAMP",
    "DEFAULT_H",
]

EPS_DOMAIN = 1e-12
EPS_CLAMP = 1e-15
DEFAULT_H = 1e-3


@dataclass(frozen=True)
class OpenHalfLine:
    """Substrate domain ``(0, +inf)``."""

    upper = math.inf

    def contains(self, s):
        return s > 0


@dataclass(frozen=True)
class BoundedByInflow:
    """Substrate domain ``(0, s_in)``; only valid for constant inflow ``s_in``."""

    s_in: float

    def __post_init__(self):
        if not self.s_in > 0:
            raise DomainError(f"s_in must be > 0, got {self.s_in}")

    @property
    def upper(self):
        return self.s_in

    def contains(self, s):
        return 0 < s < self.s_in


@dataclass(frozen=True)
class ChemostatModel:
    species: tuple[SpeciesParams, ...]
    domain: OpenHalfLine | BoundedByInflow = OpenHalfLine()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if len(self.species) < 1:
            raise DomainError("model needs at least one species")

    @property
    def n(self):
        return len(self.species)

    @property
    def b(self):
        return np.array([p.b for p in self.species])

    def growth(self, s):
        return np.array([p.mu(s) for p in self.species])

    def consumption(self, s):
        return np.array([p.g(s) for p in self.species])


@dataclass(frozen=True)
class State:
    x: np.ndarray
    s: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))

    def as_vector(self):
        return np.append(self.x, self.s)

    def check(self, model: ChemostatModel, closed=False):
        """Validate against ``model``; ``closed`` admits the substrate boundary."""
        if len(self.x) != model.n:
            raise DomainError(f"state has {len(self.x)} biomass entries, model has {model.n}")
        if not np.all(self.x > 0):
            raise DomainError(f"biomass must be > 0, got {self.x}")
        inside = 0 <= self.s <= model.domain.upper if closed else model.domain.contains(self.s)
        if not inside:
            raise DomainError(f"substrate {self.s} outside domain {model.domain}")


@dataclass(frozen=True)
class InputSignal:
    """Per-step dilution and inflow samples; sample ``j`` holds on ``[t_j, t_j+1)``."""

    h: float
    D: np.ndarray
    s_in: np.ndarray

    def __post_init__(self):
        D = np.atleast_1d(np.asarray(self.D, dtype=float))
        s_in = np.atleast_1d(np.asarray(self.s_in, dtype=float))
        if D.shape != s_in.shape:
            raise DomainError("D and s_in must have the same number of samples")
        if np.any(D < 0) or np.any(s_in < 0):
            raise DomainError("inputs must be nonnegative")
        if not self.h > 0:
            raise DomainError(f"step must be positive, got {self.h}")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "s_in", s_in)

    def __len__(self):
        return len(self.D)

    @classmethod
    def constant(cls, D, s_in, h, n_steps):
        return cls(h, np.full(n_steps, float(D)), np.full(n_steps, float(s_in)))

    @classmethod
    def piecewise(cls, table: Sequence[tuple[float, float, float]], h, n_steps):
        """Build from rows ``(t_start, D, s_in)``; each row holds until the next.

        Switching times are snapped to the grid node at or after ``t_start``.
        """
        rows = sorted(table)
        if not rows or rows[0][0] > 0:
            raise DomainError("piecewise inputs must start at t = 0")
        t = np.arange(n_steps) * h
        D = np.empty(n_steps)
        s_in = np.empty(n_steps)
        for i, (t0, d, si) in enumerate(rows):
            t1 = rows[i + 1][0] if i + 1 < len(rows) else math.inf
            mask = (t >= t0 - 1e-9 * h) & (t < t1 - 1e-9 * h)
            D[mask] = d
            s_in[mask] = si
        return cls(h, D, s_in)


@dataclass
class Trajectory:
    """Uniform-grid record; ``D[j]``/``s_in[j]`` are the inputs applied on step ``j``.

    The input arrays have the same length as the states; the final entry
    repeats the last applied value.
    """

    t0: float
    h: float
    x: np.ndarray
    s: np.ndarray
    D: np.ndarray
    s_in: np.ndarray
    s_noisy: np.ndarray | None = None
    clamp_count: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.t0 + self.h * np.arange(len(self.s))

    @property
    def n_steps(self):
        return len(self.s) - 1

    def state(self, j):
        return State(self.x[j].copy(), float(self.s[j]))

    def measured_s(self, noisy=False):
        if noisy:
            if self.s_noisy is None:
                raise ValueError("trajectory has no noisy substrate channel")
            return self.s_noisy
        return self.s


def _rhs_vec(model, y, D, s_in, b):
    x, s = y[:-1], y[-1]
    out = np.empty_like(y)
    out[:-1] = (model.growth(s) - D - b) * x
    out[-1] = D * (s_in - s) - model.consumption(s) @ x
    return out


def rhs(model: ChemostatModel, state: State, D: float, s_in: float):
    """Right-hand side ``(dx, ds)`` of the chemostat equations.

    Accepted on the closure of the substrate domain (``s = 0`` included).
    """
    state.check(model, closed=True)
    if D < 0 or s_in < 0:
        raise DomainError("inputs must be nonnegative")
    dy = _rhs_vec(model, state.as_vector(), D, s_in, model.b)
    return dy[:-1], float(dy[-1])


def _repair(y, upper, t):
    """Clamp tiny exits from ``Omega x A``; raise on larger ones. Returns clamp count."""
    clamps = 0
    for i in range(len(y) - 1):
        if not y[i] > 0:
            if -y[i] > EPS_DOMAIN or not math.isfinite(y[i]):
                raise IntegrationDomainError(t, f"biomass x{i + 1}={y[i]} left the positive orthant")
            y[i] = EPS_CLAMP
            clamps += 1
    s = y[-1]
    if not math.isfinite(s):
        raise IntegrationDomainError(t, f"substrate became {s}")
    if not s > 0:
        if -s > EPS_DOMAIN:
            raise IntegrationDomainError(t, f"substrate {s} left the domain at 0")
        y[-1] = EPS_CLAMP
        clamps += 1
    elif not s < upper:
        if s - upper > EPS_DOMAIN:
            raise IntegrationDomainError(t, f"substrate {s} left the domain at {upper}")
        y[-1] = upper - EPS_CLAMP
        clamps += 1
    if clamps:
        log.warning("clamped %d state component(s) back into the domain at t=%g", clamps, t)
    return clamps


def integrate(
    model: ChemostatModel,
    initial: State,
    inputs: InputSignal,
    t_span: float,
    noise_std: float | None = None,
    seed: int | None = None,
    t0: float = 0.0,
) -> Trajectory:
    """Fixed-step RK4 integration with inputs held constant on each step.

    With ``noise_std`` a separate channel ``s_noisy = s + N(0, noise_std^2)``
    is recorded; the dynamics themselves stay noise free.
    """
    initial.check(model)
    h = inputs.h
    n_steps = steps_in(t_span, h, "t_span")
    if len(inputs) < n_steps:
        raise DomainError(f"input signal has {len(inputs)} samples, need {n_steps}")
    if isinstance(model.domain, BoundedByInflow) and np.any(inputs.s_in[:n_steps] != model.domain.s_in):
        raise DomainError("bounded substrate domain requires constant s_in equal to its bound")

    b = model.b
    upper = model.domain.upper
    Y = np.empty((n_steps + 1, model.n + 1))
    Y[0] = initial.as_vector()
    clamps = 0
    for j in range(n_steps):
        D, s_in = inputs.D[j], inputs.s_in[j]
        y = rk4_step(lambda v: _rhs_vec(model, v, D, s_in, b), Y[j], h)
        clamps += _repair(y, upper, t0 + (j + 1) * h)
        Y[j + 1] = y

    D = np.append(inputs.D[:n_steps], inputs.D[max(n_steps - 1, 0)])
    s_in = np.append(inputs.s_in[:n_steps], inputs.s_in[max(n_steps - 1, 0)])
    traj = Trajectory(t0, h, Y[:, :-1].copy(), Y[:, -1].copy(), D, s_in, clamp_count=clamps)
    if noise_std:
        if noise_std < 0:
            raise DomainError("noise_std must be >= 0")
        rng = np.random.default_rng(seed)
        traj.s_noisy = traj.s + rng.normal(0.0, noise_std, size=traj.s.shape)
    return traj


def equilibrium(species: SpeciesParams, D_star: float, s_in: float):
    """Positive equilibrium ``(s*, x*)`` of the one-species chemostat.

    Solves ``mu(s*) = D* + b`` and ``D* (s_in - s*) = g(s*) x*``.
    """
    target = D_star + species.b
    if not D_star > 0:
        raise DomainError(f"D* must be > 0, got {D_star}")
    if not s_in > 0:
        raise DomainError(f"s_in must be > 0, got {s_in}")
    mu = species.mu
    if target >= mu.sup:
        raise WashoutError(f"D* + b = {target} is not below sup mu = {mu.sup}")
    if isinstance(mu, Monod):
        s_star = mu.inverse(target)
    else:
        if mu(s_in) <= target:
            raise WashoutError(f"mu(s_in) = {mu(s_in)} <= D* + b = {target}")
        s_star = bisect(lambda s: mu(s) - target, 0.0, s_in, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if not s_star < s_in:
        raise WashoutError(f"s* = {s_star} is not below s_in = {s_in}")
    x_star = D_star * (s_in - s_star) / species.g(s_star)
    return s_star, x_star
