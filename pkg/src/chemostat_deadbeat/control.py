"""
Dynamic output feedback for the one-species chemostat.

The state feedback

    D = mu(s) * D* s* / ((D* + b) x*) * x / s + L * max(0, s* - s)

is made implementable from the substrate measurement alone by substituting
the dead-beat observer estimate ``z`` for ``x`` (certainty equivalence).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import EPS_CLAMP, EPS_DOMAIN, ChemostatModel, Trajectory, equilibrium
from .exceptions import DomainError, IntegrationDomainError, SingularGramError
from .kinetics import Monod, SpeciesParams
from .numerics import steps_in
from .observer import ObserverWindow, ResetRecord, operator_P

__all__ = ["FeedbackParams", "feedback_D", "ClosedLoopRun", "closed_loop_simulate"]


@dataclass(frozen=True)
class FeedbackParams:
    D_star: float
    s_star: float
    x_star: float
    L: float
    b: float = 0.0
    K: float = 1.0

    def __post_init__(self):
        for name in ("D_star", "s_star", "x_star", "L", "K"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.b >= 0:
            raise DomainError(f"b must be >= 0, got {self.b}")

    @property
    def gain(self):
        """Coefficient multiplying ``mu(s) z / s``."""
        return self.D_star * self.s_star / ((self.D_star + self.b) * self.x_star)

    @classmethod
    def design(cls, species: SpeciesParams, D_star, s_in, L):
        """Target the equilibrium of ``species`` at dilution ``D_star``."""
        s_star, x_star = equilibrium(species, D_star, s_in)
        return cls(D_star, s_star, x_star, L, species.b, _yield_factor(species))

    def check_equilibrium(self, species: SpeciesParams, s_in, tol=1e-9):
        """Raise unless ``(s*, x*)`` is the equilibrium for ``(D*, s_in)``."""
        if not 0 < self.s_star < s_in:
            raise DomainError(f"s* = {self.s_star} must lie in (0, s_in = {s_in})")
        growth = species.mu(self.s_star) - self.D_star - species.b
        balance = self.D_star * (s_in - self.s_star) - species.g(self.s_star) * self.x_star
        scale = 1.0 + self.D_star * s_in
        if abs(growth) > tol * (1 + self.D_star) or abs(balance) > tol * scale:
            raise DomainError(
                f"(s*, x*) = ({self.s_star}, {self.x_star}) is not an equilibrium "
                f"for D* = {self.D_star}, s_in = {s_in}"
            )


def _yield_factor(species):
    mu, g = species.mu, species.g
    if isinstance(mu, Monod) and isinstance(g, Monod) and g.k == mu.k:
        return g.a / mu.a
    return 1.0


def feedback_D(fp: FeedbackParams, mu_model, s, z):
    """Dilution rate from the measured ``s`` and the biomass estimate ``z``."""
    if not s > 0:
        raise DomainError(f"feedback needs s > 0, got {s}")
    return mu_model(s) * fp.gain * z / s + fp.L * max(0.0, fp.s_star - s)


@dataclass
class ClosedLoopRun:
    """Plant trajectory (``trajectory.D`` is the applied dilution) plus estimates."""

    trajectory: Trajectory
    z: np.ndarray
    resets: list[ResetRecord] = field(default_factory=list)

    @property
    def t(self):
        return self.trajectory.t

    @property
    def x(self):
        return self.trajectory.x[:, 0]

    @property
    def s(self):
        return self.trajectory.s

    @property
    def D_applied(self):
        return self.trajectory.D


def _check_step(x, s, z, s_in, t):
    """Clamp tiny domain exits; returns (x, s, z, clamps)."""
    clamps = 0
    if not x > 0:
        if -x > EPS_DOMAIN or math.isnan(x):
            raise IntegrationDomainError(t, f"biomass {x} left the positive half-line")
        x, clamps = EPS_CLAMP, clamps + 1
    if not z > 0:
        if -z > EPS_DOMAIN or math.isnan(z):
            raise IntegrationDomainError(t, f"estimate {z} left the positive half-line")
        z, clamps = EPS_CLAMP, clamps + 1
    if not 0 < s < s_in:
        if math.isnan(s) or s < -EPS_DOMAIN or s > s_in + EPS_DOMAIN:
            raise IntegrationDomainError(t, f"substrate {s} left (0, {s_in})")
        s, clamps = (EPS_CLAMP if s <= 0 else s_in - EPS_CLAMP), clamps + 1
    return x, s, z, clamps


def closed_loop_simulate(
    model: ChemostatModel,
    fp: FeedbackParams,
    s_in: float,
    r: float,
    initial,
    t_span: float,
    h: float = 1e-3,
) -> ClosedLoopRun:
    """Plant, observer and feedback integrated together on one grid.

    ``initial = (x0, s0, z0)``.  The dilution is recomputed from ``(s, z)`` at
    every grid node and held over the step; ``z`` follows the plant's growth
    law between resets and is replaced by the window estimate every ``r``.
    """
    if model.n != 1:
        raise DomainError("closed loop is defined for one species")
    sp = model.species[0]
    fp.check_equilibrium(sp, s_in)
    x, s, z = (float(v) for v in initial)
    if not (x > 0 and z > 0 and 0 < s < s_in):
        raise DomainError(f"initial (x0, s0, z0) = {initial} outside the domain")
    N = steps_in(t_span, h, "t_span")
    m = steps_in(r, h, "r")
    if m < 1:
        raise DomainError("r must be at least one grid step")
    mu, g, b = sp.mu, sp.g, sp.b

    def f(x, s, z, D):
        mus = mu(s)
        return (mus - D - b) * x, D * (s_in - s) - g(s) * x, (mus - D - b) * z

    X = np.empty(N + 1)
    S = np.empty(N + 1)
    Z = np.empty(N + 1)
    Dap = np.empty(N + 1)
    resets = []
    clamps = 0
    for j in range(N + 1):
        if j and j % m == 0:
            # S[j] is recorded below, after the reset
            window = ObserverWindow(r, h, np.append(S[j - m : j], s), Dap[j - m : j], s_in)
            try:
                est, gram = operator_P(window, [sp])
            except SingularGramError as exc:
                resets.append(ResetRecord(j * h, exc.record.det_normalized, True))
            else:
                z_new = float(est[0])
                clamped = 0
                if not z_new > 0:
                    z_new, clamped = EPS_CLAMP, 1
                z = z_new
                resets.append(ResetRecord(j * h, gram.det_normalized, False, clamped))
        D = feedback_D(fp, mu, s, z)
        X[j], S[j], Z[j], Dap[j] = x, s, z, D
        if j == N:
            break
        k1 = f(x, s, z, D)
        k2 = f(x + 0.5 * h * k1[0], s + 0.5 * h * k1[1], z + 0.5 * h * k1[2], D)
        k3 = f(x + 0.5 * h * k2[0], s + 0.5 * h * k2[1], z + 0.5 * h * k2[2], D)
        k4 = f(x + h * k3[0], s + h * k3[1], z + h * k3[2], D)
        x += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        s += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        z += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        x, s, z, c = _check_step(x, s, z, s_in, (j + 1) * h)
        clamps += c

    traj = Trajectory(0.0, h, X[:, None], S, Dap, np.full(N + 1, float(s_in)), clamp_count=clamps)
    return ClosedLoopRun(traj, Z, resets)
