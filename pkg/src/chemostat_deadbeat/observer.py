"""
Hybrid dead-beat reduced-order observer.

Between resets the biomass estimate follows the open-loop dynamics
``z' = diag(mu_i(s) - D - b_i) z``.  Every ``r`` time units it is replaced by a
least-squares reconstruction computed from the measured substrate over the
window that just ended.  Given the window samples, the substrate balance

    p(t) = s(t) - s(0) - int_0^t D (s_in - s) = -sum_i phi_i(t) x_i(0)

is linear in the unknown initial biomass, with

    phi_i(t) = int_0^t g_i(s) exp(int_0^tau (mu_i(s) - D - b_i)) dtau.

Solving the normal equations ``Q x0 = int p q`` (``q = -phi``) and
propagating ``x0`` to the window end gives the reset value.  All integrals
are composite trapezoids on the sampling grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dynamics import EPS_CLAMP, Trajectory
from .exceptions import DomainError, SingularGramError
from .kinetics import SpeciesParams
from .numerics import midpoint_samples, steps_in, trapz_weights

log = logging.getLogger(__name__)

__all__ = [
    "EPS_GRAM",
    "ObserverWindow",
    "GramRecord",
    "ResetRecord",
    "ObserverRun",
    "window_from_trajectory",
    "phi_profiles",
    "residual_profile",
    "operator_P",
    "explicit_n2_reset",
    "run_observer",
]

EPS_GRAM = 1e-10


@dataclass(frozen=True)
class ObserverWindow:
    """Measured signals over one reset interval ``[t_start, t_start + r]``.

    ``s`` has ``r/h + 1`` samples on the grid nodes; ``D`` and ``s_in`` have
    one sample per step (held constant on the step).
    """

    r: float
    h: float
    s: np.ndarray
    D: np.ndarray
    s_in: np.ndarray
    t_start: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        D = np.broadcast_to(np.asarray(self.D, dtype=float), (len(s) - 1,))
        s_in = np.broadcast_to(np.asarray(self.s_in, dtype=float), (len(s) - 1,))
        m = steps_in(self.r, self.h, "r")
        if len(s) != m + 1:
            raise DomainError(f"window needs {m + 1} substrate samples, got {len(s)}")
        if np.any(s <= 0):
            raise DomainError("substrate samples must be > 0")
        if np.any(D < 0) or np.any(s_in < 0):
            raise DomainError("input samples must be >= 0")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "s_in", s_in)

    @property
    def m(self):
        return len(self.s) - 1


def window_from_trajectory(traj: Trajectory, j0: int, m: int, noisy=False) -> ObserverWindow:
    """Window over grid steps ``j0 .. j0 + m`` of a recorded trajectory."""
    s = traj.measured_s(noisy)
    return ObserverWindow(
        r=m * traj.h,
        h=traj.h,
        s=s[j0 : j0 + m + 1],
        D=traj.D[j0 : j0 + m],
        s_in=traj.s_in[j0 : j0 + m],
        t_start=traj.t0 + j0 * traj.h,
    )


@dataclass(frozen=True)
class GramRecord:
    Q: np.ndarray
    det: float
    det_normalized: float
    cond: float

    @property
    def singular(self):
        return not self.det_normalized >= EPS_GRAM

    @classmethod
    def from_matrix(cls, Q):
        det = float(np.linalg.det(Q))
        diag = np.prod(np.diag(Q))
        det_normalized = det / diag if diag > 0 else 0.0
        with np.errstate(divide="ignore"):
            cond = float(np.linalg.cond(Q)) if diag > 0 else np.inf
        return cls(Q, det, det_normalized, cond)


def _cumtrapz_steps(increments):
    """Prefix sums of per-step integrals, starting at 0."""
    out = np.zeros(len(increments) + 1)
    np.cumsum(increments, out=out[1:])
    return out


def _exponents(window, species):
    """``E_i(t) = int_0^t (mu_i(s) - D - b_i)`` on the window grid, shape (n, m+1)."""
    s, h = window.s, window.h
    E = np.empty((len(species), len(s)))
    for i, p in enumerate(species):
        mu = p.mu(s)
        E[i] = _cumtrapz_steps(h * (0.5 * (mu[:-1] + mu[1:]) - window.D - p.b))
    return E


def _phi_and_exponents(window, species):
    s, h = window.s, window.h
    E = _exponents(window, species)
    phi = np.empty_like(E)
    for i, p in enumerate(species):
        f = p.g(s) * np.exp(E[i])
        phi[i] = _cumtrapz_steps(0.5 * h * (f[:-1] + f[1:]))
    return phi, E


def phi_profiles(window: ObserverWindow, species: Sequence[SpeciesParams]) -> np.ndarray:
    """Sampled ``phi_i`` on the window grid, shape ``(n, m + 1)``; ``phi_i(0) = 0``."""
    return _phi_and_exponents(window, species)[0]


def residual_profile(window: ObserverWindow) -> np.ndarray:
    """Sampled ``p(t) = s(t) - s(0) - int_0^t D (s_in - s)``; ``p(0) = 0``."""
    s, h = window.s, window.h
    inflow = h * window.D * (window.s_in - 0.5 * (s[:-1] + s[1:]))
    return s - s[0] - _cumtrapz_steps(inflow)


def operator_P(window: ObserverWindow, species: Sequence[SpeciesParams]):
    """Least-squares biomass at the window end.

    Returns ``(estimate, gram)``.  Raises :class:`SingularGramError` when
    ``det(Q) / prod(diag(Q)) < EPS_GRAM``.
    """
    phi, E = _phi_and_exponents(window, species)
    q = -phi
    p = residual_profile(window)
    w = trapz_weights(window.m, window.h)
    n = len(q)
    # exactly rounded sums: Q is often ill-conditioned and summation error dominates
    Q = np.empty((n, n))
    for i in range(n):
        for k in range(i, n):
            Q[i, k] = Q[k, i] = math.fsum(w * q[i] * q[k])
    rhs = np.array([math.fsum(w * p * q[i]) for i in range(n)])
    gram = GramRecord.from_matrix(Q)
    if gram.singular:
        raise SingularGramError(gram)
    return np.exp(E[:, -1]) * _refined_solve(Q, rhs), gram


def _refined_solve(Q, rhs, sweeps=2):
    """LU solve followed by iterative refinement with exact residuals."""
    x = np.linalg.solve(Q, rhs)
    Qf = [[Fraction(v) for v in row] for row in Q.tolist()]
    bf = [Fraction(v) for v in rhs.tolist()]
    for _ in range(sweeps):
        xf = [Fraction(v) for v in x.tolist()]
        res = [float(bi - sum(qi * xi for qi, xi in zip(row, xf))) for row, bi in zip(Qf, bf)]
        x = x + np.linalg.solve(Q, np.array(res))
    return x


def explicit_n2_reset(window: ObserverWindow, species: Sequence[SpeciesParams]) -> np.ndarray:
    """Two-species reset written out with Cramer's rule.

    Kept separate from :func:`operator_P` (scalar loops, no shared helpers,
    no matrix solve) so the two can check each other.  Sample arithmetic
    follows the same operation order so that only the linear algebra differs.
    """
    if len(species) != 2:
        raise DomainError("explicit_n2_reset needs exactly two species")
    s, D, s_in, h = window.s, window.D, window.s_in, window.h
    m = len(s) - 1
    sp1, sp2 = species

    def profile(sp):
        mu = [float(sp.mu(v)) for v in s]
        g = [float(sp.g(v)) for v in s]
        expo, phi = [0.0], [0.0]
        for j in range(m):
            expo.append(expo[j] + h * (0.5 * (mu[j] + mu[j + 1]) - D[j] - sp.b))
        # np.exp, not math.exp: keeps the samples bit-compatible with operator_P
        integrand = list(np.asarray(g) * np.exp(np.asarray(expo)))
        for j in range(m):
            phi.append(phi[j] + 0.5 * h * (integrand[j] + integrand[j + 1]))
        return phi, expo[-1]

    phi1, e1 = profile(sp1)
    phi2, e2 = profile(sp2)
    # u(t) = s(0) - s(t) + int_0^t D (s_in - s)
    inflow = [0.0]
    for j in range(m):
        inflow.append(inflow[j] + h * D[j] * (s_in[j] - 0.5 * (s[j] + s[j + 1])))
    u = [-((s[j] - s[0]) - inflow[j]) for j in range(m + 1)]

    def integral(a, b):
        # trapezoid, terms formed as (weight * a) * b
        terms = [(0.5 * h * a[0]) * b[0], (0.5 * h * a[m]) * b[m]]
        terms.extend((h * a[j]) * b[j] for j in range(1, m))
        return math.fsum(terms)

    i11 = integral(phi1, phi1)
    i22 = integral(phi2, phi2)
    i12 = integral(phi1, phi2)
    u1 = integral(u, phi1)
    u2 = integral(u, phi2)
    Q = np.array([[i11, i12], [i12, i22]])
    gram = GramRecord.from_matrix(Q)
    # Cramer's rule in exact arithmetic on the float integrals
    F11, F22, F12, U1, U2 = (Fraction(v) for v in (i11, i22, i12, u1, u2))
    den = F11 * F22 - F12 * F12
    if den == 0 or gram.singular:
        raise SingularGramError(gram, "zero denominator in the two-species reset")
    N1 = F22 * U1 - F12 * U2
    N2 = F11 * U2 - F12 * U1
    return np.array([float(N1 / den) * math.exp(e1), float(N2 / den) * math.exp(e2)])


@dataclass
class ResetRecord:
    t: float
    det_normalized: float
    skipped: bool
    clamped: int = 0


@dataclass
class ObserverRun:
    """Estimate trajectory ``z`` on the measurement grid plus reset diagnostics."""

    t: np.ndarray
    z: np.ndarray
    r: float
    resets: list[ResetRecord] = field(default_factory=list)

    @property
    def skipped_resets(self):
        return sum(rec.skipped for rec in self.resets)

    @property
    def clamp_count(self):
        return sum(rec.clamped for rec in self.resets)


def _clamp_estimate(z, t):
    bad = ~(z > 0)
    if np.any(bad):
        log.warning("non-positive reset estimate %s at t=%g clamped", z, t)
        z = np.where(bad, EPS_CLAMP, z)
    return z, int(bad.sum())


def _propagate(z, s_nodes, s_mid, D, species, h):
    """One RK4 step of ``z' = diag(mu_i(s) - D - b_i) z`` using sampled ``s``."""
    b = np.array([p.b for p in species])
    rate = lambda s: np.array([p.mu(s) for p in species]) - D - b  # noqa: E731
    r0, rm, r1 = rate(s_nodes[0]), rate(s_mid), rate(s_nodes[1])
    k1 = r0 * z
    k2 = rm * (z + 0.5 * h * k1)
    k3 = rm * (z + 0.5 * h * k2)
    k4 = r1 * (z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def run_observer(
    measured: Trajectory,
    species: Sequence[SpeciesParams],
    r: float,
    z0,
    noisy: bool = False,
) -> ObserverRun:
    """Run the hybrid observer over a recorded measurement trajectory.

    ``z`` is propagated with RK4 on the measurement grid (substrate at step
    midpoints from cubic interpolation) and reset with :func:`operator_P`
    every ``r``.  A singular window skips its reset.
    """
    h = measured.h
    m = steps_in(r, h, "r")
    if m < 1:
        raise DomainError("r must be at least one grid step")
    z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
    if len(z) != len(species) or not np.all(z > 0):
        raise DomainError(f"z0 must have {len(species)} positive entries, got {z0}")
    s = measured.measured_s(noisy)
    s_mid = midpoint_samples(s)
    N = len(s) - 1
    Z = np.empty((N + 1, len(z)))
    Z[0] = z
    run = ObserverRun(measured.t, Z, r)
    for j in range(N):
        z = _propagate(z, s[j : j + 2], s_mid[j], measured.D[j], species, h)
        if (j + 1) % m == 0:
            t_reset = measured.t0 + (j + 1) * h
            window = window_from_trajectory(measured, j + 1 - m, m, noisy)
            try:
                est, gram = operator_P(window, species)
            except SingularGramError as exc:
                run.resets.append(ResetRecord(t_reset, exc.record.det_normalized, True))
            else:
                est, clamped = _clamp_estimate(est, t_reset)
                z = est
                run.resets.append(ResetRecord(t_reset, gram.det_normalized, False, clamped))
        Z[j + 1] = z
    return run
