"""
Strong-observability analysis for two competing species.

* coexistence equilibria (both species survive on the same substrate level);
* the batch-culture identifiability test for Monod pairs;
* sufficient conditions A1-A4 on the ratio

      f(s) = (mu2(s) - mu1(s) + b1 - b2) / kappa(s),

  with the best constants and the observation time they certify;
* the scalar ODE ``s' = f(s)`` that any indistinguishable output must
  follow, used to show that such outputs leave the domain in finite time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from .exceptions import DegenerateKineticsError, DomainError, UnsupportedModelError
from .kinetics import Monod, QuadraticCoeffs, SpeciesParams, kappa, observability_quadratic
from .numerics import rk4_step

__all__ = [
    "CoexistencePoint",
    "CoexistenceResult",
    "find_coexistence",
    "BatchVerdict",
    "check_batch_identifiability",
    "ConditionEntry",
    "ConditionReport",
    "check_conditions",
    "SingularTrajectory",
    "singular_trajectory",
    "ratio",
]

SCAN_POINTS = 10_000
ROOT_XTOL = 1e-9  # upper bound; bisection runs to machine precision
DEGENERATE_TOL = 1e-12
IDENTICAL_TOL = 1e-12
SINGULAR_STEP = 1e-3
BLOWUP = 1e9


def _delta(p1, p2, s):
    return p1.mu(s) - p1.b - p2.mu(s) + p2.b


def ratio(p1: SpeciesParams, p2: SpeciesParams, s):
    """``(mu2 - mu1 + b1 - b2) / kappa`` with ``kappa = d/ds ln(g1/g2)``."""
    return -_delta(p1, p2, s) / kappa(p1.g, p2.g, s)


# -- coexistence -----------------------------------------------------------


@dataclass(frozen=True)
class CoexistencePoint:
    """Substrate level ``s_star`` and dilution ``D`` admitting coexistence.

    For a given inflow the coexistence equilibria form the segment
    ``g1 x1 + g2 x2 = D (s_in - s_star)`` in the positive quadrant.
    """

    s_star: float
    D: float
    g1: float
    g2: float

    def line_rhs(self, s_in):
        return self.D * (s_in - self.s_star)

    def x2_on_line(self, s_in, x1):
        return (self.line_rhs(s_in) - self.g1 * x1) / self.g2

    def describe(self):
        return f"{self.g1!r}*x1 + {self.g2!r}*x2 = {self.D!r}*(s_in - {self.s_star!r})"


@dataclass(frozen=True)
class CoexistenceResult:
    kind: str  # "none" | "points" | "degenerate"
    points: tuple[CoexistencePoint, ...] = ()


def find_coexistence(p1: SpeciesParams, p2: SpeciesParams, s_max: float) -> CoexistenceResult:
    """Roots of ``mu1 - b1 - mu2 + b2`` in ``(0, s_max)`` with positive dilution."""
    if not s_max > 0:
        raise DomainError(f"s_max must be > 0, got {s_max}")
    grid = s_max * np.arange(1, SCAN_POINTS + 1) / SCAN_POINTS
    grid[-1] = np.nextafter(s_max, 0)
    delta = _delta(p1, p2, grid)
    if np.all(np.abs(delta) <= DEGENERATE_TOL):
        return CoexistenceResult("degenerate")

    f = lambda s: _delta(p1, p2, s)  # noqa: E731
    roots = [float(v) for v in grid[delta == 0]]
    for i in np.flatnonzero(delta[:-1] * delta[1:] < 0):
        # full precision: |Delta(s*)| <= 1e-9 needs more than xtol = 1e-9 on steep crossings
        roots.append(bisect(f, grid[i], grid[i + 1], xtol=min(ROOT_XTOL, 1e-15), rtol=4 * np.finfo(float).eps))

    points = []
    for s_star in sorted(roots):
        D = float(p1.mu(s_star) - p1.b)
        if D > 0:
            points.append(CoexistencePoint(s_star, D, float(p1.g(s_star)), float(p2.g(s_star))))
    return CoexistenceResult("points" if points else "none", tuple(points))


# -- batch culture ---------------------------------------------------------


@dataclass(frozen=True)
class BatchVerdict:
    strongly_observable: bool
    reason: str


def check_batch_identifiability(p1: SpeciesParams, p2: SpeciesParams) -> BatchVerdict:
    """Batch culture (``D = 0``) of two Monod species with ``g = mu``.

    Strongly observable for every ``r > 0`` unless ``a``, ``k`` and ``b`` all
    coincide; in that case ``x1 - x2`` is invisible in the output.
    """
    for p in (p1, p2):
        if not p.is_monod_g_eq_mu:
            raise UnsupportedModelError("batch identifiability needs Monod kinetics with g = mu")
    diffs = {
        "a": abs(p1.mu.a - p2.mu.a),
        "k": abs(p1.mu.k - p2.mu.k),
        "b": abs(p1.b - p2.b),
    }
    differing = [name for name, d in diffs.items() if d > IDENTICAL_TOL]
    if differing:
        return BatchVerdict(True, "parameters differ in " + ", ".join(differing))
    return BatchVerdict(False, "identical (a, k, b): x1 - x2 is unobservable")


# -- sufficient conditions -------------------------------------------------


@dataclass
class ConditionEntry:
    name: str
    holds: bool
    best_c: float | None = None
    best_a: float | None = None
    r_min: float | None = None
    reason: str = ""


@dataclass
class ConditionReport:
    method: str  # "quadratic" or "grid"
    s_in: float | None
    D_max: float | None
    entries: dict[str, ConditionEntry] = field(default_factory=dict)
    quadratic: QuadraticCoeffs | None = None

    def __getitem__(self, name):
        return self.entries[name]

    def holding(self):
        return [e.name for e in self.entries.values() if e.holds]


def _quad_extrema(q: QuadraticCoeffs, lo, hi):
    """Infimum and supremum of ``q`` over the open interval ``(lo, hi)``."""
    vals = [q(lo), q(hi)]
    if q.c2 != 0:
        v = -q.c1 / (2 * q.c2)
        if lo < v < hi:
            vals.append(q(v))
    return min(vals), max(vals)


def _best_quadratic_growth(q: QuadraticCoeffs):
    """Constants ``(a, c)`` with ``q(s) >= a s^2 + c`` on ``s > 0`` minimising ``1/a + 1/c``.

    Returns None when no positive pair exists.
    """
    c2, c1, c0 = q
    if not (c2 > 0 and c0 > 0):
        return None
    if c1 >= 0:
        return c2, c0
    beta = c1 * c1 / 4.0
    a_hi = c2 - beta / c0
    if not a_hi > 0:
        return None

    def c_of(a):
        return c0 - beta / (c2 - a)

    res = minimize_scalar(
        lambda a: 1.0 / a + 1.0 / c_of(a),
        bounds=(a_hi * 1e-12, a_hi * (1 - 1e-12)),
        method="bounded",
        options={"xatol": a_hi * 1e-12},
    )
    return float(res.x), float(c_of(res.x))


def _grid_growth(s, f):
    """Grid analogue of :func:`_best_quadratic_growth` for sampled ``f``."""
    if not np.min(f) > 0:
        return None
    a_hi = float(np.min(f / s**2))
    if not a_hi > 0:
        return None

    def c_of(a):
        return float(np.min(f - a * s**2))

    res = minimize_scalar(
        lambda a: 1.0 / a + 1.0 / c_of(a) if c_of(a) > 0 else math.inf,
        bounds=(a_hi * 1e-9, a_hi),
        method="bounded",
    )
    a = float(res.x)
    c = c_of(a)
    if not c > 0:
        return None
    return a, c


def _band_entries(lo_f, hi_f, s_in, tag):
    """A1/A2 from the infimum/supremum of the ratio on ``(0, s_in)``."""
    a2 = ConditionEntry("A2" + tag, False)
    a1 = ConditionEntry("A1" + tag, False)
    if lo_f > 0:
        a2.holds, a2.best_c, a2.r_min = True, lo_f, s_in / lo_f
    else:
        a2.reason = f"inf of ratio on (0, s_in) is {lo_f!r} <= 0"
    if hi_f < 0:
        a1.holds, a1.best_c, a1.r_min = True, -hi_f, s_in / -hi_f
    else:
        a1.reason = f"sup of ratio on (0, s_in) is {hi_f!r} >= 0"
    return a1, a2


def _growth_entry(name, pair):
    entry = ConditionEntry(name, pair is not None)
    if pair is None:
        entry.reason = "no a, c > 0 with the required quadratic bound"
    else:
        entry.best_a, entry.best_c = pair
        entry.r_min = 1.0 / pair[1] + 1.0 / pair[0]
    return entry


def _a2pp_entry(f_grid, s_grid, s_in, D_max):
    """A2'' on a grid: the A2 bound only where ratio / (s_in - s) < D_max."""
    entry = ConditionEntry("A2''", False)
    mask = f_grid / (s_in - s_grid) < D_max
    if not np.any(mask):
        entry.holds, entry.r_min = True, 0.0
        entry.reason = "restricted set is empty"
        return entry
    c = float(np.min(f_grid[mask]))
    if c > 0:
        entry.holds, entry.best_c, entry.r_min = True, c, s_in / c
    else:
        entry.reason = f"min of ratio on the restricted set is {c!r} <= 0"
    return entry


def _all_false(names, reason, method, s_in, D_max):
    report = ConditionReport(method, s_in, D_max)
    for name in names:
        report.entries[name] = ConditionEntry(name, False, reason=reason)
    return report


def _names(tag, s_in, D_max):
    names = ["A3" + tag, "A4" + tag]
    if s_in is not None:
        names = ["A1" + tag, "A2" + tag] + names
        if D_max is not None:
            names.append("A2''")
    return names


def check_conditions(
    p1: SpeciesParams,
    p2: SpeciesParams,
    s_in: float | None = None,
    D_max: float | None = None,
    method: str | None = None,
    grid_points: int = SCAN_POINTS,
) -> ConditionReport:
    """Evaluate A1/A2 on ``(0, s_in)`` and A3/A4 on ``(0, inf)``.

    Monod pairs with ``g = mu`` use the exact quadratic form (primed names);
    other kinetics, or ``method="grid"``, sample the ratio.  ``s_in=None``
    skips the bounded-domain conditions; A2'' needs ``D_max``.
    """
    if s_in is not None and math.isinf(s_in):
        s_in = None
    if s_in is not None and not s_in > 0:
        raise DomainError(f"s_in must be > 0, got {s_in}")
    quad_ok = p1.is_monod_g_eq_mu and p2.is_monod_g_eq_mu
    if method is None:
        method = "quadratic" if quad_ok else "grid"
    if method == "quadratic" and not quad_ok:
        raise UnsupportedModelError("quadratic method needs Monod kinetics with g = mu")
    tag = "'" if method == "quadratic" else ""
    names = _names(tag, s_in, D_max)

    if isinstance(p1.g, Monod) and isinstance(p2.g, Monod) and p1.g.k == p2.g.k:
        return _all_false(names, "κ ≡ 0", method, s_in, D_max)

    if s_in is not None:
        s_band = s_in * np.arange(1, grid_points) / grid_points
    s_half = np.logspace(-8, 8, grid_points)

    if method == "quadratic":
        q = observability_quadratic(p1, p2)
        report = ConditionReport(method, s_in, D_max, quadratic=q)
        if s_in is not None:
            lo_f, hi_f = _quad_extrema(q, 0.0, s_in)
            for e in _band_entries(lo_f, hi_f, s_in, tag):
                report.entries[e.name] = e
        report.entries["A3" + tag] = _growth_entry("A3" + tag, _best_quadratic_growth(q.negated()))
        report.entries["A4" + tag] = _growth_entry("A4" + tag, _best_quadratic_growth(q))
        if s_in is not None and D_max is not None:
            report.entries["A2''"] = _a2pp_entry(q(s_band), s_band, s_in, D_max)
        return report

    report = ConditionReport("grid", s_in, D_max)
    grids = [s_half] + ([s_band] if s_in is not None else [])
    for g in grids:
        k = kappa(p1.g, p2.g, g)
        if np.any(k == 0) or np.any(np.sign(k[:-1]) != np.sign(k[1:])):
            return _all_false(names, "κ vanishes in the domain", "grid", s_in, D_max)
    if s_in is not None:
        f_band = ratio(p1, p2, s_band)
        for e in _band_entries(float(np.min(f_band)), float(np.max(f_band)), s_in, tag):
            report.entries[e.name] = e
    f_half = ratio(p1, p2, s_half)
    report.entries["A3"] = _growth_entry("A3", _grid_growth(s_half, -f_half))
    report.entries["A4"] = _growth_entry("A4", _grid_growth(s_half, f_half))
    if s_in is not None and D_max is not None:
        report.entries["A2''"] = _a2pp_entry(f_band, s_band, s_in, D_max)
    return report


# -- singular output trajectory -------------------------------------------


@dataclass
class SingularTrajectory:
    t: np.ndarray
    s: np.ndarray
    exit_time: float | None
    exit_kind: str  # "left-boundary" | "right-boundary" | "blow-up" | "none"


def singular_trajectory(
    p1: SpeciesParams,
    p2: SpeciesParams,
    s0: float,
    t_max: float,
    s_in: float | None = None,
    h: float = SINGULAR_STEP,
) -> SingularTrajectory:
    """Integrate ``s' = ratio(s)`` from ``s0`` until it leaves the domain.

    The domain is ``(0, s_in)``, or ``(0, inf)`` when ``s_in`` is None, where
    ``|s| > 1e9`` is reported as blow-up.  Exit times are linearly
    interpolated inside the final step.
    """
    upper = math.inf if s_in is None else s_in
    if not 0 < s0 < upper:
        raise DomainError(f"s0={s0} outside (0, {upper})")
    if kappa(p1.g, p2.g, s0) == 0:
        raise DegenerateKineticsError(f"kappa(s0) = 0 at s0={s0}")

    def f(s):
        if not s > 0:
            raise DomainError("left the domain")
        return ratio(p1, p2, s)

    n_max = int(math.ceil(t_max / h - 1e-9))
    ts, ss = [0.0], [float(s0)]
    s = float(s0)
    for j in range(n_max):
        t = j * h
        try:
            s_new = float(rk4_step(f, s, h))
        except DomainError:
            s_new = s + h * float(f(s))
            if s_new > 0:
                s_new = 0.0
        kind = None
        if s_new <= 0:
            kind, bound = "left-boundary", 0.0
        elif s_new >= upper:
            kind, bound = "right-boundary", upper
        elif abs(s_new) > BLOWUP:
            kind, bound = "blow-up", None
        if kind is not None:
            frac = 1.0 if bound is None else (bound - s) / (s_new - s)
            t_exit = t + h * min(max(frac, 0.0), 1.0)
            ts.append(t_exit)
            ss.append(s_new if bound is None else bound)
            return SingularTrajectory(np.array(ts), np.array(ss), t_exit, kind)
        s = s_new
        ts.append((j + 1) * h)
        ss.append(s)
    return SingularTrajectory(np.array(ts), np.array(ss), None, "none")
