"""Small fixed-grid numerical kernels shared by the simulation modules."""
import math

import numpy as np

__all__ = ["rk4_step", "steps_in", "trapz_weights", "midpoint_samples"]


def rk4_step(f, y, h):
    """One classical Runge-Kutta step of ``y' = f(y)`` (inputs held by ``f``)."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def steps_in(duration, h, name="duration", rtol=1e-9):
    """Number of grid steps in ``duration``; raises unless it is a multiple of ``h``."""
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"step must be positive, got {h}")
    ratio = duration / h
    n = round(ratio)
    if n < 0 or abs(ratio - n) > rtol * max(1.0, abs(ratio)):
        raise ValueError(f"{name}={duration} is not an integer multiple of h={h}")
    return n


def trapz_weights(m, h):
    """Composite trapezoid weights on ``m + 1`` equally spaced nodes."""
    w = np.full(m + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


# cubic Lagrange weights for the midpoint of the second interval of 4 nodes
_MID_CENTRAL = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
_MID_FIRST = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
_MID_LAST = _MID_FIRST[::-1]


def midpoint_samples(y):
    """Fourth-order interpolated values of ``y`` at the midpoints of its grid.

    Returns an array of length ``len(y) - 1``.  Falls back to linear
    interpolation when fewer than four samples are available.
    """
    y = np.asarray(y, dtype=float)
    n = len(y) - 1
    if n < 3:
        return 0.5 * (y[:-1] + y[1:])
    mid = np.empty(n)
    mid[1:-1] = (
        _MID_CENTRAL[0] * y[:-3]
        + _MID_CENTRAL[1] * y[1:-2]
        + _MID_CENTRAL[2] * y[2:-1]
        + _MID_CENTRAL[3] * y[3:]
    )
    mid[0] = _MID_FIRST @ y[:4]
    mid[-1] = _MID_LAST @ y[-4:]
    return mid
