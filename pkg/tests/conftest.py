import numpy as np
import pytest

from chemostat_deadbeat.dynamics import ChemostatModel, InputSignal, State, integrate
from chemostat_deadbeat.kinetics import SpeciesParams


def simulate(species, x0, s0, D, s_in, t_span, h=1e-3, **kw):
    n = round(t_span / h)
    model = ChemostatModel(species)
    return integrate(model, State(np.asarray(x0, float), s0), InputSignal.constant(D, s_in, h, n), t_span, **kw)


@pytest.fixture
def monod21():
    return SpeciesParams.monod(2.0, 1.0, 0.0)


@pytest.fixture
def batch_pair():
    return [SpeciesParams.monod(2.0, 1.0, 0.05), SpeciesParams.monod(1.5, 2.0, 0.1)]


def log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_species(rng):
    return SpeciesParams.monod(log_uniform(rng, 0.2, 5), log_uniform(rng, 0.2, 5), rng.uniform(0, 0.2))


def random_scenario(rng, n, h=1e-3):
    """Random chemostat run covering one observer window; returns (species, traj, m)."""
    species = [random_species(rng) for _ in range(n)]
    m = int(round(rng.uniform(0.2, 2.0) / h))
    D = 0.0 if rng.random() < 0.5 else rng.uniform(0, 1)
    s_in = rng.uniform(1, 5)
    x0 = rng.uniform(0.2, 2, n)
    s0 = rng.uniform(0.5, 3)
    traj = simulate(species, x0, s0, D, s_in, m * h, h=h)
    return species, traj, m
