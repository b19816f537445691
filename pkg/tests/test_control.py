import itertools
import time

import numpy as np
import pytest

from chemostat_deadbeat.control import FeedbackParams, closed_loop_simulate, feedback_D
from chemostat_deadbeat.dynamics import BoundedByInflow, ChemostatModel
from chemostat_deadbeat.exceptions import DomainError, WashoutError
from chemostat_deadbeat.kinetics import Monod, SpeciesParams

SP = SpeciesParams.monod(2, 1, 0)
FP = FeedbackParams(D_star=1.0, s_star=1.0, x_star=2.0, L=1.0)
MODEL = ChemostatModel([SP], BoundedByInflow(3.0))


def run(initial, t_span, h=1e-3, r=0.5):
    return closed_loop_simulate(MODEL, FP, 3.0, r, initial, t_span, h)


class TestFeedbackLaw:
    def test_equilibrium_value(self):
        assert feedback_D(FP, Monod(2, 1), 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)

    def test_below_target(self):
        assert feedback_D(FP, Monod(2, 1), 0.5, 2.0) == pytest.approx(11 / 6, abs=1e-15)

    def test_no_boost_above_target(self):
        mu = Monod(2, 1)
        assert feedback_D(FP, mu, 2.5, 1.0) == pytest.approx(mu(2.5) * FP.gain * 1.0 / 2.5)

    def test_nonnegative(self):
        s = np.linspace(0.01, 2.99, 50)
        assert all(feedback_D(FP, SP.mu, v, z) >= 0 for v in s for z in (1e-9, 1.0, 100.0))

    def test_requires_positive_s(self):
        with pytest.raises(DomainError):
            feedback_D(FP, SP.mu, 0.0, 1.0)

    def test_params_validation(self):
        with pytest.raises(DomainError):
            FeedbackParams(1.0, 1.0, 2.0, L=0.0)
        with pytest.raises(DomainError):
            FP.check_equilibrium(SP, 4.0)  # (1, 2) is not the equilibrium for s_in = 4
        fp = FeedbackParams.design(SP, 1.0, 3.0, 1.0)
        assert (fp.s_star, fp.x_star) == pytest.approx((1.0, 2.0))
        with pytest.raises(WashoutError):
            FeedbackParams.design(SP, 2.5, 3.0, 1.0)

    def test_yield_factor(self):
        sp = SpeciesParams.monod(2, 1, 0, K=2.0)
        fp = FeedbackParams.design(sp, 1.0, 3.0, 1.0)
        assert fp.K == 2.0 and fp.x_star == pytest.approx(1.0)


class TestClosedLoop:
    def test_equilibrium_is_stationary(self):
        res = run((2.0, 1.0, 2.0), 10.0)
        dev = np.abs(np.c_[res.x - 2.0, res.s - 1.0, res.z - 2.0])
        assert dev.max() <= 1e-8
        assert np.allclose(res.D_applied, 1.0, atol=1e-8)

    def test_standard_scenario_converges(self):
        t0 = time.perf_counter()
        res = run((0.3, 0.2, 1.5), 100.0)
        assert time.perf_counter() - t0 < 30
        err = np.max(np.abs(np.c_[res.s - 1.0, res.x - 2.0, res.z - 2.0]), axis=1)
        assert err[-1] <= 1e-2
        tail = err[res.t >= 50.0]
        assert np.all(np.diff(tail) <= 0)

    def test_estimate_matches_biomass_after_first_reset(self):
        res = run((0.3, 0.2, 1.5), 20.0)
        after = res.t >= 0.5
        rel = np.abs(res.z[after] - res.x[after]) / (1 + res.x[after])
        assert rel.max() <= 1e-4
        assert all(not rec.skipped for rec in res.resets)

    def test_rejects_bad_setup(self):
        with pytest.raises(DomainError):
            run((0.3, 3.5, 1.0), 1.0)
        with pytest.raises(DomainError):
            run((0.3, 0.2, 0.0), 1.0)
        with pytest.raises(ValueError):
            run((0.3, 0.2, 1.0), 1.0, r=0.2505)

    def test_forward_completeness(self):
        grid = (0.1, 0.5, 1.0, 2.0, 5.0)
        h, r, a = 1e-2, 0.5, SP.mu.a
        for x0, s0, z0 in itertools.product(grid, [v for v in grid if v < 3.0], grid):
            res = run((x0, s0, z0), 100.0, h=h, r=r)
            assert np.all(np.isfinite(res.z))
            assert np.all((res.s > 0) & (res.s < 3.0)) and np.all(res.x > 0)
            # with g = mu and b = 0, x + s cannot exceed max(x0 + s0, s_in)
            assert np.max(res.x + res.s) <= max(x0 + s0, 3.0) + 1e-9
            before = res.t < r
            assert np.all(res.z[before] <= z0 * np.exp(a * res.t[before]) + 1e-12)
            assert np.max(res.z[~before]) <= max(x0 + s0, 3.0) * (1 + 1e-3)
