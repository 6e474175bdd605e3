import math

import numpy as np
import pytest

from qsd_sim import (
    BmIntervalQsd,
    BrownianMotion,
    CustomAffine,
    EmpiricalLaw,
    Interval,
    ReturnProcessConfig,
    ReturnProcessError,
    RngStream,
    StepSchedule,
    estimate_A,
    estimate_A_multi,
    estimate_Pi,
    exit_time_tail,
    simulate_return_chain,
    weak_error_curve,
)
from qsd_sim.return_process import _batch_return, measure_sampler

BM = BrownianMotion()
DOM = Interval(0.0, 1.0)


class TestSimulateReturnChain:
    def test_dirac_restarts_land_at_point(self):
        cfg = ReturnProcessConfig(mu=0.5, eta=StepSchedule.constant(0.02),
                                  horizon=5.0, instants=np.array([5.0]))
        t, x, jumps = simulate_return_chain(BM, DOM, cfg, 0.5, RngStream(0))
        assert len(jumps) > 0
        for tj in jumps:
            k = int(np.argmin(np.abs(t - tj)))
            assert x[k] == 0.5

    def test_jump_log_strictly_increasing_grid_times(self):
        cfg = ReturnProcessConfig(mu=0.5, eta=StepSchedule.constant(0.01),
                                  horizon=3.0, instants=np.array([3.0]))
        t, x, jumps = simulate_return_chain(BM, DOM, cfg, 0.5, RngStream(1))
        assert np.all(np.diff(jumps) > 0)
        for tj in jumps:
            assert np.min(np.abs(t - tj)) < 1e-12

    def test_forced_exit_deterministic_first_jump(self):
        model = CustomAffine(np.zeros((1, 1)), np.array([100.0]), 1e-3 * np.eye(1))
        cfg = ReturnProcessConfig(mu=0.9, eta=StepSchedule.constant(0.1),
                                  horizon=1.0, instants=np.array([1.0]))
        _, _, jumps = simulate_return_chain(model, DOM, cfg, 0.9, RngStream(2))
        assert jumps[0] == pytest.approx(0.1)
        assert len(jumps) == 10  # every step exits

    def test_jump_rate_approaches_survival_rate(self):
        # Restarting from the stationary profile, kills arrive at rate
        # lambda* = pi^2/2.
        ref = BmIntervalQsd(0, 1)
        sampler = measure_sampler(ref, DOM)
        rng = RngStream(3)
        x0s = np.asarray(sampler(rng.uniforms(100)))
        trace = _batch_return(BM, DOM, StepSchedule.constant(1e-4), 50.0,
                              sampler, x0s, rng, np.array([50.0]))
        rate = trace.jump_counts.mean() / 50.0
        assert rate == pytest.approx(math.pi ** 2 / 2, rel=0.10)


class TestRenewalDecomposition:
    def test_two_term_identity_on_shared_replicas(self):
        sampler = measure_sampler(0.3, DOM)
        rng = RngStream(4)
        trace = _batch_return(BM, DOM, StepSchedule.constant(0.01), 2.0,
                              sampler, np.full(2000, 0.5), rng,
                              np.array([0.25, 0.5, 1.0, 2.0]))
        f = lambda x: np.sin(np.pi * x)
        n = trace.first_jump.shape[0]
        for i, t in enumerate(trace.instants):
            vals = f(trace.states[i])
            pre = vals[trace.first_jump > t].sum()
            post = vals[trace.first_jump <= t].sum()
            assert (pre + post) / n == pytest.approx(vals.mean(), abs=1e-12)


class TestEstimateA:
    def test_f_zero_is_zero(self):
        est = estimate_A(BM, DOM, StepSchedule.constant(1e-2),
                         lambda v: np.zeros_like(v), 0.5, 500, RngStream(5))
        assert est.value == 0.0

    def test_nonnegative_for_nonnegative_f(self):
        est = estimate_A(BM, DOM, StepSchedule.constant(1e-2),
                         lambda v: np.abs(v), 0.5, 500, RngStream(6))
        assert est.value >= 0.0

    def test_expected_exit_time_center(self):
        # E_x[tau] solves (1/2)u'' = -1 with zero boundary: u(x) = x(1-x).
        est = estimate_A(BM, DOM, StepSchedule.constant(1e-4),
                         lambda v: np.ones_like(v), 0.5, 4000, RngStream(7))
        assert abs(est.value - 0.25) <= max(3 * est.stderr, 0.01)

    def test_near_boundary_small(self):
        est = estimate_A(BM, DOM, StepSchedule.constant(1e-5),
                         lambda v: np.ones_like(v), 1e-3, 2000, RngStream(8))
        assert est.value <= 0.01

    def test_linearity_on_shared_replicas(self):
        f = lambda v: v
        g = lambda v: np.sin(np.pi * v)
        a, b = 2.0, -0.7
        combo = lambda v: a * f(v) + b * g(v)
        ests = estimate_A_multi(BM, DOM, StepSchedule.constant(1e-2),
                                [f, g, combo], 0.5, 1000, RngStream(9))
        assert a * ests[0].value + b * ests[1].value == pytest.approx(
            ests[2].value, abs=1e-12
        )

    def test_start_outside_domain_rejected(self):
        with pytest.raises(ReturnProcessError):
            estimate_A(BM, DOM, StepSchedule.constant(1e-2),
                       lambda v: v, 1.5, 10, RngStream(10))


class TestEstimatePi:
    def test_constant_function_is_one(self):
        pi = estimate_Pi(BM, DOM, BmIntervalQsd(0, 1), lambda v: np.ones_like(v),
                         StepSchedule.constant(1e-3), 2000, RngStream(11))
        assert pi.value == pytest.approx(1.0, abs=1e-14)
        assert not pi.unreliable

    def test_symmetric_dirac(self):
        pi = estimate_Pi(BM, DOM, EmpiricalLaw([0.5]), lambda v: v,
                         StepSchedule.constant(1e-3), 4000, RngStream(12))
        assert abs(pi.value - 0.5) <= 3 * max(pi.stderr, 1e-3)

    def test_qsd_fixed_point(self):
        ref = BmIntervalQsd(0, 1)
        f = lambda v: np.sin(np.pi * v)
        # The step must be small: the ratio carries an O(sqrt(eta)) boundary
        # bias on top of the Monte Carlo error.
        pi = estimate_Pi(BM, DOM, ref, f, StepSchedule.constant(1e-4),
                         4000, RngStream(13))
        target = ref.integrate(lambda x: np.sin(np.pi * x))
        assert abs(pi.value - target) <= max(3 * pi.stderr, 0.01)


class TestWeakErrorCurve:
    def test_eta_list_must_decrease(self):
        with pytest.raises(ReturnProcessError):
            weak_error_curve(BM, DOM, 0.5, 0.5, 1.0, [0.01, 0.05], 0.0, 100,
                             RngStream(14))

    def test_same_step_as_reference_is_noise_level(self):
        res = weak_error_curve(BM, DOM, 0.5, 0.5, 1.0, [1e-3], 0.0, 2000,
                               RngStream(15), eta_ref=1e-3, n_instants=5)
        assert res.rows[0].sup_w1 <= 2 * res.noise_floor

    def test_sup_decreases_with_step(self):
        res = weak_error_curve(BM, DOM, 0.5, 0.5, 1.0, [0.05, 0.01, 0.002], 0.0,
                               4000, RngStream(16), eta_ref=2e-4)
        sups = [r.sup_w1 for r in res.rows]
        inversions = sum(
            1 for a, b in zip(sups, sups[1:]) if b > a + 2 * res.noise_floor
        )
        assert inversions == 0
        assert sups[-1] < sups[0]

    def test_stationary_start_stays_near_reference_law(self):
        ref = BmIntervalQsd(0, 1)
        sampler = measure_sampler(ref, DOM)
        rng = RngStream(17)
        x0s = np.asarray(sampler(rng.uniforms(4000)))
        from qsd_sim.measures import wasserstein1_1d

        trace = _batch_return(BM, DOM, StepSchedule.constant(1e-3), 2.0,
                              sampler, x0s, rng, np.linspace(0.2, 2.0, 10))
        for i in range(10):
            assert wasserstein1_1d(EmpiricalLaw(trace.states[i]), ref) <= 0.05

    def test_perturbation_radius_respected(self):
        # rho > 0 mixes a uniform admixture scaled so the restart law stays
        # within W1-radius rho of mu; the curve should still be finite and
        # the run complete.
        res = weak_error_curve(BM, DOM, BmIntervalQsd(0, 1), 0.5, 0.5,
                               [0.01], 0.02, 1000, RngStream(18), eta_ref=1e-3)
        assert np.isfinite(res.rows[0].sup_w1)


class TestExitTimeTail:
    def test_forced_exit_all_mass_first_step(self):
        model = CustomAffine(np.zeros((1, 1)), np.array([100.0]), 1e-3 * np.eye(1))
        res = exit_time_tail(model, DOM, StepSchedule.constant(0.1), 900,
                             RngStream(19))
        assert np.all(res.taus == pytest.approx(0.1))
        assert np.all(res.survival[res.grid > 0.1] == 0.0)

    def test_slope_matches_principal_eigenvalue(self):
        res = exit_time_tail(BM, DOM, StepSchedule.constant(1e-3), 20_000,
                             RngStream(20))
        assert res.slope == pytest.approx(-math.pi ** 2 / 2, rel=0.15)

    def test_more_replicas_tighter_tail(self):
        # Monte Carlo scaling: 4x the replicas roughly halves the CI width of
        # tail points; assert at least a 1.3x reduction of the binomial SE
        # at the survival-0.1 grid point.
        small = exit_time_tail(BM, DOM, StepSchedule.constant(5e-3), 2000, RngStream(21))
        big = exit_time_tail(BM, DOM, StepSchedule.constant(5e-3), 8000, RngStream(22))

        def se_at(res, level=0.1):
            i = int(np.argmin(np.abs(res.survival - level)))
            p = res.survival[i]
            return math.sqrt(p * (1 - p) / res.taus.size)

        assert se_at(small) / se_at(big) >= 1.3
