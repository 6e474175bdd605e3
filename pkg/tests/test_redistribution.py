import numpy as np
import pytest
from scipy import stats

from qsd_sim import (
    BmIntervalQsd,
    EmpiricalLaw,
    EmptyMeasureError,
    FixedPolicy,
    FullOccupationPolicy,
    Interval,
    QuantizedPolicy,
    RngStream,
    SlidingWindowPolicy,
    StepSchedule,
    h4_discrepancy,
    window_rule,
)


def make_history(policy, rng, n=500, schedule=None):
    """Feed a random in-domain visit history with schedule weights."""
    sched = schedule or StepSchedule.polynomial(0.1, 0.7)
    pts = rng.uniform(0.0, 1.0, n)
    ws = sched.gamma_array(n)
    for x, w in zip(pts, ws):
        policy.record_visit(float(x), float(w))
    return pts, ws


class TestFullOccupation:
    def test_single_record_is_dirac(self):
        pol = FullOccupationPolicy()
        pol.record_visit(0.5, 1.0)
        rng = RngStream(0)
        assert all(pol.sample_restart(rng) == 0.5 for _ in range(20))

    def test_law_equals_recorded_measure(self):
        pol = FullOccupationPolicy()
        rng = np.random.default_rng(0)
        pts, ws = make_history(pol, rng, 200)
        law = pol.current_law()
        ref = EmpiricalLaw(pts, ws)
        assert np.array_equal(law.atoms, ref.atoms)
        assert np.allclose(law.weights, ref.weights)

    def test_empty_measure_raises(self):
        with pytest.raises(EmptyMeasureError):
            FullOccupationPolicy().sample_restart(RngStream(0))

    def test_draws_supported_on_recorded_points(self):
        pol = FullOccupationPolicy()
        rng = np.random.default_rng(1)
        pts, _ = make_history(pol, rng, 50)
        stream = RngStream(1)
        draws = {pol.sample_restart(stream) for _ in range(500)}
        assert draws <= set(pts.tolist())

    def test_multinomial_chi_squared(self):
        pol = FullOccupationPolicy()
        for x, w in [(0.125, 2.0), (0.375, 0.0), (0.625, 1.0)]:
            if w:
                pol.record_visit(x, w)
        stream = RngStream(2)
        draws = np.array([pol.sample_restart(stream) for _ in range(100_000)])
        counts = [np.sum(draws == 0.125), np.sum(draws == 0.625)]
        _, p = stats.chisquare(counts, [2 / 3 * 100_000, 1 / 3 * 100_000])
        assert p > 0.01


class TestSlidingWindow:
    def test_window_of_width_one_is_last_point(self):
        pol = SlidingWindowPolicy(rule=lambda n: n - 1)
        for x in (0.2, 0.5, 0.8):
            pol.record_visit(x, 1.0)
        stream = RngStream(3)
        assert all(pol.sample_restart(stream) == 0.8 for _ in range(20))

    def test_full_window_matches_full_policy(self):
        win = SlidingWindowPolicy(rule=lambda n: 0)
        full = FullOccupationPolicy()
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 1, 100)
        for x in pts:
            win.record_visit(float(x), 0.5)
            full.record_visit(float(x), 0.5)
        fns = [lambda x: x, np.sin, lambda x: abs(x - 0.3)]
        disc = h4_discrepancy(win, full.current_law(), fns)
        assert np.allclose(disc, 0.0, atol=1e-12)

    def test_window_rules(self):
        sqrt_rule = window_rule("sqrt")
        assert sqrt_rule(100) == 10
        assert sqrt_rule(1) == 0  # never the whole history
        frac = window_rule("fraction", 0.5)
        assert frac(1000) == 500

    def test_clock_ratio_trend(self):
        # Gamma_{t(n)} / Gamma_n: to zero for t(n)=floor(sqrt(n)), toward
        # 2^(rho-1) for t(n)=floor(n/2); only the trend is asserted.
        sched = StepSchedule.polynomial(0.1, 0.7)
        ns = [10**3, 10**4, 10**5, 10**6]
        sqrt_ratios = [sched.big_gamma(int(np.sqrt(n))) / sched.big_gamma(n) for n in ns]
        assert all(a > b for a, b in zip(sqrt_ratios, sqrt_ratios[1:]))
        half_ratios = [sched.big_gamma(n // 2) / sched.big_gamma(n) for n in ns]
        spread = max(half_ratios) - min(half_ratios)
        assert spread < 0.05  # stabilizes

    def test_compaction_preserves_law(self):
        pol = SlidingWindowPolicy(rule="sqrt")
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, 5000)
        for x in pts:
            pol.record_visit(float(x), 1.0)
        law = pol.current_law()
        t = window_rule("sqrt")(5000)
        ref = EmpiricalLaw(pts[t:], np.ones(5000 - t))
        assert np.allclose(law.atoms, ref.atoms)
        assert np.allclose(law.weights, ref.weights)


class TestQuantized:
    def test_binning_example(self):
        pol = QuantizedPolicy(Interval(0, 1).build_partition(0.25))
        pol.record_visit(0.1, 2.0)
        pol.record_visit(0.6, 1.0)
        assert np.allclose(pol.cell_weights, [2.0, 0.0, 1.0, 0.0])
        law = pol.current_law()
        assert np.allclose(sorted(law.weights), [1 / 3, 2 / 3])

    def test_dirac_draws_are_cell_representatives(self):
        pol = QuantizedPolicy(Interval(0, 1).build_partition(0.25))
        pol.record_visit(0.1, 2.0)
        pol.record_visit(0.6, 1.0)
        stream = RngStream(4)
        draws = {pol.sample_restart(stream) for _ in range(200)}
        assert draws <= {0.125, 0.625}  # in-domain cell centers

    def test_h4_single_atom(self):
        pol = QuantizedPolicy(Interval(0, 1).build_partition(0.25))
        pol.record_visit(0.1, 1.0)
        (disc,) = h4_discrepancy(pol, EmpiricalLaw([0.1]), [lambda x: x])
        assert abs(disc) == pytest.approx(0.025)
        assert abs(disc) <= 0.25

    def test_lipschitz_bound_random_histories(self):
        eps = 0.1
        fns = [
            (lambda x: x, 1.0),
            (lambda x: np.sin(np.pi * np.asarray(x)), np.pi),
            (lambda x: np.abs(np.asarray(x) - 0.3), 1.0),
        ]
        rng = np.random.default_rng(4)
        for trial in range(100):
            pol = QuantizedPolicy(Interval(0, 1).build_partition(eps))
            n = int(rng.integers(5, 300))
            pts = rng.uniform(0, 1, n)
            ws = rng.uniform(0.01, 1.0, n)
            for x, w in zip(pts, ws):
                pol.record_visit(float(x), float(w))
            full = EmpiricalLaw(pts, ws)
            discs = h4_discrepancy(pol, full, [f for f, _ in fns])
            for (f, lip), d in zip(fns, discs):
                assert abs(d) <= lip * eps + 1e-12

    def test_uniform_cell_law_supported_on_cell(self):
        pol = QuantizedPolicy(Interval(0, 1).build_partition(0.25), cell_law="uniform")
        pol.record_visit(0.6, 1.0)
        stream = RngStream(5)
        for _ in range(100):
            d = pol.sample_restart(stream)
            assert 0.5 <= d <= 0.75


class TestFixed:
    def test_uniform_ks(self):
        pol = FixedPolicy(Interval(0, 1))
        stream = RngStream(6)
        draws = np.array([pol.sample_restart(stream) for _ in range(100_000)])
        _, p = stats.kstest(draws, "uniform")
        assert p > 0.01

    def test_sin_profile_ks(self):
        ref = BmIntervalQsd(0, 1)
        pol = FixedPolicy(ref)
        stream = RngStream(7)
        draws = np.array([pol.sample_restart(stream) for _ in range(100_000)])
        _, p = stats.kstest(draws, ref.cdf)
        assert p > 0.01

    def test_history_ignored(self):
        pol = FixedPolicy(EmpiricalLaw([0.4]))
        pol.record_visit(0.9, 100.0)
        assert pol.sample_restart(RngStream(8)) == 0.4
