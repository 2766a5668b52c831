"""Detector tests: recursions vs. brute-force oracles, policies, invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loocusum import (
    EPANECHNIKOV,
    GAUSSIAN,
    PER_SEGMENT,
    PER_TIME,
    Alarm,
    BandwidthPolicy,
    ChangePointModel,
    ClampBounds,
    CusumDetector,
    GaussianModel,
    InsufficientSamplesError,
    LooCusumDetector,
    SampleStream,
    ThresholdPolicy,
    WindowPolicy,
    WlGlrCusumDetector,
    log_likelihood_ratio,
    loo_cusum_statistic,
    loo_llr,
    run_detector,
    threshold_from_alpha,
    window_from_alpha,
)

PRE = GaussianModel(0.0, 1.0)
POST = GaussianModel(0.5, 1.0)
MODEL = ChangePointModel(pre=PRE, post=POST, change_point=1)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def brute_force_cusum_path(zs):
    """Max over candidate start points of left-to-right partial LLR sums."""
    path = []
    for n in range(1, len(zs) + 1):
        best = 0.0  # empty candidate
        for k in range(n):
            s = 0.0
            for i in range(k, n):
                s = s + zs[i]
            best = max(best, s)
        path.append(best)
    return path


class TestCusumDetector:
    def test_fresh_statistic_is_zero(self):
        assert CusumDetector(MODEL).statistic == 0.0

    def test_two_step_example(self):
        d = CusumDetector(MODEL)
        assert d.step(1.0) == pytest.approx(0.375, abs=1e-12)
        # 0.375 + (0.5 * -1 - 0.125) = -0.25 clips to zero
        assert d.step(-1.0) == 0.0

    def test_recursion_equals_brute_force_exactly(self):
        rng = np.random.default_rng(2024)
        for _ in range(25):
            n = int(rng.integers(5, 120))
            xs = rng.normal(0.2, 1.3, n)
            zs = [log_likelihood_ratio(MODEL, x) for x in xs]
            d = CusumDetector(MODEL)
            recursion = [d.step(x) for x in xs]
            assert recursion == brute_force_cusum_path(zs)

    def test_statistic_never_negative(self):
        rng = np.random.default_rng(5)
        d = CusumDetector(MODEL)
        for x in rng.normal(-2.0, 1.0, 500):
            assert d.step(x) >= 0.0


def grid_search_glr(window, mu0, var0, theta_max=5.0, step=1e-4):
    """Sup over the one-sided mean family by brute grid search."""
    thetas = np.arange(step, theta_max + step, step)
    best = 0.0
    w = np.asarray(window, dtype=np.float64)
    for k in range(len(w)):
        seg = w[k:]
        # sum of log-likelihood ratios for mean theta, variance var0
        sums = (
            thetas * np.sum(seg - mu0) / var0
            - len(seg) * thetas**2 / (2.0 * var0)
        )
        best = max(best, float(np.max(sums)), 0.0)
    return best


class TestWlGlrDetector:
    def test_two_equal_positives(self):
        d = WlGlrCusumDetector(PRE, window=10)
        d.step(1.0)
        value = d.step(1.0)
        assert value == pytest.approx(1.0, abs=1e-12)
        assert value == pytest.approx(grid_search_glr([1.0, 1.0], 0.0, 1.0), abs=1e-6)

    def test_single_observation(self):
        d = WlGlrCusumDetector(PRE, window=10)
        value = d.step(1.0)
        assert value == pytest.approx(0.5, abs=1e-12)
        assert value == pytest.approx(grid_search_glr([1.0], 0.0, 1.0), abs=1e-6)

    def test_all_negative_window_gives_zero(self):
        d = WlGlrCusumDetector(PRE, window=8)
        for x in (-0.5, -2.0, -0.1, -3.3):
            value = d.step(x)
        assert value == 0.0

    def test_empty_window_errors(self):
        with pytest.raises(InsufficientSamplesError):
            WlGlrCusumDetector(PRE, window=4).statistic()

    def test_matches_grid_search_on_random_windows(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(1, 25))
            xs = rng.normal(0.3, 1.0, n)
            d = WlGlrCusumDetector(PRE, window=30)
            for x in xs:
                value = d.step(x)
            oracle = grid_search_glr(xs, 0.0, 1.0)
            assert value == pytest.approx(oracle, abs=1e-6)

    def test_window_limits_the_candidates(self):
        # a huge early value must be forgotten once it leaves the buffer
        d = WlGlrCusumDetector(PRE, window=3)
        d.step(50.0)
        for _ in range(3):
            value = d.step(0.0)
        assert value == 0.0


class TestLooLlr:
    def test_coincident_pair_is_neutral(self):
        # estimate K(0) = 1/sqrt(2*pi) equals the reference density at 0
        assert loo_llr([0.0, 0.0], 0, PRE, GAUSSIAN, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_distant_neighbor_penalty(self):
        # log(K(3)) - log(p0(0)) = -4.5 exactly for the unit-bandwidth kernel
        value = loo_llr([0.0, 3.0], 0, PRE, GAUSSIAN, 1.0)
        assert value == pytest.approx(-4.5, abs=1e-12)

    def test_epanechnikov_underflow_hits_clamp_floor(self):
        clamp = ClampBounds(1e-8, 1e8)
        value = loo_llr([0.0, 3.0], 0, PRE, EPANECHNIKOV, 1.0, clamp)
        expected = math.log(1e-8) - math.log(PRE.density(0.0))
        assert value == pytest.approx(expected, abs=1e-12)
        assert math.isfinite(value)

    def test_propagates_insufficient_samples(self):
        with pytest.raises(InsufficientSamplesError):
            loo_llr([1.0], 0, PRE)


def naive_loo_statistic(history, window, pre, scope, h_fixed=None, clamp=None):
    """Pure-python from-scratch recomputation of the window-limited statistic."""
    clamp = clamp or ClampBounds()
    n = len(history)
    if n < 2:
        return -math.inf

    def kde(seg, i, h):
        total = sum(
            INV_SQRT_2PI * math.exp(-0.5 * ((seg[i] - seg[j]) / h) ** 2)
            for j in range(len(seg))
            if j != i
        )
        return total / ((len(seg) - 1) * h)

    def clip(v):
        return min(clamp.upper, max(clamp.lower, v))

    best = -math.inf
    for k in range(max(1, n - window), n):
        seg = history[k - 1 : n]
        if h_fixed is not None:
            h = h_fixed
        elif scope == PER_TIME:
            h = (min(n, window) - 1) ** -0.2
        else:
            h = (len(seg) - 1) ** -0.2
        s = 0.0
        for i in range(len(seg)):
            s += math.log(clip(kde(seg, i, h))) - math.log(clip(pre.density(seg[i])))
        best = max(best, s)
    return best


class TestLooCusumStatistic:
    def test_warmup_is_not_ready(self):
        d = LooCusumDetector(PRE, window=10)
        assert d.statistic() == -math.inf
        assert d.step(0.3) == -math.inf

    def test_two_coincident_samples(self):
        d = LooCusumDetector(PRE, window=10, policy=BandwidthPolicy.fixed(1.0))
        d.step(0.0)
        assert d.step(0.0) == pytest.approx(0.0, abs=1e-12)

    def test_identical_samples_fixed_bandwidth_closed_form(self):
        # all samples at c: each estimate is K(0)/((L-1)h) * (L-1) = K(0)/h
        c = 1.3
        h = 0.7
        d = LooCusumDetector(PRE, window=6, policy=BandwidthPolicy.fixed(h))
        for _ in range(5):
            value = d.step(c)
        n, m = d.time, 6
        expected = -math.inf
        for k in range(max(1, n - m), n):
            length = n - k + 1
            per_term = math.log(INV_SQRT_2PI / h) - math.log(PRE.density(c))
            expected = max(expected, length * per_term)
        assert value == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("scope", [PER_SEGMENT, PER_TIME])
    def test_matches_naive_recomputation(self, scope):
        rng = np.random.default_rng(11)
        for trial in range(8):
            history = list(rng.normal(0.3, 1.1, 50))
            d = LooCusumDetector(PRE, window=12, scope=scope)
            for step_idx, x in enumerate(history, start=1):
                value = d.step(x)
                if step_idx >= 2 and (step_idx % 7 == 0 or step_idx == len(history)):
                    oracle = naive_loo_statistic(history[:step_idx], 12, PRE, scope)
                    assert value == pytest.approx(oracle, abs=1e-9)

    def test_translation_invariance(self):
        rng = np.random.default_rng(21)
        xs = rng.normal(0.0, 1.0, 40)
        shift = 3.7
        base = LooCusumDetector(PRE, window=15)
        moved = LooCusumDetector(GaussianModel(PRE.mean + shift, PRE.variance), window=15)
        for x in xs:
            a = base.step(x)
            b = moved.step(x + shift)
        assert a == pytest.approx(b, abs=1e-9)

    def test_masking_before_window_changes_nothing(self):
        # only the last (window + 1) samples can influence the statistic
        rng = np.random.default_rng(33)
        tail = list(rng.normal(0.0, 1.0, 21))
        early_a = list(rng.normal(0.0, 1.0, 30))
        early_b = list(rng.normal(5.0, 2.0, 30))
        m = 20
        da = LooCusumDetector(PRE, window=m)
        db = LooCusumDetector(PRE, window=m)
        for x in early_a:
            da.step(x)
        for x in early_b:
            db.step(x)
        for x in tail:
            va = da.step(x)
            vb = db.step(x)
        assert va == vb

    def test_candidate_sums_use_only_their_segment(self):
        # recomputing a candidate's sum from just its segment reproduces it
        rng = np.random.default_rng(4)
        xs = list(rng.normal(0.0, 1.0, 12))
        n, m = len(xs), 8
        stat = loo_cusum_statistic(xs[-(m + 1):], n, m, PRE)
        candidates = []
        for k in range(max(1, n - m), n):
            seg = xs[k - 1:]
            h = (len(seg) - 1) ** -0.2
            candidates.append(
                sum(loo_llr(seg, i, PRE, GAUSSIAN, h) for i in range(len(seg)))
            )
        assert stat == pytest.approx(max(candidates), rel=1e-12)

    def test_per_time_scope_requires_window_of_two(self):
        with pytest.raises(ValueError):
            LooCusumDetector(PRE, window=1, scope=PER_TIME)

    def test_wrong_sample_count_rejected(self):
        with pytest.raises(ValueError):
            loo_cusum_statistic([1.0, 2.0], time=5, window=10, pre=PRE)


class TestThresholdPolicy:
    def test_reference_values(self):
        assert threshold_from_alpha(0.01, 100) == pytest.approx(
            math.log(100.0) + math.log(800.0), abs=1e-12
        )
        assert threshold_from_alpha(0.01, 100) == pytest.approx(11.289782, abs=1e-6)
        assert threshold_from_alpha(1.0 / math.e, 1) == pytest.approx(
            1.0 + math.log(8.0), abs=1e-12
        )
        assert threshold_from_alpha(1.0 / math.e, 1) == pytest.approx(3.079442, abs=1e-6)

    def test_doubling_window_adds_log_two(self):
        gap = threshold_from_alpha(0.01, 200) - threshold_from_alpha(0.01, 100)
        assert gap == pytest.approx(math.log(2.0), abs=1e-12)

    def test_domain(self):
        for alpha in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                threshold_from_alpha(alpha, 10)
        with pytest.raises(ValueError):
            threshold_from_alpha(0.1, 0)

    @given(
        a1=st.floats(min_value=1e-6, max_value=0.99),
        a2=st.floats(min_value=1e-6, max_value=0.99),
        m=st.integers(min_value=1, max_value=10_000),
    )
    @settings(max_examples=100)
    def test_monotone_in_alpha_and_window(self, a1, a2, m):
        if a1 < a2:
            assert threshold_from_alpha(a1, m) > threshold_from_alpha(a2, m)
        assert threshold_from_alpha(a1, 2 * m) > threshold_from_alpha(a1, m)

    def test_policy_object(self):
        policy = ThresholdPolicy(alpha=0.01, window=100)
        assert policy.value == threshold_from_alpha(0.01, 100)


class TestWindowPolicy:
    def test_reference_values(self):
        assert window_from_alpha(WindowPolicy(2.0, 0.125, 0.01)) == 74
        assert window_from_alpha(WindowPolicy(2.0, 0.0921, 0.01)) == 101

    def test_minimum_of_two(self):
        assert window_from_alpha(WindowPolicy(1.1, 100.0, 0.9)) == 2

    def test_f_must_exceed_one(self):
        with pytest.raises(ValueError):
            WindowPolicy(1.0, 0.125, 0.01)
        with pytest.raises(ValueError):
            WindowPolicy(0.5, 0.125, 0.01)

    def test_other_domains(self):
        with pytest.raises(ValueError):
            WindowPolicy(2.0, 0.0, 0.01)
        with pytest.raises(ValueError):
            WindowPolicy(2.0, 0.125, 1.5)


class TestRunDetector:
    def test_zero_threshold_stops_cusum_immediately(self):
        stream = SampleStream(3, MODEL)
        alarm = run_detector(CusumDetector(MODEL), 0.0, stream, 100)
        assert alarm == Alarm(True, 1, alarm.statistic_at_stop)
        assert alarm.statistic_at_stop >= 0.0

    def test_unreachable_threshold_censors(self):
        stream = SampleStream(3, MODEL)
        alarm = run_detector(CusumDetector(MODEL), 1e18, stream, 100)
        assert alarm.stopped is False
        assert alarm.stopping_time is None

    def test_same_seed_same_alarm(self):
        def once():
            stream = SampleStream(17, MODEL)
            det = LooCusumDetector(PRE, window=15)
            return run_detector(det, 3.0, stream, 400)

        assert once() == once()

    @pytest.mark.parametrize(
        "factory",
        [
            lambda: CusumDetector(MODEL),
            lambda: WlGlrCusumDetector(PRE, window=15),
            lambda: LooCusumDetector(PRE, window=15),
        ],
    )
    def test_pathwise_threshold_monotonicity(self, factory):
        for seed in (1, 2, 3):
            times = []
            for b in (1.0, 2.5, 4.0):
                stream = SampleStream(seed, MODEL)
                alarm = run_detector(factory(), b, stream, 600)
                times.append(alarm.stopping_time if alarm.stopped else 10**9)
            assert times[0] <= times[1] <= times[2]

    def test_validates_arguments(self):
        stream = SampleStream(0, MODEL)
        with pytest.raises(ValueError):
            run_detector(CusumDetector(MODEL), math.inf, stream, 10)
        with pytest.raises(ValueError):
            run_detector(CusumDetector(MODEL), 1.0, stream, 0)
