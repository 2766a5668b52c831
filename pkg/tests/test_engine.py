"""Compiled-engine tests: chunk runners vs. step detectors and brute oracle."""

import math

import numpy as np
import pytest

from loocusum import (
    EPANECHNIKOV,
    GAUSSIAN,
    PER_SEGMENT,
    PER_TIME,
    BandwidthPolicy,
    ChangePointModel,
    ClampBounds,
    CusumDetector,
    GaussianModel,
    LooCusumDetector,
    WlGlrCusumDetector,
)
from loocusum import _engine
from loocusum.sim import run_detector_on_array

PRE = GaussianModel(0.0, 1.0)
POST = GaussianModel(0.5, 1.0)
MODEL = ChangePointModel(pre=PRE, post=POST, change_point=1)


def random_path(seed, n, mean=0.2, std=1.1):
    return np.random.default_rng(seed).normal(mean, std, n)


class TestCusumEngine:
    def test_bit_identical_to_python(self):
        xs = random_path(0, 500)
        _, trace = run_detector_on_array("cusum", xs, 1e18, PRE, post=POST)
        d = CusumDetector(MODEL)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_array_equal(trace, py)

    def test_stops_at_first_crossing(self):
        xs = random_path(1, 2000, mean=0.5)
        stop, trace = run_detector_on_array("cusum", xs, 4.0, PRE, post=POST)
        assert stop is not None
        assert trace.shape[0] == stop
        assert trace[-1] >= 4.0
        assert np.all(trace[:-1] < 4.0)


class TestGlrEngine:
    def test_bit_identical_to_python(self):
        xs = random_path(2, 400)
        _, trace = run_detector_on_array("wl_glr", xs, 1e18, PRE, window=25)
        d = WlGlrCusumDetector(PRE, window=25)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_array_equal(trace, py)

    def test_ring_wraps_correctly_past_capacity(self):
        xs = random_path(3, 150)
        _, trace = run_detector_on_array("wl_glr", xs, 1e18, PRE, window=7)
        d = WlGlrCusumDetector(PRE, window=7)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_array_equal(trace, py)


class TestLooEngines:
    @pytest.mark.parametrize("scope", [PER_SEGMENT, PER_TIME])
    @pytest.mark.parametrize("window", [5, 20, 60])
    def test_matches_python_detector(self, scope, window):
        xs = random_path(4, 3 * window + 40)
        _, trace = run_detector_on_array(
            "loo_cusum", xs, 1e18, PRE, window=window, scope=scope
        )
        d = LooCusumDetector(PRE, window=window, scope=scope)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_allclose(trace[2:], py[2:], rtol=0.0, atol=1e-9)
        assert np.all(np.isneginf(trace[:1]))

    @pytest.mark.parametrize("scope_code, scope", [(0, PER_SEGMENT), (1, PER_TIME)])
    def test_matches_brute_engine(self, scope_code, scope):
        # optimized incremental runners vs the from-scratch compiled oracle
        window = 16
        xs = random_path(5, 50)
        _, trace = run_detector_on_array(
            "loo_cusum", xs, 1e18, PRE, window=window, scope=scope
        )
        for n in range(2, len(xs) + 1):
            live = xs[max(0, n - (window + 1)) : n]
            brute = _engine.loo_statistic_brute(
                np.ascontiguousarray(live), n, window, scope_code,
                _engine.RULE_ADAPTIVE, 0.0, PRE.mean, PRE.variance,
                1e-8, 1e8, _engine.GAUSS,
            )
            assert trace[n - 1] == pytest.approx(brute, abs=1e-9)

    def test_fixed_bandwidth_path(self):
        xs = random_path(6, 80)
        policy = BandwidthPolicy.fixed(0.8)
        _, trace = run_detector_on_array(
            "loo_cusum", xs, 1e18, PRE, window=12, policy=policy
        )
        d = LooCusumDetector(PRE, window=12, policy=policy)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_allclose(trace[2:], py[2:], rtol=0.0, atol=1e-9)

    def test_epanechnikov_with_clamping(self):
        # compact kernel underflows to zero density: clamp floor must engage
        xs = np.concatenate([random_path(7, 30), np.array([25.0]), random_path(8, 10)])
        clamp = ClampBounds(1e-8, 1e8)
        _, trace = run_detector_on_array(
            "loo_cusum", xs, 1e18, PRE, window=10, kernel=EPANECHNIKOV, clamp=clamp
        )
        d = LooCusumDetector(PRE, window=10, kernel=EPANECHNIKOV, clamp=clamp)
        py = np.array([d.step(x) for x in xs])
        assert np.all(np.isfinite(trace[2:]))
        np.testing.assert_allclose(trace[2:], py[2:], rtol=0.0, atol=1e-9)

    def test_long_run_no_drift(self):
        # incremental row sums must not wander away from the from-scratch value
        window = 24
        xs = random_path(9, 2500, mean=0.0, std=1.0)
        for scope, scope_code in ((PER_SEGMENT, 0), (PER_TIME, 1)):
            _, trace = run_detector_on_array(
                "loo_cusum", xs, 1e18, PRE, window=window, scope=scope
            )
            n = len(xs)
            live = xs[n - (window + 1) :]
            brute = _engine.loo_statistic_brute(
                np.ascontiguousarray(live), n, window, scope_code,
                _engine.RULE_ADAPTIVE, 0.0, PRE.mean, PRE.variance,
                1e-8, 1e8, _engine.GAUSS,
            )
            assert trace[-1] == pytest.approx(brute, abs=1e-9)

    def test_warmup_boundary_steps(self):
        # exercise n == window and n == window + 1 where the per-time matrix
        # switches from full refresh to incremental updates
        window = 9
        xs = random_path(10, 2 * window + 2)
        _, trace = run_detector_on_array(
            "loo_cusum", xs, 1e18, PRE, window=window, scope=PER_TIME
        )
        d = LooCusumDetector(PRE, window=window, scope=PER_TIME)
        py = np.array([d.step(x) for x in xs])
        np.testing.assert_allclose(trace[2:], py[2:], rtol=0.0, atol=1e-9)


class TestRunOnArray:
    def test_empty_input(self):
        stop, trace = run_detector_on_array("cusum", [], 1.0, PRE, post=POST)
        assert stop is None
        assert trace.shape[0] == 0

    def test_cusum_requires_post(self):
        with pytest.raises(ValueError):
            run_detector_on_array("cusum", [1.0], 1.0, PRE)

    def test_chunked_equals_single_shot(self):
        # the same data fed through the chunked trial runner must agree
        from loocusum.sim import TrialPlan, _make_chunk_runner

        xs = random_path(11, 700)
        stop, trace = run_detector_on_array(
            "loo_cusum", xs, 5.0, PRE, window=15, scope=PER_SEGMENT
        )
        plan = TrialPlan(
            "loo_cusum", MODEL, 5.0, 15, 1, len(xs), 0, scope=PER_SEGMENT
        )
        runner = _make_chunk_runner(plan)
        pieces = []
        done = 0
        stopped_at = None
        for size in (100, 250, 350):
            chunk_trace = np.empty(size)
            rel = runner(xs[done : done + size], done, chunk_trace)
            if rel >= 0:
                pieces.append(chunk_trace[: rel + 1])
                stopped_at = done + rel + 1
                break
            pieces.append(chunk_trace)
            done += size
        chunked = np.concatenate(pieces)
        assert stopped_at == stop
        np.testing.assert_array_equal(chunked, trace)
