"""Monte Carlo harness: false-alarm and delay estimation, OC sweeps, checks.

Every trial draws its observations from a counter-based generator keyed by
``(master_seed, lane, trial_index)``, so results are bit-identical no matter
how many worker threads execute the trials. False-alarm and delay runs use
disjoint lanes; across thresholds the same lanes are reused on purpose
(common random numbers), which makes the estimated operating characteristic
exactly monotone in the threshold.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _engine
from .density import (
    DEFAULT_CLAMP,
    FIXED_RULE,
    GAUSSIAN,
    BandwidthPolicy,
    ClampBounds,
    Kernel,
)
from .detect import PER_SEGMENT, PER_TIME, _SCOPE_CODES, threshold_from_alpha
from .errors import DelayUnreliableError
from .model import ChangePointModel, GaussianModel, kl_divergence, scale_block

CUSUM = "cusum"
WL_GLR = "wl_glr"
LOO_CUSUM = "loo_cusum"
DETECTOR_KINDS = (CUSUM, WL_GLR, LOO_CUSUM)

_Z95 = 1.959963984540054  # 97.5% normal quantile: 95% two-sided intervals
_CHUNK_SIZES = (256, 1024, 4096)

_LANE_FAR = 0
_LANE_DELAY = 1
_LANE_DEVIATION = 2
_LANE_MATCHED_BASE = 16


@dataclass(frozen=True)
class TrialPlan:
    """One Monte Carlo experiment: a detector, a model, and run limits."""

    detector: str
    model: ChangePointModel
    threshold: float
    window: int
    trials: int
    max_steps: int
    master_seed: int
    scope: str = PER_SEGMENT
    kernel: Kernel = GAUSSIAN
    policy: BandwidthPolicy = field(default_factory=BandwidthPolicy.fifth_root)
    clamp: ClampBounds = DEFAULT_CLAMP

    def __post_init__(self) -> None:
        if self.detector not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.detector!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 <= int(self.master_seed) < 2**63:
            raise ValueError("master_seed must fit in 63 bits")
        if self.detector in (WL_GLR, LOO_CUSUM) and self.window < 1:
            raise ValueError(f"{self.detector} needs window >= 1")
        if self.scope not in _SCOPE_CODES:
            raise ValueError(f"unknown bandwidth scope {self.scope!r}")
        if (
            self.detector == LOO_CUSUM
            and self.scope == PER_TIME
            and self.policy.rule != FIXED_RULE
            and self.window < 2
        ):
            raise ValueError("per_time adaptive bandwidth needs window >= 2")


@dataclass(frozen=True)
class MtfaEstimate:
    """Mean time to false alarm with a 95% half-width; censored runs count the cap."""

    mean: float
    ci_halfwidth: float
    censored_fraction: float
    trials: int


@dataclass(frozen=True)
class DelayEstimate:
    """Mean detection delay with a 95% half-width; censored runs are excluded."""

    mean: float
    ci_halfwidth: float
    censored_fraction: float
    trials: int


@dataclass(frozen=True)
class OperatingPoint:
    """One row of an operating characteristic: threshold, MTFA, delay."""

    threshold: float
    mtfa: float
    mtfa_ci: float
    delay: float
    delay_ci: float
    censored_far: float
    trials: int


def _trial_rng(master_seed: int, lane: int, trial: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(lane, trial))
    return np.random.Generator(np.random.Philox(seq))


def _make_chunk_runner(plan: TrialPlan) -> Callable[[np.ndarray, int, np.ndarray], int]:
    """Allocate per-run engine state and return a chunk-advancing closure."""
    pre = plan.model.pre
    if plan.detector == CUSUM:
        post = plan.model.post
        state = np.zeros(1)

        def run(xs: np.ndarray, n_start: int, trace: np.ndarray) -> int:
            return _engine.cusum_chunk(
                xs, state, plan.threshold,
                pre.mean, pre.variance, post.mean, post.variance, trace,
            )

        return run
    if plan.detector == WL_GLR:
        ring = np.zeros(plan.window)
        meta = np.zeros(2, dtype=np.int64)

        def run(xs: np.ndarray, n_start: int, trace: np.ndarray) -> int:
            return _engine.glr_chunk(
                xs, ring, meta, plan.threshold, pre.mean, pre.variance, trace
            )

        return run
    # loo_cusum
    m = plan.window
    if plan.policy.rule == FIXED_RULE:
        rule, fixed_h = _engine.RULE_FIXED, float(plan.policy.h)
    else:
        rule, fixed_h = _engine.RULE_ADAPTIVE, 0.0
    if rule == _engine.RULE_ADAPTIVE and plan.scope == PER_SEGMENT:
        ring = np.zeros(m + 2)
        lpc0 = np.zeros(m + 2)
        rowsums = np.zeros(_engine.segment_rowsum_size(m))
        offsets = _engine.segment_rowsum_offsets(m)

        def run(xs: np.ndarray, n_start: int, trace: np.ndarray) -> int:
            return _engine.loo_segment_chunk(
                xs, ring, lpc0, rowsums, offsets, n_start, m, plan.threshold,
                pre.mean, pre.variance, plan.clamp.lower, plan.clamp.upper,
                plan.kernel.code, trace,
            )

        return run
    ring = np.zeros(m + 1)
    lpc0 = np.zeros(m + 1)
    kmat = np.zeros((m + 1) * (m + 1))
    suffix = np.zeros((m + 1) * (m + 1))
    lpc_lin = np.zeros(m + 1)

    def run(xs: np.ndarray, n_start: int, trace: np.ndarray) -> int:
        return _engine.loo_time_chunk(
            xs, ring, lpc0, kmat, suffix, lpc_lin, n_start, m, plan.threshold,
            pre.mean, pre.variance, plan.clamp.lower, plan.clamp.upper,
            plan.kernel.code, rule, fixed_h, trace,
        )

    return run


def _run_single(plan: TrialPlan, rng: np.random.Generator) -> tuple[int, bool, float]:
    """Run one trial to alarm or censoring; returns (time, stopped, statistic)."""
    runner = _make_chunk_runner(plan)
    trace = np.empty(_CHUNK_SIZES[-1])
    done = 0
    chunk_index = 0
    last_stat = -math.inf
    while done < plan.max_steps:
        size = _CHUNK_SIZES[min(chunk_index, len(_CHUNK_SIZES) - 1)]
        size = min(size, plan.max_steps - done)
        chunk_index += 1
        z = rng.standard_normal(size)
        xs = scale_block(z, done + 1, plan.model)
        stop_rel = runner(xs, done, trace[:size])
        if stop_rel >= 0:
            return done + stop_rel + 1, True, float(trace[stop_rel])
        done += size
        last_stat = float(trace[size - 1])
    return plan.max_steps, False, last_stat


def _map_trials(
    worker: Callable[[int], tuple], trials: int, workers: Optional[int]
) -> list:
    if workers is None or workers <= 1:
        return [worker(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, range(trials)))


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    if values.shape[0] < 2:
        return mean, 0.0
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.shape[0]))
    return mean, _Z95 * stderr


def estimate_mtfa(plan: TrialPlan, workers: Optional[int] = None) -> MtfaEstimate:
    """Mean stopping time under a change-free stream.

    Censored trials count as ``max_steps``, which biases the estimate down;
    that direction is conservative when checking a lower bound on the mean
    time to false alarm.
    """
    if plan.model.change_point != math.inf:
        raise ValueError("MTFA estimation needs change_point = inf")

    def worker(trial: int) -> tuple[int, bool]:
        rng = _trial_rng(plan.master_seed, _LANE_FAR, trial)
        tau, stopped, _ = _run_single(plan, rng)
        return tau, stopped

    results = _map_trials(worker, plan.trials, workers)
    taus = np.array([float(r[0]) for r in results])
    censored = sum(0 if r[1] else 1 for r in results)
    mean, ci = _mean_ci(taus)
    return MtfaEstimate(mean, ci, censored / plan.trials, plan.trials)


def estimate_delay(plan: TrialPlan, workers: Optional[int] = None) -> DelayEstimate:
    """Mean detection delay ``(tau - nu + 1)^+`` for a finite change point.

    Censored trials are excluded; more than 5% of them makes the estimate
    untrustworthy and raises ``DelayUnreliableError``, while anything above
    0.1% earns a warning.
    """
    nu = plan.model.change_point
    if not (nu != math.inf and nu >= 1):
        raise ValueError("delay estimation needs a finite change_point >= 1")

    def worker(trial: int) -> tuple[int, bool]:
        rng = _trial_rng(plan.master_seed, _LANE_DELAY, trial)
        tau, stopped, _ = _run_single(plan, rng)
        return tau, stopped

    results = _map_trials(worker, plan.trials, workers)
    censored = sum(0 if r[1] else 1 for r in results)
    censored_fraction = censored / plan.trials
    if censored_fraction > 0.05:
        raise DelayUnreliableError(
            f"{censored_fraction:.1%} of delay trials were censored at "
            f"max_steps={plan.max_steps}; raise the cap or the threshold floor"
        )
    if censored_fraction > 0.001:
        warnings.warn(
            f"excluding {censored} censored delay trials "
            f"({censored_fraction:.2%})",
            stacklevel=2,
        )
    delays = np.array([max(0.0, r[0] - nu + 1.0) for r in results if r[1]])
    mean, ci = _mean_ci(delays)
    return DelayEstimate(mean, ci, censored_fraction, plan.trials)


def sweep_operating_characteristic(
    detector: str,
    model: ChangePointModel,
    thresholds: Sequence[float],
    window: int,
    trials: int,
    seed: int,
    max_steps: int = 10_000,
    scope: str = PER_SEGMENT,
    kernel: Kernel = GAUSSIAN,
    policy: Optional[BandwidthPolicy] = None,
    clamp: ClampBounds = DEFAULT_CLAMP,
    workers: Optional[int] = None,
) -> list[OperatingPoint]:
    """One operating point per threshold: MTFA and delay-at-change-time.

    MTFA runs use a change-free stream, delay runs put the change at the
    first sample; the two use disjoint seed lanes, and each lane reuses the
    same per-trial streams across thresholds so both estimates are exactly
    nondecreasing along the sweep.
    """
    thresholds = [float(b) for b in thresholds]
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    if any(b2 <= b1 for b1, b2 in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly ascending")
    if policy is None:
        policy = BandwidthPolicy.fifth_root()
    far_model = replace(model, change_point=math.inf)
    delay_model = replace(model, change_point=1)
    points = []
    for b in thresholds:
        common = dict(
            detector=detector, threshold=b, window=window, trials=trials,
            max_steps=max_steps, master_seed=seed, scope=scope,
            kernel=kernel, policy=policy, clamp=clamp,
        )
        far = estimate_mtfa(TrialPlan(model=far_model, **common), workers)
        delay = estimate_delay(TrialPlan(model=delay_model, **common), workers)
        points.append(
            OperatingPoint(
                threshold=b,
                mtfa=far.mean,
                mtfa_ci=far.ci_halfwidth,
                delay=delay.mean,
                delay_ci=delay.ci_halfwidth,
                censored_far=far.censored_fraction,
                trials=trials,
            )
        )
    return points


@dataclass(frozen=True)
class DeviationReport:
    """Tail probabilities of the log-likelihood-ratio sums across a size grid.

    ``upper`` estimates the chance that some partial sum overshoots
    ``(1 + delta) * n * I`` within the first ``n`` post-change steps;
    ``lower`` the chance that the full sum stays under ``(1 - delta) * n * I``.
    Both must decay toward zero for the delay analysis to apply.
    """

    n_grid: tuple[int, ...]
    delta: float
    kl: float
    upper: tuple[float, ...]
    upper_se: tuple[float, ...]
    lower: tuple[float, ...]
    lower_se: tuple[float, ...]
    upper_decaying: bool
    lower_decaying: bool


def _decays(probs: Sequence[float], ses: Sequence[float]) -> bool:
    for (p1, s1), (p2, s2) in zip(zip(probs, ses), zip(probs[1:], ses[1:])):
        if p2 - p1 >= 2.0 * math.hypot(s1, s2):
            return False
    return True


def check_llr_deviation_decay(
    model: ChangePointModel,
    n_grid: Sequence[int],
    delta: float,
    trials: int = 4000,
    seed: int = 0,
) -> DeviationReport:
    """Estimate both deviation tails at each ``n`` and flag their decay.

    Sampling at change time 1 suffices: the summands are i.i.d. under the
    post-change law, so the supremum over change times is attained there.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    kl = kl_divergence(model.post, model.pre)
    if kl <= 0.0:
        raise ValueError("post and pre must differ: the drift constant must be > 0")
    if any(n < 1 for n in n_grid):
        raise ValueError("n_grid entries must be >= 1")
    upper, upper_se, lower, lower_se = [], [], [], []
    for idx, n in enumerate(n_grid):
        rng = _trial_rng(seed, _LANE_DEVIATION, idx)
        z = rng.standard_normal((trials, n + 1))
        x = model.post.mean + model.post.std * z
        llr = model.post.log_density(x) - model.pre.log_density(x)
        sums = np.cumsum(llr, axis=1)
        hit_upper = np.max(sums, axis=1) >= (1.0 + delta) * n * kl
        hit_lower = sums[:, -1] <= (1.0 - delta) * n * kl
        for probs, ses, hits in (
            (upper, upper_se, hit_upper),
            (lower, lower_se, hit_lower),
        ):
            p = float(np.mean(hits))
            probs.append(p)
            ses.append(math.sqrt(max(p * (1.0 - p), 1.0 / trials) / trials))
    return DeviationReport(
        n_grid=tuple(int(n) for n in n_grid),
        delta=float(delta),
        kl=kl,
        upper=tuple(upper),
        upper_se=tuple(upper_se),
        lower=tuple(lower),
        lower_se=tuple(lower_se),
        upper_decaying=_decays(upper, upper_se),
        lower_decaying=_decays(lower, lower_se),
    )


@dataclass(frozen=True)
class FalseAlarmCheck:
    """Outcome of validating the threshold rule's guaranteed MTFA floor."""

    alpha: float
    window: int
    threshold: float
    mtfa: MtfaEstimate
    bound: float
    margin: float
    passed: bool
    master_seed: int


def check_false_alarm_bound(
    alpha: float,
    window: int,
    pre: GaussianModel,
    trials: int = 2000,
    seed: int = 0,
    scope: str = PER_SEGMENT,
    kernel: Kernel = GAUSSIAN,
    policy: Optional[BandwidthPolicy] = None,
    clamp: ClampBounds = DEFAULT_CLAMP,
    max_steps: Optional[int] = None,
    workers: Optional[int] = None,
) -> FalseAlarmCheck:
    """Check that the LOO detector's measured MTFA clears ``1 / alpha``.

    Uses the threshold set from ``alpha`` and the window; censoring counts
    the cap, so the measured mean under-reports the true MTFA and the check
    is conservative. The report carries the seed needed to reproduce a
    failure.
    """
    if policy is None:
        policy = BandwidthPolicy.fifth_root()
    threshold = threshold_from_alpha(alpha, window)
    if max_steps is None:
        max_steps = math.ceil(20.0 / alpha)
    plan = TrialPlan(
        detector=LOO_CUSUM,
        model=ChangePointModel(pre=pre, post=pre, change_point=math.inf),
        threshold=threshold,
        window=window,
        trials=trials,
        max_steps=max_steps,
        master_seed=seed,
        scope=scope,
        kernel=kernel,
        policy=policy,
        clamp=clamp,
    )
    mtfa = estimate_mtfa(plan, workers)
    bound = 1.0 / alpha
    lower_edge = mtfa.mean - 2.0 * mtfa.ci_halfwidth
    return FalseAlarmCheck(
        alpha=alpha,
        window=window,
        threshold=threshold,
        mtfa=mtfa,
        bound=bound,
        margin=lower_edge / bound,
        passed=lower_edge >= bound,
        master_seed=seed,
    )


@dataclass(frozen=True)
class MatchedPoint:
    """A detector's delay interpolated at a common MTFA target."""

    detector: str
    threshold_low: float
    threshold_high: float
    mtfa_low: MtfaEstimate
    mtfa_high: MtfaEstimate
    delay_low: DelayEstimate
    delay_high: DelayEstimate
    delay: float
    delay_ci: float


def _interp_delay(
    target: float,
    mtfa_low: MtfaEstimate,
    mtfa_high: MtfaEstimate,
    delay_low: DelayEstimate,
    delay_high: DelayEstimate,
) -> float:
    lo, hi = math.log(mtfa_low.mean), math.log(mtfa_high.mean)
    if hi <= lo:
        return 0.5 * (delay_low.mean + delay_high.mean)
    w = (math.log(target) - lo) / (hi - lo)
    return (1.0 - w) * delay_low.mean + w * delay_high.mean


def compare_at_matched_mtfa(
    pre: GaussianModel,
    post: GaussianModel,
    window: int,
    target_mtfa: float,
    seed: int,
    detectors: Sequence[str] = DETECTOR_KINDS,
    far_trials: int = 400,
    delay_trials: int = 2000,
    pilot_trials: int = 150,
    scope: str = PER_TIME,
    kernel: Kernel = GAUSSIAN,
    policy: Optional[BandwidthPolicy] = None,
    clamp: ClampBounds = DEFAULT_CLAMP,
    workers: Optional[int] = None,
) -> dict[str, MatchedPoint]:
    """Interpolate each detector's delay at a common MTFA target.

    Thresholds are not comparable across detectors, so each detector gets a
    two-point bracket around the target MTFA (found by a deterministic pilot
    search) and its delay is interpolated piecewise-linearly against
    log-MTFA. All stages derive their seeds from ``seed``, so the whole
    comparison is reproducible.
    """
    if policy is None:
        policy = BandwidthPolicy.fifth_root()
    if target_mtfa <= 1.0:
        raise ValueError("target_mtfa must exceed 1")
    far_model = ChangePointModel(pre=pre, post=post, change_point=math.inf)
    delay_model = ChangePointModel(pre=pre, post=post, change_point=1)
    results: dict[str, MatchedPoint] = {}
    for d_idx, kind in enumerate(detectors):
        lane = _LANE_MATCHED_BASE + 8 * d_idx

        def far_run(b: float, trials: int, cap: int, sub: int) -> MtfaEstimate:
            plan = TrialPlan(
                detector=kind, model=far_model, threshold=b, window=window,
                trials=trials, max_steps=cap, master_seed=seed + sub,
                scope=scope, kernel=kernel, policy=policy, clamp=clamp,
            )
            return estimate_mtfa(plan, workers)

        def delay_run(b: float, sub: int) -> DelayEstimate:
            plan = TrialPlan(
                detector=kind, model=delay_model, threshold=b, window=window,
                trials=delay_trials, max_steps=max(2000, 40 * window),
                master_seed=seed + sub, scope=scope, kernel=kernel,
                policy=policy, clamp=clamp,
            )
            return estimate_delay(plan, workers)

        pilot_cap = math.ceil(5.0 * target_mtfa)
        full_cap = math.ceil(8.0 * target_mtfa)
        b = math.log(target_mtfa)
        for _ in range(3):
            pilot = far_run(b, pilot_trials, pilot_cap, lane)
            ratio = target_mtfa / pilot.mean
            if 0.5 <= ratio <= 2.0:
                b += math.log(ratio)
                break
            b += max(-3.0, min(3.0, math.log(ratio)))
        half = 0.45
        for _ in range(3):
            b_lo, b_hi = b - half, b + half
            mtfa_low = far_run(b_lo, far_trials, full_cap, lane + 1)
            mtfa_high = far_run(b_hi, far_trials, full_cap, lane + 1)
            if mtfa_low.mean <= target_mtfa <= mtfa_high.mean:
                break
            b += 0.5 * (
                math.log(target_mtfa) - 0.5 * (math.log(mtfa_low.mean) + math.log(mtfa_high.mean))
            )
            half *= 1.8
        else:
            raise RuntimeError(
                f"could not bracket target MTFA {target_mtfa:g} for {kind}: "
                f"[{mtfa_low.mean:g}, {mtfa_high.mean:g}] at thresholds "
                f"[{b_lo:g}, {b_hi:g}] (seed {seed})"
            )
        delay_low = delay_run(b_lo, lane + 2)
        delay_high = delay_run(b_hi, lane + 2)
        results[kind] = MatchedPoint(
            detector=kind,
            threshold_low=b_lo,
            threshold_high=b_hi,
            mtfa_low=mtfa_low,
            mtfa_high=mtfa_high,
            delay_low=delay_low,
            delay_high=delay_high,
            delay=_interp_delay(target_mtfa, mtfa_low, mtfa_high, delay_low, delay_high),
            delay_ci=max(delay_low.ci_halfwidth, delay_high.ci_halfwidth),
        )
    return results


def run_detector_on_array(
    detector: str,
    xs: Sequence[float],
    threshold: float,
    pre: GaussianModel,
    post: Optional[GaussianModel] = None,
    window: int = 0,
    scope: str = PER_SEGMENT,
    kernel: Kernel = GAUSSIAN,
    policy: Optional[BandwidthPolicy] = None,
    clamp: ClampBounds = DEFAULT_CLAMP,
) -> tuple[Optional[int], np.ndarray]:
    """Run a detector over explicit data; returns (stopping time, statistic path).

    The stopping time is 1-based and ``None`` when the data ends without an
    alarm. The returned path covers every processed step, so it ends at the
    alarm when one fires.
    """
    if policy is None:
        policy = BandwidthPolicy.fifth_root()
    data = np.ascontiguousarray(xs, dtype=np.float64)
    if data.ndim != 1:
        raise ValueError("data must be one-dimensional")
    if data.shape[0] == 0:
        return None, np.empty(0)
    if detector == CUSUM and post is None:
        raise ValueError("cusum needs the post-change density")
    model = ChangePointModel(pre=pre, post=post if post is not None else pre)
    plan = TrialPlan(
        detector=detector, model=model, threshold=threshold, window=window,
        trials=1, max_steps=data.shape[0], master_seed=0,
        scope=scope, kernel=kernel, policy=policy, clamp=clamp,
    )
    runner = _make_chunk_runner(plan)
    trace = np.empty(data.shape[0])
    stop_rel = runner(data, 0, trace)
    if stop_rel >= 0:
        return stop_rel + 1, trace[: stop_rel + 1].copy()
    return None, trace
