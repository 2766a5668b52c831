"""Sequential change detectors and their threshold / window policies.

Three statistics over a stream ``x_1, x_2, ...``:

* ``CusumDetector`` — the classical cumulative-sum recursion for a fully
  known pre/post pair.
* ``WlGlrCusumDetector`` — window-limited generalized likelihood ratio for
  the one-sided Gaussian mean family (mean above the pre-change mean, known
  variance), computed in closed form.
* ``LooCusumDetector`` — window-limited CuSum whose log-likelihood ratio
  replaces the unknown post-change density with a leave-one-out KDE built
  from the candidate segment itself.

Detector states are single-owner mutable objects: hand them between threads
freely, never share one concurrently.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .density import (
    DEFAULT_CLAMP,
    FIXED_RULE,
    GAUSSIAN,
    BandwidthPolicy,
    ClampBounds,
    Kernel,
    bandwidth,
    clamp_density,
    loo_kde_at,
)
from .errors import InsufficientSamplesError
from .model import ChangePointModel, GaussianModel, SampleStream, log_likelihood_ratio

PER_SEGMENT = "per_segment"
PER_TIME = "per_time"
_SCOPE_CODES = {PER_SEGMENT: 0, PER_TIME: 1}


class Detector(Protocol):
    """Minimal protocol shared by the three sequential detectors."""

    time: int

    def step(self, x: float) -> float:
        """Consume one observation and return the updated statistic."""
        ...


@dataclass(frozen=True)
class Alarm:
    """Outcome of running a detector against a threshold.

    ``stopping_time`` is the first 1-based step at which the statistic
    reached the threshold; a censored run (``stopped=False``) carries the
    final statistic instead.
    """

    stopped: bool
    stopping_time: Optional[int]
    statistic_at_stop: float


def threshold_from_alpha(alpha: float, window: int) -> float:
    """Threshold ``|log alpha| + log(8 * window)`` meeting the FAR target.

    Strictly decreasing in ``alpha`` and strictly increasing in ``window``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window!r}")
    return abs(math.log(alpha)) + math.log(8.0 * window)


@dataclass(frozen=True)
class ThresholdPolicy:
    """False-alarm level plus window size, with the implied threshold."""

    alpha: float
    window: int

    @property
    def value(self) -> float:
        return threshold_from_alpha(self.alpha, self.window)


@dataclass(frozen=True)
class WindowPolicy:
    """Window sizing ``ceil(f * |log alpha| / kl_lower_bound)``, at least 2.

    ``f`` must exceed 1 and ``kl_lower_bound`` is the user's lower bound on
    the post-vs-pre KL divergence; larger ``f`` buys slack between the
    window and the detection delay it must contain.
    """

    f: float
    kl_lower_bound: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.f > 1.0:
            raise ValueError(f"f must be > 1, got {self.f!r}")
        if not self.kl_lower_bound > 0.0:
            raise ValueError("kl_lower_bound must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def size(self) -> int:
        raw = math.ceil(self.f * abs(math.log(self.alpha)) / self.kl_lower_bound)
        return max(2, raw)


def window_from_alpha(policy: WindowPolicy) -> int:
    return policy.size


class CusumDetector:
    """Cumulative-sum detector for a fully known pre/post pair.

    The recursion ``W <- max(W + llr(x), 0)`` equals the maximum over all
    candidate change points of the summed log-likelihood ratios (the empty
    candidate contributes 0, so the statistic is never negative).
    """

    def __init__(self, model: ChangePointModel) -> None:
        self.model = model
        self.statistic = 0.0
        self.time = 0

    def step(self, x: float) -> float:
        self.statistic = max(self.statistic + log_likelihood_ratio(self.model, x), 0.0)
        self.time += 1
        return self.statistic


class WlGlrCusumDetector:
    """Window-limited GLR CuSum for the one-sided Gaussian mean family.

    The post-change family is all normals with mean above the pre-change
    mean and the pre-change variance. For a candidate segment with centered
    sum ``S`` over ``L`` samples the supremum over the family is
    ``max(0, S)**2 / (2 * variance * L)``, and the statistic maximizes that
    over every start position inside the window buffer.
    """

    def __init__(self, pre: GaussianModel, window: int) -> None:
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window!r}")
        self.pre = pre
        self.window = window
        self.time = 0
        self._buffer: deque[float] = deque(maxlen=window)

    def statistic(self) -> float:
        if not self._buffer:
            raise InsufficientSamplesError("GLR statistic needs a nonempty window")
        best = 0.0
        s = 0.0
        length = 0
        for value in reversed(self._buffer):
            s += value - self.pre.mean
            length += 1
            if s > 0.0:
                best = max(best, s * s / (2.0 * self.pre.variance * length))
        return best

    def step(self, x: float) -> float:
        if not math.isfinite(x):
            raise ValueError(f"observation must be finite, got {x!r}")
        self._buffer.append(float(x))
        self.time += 1
        return self.statistic()


def loo_llr(
    window: Sequence[float],
    leave_out: int,
    pre: GaussianModel,
    kernel: Kernel = GAUSSIAN,
    h: float = 1.0,
    clamp: ClampBounds = DEFAULT_CLAMP,
) -> float:
    """Log ratio of the clamped leave-one-out KDE to the clamped pre density.

    Both densities are clipped into the clamp bounds before the log, so the
    result is finite even when the kernel sum underflows to zero.
    """
    estimate = clamp_density(loo_kde_at(window, leave_out, kernel, h), clamp)
    x = float(np.asarray(window, dtype=np.float64)[leave_out])
    reference = clamp_density(pre.density(x), clamp)
    return math.log(estimate) - math.log(reference)


def _segment_statistic(
    segment: np.ndarray,
    log_pre_clamped: np.ndarray,
    kernel: Kernel,
    h: float,
    clamp: ClampBounds,
) -> float:
    """Sum of leave-one-out log-likelihood ratios over one candidate segment."""
    length = segment.shape[0]
    diffs = (segment[:, None] - segment[None, :]) / h
    kernel_sums = kernel(diffs).sum(axis=1) - float(kernel(0.0))
    estimates = clamp_density(kernel_sums / ((length - 1) * h), clamp)
    return float(np.sum(np.log(estimates) - log_pre_clamped))


def loo_cusum_statistic(
    samples: Sequence[float],
    time: int,
    window: int,
    pre: GaussianModel,
    kernel: Kernel = GAUSSIAN,
    policy: BandwidthPolicy = BandwidthPolicy.fifth_root(),
    scope: str = PER_SEGMENT,
    clamp: ClampBounds = DEFAULT_CLAMP,
) -> float:
    """Window-limited leave-one-out CuSum statistic at time ``time``.

    ``samples`` holds the most recent observations in chronological order
    (at most ``window + 1`` of them). Candidate change points ``k`` run over
    ``[max(1, time - window), time - 1]``; each candidate's statistic sums
    the LOO log-likelihood ratios of the samples in ``x_k .. x_time`` using
    only that segment, and the result is the maximum over candidates.
    Returns ``-inf`` during warm-up (fewer than two samples) since no
    candidate leaves a sample for the estimate.

    Under the fifth-root bandwidth rule, ``scope`` picks how ``h`` is
    formed: ``per_segment`` recomputes ``h = (segment length - 1)**-0.2``
    for every candidate, ``per_time`` shares ``h = (min(time, window) - 1)
    ** -0.2`` across candidates at a given time.
    """
    if scope not in _SCOPE_CODES:
        raise ValueError(f"unknown bandwidth scope {scope!r}")
    n = time
    if n < 2:
        return -math.inf
    w = np.asarray(samples, dtype=np.float64)
    expected = min(n, window + 1)
    if w.shape[0] != expected:
        raise ValueError(
            f"expected the {expected} most recent samples at time {n}, got {w.shape[0]}"
        )
    first_index = n - w.shape[0] + 1
    log_pre_clamped = np.log(clamp_density(np.asarray(pre.density(w)), clamp))
    k_lo = max(1, n - window)
    best = -math.inf
    for k in range(k_lo, n):
        offset = k - first_index
        segment = w[offset:]
        if scope == PER_TIME and policy.rule != FIXED_RULE:
            h = bandwidth(policy, n, window)
        else:
            h = bandwidth(policy, segment.shape[0], segment.shape[0])
        value = _segment_statistic(segment, log_pre_clamped[offset:], kernel, h, clamp)
        if value > best:
            best = value
    return best


class LooCusumDetector:
    """Window-limited CuSum driven by leave-one-out density estimates.

    Keeps the ``window + 1`` most recent observations so the earliest
    candidate change point still has its full segment available. Needs no
    knowledge of the post-change density.
    """

    def __init__(
        self,
        pre: GaussianModel,
        window: int,
        kernel: Kernel = GAUSSIAN,
        policy: BandwidthPolicy = BandwidthPolicy.fifth_root(),
        scope: str = PER_SEGMENT,
        clamp: ClampBounds = DEFAULT_CLAMP,
    ) -> None:
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window!r}")
        if scope not in _SCOPE_CODES:
            raise ValueError(f"unknown bandwidth scope {scope!r}")
        if scope == PER_TIME and policy.rule != FIXED_RULE and window < 2:
            raise ValueError("per_time adaptive bandwidth needs window >= 2")
        self.pre = pre
        self.window = window
        self.kernel = kernel
        self.policy = policy
        self.scope = scope
        self.clamp = clamp
        self.time = 0
        self._buffer: deque[float] = deque(maxlen=window + 1)

    def statistic(self) -> float:
        return loo_cusum_statistic(
            np.fromiter(self._buffer, dtype=np.float64),
            self.time,
            self.window,
            self.pre,
            self.kernel,
            self.policy,
            self.scope,
            self.clamp,
        )

    def step(self, x: float) -> float:
        if not math.isfinite(x):
            raise ValueError(f"observation must be finite, got {x!r}")
        self._buffer.append(float(x))
        self.time += 1
        return self.statistic()


def run_detector(
    detector: Detector,
    threshold: float,
    stream: SampleStream,
    max_steps: int,
) -> Alarm:
    """Feed draws into ``detector`` until the statistic reaches ``threshold``.

    Stops at the first step whose statistic is at or above the threshold;
    reaching ``max_steps`` first yields a censored (non-stopped) alarm, which
    is an expected outcome rather than an error.
    """
    if not math.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold!r}")
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps!r}")
    statistic = -math.inf
    for _ in range(max_steps):
        statistic = detector.step(stream.draw())
        if statistic >= threshold:
            return Alarm(True, detector.time, statistic)
    return Alarm(False, None, statistic)
