"""Kernels, the leave-one-out kernel density estimate, and quality diagnostics.

The LOO-KDE evaluated for the sample at ``leave_out`` uses every other
window entry as a kernel center, so the estimate and the left-out sample are
independent. Diagnostics (MISE, KL loss) measure how fast the estimate
approaches the truth as the window grows, and ``fit_rate_bounds`` turns a
measured MISE series into polynomial-rate constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import (
    DegenerateWindowError,
    InsufficientSamplesError,
    QuadratureError,
    RateViolationError,
)
from .model import GaussianModel

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

GAUSSIAN_KERNEL = "gaussian"
EPANECHNIKOV_KERNEL = "epanechnikov"
_KERNEL_CODES = {GAUSSIAN_KERNEL: 0, EPANECHNIKOV_KERNEL: 1}


@dataclass(frozen=True)
class Kernel:
    """Symmetric nonnegative kernel function integrating to one."""

    kind: str = GAUSSIAN_KERNEL

    def __post_init__(self) -> None:
        if self.kind not in _KERNEL_CODES:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def code(self) -> int:
        """Integer tag used by the compiled engine."""
        return _KERNEL_CODES[self.kind]

    def __call__(self, u):
        if self.kind == GAUSSIAN_KERNEL:
            return _INV_SQRT_2PI * np.exp(-0.5 * np.square(u))
        # Epanechnikov: compact support, can return exact zero (clamping is
        # mandatory downstream when this kernel feeds a log-ratio).
        return 0.75 * np.clip(1.0 - np.square(u), 0.0, None)


GAUSSIAN = Kernel(GAUSSIAN_KERNEL)
EPANECHNIKOV = Kernel(EPANECHNIKOV_KERNEL)

FIFTH_ROOT_RULE = "fifth_root"
FIXED_RULE = "fixed"


@dataclass(frozen=True)
class BandwidthPolicy:
    """Bandwidth selection rule.

    ``fifth_root`` sets ``h = (min(n, m) - 1) ** -0.2`` from the time index
    ``n`` and window size ``m``; it needs at least two available samples.
    ``fixed`` always returns the stored ``h``.
    """

    rule: str = FIFTH_ROOT_RULE
    h: Optional[float] = None

    def __post_init__(self) -> None:
        if self.rule not in (FIFTH_ROOT_RULE, FIXED_RULE):
            raise ValueError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == FIXED_RULE:
            if self.h is None or not (self.h > 0.0):
                raise ValueError("fixed rule requires h > 0")
        elif self.h is not None:
            raise ValueError("fifth_root rule takes no h")

    @classmethod
    def fifth_root(cls) -> "BandwidthPolicy":
        return cls(FIFTH_ROOT_RULE)

    @classmethod
    def fixed(cls, h: float) -> "BandwidthPolicy":
        return cls(FIXED_RULE, h)


def bandwidth(policy: BandwidthPolicy, n: int, m: int) -> float:
    """Bandwidth for time index ``n`` and window size ``m`` under ``policy``."""
    if policy.rule == FIXED_RULE:
        return float(policy.h)
    count = min(n, m)
    if count < 2:
        raise DegenerateWindowError(
            f"fifth_root bandwidth needs min(n, m) >= 2, got min({n}, {m})"
        )
    return float((count - 1) ** -0.2)


@dataclass(frozen=True)
class ClampBounds:
    """Positive floor and ceiling applied to densities entering a log-ratio."""

    lower: float = 1e-8
    upper: float = 1e8

    def __post_init__(self) -> None:
        if not (0.0 < self.lower < self.upper < math.inf):
            raise ValueError(
                f"require 0 < lower < upper < inf, got [{self.lower}, {self.upper}]"
            )


DEFAULT_CLAMP = ClampBounds()


def clamp_density(value, bounds: ClampBounds = DEFAULT_CLAMP):
    """Clip a nonnegative density value (or array) into ``[lower, upper]``."""
    if isinstance(value, np.ndarray):
        return np.clip(value, bounds.lower, bounds.upper)
    return min(bounds.upper, max(bounds.lower, float(value)))


def _check_leave_out(window: Sequence[float], leave_out: int) -> np.ndarray:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("window must be one-dimensional")
    if w.shape[0] < 2:
        raise InsufficientSamplesError(
            f"leave-one-out estimate needs a window of >= 2 samples, got {w.shape[0]}"
        )
    if not 0 <= leave_out < w.shape[0]:
        raise IndexError(
            f"leave_out index {leave_out} outside window of length {w.shape[0]}"
        )
    return w


def loo_kde_at(
    window: Sequence[float],
    leave_out: int,
    kernel: Kernel = GAUSSIAN,
    h: float = 1.0,
    eval_point: Optional[float] = None,
) -> float:
    """Leave-one-out KDE evaluated at the left-out sample.

    Averages kernels centered on every window entry except ``leave_out`` and
    normalizes by ``(len(window) - 1) * h``. The stored value at ``leave_out``
    is never read when ``eval_point`` is supplied, which makes the
    independence of the estimate from the left-out sample testable.
    """
    w = _check_leave_out(window, leave_out)
    if not h > 0.0:
        raise ValueError(f"bandwidth must be > 0, got {h!r}")
    x = w[leave_out] if eval_point is None else float(eval_point)
    others = np.delete(w, leave_out)
    return float(np.sum(kernel((x - others) / h)) / (others.shape[0] * h))


def loo_kde_on_grid(
    window: Sequence[float],
    leave_out: int,
    kernel: Kernel,
    h: float,
    grid: np.ndarray,
) -> np.ndarray:
    """The same leave-one-out estimate evaluated on a grid of points."""
    w = _check_leave_out(window, leave_out)
    if not h > 0.0:
        raise ValueError(f"bandwidth must be > 0, got {h!r}")
    others = np.delete(w, leave_out)
    u = (np.asarray(grid, dtype=np.float64)[:, None] - others[None, :]) / h
    return kernel(u).sum(axis=1) / (others.shape[0] * h)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """An averaged diagnostic with its Monte Carlo standard error."""

    value: float
    stderr: float
    trials: int


@dataclass(frozen=True)
class EstimatorRateBounds:
    """Polynomial-rate constants for the estimator's loss bounds.

    ``beta1``/``c1`` bound the KL loss by ``c1 / count**beta1``, ``beta2``/
    ``c2`` bound the total variance by ``c2 * count**beta2``, and ``c3`` is
    the fitted MISE constant. Constructed from a MISE power law via
    ``c1 = c3 / lower``, ``c2 = upper * c3 / lower**2``, ``beta2 = 2 - beta1``.
    """

    beta1: float
    beta2: float
    c1: float
    c2: float
    c3: float

    def __post_init__(self) -> None:
        if not self.beta1 > 0.0:
            raise ValueError("beta1 must be > 0")
        if not 0.0 < self.beta2 < 2.0:
            raise ValueError("beta2 must lie in (0, 2)")
        if min(self.c1, self.c2, self.c3) <= 0.0:
            raise ValueError("rate constants must be positive")


def _support_grid(truth: GaussianModel, points: int) -> np.ndarray:
    # Truth mass outside mean +/- 8 std is < 1e-14, far below the quadrature
    # tolerance.
    half = 8.0 * truth.std
    return np.linspace(truth.mean - half, truth.mean + half, points)


def _integrate(values: np.ndarray, grid: np.ndarray) -> float:
    return float(simpson(values, x=grid))


_QUAD_TOL = 1e-8


def _quadrature_check(
    integrand: Callable[[np.ndarray], np.ndarray], truth: GaussianModel, points: int
) -> None:
    """Compare the integral on the working grid against a doubled grid."""
    coarse_grid = _support_grid(truth, points)
    fine_grid = _support_grid(truth, 2 * points - 1)
    coarse = _integrate(integrand(coarse_grid), coarse_grid)
    fine = _integrate(integrand(fine_grid), fine_grid)
    if abs(coarse - fine) > _QUAD_TOL:
        raise QuadratureError(
            "quadrature did not converge on the diagnostic grid",
            grid_report={
                "points": points,
                "refined_points": 2 * points - 1,
                "value": coarse,
                "refined_value": fine,
                "difference": coarse - fine,
                "tolerance": _QUAD_TOL,
            },
        )


def _diagnostic_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))
    )


def _estimator_profile(
    truth: GaussianModel,
    sample_size: int,
    kernel: Kernel,
    policy: BandwidthPolicy,
    rng: np.random.Generator,
    grid: np.ndarray,
) -> np.ndarray:
    """One realization of the LOO estimate, evaluated on ``grid``.

    The window holds ``sample_size`` draws and the last one is left out, so
    the estimate is built from ``sample_size - 1`` kernel centers, matching
    the leave-one-out normalization.
    """
    window = truth.sample(rng, sample_size)
    h = bandwidth(policy, sample_size, sample_size)
    return loo_kde_on_grid(window, sample_size - 1, kernel, h, grid)


def estimate_mise(
    truth: GaussianModel,
    sample_size: int,
    kernel: Kernel = GAUSSIAN,
    policy: BandwidthPolicy = BandwidthPolicy.fifth_root(),
    trials: int = 50,
    seed: int = 0,
    grid_points: int = 4097,
) -> MonteCarloEstimate:
    """Monte Carlo estimate of the mean integrated squared error.

    Each trial draws a fresh window, forms the leave-one-out estimate, and
    integrates its squared distance to the truth; the result is the average
    with a standard error over trials.
    """
    if sample_size < 2:
        raise InsufficientSamplesError("sample_size must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = _support_grid(truth, grid_points)
    truth_pdf = truth.density(grid)
    ises = np.empty(trials)
    for t in range(trials):
        rng = _diagnostic_rng(seed, t)
        profile = _estimator_profile(truth, sample_size, kernel, policy, rng, grid)
        if t == 0:
            window = truth.sample(_diagnostic_rng(seed, 0), sample_size)
            h = bandwidth(policy, sample_size, sample_size)
            _quadrature_check(
                lambda g: (
                    loo_kde_on_grid(window, sample_size - 1, kernel, h, g)
                    - truth.density(g)
                )
                ** 2,
                truth,
                grid_points,
            )
        ises[t] = _integrate((profile - truth_pdf) ** 2, grid)
    stderr = float(np.std(ises, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MonteCarloEstimate(float(np.mean(ises)), stderr, trials)


def estimate_kl_loss(
    truth: GaussianModel,
    sample_size: int,
    kernel: Kernel = GAUSSIAN,
    policy: BandwidthPolicy = BandwidthPolicy.fifth_root(),
    bounds: ClampBounds = DEFAULT_CLAMP,
    trials: int = 50,
    seed: int = 0,
    grid_points: int = 4097,
    density_override: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> MonteCarloEstimate:
    """Monte Carlo estimate of the KL loss E[D(truth || estimate)].

    The estimate is clamped into ``bounds`` before the log-ratio so the
    integrand stays finite even where the kernel sum underflows.
    ``density_override`` replaces the fitted estimate with an arbitrary
    density profile (an oracle hook for testing: injecting the truth itself
    must give zero loss up to quadrature error).
    """
    if sample_size < 2:
        raise InsufficientSamplesError("sample_size must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = _support_grid(truth, grid_points)
    truth_pdf = truth.density(grid)
    log_truth = truth.log_density(grid)
    losses = np.empty(trials)
    for t in range(trials):
        rng = _diagnostic_rng(seed, t)
        if density_override is not None:
            profile = np.asarray(density_override(grid), dtype=np.float64)
        else:
            profile = _estimator_profile(truth, sample_size, kernel, policy, rng, grid)
        clamped = clamp_density(profile, bounds)
        integrand = truth_pdf * (log_truth - np.log(clamped))
        if t == 0:
            def _kl_integrand(g: np.ndarray) -> np.ndarray:
                p = truth.density(g)
                if density_override is not None:
                    q = np.asarray(density_override(g), dtype=np.float64)
                else:
                    window = truth.sample(_diagnostic_rng(seed, 0), sample_size)
                    h = bandwidth(policy, sample_size, sample_size)
                    q = loo_kde_on_grid(window, sample_size - 1, kernel, h, g)
                return p * (truth.log_density(g) - np.log(clamp_density(q, bounds)))

            _quadrature_check(_kl_integrand, truth, grid_points)
        losses[t] = _integrate(integrand, grid)
    stderr = float(np.std(losses, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MonteCarloEstimate(float(np.mean(losses)), stderr, trials)


def fit_rate_bounds(
    bounds: ClampBounds,
    mise_series: Sequence[tuple[int, float]],
) -> EstimatorRateBounds:
    """Fit a polynomial decay rate to a ``(sample_size, mise)`` series.

    Ordinary least squares on the log-log points gives the decay exponent
    ``beta1`` and constant ``c3``; the clamp bounds then yield the KL-loss
    and total-variance constants. A non-decaying series (fitted exponent
    <= 0) raises ``RateViolationError``.
    """
    series = [(int(n), float(v)) for n, v in mise_series]
    if len(series) < 3:
        raise ValueError("need at least 3 (sample_size, mise) points")
    sizes = [n for n, _ in series]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sample sizes must be strictly increasing")
    if any(v <= 0.0 for _, v in series):
        raise ValueError("mise values must be positive")
    log_n = np.log([n for n, _ in series])
    log_v = np.log([v for _, v in series])
    slope, intercept = np.polyfit(log_n, log_v, 1)
    beta1 = -float(slope)
    if beta1 <= 0.0:
        raise RateViolationError(
            f"MISE series does not decay (fitted exponent {beta1:.4g} <= 0)",
            series=series,
        )
    c3 = float(math.exp(intercept))
    return EstimatorRateBounds(
        beta1=beta1,
        beta2=2.0 - beta1,
        c1=c3 / bounds.lower,
        c2=bounds.upper * c3 / bounds.lower**2,
        c3=c3,
    )
