"""Gaussian observation models and reproducible change-point sample streams.

Time is 1-based throughout: a change point ``nu`` means the sample with
index ``nu`` is the first one drawn from the post-change density. All
logarithms are natural logs, so log-likelihood ratios and KL divergences
share units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianModel:
    """Normal density with the given mean and (strictly positive) variance."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise ValueError("mean and variance must be finite")
        if self.variance <= 0.0:
            raise ValueError(f"variance must be > 0, got {self.variance!r}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_density(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Log density at ``x``; accepts a scalar or an array of points."""
        if not isinstance(x, np.ndarray) and not math.isfinite(x):
            raise ValueError(f"evaluation point must be finite, got {x!r}")
        return (
            -0.5 * (_LOG_2PI + math.log(self.variance))
            - (x - self.mean) ** 2 / (2.0 * self.variance)
        )

    def density(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return np.exp(self.log_density(x)) if isinstance(x, np.ndarray) else math.exp(self.log_density(x))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(size)


@dataclass(frozen=True)
class ChangePointModel:
    """Pre/post-change densities plus the change time ``nu``.

    Samples with 1-based index ``i < change_point`` come from ``pre``; samples
    with ``i >= change_point`` come from ``post``. ``change_point=math.inf``
    yields a pure pre-change stream.
    """

    pre: GaussianModel
    post: GaussianModel
    change_point: float = math.inf

    def __post_init__(self) -> None:
        nu = self.change_point
        if nu != math.inf and not (float(nu).is_integer() and nu >= 1):
            raise ValueError(
                f"change_point must be a positive integer or inf, got {nu!r}"
            )

    def regime(self, index: int) -> GaussianModel:
        """Density governing the sample with 1-based ``index``."""
        return self.pre if index < self.change_point else self.post


def log_likelihood_ratio(model: ChangePointModel, x: float) -> float:
    """log post(x) - log pre(x) for a single finite observation."""
    if not math.isfinite(x):
        raise ValueError(f"observation must be finite, got {x!r}")
    return model.post.log_density(x) - model.pre.log_density(x)


def kl_divergence(p: GaussianModel, q: GaussianModel) -> float:
    """Exact KL divergence D(p || q) between two Gaussians.

    Nonnegative, and zero exactly when the parameters coincide.
    """
    var_ratio = p.variance / q.variance
    mean_gap = p.mean - q.mean
    return 0.5 * (var_ratio + mean_gap**2 / q.variance - 1.0 - math.log(var_ratio))


class SampleStream:
    """Deterministic sample source for a change-point model.

    Single-owner mutable state: safe to hand between threads, never to share
    concurrently. The same ``(seed, model)`` pair always reproduces the same
    sequence, and the underlying generator is counter-based (Philox) so
    disjoint seeds give independent streams.

    The stream draws a standard normal per index and rescales it by whichever
    regime governs that index, so streams that share a seed but differ only in
    ``change_point`` are driven by identical noise.
    """

    def __init__(self, seed: int, model: ChangePointModel) -> None:
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self.model = model
        self.cursor = 0  # number of samples drawn so far
        self._rng = np.random.Generator(np.random.Philox(key=seed))

    def draw(self) -> float:
        """Return the next observation and advance the cursor."""
        z = self._rng.standard_normal()
        self.cursor += 1
        g = self.model.regime(self.cursor)
        return g.mean + g.std * z

    def draw_block(self, count: int) -> np.ndarray:
        """Draw ``count`` observations at once; identical to repeated draws."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        z = self._rng.standard_normal(count)
        first = self.cursor + 1
        self.cursor += count
        return scale_block(z, first, self.model)


def scale_block(z: np.ndarray, first_index: int, model: ChangePointModel) -> np.ndarray:
    """Rescale standard normals ``z`` for 1-based indices starting at ``first_index``."""
    nu = model.change_point
    out = np.empty_like(z)
    n = z.shape[0]
    # number of leading pre-change entries in this block
    n_pre = 0 if nu == math.inf else int(min(max(nu - first_index, 0), n))
    if nu == math.inf:
        n_pre = n
    out[:n_pre] = model.pre.mean + model.pre.std * z[:n_pre]
    out[n_pre:] = model.post.mean + model.post.std * z[n_pre:]
    return out
