"""Local differential privacy for reported rewards.

Per-reward clients (M1) release reward + Lap(2 / epsilon); aggregating
clients (M2) average their n_a rewards and release mean + Lap(2 / (n_a *
epsilon)).  Both rates come from a reward sensitivity of 2 (clean rewards
are modeled on [-1, 1]); if clipping to [-clip, clip] is enabled the
sensitivity becomes 2 * clip and the scales adjust accordingly.

All Laplace noise is generated through one inverse-CDF transform of a single
uniform draw so that a stream position fully determines the noise value.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 1.0
    enabled: bool = True
    clip: float | None = None

    def __post_init__(self):
        if self.enabled and self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive when privacy is enabled")
        if self.clip is not None and self.clip <= 0.0:
            raise ValueError("clip must be positive when set")

    @property
    def sensitivity(self) -> float:
        return 2.0 * (self.clip if self.clip is not None else 1.0)

    def to_json_dict(self) -> dict:
        return {"epsilon": self.epsilon, "enabled": self.enabled, "clip": self.clip}


def laplace_icdf(u: float | np.ndarray, scale: float) -> float | np.ndarray:
    """Inverse CDF of the zero-mean Laplace distribution with the given scale.

    u = 0.5 maps to 0; u in the upper half maps to -scale*log(2(1-u)).
    """
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    u_arr = np.clip(np.asarray(u, dtype=float), 1e-300, 1.0 - 1e-16)
    out = np.where(
        u_arr >= 0.5,
        -scale * np.log(2.0 * (1.0 - u_arr)),
        scale * np.log(2.0 * u_arr),
    )
    return float(out) if np.isscalar(u) or np.asarray(u).ndim == 0 else out


def sample_laplace(scale: float, rng: np.random.Generator, size: int | None = None):
    """Laplace(0, scale) via the inverse CDF of uniform draws from rng."""
    if size is None:
        return laplace_icdf(rng.random(), scale)
    return laplace_icdf(rng.random(size), scale)


def _clipped(value: float, params: PrivacyParams) -> float:
    if params.clip is None:
        return value
    return float(np.clip(value, -params.clip, params.clip))


def m1_scale(params: PrivacyParams) -> float:
    return params.sensitivity / params.epsilon


def m2_scale(params: PrivacyParams, n_a: int) -> float:
    if n_a < 1:
        raise ValueError("n_a must be at least 1")
    return params.sensitivity / (n_a * params.epsilon)


def privatize_m1(reward: float, params: PrivacyParams, rng: np.random.Generator) -> float:
    """Per-reward release: reward + Lap(sensitivity / epsilon).

    The identity map when privacy is disabled (no rng consumption).
    """
    if not params.enabled:
        return float(reward)
    return _clipped(float(reward), params) + sample_laplace(m1_scale(params), rng)


def privatize_m2(
    mean_reward: float,
    n_a: int,
    params: PrivacyParams,
    rng: np.random.Generator,
) -> float:
    """Aggregated release: mean + Lap(sensitivity / (n_a * epsilon)).

    The identity map when privacy is disabled (no rng consumption).
    """
    if n_a < 1:
        raise ValueError("n_a must be at least 1")
    if not params.enabled:
        return float(mean_reward)
    return _clipped(float(mean_reward), params) + sample_laplace(m2_scale(params, n_a), rng)
