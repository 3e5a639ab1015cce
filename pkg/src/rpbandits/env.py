"""Bandit environments with probabilistic reward corruption.

Each scheduled play yields a clean reward <a, theta*> + noise.  An adversary
independently intercepts each observation with probability alpha and replaces
it according to its strategy; privacy noise is added afterwards by default
(corrupt_stage "pre-privacy") or before the adversary acts ("post-privacy").

Per-reward clients (M1) produce one report per play.  Aggregating clients
(M2) average the n_a plays of their action and produce one report per
distinct action; by default the adversary corrupts individual raw draws, and
an aggregate-corruption mode corrupts the single averaged report instead.

Randomness layout: every batch consumes one derived stream, drawing noise,
corruption uniforms, and privacy uniforms as whole arrays in a fixed order.
A play's draws therefore live at fixed stream positions (its client slot),
independent of processing order, which keeps batch generation parallelizable
across clients with results identical to sequential execution.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .design import ActionSet, Coreset
from .privacy import PrivacyParams, laplace_icdf, m1_scale, m2_scale
from .seeding import derive_entropy

NOISE_KINDS = ("gaussian", "uniform", "zero")
STRATEGIES = ("none", "constant", "large-positive", "sign-flip", "anti-optimal")
CORRUPT_STAGES = ("pre-privacy", "post-privacy")
MAX_MAGNITUDE = 100.0


@dataclass(frozen=True)
class BanditInstance:
    """Hidden parameter, action set, and noise model."""

    theta_star: np.ndarray
    actions: ActionSet
    noise: str = "gaussian"

    def __post_init__(self):
        theta = np.asarray(self.theta_star, dtype=float)
        if theta.ndim != 1 or theta.shape[0] != self.actions.dim:
            raise ValueError("theta_star must be a vector matching the action dimension")
        if np.linalg.norm(theta) > 1.0 + 1e-9:
            raise ValueError("theta_star must have norm at most 1")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}, got {self.noise!r}")
        object.__setattr__(self, "theta_star", theta)

    @property
    def mean_rewards(self) -> np.ndarray:
        return self.actions.vectors @ self.theta_star

    @property
    def optimal_index(self) -> int:
        return int(np.argmax(self.mean_rewards))

    def to_json_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "actions": self.actions.to_json_dict(),
            "noise": self.noise,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "BanditInstance":
        return cls(
            theta_star=np.asarray(data["theta_star"], dtype=float),
            actions=ActionSet.from_json_dict(data["actions"]),
            noise=data.get("noise", "gaussian"),
        )


def save_instance(instance: BanditInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance.to_json_dict(), fh)


def load_instance(path) -> BanditInstance:
    with open(path) as fh:
        return BanditInstance.from_json_dict(json.load(fh))


def generate_instance(
    dim: int,
    num_actions: int,
    seed: int,
    noise: str = "gaussian",
    theta_norm: float = 1.0,
) -> BanditInstance:
    """Random instance: uniform unit-sphere actions and a random theta*."""
    if not (0.0 <= theta_norm <= 1.0):
        raise ValueError("theta_norm must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(derive_entropy("instance", seed)))
    acts = rng.standard_normal((num_actions, dim))
    acts /= np.linalg.norm(acts, axis=1, keepdims=True)
    acts *= 1.0 - 1e-12
    theta = rng.standard_normal(dim)
    theta *= theta_norm / max(np.linalg.norm(theta), 1e-300)
    return BanditInstance(theta_star=theta, actions=ActionSet(acts), noise=noise)


@dataclass(frozen=True)
class AdversaryConfig:
    """Probabilistic corruption model.

    Each observation is intercepted independently with probability alpha.
    With strategy "none" the interception flag is still drawn but the value
    is left untouched, which keeps the mask observable in oracle records.
    """

    alpha: float = 0.0
    strategy: str = "none"
    magnitude: float = 50.0
    corrupt_stage: str = "pre-privacy"
    aggregate_corruption: bool = False

    def __post_init__(self):
        if not (0.0 <= self.alpha < 0.25):
            raise ValueError("alpha must lie in [0, 1/4)")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if not (0.0 <= self.magnitude <= MAX_MAGNITUDE):
            raise ValueError(f"magnitude must lie in [0, {MAX_MAGNITUDE}]")
        if self.corrupt_stage not in CORRUPT_STAGES:
            raise ValueError(f"corrupt_stage must be one of {CORRUPT_STAGES}")

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "strategy": self.strategy,
            "magnitude": self.magnitude,
            "corrupt_stage": self.corrupt_stage,
            "aggregate_corruption": self.aggregate_corruption,
        }


@dataclass(frozen=True)
class Observation:
    """Oracle-level record of one report.

    raw_reward is the clean value before corruption and privacy (for
    aggregating clients: the clean mean of the batch).  reported_reward is
    what the learner sees.  The corrupted flag and raw_reward never cross the
    learner API; see LearnerEnv.
    """

    action_index: int
    raw_reward: float
    corrupted: bool
    reported_reward: float


def instantaneous_regret(instance: BanditInstance, action_index: int) -> float:
    """Expected regret <a* - a, theta*> of one play of the given action."""
    means = instance.mean_rewards
    return float(means[instance.optimal_index] - means[action_index])


def _noise_draws(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, size)
    return np.zeros(size)


def _corrupt_values(
    original: np.ndarray,
    action_indices: np.ndarray,
    adversary: AdversaryConfig,
    worst_arm: int,
) -> np.ndarray:
    """Replacement values the adversary would report for each slot."""
    c = adversary.magnitude
    if adversary.strategy == "constant":
        return np.full_like(original, c)
    if adversary.strategy == "large-positive":
        return np.full_like(original, abs(c))
    if adversary.strategy == "sign-flip":
        return -original
    if adversary.strategy == "anti-optimal":
        return np.where(action_indices == worst_arm, abs(c), -abs(c))
    return original.copy()  # "none"


def _worst_arm_in(instance: BanditInstance, coreset: Coreset) -> int:
    means = instance.mean_rewards
    idxs = [i for i, _ in coreset.entries]
    sub = np.asarray([means[i] for i in idxs])
    return int(idxs[int(np.argmin(sub))])


def observe_batch_m1(
    instance: BanditInstance,
    coreset: Coreset,
    adversary: AdversaryConfig,
    privacy: PrivacyParams,
    rng: np.random.Generator,
) -> list[Observation]:
    """One report per scheduled play (per-reward clients)."""
    idxs = np.concatenate([
        np.full(count, idx, dtype=int) for idx, count in coreset.entries
    ]) if coreset.entries else np.empty(0, dtype=int)
    n = idxs.size
    means = instance.mean_rewards[idxs]
    clean = means + _noise_draws(instance.noise, n, rng)

    mask = np.zeros(n, dtype=bool)
    if adversary.alpha > 0.0:
        mask = rng.random(n) >= 1.0 - adversary.alpha
    worst = _worst_arm_in(instance, coreset) if coreset.entries else 0
    replacements = _corrupt_values(clean, idxs, adversary, worst)

    if privacy.enabled:
        noise_scale = m1_scale(privacy)
        priv = laplace_icdf(rng.random(n), noise_scale)
    else:
        priv = np.zeros(n)

    if adversary.corrupt_stage == "pre-privacy":
        pre = np.where(mask, replacements, clean)
        if privacy.clip is not None:
            pre = np.clip(pre, -privacy.clip, privacy.clip)
        reported = pre + priv if privacy.enabled else pre
    else:
        base = clean
        if privacy.clip is not None:
            base = np.clip(base, -privacy.clip, privacy.clip)
        released = base + priv if privacy.enabled else base
        post_replacements = _corrupt_values(released, idxs, adversary, worst)
        reported = np.where(mask, post_replacements, released)

    return [
        Observation(
            action_index=int(idxs[i]),
            raw_reward=float(clean[i]),
            corrupted=bool(mask[i]),
            reported_reward=float(reported[i]),
        )
        for i in range(n)
    ]


def observe_batch_m2(
    instance: BanditInstance,
    coreset: Coreset,
    adversary: AdversaryConfig,
    privacy: PrivacyParams,
    rng: np.random.Generator,
) -> list[Observation]:
    """One aggregated report per distinct action (aggregating clients).

    By default the adversary corrupts individual raw draws before they are
    averaged.  With aggregate_corruption=True (and always under the
    post-privacy stage, where raw draws are never released) a single
    interception decision applies to the whole aggregated report.
    """
    counts = np.asarray([c for _, c in coreset.entries], dtype=int)
    idxs = np.asarray([i for i, _ in coreset.entries], dtype=int)
    k = idxs.size
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if k else np.empty(0, dtype=int)
    play_idx = np.repeat(idxs, counts)

    means = instance.mean_rewards[play_idx]
    draws = means + _noise_draws(instance.noise, total, rng)
    clean_sums = np.add.reduceat(draws, starts) if k else np.empty(0)
    clean_means = clean_sums / counts

    aggregate_mode = adversary.aggregate_corruption or adversary.corrupt_stage == "post-privacy"
    worst = _worst_arm_in(instance, coreset) if k else 0

    if adversary.alpha > 0.0:
        if aggregate_mode:
            agg_mask = rng.random(k) >= 1.0 - adversary.alpha
            raw_mask = np.zeros(total, dtype=bool)
        else:
            raw_mask = rng.random(total) >= 1.0 - adversary.alpha
            agg_mask = np.add.reduceat(raw_mask.astype(int), starts) > 0 if k else np.empty(0, dtype=bool)
    else:
        raw_mask = np.zeros(total, dtype=bool)
        agg_mask = np.zeros(k, dtype=bool)

    if not aggregate_mode and adversary.alpha > 0.0 and adversary.strategy != "none":
        replaced = np.where(raw_mask, _corrupt_values(draws, play_idx, adversary, worst), draws)
        agg_values = np.add.reduceat(replaced, starts) / counts
    else:
        agg_values = clean_means.copy()

    if privacy.enabled:
        priv = laplace_icdf(rng.random(k), 1.0) * np.asarray(
            [m2_scale(privacy, int(c)) for c in counts]
        ) if k else np.empty(0)
    else:
        priv = np.zeros(k)

    if adversary.corrupt_stage == "pre-privacy":
        pre = agg_values
        if aggregate_mode and adversary.strategy != "none":
            pre = np.where(agg_mask, _corrupt_values(agg_values, idxs, adversary, worst), agg_values)
        if privacy.clip is not None:
            pre = np.clip(pre, -privacy.clip, privacy.clip)
        reported = pre + priv if privacy.enabled else pre
    else:
        base = clean_means
        if privacy.clip is not None:
            base = np.clip(base, -privacy.clip, privacy.clip)
        released = base + priv if privacy.enabled else base.copy()
        if adversary.strategy != "none":
            reported = np.where(agg_mask, _corrupt_values(released, idxs, adversary, worst), released)
        else:
            reported = released

    return [
        Observation(
            action_index=int(idxs[j]),
            raw_reward=float(clean_means[j]),
            corrupted=bool(agg_mask[j]),
            reported_reward=float(reported[j]),
        )
        for j in range(k)
    ]


class EnvOracle:
    """Test- and driver-side view: hidden parameter, gaps, and full records."""

    def __init__(self, instance: BanditInstance):
        self._instance = instance
        self.observations: list[list[Observation]] = []

    @property
    def theta_star(self) -> np.ndarray:
        return self._instance.theta_star

    @property
    def optimal_index(self) -> int:
        return self._instance.optimal_index

    def regret_of(self, action_index: int) -> float:
        return instantaneous_regret(self._instance, action_index)

    def record(self, batch: list[Observation]) -> None:
        self.observations.append(batch)


class LearnerEnv:
    """Capability-restricted handle given to the learner.

    The learner sees the action set and, per play_batch call, only
    (action_index, reported_reward) pairs.  Everything else (theta*,
    corruption flags, raw rewards) lives on the oracle object, which the
    experiment driver uses for regret accounting and which tests inspect.
    """

    def __init__(
        self,
        instance: BanditInstance,
        adversary: AdversaryConfig,
        seed: int | np.random.SeedSequence,
    ):
        self._instance = instance
        self._adversary = adversary
        if isinstance(seed, np.random.SeedSequence):
            self._seed_seq = seed
        else:
            self._seed_seq = np.random.SeedSequence(int(seed))
        self._oracle = EnvOracle(instance)

    @property
    def actions(self) -> ActionSet:
        return self._instance.actions

    @property
    def oracle(self) -> EnvOracle:
        return self._oracle

    def _batch_rng(self, round_index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self._seed_seq.entropy,
            spawn_key=tuple(self._seed_seq.spawn_key) + (int(round_index),),
        )
        return np.random.default_rng(ss)

    def play_batch(
        self,
        coreset: Coreset,
        round_index: int,
        privacy: PrivacyParams,
    ) -> list[tuple[int, float]]:
        """Play a coreset; returns learner-visible (action, reward) pairs."""
        rng = self._batch_rng(round_index)
        if coreset.model == "M2":
            batch = observe_batch_m2(self._instance, coreset, self._adversary, privacy, rng)
        else:
            batch = observe_batch_m1(self._instance, coreset, self._adversary, privacy, rng)
        self._oracle.record(batch)
        return [(o.action_index, o.reported_reward) for o in batch]
