"""Seeded synthetic environments for every benchmark family.

An :class:`EnvSpec` describes one synthetic protocol; :func:`gen_env` turns
it into an immutable :class:`Environment` (users, clusters, arm pool,
preference perturbations, corruption plan, drift path).  Per-trial
randomness -- user arrivals, candidate arm draws, reward noise, preference
bits, the corruption budget tally -- lives on :class:`TrialStream` objects
created by :meth:`Environment.start_trial`, so trials are independent and
can run on separate threads without sharing mutable state.

Environment kinds:

``cbmum``
    Clustered users, unit-norm Gaussian preference/arm vectors, and a fixed
    per-(user, arm) reward perturbation drawn uniformly from
    ``[-misspec_level, +misspec_level]``.
``locud``
    Clustered users with the "d-1 Gaussian coordinates plus a constant-1
    coordinate, all divided by sqrt(2)" generation, plus adversarial reward
    flips for a chosen subset of users during the first ``flip_k`` rounds.
``conversational``
    Linear rewards plus a bipartite arm/key-term graph; key-term feedback
    shares the arm noise scale.
``nonstat2arm``
    Single user, two fixed arms (1,0) and (0,1), sinusoidally drifting
    parameter and centered-Bernoulli noise with decaying variance.
``dueling``
    Clustered users; each round presents candidate arms and feedback is a
    preference bit between two chosen arms (Bradley-Terry by default).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .rng import generator, trial_generator

__all__ = [
    "EnvSpec",
    "CorruptionSchedule",
    "DriftSchedule",
    "FeedbackEvent",
    "Environment",
    "TrialStream",
    "gen_env",
    "svd_ingest",
    "load_feedback_matrix",
]

KINDS = ("cbmum", "locud", "conversational", "nonstat2arm", "dueling")


@dataclass
class CorruptionSchedule:
    """Which users get corrupted rewards, how, and the running spend.

    ``budget_C`` tallies the total applied corruption magnitude
    ``sum_t |c_t|``; each trial owns its own copy of the schedule so the
    tally never mixes across trials.
    """

    corrupted_users: frozenset = frozenset()
    mode: str = "none"  # "none" | "flip_first_k"
    flip_k: int = 0
    budget_C: float = 0.0


@dataclass
class DriftSchedule:
    """Non-stationarity plan for the two-armed drifting environment.

    ``scale`` is the frequency multiplier of the sinusoidal parameter path
    (larger means faster drift).  ``tv_budget`` is the continuous-path
    total-variation bound of that sinusoid, computed by numerical
    integration at generation time; the realized step sum
    ``sum_k ||theta_{k+1} - theta_k||`` never exceeds it.
    """

    kind: str = "sinusoid2d"
    scale: float = 1.0
    variance_rule: str = "bernoulli_decay"
    noise_bound: float = 1.0
    tv_budget: float = 0.0


@dataclass(frozen=True)
class FeedbackEvent:
    """One observed interaction, with everything regret accounting needs.

    ``value`` is the scalar reward, or the preference bit for dueling
    feedback.  ``chosen_value`` is the noiseless expected value of what was
    chosen (sum over both arms for a duel); ``oracle_best_value`` is the
    same quantity for the best possible choice among ``presented``.
    ``sigma`` carries the post-pull noise standard deviation where the
    protocol reveals it (the drifting two-armed environment).
    """

    t: int
    user: int
    presented: tuple
    chosen: tuple
    value: float
    oracle_best_value: float
    chosen_value: float
    sigma: float | None = None


@dataclass(frozen=True)
class EnvSpec:
    """Declarative description of one synthetic environment.

    Only ``kind``, ``dim`` and ``horizon`` are always required; the other
    fields have per-kind defaults and are validated by :func:`gen_env`.
    """

    kind: str
    dim: int
    horizon: int
    num_users: int = 1
    num_clusters: int = 1
    pool_size: int = 2
    per_round_arms: int = 2
    misspec_level: float = 0.0
    noise_scale: float = 0.1
    gap_floor: float = 0.5
    corruption_mode: str = "none"
    corrupted_frac: float = 0.0
    flip_k: int | None = None  # None -> 2% of horizon when corruption is on
    drift_scale: float = 1.0
    conversation_budget: str | None = None
    num_keys: int = 0
    duel_mode: str = "btl"  # "btl" | "threshold"
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.num_clusters > self.num_users:
            raise ConfigError(
                f"num_clusters={self.num_clusters} exceeds num_users={self.num_users}"
            )
        if self.per_round_arms > self.pool_size:
            raise ConfigError(
                f"per_round_arms={self.per_round_arms} exceeds pool_size={self.pool_size}"
            )
        if self.misspec_level < 0:
            raise ConfigError("misspec_level must be nonnegative")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be nonnegative")
        if self.corruption_mode not in ("none", "flip_first_k"):
            raise ConfigError(f"unknown corruption_mode {self.corruption_mode!r}")
        if not 0.0 <= self.corrupted_frac <= 1.0:
            raise ConfigError("corrupted_frac must lie in [0, 1]")
        if self.kind == "nonstat2arm" and self.dim != 2:
            raise ConfigError("nonstat2arm is a two-dimensional two-armed protocol; set dim=2")
        if self.kind == "locud" and self.dim < 2:
            raise ConfigError("locud needs dim >= 2 (d-1 random coordinates plus a constant one)")
        if self.kind == "conversational" and self.num_keys < 1:
            raise ConfigError("conversational environments need num_keys >= 1")
        if self.duel_mode not in ("btl", "threshold"):
            raise ConfigError(f"unknown duel_mode {self.duel_mode!r}")


def _unit_gaussian(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _constant_coord(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """d-1 normalized Gaussian coordinates, a constant-1 coordinate, all / sqrt(2)."""
    v = np.empty((n, d))
    v[:, : d - 1] = _unit_gaussian(rng, n, d - 1)
    v[:, d - 1] = 1.0
    return v / np.sqrt(2.0)


def _separated_centers(rng, m: int, d: int, gap: float, draw) -> tuple[np.ndarray, float]:
    """Draw m vectors, resampling any that sit closer than ``gap`` to a kept one."""
    centers = np.empty((m, d))
    for i in range(m):
        for attempt in range(1000):
            c = draw(rng, 1, d)[0]
            if i == 0 or np.min(np.linalg.norm(centers[:i] - c, axis=1)) >= gap:
                centers[i] = c
                break
        else:
            raise ConfigError(
                f"could not place {m} cluster centers with pairwise gap >= {gap} in dim {d}"
            )
    if m > 1:
        dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        gamma = float(np.min(dists[np.triu_indices(m, k=1)]))
    else:
        gamma = np.inf
    return centers, gamma


def _sinusoid_path(scale: float, horizon: int) -> np.ndarray:
    """theta_k for k = 1..horizon (row 0 unused), drifting in antiphase."""
    k = np.arange(horizon + 1, dtype=float)
    phase = 5.0 * scale * np.pi * k / horizon
    path = np.empty((horizon + 1, 2))
    path[:, 0] = 0.5 + 0.3 * np.sin(phase)
    path[:, 1] = 0.5 + 0.3 * np.sin(np.pi + phase)
    return path


def _sinusoid_tv_bound(scale: float, horizon: int) -> float:
    """Total-variation bound for the sinusoid path, by chordal refinement.

    Summing chord lengths over a 16x-refined grid dominates the integer
    step sum (triangle inequality: every unit step is a sub-path of the
    refined chain) while staying below the true arc length.
    """
    if horizon < 2:
        return 0.0
    grid = np.linspace(1.0, float(horizon), 16 * (horizon - 1) + 1)
    vals = 0.3 * np.sin(5.0 * scale * np.pi * grid / horizon)
    # both coordinates move in exact antiphase: step norm is sqrt(2)*|delta|
    return float(np.sqrt(2.0) * np.abs(np.diff(vals)).sum()) + 1e-9


class Environment:
    """Immutable realized environment; see :func:`gen_env`."""

    def __init__(self, spec: EnvSpec):
        spec.validate()
        self.spec = spec
        rng = generator(spec.seed)
        d, u, m = spec.dim, spec.num_users, spec.num_clusters

        if spec.kind == "nonstat2arm":
            self.arms = np.array([[1.0, 0.0], [0.0, 1.0]])
            self.users = np.zeros((1, 2))
            self.cluster_of = np.zeros(1, dtype=int)
            self.gamma = np.inf
            self.eps = None
            self.drift = DriftSchedule(
                scale=spec.drift_scale,
                noise_bound=1.0,
                tv_budget=_sinusoid_tv_bound(spec.drift_scale, spec.horizon),
            )
            self.theta_path = _sinusoid_path(spec.drift_scale, spec.horizon)
            self.corruption = CorruptionSchedule()
            self.key_weights = None
            self.key_features = None
            return

        draw = _constant_coord if spec.kind == "locud" else _unit_gaussian
        centers, self.gamma = _separated_centers(rng, m, d, spec.gap_floor, draw)
        self.cluster_of = np.arange(u) % m  # balanced round-robin assignment
        self.users = centers[self.cluster_of]
        self.arms = draw(rng, spec.pool_size, d)

        # fixed per-(user, arm) reward perturbation; exactly zero when off
        if spec.misspec_level > 0:
            self.eps = rng.uniform(-1.0, 1.0, size=(u, spec.pool_size)) * spec.misspec_level
        else:
            self.eps = None

        if spec.corruption_mode != "none" and spec.corrupted_frac > 0:
            n_bad = int(np.ceil(spec.corrupted_frac * u))
            bad = rng.choice(u, size=n_bad, replace=False)
            flip_k = spec.flip_k if spec.flip_k is not None else max(1, int(0.02 * spec.horizon))
            self.corruption = CorruptionSchedule(
                corrupted_users=frozenset(int(i) for i in bad),
                mode=spec.corruption_mode,
                flip_k=flip_k,
            )
        else:
            self.corruption = CorruptionSchedule()

        self.drift = None
        self.theta_path = None

        if spec.kind == "conversational":
            self.key_weights, self.key_features = self._gen_key_terms(rng)
        else:
            self.key_weights = None
            self.key_features = None

    def _gen_key_terms(self, rng: np.random.Generator):
        """Bipartite arm/key weights: each key links 1-10 arms, each arm
        spreads weight 1/n_a over its keys; stray arms get one key."""
        n_arms, n_keys = self.spec.pool_size, self.spec.num_keys
        linked = np.zeros((n_arms, n_keys), dtype=bool)
        for k in range(n_keys):
            n_k = int(rng.integers(1, 11))
            linked[rng.choice(n_arms, size=min(n_k, n_arms), replace=False), k] = True
        stray = np.flatnonzero(~linked.any(axis=1))
        if stray.size:
            linked[stray, rng.integers(0, n_keys, size=stray.size)] = True
        per_arm = linked.sum(axis=1)
        weights = linked / per_arm[:, None]
        col = weights.sum(axis=0)
        key_features = (weights / col).T @ self.arms
        return weights, key_features

    def start_trial(self, trial: int) -> "TrialStream":
        """Independent per-trial stream keyed on (spec.seed, trial)."""
        return TrialStream(self, trial_generator(self.spec.seed, trial), replace(self.corruption))

    # noiseless expected reward of (user, arm), perturbation included
    def true_mean(self, user: int, arm: int) -> float:
        v = float(self.arms[arm] @ self.users[user])
        if self.eps is not None:
            v += self.eps[user, arm]
        return v


class TrialStream:
    """One trial's random stream plus its corruption spend tally."""

    def __init__(self, env: Environment, rng: np.random.Generator, corruption: CorruptionSchedule):
        self.env = env
        self.rng = rng
        self.corruption = corruption

    def sample_round(self, t: int) -> tuple[int, np.ndarray]:
        """Uniform user arrival and the round's candidate arm ids."""
        env = self.env
        if not 1 <= t <= env.spec.horizon:
            raise ValueError(f"round {t} outside horizon 1..{env.spec.horizon}")
        if env.spec.kind == "nonstat2arm":
            return 0, np.array([0, 1])
        user = int(self.rng.integers(env.spec.num_users))
        arms = self.rng.choice(env.spec.pool_size, size=env.spec.per_round_arms, replace=False)
        return user, arms

    def feedback(self, t: int, user: int, presented: Sequence[int], arm: int) -> FeedbackEvent:
        """Scalar reward for pulling ``arm``; tallies corruption spend."""
        env = self.env
        if env.spec.kind == "dueling":
            raise ValueError("dueling environments produce preference bits; use duel_feedback")

        if env.spec.kind == "nonstat2arm":
            theta = env.theta_path[t]
            means = env.arms @ theta
            q = 0.5 / t
            noise = float(self.rng.random() < q) - q
            sigma = float(np.sqrt(q * (1.0 - q)))
            return FeedbackEvent(
                t=t, user=0, presented=tuple(int(a) for a in presented), chosen=(int(arm),),
                value=float(means[arm]) + noise,
                oracle_best_value=float(means[list(presented)].max()),
                chosen_value=float(means[arm]),
                sigma=sigma,
            )

        mean = env.true_mean(user, arm)
        value = mean
        cor = self.corruption
        if (
            cor.mode == "flip_first_k"
            and t <= cor.flip_k
            and user in cor.corrupted_users
        ):
            c = -2.0 * float(env.arms[arm] @ env.users[user])
            value = mean + c
            cor.budget_C += abs(c)
        value += self.rng.normal() * env.spec.noise_scale
        best = max(env.true_mean(user, int(a)) for a in presented)
        return FeedbackEvent(
            t=t, user=int(user), presented=tuple(int(a) for a in presented),
            chosen=(int(arm),), value=float(value),
            oracle_best_value=float(best), chosen_value=float(mean),
        )

    def key_feedback(self, t: int, user: int, key: int) -> float:
        """Noisy key-term reward: feature inner product plus arm-scale noise."""
        env = self.env
        if env.key_features is None:
            raise ValueError("environment has no key terms")
        mean = float(env.key_features[key] @ env.users[user])
        return mean + self.rng.normal() * env.spec.noise_scale

    def duel_feedback(
        self, t: int, user: int, presented: Sequence[int], arm1: int, arm2: int
    ) -> FeedbackEvent:
        """Preference bit: 1 means the first arm won the comparison."""
        env = self.env
        f1 = float(env.arms[arm1] @ env.users[user])
        f2 = float(env.arms[arm2] @ env.users[user])
        if env.spec.duel_mode == "threshold":
            bit = 1 if f1 > f2 else 0 if f2 > f1 else int(self.rng.random() < 0.5)
        else:
            p = 1.0 / (1.0 + np.exp(-(f1 - f2)))
            bit = int(self.rng.random() < p)
        fs = env.arms[list(presented)] @ env.users[user]
        return FeedbackEvent(
            t=t, user=int(user), presented=tuple(int(a) for a in presented),
            chosen=(int(arm1), int(arm2)), value=float(bit),
            oracle_best_value=2.0 * float(fs.max()), chosen_value=f1 + f2,
        )


def gen_env(spec: EnvSpec) -> Environment:
    """Realize a spec into an immutable environment (deterministic in seed)."""
    return Environment(spec)


def svd_ingest(feedback_matrix, d: int):
    """Factor a binary feedback matrix into user and arm vectors.

    Truncated SVD keeps the top ``d`` singular values; the sqrt of each is
    split symmetrically between the user side (rows of U sqrt(S)) and the
    arm side (rows of V sqrt(S)), and rows are then L2-normalized.  If the
    matrix rank falls short of ``d`` the missing coordinates are
    zero-padded and a warning is emitted.
    """
    r = np.asarray(feedback_matrix, dtype=float)
    if r.ndim != 2:
        raise ConfigError(f"feedback matrix must be 2-D, got shape {r.shape}")
    if d > min(r.shape):
        raise ConfigError(f"d={d} exceeds min(matrix shape)={min(r.shape)}")
    u_full, s_full, vt_full = np.linalg.svd(r, full_matrices=False)
    tol = max(r.shape) * np.finfo(float).eps * (s_full[0] if s_full.size else 0.0)
    rank = int(np.sum(s_full > tol))
    keep = min(d, rank)
    if rank < d:
        warnings.warn(
            f"feedback matrix rank {rank} is below requested d={d}; zero-padding",
            stacklevel=2,
        )
    root = np.sqrt(s_full[:keep])
    users = np.zeros((r.shape[0], d))
    arms = np.zeros((r.shape[1], d))
    users[:, :keep] = u_full[:, :keep] * root
    arms[:, :keep] = vt_full[:keep].T * root
    for block in (users, arms):
        norms = np.linalg.norm(block, axis=1, keepdims=True)
        np.divide(block, norms, out=block, where=norms > 0)
    return users, arms


def load_feedback_matrix(path) -> np.ndarray:
    """Read a header-free comma-delimited CSV of 0/1 feedback values."""
    m = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    if not np.isin(m, (0.0, 1.0)).all():
        raise ConfigError(f"{path}: feedback matrix entries must be 0 or 1")
    return m
