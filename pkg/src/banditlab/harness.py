"""Config-driven experiment orchestration.

A TOML manifest names an environment, a policy with parameters, and run
settings; the runner executes seeded trials (optionally in parallel),
aggregates the regret series, and emits CSV files and a plot.  Trial
randomness is keyed on (base seed, trial index) through counter-based
generators, so results are byte-identical no matter how many worker
threads execute the trials.

Manifest grammar (TOML)::

    label = "experiment name"        # optional, defaults to policy name

    [env]                            # fields of envs.EnvSpec
    kind = "cbmum"
    dim = 20
    horizon = 50000
    # ... any other EnvSpec field

    [policy]
    name = "rclumb"                  # registry key (Policy.name)

    [policy.params]                  # keyword arguments of the policy
    beta = 0.4

    [run]
    trials = 10
    seed = 3                         # base seed
    out = "results"                  # output directory (optional)
    metrics = ["regret"]             # "regret" and/or "detection"
"""

from __future__ import annotations

import dataclasses
import inspect
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines, cbmum, conbandit, dueling, locud, nonstat
from .base import Policy
from .envs import Environment, EnvSpec, gen_env
from .errors import ConfigError
from .rng import trial_generator

__all__ = [
    "POLICIES",
    "ExperimentConfig",
    "TrialResult",
    "AggregateResult",
    "compute_regret",
    "compute_auc",
    "run_trial",
    "run_experiment",
    "emit_csv",
    "emit_plot",
    "emit",
    "load_config",
]

# Distinguishes policy streams from environment streams sharing a seed.
_POLICY_STREAM = 0x9E3779B97F4A7C15


def _collect_policies() -> dict:
    registry = {}
    for mod in (baselines, cbmum, conbandit, dueling, locud, nonstat):
        for obj in vars(mod).values():
            if isinstance(obj, type) and issubclass(obj, Policy) and getattr(obj, "name", ""):
                registry[obj.name] = obj
    return registry


POLICIES = _collect_policies()


def _accepted_params(cls: type) -> set:
    """Keyword parameters a policy constructor accepts, following ``**kwargs`` up the MRO."""
    accepted: set = set()
    for klass in cls.__mro__:
        init = klass.__dict__.get("__init__")
        if init is None:
            continue
        params = inspect.signature(init).parameters.values()
        accepted |= {
            p.name
            for p in params
            if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)
        }
        if not any(p.kind == p.VAR_KEYWORD for p in params):
            break
    return accepted - {"self", "env", "rng"}


@dataclass
class ExperimentConfig:
    """One experiment: an environment, a policy, and run settings."""

    env: EnvSpec
    policy: str
    params: dict = field(default_factory=dict)
    trials: int = 1
    base_seed: int = 0
    metrics: tuple = ("regret",)
    out_dir: str | None = None
    label: str | None = None

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        cls = POLICIES.get(self.policy)
        if cls is None:
            raise ConfigError(f"unknown policy {self.policy!r}; known: {sorted(POLICIES)}")
        if self.env.kind not in cls.kinds:
            raise ConfigError(
                f"policy {self.policy!r} supports environment kinds {cls.kinds}, "
                f"not {self.env.kind!r}"
            )
        accepted = _accepted_params(cls)
        unknown = sorted(set(self.params) - accepted)
        if unknown:
            raise ConfigError(
                f"policy {self.policy!r} has no parameters {unknown}; accepted: {sorted(accepted)}"
            )
        for metric in self.metrics:
            if metric not in ("regret", "detection"):
                raise ConfigError(f"unknown metric {metric!r}")
        self.env.validate()

    @property
    def name(self) -> str:
        return self.label or self.policy


def load_config(path: str) -> ExperimentConfig:
    """Parse a TOML manifest (grammar in the module docstring)."""
    try:
        import tomllib
    except ImportError:  # Python 3.10
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    env_table = doc.get("env")
    if not isinstance(env_table, dict):
        raise ConfigError(f"{path}: missing [env] table")
    try:
        spec = EnvSpec(**env_table)
    except TypeError as exc:
        raise ConfigError(f"{path}: bad [env] field: {exc}") from exc

    policy_table = doc.get("policy")
    if not isinstance(policy_table, dict) or "name" not in policy_table:
        raise ConfigError(f"{path}: missing [policy] table with a 'name'")

    run = doc.get("run", {})
    metrics = run.get("metrics", ["regret"])
    if isinstance(metrics, str):
        metrics = [metrics]
    return ExperimentConfig(
        env=spec,
        policy=str(policy_table["name"]),
        params=dict(policy_table.get("params", {})),
        trials=int(run.get("trials", 1)),
        base_seed=int(run.get("seed", spec.seed)),
        metrics=tuple(metrics),
        out_dir=run.get("out"),
        label=doc.get("label"),
    )


@dataclass
class TrialResult:
    """One trial's regret accounting plus whatever the policy reported."""

    instantaneous: np.ndarray
    cumulative: np.ndarray
    detection: list | None = None
    wall_clock: float = 0.0


@dataclass
class AggregateResult:
    """Mean regret curve across trials with per-round standard errors."""

    config: ExperimentConfig
    rounds: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    finals: np.ndarray
    trials: list


def compute_regret(event, env: Environment, kind: str | None = None) -> float:
    """Instantaneous regret of one feedback event.

    The environment bakes its chapter's oracle into the event:
    perturbation terms are inside both values for the misspecified
    clustered setting, and dueling events carry the two-arm quantities
    2 max f versus f(x1)+f(x2).
    """
    if kind is not None and kind != env.spec.kind:
        raise ConfigError(f"regret kind {kind!r} does not match environment {env.spec.kind!r}")
    return float(event.oracle_best_value - event.chosen_value)


def compute_auc(scores, labels) -> float:
    """Area under the ROC curve by Mann-Whitney pair counting; ties 0.5."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """Run one seeded trial: fresh environment, fresh policy, full horizon."""
    started = time.perf_counter()
    env = gen_env(config.env)
    cls = POLICIES[config.policy]
    rng = trial_generator(config.base_seed ^ _POLICY_STREAM, trial)
    policy = cls(env, rng, **config.params)
    stream = env.start_trial(trial)

    horizon = env.spec.horizon
    talks = env.spec.kind == "conversational" and hasattr(policy, "conversations")
    duels = env.spec.kind == "dueling"
    inst = np.zeros(horizon)
    for t in range(1, horizon + 1):
        user, arms = stream.sample_round(t)
        if talks:
            for _ in range(policy.conversations(t, user)):
                key = policy.select_key(t, user)
                policy.observe_key(t, user, key, stream.key_feedback(t, user, key))
        if duels:
            first, second = policy.select_pair(t, user, arms)
            event = stream.duel_feedback(t, user, arms, first, second)
        else:
            event = stream.feedback(t, user, arms, policy.select(t, user, arms))
        policy.observe(event)
        inst[t - 1] = compute_regret(event, env)

    detection = list(getattr(policy, "reports", [])) or None
    return TrialResult(inst, np.cumsum(inst), detection, time.perf_counter() - started)


def _worker_count(trials: int) -> int:
    cap = os.environ.get("BANDITLAB_THREADS")
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError as exc:
            raise ConfigError(f"BANDITLAB_THREADS must be an integer, got {cap!r}") from exc
        if cap < 1:
            raise ConfigError(f"BANDITLAB_THREADS must be >= 1, got {cap}")
        return min(trials, cap)
    return min(trials, os.cpu_count() or 1)


def run_experiment(config: ExperimentConfig) -> AggregateResult:
    """Run all trials and aggregate.

    Trials are independent and may run on worker threads; results are
    always reduced in trial order, so the aggregate is identical for any
    thread count.  ``stderr`` is the cross-trial standard deviation
    divided by sqrt(trials).
    """
    config.validate()
    workers = _worker_count(config.trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda k: run_trial(config, k), range(config.trials)))
    else:
        results = [run_trial(config, k) for k in range(config.trials)]

    stacked = np.vstack([r.cumulative for r in results])
    mean = stacked.mean(axis=0)
    if len(results) > 1:
        stderr = stacked.std(axis=0, ddof=1) / np.sqrt(len(results))
    else:
        stderr = np.zeros_like(mean)
    return AggregateResult(
        config=config,
        rounds=np.arange(1, config.env.horizon + 1),
        mean=mean,
        stderr=stderr,
        finals=stacked[:, -1].copy(),
        trials=results,
    )


def emit_csv(path: str, result: AggregateResult, stride: int = 1) -> str:
    """Write the aggregate curve as ``round,mean,stderr`` rows."""
    idx = np.arange(0, result.rounds.size, stride)
    with open(path, "w", newline="") as fh:
        fh.write("round,mean,stderr\n")
        for i in idx:
            fh.write(f"{int(result.rounds[i])},{float(result.mean[i])!r},{float(result.stderr[i])!r}\n")
    return path


def emit_detection_csv(path: str, trial_result: TrialResult) -> str:
    """Write one trial's detection sweeps as ``t,user,score,flagged,label``."""
    with open(path, "w", newline="") as fh:
        fh.write("t,user,score,flagged,label\n")
        for report in trial_result.detection or []:
            for row in report.rows():
                fh.write(row + "\n")
    return path


def emit_plot(path: str, result: AggregateResult) -> str:
    """Static plot of the mean regret curve with a stderr band."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(result.rounds, result.mean, label=result.config.name)
    ax.fill_between(
        result.rounds,
        result.mean - result.stderr,
        result.mean + result.stderr,
        alpha=0.25,
        linewidth=0,
    )
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative regret")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit(result: AggregateResult, out_dir: str) -> list:
    """Write every requested artifact into ``out_dir``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    base = result.config.name
    paths = []
    if "regret" in result.config.metrics:
        paths.append(emit_csv(os.path.join(out_dir, f"{base}_regret.csv"), result))
        paths.append(emit_plot(os.path.join(out_dir, f"{base}_regret.png"), result))
    if "detection" in result.config.metrics:
        for k, trial in enumerate(result.trials):
            if trial.detection:
                paths.append(
                    emit_detection_csv(os.path.join(out_dir, f"{base}_detection_trial{k}.csv"), trial)
                )
    return paths


def override(config: ExperimentConfig, *, trials=None, seed=None, out=None, policy=None) -> ExperimentConfig:
    """CLI-flag overrides on top of a parsed manifest."""
    changes = {}
    if trials is not None:
        changes["trials"] = trials
    if seed is not None:
        changes["base_seed"] = seed
    if out is not None:
        changes["out_dir"] = out
    if policy is not None:
        changes["policy"] = policy
        changes["params"] = {}
    return dataclasses.replace(config, **changes)
