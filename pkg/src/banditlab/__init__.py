"""banditlab: linear bandit algorithms and seeded synthetic environments.

Five benchmark families are covered, each with the matching specialised
policies plus shared baselines:

- clustered stochastic linear bandits with per-arm preference perturbations,
- clustered bandits under adversarial reward corruption, with corrupted-user
  detection,
- conversational bandits that may query key-term feedback on a budget,
- non-stationary two-armed bandits with heteroscedastic noise,
- clustered dueling bandits with Bradley-Terry comparison feedback.

``banditlab.harness.run_experiment`` runs seeded multi-trial experiments and
the ``banditlab`` console script drives everything from TOML config files.
"""

__version__ = "0.1.0"

from .envs import EnvSpec, gen_env
from .errors import BanditLabError, ConfigError, ConvergenceError, SingularSystemError
from .harness import ExperimentConfig, compute_auc, compute_regret, run_experiment
from .linalg import RidgeState, min_eigenvalue

__all__ = [
    "BanditLabError",
    "ConfigError",
    "ConvergenceError",
    "SingularSystemError",
    "EnvSpec",
    "gen_env",
    "ExperimentConfig",
    "compute_auc",
    "compute_regret",
    "run_experiment",
    "RidgeState",
    "min_eigenvalue",
    "__version__",
]
