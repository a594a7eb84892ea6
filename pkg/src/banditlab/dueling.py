"""Clustered dueling bandits over preference bits.

Feedback here is a single comparison bit per round, so every estimate is a
regularized logistic MLE over score *differences* rather than a ridge
solve.  The clustering machinery mirrors the scalar policies — complete
user graph, edge deletion on estimate gaps, connected components pooled
for selection — but both the gap threshold and the exploration bonus come
from the logistic analysis, where the flat tail of the link (curvature
floor kappa) inflates every constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .base import Policy, argmax_lowest_id
from .envs import Environment
from .errors import ConfigError, ConvergenceError

__all__ = [
    "curvature_floor",
    "LogisticMleProblem",
    "logistic_mle",
    "ColdbPolicy",
    "LdbIndPolicy",
]


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def curvature_floor(score_bound: float = 1.0) -> float:
    """Smallest slope of the logistic link over reachable differences.

    Per-arm scores are bounded by ``score_bound``, so a comparison feeds
    the link arguments in ``[-2b, 2b]`` and the analysis needs the slope
    over twice that interval (estimates roam a ball around the truth).
    The slope mu'(a) = mu(a)(1-mu(a)) is smallest at the edge ``4b``;
    the default bound 1 gives ~0.01766.
    """
    if score_bound <= 0:
        raise ConfigError(f"score bound must be positive, got {score_bound}")
    edge = _sigmoid(4.0 * float(score_bound))
    return float(edge * (1.0 - edge))


@dataclass
class LogisticMleProblem:
    """Preference observations plus the constants of the logistic model.

    ``diffs``/``bits`` hold one difference vector phi(x1)-phi(x2) and the
    recorded winner bit per comparison; difference norms stay <= 2 for
    unit arms.  ``lam`` > 0 makes the objective strongly convex, so the
    minimizer is unique.  ``kappa`` (curvature floor) and ``lip`` (link
    slope bound, 1/4 for the logistic) ride along for the confidence
    machinery.
    """

    dim: int
    lam: float = 1.0
    kappa: float = curvature_floor(1.0)
    lip: float = 0.25
    diffs: list = field(default_factory=list)
    bits: list = field(default_factory=list)

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"MLE regularizer must be positive, got {self.lam}")
        self._stacked = None

    def add(self, diff, bit) -> None:
        self.diffs.append(np.asarray(diff, dtype=float))
        self.bits.append(int(bit))
        self._stacked = None

    def design(self):
        """Stacked (n, d) difference matrix and (n,) bit vector (cached)."""
        if self._stacked is None or len(self._stacked[1]) != len(self.bits):
            if self.diffs:
                self._stacked = (np.asarray(self.diffs), np.asarray(self.bits, dtype=float))
            else:
                self._stacked = (np.zeros((0, self.dim)), np.zeros(0))
        return self._stacked

    def objective(self, theta) -> float:
        z, y = self.design()
        a = z @ theta
        nll = np.logaddexp(0.0, -a) @ y + np.logaddexp(0.0, a) @ (1.0 - y)
        return float(nll + 0.5 * self.lam * theta @ theta)

    def gradient(self, theta) -> np.ndarray:
        z, y = self.design()
        return (_sigmoid(z @ theta) - y) @ z + self.lam * theta

    def hessian(self, theta) -> np.ndarray:
        z, y = self.design()
        p = _sigmoid(z @ theta)
        return (z * (p * (1.0 - p))[:, None]).T @ z + self.lam * np.eye(self.dim)


def logistic_mle(problem: LogisticMleProblem, warm_start=None) -> np.ndarray:
    """Minimizer of the regularized negative log-likelihood.

    Damped Newton with an Armijo backtracking line search; if a Newton
    step cannot make progress the iteration falls back to a plain
    gradient step.  Converged means gradient norm <= 1e-8.
    """
    theta = np.zeros(problem.dim) if warm_start is None else np.array(warm_start, dtype=float)
    if not problem.diffs:
        return np.zeros(problem.dim)
    grad_norm = np.inf
    for _ in range(500):
        g = problem.gradient(theta)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= 1e-8:
            return theta
        step = np.linalg.solve(problem.hessian(theta), g)
        slope = float(g @ step)
        if slope <= 1e-10:
            # inside the quadratic-convergence zone the objective moves by
            # less than float resolution, so line searching is meaningless
            theta = theta - step
            continue
        f0 = problem.objective(theta)
        size = 1.0
        for _ in range(40):
            cand = theta - size * step
            if problem.objective(cand) <= f0 - 1e-4 * size * slope:
                theta = cand
                break
            size *= 0.5
        else:
            # Newton stalled (numerically flat curvature); descend along g.
            size = 1.0 / (problem.lam + 0.25 * sum(z @ z for z in problem.diffs))
            theta = theta - size * g
    raise ConvergenceError(
        f"logistic MLE stalled after 500 iterations (n={len(problem.diffs)})",
        gradient_norm=grad_norm,
    )


class ColdbPolicy(Policy):
    """Clustered linear dueling bandits (preference-bit feedback).

    One logistic MLE per user maintains the graph; one MLE per connected
    component drives selection.  The first arm exploits the cluster
    estimate, the second maximizes estimate-plus-uncertainty measured in
    the cluster's aggregated information matrix, so comparisons
    concentrate where the preference model is least certain.

    ``lam_x`` scales the deletion threshold f(T) ~ 1/sqrt(lam_x T); it
    stands in for the smallest eigenvalue of the difference covariance,
    which is unobservable, so it must be supplied.  ``beta`` overrides
    the theoretical bonus coefficient beta_t/kappa (which is far too
    conservative on small horizons); ``None`` keeps the analysis value.
    """

    name = "coldb"
    kinds = ("dueling",)

    def __init__(self, env: Environment, rng=None, *, lam=1.0, delta=0.1,
                 lam_x=None, beta=None, score_bound=1.0, refit_every=1):
        super().__init__(env, rng)
        if lam_x is None:
            raise ConfigError("coldb needs lam_x (difference-covariance scale in f)")
        u, d = env.spec.num_users, env.spec.dim
        self.dim = d
        self.num_users = u
        self.lam = float(lam)
        self.delta = float(delta)
        self.lam_x = float(lam_x)
        self.kappa = curvature_floor(score_bound)
        self.beta = None if beta is None else float(beta)
        self.refit_every = int(refit_every)

        self.problems = [LogisticMleProblem(d, self.lam, self.kappa) for _ in range(u)]
        self.theta = np.zeros((u, d))
        self.counts = np.zeros(u, dtype=int)
        # per-user scatter of difference outer products (no regularizer)
        self.scatter = np.zeros((u, d * d))

        self.graph = nx.complete_graph(u)
        self._comp_of = np.zeros(u, dtype=int)
        self._members = [np.arange(u)]
        self._cluster_cache = {}  # comp index -> (theta_bar, fitted_round)
        self._round = 0

    # -- clustering plumbing ------------------------------------------------

    def _recompute_components(self):
        self._members = []
        for idx, comp in enumerate(nx.connected_components(self.graph)):
            members = np.array(sorted(comp))
            self._members.append(members)
            self._comp_of[members] = idx
        self._cluster_cache = {}

    def partition(self) -> list:
        return [sorted(c) for c in nx.connected_components(self.graph)]

    def _cluster_theta(self, comp: int) -> np.ndarray:
        cached = self._cluster_cache.get(comp)
        if cached is not None and self._round - cached[1] < self.refit_every:
            return cached[0]
        members = self._members[comp]
        pooled = LogisticMleProblem(self.dim, self.lam, self.kappa)
        for i in members:
            pooled.diffs.extend(self.problems[i].diffs)
            pooled.bits.extend(self.problems[i].bits)
        warm = cached[0] if cached is not None else None
        theta_bar = logistic_mle(pooled, warm_start=warm)
        self._cluster_cache[comp] = (theta_bar, self._round)
        return theta_bar

    def _cluster_info(self, comp: int) -> np.ndarray:
        d = self.dim
        total = self.scatter[self._members[comp]].sum(axis=0).reshape(d, d)
        return (self.lam / self.kappa) * np.eye(d) + total

    def gap_radius(self, t) -> np.ndarray:
        """Deletion half-width f(T); f(0) = +inf (no deletion before data)."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            num = np.sqrt(self.lam / self.kappa) + np.sqrt(
                2.0 * np.log(self.num_users / self.delta)
                + self.dim * np.log1p(4.0 * t * self.kappa / (self.dim * self.lam))
            )
            return np.where(t > 0, num / (self.kappa * np.sqrt(2.0 * self.lam_x * t)), np.inf)

    def _bonus_coefficient(self, t: int) -> float:
        if self.beta is not None:
            return self.beta
        # L = 2 bounds the difference norms in the information logdet
        beta_t = np.sqrt(
            2.0 * np.log(1.0 / self.delta)
            + self.dim * np.log1p(4.0 * t * self.kappa / (self.dim * self.lam))
        )
        return float(beta_t / self.kappa)

    # -- bandit interface ---------------------------------------------------

    def select_pair(self, t, user, arm_ids):
        arms = self.env.arms[arm_ids]
        if arms.size == 0:
            raise ValueError("empty arm set")
        comp = self._comp_of[user]
        theta_bar = self._cluster_theta(comp)
        means = arms @ theta_bar
        first = argmax_lowest_id(means, np.arange(len(arm_ids)))
        inv = np.linalg.inv(self._cluster_info(comp))
        diffs = arms - arms[first]
        widths = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", diffs, inv, diffs), 0.0))
        second = argmax_lowest_id(means + self._bonus_coefficient(t) * widths,
                                  np.arange(len(arm_ids)))
        return int(arm_ids[first]), int(arm_ids[second])

    def observe(self, event):
        i = event.user
        a1, a2 = event.chosen
        diff = self.env.arms[a1] - self.env.arms[a2]
        self.problems[i].add(diff, int(event.value))
        self.scatter[i] += np.outer(diff, diff).ravel()
        self.counts[i] += 1
        self._round += 1
        self.theta[i] = logistic_mle(self.problems[i], warm_start=self.theta[i])

        neighbors = [j for j in self.graph.neighbors(i) if self.counts[j] > 0]
        if not neighbors:
            return
        gaps = np.linalg.norm(self.theta[neighbors] - self.theta[i], axis=1)
        limits = self.gap_radius(self.counts[i]) + self.gap_radius(self.counts[neighbors])
        drop = [j for j, gap, lim in zip(neighbors, gaps, limits) if gap > lim]
        if drop:
            self.graph.remove_edges_from((i, j) for j in drop)
            self._recompute_components()


class LdbIndPolicy(ColdbPolicy):
    """Independent single-user dueling baseline: the graph starts empty,
    so every cluster is a singleton and nothing is ever shared."""

    name = "ldb_ind"

    def __init__(self, env: Environment, rng=None, *, lam=1.0, delta=0.1,
                 lam_x=None, beta=None, score_bound=1.0, refit_every=1):
        super().__init__(env, rng, lam=lam, delta=delta, lam_x=lam_x, beta=beta,
                         score_bound=score_bound, refit_every=refit_every)
        self.graph = nx.empty_graph(self.num_users)
        self._recompute_components()
