"""Reference policies: LinUCB(-Ind), RLinUCB(-Ind), CW-OFUL(-Ind), CLUB,
SW-UCB, and a modified EXP3.S.

The module exposes both the low-level decision rules as plain functions
(easy to pin down in tests) and harness-ready policy classes built on them.
SCLUB lives in :mod:`banditlab.cbmum` as the zero-perturbation special case
of the set-based clustering policy.
"""

from __future__ import annotations

import warnings
from collections import deque

import networkx as nx
import numpy as np

from .base import Policy, argmax_lowest_id, gap_confidence
from .envs import Environment
from .errors import ConfigError
from .linalg import RidgeState

__all__ = [
    "default_radius",
    "linucb_select",
    "rlinucb_index",
    "cwoful_weight",
    "cwoful_update",
    "club_maintain",
    "exp3s_probs",
    "exp3s_step",
    "swucb_select",
    "LinUCBPolicy",
    "RLinUCBPolicy",
    "CWOFULPolicy",
    "ClubPolicy",
    "SWUCBPolicy",
    "Exp3SPolicy",
]


def default_radius(lam: float, dim: int, horizon: int, delta: float) -> float:
    """Confidence radius sqrt(lam) + sqrt(2 ln(1/delta) + d ln(1 + T/(lam d)))."""
    return float(
        np.sqrt(lam) + np.sqrt(2.0 * np.log(1.0 / delta) + dim * np.log(1.0 + horizon / (lam * dim)))
    )


# ---------------------------------------------------------------------------
# decision rules


def linucb_select(state: RidgeState, arms: np.ndarray, beta: float, ids=None) -> int:
    """Optimistic index argmax over rows of ``arms``; ties -> lowest id.

    Returns the position within ``arms``; ``ids`` (parallel to rows) only
    affects tie-breaking order.
    """
    arms = np.asarray(arms, dtype=float)
    if arms.size == 0:
        raise ValueError("empty arm set")
    arms = np.atleast_2d(arms)
    theta = state.estimate()
    proj = arms @ state.gram_inv
    widths = np.sqrt(np.maximum(np.einsum("ij,ij->i", proj, arms), 0.0))
    scores = arms @ theta + beta * widths
    if ids is None:
        ids = np.arange(arms.shape[0])
    winner = argmax_lowest_id(scores, ids)
    return int(np.flatnonzero(np.asarray(ids) == winner)[0])


def rlinucb_index(state: RidgeState, x, beta: float, eps_star: float, history) -> float:
    """Perturbation-aware optimistic index from one user's own history.

    min{1, x'theta + beta*||x||_{inv} + eps_star * sum_s |x' inv x_s|}
    where ``history`` holds the user's past feature rows.
    """
    x = np.asarray(x, dtype=float)
    inv = state.gram_inv
    width = float(np.sqrt(max(x @ inv @ x, 0.0)))
    hist = np.atleast_2d(np.asarray(history, dtype=float)) if len(history) else None
    drift = float(np.abs(hist @ (inv @ x)).sum()) if hist is not None else 0.0
    return min(1.0, float(x @ state.estimate()) + beta * width + eps_star * drift)


def cwoful_weight(state: RidgeState, x, alpha_w: float) -> float:
    """Corruption-damping sample weight min{1, alpha_w / ||x||_{inv}}."""
    if alpha_w < 0:
        raise ConfigError(f"alpha_w must be nonnegative, got {alpha_w}")
    width = state.mnorm(x)
    if width == 0.0:
        return 1.0
    return min(1.0, alpha_w / width)


def cwoful_update(state: RidgeState, x, r: float, alpha_w: float) -> RidgeState:
    """Weighted ridge update with the corruption-damping weight."""
    state.update(x, r, cwoful_weight(state, x, alpha_w))
    return state


def club_maintain(graph: nx.Graph, estimates: np.ndarray, counts, alpha1: float, users=None):
    """Delete graph edges whose endpoint estimates are too far apart.

    Edge (i, l) goes when ||theta_i - theta_l|| >= alpha1*(f(T_i)+f(T_l))
    with f the gap-confidence width.  ``users`` limits the check to edges
    incident to those users (the served user, normally); None sweeps all.
    """
    counts = np.asarray(counts, dtype=float)
    widths = gap_confidence(counts)
    if users is None:
        edges = list(graph.edges())
    else:
        edges = [(u, v) for u in users for v in graph.neighbors(u)]
    doomed = []
    for i, l in edges:
        if np.linalg.norm(estimates[i] - estimates[l]) >= alpha1 * (widths[i] + widths[l]):
            doomed.append((i, l))
    graph.remove_edges_from(doomed)
    return graph


def exp3s_probs(weights: np.ndarray, gamma_bar: float) -> np.ndarray:
    """Mixed sampling distribution (1-gamma)*w/sum(w) + gamma/N."""
    weights = np.asarray(weights, dtype=float)
    return (1.0 - gamma_bar) * weights / weights.sum() + gamma_bar / weights.size


def exp3s_step(
    weights: np.ndarray,
    arm: int,
    reward: float,
    gamma_bar: float,
    alpha_bar: float,
    lr: float | None = None,
    reward_range: tuple[float, float] = (0.0, 1.0),
) -> tuple[np.ndarray, np.ndarray]:
    """One EXP3.S update; returns (sampling distribution used, new weights).

    The played arm's weight is bumped by the importance-weighted reward,
    then every weight receives the uniform-sharing term
    alpha_bar * sum(w)/N.  The default learning rate is gamma_bar/N.
    Rewards outside ``reward_range`` are clamped (with a warning) before
    being rescaled to [0, 1].
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    if lr is None:
        lr = gamma_bar / n
    probs = exp3s_probs(weights, gamma_bar)
    lo, hi = reward_range
    if not lo <= reward <= hi:
        warnings.warn(
            f"reward outside declared range [{lo}, {hi}]; clamping", stacklevel=2
        )
        reward = min(max(reward, lo), hi)
    unit = (reward - lo) / (hi - lo) if hi > lo else 0.0
    bump = np.zeros(n)
    bump[arm] = unit / probs[arm]
    new = weights * np.exp(lr * bump)
    new = new + alpha_bar * new.sum() / n
    # rescale for boundedness; the sampling distribution is scale invariant
    new *= n / new.sum()
    return probs, new


def swucb_select(buffer, arms: np.ndarray, beta: float, w: int, lam: float = 1.0, ids=None) -> int:
    """LinUCB choice computed from only the last ``w`` samples of ``buffer``."""
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    d = arms.shape[1]
    recent = list(buffer)[-w:] if w > 0 else []
    state = RidgeState(d, reg=lam)
    for x, r in recent:
        state.update(x, r)
    return linucb_select(state, arms, beta, ids=ids)


# ---------------------------------------------------------------------------
# policies


class LinUCBPolicy(Policy):
    """Optimistic linear bandit; one model shared or one per user."""

    name = "linucb"
    kinds = ("cbmum", "locud", "conversational", "nonstat2arm")

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 per_user=False):
        super().__init__(env, rng)
        d = env.spec.dim
        if beta is None:
            beta = default_radius(lam, d, env.spec.horizon, delta)
        self.beta = float(beta)
        self.per_user = per_user
        n_models = env.spec.num_users if per_user else 1
        self.states = [RidgeState(d, reg=lam) for _ in range(n_models)]

    def _state(self, user: int) -> RidgeState:
        return self.states[user if self.per_user else 0]

    def select(self, t, user, arm_ids):
        arms = self.env.arms[arm_ids]
        pos = linucb_select(self._state(user), arms, self.beta, ids=arm_ids)
        return int(arm_ids[pos])

    def observe(self, event):
        arm = event.chosen[0]
        self._state(event.user).update(self.env.arms[arm], event.value)


class LinUCBIndPolicy(LinUCBPolicy):
    name = "linucb_ind"

    def __init__(self, env, rng=None, **kw):
        kw["per_user"] = True
        super().__init__(env, rng, **kw)


class RLinUCBPolicy(Policy):
    """LinUCB with the perturbation-drift bonus over the user's own pulls."""

    name = "rlinucb"
    kinds = ("cbmum",)

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 eps_star=None, per_user=False, clip=True):
        super().__init__(env, rng)
        d = env.spec.dim
        if beta is None:
            beta = default_radius(lam, d, env.spec.horizon, delta)
        self.beta = float(beta)
        self.eps_star = env.spec.misspec_level if eps_star is None else float(eps_star)
        self.per_user = per_user
        self.clip = clip
        n_models = env.spec.num_users if per_user else 1
        self.states = [RidgeState(d, reg=lam) for _ in range(n_models)]
        # pull tallies per model over the fixed pool: the drift bonus
        # sum_s |x' inv x_s| collapses to sum_a n_a * |x' inv x_a|
        self.pulls = np.zeros((n_models, env.spec.pool_size))

    def _slot(self, user: int) -> int:
        return user if self.per_user else 0

    def select(self, t, user, arm_ids):
        slot = self._slot(user)
        state = self.states[slot]
        arms = self.env.arms[arm_ids]
        inv = state.gram_inv
        proj = arms @ inv
        widths = np.sqrt(np.maximum(np.einsum("ij,ij->i", proj, arms), 0.0))
        drift = np.abs(proj @ self.env.arms.T) @ self.pulls[slot]
        scores = arms @ state.estimate() + self.beta * widths + self.eps_star * drift
        if self.clip:
            scores = np.minimum(scores, 1.0)
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        slot = self._slot(event.user)
        arm = event.chosen[0]
        self.states[slot].update(self.env.arms[arm], event.value)
        self.pulls[slot, arm] += 1


class RLinUCBIndPolicy(RLinUCBPolicy):
    name = "rlinucb_ind"

    def __init__(self, env, rng=None, **kw):
        kw["per_user"] = True
        super().__init__(env, rng, **kw)


class CWOFULPolicy(Policy):
    """Weighted-ridge bandit; sample weights damp high-uncertainty rounds."""

    name = "cwoful"
    kinds = ("cbmum", "locud")

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 alpha_w=1.0, per_user=False):
        super().__init__(env, rng)
        d = env.spec.dim
        if beta is None:
            beta = default_radius(lam, d, env.spec.horizon, delta)
        self.beta = float(beta)
        self.alpha_w = float(alpha_w)
        if self.alpha_w < 0:
            raise ConfigError("alpha_w must be nonnegative")
        self.per_user = per_user
        n_models = env.spec.num_users if per_user else 1
        self.states = [RidgeState(d, reg=lam) for _ in range(n_models)]

    def _state(self, user):
        return self.states[user if self.per_user else 0]

    def select(self, t, user, arm_ids):
        arms = self.env.arms[arm_ids]
        pos = linucb_select(self._state(user), arms, self.beta, ids=arm_ids)
        return int(arm_ids[pos])

    def observe(self, event):
        arm = event.chosen[0]
        cwoful_update(self._state(event.user), self.env.arms[arm], event.value, self.alpha_w)


class CWOFULIndPolicy(CWOFULPolicy):
    name = "cwoful_ind"

    def __init__(self, env, rng=None, **kw):
        kw["per_user"] = True
        super().__init__(env, rng, **kw)


class ClubPolicy(Policy):
    """Graph-based clustering bandit: estimate-gap edge deletion, connected
    components as clusters, optimistic play on the cluster aggregate."""

    name = "club"
    kinds = ("cbmum", "locud")

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 alpha1=1.0):
        super().__init__(env, rng)
        u, d = env.spec.num_users, env.spec.dim
        if beta is None:
            beta = default_radius(lam, d, env.spec.horizon, delta)
        self.beta = float(beta)
        self.lam = float(lam)
        self.alpha1 = float(alpha1)
        self.states = [RidgeState(d, reg=lam) for _ in range(u)]
        self.theta = np.zeros((u, d))
        self.counts = np.zeros(u)
        # flattened per-user grams so component sums are single BLAS products
        self.gram_flat = np.zeros((u, d * d))
        self.resp_sum = np.zeros((u, d))
        self.graph = nx.complete_graph(u)
        self._comp_mask = np.zeros(u, dtype=int)  # component id per user
        self._masks = [np.ones(u)]

    def _recompute_components(self):
        u = self.env.spec.num_users
        self._masks = []
        for idx, comp in enumerate(nx.connected_components(self.graph)):
            mask = np.zeros(u)
            members = list(comp)
            mask[members] = 1.0
            self._masks.append(mask)
            self._comp_mask[members] = idx

    def select(self, t, user, arm_ids):
        d = self.env.spec.dim
        mask = self._masks[self._comp_mask[user]]
        m = self.lam * np.eye(d) + (mask @ self.gram_flat).reshape(d, d)
        b = mask @ self.resp_sum
        inv = np.linalg.inv(m)
        arms = self.env.arms[arm_ids]
        proj = arms @ inv
        widths = np.sqrt(np.maximum(np.einsum("ij,ij->i", proj, arms), 0.0))
        scores = arms @ (inv @ b) + self.beta * widths
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        i, arm = event.user, event.chosen[0]
        x = self.env.arms[arm]
        st = self.states[i]
        st.update(x, event.value)
        self.gram_flat[i] = st.gram.reshape(-1)
        self.resp_sum[i] = st.resp
        self.theta[i] = st.estimate()
        self.counts[i] += 1
        before = self.graph.degree(i)
        club_maintain(self.graph, self.theta, self.counts, self.alpha1, users=[i])
        if self.graph.degree(i) != before:
            self._recompute_components()

    def partition(self) -> list:
        """Current clusters as a list of sorted user lists."""
        return [sorted(c) for c in nx.connected_components(self.graph)]


class SWUCBPolicy(Policy):
    """LinUCB over a sliding window of the most recent samples."""

    name = "swucb"
    kinds = ("nonstat2arm", "cbmum")

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 window=1000):
        super().__init__(env, rng)
        d = env.spec.dim
        if beta is None:
            beta = default_radius(lam, d, env.spec.horizon, delta)
        self.beta = float(beta)
        self.lam = float(lam)
        self.window = int(window)
        if self.window < 0:
            raise ConfigError("window must be nonnegative")
        self.buffer = deque()
        self.gram = np.zeros((d, d))
        self.resp = np.zeros(d)

    def select(self, t, user, arm_ids):
        d = self.env.spec.dim
        inv = np.linalg.inv(self.lam * np.eye(d) + self.gram)
        arms = self.env.arms[arm_ids]
        proj = arms @ inv
        widths = np.sqrt(np.maximum(np.einsum("ij,ij->i", proj, arms), 0.0))
        scores = arms @ (inv @ self.resp) + self.beta * widths
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        x = self.env.arms[event.chosen[0]]
        r = event.value
        self.buffer.append((x, r))
        self.gram += np.outer(x, x)
        self.resp += r * x
        while len(self.buffer) > self.window:
            xo, ro = self.buffer.popleft()
            self.gram -= np.outer(xo, xo)
            self.resp -= ro * xo


class Exp3SPolicy(Policy):
    """Adversarial-style bandit over a fixed arm pool with uniform sharing."""

    name = "exp3s"
    kinds = ("nonstat2arm", "cbmum")

    def __init__(self, env: Environment, rng=None, *, gamma_bar=0.01, alpha_bar=None,
                 lr=None, reward_range=(0.0, 1.0)):
        super().__init__(env, rng)
        if env.spec.per_round_arms != env.spec.pool_size:
            raise ConfigError(
                "exp3s needs the full arm pool presented every round "
                f"(per_round_arms={env.spec.per_round_arms}, pool_size={env.spec.pool_size})"
            )
        n = env.spec.pool_size
        self.gamma_bar = float(gamma_bar)
        self.alpha_bar = 1.0 / env.spec.horizon if alpha_bar is None else float(alpha_bar)
        self.lr = lr
        self.reward_range = tuple(reward_range)
        self.weights = np.ones(n)

    def select(self, t, user, arm_ids):
        probs = exp3s_probs(self.weights, self.gamma_bar)
        return int(self.rng.choice(self.weights.size, p=probs))

    def observe(self, event):
        _, self.weights = exp3s_step(
            self.weights, event.chosen[0], event.value,
            self.gamma_bar, self.alpha_bar, self.lr, self.reward_range,
        )
