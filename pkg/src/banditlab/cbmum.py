"""Clustering bandits that tolerate per-user preference perturbations.

Two policies over a population of users whose preference vectors coincide
within unknown clusters, with rewards allowed to deviate from linear by a
bounded per-(user, arm) perturbation:

- :class:`RclumbPolicy` keeps an undirected user graph and serves each user
  from the aggregate of its *1-hop neighborhood* (deliberately not the
  connected component), deleting edges whose endpoint estimates drift
  apart by more than a perturbation-inflated threshold.
- :class:`RsclumbPolicy` keeps an explicit cluster partition refined in
  phases of doubling length: each user is checked once per phase for a
  split, and fully-checked clusters are merged back when their averaged
  estimates agree.

Both score arms with the clipped optimistic index

    min{1, x'theta_V + beta * ||x||_{Minv} + eps * sum_s |x' Minv x_s|}

where the last sum runs over every historical pull of the serving cluster.
Because arms come from a fixed pool, that sum collapses to pull counts:
sum_a n_a^V * |x' Minv x_a|, which keeps rounds O(pool) instead of O(t).

:class:`SclubPolicy` is the zero-perturbation special case of
:class:`RsclumbPolicy` (no threshold inflation, no index bonus, no clip).
"""

from __future__ import annotations

import numpy as np
import networkx as nx

from .base import Policy, argmax_lowest_id, gap_confidence
from .baselines import default_radius
from .envs import Environment
from .linalg import RidgeState

__all__ = ["RclumbPolicy", "RsclumbPolicy", "SclubPolicy", "zeta_diagnostic"]


def zeta_diagnostic(eps_star: float, lambda_x: float) -> float:
    """Theoretical minimum separable gap 2*eps*sqrt(2/lambda_x).

    ``lambda_x`` is an analysis constant of the arm distribution that has
    to be supplied by the caller; nothing in the package estimates it.
    """
    if lambda_x <= 0:
        raise ValueError(f"lambda_x must be positive, got {lambda_x}")
    return 2.0 * eps_star * np.sqrt(2.0 / lambda_x)


class _PerturbedClusterBandit(Policy):
    """Shared per-user statistics and the clipped drift-aware index."""

    def __init__(self, env: Environment, rng=None, *, lam=1.0, beta=None, delta=0.01,
                 eps_star=None, alpha1=1.0, alpha2=1.0, clip=True):
        super().__init__(env, rng)
        u, d = env.spec.num_users, env.spec.dim
        self.lam = float(lam)
        self.delta = float(delta)
        self.beta = float(beta) if beta is not None else default_radius(
            lam, d, env.spec.horizon, self.delta
        )
        self.eps_star = env.spec.misspec_level if eps_star is None else float(eps_star)
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self.clip = bool(clip)
        self.states = [RidgeState(d, reg=lam) for _ in range(u)]
        self.theta = np.zeros((u, d))
        self.counts = np.zeros(u)
        self.pulls = np.zeros((u, env.spec.pool_size))
        # flattened per-user grams so cluster sums are single BLAS products
        self.gram_flat = np.zeros((u, d * d))
        self.resp = np.zeros((u, d))

    def _absorb(self, user: int, arm: int, value: float) -> np.ndarray:
        """Update user statistics; returns the estimate delta."""
        st = self.states[user]
        st.update(self.env.arms[arm], value)
        old = self.theta[user].copy()
        self.theta[user] = st.estimate()
        self.counts[user] += 1
        self.pulls[user, arm] += 1
        self.gram_flat[user] = st.gram.reshape(-1)
        self.resp[user] = st.resp
        return self.theta[user] - old

    def _member_stats(self, mask: np.ndarray):
        """(gram sum, resp sum, pool pull counts) over masked users."""
        d = self.env.spec.dim
        return (mask @ self.gram_flat).reshape(d, d), mask @ self.resp, mask @ self.pulls

    def _index_scores(self, gram_sum, resp_sum, pool_pulls, arm_ids) -> np.ndarray:
        """Clipped drift-aware index for each candidate arm."""
        d = self.env.spec.dim
        inv = np.linalg.inv(self.lam * np.eye(d) + gram_sum)
        arms = self.env.arms[arm_ids]
        proj = arms @ inv
        widths = np.sqrt(np.maximum(np.einsum("ij,ij->i", proj, arms), 0.0))
        scores = arms @ (inv @ resp_sum) + self.beta * widths
        if self.eps_star > 0:
            scores = scores + self.eps_star * (np.abs(proj @ self.env.arms.T) @ pool_pulls)
        if self.clip:
            scores = np.minimum(scores, 1.0)
        return scores

    def zeta(self, lambda_x: float) -> float:
        return zeta_diagnostic(self.eps_star, lambda_x)


class RclumbPolicy(_PerturbedClusterBandit):
    name = "rclumb"
    kinds = ("cbmum",)

    def __init__(self, env, rng=None, **kw):
        super().__init__(env, rng, **kw)
        u = env.spec.num_users
        self.graph = nx.complete_graph(u)
        # adjacency mirror of the graph for vectorized neighborhood masks
        self._adj = np.ones((u, u), dtype=float) - np.eye(u)

    def cluster(self, user: int) -> list:
        """Serving set: the user plus its 1-hop neighbors (not the component)."""
        return [user, *self.graph.neighbors(user)]

    def select(self, t, user, arm_ids):
        mask = self._adj[user].copy()
        mask[user] = 1.0
        return argmax_lowest_id(self._index_scores(*self._member_stats(mask), arm_ids), arm_ids)

    def observe(self, event):
        user, arm = event.user, event.chosen[0]
        self._absorb(user, arm, event.value)
        nbrs = np.flatnonzero(self._adj[user])
        if nbrs.size == 0:
            return
        gaps = np.linalg.norm(self.theta[nbrs] - self.theta[user], axis=1)
        limit = (
            self.alpha1 * (gap_confidence(self.counts[user]) + gap_confidence(self.counts[nbrs]))
            + self.alpha2 * self.eps_star
        )
        for l in nbrs[gaps >= limit]:
            self.graph.remove_edge(user, int(l))
            self._adj[user, l] = self._adj[l, user] = 0.0

    def partition(self) -> list:
        return [sorted(c) for c in nx.connected_components(self.graph)]


class _Cluster:
    """One block of the RSCLUMB partition with exact aggregate sums."""

    __slots__ = ("members", "gram", "resp", "count", "pulls", "theta_sum", "n_unchecked")

    def __init__(self, members, gram, resp, count, pulls, theta_sum, n_unchecked):
        self.members = members
        self.gram = gram
        self.resp = resp
        self.count = count
        self.pulls = pulls
        self.theta_sum = theta_sum
        self.n_unchecked = n_unchecked

    def mean_estimate(self) -> np.ndarray:
        return self.theta_sum / len(self.members)


class RsclumbPolicy(_PerturbedClusterBandit):
    name = "rsclumb"
    kinds = ("cbmum",)

    def __init__(self, env, rng=None, **kw):
        super().__init__(env, rng, **kw)
        u = env.spec.num_users
        d = env.spec.dim
        self.checked = np.zeros(u, dtype=bool)
        self.cluster_of = np.zeros(u, dtype=int)
        self.clusters: dict[int, _Cluster] = {
            0: _Cluster(set(range(u)), np.zeros((d, d)), np.zeros(d), 0.0,
                        np.zeros(env.spec.pool_size), np.zeros(d), u)
        }
        self._next_id = 1
        self._phase = 0
        self._phase_end = 0  # first round of phase s=1 triggers the reset

    def _begin_phase_if_due(self, t: int) -> None:
        if t <= self._phase_end:
            return
        self._phase += 1
        self._phase_end += 2 ** self._phase
        self.checked[:] = False
        for c in self.clusters.values():
            c.n_unchecked = len(c.members)

    def select(self, t, user, arm_ids):
        self._begin_phase_if_due(t)
        c = self.clusters[self.cluster_of[user]]
        return argmax_lowest_id(self._index_scores(c.gram, c.resp, c.pulls, arm_ids), arm_ids)

    def observe(self, event):
        user, arm = event.user, event.chosen[0]
        x = self.env.arms[arm]
        delta = self._absorb(user, arm, event.value)
        c = self.clusters[self.cluster_of[user]]
        c.gram += np.outer(x, x)
        c.resp += event.value * x
        c.count += 1.0
        c.pulls[arm] += 1.0
        c.theta_sum += delta
        if not self.checked[user]:
            self._split(user)
            self.checked[user] = True
            self.clusters[self.cluster_of[user]].n_unchecked -= 1
            self._merge()

    def _split(self, user: int) -> None:
        cid = self.cluster_of[user]
        c = self.clusters[cid]
        if len(c.members) <= 1:
            return
        gap = float(np.linalg.norm(self.theta[user] - c.mean_estimate()))
        limit = float(
            self.alpha1 * (gap_confidence(self.counts[user]) + gap_confidence(c.count))
            + self.alpha2 * self.eps_star
        )
        if gap <= limit:
            return
        st = self.states[user]
        c.members.discard(user)
        c.gram -= st.gram
        c.resp -= st.resp
        c.count -= st.count
        c.pulls -= self.pulls[user]
        c.theta_sum -= self.theta[user]
        c.n_unchecked -= 1  # the splitting user is unchecked by construction
        new_id = self._next_id
        self._next_id += 1
        self.clusters[new_id] = _Cluster(
            {user}, st.gram.copy(), st.resp.copy(), float(st.count),
            self.pulls[user].copy(), self.theta[user].copy(), 1,
        )
        self.cluster_of[user] = new_id

    def _merge(self) -> None:
        merged = True
        while merged:
            merged = False
            ready = [cid for cid, c in self.clusters.items() if c.n_unchecked == 0]
            for i in range(len(ready)):
                if merged:
                    break
                for j in range(i + 1, len(ready)):
                    a, b = self.clusters[ready[i]], self.clusters[ready[j]]
                    gap = float(np.linalg.norm(a.mean_estimate() - b.mean_estimate()))
                    limit = float(
                        0.5 * self.alpha1 * (gap_confidence(a.count) + gap_confidence(b.count))
                        + 0.5 * self.alpha2 * self.eps_star
                    )
                    if gap < limit:
                        self._absorb_cluster(ready[i], ready[j])
                        merged = True
                        break

    def _absorb_cluster(self, keep: int, gone: int) -> None:
        a, b = self.clusters[keep], self.clusters[gone]
        for u in b.members:
            self.cluster_of[u] = keep
        a.members |= b.members
        a.gram += b.gram
        a.resp += b.resp
        a.count += b.count
        a.pulls += b.pulls
        a.theta_sum += b.theta_sum
        a.n_unchecked += b.n_unchecked
        del self.clusters[gone]

    def partition(self) -> list:
        return [sorted(c.members) for c in self.clusters.values()]


class SclubPolicy(RsclumbPolicy):
    """Set-based clustering with no perturbation allowance (alpha2 = 0)."""

    name = "sclub"

    def __init__(self, env, rng=None, **kw):
        kw.setdefault("alpha2", 0.0)
        kw.setdefault("eps_star", 0.0)
        kw.setdefault("clip", False)
        super().__init__(env, rng, **kw)
