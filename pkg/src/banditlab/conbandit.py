"""Conversational linear bandits with key-term feedback.

One joint ridge model per user absorbs both arm pulls and key-term
queries (a key-term's feature is the weighted mean of its linked arms'
features, see :meth:`banditlab.envs.Environment._gen_key_terms`).  The
three policies differ only in how they pick which key-term to ask about
when the conversation budget allows a question:

``conlinucb_bs``
    samples uniformly from a barycentric spanner of the key-term
    features, precomputed offline;
``conlinucb_mcr``
    asks about the key-term whose confidence radius is currently widest;
``conlinucb_ucb``
    scores key-terms exactly like arms (estimate plus exploration bonus).
"""

from __future__ import annotations

import math

import numpy as np

from .base import Policy, argmax_lowest_id
from .envs import Environment
from .errors import ConfigError, SingularSystemError
from .linalg import RidgeState

__all__ = [
    "barycentric_spanner",
    "spanner_coefficients",
    "parse_budget",
    "conversation_budget",
    "ConLinUCBBSPolicy",
    "ConLinUCBMCRPolicy",
    "ConLinUCBUCBPolicy",
]


def barycentric_spanner(features, *, improvement: float = 1.0 + 1e-6) -> np.ndarray:
    """Indices of a (1+1e-6)-approximate barycentric spanner.

    Determinant-swap construction: greedily fill a basis row by row with
    the feature maximizing |det|, then keep swapping in any feature that
    grows |det| by more than ``improvement`` until no swap qualifies.
    Every feature is then expressible over the returned subset with
    coefficients in [-1, 1] (up to the approximation slack).

    Parameters
    ----------
    features : (n, d) array
        Candidate vectors; must span R^d.
    improvement : float
        Strict growth factor a swap must achieve (exactly 1.0 can cycle
        forever on floating-point ties).

    Returns
    -------
    (d,) integer array of row indices into ``features``, sorted.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 2:
        raise ValueError(f"expected a 2-D feature array, got shape {feats.shape}")
    n, d = feats.shape
    rank = int(np.linalg.matrix_rank(feats))
    if rank < d:
        raise SingularSystemError(
            f"cannot build a spanner: {n} features span only {rank} of {d} dimensions"
        )

    basis = np.eye(d)
    chosen = np.full(d, -1, dtype=int)
    # coef[i, j] is the factor |det| changes by when row i is replaced by
    # feature j: solve(basis^T, x) gives x's coordinates over the rows.
    for i in range(d):
        coef = np.linalg.solve(basis.T, feats.T)
        j = int(np.argmax(np.abs(coef[i])))
        basis[i] = feats[j]
        chosen[i] = j
    improved = True
    while improved:
        improved = False
        for i in range(d):
            coef = np.linalg.solve(basis.T, feats.T)
            j = int(np.argmax(np.abs(coef[i])))
            if j != chosen[i] and abs(coef[i, j]) > improvement:
                basis[i] = feats[j]
                chosen[i] = j
                improved = True
    return np.sort(chosen)


def spanner_coefficients(features, spanner) -> np.ndarray:
    """Coordinates of every feature over the spanner rows.

    Returns the (n, d) matrix C with ``features[i] = C[i] @ features[spanner]``;
    the spanner property is ``np.abs(C).max() <= 1`` (plus slack).
    """
    feats = np.asarray(features, dtype=float)
    return np.linalg.solve(feats[np.asarray(spanner)].T, feats.T).T


def parse_budget(desc: str):
    """Turn a budget descriptor into the function b(t).

    Formats
    -------
    - ``"none"`` or ``"0"``: no conversations, b(t) = 0.
    - ``"linear:K"``: b(t) = K*t.
    - ``"logfloor:A"`` or ``"logfloor:A:BASE"``: b(t) = A*floor(log(t+1))
      with BASE one of ``e`` (default), ``2``, ``10``.
    """
    desc = desc.strip().lower()
    if desc in ("none", "0"):
        return lambda t: 0.0
    head, _, rest = desc.partition(":")
    if head == "linear":
        try:
            k = float(rest)
        except ValueError:
            raise ConfigError(f"bad budget descriptor {desc!r}: linear needs a number") from None
        return lambda t: k * t
    if head == "logfloor":
        parts = rest.split(":")
        try:
            a = float(parts[0])
        except (ValueError, IndexError):
            raise ConfigError(f"bad budget descriptor {desc!r}: logfloor needs a multiplier") from None
        base = parts[1] if len(parts) > 1 else "e"
        logf = {"e": math.log, "2": math.log2, "10": math.log10}.get(base)
        if logf is None:
            raise ConfigError(f"bad budget descriptor {desc!r}: base must be e, 2, or 10")
        return lambda t: a * math.floor(logf(t + 1))
    raise ConfigError(f"unknown budget descriptor {desc!r}; expected none, linear:K, or logfloor:A[:BASE]")


def conversation_budget(b, t: int) -> int:
    """Questions allowed at round t: floor(b(t)) - floor(b(t-1)).

    ``b`` may be the callable budget function or its string descriptor;
    it must be nondecreasing, which makes the result nonnegative.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if isinstance(b, str):
        b = parse_budget(b)
    return int(math.floor(b(t)) - math.floor(b(t - 1)))


class _ConLinUCB(Policy):
    """Shared plumbing: per-user joint ridge over arm and key-term pulls."""

    kinds = ("conversational",)
    strategy = ""

    def __init__(self, env: Environment, rng=None, *, reg_beta: float = 1.0,
                 delta: float = 0.01, budget: str | None = None):
        super().__init__(env, rng)
        if env.key_features is None:
            raise ConfigError(
                f"{self.name} needs an environment with key terms (kind 'conversational')"
            )
        self.reg_beta = float(reg_beta)
        self.delta = float(delta)
        desc = budget if budget is not None else env.spec.conversation_budget
        self.budget = parse_budget(desc if desc is not None else "none")
        d = env.spec.dim
        self.states = [RidgeState(d, reg=self.reg_beta) for _ in range(env.spec.num_users)]
        self.rounds = np.zeros(env.spec.num_users, dtype=int)

    # ------------------------------------------------------------------
    # conversation protocol (driven by the harness before each arm choice)

    def conversations(self, t: int, user: int) -> int:
        return conversation_budget(self.budget, int(self.rounds[user]) + 1)

    def select_key(self, t: int, user: int) -> int:
        raise NotImplementedError

    def observe_key(self, t: int, user: int, key: int, value: float) -> None:
        self.states[user].update(self.env.key_features[key], value)

    # ------------------------------------------------------------------

    def _alpha(self, state: RidgeState) -> float:
        d = self.env.spec.dim
        width = 2.0 * math.log(1.0 / self.delta) + d * math.log1p(state.count / (self.reg_beta * d))
        return math.sqrt(width) + math.sqrt(self.reg_beta)

    def _key_radii(self, user: int) -> np.ndarray:
        keys = self.env.key_features
        inv = self.states[user].gram_inv
        return np.sqrt(np.maximum(np.einsum("kd,de,ke->k", keys, inv, keys), 0.0))

    def select(self, t, user, arm_ids):
        st = self.states[user]
        arms = self.env.arms[arm_ids]
        inv = st.gram_inv
        radii = np.sqrt(np.maximum(np.einsum("ad,de,ae->a", arms, inv, arms), 0.0))
        scores = arms @ st.estimate() + self._alpha(st) * radii
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        self.states[event.user].update(self.env.arms[event.chosen[0]], event.value)
        self.rounds[event.user] += 1


class ConLinUCBBSPolicy(_ConLinUCB):
    """Key-term questions sampled uniformly from a barycentric spanner."""

    name = "conlinucb_bs"

    def __init__(self, env, rng=None, **kw):
        super().__init__(env, rng, **kw)
        # needs the key set fixed up front; precomputed once, offline
        self.spanner = barycentric_spanner(env.key_features)

    def select_key(self, t, user):
        return int(self.rng.choice(self.spanner))


class ConLinUCBMCRPolicy(_ConLinUCB):
    """Asks about the key-term with the widest confidence radius."""

    name = "conlinucb_mcr"

    def select_key(self, t, user):
        st = self.states[user]
        scores = self._alpha(st) * self._key_radii(user)
        return argmax_lowest_id(scores, np.arange(len(self.env.key_features)))


class ConLinUCBUCBPolicy(_ConLinUCB):
    """Scores key-terms like arms: estimate plus exploration bonus."""

    name = "conlinucb_ucb"

    def select_key(self, t, user):
        st = self.states[user]
        scores = self.env.key_features @ st.estimate() + self._alpha(st) * self._key_radii(user)
        return argmax_lowest_id(scores, np.arange(len(self.env.key_features)))
