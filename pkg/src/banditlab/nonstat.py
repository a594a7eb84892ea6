"""Policies for drifting-parameter linear bandits.

Three levels of knowledge about the reward noise, one policy each:

``rw_oful``
    knows each round's noise standard deviation (revealed after the
    pull), runs variance-weighted ridge regression, and restarts every
    ``w`` rounds to forget stale data;
``save_plus``
    knows nothing per-round: it keeps ``L`` layered estimators with
    geometric regularizers ``2^{-2l} I`` and routes each sample to the
    most uncertain layer it still excites, again restarting every ``w``;
``save_bob``
    additionally learns the restart window and layer parameter online,
    running an Exp3 meta-learner over a (window, alpha) candidate pool
    with one ``save_plus`` instance per block.

All round counters are internal to the policy (a fresh instance starts
at round one), which is what lets ``save_bob`` run its base policy from
scratch inside every block.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .base import Policy, argmax_lowest_id
from .envs import Environment
from .errors import ConfigError
from .linalg import RidgeState

__all__ = [
    "sigma_bar",
    "rw_radius",
    "optimal_window",
    "bob_pool",
    "bob_gamma",
    "bob_probs",
    "bob_rescale",
    "bob_update",
    "RWOfulPolicy",
    "SavePlusPolicy",
    "SaveBobPolicy",
]


def sigma_bar(sigma_k: float, alpha: float, gamma_v: float, uncertainty: float) -> float:
    """Effective noise level max{sigma_k, alpha, gamma_v*sqrt(uncertainty)}.

    ``uncertainty`` is the arm's Mahalanobis norm under the current
    inverse covariance; the floor ``alpha`` keeps the regression weight
    ``1/sigma_bar^2`` bounded, the ``gamma_v`` term keeps rarely-seen
    directions from getting huge weight.
    """
    return max(float(sigma_k), float(alpha), float(gamma_v) * math.sqrt(float(uncertainty)))


def rw_radius(k: int, w: int, *, d: int, lam: float, alpha: float, gamma_v: float,
              arm_bound: float = 1.0, noise_bound: float = 1.0, param_bound: float = 1.0,
              delta: float = 0.01) -> float:
    """Confidence radius of the restarted weighted ridge estimator.

    Evaluated with ``k % w`` in place of ``k`` (the state holds at most
    one window of data); a restart round (``k % w == 0``) evaluates the
    logs at count one, since count zero would send them to -infinity.
    """
    kw = k % w
    if kw == 0:
        kw = 1
    g2a = gamma_v * gamma_v / alpha
    log1 = math.log(32.0 * math.log(g2a + 1.0) * kw * kw / delta)
    log2 = math.log(32.0 * (math.log(g2a) + 1.0) * kw * kw / delta)
    width = d * math.log(1.0 + kw * arm_bound**2 / (alpha**2 * d * lam))
    return (12.0 * math.sqrt(width * log1)
            + 30.0 * log2 * noise_bound / gamma_v**2
            + math.sqrt(lam) * param_bound)


def optimal_window(d: int, horizon: int, variation: float, total_variance: float) -> tuple[int, float]:
    """Tuned (restart window, weight floor alpha) for ``rw_oful``.

    Two regimes depending on whether the total variance or the horizon
    dominates: w = d^{1/4} sqrt(V/B) when d V^6 >= K^4 B^2, else
    w = d^{1/6} (K/B)^{1/3}; then alpha = d^{-1/4} sqrt(B) w / sqrt(K).
    """
    if variation <= 0 or total_variance < 0:
        raise ConfigError("optimal_window needs variation > 0 and total_variance >= 0")
    if d * total_variance**6 >= horizon**4 * variation**2:
        w = d**0.25 * math.sqrt(total_variance / variation)
    else:
        w = d ** (1.0 / 6.0) * (horizon / variation) ** (1.0 / 3.0)
    w_int = max(1, math.ceil(w))
    alpha = d**-0.25 * math.sqrt(variation) * w_int / math.sqrt(horizon)
    return w_int, alpha


class RWOfulPolicy(Policy):
    """Variance-weighted ridge with periodic restarts (known noise level)."""

    name = "rw_oful"
    kinds = ("nonstat2arm",)

    def __init__(self, env: Environment, rng=None, *, lam: float = 1.0, w: int = 1000,
                 alpha: float = 1.0, gamma_v: float = 2.0, beta: float | None = None,
                 param_bound: float = 1.0, noise_bound: float = 1.0, delta: float = 0.01):
        super().__init__(env, rng)
        self.lam = float(lam)
        self.w = int(w)
        self.alpha = float(alpha)
        self.gamma_v = float(gamma_v)
        self.beta = None if beta is None else float(beta)
        self.param_bound = float(param_bound)
        self.noise_bound = float(noise_bound)
        self.delta = float(delta)
        self.k = 0  # rounds seen; the upcoming round is k + 1
        self.state = RidgeState(env.spec.dim, reg=self.lam)

    def _radius(self) -> float:
        if self.beta is not None:
            return self.beta
        return rw_radius(self.k + 1, self.w, d=self.env.spec.dim, lam=self.lam,
                         alpha=self.alpha, gamma_v=self.gamma_v,
                         noise_bound=self.noise_bound, param_bound=self.param_bound,
                         delta=self.delta)

    def select(self, t, user, arm_ids):
        if (self.k + 1) % self.w == 0:
            self.state = RidgeState(self.env.spec.dim, reg=self.lam)
        arms = self.env.arms[arm_ids]
        theta = self.state.estimate()
        radius = self._radius()
        scores = arms @ theta + radius * np.array([self.state.mnorm(a) for a in arms])
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        if event.sigma is None:
            raise ConfigError(
                "rw_oful needs the environment to reveal the noise level after "
                "each pull; this feedback carries none"
            )
        self.k += 1
        a = self.env.arms[event.chosen[0]]
        sbar = sigma_bar(event.sigma, self.alpha, self.gamma_v, self.state.mnorm(a))
        self.state.update(a, event.value, w=1.0 / sbar**2)


class SavePlusPolicy(Policy):
    """Layered weighted ridge with restarts (unknown per-round noise).

    Layer ``l`` has prior covariance ``2^{-2l} I``.  A pulled arm joins
    the lowest layer where it is still uncertain (Mahalanobis norm at
    least ``2^{-l}``) with weight ``w_k = 2^{-l} / mnorm``, so each
    absorbed sample contributes exactly ``2^{-l}`` of normalized mass --
    the identity ``w_k * mnorm = 2^{-l}`` is re-checked on every update.
    Rounds certain under every layer update nothing.
    """

    name = "save_plus"
    kinds = ("nonstat2arm",)

    def __init__(self, env: Environment, rng=None, *, w: int = 1000,
                 alpha: float | None = None, n_layers: int | None = None,
                 adaptive_radius: bool = True, noise_bound: float = 1.0,
                 param_bound: float = 1.0, delta: float = 0.01):
        super().__init__(env, rng)
        if n_layers is not None:
            self.n_layers = int(n_layers)
            self.alpha = 2.0 ** -self.n_layers
        else:
            self.alpha = 1.0 / 8.0 if alpha is None else float(alpha)
            # alpha >= 1 would ask for zero layers; keep the coarsest one
            self.n_layers = max(1, math.ceil(math.log2(1.0 / self.alpha)))
        if self.n_layers < 1:
            raise ConfigError(f"save_plus needs at least one layer, got {self.n_layers}")
        self.w = int(w)
        self.adaptive_radius = bool(adaptive_radius)
        self.noise_bound = float(noise_bound)
        self.param_bound = float(param_bound)
        self.delta = float(delta)
        self.k = 0
        self._reset()

    def _reset(self) -> None:
        d = self.env.spec.dim
        ells = range(1, self.n_layers + 1)
        self.layers = [RidgeState(d, reg=4.0**-ell) for ell in ells]
        self.radii = [2.0 ** (-ell + 1) for ell in ells]
        self.members = [0] * self.n_layers  # |Psi-hat| per layer
        self.sq_resp = [0.0] * self.n_layers  # sum of w_k^2 r_k^2 per layer
        self.skipped = 0  # rounds no layer absorbed since the restart

    def _var_estimate(self, li: int) -> float:
        """Layer's weighted residual sum, from running accumulators."""
        st = self.layers[li]
        theta = st.estimate()
        v = self.sq_resp[li] - 2.0 * float(theta @ st.resp) + float(theta @ st.gram @ theta)
        return max(0.0, v)

    def _recompute_radius(self, li: int) -> None:
        if not self.adaptive_radius:
            return
        ell = li + 1
        log_var = math.log(4.0 * (self.w + 1) ** 2 * self.n_layers / self.delta)
        log_conf = math.log(4.0 * self.w**2 * self.n_layers / self.delta)
        if 2.0**ell >= 64.0 * math.sqrt(log_var):
            var = self._var_estimate(li)
        else:
            var = self.noise_bound**2 * self.members[li]
        scale = 2.0**-ell
        self.radii[li] = (16.0 * scale
                          * math.sqrt(8.0 * var + 6.0 * self.noise_bound**2 * log_var
                                      + 16.0 * scale * scale)
                          * math.sqrt(log_conf)
                          + 6.0 * scale * self.noise_bound * log_conf
                          + scale * self.param_bound)

    def select(self, t, user, arm_ids):
        if (self.k + 1) % self.w == 0:
            self._reset()
        arms = self.env.arms[arm_ids]
        scores = np.array([
            min(float(a @ st.estimate()) + r * st.mnorm(a)
                for st, r in zip(self.layers, self.radii))
            for a in arms
        ])
        return argmax_lowest_id(scores, arm_ids)

    def observe(self, event):
        self.k += 1
        a = self.env.arms[event.chosen[0]]
        norms = [st.mnorm(a) for st in self.layers]
        eligible = [li for li, m in enumerate(norms) if m >= 2.0 ** -(li + 1)]
        if not eligible:
            self.skipped += 1
            return
        li = eligible[0]
        scale = 2.0 ** -(li + 1)
        wk = scale / norms[li]
        if abs(wk * norms[li] - scale) >= 1e-10:
            raise FloatingPointError(
                f"layer weight drifted: |{wk} * {norms[li]} - {scale}| >= 1e-10"
            )
        self.layers[li].update(a, event.value, w=wk * wk)
        self.members[li] += 1
        self.sq_resp[li] += wk * wk * event.value**2
        self._recompute_radius(li)


def bob_pool(d: int, horizon: int) -> list[tuple[float, float]]:
    """Candidate (window, alpha) pairs for the Exp3 meta-learner.

    Both grids are geometric; the union keeps duplicates, so the pool
    cardinality matches the closed-form product of the grid sizes.
    """
    log_k = math.log2(horizon)
    windows = ([d ** (1 / 3) * 2.0 ** (i - 1) for i in range(1, math.ceil(log_k / 3) + 2)]
               + [d ** (2 / 5) * 2.0 ** (i - 1) for i in range(1, math.ceil(2 * log_k / 5) + 2)])
    alphas = ([d ** (1 / 3) * 2.0 ** (1 - i) for i in range(1, math.ceil(log_k / 3) + 2)]
              + [d ** (11 / 30) * 2.0 ** (1 - i) for i in range(1, math.ceil(11 * log_k / 30) + 2)])
    return [(w, a) for w in windows for a in alphas]


def bob_gamma(pool_size: int, horizon: int, block: int) -> float:
    """Exp3 mixing rate min{1, sqrt((n+1)ln(n+1) / ((e-1) ceil(K/H)))}."""
    blocks = math.ceil(horizon / block)
    return min(1.0, math.sqrt((pool_size + 1) * math.log(pool_size + 1)
                              / ((math.e - 1.0) * blocks)))

def bob_probs(s: np.ndarray, gamma: float) -> np.ndarray:
    """Exp3 distribution (1-gamma) s/sum(s) + gamma/(n+1), as written.

    The mixing mass spreads over n+1 slots while only n arms exist, so
    these sum to 1 - gamma/(n+1); samplers renormalize (or give the
    residual to a dummy no-op arm, see :class:`SaveBobPolicy`).
    """
    s = np.asarray(s, dtype=float)
    return (1.0 - gamma) * s / s.sum() + gamma / (len(s) + 1)


def bob_rescale(block_reward: float, block: int, horizon: int, noise_bound: float = 1.0) -> float:
    """Block reward mapped to roughly [0, 1] by its high-probability range."""
    spread = math.log(horizon * (horizon / block + 1.0))
    denom = (block + noise_bound * math.sqrt(block / 2.0 * spread)
             + 2.0 / 3.0 * noise_bound * spread)
    return block_reward / denom


def bob_update(s: np.ndarray, j: int, p_j: float, gamma: float, rescaled: float) -> None:
    """Multiplicative Exp3 bump of the played pair's weight, in place."""
    if not -0.5 <= rescaled <= 1.5:
        warnings.warn(
            f"rescaled block reward {rescaled:.3f} outside [-1/2, 3/2]; clamping",
            stacklevel=2,
        )
        rescaled = min(1.5, max(-0.5, rescaled))
    s[j] *= math.exp(gamma / ((len(s) + 1) * p_j) * (0.5 + rescaled))


class SaveBobPolicy(Policy):
    """``save_plus`` under an Exp3 meta-learner over (window, alpha) pairs.

    The horizon splits into blocks of ``H = ceil(d^{2/5} K^{2/5})``
    rounds; each block runs a fresh :class:`SavePlusPolicy` with the
    sampled pair, and the block's cumulative reward (rescaled to about
    [0, 1]) feeds the meta-learner.  ``dummy_arm=True`` gives the
    leftover mixing mass to a no-op slot that replays the previous pair
    instead of renormalizing it away.
    """

    name = "save_bob"
    kinds = ("nonstat2arm",)

    def __init__(self, env: Environment, rng=None, *, adaptive_radius: bool = True,
                 noise_bound: float = 1.0, param_bound: float = 1.0,
                 delta: float = 0.01, dummy_arm: bool = False):
        super().__init__(env, rng)
        d, horizon = env.spec.dim, env.spec.horizon
        self.block = math.ceil(d ** (2 / 5) * horizon ** (2 / 5))
        self.pool = bob_pool(d, horizon)
        self.gamma = bob_gamma(len(self.pool), horizon, self.block)
        self.s = np.ones(len(self.pool))
        self.noise_bound = float(noise_bound)
        self.param_bound = float(param_bound)
        self.delta = float(delta)
        self.adaptive_radius = bool(adaptive_radius)
        self.dummy_arm = bool(dummy_arm)
        self.k = 0
        self.block_reward = 0.0
        self.current: int | None = None
        self.p_current = 1.0
        self.inner: SavePlusPolicy | None = None

    def _draw_pair(self) -> None:
        if self.current is not None:
            rescaled = bob_rescale(self.block_reward, self.block,
                                   self.env.spec.horizon, self.noise_bound)
            bob_update(self.s, self.current, self.p_current, self.gamma, rescaled)
        p = bob_probs(self.s, self.gamma)
        if self.dummy_arm and self.current is not None:
            # the residual gamma/(n+1) mass replays the incumbent pair
            j = int(self.rng.choice(len(p) + 1, p=np.append(p, 1.0 - p.sum())))
            if j == len(p):
                j = self.current
        else:
            j = int(self.rng.choice(len(p), p=p / p.sum()))
        self.current = j
        self.p_current = float(p[j])
        self.block_reward = 0.0
        w, alpha = self.pool[j]
        self.inner = SavePlusPolicy(
            self.env, self.rng, w=max(1, round(w)), alpha=alpha,
            adaptive_radius=self.adaptive_radius, noise_bound=self.noise_bound,
            param_bound=self.param_bound, delta=self.delta,
        )

    def select(self, t, user, arm_ids):
        if self.k % self.block == 0:
            self._draw_pair()
        return self.inner.select(t, user, arm_ids)

    def observe(self, event):
        self.k += 1
        self.block_reward += event.value
        self.inner.observe(event)
