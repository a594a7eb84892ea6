import warnings

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from banditlab import ConfigError, EnvSpec, RidgeState, gen_env
from banditlab.baselines import (
    ClubPolicy,
    CWOFULIndPolicy,
    CWOFULPolicy,
    Exp3SPolicy,
    LinUCBIndPolicy,
    LinUCBPolicy,
    RLinUCBPolicy,
    SWUCBPolicy,
    club_maintain,
    cwoful_update,
    cwoful_weight,
    exp3s_probs,
    exp3s_step,
    linucb_select,
    rlinucb_index,
    swucb_select,
)
from banditlab.base import gap_confidence


def one_sample_state(d=1, lam=1.0):
    """d=1 default: after (x=1, r=1) the ridge estimate is 1/(lam+1)."""
    s = RidgeState(d, reg=lam)
    x = np.zeros(d)
    x[0] = 1.0
    s.update(x, 1.0)
    return s


# ---------------------------------------------------------------------------
# linucb / rlinucb decision rules


def test_linucb_cold_start_breaks_ties_low():
    s = RidgeState(3, reg=1.0)
    arms = np.eye(3)  # equal mnorm, zero estimate: full tie
    assert linucb_select(s, arms, beta=0.7) == 0
    assert linucb_select(s, arms, beta=0.7, ids=[9, 4, 6]) == 1  # id 4 wins


def test_linucb_greedy_hand_example():
    # theta_hat = 0.5 after one (1, 1) sample at lam=1; beta=0 is greedy
    s = one_sample_state()
    assert linucb_select(s, [[0.5], [1.0]], beta=0.0) == 1
    assert linucb_select(s, [[1.0], [0.5]], beta=0.0) == 0


def test_linucb_huge_beta_chases_uncertainty():
    s = RidgeState(2, reg=1.0)
    s.update([1.0, 0.0], 1.0)
    s.update([1.0, 0.0], 1.0)
    # first coordinate is well explored; beta large picks the orthogonal arm
    assert linucb_select(s, [[1.0, 0.0], [0.0, 1.0]], beta=1e6) == 1


def test_linucb_rejects_empty_arms():
    with pytest.raises(ValueError, match="empty arm set"):
        linucb_select(RidgeState(2, reg=1.0), np.empty((0, 2)), beta=1.0)


def test_rlinucb_index_hand_example():
    # 0.5 + 0.2 * |1 * (1/2) * 1| = 0.6
    s = one_sample_state()
    got = rlinucb_index(s, [1.0], beta=0.0, eps_star=0.2, history=[[1.0]])
    assert got == pytest.approx(0.6)


def test_rlinucb_zero_eps_matches_clipped_linucb():
    rng = np.random.default_rng(0)
    s = RidgeState(4, reg=1.0)
    hist = rng.normal(size=(6, 4))
    for row in hist:
        s.update(row, float(rng.normal()))
    x = rng.normal(size=4)
    plain = min(1.0, float(x @ s.estimate()) + 0.3 * s.mnorm(x))
    assert rlinucb_index(s, x, beta=0.3, eps_star=0.0, history=hist) == pytest.approx(plain)


def test_rlinucb_empty_history_is_clipped_width():
    s = RidgeState(2, reg=4.0)
    assert rlinucb_index(s, [1.0, 0.0], beta=0.8, eps_star=0.5, history=[]) == pytest.approx(0.4)
    assert rlinucb_index(s, [1.0, 0.0], beta=5.0, eps_star=0.5, history=[]) == 1.0


# ---------------------------------------------------------------------------
# corruption-damping weights


def test_cwoful_weight_edge_cases():
    s = RidgeState(2, reg=1.0)
    assert cwoful_weight(s, [1.0, 0.0], alpha_w=np.inf) == 1.0
    assert cwoful_weight(s, [0.0, 0.0], alpha_w=0.3) == 1.0  # zero width capped
    assert cwoful_weight(s, [1.0, 0.0], alpha_w=0.0) == 0.0


def test_cwoful_weight_hand_value():
    # fresh state, reg=1: width of a unit vector is 1, so w = alpha_w
    s = RidgeState(3, reg=1.0)
    assert cwoful_weight(s, [0.0, 1.0, 0.0], alpha_w=0.25) == pytest.approx(0.25)


def test_cwoful_weight_rejects_negative():
    with pytest.raises(ConfigError):
        cwoful_weight(RidgeState(2, reg=1.0), [1.0, 0.0], alpha_w=-0.1)


def test_cwoful_update_applies_weight():
    s = cwoful_update(RidgeState(1, reg=1.0), [1.0], 1.0, alpha_w=0.5)
    # weight 0.5: theta = 0.5 / (1 + 0.5) = 1/3
    assert s.estimate()[0] == pytest.approx(1.0 / 3.0)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_cwoful_weight_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    s = RidgeState(3, reg=float(rng.uniform(0.1, 2.0)))
    aw = float(rng.uniform(0.0, 3.0))
    for _ in range(20):
        x = rng.normal(size=3)
        w = cwoful_weight(s, x, aw)
        assert 0.0 <= w <= 1.0
        s.update(x, float(rng.normal()), w)


# ---------------------------------------------------------------------------
# CLUB edge maintenance


def test_club_identical_estimates_keep_edges():
    g = nx.complete_graph(4)
    est = np.tile([0.3, -0.2], (4, 1))
    club_maintain(g, est, counts=[5, 5, 5, 5], alpha1=1.0)
    assert g.number_of_edges() == 6


def test_club_zero_alpha_deletes_distinct():
    g = nx.complete_graph(3)
    est = np.array([[0.0], [1.0], [2.0]])
    club_maintain(g, est, counts=[1, 1, 1], alpha1=0.0)
    assert g.number_of_edges() == 0


def test_club_threshold_boundary():
    # gap exactly at alpha1*(f(T_i)+f(T_l)) deletes (rule uses >=)
    g = nx.Graph([(0, 1)])
    f = gap_confidence(np.array([3.0, 8.0]))
    gap = float(f.sum())
    est = np.array([[0.0], [gap]])
    club_maintain(g, est, counts=[3, 8], alpha1=1.0)
    assert g.number_of_edges() == 0
    g2 = nx.Graph([(0, 1)])
    est2 = np.array([[0.0], [gap - 1e-9]])
    club_maintain(g2, est2, counts=[3, 8], alpha1=1.0)
    assert g2.number_of_edges() == 1


def test_club_users_argument_limits_scope():
    g = nx.complete_graph(3)
    est = np.array([[0.0], [5.0], [10.0]])
    club_maintain(g, est, counts=[9, 9, 9], alpha1=1.0, users=[0])
    # only edges at user 0 inspected; (1, 2) survives this sweep
    assert g.has_edge(1, 2)
    assert not g.has_edge(0, 1) and not g.has_edge(0, 2)


def test_club_noiseless_two_cluster_recovery():
    spec = EnvSpec(kind="cbmum", dim=4, horizon=1600, num_users=8, num_clusters=2,
                   pool_size=30, per_round_arms=10, noise_scale=0.0, gap_floor=1.0, seed=12)
    env = gen_env(spec)
    pol = ClubPolicy(env, np.random.default_rng(0), beta=0.5)
    stream = env.start_trial(0)
    for t in range(1, spec.horizon + 1):
        user, arms = stream.sample_round(t)
        a = pol.select(t, user, arms)
        pol.observe(stream.feedback(t, user, arms, a))
    truth = [sorted(np.flatnonzero(env.cluster_of == c)) for c in range(2)]
    assert sorted(pol.partition()) == sorted(truth)


def test_club_noiseless_never_splits_within_cluster():
    # gamma-separated noiseless clusters: intra edges survive a long trace
    rng = np.random.default_rng(0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d, truth = 4, np.array([0, 0, 0, 1, 1, 1])
        centers = rng.normal(size=(2, d))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        states = [RidgeState(d, reg=1.0) for _ in truth]
        counts = np.zeros(6)
        est = np.zeros((6, d))
        g = nx.complete_graph(6)
        for t in range(2000):
            i = int(rng.integers(6))
            x = rng.normal(size=d)
            x /= np.linalg.norm(x)
            states[i].update(x, float(x @ centers[truth[i]]))
            est[i] = states[i].estimate()
            counts[i] += 1
            club_maintain(g, est, counts, alpha1=1.0, users=[i])
        intra = [(i, l) for i in range(6) for l in range(i + 1, 6) if truth[i] == truth[l]]
        assert all(g.has_edge(i, l) for i, l in intra), f"seed {seed} split a true cluster"


# ---------------------------------------------------------------------------
# EXP3.S


def test_exp3s_uniform_weights_uniform_probs():
    assert np.allclose(exp3s_probs(np.ones(2), gamma_bar=0.01), [0.5, 0.5])


def test_exp3s_probs_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.uniform(0.1, 10.0, size=int(rng.integers(2, 30)))
        assert abs(exp3s_probs(w, 0.05).sum() - 1.0) < 1e-12


def test_exp3s_scale_invariance():
    w = np.array([0.2, 1.7, 3.0, 0.9])
    assert np.allclose(exp3s_probs(w, 0.02), exp3s_probs(123.4 * w, 0.02))


def test_exp3s_hand_update():
    # reward 1 on arm 1 with p=0.5, lr=1: weight bumped by e^2
    probs, new = exp3s_step(np.ones(2), arm=1, reward=1.0, gamma_bar=0.0, alpha_bar=0.0, lr=1.0)
    assert np.allclose(probs, [0.5, 0.5])
    post = exp3s_probs(new, gamma_bar=0.0)
    assert post[1] == pytest.approx(np.e**2 / (np.e**2 + 1.0))


def test_exp3s_sharing_term_lifts_zeros():
    # alpha_bar spreads weight onto every arm, even unplayed ones
    w = np.array([1.0, 1e-12])
    _, new = exp3s_step(w, arm=0, reward=0.0, gamma_bar=0.0, alpha_bar=0.5, lr=1.0)
    assert new[1] > 0.1 * new[0]


def test_exp3s_clamps_out_of_range_reward():
    with pytest.warns(UserWarning, match="clamping"):
        probs, new = exp3s_step(np.ones(3), arm=0, reward=7.0, gamma_bar=0.0,
                                alpha_bar=0.0, lr=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, ref = exp3s_step(np.ones(3), arm=0, reward=1.0, gamma_bar=0.0,
                            alpha_bar=0.0, lr=1.0)
    assert np.allclose(new, ref)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 25))
@settings(max_examples=30, deadline=None)
def test_exp3s_step_keeps_distribution_valid(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.05, 5.0, size=n)
    probs, new = exp3s_step(w, arm=int(rng.integers(n)), reward=float(rng.uniform()),
                            gamma_bar=float(rng.uniform(0.0, 0.3)),
                            alpha_bar=float(rng.uniform(0.0, 0.2)))
    assert abs(probs.sum() - 1.0) < 1e-12
    assert (probs > 0).all()
    assert (new > 0).all() and np.isfinite(new).all()


# ---------------------------------------------------------------------------
# SW-UCB


def test_swucb_window_matches_dense_solve_on_tail():
    buffer = [([1.0], 0.0), ([1.0], 1.0), ([1.0], 1.0)]
    # last two samples at lam=1: theta = 2/3; greedy picks the bigger arm
    assert swucb_select(buffer, [[0.4], [0.9]], beta=0.0, w=2) == 1
    state = RidgeState(1, reg=1.0)
    for x, r in buffer[-2:]:
        state.update(x, r)
    assert state.estimate()[0] == pytest.approx(2.0 / 3.0)


def test_swucb_infinite_window_is_linucb():
    rng = np.random.default_rng(5)
    buffer = [(rng.normal(size=3), float(rng.normal())) for _ in range(12)]
    state = RidgeState(3, reg=1.0)
    for x, r in buffer:
        state.update(x, r)
    arms = rng.normal(size=(6, 3))
    assert swucb_select(buffer, arms, beta=0.4, w=10**9) == linucb_select(state, arms, beta=0.4)


def test_swucb_zero_window_is_cold_start():
    buffer = [([1.0, 0.0], 5.0)] * 4
    arms = np.eye(2)
    # no usable history: pure tie on widths, lowest id wins
    assert swucb_select(buffer, arms, beta=1.0, w=0) == 0


def test_swucb_policy_buffer_never_exceeds_window():
    spec = EnvSpec(kind="cbmum", dim=3, horizon=300, num_users=2, pool_size=10,
                   per_round_arms=5, seed=0)
    env = gen_env(spec)
    pol = SWUCBPolicy(env, np.random.default_rng(0), beta=0.5, window=25)
    stream = env.start_trial(0)
    for t in range(1, 301):
        user, arms = stream.sample_round(t)
        a = pol.select(t, user, arms)
        pol.observe(stream.feedback(t, user, arms, a))
        assert len(pol.buffer) <= 25


def test_swucb_policy_rejects_negative_window():
    env = gen_env(EnvSpec(kind="cbmum", dim=2, horizon=10, pool_size=4, seed=0))
    with pytest.raises(ConfigError):
        SWUCBPolicy(env, window=-1)


def test_exp3s_policy_needs_full_pool():
    env = gen_env(EnvSpec(kind="cbmum", dim=2, horizon=10, pool_size=6,
                          per_round_arms=3, seed=0))
    with pytest.raises(ConfigError, match="full arm pool"):
        Exp3SPolicy(env)


# ---------------------------------------------------------------------------
# sublinear regret across the board


def _mean_regret_rates(policy_factory, spec, seeds, checkpoints):
    rates = np.zeros((len(seeds), len(checkpoints)))
    env = gen_env(spec)
    for row, seed in enumerate(seeds):
        pol = policy_factory(env, np.random.default_rng(seed))
        stream = env.start_trial(seed)
        reg = 0.0
        marks = iter(enumerate(checkpoints))
        col, nxt = next(marks)
        for t in range(1, spec.horizon + 1):
            user, arms = stream.sample_round(t)
            a = pol.select(t, user, arms)
            ev = stream.feedback(t, user, arms, a)
            pol.observe(ev)
            reg += ev.oracle_best_value - ev.chosen_value
            if t == nxt:
                rates[row, col] = reg / t
                col, nxt = next(marks, (None, None))
    return rates.mean(axis=0)


@pytest.mark.parametrize("factory,pool", [
    (lambda e, r: LinUCBPolicy(e, r, beta=0.5), 20),
    (lambda e, r: LinUCBIndPolicy(e, r, beta=0.5), 20),
    (lambda e, r: RLinUCBPolicy(e, r, beta=0.5), 20),
    (lambda e, r: CWOFULPolicy(e, r, beta=0.5, alpha_w=1.0), 20),
    (lambda e, r: CWOFULIndPolicy(e, r, beta=0.5, alpha_w=1.0), 20),
    (lambda e, r: ClubPolicy(e, r, beta=0.5), 20),
    (lambda e, r: SWUCBPolicy(e, r, beta=0.5, window=20000), 20),
    # importance weights need lr <= gamma/N for stability, which caps how
    # fast EXP3.S can concentrate; give it a pool it can solve by T=20k
    (lambda e, r: Exp3SPolicy(e, r, gamma_bar=0.03, reward_range=(-1.5, 1.5)), 5),
], ids=["linucb", "linucb_ind", "rlinucb", "cwoful", "cwoful_ind", "club", "swucb", "exp3s"])
def test_stationary_regret_rate_decays(factory, pool):
    spec = EnvSpec(kind="cbmum", dim=5, horizon=20000, num_users=8, num_clusters=1,
                   pool_size=pool, per_round_arms=pool, noise_scale=0.1, seed=4)
    early, late = _mean_regret_rates(factory, spec, seeds=range(10), checkpoints=(1000, 20000))
    assert late < 0.30 * early
