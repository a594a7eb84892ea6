import numpy as np
import pytest

from banditlab import ConfigError
from banditlab.envs import (
    EnvSpec,
    gen_env,
    load_feedback_matrix,
    svd_ingest,
)


def cbmum_spec(**kw):
    base = dict(
        kind="cbmum", dim=10, horizon=100, num_users=20, num_clusters=4,
        pool_size=50, per_round_arms=5, misspec_level=0.2, seed=11,
    )
    base.update(kw)
    return EnvSpec(**base)


# ---------------------------------------------------------------------------
# generation


def test_vectors_are_unit_norm():
    env = gen_env(cbmum_spec())
    assert np.allclose(np.linalg.norm(env.users, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(env.arms, axis=1), 1.0)


def test_round_robin_clusters_balanced():
    env = gen_env(cbmum_spec(num_users=20, num_clusters=4))
    assert np.array_equal(env.cluster_of, np.arange(20) % 4)
    _, counts = np.unique(env.cluster_of, return_counts=True)
    assert counts.max() - counts.min() <= 1


def test_cluster_gap_recorded_and_enforced():
    env = gen_env(cbmum_spec(gap_floor=0.9, seed=3))
    centers = env.users[: env.spec.num_clusters]
    m = env.spec.num_clusters
    d = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
    assert np.min(d[np.triu_indices(m, 1)]) >= 0.9
    assert env.gamma >= 0.9


def test_misspec_matrix_range_and_zero_case():
    env = gen_env(cbmum_spec(misspec_level=0.2))
    assert env.eps.shape == (20, 50)
    assert np.all(np.abs(env.eps) <= 0.2)
    env0 = gen_env(cbmum_spec(misspec_level=0.0))
    assert env0.eps is None
    assert env0.true_mean(0, 0) == pytest.approx(float(env0.arms[0] @ env0.users[0]))


def test_locud_constant_coordinate_scheme():
    spec = EnvSpec(
        kind="locud", dim=11, horizon=1000, num_users=10, num_clusters=2,
        pool_size=30, per_round_arms=5, corruption_mode="flip_first_k",
        corrupted_frac=0.1, seed=5,
    )
    env = gen_env(spec)
    for block in (env.users, env.arms):
        assert np.allclose(block[:, -1], 1.0 / np.sqrt(2.0))
        assert np.allclose(np.linalg.norm(block, axis=1), 1.0)
    assert len(env.corruption.corrupted_users) == 1
    assert env.corruption.flip_k == 20  # default 2% of horizon


def test_invalid_specs_rejected():
    with pytest.raises(ConfigError):
        gen_env(cbmum_spec(num_clusters=30, num_users=20))
    with pytest.raises(ConfigError):
        gen_env(cbmum_spec(per_round_arms=60, pool_size=50))
    with pytest.raises(ConfigError):
        gen_env(cbmum_spec(kind="mystery"))
    with pytest.raises(ConfigError):
        EnvSpec(kind="nonstat2arm", dim=3, horizon=10).validate()


# ---------------------------------------------------------------------------
# sampling


def test_single_user_always_user_zero():
    env = gen_env(cbmum_spec(num_users=1, num_clusters=1))
    s = env.start_trial(0)
    assert all(s.sample_round(t)[0] == 0 for t in range(1, 20))


def test_nonstat_arm_set_fixed():
    env = gen_env(EnvSpec(kind="nonstat2arm", dim=2, horizon=50, drift_scale=1.0))
    assert np.array_equal(env.arms, [[1.0, 0.0], [0.0, 1.0]])
    s = env.start_trial(0)
    for t in (1, 25, 50):
        user, arms = s.sample_round(t)
        assert user == 0
        assert np.array_equal(arms, [0, 1])


def test_user_arrivals_uniform_chisquare():
    # chi-square against uniform multinomial: stat ~ chi2(u-1),
    # mean u-1, sd sqrt(2(u-1)); require within 3 sigma at a fixed seed
    env = gen_env(cbmum_spec(num_users=20, seed=123))
    s = env.start_trial(0)
    n = 100_000
    counts = np.zeros(20)
    for t in range(n):
        u, _ = s.sample_round(1 + t % env.spec.horizon)
        counts[u] += 1
    expected = n / 20
    stat = float(np.sum((counts - expected) ** 2 / expected))
    dof = 19
    assert abs(stat - dof) <= 3.0 * np.sqrt(2 * dof)


def test_candidate_arms_unique_and_in_pool():
    env = gen_env(cbmum_spec())
    s = env.start_trial(1)
    for t in range(1, 50):
        _, arms = s.sample_round(t)
        assert len(set(arms.tolist())) == env.spec.per_round_arms
        assert arms.min() >= 0 and arms.max() < env.spec.pool_size


# ---------------------------------------------------------------------------
# feedback


def test_noiseless_feedback_exact():
    env = gen_env(cbmum_spec(misspec_level=0.0, noise_scale=0.0))
    s = env.start_trial(0)
    user, arms = s.sample_round(1)
    ev = s.feedback(1, user, arms, int(arms[0]))
    assert ev.value == pytest.approx(float(env.arms[arms[0]] @ env.users[user]), abs=0)
    assert ev.oracle_best_value >= ev.chosen_value


def test_misspec_enters_reward_and_oracle():
    env = gen_env(cbmum_spec(noise_scale=0.0))
    s = env.start_trial(0)
    user, arms = s.sample_round(1)
    a = int(arms[2])
    ev = s.feedback(1, user, arms, a)
    want = float(env.arms[a] @ env.users[user]) + env.eps[user, a]
    assert ev.value == pytest.approx(want, abs=0)
    best = max(float(env.arms[j] @ env.users[user]) + env.eps[user, j] for j in arms)
    assert ev.oracle_best_value == pytest.approx(best)


def test_corruption_flip_and_budget_tally():
    spec = EnvSpec(
        kind="locud", dim=6, horizon=200, num_users=5, num_clusters=1,
        pool_size=10, per_round_arms=3, corruption_mode="flip_first_k",
        corrupted_frac=0.2, flip_k=50, noise_scale=0.0, seed=9,
    )
    env = gen_env(spec)
    bad = next(iter(env.corruption.corrupted_users))
    s = env.start_trial(0)
    expected_tally = 0.0
    for t in range(1, 101):
        arms = np.array([0, 1, 2])
        ev = s.feedback(t, bad, arms, 0)
        lin = float(env.arms[0] @ env.users[bad])
        if t <= 50:
            assert ev.value == pytest.approx(-lin, abs=0)
            expected_tally += 2 * abs(lin)
        else:
            assert ev.value == pytest.approx(lin, abs=0)
    assert s.corruption.budget_C == pytest.approx(expected_tally, abs=1e-12)
    # honest users unaffected
    good = next(i for i in range(5) if i not in env.corruption.corrupted_users)
    ev = s.feedback(1, good, np.array([0, 1, 2]), 0)
    assert ev.value == pytest.approx(float(env.arms[0] @ env.users[good]), abs=0)


def test_nonstat_mean_reward_formula():
    horizon, scale = 400, 1.0
    env = gen_env(EnvSpec(kind="nonstat2arm", dim=2, horizon=horizon, drift_scale=scale))
    s = env.start_trial(0)
    for t in (1, 57, 400):
        ev = s.feedback(t, 0, (0, 1), 0)
        want = 0.5 + 0.3 * np.sin(5 * scale * np.pi * t / horizon)
        assert ev.chosen_value == pytest.approx(want, abs=1e-12)
        assert ev.sigma == pytest.approx(np.sqrt((0.5 / t) * (1 - 0.5 / t)))


def test_nonstat_noise_support_and_variance_series():
    horizon = 300
    env = gen_env(EnvSpec(kind="nonstat2arm", dim=2, horizon=horizon))
    s = env.start_trial(3)
    for t in range(1, horizon + 1):
        ev = s.feedback(t, 0, (0, 1), 1)
        eps = ev.value - ev.chosen_value
        q = 0.5 / t
        assert eps == pytest.approx(-q, abs=1e-12) or eps == pytest.approx(1 - q, abs=1e-12)
    ks = np.arange(1, horizon + 1)
    sig2 = (0.5 / ks) * (1 - 0.5 / ks)
    assert sig2.sum() <= 0.5 * (1 + np.log(horizon))


def test_drift_total_variation_within_budget():
    for scale, horizon in ((1.0, 1000), (10.0, 2000)):
        env = gen_env(EnvSpec(kind="nonstat2arm", dim=2, horizon=horizon, drift_scale=scale))
        steps = np.linalg.norm(np.diff(env.theta_path[1:], axis=0), axis=1)
        assert steps.sum() <= env.drift.tv_budget + 1e-6


def test_duel_bit_probability_examples():
    # equal arms -> 0.5; gap ln 3 -> 0.75 (logistic by hand)
    assert 1 / (1 + np.exp(-0.0)) == pytest.approx(0.5)
    assert 1 / (1 + np.exp(-np.log(3.0))) == pytest.approx(0.75)
    spec = EnvSpec(
        kind="dueling", dim=8, horizon=100, num_users=6, num_clusters=2,
        pool_size=30, per_round_arms=5, seed=21,
    )
    env = gen_env(spec)
    s = env.start_trial(0)
    user, arms = s.sample_round(1)
    a1, a2 = int(arms[0]), int(arms[1])
    n = 100_000
    wins = sum(s.duel_feedback(1, user, arms, a1, a2).value for _ in range(n))
    f1 = float(env.arms[a1] @ env.users[user])
    f2 = float(env.arms[a2] @ env.users[user])
    p = 1 / (1 + np.exp(-(f1 - f2)))
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs(wins / n - p) <= 3 * sigma


def test_duel_threshold_mode_deterministic():
    spec = EnvSpec(
        kind="dueling", dim=4, horizon=10, num_users=2, num_clusters=1,
        pool_size=10, per_round_arms=4, duel_mode="threshold", seed=2,
    )
    env = gen_env(spec)
    s = env.start_trial(0)
    user, arms = s.sample_round(1)
    fs = env.arms[arms] @ env.users[user]
    hi, lo = int(arms[np.argmax(fs)]), int(arms[np.argmin(fs)])
    assert s.duel_feedback(1, user, arms, hi, lo).value == 1.0
    assert s.duel_feedback(1, user, arms, lo, hi).value == 0.0


def test_duel_event_regret_fields():
    spec = EnvSpec(
        kind="dueling", dim=4, horizon=10, num_users=2, num_clusters=1,
        pool_size=10, per_round_arms=4, seed=2,
    )
    env = gen_env(spec)
    s = env.start_trial(0)
    user, arms = s.sample_round(1)
    ev = s.duel_feedback(1, user, arms, int(arms[0]), int(arms[1]))
    fs = env.arms[arms] @ env.users[user]
    assert ev.oracle_best_value == pytest.approx(2 * fs.max())
    assert ev.chosen_value == pytest.approx(fs[0] + fs[1])


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_bit_identical_streams():
    def trace(trial):
        env = gen_env(cbmum_spec(seed=77))
        s = env.start_trial(trial)
        out = []
        for t in range(1, 40):
            user, arms = s.sample_round(t)
            ev = s.feedback(t, user, arms, int(arms[0]))
            out.append((user, tuple(arms.tolist()), ev.value))
        return out

    assert trace(4) == trace(4)
    assert trace(4) != trace(5)


def test_structure_deterministic_in_seed():
    a = gen_env(cbmum_spec(seed=31))
    b = gen_env(cbmum_spec(seed=31))
    c = gen_env(cbmum_spec(seed=32))
    assert np.array_equal(a.users, b.users) and np.array_equal(a.arms, b.arms)
    assert not np.array_equal(a.arms, c.arms)


# ---------------------------------------------------------------------------
# key terms


def test_key_term_weights_shape_and_mass():
    spec = EnvSpec(
        kind="conversational", dim=6, horizon=100, num_users=3, num_clusters=1,
        pool_size=40, per_round_arms=5, num_keys=12, seed=8,
    )
    env = gen_env(spec)
    w = env.key_weights
    assert w.shape == (40, 12)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0)  # each arm splits unit mass
    assert np.all(w.sum(axis=0) > 0)  # every key reachable
    # key features are convex combinations of arm vectors
    combo = (w / w.sum(axis=0)).T @ env.arms
    assert np.allclose(env.key_features, combo)
    assert np.all(np.linalg.norm(env.key_features, axis=1) <= 1.0 + 1e-12)


def test_key_feedback_noiseless_mean():
    spec = EnvSpec(
        kind="conversational", dim=6, horizon=100, num_users=3, num_clusters=1,
        pool_size=40, per_round_arms=5, num_keys=12, noise_scale=0.0, seed=8,
    )
    env = gen_env(spec)
    s = env.start_trial(0)
    got = s.key_feedback(1, 2, 7)
    assert got == pytest.approx(float(env.key_features[7] @ env.users[2]), abs=0)


# ---------------------------------------------------------------------------
# svd ingestion


def test_svd_identity_reconstruction():
    users, arms = svd_ingest(np.eye(4), 4)
    assert np.allclose(np.abs(users), np.eye(4))
    assert np.allclose(users @ arms.T, np.eye(4), atol=1e-12)


def test_svd_rank_deficient_pads_and_warns():
    with pytest.warns(UserWarning, match="rank"):
        users, arms = svd_ingest(np.ones((4, 4)), 2)
    assert np.allclose(users[:, 1], 0.0)
    assert np.allclose(arms[:, 1], 0.0)
    assert np.allclose(np.linalg.norm(users, axis=1), 1.0)


def test_svd_truncation_residual_matches_dense_oracle():
    rng = np.random.default_rng(0)
    r = (rng.random((20, 30)) < 0.3).astype(float)
    d = 5
    u, s, vt = np.linalg.svd(r, full_matrices=False)
    oracle_residual = np.sqrt((s[d:] ** 2).sum())
    approx = (u[:, :d] * s[:d]) @ vt[:d]
    assert abs(np.linalg.norm(r - approx) - oracle_residual) < 1e-8
    users, arms = svd_ingest(r, d)
    assert users.shape == (20, d) and arms.shape == (30, d)
    assert np.allclose(np.linalg.norm(users, axis=1), 1.0)


def test_load_feedback_matrix_roundtrip(tmp_path):
    p = tmp_path / "fb.csv"
    p.write_text("1,0,1\n0,1,0\n")
    m = load_feedback_matrix(p)
    assert np.array_equal(m, [[1, 0, 1], [0, 1, 0]])
    q = tmp_path / "bad.csv"
    q.write_text("1,2\n0,1\n")
    with pytest.raises(ConfigError):
        load_feedback_matrix(q)
