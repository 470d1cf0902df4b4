import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualpatrol import policy
from dualpatrol.policy import (
    EpisodeTrace,
    OffPolicyError,
    PolicyParams,
    action_distribution,
    centered_reward_to_go,
    encode_input,
    init_params,
    joint_action_distribution,
    log_prob,
    oracle_greedy_policy,
    policy_gradient_step,
    sample_lambda_for_training,
    score_gradient,
    weighted_reward,
)


def random_params(rng, n_tiles=3, m=3, hidden=6, scale=1.0):
    d = n_tiles + m
    return PolicyParams(
        W1=rng.normal(0, scale, (hidden, d)), b1=rng.normal(0, scale, hidden),
        W2=rng.normal(0, scale, (m, hidden)), b2=rng.normal(0, scale, m),
        n_tiles=n_tiles, lambda_max=5.0, weight_cap=100.0,
    )


def reference_probs(p, tile, lam):
    x = np.zeros(p.n_tiles + p.n_zones)
    x[tile] = 1
    x[p.n_tiles:] = np.asarray(lam) / p.lambda_max
    h = np.array([max(0.0, v) for v in p.W1 @ x + p.b1])
    z = p.W2 @ h + p.b2
    e = np.exp(z - z.max())
    return e / e.sum()


# -- distribution ------------------------------------------------------------

def test_zero_weights_uniform():
    p = random_params(np.random.default_rng(0), m=4)
    for k in policy.PARAM_NAMES:
        getattr(p, k)[...] = 0
    assert np.allclose(action_distribution(p, 1, np.ones(4)), 0.25)


def test_saturated_logit():
    p = random_params(np.random.default_rng(0))
    p.W2[...] = 0
    p.b2[...] = [800.0, 0.0, 0.0]
    probs = action_distribution(p, 0, np.zeros(3))
    assert probs[0] == pytest.approx(1.0) and probs.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**31), st.integers(0, 2), st.lists(st.floats(0, 20), min_size=3, max_size=3))
def test_matches_reference_forward_pass(seed, tile, lam):
    p = random_params(np.random.default_rng(seed))
    got = action_distribution(p, tile, lam)
    assert np.allclose(got, reference_probs(p, tile, lam), atol=1e-10, rtol=0)
    assert (got > 0).all() and abs(got.sum() - 1) <= 1e-12


def test_non_finite_logits_raise():
    p = random_params(np.random.default_rng(0))
    p.b2[0] = np.nan
    with pytest.raises(FloatingPointError):
        action_distribution(p, 0, np.zeros(3))


def test_input_validation():
    p = random_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        encode_input(p, 0, [-1.0, 0, 0])
    with pytest.raises(ValueError):
        encode_input(p, 3, [0.0, 0, 0])
    x = encode_input(p, 2, [5.0, 0, 2.5])
    assert x.tolist() == [[0, 0, 1, 1.0, 0, 0.5]]


# -- weighted reward ---------------------------------------------------------

def test_weighted_reward_examples():
    assert weighted_reward([1, 0, 1], [0, 0, 0], [0.1, 0.2, 0.3]) == 0
    assert weighted_reward([1, 1, 1], [1, 0, 0], [0.1, 0.1, 0.1]) == pytest.approx(0.9)
    assert weighted_reward([0.3, 0.4], [2.0, 5.0], [0.3, 0.4]) == 0
    with pytest.raises(ValueError):
        weighted_reward([1, 0], [1.0], [0.1, 0.1])


# -- gradients ---------------------------------------------------------------

def _fd_gradient(p, x, a, h=1e-6):
    flat = p.flat()
    g = np.zeros_like(flat)
    for i in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (log_prob(p.with_flat(up), x, a)[0] - log_prob(p.with_flat(dn), x, a)[0]) / (2 * h)
    return g


def _flat(grads):
    return np.concatenate([grads[k].ravel() for k in policy.PARAM_NAMES])


def test_score_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(100):
        p = random_params(rng, n_tiles=int(rng.integers(1, 4)), m=int(rng.integers(2, 5)),
                          hidden=int(rng.integers(2, 8)), scale=0.5)
        x = encode_input(p, int(rng.integers(p.n_tiles)), rng.uniform(0, 10, p.n_zones))
        a = int(rng.integers(p.n_zones))
        g = _flat(score_gradient(p, x, [a]))
        fd = _fd_gradient(p, x, a)
        # central differences carry ~1e-10 rounding noise, hence the absolute floor
        scale = max(np.linalg.norm(g), np.linalg.norm(fd))
        assert np.linalg.norm(g - fd) <= 1e-4 * scale + 1e-8


def test_batched_gradient_is_weighted_sum():
    rng = np.random.default_rng(1)
    p = random_params(rng)
    x = encode_input(p, [0, 1, 2], rng.uniform(0, 5, 3))
    a, w = [2, 0, 1], np.array([0.5, -1.0, 2.0])
    total = _flat(score_gradient(p, x, a, w))
    parts = sum(wi * _flat(score_gradient(p, x[i:i + 1], [a[i]])) for i, wi in enumerate(w))
    assert np.allclose(total, parts, atol=1e-12)


def test_score_function_has_zero_mean():
    rng = np.random.default_rng(7)
    p = random_params(rng, hidden=8, scale=0.7)
    tile, lam = 1, np.array([1.0, 3.0, 0.5])
    x = encode_input(p, tile, lam)
    probs = action_distribution(p, tile, lam)
    per_action = np.stack([_flat(score_gradient(p, x, [a])) for a in range(3)])
    acts = rng.choice(3, size=100_000, p=probs)
    # logit-space score e_a - pi, then random projections of the parameter score
    logit_score = np.eye(3)[acts] - probs
    for j in range(3):
        v = logit_score[:, j]
        assert abs(v.mean()) <= 3 * v.std(ddof=1) / np.sqrt(len(v))
    for u in rng.normal(size=(5, per_action.shape[1])):
        v = (per_action @ u)[acts]
        assert abs(v.mean()) <= 3 * v.std(ddof=1) / np.sqrt(len(v))
    # the exact expectation vanishes as well
    assert np.allclose(probs @ per_action, 0, atol=1e-12)


def test_separability(quiet):
    rng = np.random.default_rng(3)
    ps = [random_params(rng) for _ in range(3)]
    tiles = [0, 2, 1]
    lam = np.array([0.5, 1.0, 4.0])
    joint = joint_action_distribution(ps, tiles, lam)
    assert joint.shape == (3, 3, 3) and joint.sum() == pytest.approx(1.0)
    for a in np.ndindex(joint.shape):
        per_agent = sum(log_prob(p, encode_input(p, t, lam), [ai])[0] for p, t, ai in zip(ps, tiles, a))
        assert np.log(joint[a]) == pytest.approx(per_agent, abs=1e-12)


# -- policy-gradient step ----------------------------------------------------

def _trace(p, tiles, actions, rewards, lam, c):
    return EpisodeTrace(0, np.array(tiles), np.array(actions), np.array(rewards, dtype=float),
                        np.array(lam, dtype=float), np.array(c, dtype=float), p.fingerprint())


def test_zero_advantage_leaves_params_unchanged():
    p = random_params(np.random.default_rng(0))
    tr = _trace(p, [0, 1, 2], [0, 1, 2], [[1, 0, 0]] * 3, [1, 1, 1], [0.1, 0.1, 0.1])
    out = policy_gradient_step(p, [tr], 0.5)
    assert out.flat().tobytes() == p.flat().tobytes()


def test_bandit_step_favours_rewarded_action():
    p = init_params(1, 2, 4, np.random.default_rng(0), lambda_max=1.0)
    before = action_distribution(p, 0, [1.0, 0.0])[0]
    # action 0 pays (zone 0 reached), action 1 pays nothing
    tr = _trace(p, [0, 0], [0, 1], [[1, 0], [0, 0]], [1.0, 0.0], [0.5, 0.5])
    out = policy_gradient_step(p, [tr], 1.0)
    assert action_distribution(out, 0, [1.0, 0.0])[0] > before


def test_centered_reward_to_go():
    q = centered_reward_to_go([1.0, 0.0, 2.0])
    assert q.tolist() == pytest.approx([0.0, 0.0, 1.0])


def test_off_policy_traces_rejected():
    rng = np.random.default_rng(0)
    p = random_params(rng)
    tr = _trace(p, [0], [0], [[1, 0, 0]], [1, 1, 1], [0.1] * 3)
    q = p.copy()
    q.b2[0] += 1e-9
    with pytest.raises(OffPolicyError):
        policy_gradient_step(q, [tr], 0.1)


def test_weights_capped():
    p = init_params(2, 2, 4, np.random.default_rng(0), weight_cap=0.5)
    tr = _trace(p, [0, 1, 0, 1], [0, 1, 1, 0], [[1, 0], [0, 0], [0, 1], [1, 1]], [3.0, 1.0], [0.2, 0.2])
    out = policy_gradient_step(p, [tr], 1e6)
    assert max(np.abs(getattr(out, k)).max() for k in policy.PARAM_NAMES) <= 0.5


def test_adam_direction_is_ascent():
    p = init_params(1, 2, 4, np.random.default_rng(0), lambda_max=1.0)
    before = action_distribution(p, 0, [1.0, 0.0])[0]
    tr = _trace(p, [0, 0], [0, 1], [[1, 0], [0, 0]], [1.0, 0.0], [0.5, 0.5])
    out = policy_gradient_step(p, [tr], 0.01, policy.Adam())
    assert action_distribution(out, 0, [1.0, 0.0])[0] > before


def test_sampled_actions_follow_distribution():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    lam = np.array([1.0, 2.0, 0.0])
    probs = action_distribution(p, 1, lam)
    draws = np.bincount([policy.sample_action(p, 1, lam, rng) for _ in range(20_000)], minlength=3) / 20_000
    assert np.all(np.abs(draws - probs) < 4 * np.sqrt(probs * (1 - probs) / 20_000) + 1e-9)


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    p = init_params(4, 3, 5, np.random.default_rng(0))
    policy.save_checkpoint(p, tmp_path / "a.json", "abc")
    q = policy.load_checkpoint(tmp_path / "a.json")
    assert q.fingerprint() == p.fingerprint() and q.lambda_max == p.lambda_max
    import json

    data = json.loads((tmp_path / "a.json").read_text())
    assert data["config_hash"] == "abc" and data["shapes"]["W1"] == [5, 7]
    data["version"] = 99
    with pytest.raises(ValueError):
        PolicyParams.from_dict(data)


# -- oracle ------------------------------------------------------------------

def test_oracle_top_zones(plan):
    acts = oracle_greedy_policy([3, 2, 1, 0, 0, 0], plan.zone_centers[[3, 4, 5]], plan)
    assert sorted(acts.tolist()) == [0, 1, 2]


def test_oracle_ties_go_to_low_indices(plan):
    acts = oracle_greedy_policy(np.ones(6), plan.zone_centers[[5, 4, 3, 2]], plan)
    assert sorted(acts.tolist()) == [0, 1, 2, 3]


def test_oracle_identity_when_parked(plan):
    lam = [5, 0, 4, 0, 3, 6]
    order = [5, 0, 2, 4]
    acts = oracle_greedy_policy(lam, plan.zone_centers[order], plan)
    assert acts.tolist() == order


def test_greedy_matching_oracle():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    # cheapest pair (1, 1) first, then (2, 2) at 2, then (0, 0) at 4
    assert policy.greedy_matching(cost).tolist() == [0, 1, 2]


@given(st.lists(st.floats(0, 50), min_size=6, max_size=6), st.floats(0.01, 100), st.integers(1, 6))
def test_oracle_scale_invariant(plan, lam, scale, n):
    pos = plan.spawn[:n] if n <= 5 else plan.zone_centers[:n]
    a = oracle_greedy_policy(np.array(lam), pos, plan)
    b = oracle_greedy_policy(np.array(lam) * scale, pos, plan)
    if len(set(lam)) == len(lam):
        assert (a == b).all()


def test_oracle_needs_enough_zones(plan):
    with pytest.raises(ValueError):
        oracle_greedy_policy(np.ones(6), np.zeros((7, 2)) + 3, plan)


# -- training multipliers ------------------------------------------------------

def test_lambda_point_mass():
    assert sample_lambda_for_training(np.random.default_rng(0), 4, kind="zero").tolist() == [0] * 4


def test_lambda_uniform_mean():
    rng = np.random.default_rng(0)
    draws = np.array([sample_lambda_for_training(rng, 1, 10.0, kind="uniform")[0] for _ in range(100_000)])
    assert abs(draws.mean() - 5.0) <= 0.05


def test_lambda_mixture():
    rng = np.random.default_rng(1)
    draws = np.array([sample_lambda_for_training(rng, 6, 10.0, 0.1) for _ in range(5000)])
    assert (draws >= 0).all() and (draws <= 10).all()
    one_hot = (np.count_nonzero(draws, axis=1) == 1).mean()
    assert abs(one_hot - 0.1) < 0.02
