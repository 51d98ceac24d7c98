import numpy as np
import pytest

from transfqi.errors import ValidationError
from transfqi.mdp_core import TabularMDP, greedy_policy, random_mdp, value_iteration
from transfqi.oracle import (QStarReference, QuadOptimalPolicy, ReferenceConfig, TablePolicy,
                             build_reference, eval_error, mc_policy_value, mc_q_values,
                             truncation_horizon)
from transfqi.sieve import BSplineBasis, FeatureMap, QCoefficients, eval_q, q_matrix
from transfqi.simenv import QuadEnvSpec, make_target_spec


def always(index):
    return lambda s: np.full(len(s), index, dtype=np.int64)


def quiet(spec, gamma=None):
    return QuadEnvSpec(spec.c_matrix, gamma=spec.gamma if gamma is None else gamma,
                       state_noise_sd=0.0, reward_noise_sd=0.0)


@pytest.mark.parametrize("gamma,vmax,tol", [(0.9, 50.0, 1e-3), (0.6, 7.5, 1e-3), (0.5, 1.0, 0.1)])
def test_truncation_horizon_is_smallest(gamma, vmax, tol):
    H = truncation_horizon(gamma, vmax, tol)
    assert gamma ** H * vmax <= tol < gamma ** (H - 1) * vmax


def test_gamma_zero_gives_immediate_reward():
    spec = quiet(make_target_spec(0), gamma=0.0)
    x = np.array([0.3, -1.2, 0.5])
    est, se = mc_policy_value(spec, always(0), x, 1, n_rollouts=5, horizon=1)
    assert est == spec.mean_reward(x, 1) and se == 0.0


def test_deterministic_closed_form():
    spec = quiet(make_target_spec(1), gamma=0.8)
    x0 = np.array([1.0, -0.5, 2.0])
    H = 60
    expected, x = 0.0, x0
    for t in range(H):
        expected += 0.8 ** t * (x @ spec.c_matrix @ x)
        x = 0.75 * np.array([1, -1, 1]) * x
    est, _ = mc_policy_value(spec, always(1), x0, 1, n_rollouts=3, horizon=H)
    assert est == pytest.approx(expected, abs=1e-10)


def test_truncation_control():
    spec = quiet(make_target_spec(2), gamma=0.9)
    x = np.random.default_rng(0).normal(size=(5, 3))
    vmax = 50.0
    H = truncation_horizon(0.9, vmax)
    pol = QuadOptimalPolicy(spec)
    short, _ = mc_q_values(spec, pol, x, [0, 1, 0, 1, 0], 2, H)
    long_, _ = mc_q_values(spec, pol, x, [0, 1, 0, 1, 0], 2, 2 * H)
    # without noise |r_t| <= |C| |x|^2 0.75^(2t), so the tail past H is geometric
    scale = np.linalg.norm(spec.c_matrix, 2) * np.sum(x ** 2, axis=1)
    rho = 0.9 * 0.75 ** 2
    assert np.all(np.abs(short - long_) <= scale * rho ** H / (1 - rho) + 1e-12)


def test_tabular_mc_matches_value_iteration():
    mdp = random_mdp(np.random.default_rng(5), 4, 2, 0.8)
    q = value_iteration(mdp, tol=1e-12).values
    pol = TablePolicy(greedy_policy(q))
    s = np.repeat(np.arange(4), 2)
    a = np.tile(np.arange(2), 4)
    est, se = mc_q_values(mdp, pol, s, a, n_rollouts=2000, vmax=mdp.vmax, seed=3)
    assert np.all(np.abs(est - q[s, a]) <= 3 * se)


def test_mc_unbiased_over_seeds():
    mdp = random_mdp(np.random.default_rng(6), 3, 2, 0.7)
    q = value_iteration(mdp, tol=1e-12).values
    pol = TablePolicy(greedy_policy(q))
    runs = [mc_q_values(mdp, pol, [1], [0], n_rollouts=200, vmax=mdp.vmax, seed=s)
            for s in range(30)]
    est = np.array([r[0][0] for r in runs])
    pooled_se = np.sqrt(np.mean([r[1][0] ** 2 for r in runs]) / len(runs))
    assert abs(est.mean() - q[1, 0]) <= 4 * pooled_se


def test_mc_chunking_independent_of_batch():
    spec = make_target_spec(3)
    x = np.random.default_rng(1).normal(size=(40, 3))
    a = np.arange(40) % 2
    full, _ = mc_q_values(spec, always(0), x, a, 20, 10, seed=4)
    head, _ = mc_q_values(spec, always(0), x[:16], a[:16], 20, 10, seed=4)
    assert np.array_equal(full[:16], head)


def test_mc_needs_horizon_or_vmax():
    with pytest.raises(ValidationError):
        mc_q_values(make_target_spec(0), always(0), np.zeros((1, 3)), [0])


# --- the sign rule is optimal for the quadratic environment -------------------

def test_continuation_value_does_not_depend_on_action():
    spec = make_target_spec(7, gamma=0.9)
    pol = QuadOptimalPolicy(spec)
    x = np.random.default_rng(2).normal(size=(6, 3))
    H = truncation_horizon(0.9, 60.0)
    q1, se1 = mc_q_values(spec, pol, x, np.ones(6, int), 4000, H, seed=1)
    q0, se0 = mc_q_values(spec, pol, x, np.zeros(6, int), 4000, H, seed=2)
    gap = 2 * np.einsum("ni,ij,nj->n", x, spec.c_matrix, x)
    assert np.all(np.abs((q1 - q0) - gap) <= 4 * np.hypot(se0, se1))


def test_sign_rule_beats_alternatives():
    spec = make_target_spec(8, gamma=0.9)
    x = np.random.default_rng(3).normal(size=(8, 3))
    a = np.arange(8) % 2
    H = truncation_horizon(0.9, 60.0)
    best, se_b = mc_q_values(spec, QuadOptimalPolicy(spec), x, a, 2000, H, seed=5)
    flipped = lambda s: 1 - QuadOptimalPolicy(spec)(s)
    for pol in (always(0), always(1), flipped):
        other, se_o = mc_q_values(spec, pol, x, a, 2000, H, seed=5)
        assert np.all(best >= other - 3 * np.hypot(se_b, se_o))
        assert np.mean(best - other) > 0


# --- references ---------------------------------------------------------------

SMALL = dict(big_n_traj=200, n_eval=30, n_rollouts=60)


def test_reference_reproducible_and_bounded():
    spec = make_target_spec(0)
    for policy in ("fqi", "exact"):
        cfg = ReferenceConfig(policy=policy, **SMALL)
        a, b = build_reference(spec, cfg, seed=4), build_reference(spec, cfg, seed=4)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.states, b.states)
        assert np.all(np.abs(a.values) <= a.vmax)
        assert np.all(a.stderr >= 0)
    assert a.method == "mc_rollout"


def test_tabular_reference_matches_exact_q():
    mdp = random_mdp(np.random.default_rng(9), 4, 2, 0.8)
    q = value_iteration(mdp, tol=1e-12).values
    ref = build_reference(mdp, ReferenceConfig(big_n_traj=400, n_eval=12, n_rollouts=1000),
                          seed=1)
    assert ref.method == "large_sample_fqi"
    truth = q[ref.states, ref.actions]
    assert np.all(np.abs(ref.values - truth) <= 3 * ref.stderr + 1e-12)


def test_reference_json_round_trip(tmp_path):
    ref = build_reference(make_target_spec(1), ReferenceConfig(policy="exact", **SMALL), seed=2)
    path = tmp_path / "ref.json"
    ref.save(path)
    back = QStarReference.load(path)
    for name in ("states", "observations", "actions", "values", "stderr"):
        assert np.array_equal(getattr(back, name), getattr(ref, name))
    assert back.vmax == ref.vmax and back.meta == ref.meta


def test_reference_config_validation():
    with pytest.raises(ValidationError):
        ReferenceConfig(policy="oracle")
    with pytest.raises(ValidationError):
        build_reference(object())


# --- eval_error ---------------------------------------------------------------

def planted_reference(rng, fmap, n=50):
    beta = rng.normal(size=fmap.dim)
    obs = rng.uniform(-1, 1, size=(n, 3))
    acts = rng.integers(0, 2, n)
    vals = q_matrix(fmap, QCoefficients(beta), obs, clip=False)[np.arange(n), acts]
    return beta, QStarReference("mc_rollout", np.arctanh(obs), obs, acts, vals, np.zeros(n))


def test_eval_error_examples():
    rng = np.random.default_rng(0)
    fmap = FeatureMap(BSplineBasis(3), 2)
    beta, ref = planted_reference(rng, fmap)
    assert eval_error(QCoefficients(beta), ref, fmap) == pytest.approx(0.0, abs=1e-12)
    shifted = beta.copy()
    shifted[[fmap.p - 1, 2 * fmap.p - 1]] += 0.7      # both intercepts
    assert eval_error(QCoefficients(shifted), ref, fmap) == pytest.approx(0.7, abs=1e-12)
    empty = QStarReference("mc_rollout", np.zeros((0, 3)), np.zeros((0, 3)),
                           np.zeros(0, int), np.zeros(0), np.zeros(0))
    with pytest.raises(ValidationError):
        eval_error(QCoefficients(beta), empty, fmap)


def test_eval_error_matches_naive_loop():
    rng = np.random.default_rng(1)
    fmap = FeatureMap(BSplineBasis(3), 2)
    _, ref = planted_reference(rng, fmap)
    coeffs = QCoefficients(rng.normal(size=fmap.dim), vmax=2.0)
    naive = sum(abs(eval_q(fmap, coeffs, x, a) - v)
                for x, a, v in zip(ref.observations, ref.actions, ref.values)) / len(ref)
    assert eval_error(coeffs, ref, fmap) == pytest.approx(naive, abs=1e-12)


def test_reference_rejects_nonfinite():
    with pytest.raises(ValidationError):
        QStarReference("mc_rollout", np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1, int),
                       np.array([np.nan]), np.zeros(1))


def test_table_policy():
    assert TablePolicy([1, 0, 1])(np.array([2, 1])).tolist() == [1, 0]
    mdp = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    est, _ = mc_policy_value(mdp, TablePolicy([0]), 0, 0, n_rollouts=2, vmax=mdp.vmax)
    assert est == pytest.approx(2.0, abs=2e-3)
