"""Ground-truth Q values for evaluation by Monte-Carlo rollouts.

An environment here is anything with ``gamma``, ``n_actions``,
``observe(raw_states)`` and ``step(raw_states, actions, rng) -> (rewards,
next_raw_states)``; both :class:`~transfqi.simenv.QuadEnvSpec` and
:class:`~transfqi.mdp_core.TabularMDP` qualify. Policies map raw states to
action indices.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .fqi import EngineConfig, run_single_fqi
from .mdp_core import TabularMDP, encode_states, sample_trajectories
from .seeding import derive_seed
from .sieve import BSplineBasis, FeatureMap, greedy_actions, q_matrix
from .simenv import QuadEnvSpec, simulate_task

CHUNK_POINTS = 16


class GreedyPolicy:
    """Greedy with respect to sieve coefficients, acting on observed states."""

    def __init__(self, fmap, coeffs, env):
        self.fmap, self.coeffs, self.env = fmap, coeffs, env

    def __call__(self, raw_states):
        obs = self.env.observe(raw_states)
        return greedy_actions(self.fmap, self.coeffs, obs.reshape(-1, obs.shape[-1])).reshape(
            np.shape(raw_states)[:1])


class TablePolicy:
    def __init__(self, actions):
        self.actions = np.asarray(actions, dtype=np.int64)

    def __call__(self, raw_states):
        return self.actions[np.asarray(raw_states, dtype=np.int64)]


class QuadOptimalPolicy:
    """a = sign(x'Cx) on the raw state.

    The quadratic environment is symmetric under x -> -x, so the expected
    continuation value does not depend on the action and the myopic rule is
    optimal. Ties go to index 0.
    """

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, raw_states):
        x = np.asarray(raw_states, dtype=float)
        return (np.einsum("ni,ij,nj->n", x, self.spec.c_matrix, x) > 0).astype(np.int64)


def truncation_horizon(gamma, vmax, tol=1e-3):
    """Smallest H with gamma^H * vmax <= tol."""
    if gamma == 0 or vmax <= tol:
        return 1
    return max(1, math.ceil(math.log(tol / vmax) / math.log(gamma)))


def _rollout_returns(env, policy, states, actions, horizon, rng):
    """Discounted truncated returns for a batch of start (state, action) pairs."""
    gamma = env.gamma
    total = np.zeros(len(actions))
    discount = 1.0
    s, a = states, actions
    for t in range(horizon):
        r, s = env.step(s, a, rng)
        total += discount * r
        discount *= gamma
        if t + 1 < horizon:
            a = policy(s)
    return total


def mc_q_values(env, policy, states, actions, n_rollouts=500, horizon=None, seed=0,
                vmax=None, tol=1e-3):
    """Monte-Carlo Q^pi(x, a) for many start pairs; returns (estimates, stderrs).

    Start points are processed in fixed-size chunks, each with its own
    derived seed, so results do not depend on how the work is scheduled.
    """
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    states = np.asarray(states)
    if horizon is None:
        if vmax is None:
            raise ValidationError("need horizon or vmax")
        horizon = truncation_horizon(env.gamma, vmax, tol)
    n = len(actions)
    est, se = np.empty(n), np.empty(n)
    for c0 in range(0, n, CHUNK_POINTS):
        idx = np.arange(c0, min(c0 + CHUNK_POINTS, n))
        rng = np.random.default_rng(derive_seed(seed, c0 // CHUNK_POINTS))
        s = np.repeat(states[idx], n_rollouts, axis=0)
        a = np.repeat(actions[idx], n_rollouts)
        G = _rollout_returns(env, policy, s, a, horizon, rng).reshape(len(idx), n_rollouts)
        est[idx] = G.mean(axis=1)
        se[idx] = G.std(axis=1, ddof=1) / np.sqrt(n_rollouts) if n_rollouts > 1 else 0.0
    return est, se


def mc_policy_value(env, policy, x, a, n_rollouts=500, horizon=None, seed=0, vmax=None):
    """Monte-Carlo estimate of the discounted return from (x, a), then following ``policy``."""
    states = np.asarray(x)[None] if np.ndim(x) else np.array([x])
    est, se = mc_q_values(env, policy, states, [a], n_rollouts, horizon, seed, vmax)
    return float(est[0]), float(se[0])


@dataclass(frozen=True)
class ReferenceConfig:
    big_n_traj: int = 2000
    horizon: int = 5                    # length of the simulated training trajectories
    n_eval: int = 200
    n_rollouts: int = 500
    trunc_tol: float = 1e-3
    policy: str = "fqi"                 # "fqi" (greedy w.r.t. large-sample fit) or "exact"
    basis: dict = field(default_factory=lambda: {"degree": 3, "knots_per_dim": 4,
                                                 "mode": "additive"})
    engine: dict = field(default_factory=lambda: {"upsilon": 60, "reuse_all_data": True})

    def __post_init__(self):
        if self.policy not in ("fqi", "exact"):
            raise ValidationError("reference policy must be 'fqi' or 'exact'")

    def to_dict(self):
        return {"big_n_traj": self.big_n_traj, "horizon": self.horizon, "n_eval": self.n_eval,
                "n_rollouts": self.n_rollouts, "trunc_tol": self.trunc_tol,
                "policy": self.policy, "basis": dict(self.basis), "engine": dict(self.engine)}

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(eq=False)
class QStarReference:
    method: str
    states: np.ndarray        # raw start states
    observations: np.ndarray  # what estimators see
    actions: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    vmax: float = np.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("reference values must be finite")

    def __len__(self):
        return len(self.values)

    def to_dict(self):
        return {"method": self.method, "states": np.asarray(self.states).tolist(),
                "observations": self.observations.tolist(), "actions": self.actions.tolist(),
                "values": self.values.tolist(), "stderr": self.stderr.tolist(),
                "vmax": self.vmax, "meta": self.meta}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["method"], np.asarray(doc["states"]), np.asarray(doc["observations"], float),
                   np.asarray(doc["actions"], np.int64), np.asarray(doc["values"], float),
                   np.asarray(doc["stderr"], float), float(doc["vmax"]), doc.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _tabular_setup(mdp, cfg, seed):
    uniform_b = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    initial = np.full(mdp.n_states, 1.0 / mdp.n_states)
    data = sample_trajectories(mdp, uniform_b, initial, cfg.big_n_traj, cfg.horizon,
                               derive_seed(seed, 1))
    fmap = FeatureMap(BSplineBasis(1, 0, mdp.n_states + 1, "tensor"), mdp.n_actions)
    rng = np.random.default_rng(derive_seed(seed, 2))
    states = rng.integers(0, mdp.n_states, size=cfg.n_eval)
    actions = rng.integers(0, mdp.n_actions, size=cfg.n_eval)
    return data, fmap, states, encode_states(states, mdp.n_states).reshape(-1, 1), actions


def _quad_setup(spec, cfg, seed):
    data = simulate_task(spec, cfg.big_n_traj, cfg.horizon, derive_seed(seed, 1))
    fmap = FeatureMap(BSplineBasis(spec.dim, **cfg.basis), 2)
    rng = np.random.default_rng(derive_seed(seed, 2))
    states = spec.sample_initial(cfg.n_eval, rng)
    actions = rng.integers(0, 2, size=cfg.n_eval)
    return data, fmap, states, spec.observe(states), actions


def build_reference(env, config=None, seed=0):
    """Monte-Carlo Q* reference at ``n_eval`` start pairs drawn like (x0, a0).

    With ``policy="fqi"`` the rollout policy is greedy with respect to
    single-task FQI on ``big_n_traj`` simulated trajectories; with
    ``policy="exact"`` the known optimal policy of the environment is used
    (value iteration for tabular MDPs, the sign rule for the quadratic
    environment). Estimates are clipped to +-vmax.
    """
    cfg = config or ReferenceConfig()
    if isinstance(env, TabularMDP):
        data, fmap, states, obs, actions = _tabular_setup(env, cfg, seed)
    elif isinstance(env, QuadEnvSpec):
        data, fmap, states, obs, actions = _quad_setup(env, cfg, seed)
    else:
        raise ValidationError("unsupported environment type %r" % type(env).__name__)
    engine_cfg = EngineConfig(gamma=env.gamma, **{"seed": derive_seed(seed, 3), **cfg.engine})
    fit = run_single_fqi(data, fmap, engine_cfg)
    vmax = fit.coeffs.vmax
    if cfg.policy == "fqi":
        policy = GreedyPolicy(fmap, fit.coeffs, env)
        method = "large_sample_fqi"
    elif isinstance(env, TabularMDP):
        from .mdp_core import greedy_policy, value_iteration
        policy = TablePolicy(greedy_policy(value_iteration(env)))
        method = "tabular_exact"
    else:
        policy = QuadOptimalPolicy(env)
        method = "mc_rollout"
    horizon = truncation_horizon(env.gamma, vmax, cfg.trunc_tol)
    values, stderr = mc_q_values(env, policy, states, actions, cfg.n_rollouts, horizon,
                                 derive_seed(seed, 4))
    values = np.clip(values, -vmax, vmax)
    return QStarReference(method, states, obs, actions, values, stderr, vmax,
                          {"horizon": horizon, "seed": int(seed), "config": cfg.to_dict()})


def eval_error(coeffs, ref, fmap, clip=True):
    """Mean absolute difference between the fitted Q and the reference values."""
    if len(ref) == 0:
        raise ValidationError("empty reference")
    q = q_matrix(fmap, coeffs, ref.observations, clip=clip)
    fitted = q[np.arange(len(ref)), ref.actions]
    return float(np.mean(np.abs(fitted - ref.values)))
