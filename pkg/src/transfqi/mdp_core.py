"""Finite MDPs with exact dynamic-programming solutions.

Used as ground truth: value iteration gives Q* exactly (to tolerance), and
:func:`check_lemma1` compares the sup-distance between two optimal Q tables
against the reward/transition discrepancy bound.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import TaskDataset
from .errors import ConvergenceError, DimensionError, ValidationError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray   # [S, A, S']
    reward: np.ndarray       # [S, A]
    gamma: float
    r_max: float = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        if P.ndim != 3 or R.ndim != 2 or P.shape[:2] != R.shape or P.shape[0] != P.shape[2]:
            raise DimensionError("transition must be [S, A, S] and reward [S, A]; got %s and %s"
                                 % (P.shape, R.shape))
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(R))):
            raise ValidationError("transition and reward must be finite")
        if np.any(P < 0):
            raise ValidationError("negative transition probability")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise ValidationError("transition rows must sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma must lie in [0, 1), got %r" % self.gamma)
        r_max = float(np.max(np.abs(R))) if self.r_max is None else float(self.r_max)
        if r_max < np.max(np.abs(R)):
            raise ValidationError("r_max smaller than the largest |reward|")
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.reward.shape[1]

    @property
    def vmax(self):
        return self.r_max / (1.0 - self.gamma)

    # --- environment protocol used by Monte-Carlo rollouts ---------------
    def observe(self, states):
        return encode_states(states, self.n_states)

    def step(self, states, actions, rng):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        cdf = np.cumsum(self.transition[states, actions], axis=-1)
        u = rng.random(states.shape)
        nxt = np.minimum((u[..., None] > cdf).sum(axis=-1), self.n_states - 1)
        return self.reward[states, actions].copy(), nxt

    # --- JSON ------------------------------------------------------------
    def to_dict(self):
        return {"n_states": self.n_states, "n_actions": self.n_actions, "gamma": self.gamma,
                "reward": self.reward.tolist(), "transition": self.transition.tolist()}

    @classmethod
    def from_dict(cls, doc):
        try:
            S, A = int(doc["n_states"]), int(doc["n_actions"])
            P = np.asarray(doc["transition"], dtype=float)
            R = np.asarray(doc["reward"], dtype=float)
            gamma = float(doc["gamma"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError("malformed MDP document: %s" % exc) from exc
        if P.shape != (S, A, S) or R.shape != (S, A):
            raise DimensionError("declared sizes (%d, %d) disagree with arrays" % (S, A))
        return cls(P, R, gamma)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class QTable:
    values: np.ndarray
    iterations: int = 0
    residuals: tuple = field(default_factory=tuple)

    @property
    def residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


@dataclass(frozen=True)
class DiscrepancyReport:
    sup_delta_q: float
    bound: float
    sup_delta_r: float
    tv_delta_rho: float

    @property
    def holds(self):
        return self.sup_delta_q <= self.bound + 1e-9


def bellman_operator(mdp, q):
    """Apply T: r(s,a) + gamma * sum_s' P(s'|s,a) max_a' Q(s',a')."""
    return mdp.reward + mdp.gamma * mdp.transition @ np.max(q, axis=1)


def value_iteration(mdp, tol=1e-10, max_iter=100_000, q0=None):
    """Iterate the Bellman optimality operator from Q0 = 0 until ||TQ - Q|| <= tol."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    q = np.zeros_like(mdp.reward) if q0 is None else np.array(q0, dtype=float)
    residuals = []
    for k in range(max_iter + 1):
        tq = bellman_operator(mdp, q)
        res = float(np.max(np.abs(tq - q)))
        residuals.append(res)
        if res <= tol:
            return QTable(q, k, tuple(residuals))
        q = tq
    raise ConvergenceError("value iteration did not converge in %d sweeps (residual %.3e)"
                           % (max_iter, res), residual=res, iterations=max_iter)


def value_iteration_iterates(mdp, n_iter, q0=None):
    """Return [Q_0, Q_1, ..., Q_n] where Q_{k+1} = T Q_k."""
    q = np.zeros_like(mdp.reward) if q0 is None else np.array(q0, dtype=float)
    out = [q]
    for _ in range(n_iter):
        q = bellman_operator(mdp, q)
        out.append(q)
    return out


def greedy_policy(q):
    """Per-state argmax action; ties go to the lowest action index."""
    values = q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError("Q values must be finite")
    return np.argmax(values, axis=-1)


def check_lemma1(target, source, tol=1e-12):
    """Compare sup|Q*_source - Q*_target| with the reward/transition discrepancy bound."""
    if (target.n_states, target.n_actions) != (source.n_states, source.n_actions):
        raise DimensionError("MDPs differ in state/action counts")
    if target.gamma != source.gamma:
        raise DimensionError("MDPs differ in gamma")
    gamma = target.gamma
    q_t = value_iteration(target, tol=tol).values
    q_s = value_iteration(source, tol=tol).values
    sup_dq = float(np.max(np.abs(q_s - q_t)))
    sup_dr = float(np.max(np.abs(source.reward - target.reward)))
    # integral over x' of sup_{x,a} |delta_rho(x'|x,a)| -> finite sum over s'
    tv = float(np.sum(np.max(np.abs(source.transition - target.transition), axis=(0, 1))))
    r_max = max(target.r_max, source.r_max)
    bound = sup_dr / (1 - gamma) + gamma * r_max / (1 - gamma) ** 2 * tv
    return DiscrepancyReport(sup_dq, bound, sup_dr, tv)


def random_mdp(rng, n_states, n_actions, gamma, reward_scale=1.0):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return TabularMDP(P, R, gamma)


def encode_states(states, n_states):
    """Map state indices to bin centres in [-1, 1] (one bin per state)."""
    s = np.asarray(states, dtype=float)
    return (-1.0 + (2.0 * s + 1.0) / n_states)[..., None]


def decode_states(coords, n_states):
    x = np.asarray(coords, dtype=float).reshape(-1)
    return np.clip(np.floor((x + 1.0) * n_states / 2.0), 0, n_states - 1).astype(np.int64)


def _check_distribution(p, name):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValidationError("%s must be a probability distribution" % name)
    return p


def sample_trajectories(mdp, behavior, initial, count, horizon, seed, reward_noise_sd=0.0):
    """Roll out ``count`` trajectories of length ``horizon`` under a behaviour policy.

    States are stored encoded as bin centres (see :func:`encode_states`) so the
    result can be fed to a degree-0 B-spline feature map.
    """
    behavior = _check_distribution(behavior, "behavior")
    initial = _check_distribution(initial, "initial")
    if behavior.shape != (mdp.n_states, mdp.n_actions) or initial.shape != (mdp.n_states,):
        raise DimensionError("behavior must be [S, A] and initial [S]")
    if count < 0 or horizon < 1:
        raise ValidationError("count must be >= 0 and horizon >= 1")
    if count == 0:
        return TaskDataset.empty(0, 1, mdp.n_actions)
    rng = np.random.default_rng(seed)
    s = rng.choice(mdp.n_states, size=count, p=initial)
    S, A, Rw, Sn = [], [], [], []
    b_cdf = np.cumsum(behavior, axis=1)
    for _ in range(horizon):
        a = np.minimum((rng.random(count)[:, None] > b_cdf[s]).sum(axis=1), mdp.n_actions - 1)
        r, s_next = mdp.step(s, a, rng)
        if reward_noise_sd > 0:
            r = r + reward_noise_sd * rng.standard_normal(count)
        S.append(s); A.append(a); Rw.append(r); Sn.append(s_next)
        s = s_next
    # [horizon, count] -> trajectory-major rows
    S, A, Rw, Sn = (np.stack(v, axis=1).reshape(-1) for v in (S, A, Rw, Sn))
    traj = np.repeat(np.arange(count), horizon)
    t = np.tile(np.arange(horizon), count)
    return TaskDataset(0, encode_states(S, mdp.n_states), A, Rw,
                       encode_states(Sn, mdp.n_states), traj, t, n_actions=mdp.n_actions)
