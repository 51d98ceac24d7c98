"""Self-verification suites shared by ``transfqi check`` and the test suite.

* ``q_gap_suite``: the Q* discrepancy bound on random tabular MDP pairs.
* ``oracle_equivalence``: sieve FQI with a one-hot (degree-0) basis and exact
  Bellman-backup responses must reproduce value-iteration iterates.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dataset import TaskDataset
from .fqi import EngineConfig, run_single_fqi
from .mdp_core import (check_lemma1, decode_states, encode_states, random_mdp,
                       value_iteration_iterates, TabularMDP)
from .sieve import BSplineBasis, FeatureMap, q_matrix


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        return "%-20s %s  %s (%.2fs)" % (self.name, "PASS" if self.passed else "FAIL",
                                         self.detail, self.seconds)


def random_pair(rng, n_states, n_actions, gamma):
    """A random target and a source that shrinks part of the way toward another random MDP."""
    target = random_mdp(rng, n_states, n_actions, gamma)
    other = random_mdp(rng, n_states, n_actions, gamma)
    eps = rng.uniform()
    P = (1 - eps) * target.transition + eps * other.transition
    R = (1 - eps) * target.reward + eps * other.reward
    return target, TabularMDP(P / P.sum(axis=2, keepdims=True), R, gamma)


def q_gap_suite(n_pairs=200, seed=0):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, failures = -np.inf, 0
    for _ in range(n_pairs):
        target, source = random_pair(rng, int(rng.integers(3, 7)), int(rng.integers(2, 4)),
                                     float(rng.choice([0.5, 0.9])))
        rep = check_lemma1(target, source)
        failures += not rep.holds
        worst = max(worst, rep.sup_delta_q - rep.bound)
    return CheckResult("q_gap_bound", failures == 0,
                       "%d/%d pairs within bound, max(lhs - rhs) = %.3g"
                       % (n_pairs - failures, n_pairs, worst),
                       time.perf_counter() - t0)


def one_hot_fmap(n_states, n_actions):
    """Degree-0 splines with one bin per encoded state: an indicator basis."""
    return FeatureMap(BSplineBasis(1, degree=0, knots_per_dim=n_states + 1, mode="tensor"),
                      n_actions)


def all_pairs_dataset(mdp):
    """One length-1 trajectory per (state, action), so every cell is observed once."""
    S, A = mdp.n_states, mdp.n_actions
    s = np.repeat(np.arange(S), A)
    a = np.tile(np.arange(A), S)
    x = encode_states(s, S)
    return TaskDataset(0, x, a, mdp.reward[s, a], x, np.arange(S * A), np.zeros(S * A, int),
                       n_actions=A)


def exact_backup(mdp):
    """Response hook: r(s,a) + gamma * E[max_a' Q_prev(s', a')] with the true kernel."""
    grid = encode_states(np.arange(mdp.n_states), mdp.n_states)

    def response(sub, coeffs, fmap, gamma):
        s = decode_states(sub.states, mdp.n_states)
        v = q_matrix(fmap, coeffs, grid, clip=False).max(axis=1)
        return mdp.reward[s, sub.actions] + gamma * mdp.transition[s, sub.actions] @ v
    return response


def fqi_iterates_exact(mdp, n_iter):
    """Sieve-FQI iterates as [Q_0, ..., Q_n] tables under exact backups."""
    fmap = one_hot_fmap(mdp.n_states, mdp.n_actions)
    cfg = EngineConfig(gamma=mdp.gamma, upsilon=n_iter, reuse_all_data=True, clip=False,
                       ridge_eps=0.0)
    fit = run_single_fqi(all_pairs_dataset(mdp), fmap, cfg, response_fn=exact_backup(mdp))
    grid = encode_states(np.arange(mdp.n_states), mdp.n_states)
    return [fmap.q_values(b, grid) for b in fit.target_iterates]


def oracle_equivalence(n_iter=50, seed=0, n_states=5, n_actions=2, gamma=0.9, tol=1e-9):
    t0 = time.perf_counter()
    mdp = random_mdp(np.random.default_rng(seed), n_states, n_actions, gamma)
    ours = fqi_iterates_exact(mdp, n_iter)
    ref = value_iteration_iterates(mdp, n_iter)
    dev = max(float(np.max(np.abs(a - b))) for a, b in zip(ours, ref))
    return CheckResult("oracle_equivalence", dev <= tol,
                       "max deviation over %d iterations = %.3g (tol %.0e)" % (n_iter, dev, tol),
                       time.perf_counter() - t0)


def run_all(seed=0):
    return [q_gap_suite(seed=seed), oracle_equivalence(seed=seed)]
