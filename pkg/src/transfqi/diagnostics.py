"""Plug-in estimates of task discrepancy and design heterogeneity.

Only the reward part of the discrepancy is estimated from data: rewards are
observed directly, so their sieve coefficients come from one regression per
task. The transition part needs transition-density coefficients, which are
not estimated here (for tabular MDPs see ``mdp_core.check_lemma1``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FactorizationError, ValidationError
from .regress import default_ridge, ols_fit


@dataclass(frozen=True)
class DiscrepancyEstimates:
    h_r_hat: float
    c_sigma_hat: float
    per_task_l1: tuple


def estimate_reward_coeffs(dataset, fmap, ridge_eps=None):
    """Ridge-stabilised regression of observed rewards on xi(x, a)."""
    if len(dataset) == 0:
        raise ValidationError("cannot estimate reward coefficients from an empty dataset")
    Z = fmap.design(dataset.states, dataset.actions)
    return ols_fit(Z, dataset.rewards, ridge_eps)


def estimate_hr(coeff_list):
    """max_k ||beta_r^(k) - beta_r^(0)||_1; ``coeff_list[0]`` is the target.

    Returns the h_r part of :class:`DiscrepancyEstimates` (c_sigma_hat is NaN).
    """
    coeffs = [np.asarray(c, dtype=float).reshape(-1) for c in coeff_list]
    if not coeffs:
        raise ValidationError("target coefficients are required")
    if len({c.shape for c in coeffs}) != 1:
        raise ValidationError("coefficient vectors differ in length")
    l1 = tuple(float(np.abs(c - coeffs[0]).sum()) for c in coeffs[1:])
    return DiscrepancyEstimates(max(l1, default=0.0), float("nan"), l1)


def matrix_l1_norm(A):
    """Maximum absolute column sum."""
    return float(np.max(np.sum(np.abs(A), axis=0)))


def c_sigma_from_covariances(covs, weights, ridge_eps=0.0):
    """1 + max_k ||Sbar^{-1} (Sigma_k - Sbar)||_1 with Sbar = sum_k w_k Sigma_k."""
    covs = [np.asarray(S, dtype=float) for S in covs]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    if len(covs) == 1 or all(np.array_equal(S, covs[0]) for S in covs[1:]):
        return 1.0
    sbar = sum(wk * S for wk, S in zip(w, covs))
    reg = sbar + ridge_eps * np.eye(sbar.shape[0])
    cond = np.linalg.cond(reg)
    if not np.isfinite(cond) or cond > 1e15:
        raise FactorizationError("pooled covariance is singular (cond=%.3e)" % cond,
                                 condition=cond)
    return 1.0 + max(matrix_l1_norm(np.linalg.solve(reg, S - sbar)) for S in covs)


def estimate_c_sigma(datasets, fmap, ridge_eps=None):
    """Plug-in heterogeneity constant from per-task empirical Gram matrices."""
    datasets = [d for d in datasets]
    if not datasets:
        raise ValidationError("at least one task is required")
    if len(datasets) == 1:
        return 1.0
    designs = [fmap.design(d.states, d.actions) for d in datasets]
    covs = [Z.T @ Z / Z.shape[0] for Z in designs]
    sizes = [Z.shape[0] for Z in designs]
    if ridge_eps is None:
        ridge_eps = default_ridge(np.vstack(designs))
    return c_sigma_from_covariances(covs, sizes, ridge_eps)


def estimate_discrepancy(datasets, fmap, ridge_eps=None):
    """h_r and C_Sigma plug-ins for a target (task 0) and its sources."""
    datasets = sorted(datasets, key=lambda d: d.task_id)
    if datasets[0].task_id != 0:
        raise ValidationError("target task (id 0) missing")
    coeffs = [estimate_reward_coeffs(d, fmap, ridge_eps) for d in datasets]
    hr = estimate_hr(coeffs)
    return DiscrepancyEstimates(hr.h_r_hat, estimate_c_sigma(datasets, fmap, ridge_eps),
                                hr.per_task_l1)
