"""Fitted Q-iteration engines: single task, pooled one-step, and two-step transfer.

All three share one loop. At iteration tau every task k builds pseudo
responses on its own data subset from its previous coefficients; the rows
of all tasks are pooled into one least-squares fit (the common part), and
in the two-step engine each task then fits an l1-penalised correction to
its own residuals.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import regress
from .errors import SolverError, ValidationError
from .seeding import derive_seed
from .sieve import QCoefficients, q_matrix


TWO_STEP, ONE_STEP, NO_TRANSFER = "two_step", "one_step", "no_transfer"
HISTORY_COLUMNS = ("tau", "task_id", "l1_delta", "linf_beta_change", "chosen_lambda",
                   "step1_residual")


class SmallSampleWarning(UserWarning):
    """A least-squares step had fewer rows than coefficients."""


@dataclass(frozen=True)
class EngineConfig:
    gamma: float = 0.9
    upsilon: int = 10
    lam: Optional[float] = None          # fixed penalty; None selects it by CV
    lambda_grid: Optional[Sequence[float]] = None   # absolute grid; None -> relative default
    n_lambda: int = 20
    cv_folds: int = 5
    cv_once: bool = False
    reuse_all_data: bool = False
    clip: bool = True
    vmax: Optional[float] = None
    ridge_eps: Optional[float] = None    # None -> 1e-8 * trace(Z'Z/n) / q
    init: str = "zero"                   # or "normal"
    init_sd: float = 0.1
    seed: int = 0
    lasso_tol: float = 1e-9
    lasso_max_iter: int = 20_000
    cv_tol: float = 1e-6                 # held-out scoring does not need KKT-grade fits

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValidationError("gamma must lie in [0, 1)")
        if self.upsilon < 1:
            raise ValidationError("upsilon must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.init not in ("zero", "normal"):
            raise ValidationError("init must be 'zero' or 'normal'")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be >= 2")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError("unknown engine option(s): %s" % ", ".join(sorted(unknown)))
        return cls(**doc)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if out["lambda_grid"] is not None:
            out["lambda_grid"] = list(out["lambda_grid"])
        return out


@dataclass(frozen=True)
class HistoryRow:
    tau: int
    task_id: int
    l1_delta: float
    linf_beta_change: float
    chosen_lambda: float
    step1_residual: float

    def as_tuple(self):
        return tuple(getattr(self, c) for c in HISTORY_COLUMNS)


@dataclass
class TransFQIState:
    tau: int
    w_hat: QCoefficients
    delta_hat: dict
    beta_hat: dict
    split: dict

    def target(self):
        return self.beta_hat[0]


@dataclass
class FQIResult:
    method: str
    state: TransFQIState
    history: list = field(default_factory=list)
    target_iterates: list = field(default_factory=list)   # beta^(0)_tau, tau = 0..Upsilon
    access_log: dict = field(default_factory=dict)         # (tau, task_id) -> row indices

    @property
    def coeffs(self):
        return self.state.target()


def split_dataset(data, upsilon, seed):
    """Randomly partition a task's rows into ``upsilon`` disjoint subsets.

    Whole trajectories move together; subset sizes (in trajectories) differ
    by at most one.
    """
    if upsilon < 1:
        raise ValidationError("upsilon must be >= 1")
    rows = data.trajectory_rows()
    if len(rows) < upsilon:
        raise ValidationError("task %d has %d trajectories, fewer than upsilon=%d"
                              % (data.task_id, len(rows), upsilon))
    perm = np.random.default_rng(seed).permutation(len(rows))
    parts = np.array_split(perm, upsilon)
    return [np.sort(np.concatenate([rows[i] for i in part])) for part in parts]


def pseudo_response(subset, coeffs_prev, fmap, gamma, clip=True):
    """Y = R + gamma * max_a' Q_prev(X', a'), with Q_prev clipped to +-vmax."""
    if gamma == 0 or len(subset) == 0:
        return subset.rewards.copy()
    q_next = q_matrix(fmap, coeffs_prev, subset.next_states, clip=clip)
    return subset.rewards + gamma * q_next.max(axis=1)


def _vmax(datasets, cfg):
    if cfg.vmax is not None:
        return float(cfg.vmax)
    r_max = max((float(np.max(np.abs(d.rewards))) for d in datasets if len(d)), default=0.0)
    return max(r_max, 1e-12) / (1.0 - cfg.gamma)


def _initial_beta(cfg, q, key):
    if cfg.init == "zero":
        return np.zeros(q)
    return cfg.init_sd * np.random.default_rng(derive_seed(cfg.seed, 3, key)).standard_normal(q)


def _fallback_lambda(Z, r):
    n, q = Z.shape
    return float(np.std(r)) * np.sqrt(2.0 * np.log(max(q, 2)) / n)


def _choose_lambda(Z, r, groups, cfg, tau, k):
    if cfg.lam is not None:
        return float(cfg.lam)
    grid = (np.asarray(cfg.lambda_grid, dtype=float) if cfg.lambda_grid is not None
            else regress.default_lambda_grid(Z, r, cfg.n_lambda))
    if grid.size == 1:
        return float(grid[0])
    n_groups = len(np.unique(groups))
    if n_groups < 2:
        return _fallback_lambda(Z, r)
    folds = min(cfg.cv_folds, n_groups)
    return regress.cross_validate_lambda(Z, r, grid, folds, derive_seed(cfg.seed, 2, tau, k),
                                         groups, tol=cfg.cv_tol, max_iter=cfg.lasso_max_iter)


def _order_tasks(datasets):
    ids = [d.task_id for d in datasets]
    if ids.count(0) != 1:
        raise ValidationError("exactly one target task (task_id 0) is required, got ids %s" % ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate task ids %s" % ids)
    dims = {d.dim for d in datasets if len(d)}
    if len(dims) > 1 or len({d.n_actions for d in datasets}) > 1:
        raise ValidationError("tasks disagree in state dimension or action count")
    return sorted(datasets, key=lambda d: d.task_id)


def _run(datasets, fmap, cfg, method, response_fn=None, initial=None):
    datasets = _order_tasks(list(datasets))
    if response_fn is None:
        def response_fn(sub, coeffs, fm, gamma):
            return pseudo_response(sub, coeffs, fm, gamma, clip=cfg.clip)
    q = fmap.dim
    vmax = _vmax(datasets, cfg)
    ids = [d.task_id for d in datasets]

    if cfg.reuse_all_data:
        split = {d.task_id: [np.arange(len(d))] * cfg.upsilon for d in datasets}
    else:
        split = {d.task_id: split_dataset(d, cfg.upsilon, derive_seed(cfg.seed, 1, d.task_id))
                 for d in datasets}

    if initial is not None:
        beta = {k: QCoefficients(initial[k], vmax) for k in ids}
    elif method == ONE_STEP:
        b0 = _initial_beta(cfg, q, 0)
        beta = {k: QCoefficients(b0, vmax) for k in ids}
    else:
        beta = {k: QCoefficients(_initial_beta(cfg, q, k), vmax) for k in ids}

    result = FQIResult(method, None)
    result.target_iterates.append(beta[0].beta)
    frozen_lambda = {}
    warned = False
    w_hat, delta = None, {}

    for tau in range(1, cfg.upsilon + 1):
        subsets, Zs, Ys = {}, {}, {}
        for d in datasets:
            rows = split[d.task_id][tau - 1]
            result.access_log[(tau, d.task_id)] = rows
            sub = d.subset(rows)
            subsets[d.task_id] = sub
            Zs[d.task_id] = fmap.design(sub.states, sub.actions)
            Ys[d.task_id] = np.asarray(response_fn(sub, beta[d.task_id], fmap, cfg.gamma),
                                       dtype=float)
        Z_all = np.vstack([Zs[k] for k in ids])
        Y_all = np.concatenate([Ys[k] for k in ids])
        if Z_all.shape[0] < q and not warned:
            warnings.warn("iteration %d pools %d rows for %d coefficients; relying on ridge "
                          "stabilisation" % (tau, Z_all.shape[0], q), SmallSampleWarning,
                          stacklevel=3)
            warned = True
        try:
            w = regress.ols_fit(Z_all, Y_all, cfg.ridge_eps)
        except SolverError as exc:
            raise type(exc)("step I failed at tau=%d: %s" % (tau, exc)) from exc
        w_hat = QCoefficients(w, vmax)

        new_beta = {}
        for k in ids:
            resid = Ys[k] - Zs[k] @ w
            lam = np.inf
            if method == TWO_STEP:
                try:
                    if cfg.cv_once and k in frozen_lambda:
                        lam = frozen_lambda[k]
                    else:
                        lam = _choose_lambda(Zs[k], resid, subsets[k].traj, cfg, tau, k)
                        frozen_lambda[k] = lam
                    sol = regress.lasso_fit(Zs[k], resid, lam, tol=cfg.lasso_tol,
                                            max_iter=cfg.lasso_max_iter)
                except SolverError as exc:
                    raise type(exc)("step II failed at tau=%d, task=%d: %s"
                                    % (tau, k, exc)) from exc
                d_k = sol.delta
            else:
                d_k = np.zeros(q)
            delta[k] = QCoefficients(d_k, vmax)
            new_beta[k] = QCoefficients(w + d_k, vmax)
            fitted = Zs[k] @ new_beta[k].beta
            result.history.append(HistoryRow(
                tau, k, float(np.abs(d_k).sum()),
                float(np.max(np.abs(new_beta[k].beta - beta[k].beta))),
                float(lam), float(np.sqrt(np.mean((Ys[k] - fitted) ** 2))) if len(fitted) else 0.0))
        beta = new_beta
        result.target_iterates.append(beta[0].beta)

    result.state = TransFQIState(cfg.upsilon, w_hat, delta, beta, split)
    return result


def run_transfqi(datasets, fmap, config, response_fn=None, initial=None):
    """Two-step transfer FQI: pooled least squares, then per-task lasso correction."""
    return _run(datasets, fmap, config, TWO_STEP, response_fn, initial)


def run_onestep(datasets, fmap, config, response_fn=None, initial=None):
    """Pooled FQI on all tasks' data with no per-task correction."""
    return _run(datasets, fmap, config, ONE_STEP, response_fn, initial)


def run_single_fqi(dataset, fmap, config, response_fn=None, initial=None):
    """Plain FQI on one task (treated as the target)."""
    if dataset.task_id != 0:
        dataset = dataset.with_task_id(0)
    if initial is not None and not isinstance(initial, dict):
        initial = {0: initial}
    return _run([dataset], fmap, config, NO_TRANSFER, response_fn, initial)


ENGINES = {TWO_STEP: run_transfqi, ONE_STEP: run_onestep}


def run_method(method, target, sources, fmap, config, **kw):
    if method == NO_TRANSFER:
        return run_single_fqi(target, fmap, config, **kw)
    try:
        engine = ENGINES[method]
    except KeyError:
        raise ValidationError("unknown method %r" % method) from None
    return engine([target, *sources], fmap, config, **kw)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row.tau, row.task_id, repr(row.l1_delta), repr(row.linf_beta_change),
                        repr(row.chosen_lambda), repr(row.step1_residual)])
