"""Linear regression kernels: ridge-stabilised least squares and cyclic
coordinate-descent lasso, plus grouped cross-validation for the lasso penalty
(scored along exact LARS paths)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import linalg
from sklearn.linear_model import lars_path_gram

from .errors import ConvergenceError, FactorizationError, ValidationError

RIDGE_SCALE = 1e-8


def _check_design(Z, y):
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise ValidationError("design matrix must be 2-D with n >= 1, q >= 1")
    if Z.shape[0] != y.shape[0]:
        raise ValidationError("response length %d != %d rows" % (y.shape[0], Z.shape[0]))
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
        raise ValidationError("design and response must be finite")
    return Z, y


def default_ridge(Z):
    """1e-8 * trace(Z'Z/n) / q."""
    Z = np.asarray(Z, dtype=float)
    n, q = Z.shape
    return RIDGE_SCALE * float(np.einsum("ij,ij->", Z, Z)) / n / q


def ols_fit(Z, y, ridge_eps=None):
    """Solve (Z'Z/n + eps I) w = Z'y/n by Cholesky.

    ``ridge_eps=None`` uses :func:`default_ridge`. With ``ridge_eps=0`` a
    singular Gram matrix raises :class:`FactorizationError`.
    """
    Z, y = _check_design(Z, y)
    n, q = Z.shape
    eps = default_ridge(Z) if ridge_eps is None else float(ridge_eps)
    if eps < 0:
        raise ValidationError("ridge_eps must be nonnegative")
    G = Z.T @ Z / n
    G[np.diag_indices(q)] += eps
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() <= 1e-13 * max(diag.max(), 1e-300):
            raise linalg.LinAlgError("numerically singular")
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(G)
        raise FactorizationError("Gram matrix not positive definite (cond=%.3e, ridge_eps=%g)"
                                 % (cond, eps), condition=cond) from exc
    return linalg.cho_solve(factor, Z.T @ y / n, check_finite=False)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True, eq=False)
class LassoSolution:
    delta: np.ndarray
    lam: float
    iterations: int
    kkt_violation: float
    objective_path: np.ndarray = None


@njit(cache=True)
def _cd_lasso(G, c, rr, lam, delta, tol, max_iter, objective):
    """Covariance-form cyclic coordinate descent.

    Minimises 0.5 * (rr - 2 c'd + d'Gd) + lam * |d|_1 with G = Z'Z/n and
    c = Z'r/n. A coordinate's change is measured as |step| * sqrt(G_jj), the
    RMS change it causes in the fitted values. Writes the objective after every sweep into ``objective``.
    Returns the number of sweeps, or -1 if ``max_iter`` was exhausted.
    """
    q = G.shape[0]
    grad = c - G @ delta
    for sweep in range(max_iter):
        max_change = 0.0
        for j in range(q):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = delta[j]
            z = grad[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                delta[j] = new
                for l in range(q):
                    grad[l] -= G[l, j] * diff
                scaled = abs(diff) * np.sqrt(gjj)
                if scaled > max_change:
                    max_change = scaled
        # objective: 0.5 rr - c'd + 0.5 d'Gd + lam |d|_1, with Gd = c - grad
        obj = 0.5 * rr
        for j in range(q):
            obj += -0.5 * delta[j] * (c[j] + grad[j]) + lam * abs(delta[j])
        objective[sweep] = obj
        if max_change <= tol:
            return sweep + 1
    return -1


def kkt_violation(G, c, delta, lam):
    """Largest violation of the lasso subgradient conditions."""
    grad = c - G @ delta
    nz = delta != 0
    viol = np.where(nz, np.abs(grad - lam * np.sign(delta)), np.maximum(np.abs(grad) - lam, 0.0))
    # coordinates whose column is identically zero carry no condition
    viol[np.diag(G) <= 0] = 0.0
    return float(viol.max()) if viol.size else 0.0


def lasso_objective(Z, r, delta, lam):
    n = Z.shape[0]
    res = r - Z @ delta
    return float(res @ res) / (2 * n) + lam * float(np.abs(delta).sum())


def lasso_gram(Z, r):
    n = Z.shape[0]
    return Z.T @ Z / n, Z.T @ r / n, float(r @ r) / n


def _polish(G, c, delta, lam, tol, max_steps=None):
    """Primal active-set refinement started from a coordinate-descent iterate.

    On the current support and sign pattern the lasso objective is a smooth
    quadratic; step towards its minimiser, dropping a coordinate whenever it
    would change sign, and add the worst KKT violator once the face is
    optimal. Each step lowers the objective. Returns None if it cannot
    certify a KKT point within ``max_steps``.
    """
    q = len(delta)
    d = delta.copy()
    active = list(np.flatnonzero(d))
    signs = list(np.sign(d[active]))
    for _ in range(max_steps or 4 * q + 10):
        if active:
            idx = np.array(active)
            sg = np.array(signs)
            try:
                target = np.linalg.solve(G[np.ix_(idx, idx)], c[idx] - lam * sg)
            except np.linalg.LinAlgError:
                return None
            crossing = np.sign(target) != sg
            if np.any(crossing):
                cur = d[idx]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.where(crossing, cur / (cur - target), np.inf)
                k = int(np.argmin(t))
                d[idx] = cur + min(max(t[k], 0.0), 1.0) * (target - cur)
                d[idx[k]] = 0.0
                del active[k], signs[k]
                continue
            d[idx] = target
        grad = c - G @ d
        viol = np.abs(grad) - lam
        viol[active] = -np.inf
        viol[np.diag(G) <= 0] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] <= tol:
            return d if kkt_violation(G, c, d, lam) <= tol else None
        active.append(j)
        signs.append(np.sign(grad[j]))
    return None


def lasso_fit(Z, r, lam, tol=1e-9, max_iter=20_000, init=None, gram=None, chunk=200):
    """Minimise (1/2n)||r - Z d||^2 + lam ||d||_1 by cyclic coordinate descent.

    Terminates when the largest coordinate change in a sweep, scaled by the
    column's RMS norm, is <= ``tol``. On ill-conditioned designs plain sweeps
    crawl, so every ``chunk`` sweeps an active-set refinement is attempted;
    its result is accepted if it satisfies the KKT conditions to
    ``tol * max(1, lambda_max)``. ``gram`` may pass a precomputed ``(Z'Z/n, Z'r/n, r'r/n)``.
    """
    Z, r = _check_design(Z, r)
    if lam < 0 or np.isnan(lam):
        raise ValidationError("lambda must be nonnegative")
    q = Z.shape[1]
    G, c, rr = lasso_gram(Z, r) if gram is None else gram
    if np.isinf(lam):
        return LassoSolution(np.zeros(q), float(lam), 0, 0.0, np.array([0.5 * rr]))
    G, c = np.ascontiguousarray(G), np.ascontiguousarray(c)
    delta = np.zeros(q) if init is None else np.array(init, dtype=float)
    path = []
    done = 0
    buf = np.empty(chunk)
    while done < max_iter:
        todo = min(chunk, max_iter - done)
        sweeps = _cd_lasso(G, c, rr, float(lam), delta, float(tol), todo, buf)
        used = todo if sweeps < 0 else sweeps
        path.append(buf[:used].copy())
        done += used
        if sweeps >= 0:
            break
        # KKT residuals of an exact solve scale with |Z'r/n|
        polished = _polish(G, c, delta, lam, tol * max(1.0, float(np.max(np.abs(c)))))
        if polished is not None:
            delta = polished
            # at a face minimiser d'Gd = c'd - lam |d|_1
            path.append(np.array([0.5 * rr - 0.5 * float(delta @ c)
                                  + 0.5 * lam * float(np.abs(delta).sum())]))
            break
    else:
        viol = kkt_violation(G, c, delta, lam)
        raise ConvergenceError("lasso did not converge in %d sweeps (KKT violation %.3e)"
                               % (max_iter, viol), residual=viol, iterations=max_iter)
    return LassoSolution(delta, float(lam), done, kkt_violation(G, c, delta, lam),
                         np.concatenate(path))


def lambda_max(Z, r):
    """Smallest penalty at which the lasso solution is exactly zero."""
    Z = np.asarray(Z, dtype=float)
    return float(np.max(np.abs(Z.T @ np.asarray(r, dtype=float)))) / Z.shape[0]


def default_lambda_grid(Z, r, n_lambda=20, lo=1e-4, hi=1.0):
    """Log-spaced grid over [lo, hi] * lambda_max, in decreasing order."""
    lmax = lambda_max(Z, r)
    if lmax <= 0:
        return np.zeros(1)
    return lmax * np.logspace(np.log10(hi), np.log10(lo), n_lambda)


def assign_folds(groups, folds, seed):
    """Fold index per row; every row of a group lands in the same fold."""
    groups = np.asarray(groups)
    labels = np.unique(groups)
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if len(labels) < folds:
        raise ValidationError("%d trajectories cannot fill %d folds" % (len(labels), folds))
    perm = np.random.default_rng(seed).permutation(len(labels))
    fold_of_label = np.empty(len(labels), dtype=np.int64)
    fold_of_label[perm] = np.arange(len(labels)) % folds
    return fold_of_label[np.searchsorted(labels, groups)]


def lasso_path(Z, r, grid, tol=1e-9, max_iter=20_000, gram=None):
    """Lasso solutions at every penalty in ``grid``, shape [len(grid), q].

    The exact piecewise-linear path comes from LARS (lasso variant); each
    grid point is read off by linear interpolation between path knots and
    checked against the KKT conditions. Points that fail the check, or lie
    below where the path stopped (rank-deficient designs), are re-solved by
    coordinate descent; a point that still fails is returned as NaN.
    """
    Z, r = _check_design(Z, r)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    n, q = Z.shape
    G, c, rr = lasso_gram(Z, r) if gram is None else gram
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")     # sklearn warns on degenerate (collinear) steps
        alphas, _, coefs = lars_path_gram(Xy=c * n, Gram=G * n, n_samples=n, method="lasso")
    accept = tol * max(1.0, float(np.max(np.abs(c))))
    out = np.empty((grid.size, q))
    warm = np.zeros(q)
    for i in np.argsort(-grid, kind="stable"):
        lam = grid[i]
        if lam >= alphas[0]:
            out[i] = 0.0
            continue
        if lam >= alphas[-1]:
            j = int(np.searchsorted(-alphas, -lam))
            f = (alphas[j - 1] - lam) / (alphas[j - 1] - alphas[j])
            d = (1 - f) * coefs[:, j - 1] + f * coefs[:, j]
            if kkt_violation(G, c, d, lam) <= accept:
                out[i] = warm = d
                continue
        try:
            out[i] = warm = lasso_fit(Z, r, lam, tol=tol, max_iter=max_iter, init=warm,
                                      gram=(G, c, rr)).delta
        except ConvergenceError:
            out[i] = np.nan
    return out


def cv_errors(Z, r, grid, folds, seed, groups=None, tol=1e-9, max_iter=20_000):
    """Mean held-out squared error for each candidate penalty.

    A candidate whose fit fails to converge on any fold scores +inf.
    """
    Z, r = _check_design(Z, r)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValidationError("lambda grid is empty")
    groups = np.arange(Z.shape[0]) if groups is None else np.asarray(groups)
    fold_id = assign_folds(groups, folds, seed)
    sse = np.zeros(grid.size)
    for f in range(folds):
        train, test = fold_id != f, fold_id == f
        deltas = lasso_path(Z[train], r[train], grid, tol, max_iter)
        res = r[test][None, :] - deltas @ Z[test].T
        # an unsolved candidate cannot be scored; rule it out
        sse += np.where(np.isnan(res).any(axis=1), np.inf, np.sum(res ** 2, axis=1))
    return sse / Z.shape[0]


def cross_validate_lambda(Z, r, grid, folds=5, seed=0, groups=None, **kw):
    """Penalty with the lowest held-out error; ties favour the larger penalty."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValidationError("lambda grid is empty")
    groups = np.arange(len(r)) if groups is None else np.asarray(groups)
    assign_folds(groups, folds, seed)
    if grid.size == 1:
        return float(grid[0])
    err = cv_errors(Z, r, grid, folds, seed, groups, **kw)
    if not np.any(np.isfinite(err)):
        raise ConvergenceError("lasso failed for every candidate penalty")
    return float(grid[err <= err.min()].max())
