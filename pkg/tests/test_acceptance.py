"""End-to-end acceptance criteria 1-9.

Each criterion is a function returning ``(passed, detail)``; the pytest
wrappers print one ``PASS``/``FAIL`` line per criterion and then assert.
Running this file directly (``python tests/test_acceptance.py``) prints the
same lines without pytest.

The grid criteria (4-7) share one set of fits: every cell is run once with the
``acceptance`` profile (50 replications, master seed 0) and the Monte-Carlo
references are cached on disk for the whole session.
"""
import functools
import os
import sys
import tempfile
import time

import numpy as np
import pytest
from scipy.stats import wilcoxon

from transfqi.checks import q_gap_suite, oracle_equivalence
from transfqi.diagnostics import estimate_c_sigma, estimate_discrepancy
from transfqi.harness.cli import main as cli_main
from transfqi.harness.config import ExperimentConfig, PROFILES
from transfqi.harness.experiment import cell_data, get_reference, run_cell
from transfqi.regress import lambda_max, lasso_fit, lasso_gram, kkt_violation, ols_fit
from transfqi.sieve import FeatureMap

SIGMAS = [0.25, 1.0]
SOURCES = [10, 80]
_CACHE = tempfile.mkdtemp(prefix="transfqi-acceptance-")


def emit(number, passed, detail):
    print("criterion %d: %s  %s" % (number, "PASS" if passed else "FAIL", detail), flush=True)


def _config(**overrides):
    doc = dict(PROFILES["acceptance"])
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


GRID = _config(env={"sigma_c": SIGMAS, "i_source": SOURCES})


@functools.lru_cache(maxsize=None)
def reference(rep):
    return get_reference(GRID, rep, _CACHE)


@functools.lru_cache(maxsize=None)
def grid_errors(sigma, n_source, methods):
    """Per-replication eval_error arrays, {method: [reps]} for one grid cell."""
    cfg = _config(env={"sigma_c": SIGMAS, "i_source": SOURCES}, methods=list(methods))
    si, ii = SIGMAS.index(sigma), SOURCES.index(n_source)
    out = {m: [] for m in methods}
    for rep in range(cfg.replications):
        for row in run_cell(cfg, si, ii, rep, reference(rep)):
            out[row.method].append(row.mean_abs_error)
    return {m: np.array(v) for m, v in out.items()}


ALL = ("no_transfer", "one_step", "two_step")


# --- criteria -------------------------------------------------------------

def criterion_1():
    res = q_gap_suite(200, seed=0)
    ok = res.passed and res.seconds < 10
    return ok, "%s; %.2fs (budget 10s)" % (res.detail, res.seconds)


def criterion_2():
    res = oracle_equivalence(50)
    ok = res.passed and res.seconds < 5
    return ok, "%s; %.2fs (budget 5s)" % (res.detail, res.seconds)


def criterion_3():
    rng = np.random.default_rng(2024)
    worst_kkt, worst_ols, monotone = 0.0, 0.0, True
    for _ in range(100):
        n, q = int(rng.integers(20, 120)), int(rng.integers(2, 30))
        Z = rng.normal(size=(n, q))
        beta = np.where(rng.uniform(size=q) < 0.3, rng.normal(scale=2, size=q), 0.0)
        r = Z @ beta + rng.normal(size=n)
        gram = lasso_gram(Z, r)
        for frac in (0.01, 0.1, 1.0):
            lam = frac * lambda_max(Z, r)
            sol = lasso_fit(Z, r, lam, gram=gram)
            worst_kkt = max(worst_kkt, kkt_violation(*gram[:2], sol.delta, lam))
            path = sol.objective_path
            monotone &= bool(np.all(np.diff(path) <= 1e-12 * max(1.0, abs(path[0]))))
        if n >= 2 * q:     # well conditioned
            w = ols_fit(Z, r, 0.0)
            d = lasso_fit(Z, r, 0.0, tol=1e-12, gram=gram).delta
            worst_ols = max(worst_ols, np.linalg.norm(d - w) / np.linalg.norm(w))
    ok = worst_kkt <= 1e-6 and worst_ols <= 1e-6 and monotone
    return ok, ("max KKT violation %.2e (tol 1e-6), max lambda=0 vs OLS rel. error %.2e "
                "(tol 1e-6), objective monotone: %s" % (worst_kkt, worst_ols, monotone))


def criterion_4():
    t0 = time.perf_counter()
    err = grid_errors(0.25, 80, ALL)
    none = np.median(err["no_transfer"])
    parts, ok = [], True
    for m in ("two_step", "one_step"):
        med = np.median(err[m])
        p = wilcoxon(err[m], err["no_transfer"], alternative="less").pvalue
        ok &= bool(med < none and p < 0.05)
        parts.append("%s median %.4f p=%.2g" % (m, med, p))
    return ok, "%s vs no_transfer median %.4f (%.0fs)" % (", ".join(parts), none,
                                                           time.perf_counter() - t0)


def criterion_5():
    err = grid_errors(1.0, 80, ALL)
    two, one, none = (np.median(err[m]) for m in ("two_step", "one_step", "no_transfer"))
    ok = two <= one and two <= 1.1 * none
    return ok, ("medians two_step %.4f, one_step %.4f, no_transfer %.4f (bound 1.1x = %.4f)"
                % (two, one, none, 1.1 * none))


def criterion_6():
    small = np.median(grid_errors(0.25, 10, ("two_step",))["two_step"])
    large = np.median(grid_errors(0.25, 80, ALL)["two_step"])
    drop = 1 - large / small
    return drop >= 0.10, ("two_step median %.4f at I1=10 -> %.4f at I1=80, drop %.1f%% "
                          "(need >= 10%%)" % (small, large, 100 * drop))


def criterion_7():
    small = np.median(grid_errors(0.25, 80, ALL)["no_transfer"])
    cfg = _config(env={"i_target": 160, "i_source": [0], "sigma_c": [0.0]},
                  methods=["no_transfer"])
    big = [run_cell(cfg, 0, 0, rep, reference(rep))[0].mean_abs_error
           for rep in range(cfg.replications)]
    large = np.median(big)
    drop = 1 - large / small
    return drop >= 0.25, ("no_transfer median %.4f at I0=20 -> %.4f at I0=160, drop %.1f%% "
                          "(need >= 25%%)" % (small, large, 100 * drop))


# Identical target and source sizes. With few trajectories the plug-in h_r is
# dominated by estimation noise on spline coefficients the squashed states rarely
# excite; 1280 trajectories per task is where that floor sits well below 25%.
C8_TRAJ = 1280


def criterion_8():
    cfg = _config(env={"i_target": C8_TRAJ, "i_source": [C8_TRAJ], "sigma_c": [0.0, 1.0]},
                  replications=20)
    fmap = FeatureMap(cfg.basis_obj(), 2)
    hr = {0: [], 1: []}
    k0_ok = True
    for rep in range(cfg.replications):
        for si in (0, 1):
            target, sources = cell_data(cfg, si, 0, rep)
            hr[si].append(estimate_discrepancy([target, *sources], fmap).h_r_hat)
        k0_ok &= (estimate_c_sigma([target], fmap) == 1.0
                  and estimate_discrepancy([target], fmap).c_sigma_hat == 1.0)
    m0, m1 = np.median(hr[0]), np.median(hr[1])
    ok = m0 < 0.25 * m1 and k0_ok
    return ok, ("median h_r_hat %.3f (sigma 0) vs %.3f (sigma 1), ratio %.3f (need < 0.25); "
                "c_sigma_hat = 1 for K=0: %s" % (m0, m1, m0 / m1, k0_ok))


def criterion_9():
    root = tempfile.mkdtemp(prefix="transfqi-determinism-")
    outs = []
    for k in (1, 2):
        out = os.path.join(root, "run%d" % k)
        code = cli_main(["run", "--profile", "smoke", "--out", out, "--threads", str(k)])
        if code != 0:
            return False, "run %d exited with %d" % (k, code)
        with open(os.path.join(out, "results.csv"), "rb") as fh:
            outs.append(fh.read())
    same = outs[0] == outs[1]
    return same, "results.csv byte-identical across runs (1 and 2 threads): %s, %d bytes" % (
        same, len(outs[0]))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9]


def _check(number, capsys):
    passed, detail = CRITERIA[number - 1]()
    with capsys.disabled():
        print()
        emit(number, passed, detail)
    assert passed, detail


def test_criterion_1_q_gap_bound(capsys):
    _check(1, capsys)


def test_criterion_2_oracle_equivalence(capsys):
    _check(2, capsys)


def test_criterion_3_solver(capsys):
    _check(3, capsys)


@pytest.mark.slow
def test_criterion_4_small_discrepancy(capsys):
    _check(4, capsys)


@pytest.mark.slow
def test_criterion_5_large_discrepancy(capsys):
    _check(5, capsys)


@pytest.mark.slow
def test_criterion_6_source_size(capsys):
    _check(6, capsys)


@pytest.mark.slow
def test_criterion_7_single_task_convergence(capsys):
    _check(7, capsys)


def test_criterion_8_diagnostics(capsys):
    _check(8, capsys)


def test_criterion_9_determinism(capsys):
    _check(9, capsys)


if __name__ == "__main__":
    results = []
    for i, fn in enumerate(CRITERIA, 1):
        passed, detail = fn()
        emit(i, passed, detail)
        results.append(passed)
    sys.exit(0 if all(results) else 1)
