"""Grid execution: (sigma_C, I_source, replication) cells, each running every
requested method against a shared Monte-Carlo reference."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..diagnostics import estimate_discrepancy
from ..errors import TransFQIError
from ..fqi import run_method
from ..oracle import QStarReference, build_reference, eval_error
from ..seeding import derive_seed
from ..sieve import FeatureMap
from ..simenv import (QuadEnvSpec, SourcePerturbation, make_source_spec, make_target_spec,
                      simulate_task)

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("sigma_c", "i_source", "method", "replication", "mean_abs_error",
                  "h_r_hat", "c_sigma_hat", "runtime_ms", "note")

# stream tags for seed derivation
_TARGET_SPEC, _TARGET_DATA, _SOURCE_SPEC, _SOURCE_DATA, _ENGINE, _REFERENCE = range(1, 7)


@dataclass(frozen=True)
class ResultRow:
    sigma_c: float
    i_source: int
    method: str
    replication: int
    mean_abs_error: float
    h_r_hat: float = float("nan")
    c_sigma_hat: float = float("nan")
    runtime_ms: float = None
    note: str = ""

    def csv_fields(self):
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
        return [repr(float(self.sigma_c)), str(int(self.i_source)), self.method,
                str(int(self.replication)), num(self.mean_abs_error), num(self.h_r_hat),
                num(self.c_sigma_hat), num(self.runtime_ms), self.note]


def target_spec(config, rep):
    env = config.env
    kw = {"state_noise_sd": env["state_noise_sd"], "reward_noise_sd": env["reward_noise_sd"]}
    if env["c_target"] is not None:
        return QuadEnvSpec(np.asarray(env["c_target"], float), gamma=config.gamma, **kw)
    return make_target_spec(derive_seed(config.master_seed, _TARGET_SPEC, rep), config.gamma, **kw)


def source_spec(config, target, sigma_idx, rep):
    env = config.env
    if env["c_source"] is not None:
        return QuadEnvSpec(np.asarray(env["c_source"], float), gamma=target.gamma,
                           state_noise_sd=target.state_noise_sd,
                           reward_noise_sd=target.reward_noise_sd)
    pert = SourcePerturbation(env["sigma_c"][sigma_idx],
                              derive_seed(config.master_seed, _SOURCE_SPEC, sigma_idx, rep))
    return make_source_spec(target, pert)


def reference_key(config, rep):
    spec = target_spec(config, rep)
    doc = {"spec": spec.to_dict(), "reference": config.reference_config().to_dict(),
           "seed": derive_seed(config.master_seed, _REFERENCE, rep)}
    return hashlib.sha1(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:20]


def get_reference(config, rep, cache_dir=None):
    """Reference for replication ``rep``, loaded from / stored to ``cache_dir`` if given."""
    path = None
    if cache_dir:
        path = os.path.join(cache_dir, "ref_%s.json" % reference_key(config, rep))
        if os.path.exists(path):
            return QStarReference.load(path)
    ref = build_reference(target_spec(config, rep), config.reference_config(),
                          derive_seed(config.master_seed, _REFERENCE, rep))
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = path + ".tmp%d" % os.getpid()
        ref.save(tmp)
        os.replace(tmp, path)
    return ref


def cell_data(config, sigma_idx, i1_idx, rep):
    """Target and source datasets of one grid cell."""
    env = config.env
    tspec = target_spec(config, rep)
    target = simulate_task(tspec, env["i_target"], env["horizon"],
                           derive_seed(config.master_seed, _TARGET_DATA, rep), task_id=0)
    sources = []
    n_src = env["i_source"][i1_idx]
    if n_src > 0:
        sspec = source_spec(config, tspec, sigma_idx, rep)
        sources.append(simulate_task(sspec, n_src, env["horizon"],
                                     derive_seed(config.master_seed, _SOURCE_DATA, sigma_idx,
                                                 i1_idx, rep), task_id=1))
    return target, sources


def run_cell(config, sigma_idx, i1_idx, rep, reference):
    env = config.env
    sigma_c, n_src = env["sigma_c"][sigma_idx], env["i_source"][i1_idx]
    target, sources = cell_data(config, sigma_idx, i1_idx, rep)
    fmap = FeatureMap(config.basis_obj(), 2)
    h_r = c_sig = float("nan")
    if config.diagnostics:
        try:
            est = estimate_discrepancy([target, *sources], fmap)
            h_r, c_sig = est.h_r_hat, est.c_sigma_hat
        except TransFQIError as exc:
            log.warning("diagnostics failed in cell (%s, %s, %s): %s", sigma_c, n_src, rep, exc)
    engine_cfg = config.engine_config(
        derive_seed(config.master_seed, _ENGINE, sigma_idx, i1_idx, rep))
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        note = ""
        try:
            fit = run_method(method, target, sources, fmap, engine_cfg)
            err = eval_error(fit.coeffs, reference, fmap)
        except TransFQIError as exc:
            err, note = float("nan"), "%s: %s" % (type(exc).__name__, exc)
        runtime = (time.perf_counter() - t0) * 1e3 if config.record_runtime else None
        rows.append(ResultRow(sigma_c, n_src, method, rep, err, h_r, c_sig, runtime, note))
    return rows


def grid_cells(config):
    env = config.env
    return [(si, ii, rep) for si in range(len(env["sigma_c"]))
            for ii in range(len(env["i_source"])) for rep in range(config.replications)]


def run_experiment(config, threads=1, cache_dir=None, progress=None):
    """Run every grid cell and return result rows in grid order.

    Order and content depend only on ``config`` (seeds are derived per
    cell), never on ``threads``.
    """
    reps = range(config.replications)
    threads = max(1, int(threads))
    with ThreadPoolExecutor(threads) as pool:
        refs = list(pool.map(lambda r: get_reference(config, r, cache_dir), reps))
        cells = grid_cells(config)

        def work(cell):
            out = run_cell(config, *cell, refs[cell[2]])
            if progress:
                progress(cell)
            return out

        rows = [row for chunk in pool.map(work, cells) for row in chunk]
    return rows


def write_results_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(row.csv_fields())


def read_results_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            def num(key):
                v = rec.get(key, "")
                return float(v) if v not in ("", None) else float("nan")
            rows.append(ResultRow(float(rec["sigma_c"]), int(rec["i_source"]), rec["method"],
                                  int(rec["replication"]), num("mean_abs_error"),
                                  num("h_r_hat"), num("c_sigma_hat"),
                                  None if not rec.get("runtime_ms") else float(rec["runtime_ms"]),
                                  rec.get("note", "")))
    return rows
