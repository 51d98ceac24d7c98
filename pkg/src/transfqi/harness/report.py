"""Box summaries of result CSVs and one SVG boxplot panel per sigma_C.

Quartiles use linear interpolation between order statistics (numpy's
default ``linear`` method): the q-quantile of sorted x_0..x_{n-1} sits at
position h = (n - 1) q, interpolated between x_floor(h) and x_ceil(h).
Whiskers reach the most extreme observations within 1.5 IQR of the box.
"""
from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .experiment import read_results_csv

SUMMARY_COLUMNS = ("sigma_c", "i_source", "method", "n", "n_failed", "median", "q1", "q3",
                   "whisker_lo", "whisker_hi", "n_outliers")

METHOD_ORDER = ("no_transfer", "one_step", "two_step")


class EmptyReportError(ValidationError):
    """No usable result rows to summarise."""


@dataclass(frozen=True)
class BoxStats:
    n: int
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple

    def as_bxp(self, label):
        return {"label": label, "med": self.median, "q1": self.q1, "q3": self.q3,
                "whislo": self.whisker_lo, "whishi": self.whisker_hi,
                "fliers": list(self.outliers)}


def box_stats(values):
    x = np.sort(np.asarray(values, dtype=float))
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptyReportError("no finite values to summarise")
    q1, med, q3 = np.percentile(x, [25, 50, 75], method="linear")
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    out = x[(x < inside[0]) | (x > inside[-1])]
    return BoxStats(int(x.size), float(med), float(q1), float(q3), float(inside[0]),
                    float(inside[-1]), tuple(float(v) for v in out))


def _method_key(m):
    return (METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER), m)


def summarise(rows):
    """{(sigma_c, i_source, method): (BoxStats, n_failed)} in sorted order."""
    if not rows:
        raise EmptyReportError("result file has no rows")
    groups = defaultdict(list)
    for r in rows:
        groups[(r.sigma_c, r.i_source, r.method)].append(r.mean_abs_error)
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], k[1], _method_key(k[2]))):
        vals = np.asarray(groups[key], dtype=float)
        failed = int(np.sum(~np.isfinite(vals)))
        if failed == vals.size:
            continue
        out[key] = (box_stats(vals), failed)
    if not out:
        raise EmptyReportError("every result row failed; nothing to summarise")
    return out


def write_summary_csv(summary, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for (s, i, m), (b, failed) in summary.items():
            w.writerow([repr(float(s)), int(i), m, b.n, failed, repr(b.median), repr(b.q1),
                        repr(b.q3), repr(b.whisker_lo), repr(b.whisker_hi), len(b.outliers)])


def _panel_name(sigma):
    return "panel_sigma_%s.svg" % ("%g" % sigma).replace(".", "p")


def plot_panels(summary, out_dir):
    """One SVG per sigma_C: boxes grouped by source size, one colour per method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "transfqi"   # stable element ids
    sigmas = sorted({k[0] for k in summary})
    methods = sorted({k[2] for k in summary}, key=_method_key)
    colours = dict(zip(methods, plt.rcParams["axes.prop_cycle"].by_key()["color"]))
    paths = []
    for s in sigmas:
        sizes = sorted({k[1] for k in summary if k[0] == s})
        fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(sizes), 3.6))
        width = 0.8 / len(methods)
        for j, m in enumerate(methods):
            stats, pos = [], []
            for g, i in enumerate(sizes):
                if (s, i, m) in summary:
                    stats.append(summary[(s, i, m)][0].as_bxp(str(i)))
                    pos.append(g + (j - (len(methods) - 1) / 2) * width)
            if not stats:
                continue
            art = ax.bxp(stats, positions=pos, widths=width * 0.9, patch_artist=True,
                         manage_ticks=False, flierprops={"markersize": 3})
            for box in art["boxes"]:
                box.set_facecolor(colours[m])
                box.set_alpha(0.7)
            art["boxes"][0].set_label(m)
        ax.set_xticks(range(len(sizes)))
        ax.set_xticklabels([str(i) for i in sizes])
        ax.set_xlabel("source trajectories")
        ax.set_ylabel("mean |Q_hat - Q*|")
        ax.set_title("sigma_C = %g" % s)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, _panel_name(s))
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def report(results_path, out_dir):
    """Write summary.csv and the SVG panels; returns (summary_path, svg_paths)."""
    if not os.path.exists(results_path):
        raise ValidationError("results file not found: %s" % results_path)
    try:
        rows = read_results_csv(results_path)
    except (KeyError, ValueError) as exc:
        raise ValidationError("cannot parse results %s: %s" % (results_path, exc)) from None
    summary = summarise(rows)
    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, "summary.csv")
    write_summary_csv(summary, summary_path)
    return summary_path, plot_panels(summary, out_dir)


def medians(rows, method, sigma_c=None, i_source=None):
    """Median error of ``method`` in the matching rows (NaN when none)."""
    vals = [r.mean_abs_error for r in rows if r.method == method
            and (sigma_c is None or math.isclose(r.sigma_c, sigma_c))
            and (i_source is None or r.i_source == i_source)]
    vals = [v for v in vals if math.isfinite(v)]
    return float(np.median(vals)) if vals else float("nan")
