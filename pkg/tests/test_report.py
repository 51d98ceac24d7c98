import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from transfqi.harness.experiment import ResultRow, write_results_csv
from transfqi.harness.report import (EmptyReportError, box_stats, medians, report, summarise)


def sorted_quantile(values, q):
    """Order-statistic interpolation at position (n - 1) q."""
    x = sorted(values)
    h = (len(x) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


def test_box_example():
    b = box_stats([1, 2, 3, 4, 100])
    assert (b.median, b.q1, b.q3) == (3.0, 2.0, 4.0)
    assert b.outliers == (100.0,)
    assert (b.whisker_lo, b.whisker_hi) == (1.0, 4.0)


def test_single_value_degenerate_box():
    b = box_stats([0.7])
    assert b.median == b.q1 == b.q3 == b.whisker_lo == b.whisker_hi == 0.7
    assert b.outliers == () and b.n == 1


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_quartiles_match_sort_oracle(values):
    b = box_stats(values)
    for got, q in ((b.q1, 0.25), (b.median, 0.5), (b.q3, 0.75)):
        assert got == pytest.approx(sorted_quantile(values, q), rel=1e-9, abs=1e-6)
    iqr = b.q3 - b.q1
    # whiskers are data points, the most extreme ones inside the 1.5 IQR fences
    assert b.whisker_lo in values and b.whisker_hi in values
    assert b.whisker_lo >= b.q1 - 1.5 * iqr - 1e-6 and b.whisker_hi <= b.q3 + 1.5 * iqr + 1e-6
    assert all(v < b.q1 - 1.5 * iqr or v > b.q3 + 1.5 * iqr for v in b.outliers)
    assert b.n == len(b.outliers) + sum(b.whisker_lo <= v <= b.whisker_hi for v in values)


def rows_for(sigmas, sizes, methods, reps, rng):
    return [ResultRow(s, i, m, r, float(rng.exponential()))
            for s in sigmas for i in sizes for m in methods for r in range(reps)]


def test_summarise_groups_and_failures():
    rng = np.random.default_rng(0)
    rows = rows_for([0.25], [10, 20], ["one_step", "two_step"], 4, rng)
    rows.append(ResultRow(0.25, 10, "two_step", 4, float("nan"), note="ConvergenceError: x"))
    rows += [ResultRow(1.0, 10, "two_step", r, float("nan")) for r in range(3)]
    out = summarise(rows)
    assert len(out) == 4
    stats, failed = out[(0.25, 10, "two_step")]
    assert stats.n == 4 and failed == 1
    with pytest.raises(EmptyReportError):
        summarise([])
    with pytest.raises(EmptyReportError):
        summarise(rows[-3:])


def test_medians_helper():
    rows = [ResultRow(0.5, 10, "two_step", r, v) for r, v in enumerate([3.0, 1.0, 2.0])]
    assert medians(rows, "two_step") == 2.0
    assert medians(rows, "two_step", sigma_c=0.5, i_source=10) == 2.0
    assert np.isnan(medians(rows, "one_step"))


def test_report_writes_one_svg_per_sigma(tmp_path):
    rng = np.random.default_rng(1)
    rows = rows_for([0.25, 0.5, 1.0], [10, 80], ["no_transfer", "one_step", "two_step"], 5, rng)
    path = tmp_path / "results.csv"
    write_results_csv(rows, path)
    summary, svgs = report(str(path), str(tmp_path / "rep"))
    assert len(svgs) == 3 and all(os.path.getsize(p) > 0 for p in svgs)
    assert sorted(os.path.basename(p) for p in svgs) == [
        "panel_sigma_0p25.svg", "panel_sigma_0p5.svg", "panel_sigma_1.svg"]
    lines = open(summary).read().splitlines()
    assert len(lines) == 1 + 3 * 2 * 3
    # rendering is deterministic
    again = report(str(path), str(tmp_path / "rep2"))[1]
    assert all(open(a).read() == open(b).read() for a, b in zip(svgs, again))


def test_report_missing_file(tmp_path):
    from transfqi.errors import ValidationError
    with pytest.raises(ValidationError):
        report(str(tmp_path / "nope.csv"), str(tmp_path))
