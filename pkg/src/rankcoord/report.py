"""Post-processing of run outputs into plot-ready CSV tables.

Pure functions of their input files: gain bars from two metric summaries,
rank histograms from a scheduling trace, throughput CDFs from the per-user
table.  Rendering is left to external tools.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np


@dataclass
class FigureData:
    kind: str                      # gain_bars | rank_histogram | cdf
    columns: dict                  # label -> list of numbers (equal length)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("figure columns must have equal length")
        if len(self.columns) != len(set(self.columns)):
            raise ValueError("figure column labels must be unique")

    def write_csv(self, path):
        labels = list(self.columns)
        rows = zip(*(self.columns[label] for label in labels))
        with open(path, "w") as fh:
            fh.write(",".join(labels) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v)
                                  for v in row) + "\n")


def load_metrics(run_dir):
    with open(os.path.join(run_dir, "metrics.json")) as fh:
        return json.load(fh)


def make_gain_table(metrics_a, metrics_b) -> FigureData:
    """Percentage deltas of run A over run B for the average and cell-edge
    spectral efficiency."""
    if metrics_a["n_drops"] != metrics_b["n_drops"]:
        raise ValueError("mismatched runs: drop counts differ")
    def delta(key):
        if metrics_b[key] == 0:
            return float("nan")
        return 100.0 * (metrics_a[key] / metrics_b[key] - 1.0)
    return FigureData("gain_bars", {
        "metric": ["cell_average", "cell_edge"],
        "gain_percent": [delta("cell_avg_se"), delta("cell_edge")],
    })


def make_rank_histogram(trace_path) -> FigureData:
    """Fraction of scheduled allocations per transmission rank, overall and
    restricted to CoMP users."""
    counts, counts_comp = {}, {}
    with open(trace_path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{trace_path}: empty scheduling trace")
    for row in rows:
        if int(row["user"]) < 0:
            continue
        r = int(row["rank"])
        counts[r] = counts.get(r, 0) + 1
        if int(row["comp"]):
            counts_comp[r] = counts_comp.get(r, 0) + 1
    ranks = list(range(1, max(counts) + 1)) if counts else []
    total = sum(counts.values())
    total_comp = sum(counts_comp.values())
    return FigureData("rank_histogram", {
        "rank": ranks,
        "fraction_all": [counts.get(r, 0) / total for r in ranks],
        "fraction_comp": [counts_comp.get(r, 0) / total_comp if total_comp else 0.0
                          for r in ranks],
    })


def make_cdf(users_path, users_path_b=None) -> FigureData:
    """Empirical CDF of per-user long-run throughput, one column per run."""
    def load(path):
        with open(path) as fh:
            return np.array([float(r["throughput"]) for r in csv.DictReader(fh)])
    a = np.sort(load(users_path))
    cols = {"throughput": [float(x) for x in a],
            "cdf": [float(v) for v in np.arange(1, a.size + 1) / a.size]}
    if users_path_b:
        b = np.sort(load(users_path_b))
        grid = a
        cols["cdf_b"] = [float(np.searchsorted(b, x, side="right") / b.size)
                         for x in grid]
    return FigureData("cdf", cols)
