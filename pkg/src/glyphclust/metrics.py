"""Clustering agreement scores computed from a contingency table.

All entropies and mutual information are in nats. The scores depend on
the label partitions only, never on label names or order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ContingencyTable:
    """Joint counts of (true label, predicted label) pairs."""

    counts: np.ndarray  # (n_true, n_pred) int64

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(true_labels, pred_labels) -> ContingencyTable:
    """Build the joint count table from two parallel label sequences."""
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("label sequences must be 1-d and equally long")
    if t.size == 0:
        raise ValueError("need at least one label")
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    counts = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(counts, (ti, pi), 1)
    return ContingencyTable(counts=counts)


def _entropy(totals: np.ndarray, n: int) -> float:
    pos = totals[totals > 0].astype(np.float64)
    pr = pos / n
    return float(-(pr * np.log(pr)).sum())


def mutual_info(table: ContingencyTable) -> float:
    """Unnormalized mutual information between the two labelings, in nats."""
    n = table.n
    rows = table.row_totals().astype(np.float64)
    cols = table.col_totals().astype(np.float64)
    total = 0.0
    nz = np.nonzero(table.counts)
    for a, b in zip(*nz):
        nab = float(table.counts[a, b])
        total += (nab / n) * math.log(nab * n / (rows[a] * cols[b]))
    return total


def _conditional_entropy(counts: np.ndarray, cond_totals: np.ndarray, n: int) -> float:
    """H(rows | cols): counts is (R, C), cond_totals its column sums."""
    total = 0.0
    nz = np.nonzero(counts)
    for a, b in zip(*nz):
        nab = float(counts[a, b])
        total -= (nab / n) * math.log(nab / cond_totals[b])
    return total


def v_measure(table: ContingencyTable) -> float:
    """Harmonic mean of homogeneity and completeness.

    Computed from conditional entropies, so a permutation-perfect table
    scores exactly 1 and a constant prediction against a varied truth
    scores exactly 0. Homogeneity is 1 when the true labeling is
    constant; completeness is 1 when the prediction is constant; the
    measure is 0 when both terms vanish.
    """
    n = table.n
    rows = table.row_totals().astype(np.float64)
    cols = table.col_totals().astype(np.float64)
    h_true = _entropy(rows, n)
    h_pred = _entropy(cols, n)
    hom = 1.0 if h_true == 0 else 1.0 - _conditional_entropy(table.counts, cols, n) / h_true
    com = 1.0 if h_pred == 0 else 1.0 - _conditional_entropy(table.counts.T, rows, n) / h_pred
    if hom + com == 0:
        return 0.0
    return 2.0 * hom * com / (hom + com)


def _pairs(totals: np.ndarray) -> float:
    t = totals.astype(np.float64)
    return float((t * (t - 1.0)).sum() / 2.0)


def fowlkes_mallows(table: ContingencyTable) -> float:
    """Geometric mean of pairwise precision and recall.

    Zero when either labeling places every point in its own cluster
    (no co-clustered pairs on one side).
    """
    tp = _pairs(table.counts.reshape(-1))
    same_true = _pairs(table.row_totals())
    same_pred = _pairs(table.col_totals())
    if same_true == 0 or same_pred == 0:
        return 0.0
    return tp / math.sqrt(same_true * same_pred)


def report(per_class: dict[str, dict], variant: str, k: int) -> dict:
    """Aggregate per-class clustering results into one summary record.

    per_class maps a class name to {"true": [...], "pred": [...]} plus an
    optional "nll_bound". The summary carries macro averages over classes
    and the per-class scores.
    """
    if not per_class:
        raise ValueError("need at least one class")
    detail = {}
    for name, entry in sorted(per_class.items()):
        table = contingency(entry["true"], entry["pred"])
        scores = {
            "v_measure": v_measure(table),
            "mutual_info": mutual_info(table),
            "fowlkes_mallows": fowlkes_mallows(table),
        }
        if "nll_bound" in entry:
            scores["nll_bound"] = float(entry["nll_bound"])
        detail[name] = scores

    def macro(key: str) -> float | None:
        vals = [d[key] for d in detail.values() if key in d]
        return sum(vals) / len(vals) if vals else None

    out = {
        "variant": variant,
        "K": k,
        "v_measure": macro("v_measure"),
        "mutual_info": macro("mutual_info"),
        "fowlkes_mallows": macro("fowlkes_mallows"),
        "per_class": detail,
    }
    nll = macro("nll_bound")
    if nll is not None:
        out["nll_bound"] = nll
    return out
