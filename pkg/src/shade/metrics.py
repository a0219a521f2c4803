"""External clustering validity: ARI, NMI and noise-aware views.

Conventions for degenerate inputs:

* ARI is 1.0 when the chance-adjusted denominator vanishes (e.g. both
  labelings put everything in one cluster).
* NMI uses natural-log entropies normalised by their arithmetic mean and is
  1.0 when both labelings have zero entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hierarchy import NOISE, ClusterAssignment, assign_noise_1nn

__all__ = ["ContingencyTable", "contingency", "confusion_matrix", "ari", "nmi", "evaluate_with_noise"]


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # (r, c) co-occurrence counts
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _check_pair(labels_a, labels_b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if len(a) != len(b):
        raise ValueError(f"labelings have different lengths: {len(a)} vs {len(b)}")
    return a, b


def contingency(labels_a, labels_b) -> ContingencyTable:
    a, b = _check_pair(labels_a, labels_b)
    ra, ia = np.unique(a, return_inverse=True)
    rb, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((len(ra), len(rb)), dtype=np.int64)
    np.add.at(counts, (ia, ib), 1)
    return ContingencyTable(counts, ra, rb)


confusion_matrix = contingency


def _pairs(x: np.ndarray) -> float:
    x = x.astype(np.float64)
    return float((x * (x - 1) / 2).sum())


def ari(labels_a, labels_b) -> float:
    table = contingency(labels_a, labels_b)
    n = table.total
    if n < 2:
        return 1.0
    index = _pairs(table.counts)
    sum_a = _pairs(table.rows)
    sum_b = _pairs(table.cols)
    expected = sum_a * sum_b / (n * (n - 1) / 2)
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(labels_a, labels_b) -> float:
    table = contingency(labels_a, labels_b)
    n = table.total
    if n == 0:
        return 1.0
    h_a = _entropy(table.rows, n)
    h_b = _entropy(table.cols, n)
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    nz = table.counts > 0
    pij = table.counts[nz] / n
    outer = np.outer(table.rows, table.cols)[nz] / n**2
    mi = float((pij * np.log(pij / outer)).sum())
    return max(0.0, min(1.0, mi / ((h_a + h_b) / 2)))


def evaluate_with_noise(truth, assignment: ClusterAssignment, embedding) -> dict:
    """Scores in the ``metrics.json`` layout.

    ``ari``/``nmi`` treat the noise label as one more cluster; the
    ``_nonnoise`` pair only scores points the clustering did not call noise;
    the ``_1nn`` pair scores after every noise point took the label of its
    nearest clustered point. When everything is noise the ``_nonnoise`` pair
    is ``None`` and the 1nn step raises.
    """
    truth = np.asarray(truth)
    labels = assignment.labels
    if len(truth) != len(labels):
        raise ValueError(f"truth has {len(truth)} labels, assignment has {len(labels)}")
    keep = labels != NOISE
    out = {
        "ari": ari(truth, labels),
        "nmi": nmi(truth, labels),
        "ari_nonnoise": ari(truth[keep], labels[keep]) if keep.any() else None,
        "nmi_nonnoise": nmi(truth[keep], labels[keep]) if keep.any() else None,
    }
    filled = assign_noise_1nn(embedding, assignment).labels
    out["ari_1nn"] = ari(truth, filled)
    out["nmi_1nn"] = nmi(truth, filled)
    out["k_detected"] = assignment.k
    out["noise_ratio"] = assignment.noise_ratio
    return out

