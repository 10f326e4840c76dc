"""Oversegmentation quality: oracle overall accuracy and tolerant boundary recall/precision."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import AdjacencyGraph, EdgeClassification, Partition

__all__ = [
    "MetricsReport", "oracle_overall_accuracy", "boundary_metrics", "evaluate_partition",
    "write_report_json", "write_reports_csv", "SWEEP_CSV_HEADER",
]

SWEEP_CSV_HEADER = ("lambda_tilde", "n_superpoints", "ooa", "br", "bp")


@dataclass
class MetricsReport:
    ooa: float
    br: float
    bp: float
    num_superpoints: int
    lambda_tilde: float | None = None
    n_min: int | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        vals = (self.ooa, self.br, self.bp)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"metrics must be finite, got {vals}")
        if not (0.0 <= self.ooa <= 1.0 and self.br >= 0.0 and 0.0 <= self.bp <= 1.0):
            raise ValueError(f"metrics out of range: ooa={self.ooa}, br={self.br}, bp={self.bp}")

    def to_json_dict(self) -> dict:
        out = {"ooa": self.ooa, "br": self.br, "bp": self.bp,
               "n_superpoints": self.num_superpoints, "lambda_tilde": self.lambda_tilde}
        if self.n_min is not None:
            out["n_min"] = self.n_min
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def oracle_overall_accuracy(partition: Partition, labels: np.ndarray | None) -> float:
    """Share of points whose class equals the most frequent class of their superpoint.

    Ties in the mode go to the smallest class id, which does not change the
    count of agreeing points.
    """
    if labels is None:
        raise ValueError("class labels are required for OOA")
    labels = np.asarray(labels)
    sp = partition.assignment
    if labels.shape != sp.shape:
        raise ValueError(f"got {labels.shape[0]} labels for {sp.shape[0]} points")
    if len(labels) == 0:
        raise ValueError("OOA is undefined on an empty cloud")
    if labels.min() < 0:
        raise ValueError("every point needs a class label for OOA")
    _, cls = np.unique(labels, return_inverse=True)
    counts = np.zeros((partition.num_superpoints, cls.max() + 1), dtype=np.int64)
    np.add.at(counts, (sp, cls.reshape(-1)), 1)
    return float(counts.max(axis=1).sum() / len(labels))


def _boundary(predicted: np.ndarray, classification: EdgeClassification):
    pred = np.unique(np.asarray(predicted, dtype=np.int64))
    hit = len(np.intersect1d(pred, classification.inter_expanded, assume_unique=True))
    n_gt, n_pred = len(classification.inter), len(pred)
    flags = []
    if n_gt == 0:
        br = 1.0
        if n_pred:
            flags.append("br_undefined_no_ground_truth_boundary")
    else:
        br = hit / n_gt
    if n_pred == 0:
        bp = 1.0
        flags.append("bp_zero_predictions")
    else:
        bp = hit / n_pred
    return br, bp, flags


def boundary_metrics(predicted_transitions: np.ndarray,
                     classification: EdgeClassification) -> tuple[float, float]:
    """Boundary recall and precision with a one-edge tolerance.

    ``predicted_transitions`` holds edge indices. The numerator of both
    ratios counts predicted edges falling inside the tolerance zone, so
    recall is not clamped and can exceed 1 when several predictions share a
    zone.
    """
    br, bp, _ = _boundary(predicted_transitions, classification)
    return br, bp


def evaluate_partition(partition: Partition, graph: AdjacencyGraph, labels: np.ndarray,
                       classification: EdgeClassification, lambda_tilde: float | None = None,
                       n_min: int | None = None) -> MetricsReport:
    ooa = oracle_overall_accuracy(partition, labels)
    br, bp, flags = _boundary(partition.transitions(graph), classification)
    return MetricsReport(ooa, br, bp, partition.num_superpoints, lambda_tilde, n_min, flags)


def write_report_json(report: MetricsReport, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports_csv(reports: list[MetricsReport], path: str | os.PathLike,
                      with_n_min: bool = True) -> None:
    """Sweep table, one row per report."""
    header = list(SWEEP_CSV_HEADER) + (["n_min"] if with_n_min else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in reports:
            lam = "" if r.lambda_tilde is None else repr(float(r.lambda_tilde))
            row = [lam, r.num_superpoints, repr(float(r.ooa)), repr(float(r.br)), repr(float(r.bp))]
            if with_n_min:
                row.append("" if r.n_min is None else r.n_min)
            writer.writerow(row)
