"""Reliability bins, expected calibration error, prediction entropy.

ECE is the bin-count-weighted mean |accuracy - confidence| over M equal-width
confidence bins on (0, 1]; bin edges are half-open (lo, hi] with confidence
exactly 0 assigned to the first bin. Note ECE measures calibration only, not
refinement: a chance-level predictor with uniform confidences can score near
zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError


@dataclass
class CalibrationReport:
    n_bins: int
    counts: np.ndarray  # (M,) points per bin
    conf: np.ndarray  # (M,) mean confidence per bin (0 where empty)
    acc: np.ndarray  # (M,) accuracy per bin (0 where empty)
    ece: float
    entropies: np.ndarray | None  # (N,) prediction entropies when distributions given

    @property
    def mean_entropy(self) -> float:
        return float(self.entropies.mean()) if self.entropies is not None else float("nan")


def prediction_entropy(distributions: np.ndarray) -> np.ndarray:
    """-sum_c p_c log p_c per row, natural log, 0 log 0 = 0."""
    p = np.asarray(distributions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def calibrate(confidence, predicted, true, bins: int = 10,
              distributions=None) -> CalibrationReport:
    """Bin predictions by confidence and report per-bin accuracy/confidence and ECE."""
    confidence = np.asarray(confidence, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted).reshape(-1)
    true = np.asarray(true).reshape(-1)
    if confidence.size == 0:
        raise ArgumentError("empty prediction list")
    if confidence.size != predicted.size or confidence.size != true.size:
        raise ArgumentError("confidence, predicted, true must have equal length")
    if bins < 1:
        raise ArgumentError("need at least one bin")
    if np.any(confidence < 0) or np.any(confidence > 1):
        raise ArgumentError("confidences must lie in [0, 1]")
    n = confidence.size
    # (lo, hi] bins: index = ceil(conf * M) - 1, with conf == 0 in bin 0
    idx = np.ceil(confidence * bins).astype(int) - 1
    idx = np.clip(idx, 0, bins - 1)
    correct = (predicted == true).astype(np.float64)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    conf_sum = np.bincount(idx, weights=confidence, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    with np.errstate(invalid="ignore"):
        conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), 0.0)
        acc = np.where(counts > 0, acc_sum / np.maximum(counts, 1), 0.0)
    ece = float(np.sum(counts / n * np.abs(acc - conf)))
    entropies = prediction_entropy(distributions) if distributions is not None else None
    return CalibrationReport(bins, counts.astype(int), conf, acc, ece, entropies)


def calibrate_network(net, dataset, bins: int = 10) -> CalibrationReport:
    """Calibration of a classifier's softmax predictions on a dataset."""
    from .network import forward_batch
    from .objective import softmax

    p = softmax(forward_batch(net, dataset.inputs).output)
    predicted = p.argmax(axis=1)
    confidence = p[np.arange(p.shape[0]), predicted]
    return calibrate(confidence, predicted, dataset.targets, bins, distributions=p)
