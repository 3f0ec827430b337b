"""Detection metrics: DET operating points and equal error rate.

Conventions: a trial is accepted when its score is >= the threshold, so
ties at the threshold count as accepted.  The threshold sweep visits every
distinct score plus +inf; the EER is read at the FAR = FRR crossing with
linear interpolation between the two adjacent operating points when no
sweep point hits it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class TrialSet:
    """Scored trials with genuine/spoofed ground truth."""

    ids: list[str]
    scores: np.ndarray
    is_genuine: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_genuine = np.asarray(self.is_genuine, dtype=bool)
        if self.scores.shape != self.is_genuine.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be aligned 1-D arrays")
        if len(self.ids) != self.scores.size:
            raise ValueError("ids must align with scores")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")

    @classmethod
    def from_rows(cls, rows) -> "TrialSet":
        """Build from (utterance_id, score, 'genuine'|'spoofed') triples."""
        ids, scores, labels = [], [], []
        for utt_id, score, label in rows:
            if label not in ("genuine", "spoofed"):
                raise ValueError(f"bad trial label {label!r} for {utt_id}")
            ids.append(utt_id)
            scores.append(float(score))
            labels.append(label == "genuine")
        return cls(ids, np.asarray(scores), np.asarray(labels))

    def require_both_labels(self) -> None:
        if not self.is_genuine.any() or self.is_genuine.all():
            raise ValueError("need at least one genuine and one spoofed trial")


def det_points(t: TrialSet) -> np.ndarray:
    """Operating points (threshold, FAR, FRR), one per distinct score plus +inf.

    FAR is the fraction of spoofed trials with score >= threshold; FRR the
    fraction of genuine trials below it.  FAR is non-increasing and FRR
    non-decreasing along the sweep.
    """
    t.require_both_labels()
    genuine = np.sort(t.scores[t.is_genuine])
    spoofed = np.sort(t.scores[~t.is_genuine])
    thresholds = np.concatenate([np.unique(t.scores), [np.inf]])
    # count via binary search on the sorted class scores
    far = 1.0 - np.searchsorted(spoofed, thresholds, side="left") / spoofed.size
    frr = np.searchsorted(genuine, thresholds, side="left") / genuine.size
    far[-1] = 0.0  # nothing scores >= +inf
    return np.column_stack([thresholds, far, frr])


def compute_eer(t: TrialSet) -> float:
    """Equal error rate in percent, interpolated at the FAR = FRR crossing."""
    points = det_points(t)
    far = points[:, 1]
    frr = points[:, 2]
    diff = far - frr
    # diff starts at +1 (accept everything) and ends at -1 (reject everything)
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(100.0 * far[idx])
    d_prev, d_next = diff[idx - 1], diff[idx]
    s = d_prev / (d_prev - d_next)
    eer = far[idx - 1] + s * (far[idx] - far[idx - 1])
    return float(100.0 * eer)


def export_codes(ids: list[str], spoof_labels: list[str], codes: np.ndarray,
                 path: str | Path) -> None:
    """CSV of codes for external visualization: id, spoof label, c0..c{d-1}."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ValueError("codes must be a non-empty (count, dim) matrix")
    if not (len(ids) == len(spoof_labels) == codes.shape[0]):
        raise ValueError("ids, labels, and codes must align")
    dim = codes.shape[1]
    header = "id,label_spoof," + ",".join(f"c{i}" for i in range(dim))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header + "\n")
        for utt_id, label, row in zip(ids, spoof_labels, codes):
            values = ",".join(f"{v:.6f}" for v in row)
            f.write(f"{utt_id},{label},{values}\n")


def read_codes(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse an :func:`export_codes` CSV back into ids, labels, codes."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(",")
        if header[:2] != ["id", "label_spoof"]:
            raise ValueError(f"unexpected code CSV header in {path}")
        ids, labels, rows = [], [], []
        for line in f:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            labels.append(parts[1])
            rows.append([float(v) for v in parts[2:]])
    return ids, labels, np.asarray(rows, dtype=np.float64)


def summary_block(t: TrialSet) -> str:
    """Report block: `eer_pct=<f> n_genuine=<n> n_spoofed=<n>`."""
    eer = compute_eer(t)
    n_gen = int(t.is_genuine.sum())
    n_spf = int((~t.is_genuine).sum())
    return f"eer_pct={eer:.4f} n_genuine={n_gen} n_spoofed={n_spf}"
