"""Two-Gaussian log-likelihood-ratio scoring over network codes.

After training, one diagonal Gaussian is fit to the codes of the genuine
training utterances and one to the spoofed ones.  A trial's score is the
log probability under the genuine model minus the log probability under
the spoofed model, so higher means more genuine.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_params, save_params

STD_FLOOR = 1e-6


@dataclass
class GaussianModel:
    """Diagonal Gaussian: per-dimension mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.std).all()):
            raise ValueError("Gaussian parameters must be finite")
        if np.any(self.std < STD_FLOOR):
            raise ValueError(f"std below floor {STD_FLOOR}")

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_gaussian(codes: np.ndarray) -> GaussianModel:
    """Per-dimension sample mean and population (1/N) standard deviation,
    floored at 1e-6."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise ValueError("need at least 2 codes, shaped (count, dim)")
    mean = codes.mean(axis=0)
    std = np.maximum(codes.std(axis=0), STD_FLOOR)
    return GaussianModel(mean, std)


def log_prob(g: GaussianModel, code: np.ndarray) -> float:
    """Diagonal-Gaussian log density of one code."""
    code = np.asarray(code, dtype=np.float64)
    if code.shape != g.mean.shape:
        raise ValueError(f"code dim {code.shape} != model dim {g.mean.shape}")
    z = (code - g.mean) / g.std
    return float(np.sum(-np.log(g.std) - 0.5 * np.log(2.0 * np.pi) - 0.5 * z * z))


def llr_score(code: np.ndarray, g_genuine: GaussianModel, g_spoofed: GaussianModel) -> float:
    """log p(code | genuine) - log p(code | spoofed); higher = more genuine."""
    return log_prob(g_genuine, code) - log_prob(g_spoofed, code)


def save_backend(path: str | Path, g_genuine: GaussianModel, g_spoofed: GaussianModel) -> None:
    save_params(path, {
        "genuine.mean": g_genuine.mean,
        "genuine.std": g_genuine.std,
        "spoofed.mean": g_spoofed.mean,
        "spoofed.std": g_spoofed.std,
    })


def load_backend(path: str | Path) -> tuple[GaussianModel, GaussianModel]:
    tensors = load_params(path)
    try:
        genuine = GaussianModel(tensors["genuine.mean"], tensors["genuine.std"])
        spoofed = GaussianModel(tensors["spoofed.mean"], tensors["spoofed.std"])
    except KeyError as e:
        raise ValueError(f"backend model file {path} is missing tensor {e}") from e
    return genuine, spoofed


def write_scores(path: str | Path, ids: list[str], scores: np.ndarray) -> None:
    """One `<utterance_id> <score>` line per trial, 6-decimal fixed format."""
    if len(ids) != len(scores):
        raise ValueError("ids and scores must align")
    with open(path, "w", encoding="utf-8", newline="") as f:
        for utt_id, score in zip(ids, scores):
            f.write(f"{utt_id} {score:.6f}\n")


def read_scores(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    scores: list[float] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected '<id> <score>', got {line!r}")
            ids.append(parts[0])
            scores.append(float(parts[1]))
    return ids, np.asarray(scores, dtype=np.float64)
