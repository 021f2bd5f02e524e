"""Metrics persistence: one CSV row per evaluation point.

Columns: frames, seed, mean_return, stddev, policy_loss, value_loss,
entropy, tdae_loss, wall_time. The loss columns are means over the training
updates performed since the previous row (zeros on the frames=0 row), the
entropy column is the mean policy entropy in nats, and wall_time is written
as 0.0 so that repeated runs of the same (config, seed) produce
byte-identical files. Floats are written with repr so parsing them back is
exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("frames", "seed", "mean_return", "stddev", "policy_loss",
           "value_loss", "entropy", "tdae_loss", "wall_time")


@dataclass
class EvalRecord:
    frames_so_far: int
    seed: int
    mean_return: float
    return_stddev: float
    returns: np.ndarray
    wall_time: float = 0.0

    @classmethod
    def from_returns(cls, frames: int, seed: int, returns) -> "EvalRecord":
        r = np.asarray(returns, dtype=np.float64)
        return cls(frames, seed, float(r.mean()), float(r.std()), r)


@dataclass
class LossAccumulator:
    """Running sums of per-update loss terms between two eval rows."""

    updates: int = 0
    sums: dict = field(default_factory=lambda: {
        "policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "tdae_loss": 0.0})

    def add(self, breakdown):
        self.updates += 1
        self.sums["policy_loss"] += breakdown.policy_loss
        self.sums["value_loss"] += breakdown.value_loss
        self.sums["entropy"] += breakdown.mean_entropy
        self.sums["tdae_loss"] += breakdown.tdae_loss

    def means(self) -> dict:
        if self.updates == 0:
            return {k: 0.0 for k in self.sums}
        return {k: v / self.updates for k, v in self.sums.items()}

    def reset(self):
        self.updates = 0
        for k in self.sums:
            self.sums[k] = 0.0


class MetricsWriter:
    """Appends rows as the run progresses; flushes after every row so a
    crashed run leaves a readable partial file."""

    def __init__(self, path: str):
        self.path = path
        self._f = open(path, "w", encoding="utf-8", newline="\n")
        self._f.write(",".join(COLUMNS) + "\n")
        self._f.flush()

    def write_row(self, record: EvalRecord, loss_means: dict):
        vals = [str(record.frames_so_far), str(record.seed),
                repr(record.mean_return), repr(record.return_stddev),
                repr(float(loss_means["policy_loss"])),
                repr(float(loss_means["value_loss"])),
                repr(float(loss_means["entropy"])),
                repr(float(loss_means["tdae_loss"])),
                repr(float(record.wall_time))]
        self._f.write(",".join(vals) + "\n")
        self._f.flush()

    def close(self):
        if not self._f.closed:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> dict:
    """Reads a metrics CSV back into {column: float64 array}."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        return {c: np.zeros(0) for c in COLUMNS}
    mat = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    return {c: mat[:, i] for i, c in enumerate(COLUMNS)}
