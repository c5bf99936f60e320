"""Distributional comparison of token streams: JS divergence and intersection area.

Velocity, Duration and IOI are compared as histograms over their raw token
values; the four pedal tokens of each note are binarized (>= 64 is down) and
packed into a 4-bit code, Pedal1 as the most significant bit.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tokenizer import MAX_DURATION, MAX_IOI, frames

DIMENSIONS = ("velocity", "duration", "ioi", "pedal")
SUPPORT = {"velocity": 128, "duration": MAX_DURATION + 1, "ioi": MAX_IOI + 1, "pedal": 16}
_SLOT = {"velocity": 2, "duration": 3, "ioi": 1}
PEDAL_THRESHOLD = 64


class MetricError(ValueError):
    pass


class EmptyDimension(MetricError):
    pass


class SupportMismatch(MetricError):
    pass


class SingletonGroup(MetricError):
    pass


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray
    count: int
    dimension: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise MetricError("probabilities must be non-negative and sum to 1")


def _counts(seqs, dimension: str, bin_width: int = 1) -> np.ndarray:
    if dimension not in SUPPORT:
        raise MetricError(f"unknown dimension {dimension!r}")
    if bin_width < 1:
        raise MetricError("bin_width must be >= 1")
    if dimension == "pedal":
        bin_width = 1
    size = -(-SUPPORT[dimension] // bin_width)
    counts = np.zeros(size, dtype=np.int64)
    for seq in seqs:
        f = frames(seq)
        if not len(f):
            continue
        if dimension == "pedal":
            bits = (f[:, 4:] >= PEDAL_THRESHOLD).astype(np.int64)
            values = bits @ np.array([8, 4, 2, 1])
        else:
            values = f[:, _SLOT[dimension]] // bin_width
        counts += np.bincount(values, minlength=size)
    return counts


def token_distribution(seqs: Sequence, dimension: str, bin_width: int = 1) -> Distribution:
    """Pooled histogram of one dimension over every frame of every sequence.

    ``bin_width`` > 1 merges adjacent values (ignored for pedal codes).
    """
    counts = _counts(seqs, dimension, bin_width)
    total = int(counts.sum())
    if total == 0:
        raise EmptyDimension(f"no {dimension} tokens to count")
    return Distribution(counts / total, total, dimension)


def pedal_joint_distribution(seqs: Sequence) -> Distribution:
    return token_distribution(seqs, "pedal")


def _pair(p, q):
    p = p.probs if isinstance(p, Distribution) else np.asarray(p, dtype=np.float64)
    q = q.probs if isinstance(q, Distribution) else np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise SupportMismatch(f"support sizes differ: {p.shape} vs {q.shape}")
    return p, q


def js_divergence(p, q) -> float:
    """Base-2 Jensen-Shannon divergence; ``0 log 0`` terms contribute nothing."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def intersection_area(p, q) -> float:
    p, q = _pair(p, q)
    return float(np.minimum(p, q).sum())


@dataclass(frozen=True)
class MetricReport:
    js: Mapping[str, float]
    intersection: Mapping[str, float]
    seed: int | None = None

    @property
    def overall_js(self) -> float:
        return float(np.mean([self.js[d] for d in DIMENSIONS]))

    @property
    def overall_intersection(self) -> float:
        return float(np.mean([self.intersection[d] for d in DIMENSIONS]))

    def to_text(self) -> str:
        lines = []
        if self.seed is not None:
            lines.append(f"seed: {self.seed}")
        for d in DIMENSIONS:
            lines.append(f"{d}.js: {self.js[d]:.6f}")
            lines.append(f"{d}.intersection: {self.intersection[d]:.6f}")
        lines.append(f"overall.js: {self.overall_js:.6f}")
        lines.append(f"overall.intersection: {self.overall_intersection:.6f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        row = {}
        for d in DIMENSIONS:
            row[f"{d}_js"] = self.js[d]
            row[f"{d}_intersection"] = self.intersection[d]
        row["overall_js"] = self.overall_js
        row["overall_intersection"] = self.overall_intersection
        if self.seed is not None:
            row["seed"] = self.seed
        return row

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def to_csv(self, label: str = "candidate") -> str:
        """One header row and one data row, per-dimension columns first."""
        row = {"system": label, **self.to_dict()}
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()


def evaluate_testset(candidates: Sequence, references: Sequence, bin_width: int = 1) -> MetricReport:
    if not candidates or not references:
        raise MetricError("need at least one candidate and one reference sequence")
    js, inter = {}, {}
    for d in DIMENSIONS:
        p = token_distribution(candidates, d, bin_width)
        q = token_distribution(references, d, bin_width)
        js[d] = js_divergence(p, q)
        inter[d] = intersection_area(p, q)
    return MetricReport(js, inter)


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    return MetricReport(
        {d: float(np.mean([r.js[d] for r in reports])) for d in DIMENSIONS},
        {d: float(np.mean([r.intersection[d] for r in reports])) for d in DIMENSIONS},
    )


def human_baseline(groups: Sequence[Sequence], bin_width: int = 1) -> MetricReport:
    """Leave-one-out: each performance against the pooled rest of its piece, averaged."""
    reports = []
    for g, perfs in enumerate(groups):
        if len(perfs) < 2:
            raise SingletonGroup(f"piece {g} has {len(perfs)} performance(s); need at least 2")
        for i in range(len(perfs)):
            rest = [p for j, p in enumerate(perfs) if j != i]
            reports.append(evaluate_testset([perfs[i]], rest, bin_width))
    if not reports:
        raise MetricError("no performance groups given")
    return mean_report(reports)
