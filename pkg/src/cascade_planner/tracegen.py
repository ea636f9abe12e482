"""Synthetic scored traces: Poisson arrivals, token lengths, per-stage scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import StageResult, TraceRecord

LENGTH_DISTS = ("exponential", "constant")


@dataclass(frozen=True)
class TraceSpec:
    """Scores are ``clip(mean_i + std_i * z_i, 0, 100)`` where the ``z_i`` share
    a common difficulty factor with correlation ``score_corr``."""

    count: int
    rate: float
    input_mean: float = 256.0
    output_means: tuple[float, ...] = (256.0,)
    score_means: tuple[float, ...] = (80.0,)
    score_stds: tuple[float, ...] = (10.0,)
    score_corr: float = 0.7
    length_dist: str = "exponential"
    seed: int = 0
    start_s: float = 0.0

    def __post_init__(self):
        C = len(self.output_means)
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.input_mean < 1 or any(m < 0 for m in self.output_means):
            raise ValueError("input mean must be >= 1 and output means >= 0")
        if len(self.score_means) != C or len(self.score_stds) != C:
            raise ValueError("output_means, score_means and score_stds need one entry per stage")
        if any(s < 0 for s in self.score_stds):
            raise ValueError("score_stds must be >= 0")
        if not -1.0 <= self.score_corr <= 1.0:
            raise ValueError("score_corr must be in [-1, 1]")
        if self.length_dist not in LENGTH_DISTS:
            raise ValueError(f"length_dist must be one of {LENGTH_DISTS}")

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        tup = ("output_means", "score_means", "score_stds")
        return cls(**{k: (tuple(float(x) for x in v) if k in tup else v)
                      for k, v in d.items() if k in cls.__dataclass_fields__})


def _lengths(rng: np.random.Generator, mean: float, n: int, dist: str, minimum: int) -> np.ndarray:
    if dist == "constant":
        return np.full(n, max(minimum, int(round(mean))), dtype=int)
    return np.maximum(minimum, np.rint(rng.exponential(mean, n))).astype(int) if mean > 0 \
        else np.zeros(n, dtype=int)


def generate_trace(spec: TraceSpec) -> list[TraceRecord]:
    n, C = spec.count, len(spec.output_means)
    if n == 0:
        return []
    rng = np.random.default_rng(spec.seed)
    arrivals = spec.start_s + np.cumsum(rng.exponential(1.0 / spec.rate, n))
    inputs = _lengths(rng, spec.input_mean, n, spec.length_dist, 1)
    outputs = np.stack([_lengths(rng, m, n, spec.length_dist, 1 if m > 0 else 0)
                        for m in spec.output_means], axis=1)
    common = rng.standard_normal(n)
    own = rng.standard_normal((n, C))
    rho = spec.score_corr
    z = rho * common[:, None] + math.sqrt(1.0 - rho * rho) * own
    scores = np.clip(np.asarray(spec.score_means) + np.asarray(spec.score_stds) * z, 0.0, 100.0)
    scores = np.round(scores, 2)
    return [
        TraceRecord(float(arrivals[k]), int(inputs[k]),
                    tuple(StageResult(int(outputs[k, i]), float(scores[k, i])) for i in range(C)))
        for k in range(n)
    ]
