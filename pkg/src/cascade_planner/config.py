"""One JSON document describing the cluster, cascade, cost model, sweep and drift policy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .costmodel import CostModelParams, with_min_gpus
from .domain import HardwareSpec, ModelSpec, check_cascade
from .drift import DriftPolicy
from .outerplan import SweepGrid


@dataclass(frozen=True)
class PlannerConfig:
    hardware: HardwareSpec
    models: tuple[ModelSpec, ...]
    cost_model: CostModelParams = field(default_factory=CostModelParams)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    drift: DriftPolicy = field(default_factory=DriftPolicy)

    def with_seed(self, seed: int | None) -> "PlannerConfig":
        if seed is None:
            return self
        return replace(self, cost_model=replace(self.cost_model, queueing_sim_seed=seed))

    def to_dict(self) -> dict:
        return {
            "hardware": self.hardware.to_dict(),
            "models": [m.to_dict() for m in self.models],
            "cost_model": self.cost_model.to_dict(),
            "sweep": self.sweep.to_dict(),
            "drift": self.drift.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        hw = HardwareSpec.from_dict(d["hardware"])
        models = tuple(with_min_gpus(ModelSpec.from_dict(m), hw) for m in d["models"])
        check_cascade(models)
        return cls(
            hardware=hw,
            models=models,
            cost_model=CostModelParams.from_dict(d.get("cost_model", {})),
            sweep=SweepGrid.from_dict(d.get("sweep", {})),
            drift=DriftPolicy.from_dict(d.get("drift", {})),
        )


def load_config(path: str | Path) -> PlannerConfig:
    with open(path, encoding="utf-8") as fh:
        return PlannerConfig.from_dict(json.load(fh))
