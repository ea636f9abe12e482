"""Capacity planning and trace-driven simulation for LLM model cascades."""

from .domain import (CascadePlan, HardwareSpec, ModelSpec, ObjectivePoint, ParallelismPlan,
                     PlannerError, ReplicaShape, RoutingThresholds, TraceRecord, WorkloadStats,
                     canonicalize, validate_plan)

__version__ = "0.1.0"

__all__ = [
    "CascadePlan", "HardwareSpec", "ModelSpec", "ObjectivePoint", "ParallelismPlan",
    "PlannerError", "ReplicaShape", "RoutingThresholds", "TraceRecord", "WorkloadStats",
    "canonicalize", "validate_plan",
]
