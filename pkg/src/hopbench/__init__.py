"""hopbench: agentic browse-and-verify harness with trajectory analytics."""

__version__ = "0.1.0"

from .engine import HistoryPolicy, Trajectory, TrajectoryStatus, run_trajectory, step
from .instances import (
    BenchmarkInstance,
    ChainNode,
    Level,
    Milestone,
    extract_milestones,
    load_instances,
    validate_instance,
)
from .registry import ImageRegistry, Provenance
from .turns import FinalAnswer, Observation, ToolCall, Turn, parse_turn, serialize_turn

__all__ = [
    "BenchmarkInstance",
    "ChainNode",
    "FinalAnswer",
    "HistoryPolicy",
    "ImageRegistry",
    "Level",
    "Milestone",
    "Observation",
    "Provenance",
    "ToolCall",
    "Trajectory",
    "TrajectoryStatus",
    "Turn",
    "extract_milestones",
    "load_instances",
    "parse_turn",
    "run_trajectory",
    "serialize_turn",
    "step",
    "validate_instance",
]
