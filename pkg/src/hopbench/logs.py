"""Trajectory logs: JSONL with a header record, one turn per line, a footer.

Log text is deterministic given the same inputs; in replay mode the
runner passes wall_clock_s=0.0 so reruns are byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .engine import Trajectory, TrajectoryStatus
from .registry import ImageRegistry
from .turns import Turn


def _dump(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def trajectory_log_lines(
    traj: Trajectory,
    config_digest: str = "",
    policy_name: str = "agentic",
    wall_clock_s: float = 0.0,
) -> list[str]:
    header = {
        "record": "header",
        "question_id": traj.instance_id,
        "budget": traj.budget,
        "config_digest": config_digest,
        "policy": policy_name,
    }
    lines = [_dump(header)]
    for i, turn in enumerate(traj.turns):
        lines.append(_dump({"record": "turn", "index": i, **turn.to_json()}))
    footer = {
        "record": "footer",
        "status": traj.status.value,
        "final_answer": traj.final_answer,
        "wall_clock_s": wall_clock_s,
    }
    lines.append(_dump(footer))
    return lines


def write_trajectory_log(
    traj: Trajectory,
    path: str | Path,
    config_digest: str = "",
    policy_name: str = "agentic",
    wall_clock_s: float = 0.0,
    registry: ImageRegistry | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(
        trajectory_log_lines(traj, config_digest, policy_name, wall_clock_s)
    ) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    if registry is not None:
        registry.save(path.with_suffix(".registry.json"))


@dataclass
class LoadedLog:
    trajectory: Trajectory
    header: dict[str, Any]
    footer: dict[str, Any]


def read_trajectory_log(path: str | Path) -> LoadedLog:
    header: dict[str, Any] = {}
    footer: dict[str, Any] = {}
    turns: list[Turn] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        record = obj.get("record")
        if record == "header":
            header = obj
        elif record == "footer":
            footer = obj
        elif record == "turn":
            turns.append(Turn.from_json(obj))
    traj = Trajectory(
        instance_id=header.get("question_id", -1),
        budget=header.get("budget", 0),
        turns=turns,
        final_answer=footer.get("final_answer"),
        status=TrajectoryStatus(footer.get("status", "Aborted")),
    )
    return LoadedLog(trajectory=traj, header=header, footer=footer)
