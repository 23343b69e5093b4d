"""The episode loop: prompt, parse, dispatch, observe, repeat.

One episode is strictly sequential. The model sees the system prompt, the
serialized turn history (older observations truncated), and the current
image registry table; it must answer within the turn budget, after which
one forced-finalization prompt is issued.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .instances import BenchmarkInstance
from .models import ChatModel, ModelRequest, ModelTransportError
from .prompts import FORCED_FINALIZATION_PROMPT, SYSTEM_PROMPT, render_image_snippets
from .tools import EpisodeContext, dispatch, tool_descriptions
from .turns import (
    FinalAnswer,
    ToolCall,
    Turn,
    TurnParseError,
    error_observation,
    parse_turn,
    serialize_turn,
)

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10


class TrajectoryStatus(str, Enum):
    RUNNING = "Running"
    ANSWERED = "Answered"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    ABORTED = "Aborted"


@dataclass
class HistoryPolicy:
    """How much of the past the model sees each step."""

    keep_last_observations: int = 3
    truncate_older_to: int = 500
    max_attached_images: int = 4


@dataclass
class Trajectory:
    instance_id: int
    budget: int = DEFAULT_BUDGET
    turns: list[Turn] = field(default_factory=list)
    final_answer: str | None = None
    status: TrajectoryStatus = TrajectoryStatus.RUNNING

    @property
    def tool_call_count(self) -> int:
        return sum(1 for t in self.turns if isinstance(t.action, ToolCall))

    def check_invariants(self) -> list[str]:
        problems = []
        finals = [i for i, t in enumerate(self.turns) if t.is_final]
        if len(finals) > 1:
            problems.append(f"multiple final answers at turns {finals}")
        if finals and finals[0] != len(self.turns) - 1:
            problems.append("final answer is not the last turn")
        if len(self.turns) > self.budget + 1:
            problems.append(
                f"{len(self.turns)} turns exceed budget+1 = {self.budget + 1}"
            )
        return problems


def _truncate(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + f"… [truncated, {len(text)} chars total]"


def render_history(
    traj: Trajectory,
    ctx: EpisodeContext,
    inst: BenchmarkInstance,
    policy: HistoryPolicy | None = None,
    extra_instruction: str | None = None,
) -> ModelRequest:
    """Build the model request for the next step.

    Observations older than the policy window are truncated; attached
    images are the input plus the most recently produced registry entries.
    """
    policy = policy or HistoryPolicy()
    system = SYSTEM_PROMPT.format(
        question=inst.prompt,
        image="img_id=0 (see registry)",
        budget=traj.budget,
        tool_descriptions=tool_descriptions(ctx.enabled_tools),
        image_snippets=render_image_snippets(),
    )

    observation_turns = [t for t in traj.turns if t.observation is not None]
    keep_from = len(observation_turns) - policy.keep_last_observations
    obs_rank = {id(t): i for i, t in enumerate(observation_turns)}

    parts = []
    for turn in traj.turns:
        if turn.observation is None:
            parts.append(serialize_turn(turn))
            continue
        rendered = turn.observation.render()
        if obs_rank[id(turn)] < keep_from:
            rendered = _truncate(rendered, policy.truncate_older_to)
        parts.append(
            f"{serialize_turn(turn)}\n<tool_response>\n{rendered}\n</tool_response>"
        )

    registry_table = ctx.registry.render_table()
    body = "\n".join(
        filter(
            None,
            [
                "\n".join(parts),
                f"Current image registry:\n{registry_table}",
                extra_instruction or "",
            ],
        )
    )

    attached: list[str] = []
    if len(ctx.registry) > 0:
        attached.append(ctx.resolve_pointer(ctx.registry.resolve(0)))
    recent_ids = [
        img.img_id
        for t in traj.turns
        if t.observation is not None
        for img in t.observation.images
    ]
    for img_id in reversed(recent_ids):
        if len(attached) >= policy.max_attached_images:
            break
        pointer = ctx.resolve_pointer(ctx.registry.resolve(img_id))
        if pointer not in attached:
            attached.append(pointer)
    return ModelRequest(system=system, text=body, images=attached)


def step(
    traj: Trajectory,
    model: ChatModel,
    ctx: EpisodeContext,
    inst: BenchmarkInstance,
    policy: HistoryPolicy | None = None,
    extra_instruction: str | None = None,
    allow_tools: bool = True,
) -> Turn:
    """One model call, one parse, at most one tool dispatch.

    Parse failures come back to the model as an error observation on a
    recorded turn; they consume budget like any other turn. A transport
    failure is retried once, then the trajectory aborts.
    """
    if traj.status is not TrajectoryStatus.RUNNING:
        raise RuntimeError(f"trajectory is not in progress (status={traj.status.value})")
    request = render_history(traj, ctx, inst, policy, extra_instruction)
    try:
        raw = model.generate(request)
    except ModelTransportError as exc:
        logger.warning("model call failed (%s); retrying once", exc)
        try:
            raw = model.generate(request)
        except ModelTransportError:
            traj.status = TrajectoryStatus.ABORTED
            raise

    try:
        turn = parse_turn(raw)
    except TurnParseError as exc:
        turn = Turn(
            thought="",
            action=ToolCall(name="<unparseable>", arguments={"raw": raw[:2000]}),
            observation=error_observation(
                f"could not parse your last message ({exc.kind.value}): {exc}. "
                "Reply with <think>…</think> and exactly one <tool_call>…</tool_call> "
                "or <answer>…</answer>."
            ),
        )
        traj.turns.append(turn)
        return turn

    if isinstance(turn.action, FinalAnswer):
        traj.turns.append(turn)
        traj.final_answer = turn.action.text
        traj.status = TrajectoryStatus.ANSWERED
        return turn

    if allow_tools:
        turn.observation = dispatch(turn.action, ctx)
    else:
        turn.observation = error_observation("budget exhausted; tool call not executed")
    traj.turns.append(turn)
    return turn


def run_trajectory(
    inst: BenchmarkInstance,
    model: ChatModel,
    ctx: EpisodeContext,
    budget: int = DEFAULT_BUDGET,
    policy: HistoryPolicy | None = None,
) -> Trajectory:
    """Loop step() until a final answer or the budget runs out.

    On exhaustion a single finalization prompt demands an answer from the
    evidence gathered so far; without one the episode ends BudgetExhausted.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    traj = Trajectory(instance_id=inst.question_id, budget=budget)
    while traj.status is TrajectoryStatus.RUNNING and len(traj.turns) < budget:
        step(traj, model, ctx, inst, policy)

    if traj.status is TrajectoryStatus.RUNNING:
        step(
            traj,
            model,
            ctx,
            inst,
            policy,
            extra_instruction=FORCED_FINALIZATION_PROMPT,
            allow_tools=False,
        )
        if traj.status is TrajectoryStatus.RUNNING:
            traj.status = TrajectoryStatus.BUDGET_EXHAUSTED
    return traj
