from __future__ import annotations

import json

import pytest

from hopbench.engine import (
    HistoryPolicy,
    Trajectory,
    TrajectoryStatus,
    render_history,
    run_trajectory,
    step,
)
from hopbench.logs import read_trajectory_log, trajectory_log_lines, write_trajectory_log
from hopbench.models import FailingModel, ModelTransportError, ScriptedModel
from hopbench.providers import StaticProviders
from hopbench.turns import FinalAnswer, Observation, ObservationKind, ToolCall, Turn
from tests.conftest import make_context


def visit_call(n: int = 0) -> str:
    payload = json.dumps(
        {"name": "Visit", "arguments": {"url": f"https://site.example/{n}", "goal": "g"}}
    )
    return f"<think>step {n}</think><tool_call>{payload}</tool_call>"


def static_with_pages(n: int = 20) -> StaticProviders:
    return StaticProviders(
        pages={f"https://site.example/{i}": f"page body {i}" for i in range(n)}
    )


class TestStep:
    def test_answer_turn_finishes_without_dispatch(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        model = ScriptedModel(["<think>done</think><answer>Paris</answer>"])
        traj = Trajectory(instance_id=l1_instance.question_id, budget=5)
        turn = step(traj, model, ctx, l1_instance)
        assert isinstance(turn.action, FinalAnswer)
        assert traj.status is TrajectoryStatus.ANSWERED
        assert traj.final_answer == "Paris"
        assert turn.observation is None

    def test_tool_turn_gains_exactly_one_observation(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel([visit_call(0)])
        traj = Trajectory(instance_id=l1_instance.question_id, budget=5)
        turn = step(traj, model, ctx, l1_instance)
        assert isinstance(turn.action, ToolCall)
        assert turn.observation is not None
        assert turn.observation.kind is ObservationKind.TEXT

    def test_malformed_output_becomes_error_observation(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        model = ScriptedModel(["<think>t</think><tool_call>{broken</tool_call>"])
        traj = Trajectory(instance_id=l1_instance.question_id, budget=5)
        turn = step(traj, model, ctx, l1_instance)
        assert turn.observation.kind is ObservationKind.ERROR
        assert "bad_json" in turn.observation.error_detail
        assert len(traj.turns) == 1  # the failed parse consumed a turn

    def test_transport_failure_aborts_after_one_retry(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        traj = Trajectory(instance_id=l1_instance.question_id, budget=5)
        with pytest.raises(ModelTransportError):
            step(traj, FailingModel(), ctx, l1_instance)
        assert traj.status is TrajectoryStatus.ABORTED


class TestRunTrajectory:
    def test_answer_on_first_turn(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        model = ScriptedModel(["<think>easy</think><answer>42</answer>"])
        traj = run_trajectory(l1_instance, model, ctx, budget=10)
        assert traj.status is TrajectoryStatus.ANSWERED
        assert len(traj.turns) == 1
        assert traj.check_invariants() == []

    def test_never_answering_model_hits_budget(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel([], default=visit_call(1))
        traj = run_trajectory(l1_instance, model, ctx, budget=10)
        assert traj.status is TrajectoryStatus.BUDGET_EXHAUSTED
        assert len(traj.turns) == 11  # budget + one forced-finalization turn
        assert traj.check_invariants() == []
        # The trailing unexecuted call carries a synthetic observation.
        assert traj.turns[-1].observation.kind is ObservationKind.ERROR

    def test_forced_finalization_can_still_answer(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        outputs = [visit_call(i) for i in range(3)]
        model = ScriptedModel(outputs, default="<think>ok</think><answer>late</answer>")
        traj = run_trajectory(l1_instance, model, ctx, budget=3)
        assert traj.status is TrajectoryStatus.ANSWERED
        assert traj.final_answer == "late"
        assert len(traj.turns) == 4

    def test_budget_must_be_positive(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        with pytest.raises(ValueError):
            run_trajectory(l1_instance, ScriptedModel([]), ctx, budget=0)

    def test_final_answer_is_always_last(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel(
            [visit_call(0), "<think>got it</think><answer>x</answer>", visit_call(1)]
        )
        traj = run_trajectory(l1_instance, model, ctx, budget=10)
        assert traj.status is TrajectoryStatus.ANSWERED
        assert len(traj.turns) == 2
        assert traj.turns[-1].is_final


class TestRenderHistory:
    def test_empty_trajectory_has_question_and_registry_only(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        traj = Trajectory(instance_id=l1_instance.question_id, budget=10)
        request = render_history(traj, ctx, l1_instance)
        assert l1_instance.prompt in request.system
        assert "<tool_call>" not in request.text
        assert "img_id | snippet | metadata" in request.text
        assert request.images == [l1_instance.image.replace(
            l1_instance.image, ctx.resolve_pointer(ctx.registry.resolve(0))
        )]

    def test_three_turns_keep_tag_ordering(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel([visit_call(i) for i in range(3)])
        traj = Trajectory(instance_id=l1_instance.question_id, budget=10)
        for _ in range(3):
            step(traj, model, ctx, l1_instance)
        text = render_history(traj, ctx, l1_instance).text
        positions = []
        cursor = 0
        for _ in range(3):
            think = text.index("<think>", cursor)
            call = text.index("<tool_call>", think)
            resp = text.index("<tool_response>", call)
            positions.append((think, call, resp))
            cursor = resp + 1
        assert positions == sorted(positions)

    def test_recent_images_attached_up_to_cap(self, tmp_path, l1_instance):
        from hopbench.registry import Provenance
        from hopbench.turns import ObservationImage

        ctx = make_context(tmp_path)
        traj = Trajectory(instance_id=l1_instance.question_id, budget=20)
        for i in range(6):
            img_id = ctx.registry.register(
                f"images/crop{i}.png", f"crop {i}", Provenance("Crop", parent=0)
            )
            traj.turns.append(
                Turn(
                    thought=f"t{i}",
                    action=ToolCall("Crop", {"image_id": 0, "code": "c"}),
                    observation=Observation(
                        kind=ObservationKind.IMAGES,
                        images=[ObservationImage(img_id, f"images/crop{i}.png")],
                    ),
                )
            )
        policy = HistoryPolicy(max_attached_images=4)
        request = render_history(traj, ctx, l1_instance, policy)
        assert len(request.images) == 4
        # Input image always rides along; the rest are the newest outputs.
        assert request.images[0] == ctx.resolve_pointer("input.png")
        assert request.images[1].endswith("crop5.png")

    def test_old_observations_truncated_per_policy(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path)
        traj = Trajectory(instance_id=l1_instance.question_id, budget=20)
        for i in range(12):
            traj.turns.append(
                Turn(
                    thought=f"t{i}",
                    action=ToolCall("Visit", {"url": f"https://site.example/{i}", "goal": "g"}),
                    observation=Observation(
                        kind=ObservationKind.TEXT, text=f"obs {i}: " + "x" * 600
                    ),
                )
            )
        policy = HistoryPolicy(keep_last_observations=3, truncate_older_to=500)
        text = render_history(traj, ctx, l1_instance, policy).text
        assert text.count("[truncated") == 9
        # The last three observations stay verbatim.
        for i in (9, 10, 11):
            assert f"obs {i}: " + "x" * 600 in text


class TestTrajectoryLogs:
    def test_log_round_trip(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel([visit_call(0), "<think>ok</think><answer>done</answer>"])
        traj = run_trajectory(l1_instance, model, ctx, budget=5)
        path = tmp_path / "out" / "21.jsonl"
        write_trajectory_log(traj, path, config_digest="abc", policy_name="agentic")
        loaded = read_trajectory_log(path)
        assert loaded.header["config_digest"] == "abc"
        assert loaded.trajectory.final_answer == "done"
        assert loaded.trajectory.status is TrajectoryStatus.ANSWERED
        assert [t.to_json() for t in loaded.trajectory.turns] == [
            t.to_json() for t in traj.turns
        ]

    def test_log_lines_are_deterministic(self, tmp_path, l1_instance):
        ctx = make_context(tmp_path, static_with_pages())
        model = ScriptedModel([visit_call(0), "<think>ok</think><answer>done</answer>"])
        traj = run_trajectory(l1_instance, model, ctx, budget=5)
        lines_a = trajectory_log_lines(traj, "d", "agentic", 0.0)
        lines_b = trajectory_log_lines(traj, "d", "agentic", 0.0)
        assert lines_a == lines_b
        assert json.loads(lines_a[0])["record"] == "header"
        assert json.loads(lines_a[-1])["record"] == "footer"
