"""Turn vocabulary: tagged model output, tool calls, observations.

A model turn is tagged text: a <think> section followed by exactly one
action, either <tool_call>{json}</tool_call> or <answer>text</answer>.
The environment replies inside <tool_response> tags. Parsing tolerates
surrounding noise; serialization emits one canonical form so replayed
logs are byte-stable.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class ParseErrorKind(str, Enum):
    NO_ACTION = "no_action"
    MULTIPLE_ACTIONS = "multiple_actions"
    BAD_JSON = "bad_json"
    BAD_CALL_SHAPE = "bad_call_shape"


class TurnParseError(ValueError):
    def __init__(self, kind: ParseErrorKind, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]


@dataclass(frozen=True)
class FinalAnswer:
    text: str


class ObservationKind(str, Enum):
    TEXT = "text"
    IMAGES = "images"
    REPORT = "report"
    ERROR = "error"


@dataclass(frozen=True)
class ObservationImage:
    img_id: int
    pointer: str
    caption: str = ""


@dataclass
class Observation:
    kind: ObservationKind
    text: str = ""
    images: list[ObservationImage] = field(default_factory=list)
    error_detail: str | None = None
    results: list[dict] | None = None

    def render(self) -> str:
        """Agent-visible body. Images surface as ids, never pointers."""
        parts = []
        if self.kind is ObservationKind.ERROR:
            parts.append(f"Error: {self.error_detail or self.text}")
        elif self.text:
            parts.append(self.text)
        for img in self.images:
            caption = f": {img.caption}" if img.caption else ""
            parts.append(f"[new image registered: img_id={img.img_id}{caption}]")
        return "\n".join(parts)

    def to_json(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"kind": self.kind.value, "text": self.text}
        if self.images:
            obj["images"] = [
                {"img_id": i.img_id, "pointer": i.pointer, "caption": i.caption}
                for i in self.images
            ]
        if self.error_detail is not None:
            obj["error_detail"] = self.error_detail
        if self.results is not None:
            obj["results"] = self.results
        return obj

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Observation":
        return cls(
            kind=ObservationKind(obj["kind"]),
            text=obj.get("text", ""),
            images=[
                ObservationImage(
                    img_id=i["img_id"], pointer=i["pointer"], caption=i.get("caption", "")
                )
                for i in obj.get("images", [])
            ],
            error_detail=obj.get("error_detail"),
            results=obj.get("results"),
        )


def error_observation(detail: str) -> Observation:
    return Observation(kind=ObservationKind.ERROR, error_detail=detail)


@dataclass
class Turn:
    thought: str
    action: ToolCall | FinalAnswer
    observation: Observation | None = None

    @property
    def is_final(self) -> bool:
        return isinstance(self.action, FinalAnswer)

    def to_json(self) -> dict[str, Any]:
        if isinstance(self.action, FinalAnswer):
            action: dict[str, Any] = {"type": "answer", "text": self.action.text}
        else:
            action = {
                "type": "tool_call",
                "name": self.action.name,
                "arguments": self.action.arguments,
            }
        obj: dict[str, Any] = {"thought": self.thought, "action": action}
        if self.observation is not None:
            obj["observation"] = self.observation.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Turn":
        raw_action = obj["action"]
        action: ToolCall | FinalAnswer
        if raw_action["type"] == "answer":
            action = FinalAnswer(raw_action["text"])
        else:
            action = ToolCall(raw_action["name"], raw_action["arguments"])
        observation = (
            Observation.from_json(obj["observation"]) if "observation" in obj else None
        )
        return cls(thought=obj["thought"], action=action, observation=observation)


_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_TOOL_CALL_RE = re.compile(r"<tool_call>(.*?)</tool_call>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def canonical_call_json(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def parse_turn(raw: str) -> Turn:
    """Parse one tagged model output into a Turn (without observation).

    Anything outside the tags is ignored. Raises TurnParseError with a
    distinct kind for: no action tag, more than one action tag, JSON that
    does not parse, and call JSON without name/arguments.
    """
    think = _THINK_RE.search(raw)
    thought = think.group(1).strip() if think else ""
    calls = _TOOL_CALL_RE.findall(raw)
    answers = _ANSWER_RE.findall(raw)

    if len(calls) + len(answers) == 0:
        raise TurnParseError(
            ParseErrorKind.NO_ACTION,
            "no action found: expected one <tool_call> or <answer> tag",
        )
    if len(calls) + len(answers) > 1:
        raise TurnParseError(
            ParseErrorKind.MULTIPLE_ACTIONS,
            f"expected exactly one action tag, found {len(calls)} tool_call "
            f"and {len(answers)} answer",
        )
    if answers:
        return Turn(thought=thought, action=FinalAnswer(answers[0].strip()))

    try:
        payload = json.loads(calls[0])
    except json.JSONDecodeError as exc:
        raise TurnParseError(
            ParseErrorKind.BAD_JSON, f"tool_call is not valid JSON: {exc.msg}"
        ) from exc
    if not isinstance(payload, dict) or "name" not in payload:
        raise TurnParseError(
            ParseErrorKind.BAD_CALL_SHAPE,
            'tool_call JSON must be an object with "name" and "arguments"',
        )
    arguments = payload.get("arguments", {})
    if not isinstance(arguments, dict):
        raise TurnParseError(
            ParseErrorKind.BAD_CALL_SHAPE, '"arguments" must be a JSON object'
        )
    return Turn(thought=thought, action=ToolCall(str(payload["name"]), arguments))


def serialize_turn(turn: Turn) -> str:
    """Canonical tagged form of a turn's model-authored half."""
    head = f"<think>{turn.thought}</think>"
    if isinstance(turn.action, FinalAnswer):
        return f"{head}\n<answer>{turn.action.text}</answer>"
    call = canonical_call_json(
        {"name": turn.action.name, "arguments": turn.action.arguments}
    )
    return f"{head}\n<tool_call>\n{call}\n</tool_call>"


def normalize_turn_text(raw: str) -> str:
    """Canonicalize a well-formed tagged turn without going through Turn.

    Strips surrounding noise, trims tag bodies, and re-dumps the call JSON
    with sorted keys; the result equals serialize_turn(parse_turn(raw)).
    """
    think = _THINK_RE.search(raw)
    thought = think.group(1).strip() if think else ""
    answer = _ANSWER_RE.search(raw)
    if answer is not None:
        return f"<think>{thought}</think>\n<answer>{answer.group(1).strip()}</answer>"
    call = _TOOL_CALL_RE.search(raw)
    if call is None:
        raise TurnParseError(ParseErrorKind.NO_ACTION, "no action tag to normalize")
    payload = canonical_call_json(json.loads(call.group(1)))
    return f"<think>{thought}</think>\n<tool_call>\n{payload}\n</tool_call>"


def render_turn_exchange(turn: Turn) -> str:
    """Turn plus its tool_response, as the model sees history."""
    text = serialize_turn(turn)
    if turn.observation is not None:
        text += f"\n<tool_response>\n{turn.observation.render()}\n</tool_response>"
    return text
