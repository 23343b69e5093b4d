"""Benchmark instance schema: loading, validation, milestone extraction.

Instances live in UTF-8 JSONL, one object per line. Level-1 rows carry an
image question with an annotated visual solution chain; Level-2 rows add a
multi-hop textual query whose solution chain ends at the gold answer.
Unknown fields are preserved opaquely so richer annotations round-trip.
"""
from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

# Milestones are either retrievable entities or visual cues; a short
# canonical form is treated as an entity name, a long one as a cue
# description. Config knob, only affects default error-signal extraction.
RETRIEVABLE_MAX_WORDS = 5


class Level(str, Enum):
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class ChainNode:
    hop: int
    role: str
    entity: str
    reasoning: str = ""


@dataclass(frozen=True)
class Milestone:
    """A key visual cue or retrievable entity from the annotated chain."""

    milestone_id: int
    surface_forms: tuple[str, ...]
    hop: int | None = None
    retrievable: bool = True

    @property
    def canonical(self) -> str:
        return self.surface_forms[0]


@dataclass
class BenchmarkInstance:
    question_id: int
    level: Level
    prompt: str
    image: str
    gold_image_answer: str
    gold_text_answer: str | None = None
    solution_chain: list[ChainNode] = field(default_factory=list)
    source: str | None = None
    admin_level: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def gold_answer(self) -> str:
        """The answer the judge scores against: textual for L2, image for L1."""
        if self.level is Level.L2 and self.gold_text_answer:
            return self.gold_text_answer
        return self.gold_image_answer


@dataclass(frozen=True)
class LoadError:
    line_no: int
    message: str


@dataclass
class LoadResult:
    instances: list[BenchmarkInstance]
    errors: list[LoadError]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


_KNOWN_FIELDS = {
    "question_id",
    "level",
    "prompt",
    "image",
    "gold_image_answer",
    "gold_text_answer",
    "image_solution",
    "text_solution",
    "source",
    "image_source",
    "admin_level",
}

_ADMIN_LEVELS = {"country", "state", "city"}


def _parse_chain(solution: Any) -> list[ChainNode]:
    """Chain nodes from an annotated solution object; placeholders yield []."""
    if not isinstance(solution, dict) or "nodes" not in solution:
        return []
    nodes = []
    for raw in solution["nodes"]:
        nodes.append(
            ChainNode(
                hop=int(raw["hop"]),
                role=str(raw.get("role", "")),
                entity=str(raw.get("entity", "")),
                reasoning=str(raw.get("reasoning", "")),
            )
        )
    return nodes


def instance_from_json(obj: dict[str, Any]) -> BenchmarkInstance:
    """Build one instance from a decoded JSONL object.

    Raises ValueError naming the offending field on schema violations.
    """
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for req in ("question_id", "prompt", "image", "gold_image_answer"):
        if req not in obj:
            raise ValueError(f"missing required field: {req}")

    gold_text = obj.get("gold_text_answer")
    if "level" in obj:
        level = Level(obj["level"])
    else:
        level = Level.L2 if gold_text not in (None, "") else Level.L1
    if level is Level.L2 and gold_text in (None, ""):
        raise ValueError("missing required field: gold_text_answer (level L2)")

    solution = obj.get("text_solution") if level is Level.L2 else obj.get("image_solution")
    if solution is None:
        solution = obj.get("image_solution") or obj.get("text_solution")
    chain = _parse_chain(solution)

    admin_level = obj.get("admin_level")
    if admin_level is not None and admin_level not in _ADMIN_LEVELS:
        raise ValueError(f"admin_level must be one of {sorted(_ADMIN_LEVELS)}")

    # "source" and "image_source" are synonyms in the wild; keep the first.
    source = obj.get("source", obj.get("image_source"))

    extra = {k: v for k, v in obj.items() if k not in _KNOWN_FIELDS}
    return BenchmarkInstance(
        question_id=int(obj["question_id"]),
        level=level,
        prompt=str(obj["prompt"]),
        image=str(obj["image"]),
        gold_image_answer=str(obj["gold_image_answer"]),
        gold_text_answer=None if gold_text in (None, "") else str(gold_text),
        solution_chain=chain,
        source=source,
        admin_level=admin_level,
        extra=extra,
    )


def instance_to_json(inst: BenchmarkInstance) -> dict[str, Any]:
    """Serialize back to the JSONL field layout. Round-trips with the loader."""
    obj: dict[str, Any] = {
        "question_id": inst.question_id,
        "level": inst.level.value,
        "prompt": inst.prompt,
        "image": inst.image,
        "gold_image_answer": inst.gold_image_answer,
    }
    if inst.gold_text_answer is not None:
        obj["gold_text_answer"] = inst.gold_text_answer
    if inst.solution_chain:
        key = "text_solution" if inst.level is Level.L2 else "image_solution"
        obj[key] = {
            "query": inst.prompt,
            "nodes": [
                {
                    "hop": n.hop,
                    "role": n.role,
                    "entity": n.entity,
                    "reasoning": n.reasoning,
                }
                for n in inst.solution_chain
            ],
            "gold_answer": inst.gold_answer,
        }
    if inst.source is not None:
        obj["source"] = inst.source
    if inst.admin_level is not None:
        obj["admin_level"] = inst.admin_level
    obj.update(inst.extra)
    return obj


def load_instances(path: str | Path, level_filter: Level | None = None) -> LoadResult:
    """Load and validate instances from a JSONL file.

    Invalid lines never vanish silently: each one lands in the error report
    with its line number. File order is preserved.
    """
    result = LoadResult(instances=[], errors=[])
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            result.errors.append(LoadError(line_no, f"malformed JSON: {exc.msg}"))
            continue
        try:
            inst = instance_from_json(obj)
        except (ValueError, KeyError, TypeError) as exc:
            result.errors.append(LoadError(line_no, str(exc)))
            continue
        if level_filter is not None and inst.level is not level_filter:
            continue
        result.instances.append(inst)
    return result


def validate_instance(inst: BenchmarkInstance) -> ValidationReport:
    """List every violated invariant. Total: never raises."""
    report = ValidationReport()
    if inst.level is Level.L2 and not inst.gold_text_answer:
        report.violations.append("L2 instance has empty gold_text_answer")
    hops = [n.hop for n in inst.solution_chain]
    if hops and hops != list(range(1, len(hops) + 1)):
        report.violations.append(f"non-consecutive hop sequence: {hops}")
    if (
        inst.level is Level.L2
        and inst.solution_chain
        and inst.solution_chain[-1].role != "gold_answer"
    ):
        report.violations.append(
            f"last chain node role is {inst.solution_chain[-1].role!r}, "
            "expected 'gold_answer'"
        )
    if not inst.image:
        report.violations.append("empty image pointer")
    elif not _pointer_resolvable(inst.image):
        report.violations.append(f"image pointer not resolvable: {inst.image}")
    return report


def _pointer_resolvable(pointer: str) -> bool:
    if re.match(r"^https?://", pointer):
        return True
    return Path(pointer).exists()


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def split_surface_forms(entity: str) -> list[str]:
    """Canonical form plus aliases from entity notation.

    Parenthesized segments are aliases, and "/" separates alternatives both
    inside and outside parentheses: "Helium (alpha particle / helium
    nucleus)" yields Helium, alpha particle, helium nucleus.
    """
    aliases = re.findall(r"\(([^)]*)\)", entity)
    main = re.sub(r"\([^)]*\)", " ", entity)
    forms: list[str] = []
    for chunk in [main, *aliases]:
        for part in chunk.split("/"):
            form = _normalize_ws(part)
            if form and form not in forms:
                forms.append(form)
    return forms


def extract_milestones(inst: BenchmarkInstance) -> list[Milestone]:
    """One milestone per chain node, entity text expanded into surface forms."""
    if not inst.solution_chain:
        raise ValueError(f"instance {inst.question_id} has no solution chain")
    milestones = []
    for i, node in enumerate(inst.solution_chain):
        forms = split_surface_forms(node.entity)
        if not forms:
            forms = [_normalize_ws(node.entity) or f"<hop {node.hop}>"]
        retrievable = len(forms[0].split()) <= RETRIEVABLE_MAX_WORDS
        milestones.append(
            Milestone(
                milestone_id=i,
                surface_forms=tuple(forms),
                hop=node.hop,
                retrievable=retrievable,
            )
        )
    return milestones


def normalize_for_match(text: str) -> str:
    """Casefolded, NFKC-normalized, whitespace-collapsed matching form."""
    return _normalize_ws(unicodedata.normalize("NFKC", text).casefold())


def surface_form_present(form: str, text_norm: str) -> bool:
    """Word-boundary occurrence of a normalized surface form in normalized text."""
    needle = normalize_for_match(form)
    if not needle:
        return False
    pattern = r"(?<!\w)" + re.escape(needle) + r"(?!\w)"
    return re.search(pattern, text_norm) is not None
