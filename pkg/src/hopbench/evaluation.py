"""Scoring and trajectory analytics.

Answers are graded by an LLM judge against short gold answers; analysis
covers milestone coverage of annotated evidence chains, tool usage
profiles, single-tool synergy gaps, and a six-way error taxonomy applied
to incorrect episodes in strict precedence order.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .engine import Trajectory, TrajectoryStatus
from .instances import Milestone, normalize_for_match, surface_form_present
from .models import TextModel
from .prompts import JUDGE_PROMPT
from .tools import ALL_TOOLS, IMAGE_PROCESSOR_ALIAS, classify_image_code
from .turns import ToolCall

logger = logging.getLogger(__name__)


@dataclass
class EvalVerdict:
    extracted_final_answer: str | None
    reasoning: str
    correct: bool
    confidence: float = 100.0


_FIELD_RES = {
    "extracted_final_answer": re.compile(
        r"extracted_final_answer\s*:\s*(.+?)(?:\n|$)", re.IGNORECASE
    ),
    "reasoning": re.compile(r"reasoning\s*:\s*(.+?)(?=\n\w+\s*:|\Z)", re.IGNORECASE | re.DOTALL),
    "correct": re.compile(r"correct\s*:\s*(yes|no)", re.IGNORECASE),
    "confidence": re.compile(r"confidence\s*:\s*(\d+(?:\.\d+)?)\s*%?", re.IGNORECASE),
}


def parse_judge_output(raw: str) -> EvalVerdict:
    """Parse the four verdict fields; missing confidence defaults to 100."""
    correct_m = _FIELD_RES["correct"].search(raw)
    if correct_m is None:
        raise ValueError("judge output lacks a correct: yes/no field")
    extracted_m = _FIELD_RES["extracted_final_answer"].search(raw)
    extracted = extracted_m.group(1).strip() if extracted_m else None
    if extracted is not None and extracted.lower() in ("none", "null", ""):
        extracted = None
    reasoning_m = _FIELD_RES["reasoning"].search(raw)
    confidence_m = _FIELD_RES["confidence"].search(raw)
    confidence = float(confidence_m.group(1)) if confidence_m else 100.0
    confidence = max(0.0, min(100.0, confidence))
    return EvalVerdict(
        extracted_final_answer=extracted,
        reasoning=reasoning_m.group(1).strip() if reasoning_m else "",
        correct=correct_m.group(1).lower() == "yes",
        confidence=confidence,
    )


def judge_answer(question: str, response: str, gold: str, judge: TextModel) -> EvalVerdict:
    """One LLM-as-judge call; unparseable output is retried once."""
    if not gold or not gold.strip():
        raise ValueError("gold answer must be non-empty")
    prompt = JUDGE_PROMPT.format(
        question=question, response=response, correct_answer=gold
    )
    raw = judge.complete(prompt)
    try:
        return parse_judge_output(raw)
    except ValueError:
        logger.info("judge output unparseable; retrying once")
        return parse_judge_output(judge.complete(prompt))


def pass_at_1(verdicts: list[bool]) -> float:
    """Mean of correctness indicators over single attempts."""
    if not verdicts:
        raise ValueError("verdict list is empty")
    return sum(1 for v in verdicts if v) / len(verdicts)


def observation_texts(traj: Trajectory) -> list[str]:
    return [t.observation.render() for t in traj.turns if t.observation is not None]


def milestone_hits(traj: Trajectory, milestones: list[Milestone]) -> list[bool]:
    """Per-milestone: does any surface form appear in any tool response?"""
    if not milestones:
        raise ValueError("milestone list is empty")
    corpus = normalize_for_match("\n".join(observation_texts(traj)))
    hits = []
    for m in milestones:
        hits.append(any(surface_form_present(form, corpus) for form in m.surface_forms))
    return hits


def milestone_hit_rate(traj: Trajectory, milestones: list[Milestone]) -> float:
    hits = milestone_hits(traj, milestones)
    return sum(hits) / len(hits)


def attributed_tool_name(call: ToolCall) -> str | None:
    """Profile bucket for one call: image_processor maps to its primitive."""
    if call.name in ALL_TOOLS:
        return call.name
    if call.name == IMAGE_PROCESSOR_ALIAS:
        return classify_image_code(str(call.arguments.get("code", "")))
    return None


def tool_usage_profile(trajs: list[Trajectory]) -> dict[str, float]:
    """Share of total tool invocations per tool, in percent; zeros included."""
    counts = {name: 0 for name in ALL_TOOLS}
    total = 0
    for traj in trajs:
        for turn in traj.turns:
            if not isinstance(turn.action, ToolCall):
                continue
            name = attributed_tool_name(turn.action)
            if name is None:
                continue
            counts[name] += 1
            total += 1
    if total == 0:
        raise ValueError("no tool calls across trajectories")
    return {name: 100.0 * count / total for name, count in counts.items()}


def synergy_gap(all_tools_acc: float, single_tool_accs: list[float]) -> float:
    """All-tools accuracy minus the best single-tool accuracy (in points)."""
    if not single_tool_accs:
        raise ValueError("single-tool accuracy list is empty")
    best = max(single_tool_accs)
    return float(Decimal(str(all_tools_acc)) - Decimal(str(best)))


# --- error taxonomy ----------------------------------------------------------


class ErrorType(str, Enum):
    E1 = "E1"  # perception / grounding
    E2 = "E2"  # retrieval strategy / querying
    E3 = "E3"  # noisy or ambiguous evidence selection
    E4 = "E4"  # missing or insufficient verification
    E5 = "E5"  # ordering / budgeting
    E6 = "E6"  # synthesis / final decision


@dataclass(frozen=True)
class ErrorRuleConfig:
    """Numeric operationalization of the taxonomy's qualitative bands.

    Exposed so the bands can be ablated without touching the decision
    procedure.
    """

    e1_max_hit_rate: float = 0.30
    e2_band: tuple[float, float] = (0.20, 0.45)
    e2_min_duplicate_pairs: int = 1
    e2_duplicate_jaccard: float = 0.8
    e4_band: tuple[float, float] = (0.40, 0.60)
    e5_near_cap_ratio: float = 0.9
    e5_early_stop_unused: float = 0.5


@dataclass
class ErrorSignals:
    """Observable trajectory facts the decision procedure runs on."""

    hit_rate: float
    entity_hit: bool
    duplicate_query_pairs: int
    candidate_support: dict[str, int]
    final_answer: str | None
    visit_verification_hit: bool
    tool_calls: int
    budget: int
    new_hits_in_last_third: int
    answered: bool
    flags: set[str] = field(default_factory=set)


def _token_set(query: str) -> frozenset[str]:
    return frozenset(normalize_for_match(query).split())


def _query_strings(traj: Trajectory) -> list[str]:
    queries = []
    for turn in traj.turns:
        if not isinstance(turn.action, ToolCall):
            continue
        if turn.action.name == "Web Text Search":
            raw = turn.action.arguments.get("queries", turn.action.arguments.get("query", []))
            if isinstance(raw, str):
                raw = [raw]
            queries.extend(str(q) for q in raw)
    return queries


def _duplicate_query_pairs(queries: list[str], threshold: float) -> int:
    pairs = 0
    sets = [_token_set(q) for q in queries if q.strip()]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            union = sets[i] | sets[j]
            if not union:
                continue
            if len(sets[i] & sets[j]) / len(union) >= threshold:
                pairs += 1
    return pairs


def compute_error_signals(
    traj: Trajectory,
    milestones: list[Milestone],
    candidate_answers: list[str] | None = None,
    config: ErrorRuleConfig | None = None,
) -> ErrorSignals:
    """Derive the classifier's inputs from a finished trajectory."""
    config = config or ErrorRuleConfig()
    hits = milestone_hits(traj, milestones)
    hit_rate = sum(hits) / len(hits)
    entity_hit = any(
        hit and m.retrievable for hit, m in zip(hits, milestones)
    )

    obs_texts = observation_texts(traj)
    visit_texts = [
        t.observation.render()
        for t in traj.turns
        if t.observation is not None
        and isinstance(t.action, ToolCall)
        and t.action.name == "Visit"
    ]
    visit_corpus = normalize_for_match("\n".join(visit_texts))
    visit_verification_hit = any(
        surface_form_present(form, visit_corpus)
        for m in milestones
        for form in m.surface_forms
    )

    support: dict[str, int] = {}
    for candidate in candidate_answers or []:
        count = 0
        for text in obs_texts:
            text_norm = normalize_for_match(text)
            if not surface_form_present(candidate, text_norm):
                continue
            if any(
                surface_form_present(form, text_norm)
                for m in milestones
                for form in m.surface_forms
            ):
                count += 1
        if count:
            support[candidate] = count

    # Cumulative milestone coverage over turns; flat over the last third
    # means the extra calls stopped converting into evidence.
    per_turn_corpora: list[str] = []
    running = ""
    for turn in traj.turns:
        if turn.observation is not None:
            running += "\n" + turn.observation.render()
        per_turn_corpora.append(normalize_for_match(running))

    def hits_at(idx: int) -> int:
        corpus = per_turn_corpora[idx] if per_turn_corpora else ""
        return sum(
            1
            for m in milestones
            if any(surface_form_present(f, corpus) for f in m.surface_forms)
        )

    n_turns = len(traj.turns)
    if n_turns:
        last_third_start = max(0, n_turns - max(1, n_turns // 3) - 1)
        new_hits_last_third = hits_at(n_turns - 1) - hits_at(last_third_start)
    else:
        new_hits_last_third = 0

    return ErrorSignals(
        hit_rate=hit_rate,
        entity_hit=entity_hit,
        duplicate_query_pairs=_duplicate_query_pairs(
            _query_strings(traj), config.e2_duplicate_jaccard
        ),
        candidate_support=support,
        final_answer=traj.final_answer,
        visit_verification_hit=visit_verification_hit,
        tool_calls=traj.tool_call_count,
        budget=traj.budget,
        new_hits_in_last_third=new_hits_last_third,
        answered=traj.status is TrajectoryStatus.ANSWERED,
    )


@dataclass(frozen=True)
class ErrorLabel:
    label: ErrorType
    evidence: ErrorSignals
    rule: str


def label_from_signals(
    signals: ErrorSignals, config: ErrorRuleConfig | None = None
) -> ErrorLabel:
    """Apply the ordered decision rules E1..E6; first match wins."""
    c = config or ErrorRuleConfig()

    if signals.hit_rate < c.e1_max_hit_rate and not signals.entity_hit:
        return ErrorLabel(ErrorType.E1, signals, "low hit rate, no retrievable entity hit")

    lo, hi = c.e2_band
    if (
        lo <= signals.hit_rate < hi
        and signals.duplicate_query_pairs >= c.e2_min_duplicate_pairs
    ):
        return ErrorLabel(ErrorType.E2, signals, "query drift: repeated near-duplicates")

    if len(signals.candidate_support) >= 2 and signals.final_answer is not None:
        final_norm = normalize_for_match(signals.final_answer)
        final_support = 0
        best_other = 0
        for candidate, count in signals.candidate_support.items():
            if normalize_for_match(candidate) == final_norm:
                final_support = count
            else:
                best_other = max(best_other, count)
        if best_other > final_support:
            return ErrorLabel(
                ErrorType.E3, signals, "final choice contradicts stronger-evidence branch"
            )

    lo, hi = c.e4_band
    if lo <= signals.hit_rate < hi and not signals.visit_verification_hit:
        return ErrorLabel(ErrorType.E4, signals, "no visit-based verification hit")

    near_cap = (
        signals.budget > 0
        and signals.tool_calls >= c.e5_near_cap_ratio * signals.budget
        and signals.new_hits_in_last_third <= 0
    )
    early_stop = (
        signals.answered
        and signals.budget > 0
        and signals.tool_calls <= (1.0 - c.e5_early_stop_unused) * signals.budget
    )
    if near_cap or early_stop:
        reason = "near-cap usage with stagnant coverage" if near_cap else "early stop"
        return ErrorLabel(ErrorType.E5, signals, reason)

    return ErrorLabel(ErrorType.E6, signals, "evidence gathered but synthesis failed")


def classify_error(
    traj: Trajectory,
    milestones: list[Milestone],
    verdict: EvalVerdict,
    candidate_answers: list[str] | None = None,
    config: ErrorRuleConfig | None = None,
) -> ErrorLabel:
    """Assign exactly one error type to an incorrect trajectory."""
    if verdict.correct:
        raise ValueError("classify_error is only defined for incorrect trajectories")
    signals = compute_error_signals(traj, milestones, candidate_answers, config)
    return label_from_signals(signals, config)
