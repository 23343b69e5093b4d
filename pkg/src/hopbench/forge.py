"""Multi-hop instance forging from a hyperlink graph.

Starting at a visual root answer, sample a dependency-critical path
through the link graph, have a generator model write an obfuscated query
that follows it hop by hop, reject anything that leaks a chain entity,
and filter survivors by a k-run solvability check.
"""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from .instances import (
    BenchmarkInstance,
    ChainNode,
    normalize_for_match,
    split_surface_forms,
)
from .models import ModelTransportError, TextModel
from .prompts import QUERY_GENERATION_PROMPT, RATIONALITY_PROMPT
from .providers import LinkProvider, ProviderError

logger = logging.getLogger(__name__)

# Neighbors considered per node when sampling; bounds provider load.
DEFAULT_FANOUT_CAP = 200
# Query-generation attempts before giving up on a path.
GENERATION_RETRIES = 3


class UnknownEntityError(KeyError):
    pass


class SamplingExhaustedError(RuntimeError):
    """No valid path of the requested depth exists under the sampling rules."""


class GenerationError(RuntimeError):
    """The generator failed to produce a parseable, leak-free query."""


@dataclass
class EntityGraph:
    """Hyperlink graph behind a provider handle.

    Neighbor queries are cached so a fixed snapshot yields deterministic
    answers within a run.
    """

    provider: LinkProvider
    _cache: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @staticmethod
    def from_edges(edges: dict[str, list[str]]) -> "EntityGraph":
        from .providers import StaticProviders

        return EntityGraph(provider=StaticProviders(links=edges))

    def out_neighbors(self, entity: str) -> tuple[str, ...]:
        if entity not in self._cache:
            try:
                links = self.provider.out_links(entity)
            except ProviderError as exc:
                if "unknown entity" in str(exc):
                    raise UnknownEntityError(str(exc)) from exc
                raise
            self._cache[entity] = tuple(dict.fromkeys(links))
        return self._cache[entity]


def out_neighbors(graph: EntityGraph, entity: str) -> set[str]:
    """Outgoing-hyperlink targets of an entity in the snapshot."""
    return set(graph.out_neighbors(entity))


@dataclass(frozen=True)
class KGPath:
    nodes: tuple[str, ...]

    @property
    def depth(self) -> int:
        return len(self.nodes) - 1

    @property
    def root(self) -> str:
        return self.nodes[0]

    @property
    def answer(self) -> str:
        return self.nodes[-1]


def sample_path(
    graph: EntityGraph, root: str, depth: int, seed: int, fanout_cap: int = DEFAULT_FANOUT_CAP
) -> KGPath:
    """Sample a simple path of ``depth`` hops starting at ``root``.

    Backtracking DFS with uniform choice over a capped neighbor set.
    Hops are kept dependency-critical: a candidate already linked from the
    grandparent would make its hop skippable and is rejected. Deterministic
    for a fixed (snapshot, seed, depth).
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    graph.out_neighbors(root)  # raises UnknownEntityError early
    rng = random.Random(seed)

    path = [root]

    def extend() -> bool:
        if len(path) == depth + 1:
            return True
        current = path[-1]
        grandparent_links: set[str] = set()
        if len(path) >= 2:
            grandparent_links = set(graph.out_neighbors(path[-2]))
        try:
            neighbors = list(graph.out_neighbors(current))
        except UnknownEntityError:
            return False
        if len(neighbors) > fanout_cap:
            neighbors = rng.sample(neighbors, fanout_cap)
        candidates = [
            n for n in neighbors if n not in path and n not in grandparent_links
        ]
        rng.shuffle(candidates)
        for candidate in candidates:
            path.append(candidate)
            if extend():
                return True
            path.pop()
        return False

    if not extend():
        raise SamplingExhaustedError(
            f"no {depth}-hop path from {root!r} under the sampling rules"
        )
    return KGPath(nodes=tuple(path))


@dataclass(frozen=True)
class LeakageReport:
    matches: tuple[tuple[str, str], ...]  # (chain entity, leaked surface form)

    @property
    def clean(self) -> bool:
        return not self.matches


def check_leakage(query: str, path: KGPath) -> LeakageReport:
    """Report every chain-entity surface form occurring verbatim in the query.

    Root, intermediates, and the answer all count. Matching is
    case-insensitive, Unicode-normalized, word-boundary.
    """
    query_norm = normalize_for_match(query)
    matches: list[tuple[str, str]] = []
    for entity in path.nodes:
        for form in split_surface_forms(entity) or [entity]:
            needle = normalize_for_match(form)
            if not needle:
                continue
            if re.search(r"(?<!\w)" + re.escape(needle) + r"(?!\w)", query_norm):
                matches.append((entity, form))
    return LeakageReport(matches=tuple(matches))


@dataclass
class ForgedInstance:
    query: str
    nodes: list[ChainNode]
    gold_answer: str


def _render_kg_path(path: KGPath) -> str:
    lines = [f"1. Root (from image): {path.root}"]
    for i, node in enumerate(path.nodes[1:-1], start=2):
        lines.append(f"{i}. Intermediate hop: {node}")
    lines.append(f"{len(path.nodes)}. Gold answer: {path.answer}")
    return "\n".join(lines)


def _extract_json_object(text: str) -> dict:
    """Parse the first JSON object in a model reply (tolerates code fences)."""
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text.strip())
    start = text.find("{")
    if start < 0:
        raise ValueError("no JSON object in generator output")
    decoder = json.JSONDecoder()
    obj, _ = decoder.raw_decode(text[start:])
    if not isinstance(obj, dict):
        raise ValueError("generator output is not a JSON object")
    return obj


def generate_query(
    path: KGPath, generator: TextModel, retries: int = GENERATION_RETRIES
) -> ForgedInstance:
    """Ask the generator for an obfuscated query following ``path``.

    Retries when the reply is unparseable, has the wrong node count, or
    leaks a chain entity; raises GenerationError once retries run out.
    """
    prompt = QUERY_GENERATION_PROMPT.format(kg_path=_render_kg_path(path))
    last_problem = "generator never called"
    for attempt in range(1, retries + 1):
        try:
            raw = generator.complete(prompt)
        except ModelTransportError as exc:
            last_problem = f"generator failure: {exc}"
            logger.warning("query generation attempt %d failed: %s", attempt, exc)
            continue
        try:
            obj = _extract_json_object(raw)
            query = str(obj["query"])
            gold = str(obj["gold_answer"])
            nodes = [
                ChainNode(
                    hop=int(n["hop"]),
                    role=str(n.get("role", "")),
                    entity=str(n.get("entity", "")),
                    reasoning=str(n.get("reasoning", "")),
                )
                for n in obj["nodes"]
            ]
        except (ValueError, KeyError, TypeError) as exc:
            last_problem = f"unparseable generator output: {exc}"
            logger.info("attempt %d: %s", attempt, last_problem)
            continue
        if len(nodes) != len(path.nodes):
            last_problem = (
                f"node count {len(nodes)} does not match path length {len(path.nodes)}"
            )
            continue
        leakage = check_leakage(query, path)
        if not leakage.clean:
            leaked = ", ".join(form for _, form in leakage.matches)
            last_problem = f"query leaks chain entities: {leaked}"
            continue
        return ForgedInstance(query=query, nodes=nodes, gold_answer=gold)
    raise GenerationError(
        f"no usable query after {retries} attempts; last problem: {last_problem}"
    )


class FilterOutcome(str, Enum):
    KEEP = "Keep"
    DROP_TOO_EASY = "DropTooEasy"
    FLAG_REVIEW = "FlagReview"


@dataclass(frozen=True)
class FilterDecision:
    verdicts: tuple[bool, ...]
    decision: FilterOutcome
    failed_runs: tuple[int, ...] = ()


def decision_from_verdicts(
    verdicts: list[bool], failed_runs: list[int] | None = None
) -> FilterDecision:
    """Pure mapping: all-solved drops, all-failed flags, mixed keeps."""
    if not verdicts:
        raise ValueError("verdict vector is empty")
    if all(verdicts):
        outcome = FilterOutcome.DROP_TOO_EASY
    elif not any(verdicts):
        outcome = FilterOutcome.FLAG_REVIEW
    else:
        outcome = FilterOutcome.KEEP
    return FilterDecision(
        verdicts=tuple(verdicts),
        decision=outcome,
        failed_runs=tuple(failed_runs or ()),
    )


class SolvabilityJudge(Protocol):
    """An agent handle that attempts an instance and reports success."""

    def attempt(self, inst: BenchmarkInstance) -> bool: ...


def solvability_filter(
    inst: BenchmarkInstance, judge: SolvabilityJudge, k: int = 4
) -> FilterDecision:
    """Attempt the instance ``k`` times and map the verdict vector to a decision.

    A judge crash counts as an incorrect run and is flagged in the
    decision rather than aborting the filter.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    verdicts: list[bool] = []
    failed: list[int] = []
    for run in range(k):
        try:
            verdicts.append(bool(judge.attempt(inst)))
        except Exception as exc:  # noqa: BLE001 - judge failures must not abort
            logger.warning("solvability run %d failed to complete: %s", run, exc)
            verdicts.append(False)
            failed.append(run)
    return decision_from_verdicts(verdicts, failed)


def rationality_check(
    question: str,
    turn_snippet: str,
    judge: TextModel,
    retry: Callable[[str], str] | None = None,
) -> str:
    """Grade a (think, tool_call) snippet A or B via the quality rubric."""
    if "<tool_call>" not in turn_snippet or "<think>" not in turn_snippet:
        raise ValueError("snippet must contain a <tool_call> and a <think> section")
    prompt = RATIONALITY_PROMPT.format(query=question, model_gen=turn_snippet)

    def parse(raw: str) -> str | None:
        grade = raw.strip().strip("\"'").upper()
        return grade if grade in ("A", "B") else None

    grade = parse(judge.complete(prompt))
    if grade is None:
        grade = parse(judge.complete(prompt))
    if grade is None:
        raise ValueError("judge output was not a single-letter A/B grade")
    return grade
