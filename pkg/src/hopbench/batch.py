"""Batch orchestration: run many episodes, evaluate a run, forge instances.

A batch never dies with one instance: per-instance failures are recorded
and the rest proceed. Resume skips instances whose trajectory log already
exists, so reruns are idempotent.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .cassette import CassetteMode, CassetteSession
from .config import ForgeConfig, RunConfig
from .engine import Trajectory, run_trajectory
from .evaluation import (
    EvalVerdict,
    classify_error,
    judge_answer,
    milestone_hit_rate,
    pass_at_1,
    tool_usage_profile,
)
from .fixed import ImageMeta, execute_fixed
from .forge import (
    EntityGraph,
    FilterOutcome,
    GenerationError,
    SamplingExhaustedError,
    UnknownEntityError,
    generate_query,
    sample_path,
    solvability_filter,
)
from .instances import (
    BenchmarkInstance,
    Level,
    extract_milestones,
    instance_to_json,
    load_instances,
)
from .logs import LoadedLog, read_trajectory_log, write_trajectory_log
from .models import CassetteModel, ChatModel, OpenAICompatModel, ScriptedModel, scripted_from_file
from .providers import ProviderStack
from .registry import ImageRegistry, Provenance
from .tools import CassetteSandboxClient, EpisodeContext, HttpSandboxClient, PolicyLimits

logger = logging.getLogger(__name__)


def build_model(spec: str, session: CassetteSession | None = None):
    """Model handle from a "kind:detail" spec string.

    Scripted models are deterministic already and stay unwrapped; live
    backends get cassette record/replay when a non-live session is given.
    """
    kind, _, detail = spec.partition(":")
    if kind == "scripted":
        return scripted_from_file(detail) if detail else ScriptedModel([], default="")
    if kind in ("openai", "openai-compat"):
        name, _, base = detail.partition("@")
        model = OpenAICompatModel(
            model=name, base_url=base or "https://api.openai.com/v1"
        )
    else:
        raise ValueError(f"unknown model spec: {spec!r}")
    if session is not None and session.mode is not CassetteMode.LIVE:
        return CassetteModel(session, inner=model)
    return model


@dataclass
class RunSummary:
    run_dir: str
    completed: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    failed: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return True  # per-instance failures do not fail the batch


def _fixed_meta(inst: BenchmarkInstance, base_dir: Path) -> ImageMeta:
    extra = inst.extra
    if "height" in extra and "width" in extra:
        return ImageMeta(
            height=int(extra["height"]),
            width=int(extra["width"]),
            exif_orientation=int(extra.get("exif_orientation", 0)),
        )
    try:
        from PIL import Image  # an optional convenience, not a hard dependency

        pointer = inst.image
        if not pointer.startswith(("http://", "https://")):
            with Image.open(Path(pointer) if Path(pointer).is_absolute() else base_dir / pointer) as im:
                return ImageMeta(height=im.height, width=im.width)
    except Exception as exc:  # noqa: BLE001
        raise ValueError(
            f"fixed policy needs image dimensions for instance {inst.question_id}; "
            "provide height/width fields or a readable local image"
        ) from exc
    raise ValueError(f"cannot determine image size for instance {inst.question_id}")


def run_batch(
    cfg: RunConfig,
    providers: ProviderStack | None = None,
    model: ChatModel | None = None,
    sandbox=None,
) -> RunSummary:
    """Execute every instance under the configured policy.

    Providers, model, and sandbox can be injected (tests, custom wiring);
    otherwise they are built from the config. One trajectory log per
    instance lands under output_dir/trajectories.
    """
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)

    session = CassetteSession(cfg.cassette_path, CassetteMode(cfg.cassette_mode))
    if providers is None:
        if session.mode is CassetteMode.REPLAY:
            providers = ProviderStack(session=session)
        else:
            providers = ProviderStack.live_default(session=session)
    if model is None:
        model = build_model(cfg.model, session)
    if sandbox is None and cfg.sandbox_url:
        sandbox = HttpSandboxClient(cfg.sandbox_url, base_dir=cfg.output_dir)
    if sandbox is not None and session.mode is not CassetteMode.LIVE:
        sandbox = CassetteSandboxClient(session, inner=sandbox)
    elif sandbox is None and session.mode is CassetteMode.REPLAY:
        sandbox = CassetteSandboxClient(session, inner=None)

    level_filter = Level(cfg.level_filter) if cfg.level_filter else None
    loaded = load_instances(cfg.instances_path, level_filter)
    for err in loaded.errors:
        logger.warning("instance file line %d rejected: %s", err.line_no, err.message)

    manifest = {
        "config_digest": cfg.digest,
        "config": cfg.raw,
        "instances_path": cfg.instances_path,
        "policy": cfg.policy,
        "seed": cfg.seed,
        "version": __version__,
        "rejected_lines": [[e.line_no, e.message] for e in loaded.errors],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )

    summary = RunSummary(run_dir=str(out_dir))
    replay = session.mode is CassetteMode.REPLAY

    def log_path(inst: BenchmarkInstance, repeat: int) -> Path:
        suffix = f"_r{repeat}" if cfg.repeats > 1 else ""
        return traj_dir / f"{inst.question_id}{suffix}.jsonl"

    def run_one(inst: BenchmarkInstance, repeat: int) -> None:
        registry = ImageRegistry()
        registry.register(inst.image, "input image", Provenance("input"))
        ctx = EpisodeContext(
            registry=registry,
            providers=providers,
            sandbox=sandbox,
            summarizer=model,
            limits=PolicyLimits(visit_summary_limit=cfg.visit_summary_limit),
            enabled_tools=cfg.enabled_tools,
            base_dir=out_dir,
        )
        started = time.monotonic()
        if cfg.policy == "fixed":
            traj = execute_fixed(inst, ctx, model, _fixed_meta(inst, out_dir))
        else:
            traj = run_trajectory(inst, model, ctx, budget=cfg.budget)
        wall = 0.0 if replay else round(time.monotonic() - started, 3)
        write_trajectory_log(
            traj,
            log_path(inst, repeat),
            config_digest=cfg.digest,
            policy_name=cfg.policy,
            wall_clock_s=wall,
            registry=registry,
        )

    jobs = [
        (inst, repeat)
        for inst in loaded.instances
        for repeat in range(cfg.repeats)
    ]
    pending = []
    for inst, repeat in jobs:
        if log_path(inst, repeat).exists():
            summary.skipped.append(inst.question_id)
        else:
            pending.append((inst, repeat))

    workers = cfg.concurrency or min(8, max(1, len(pending)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(run_one, inst, repeat): inst for inst, repeat in pending
        }
        for future in as_completed(futures):
            inst = futures[future]
            try:
                future.result()
                summary.completed.append(inst.question_id)
            except Exception as exc:  # noqa: BLE001 - batch must survive instances
                logger.error("instance %d failed: %s", inst.question_id, exc)
                summary.failed[inst.question_id] = str(exc)

    if session.mode is CassetteMode.RECORD:
        session.save()
    (out_dir / "summary.json").write_text(
        json.dumps(
            {
                "completed": sorted(summary.completed),
                "skipped": sorted(summary.skipped),
                "failed": {str(k): v for k, v in summary.failed.items()},
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return summary


# --- evaluation over a finished run ------------------------------------------


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _accuracy_block(rows: list[dict]) -> dict[str, Any]:
    by_admin: dict[str, list[bool]] = {}
    for row in rows:
        admin = row.get("admin_level") or "unknown"
        by_admin.setdefault(admin, []).append(row["correct"])
    admin_acc = {
        admin: round(100.0 * pass_at_1(v), 1) for admin, v in sorted(by_admin.items())
    }
    known = [acc for admin, acc in admin_acc.items() if admin != "unknown"]
    return {
        "n": len(rows),
        "micro_pass_at_1": round(100.0 * pass_at_1([r["correct"] for r in rows]), 1),
        "by_admin_level": admin_acc,
        "macro_pass_at_1": round(sum(known) / len(known), 1) if known else None,
    }


def evaluate_run(
    run_dir: str | Path,
    judge,
    instances_path: str | None = None,
    judge_fn: Callable[[BenchmarkInstance, LoadedLog], EvalVerdict] | None = None,
) -> dict[str, Any]:
    """Score a run directory and write eval.json plus a text report.

    ``judge`` is a TextModel handle; ``judge_fn`` overrides the whole
    verdict step (used by replay tests and custom graders).
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    instances_path = instances_path or manifest["instances_path"]
    loaded = load_instances(instances_path)
    by_id = {inst.question_id: inst for inst in loaded.instances}

    rows: list[dict[str, Any]] = []
    trajectories: list[Trajectory] = []
    errors: dict[str, str] = {}
    for log_file in sorted((run_dir / "trajectories").glob("*.jsonl")):
        log = read_trajectory_log(log_file)
        qid = log.header.get("question_id")
        inst = by_id.get(qid)
        if inst is None:
            errors[log_file.name] = f"no instance with question_id={qid}"
            continue
        if not inst.gold_answer:
            errors[log_file.name] = "missing gold answer"
            continue
        try:
            if judge_fn is not None:
                verdict = judge_fn(inst, log)
            else:
                verdict = judge_answer(
                    inst.prompt, log.trajectory.final_answer or "", inst.gold_answer, judge
                )
        except Exception as exc:  # noqa: BLE001 - judge failures recorded per instance
            errors[log_file.name] = f"judge failure: {exc}"
            continue
        row: dict[str, Any] = {
            "question_id": qid,
            "log": log_file.name,
            "level": inst.level.value,
            "admin_level": inst.admin_level,
            "correct": verdict.correct,
            "confidence": verdict.confidence,
            "final_answer": log.trajectory.final_answer,
            "extracted_final_answer": verdict.extracted_final_answer,
            "status": log.trajectory.status.value,
            "tool_calls": log.trajectory.tool_call_count,
        }
        if inst.solution_chain:
            milestones = extract_milestones(inst)
            row["milestone_hit_rate"] = round(
                milestone_hit_rate(log.trajectory, milestones), 4
            )
            if not verdict.correct:
                row["error_label"] = classify_error(
                    log.trajectory, milestones, verdict
                ).label.value
        rows.append(row)
        trajectories.append(log.trajectory)

    report: dict[str, Any] = {
        "run_dir": str(run_dir),
        "config_digest": manifest.get("config_digest", ""),
        "n_scored": len(rows),
        "errors": errors,
    }
    if rows:
        report["overall"] = _accuracy_block(rows)
        for level in ("L1", "L2"):
            level_rows = [r for r in rows if r["level"] == level]
            if level_rows:
                report[level] = _accuracy_block(level_rows)
        try:
            report["tool_profile"] = {
                name: round(pct, 1)
                for name, pct in tool_usage_profile(trajectories).items()
            }
        except ValueError:
            report["tool_profile"] = {}
        ms_rows = [r for r in rows if "milestone_hit_rate" in r]
        report["milestone_split"] = {
            "correct": {
                "mean_hit_rate": _mean(
                    [r["milestone_hit_rate"] for r in ms_rows if r["correct"]]
                ),
                "mean_tool_calls": _mean(
                    [float(r["tool_calls"]) for r in ms_rows if r["correct"]]
                ),
            },
            "incorrect": {
                "mean_hit_rate": _mean(
                    [r["milestone_hit_rate"] for r in ms_rows if not r["correct"]]
                ),
                "mean_tool_calls": _mean(
                    [float(r["tool_calls"]) for r in ms_rows if not r["correct"]]
                ),
            },
        }
        incorrect = [r for r in rows if not r["correct"] and "error_label" in r]
        distribution: dict[str, float] = {}
        for code in ("E1", "E2", "E3", "E4", "E5", "E6"):
            count = sum(1 for r in incorrect if r["error_label"] == code)
            distribution[code] = round(100.0 * count / len(incorrect), 1) if incorrect else 0.0
        report["error_distribution"] = distribution
        if not incorrect:
            report["error_distribution_note"] = "no incorrect labeled instances"
    report["rows"] = rows

    (run_dir / "eval.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
    )
    (run_dir / "report.txt").write_text(render_report(report), encoding="utf-8")
    return report


def render_report(report: dict[str, Any]) -> str:
    """Human-readable tables for a computed eval report."""
    lines = [f"Run: {report.get('run_dir', '')}", f"Scored: {report.get('n_scored', 0)}"]
    for block_name in ("overall", "L1", "L2"):
        block = report.get(block_name)
        if not block:
            continue
        lines.append("")
        lines.append(f"[{block_name}] n={block['n']}")
        lines.append(f"  pass@1 (micro): {block['micro_pass_at_1']}%")
        if block.get("macro_pass_at_1") is not None:
            lines.append(f"  pass@1 (macro over admin levels): {block['macro_pass_at_1']}%")
        for admin, acc in block.get("by_admin_level", {}).items():
            lines.append(f"    {admin:>8}: {acc}%")
    profile = report.get("tool_profile")
    if profile:
        lines.append("")
        lines.append("Tool usage profile (% of calls):")
        for name, pct in sorted(profile.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name:>22}: {pct}%")
    split = report.get("milestone_split")
    if split:
        lines.append("")
        lines.append("Milestone analysis (correct vs incorrect):")
        for group in ("correct", "incorrect"):
            stats = split[group]
            hr = stats["mean_hit_rate"]
            tc = stats["mean_tool_calls"]
            hr_s = f"{100 * hr:.1f}%" if hr is not None else "-"
            tc_s = f"{tc:.1f}" if tc is not None else "-"
            lines.append(f"  {group:>9}: MS hit {hr_s}, tool calls {tc_s}")
    dist = report.get("error_distribution")
    if dist:
        lines.append("")
        lines.append("Error distribution over incorrect cases (%):")
        lines.append("  " + "  ".join(f"{k}={v}" for k, v in dist.items()))
        if report.get("error_distribution_note"):
            lines.append(f"  note: {report['error_distribution_note']}")
    if report.get("errors"):
        lines.append("")
        lines.append("Per-instance evaluation errors:")
        for name, message in sorted(report["errors"].items()):
            lines.append(f"  {name}: {message}")
    return "\n".join(lines) + "\n"


# --- forging -----------------------------------------------------------------


def forge_batch(
    cfg: ForgeConfig,
    graph: EntityGraph | None = None,
    generator=None,
    solvability_judge=None,
) -> dict[str, Any]:
    """Forge multi-hop instances from Level-1 roots.

    Per root: sample a path, generate an obfuscated query (leak-checked
    inside generation), optionally filter by k solvability runs. Accepted
    instances go to forged.jsonl; every rejection is logged with a reason.
    """
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = CassetteSession(cfg.cassette_path, CassetteMode(cfg.cassette_mode))
    if graph is None:
        if session.mode is CassetteMode.REPLAY:
            graph = EntityGraph(provider=_SessionLinkProvider(session))
        else:
            from .providers import WikiLinkProvider

            graph = EntityGraph(provider=_SessionLinkProvider(session, WikiLinkProvider()))
    if generator is None:
        generator = build_model(cfg.generator, session)

    loaded = load_instances(cfg.roots_path, level_filter=Level.L1)
    accepted: list[dict] = []
    rejected: list[dict] = []
    for inst in loaded.instances:
        seed = cfg.seed * 100003 + inst.question_id
        try:
            path = sample_path(graph, inst.gold_image_answer, cfg.depth, seed)
        except (SamplingExhaustedError, UnknownEntityError) as exc:
            rejected.append(
                {"question_id": inst.question_id, "reason": "sampling", "detail": str(exc)}
            )
            continue
        try:
            forged = generate_query(path, generator)
        except GenerationError as exc:
            reason = "leakage" if "leaks" in str(exc) else "generation"
            rejected.append(
                {"question_id": inst.question_id, "reason": reason, "detail": str(exc)}
            )
            continue

        candidate = BenchmarkInstance(
            question_id=cfg.id_offset + inst.question_id,
            level=Level.L2,
            prompt=forged.query,
            image=inst.image,
            gold_image_answer=inst.gold_image_answer,
            gold_text_answer=forged.gold_answer,
            solution_chain=forged.nodes,
            source=inst.source,
            admin_level=inst.admin_level,
        )
        if solvability_judge is not None and cfg.solvability_runs > 0:
            decision = solvability_filter(candidate, solvability_judge, cfg.solvability_runs)
            if decision.decision is FilterOutcome.DROP_TOO_EASY:
                rejected.append(
                    {
                        "question_id": inst.question_id,
                        "reason": "too easy",
                        "detail": f"solved in all {cfg.solvability_runs} runs",
                    }
                )
                continue
            if decision.decision is FilterOutcome.FLAG_REVIEW:
                rejected.append(
                    {
                        "question_id": inst.question_id,
                        "reason": "flag review",
                        "detail": f"failed in all {cfg.solvability_runs} runs",
                    }
                )
                continue
        accepted.append(instance_to_json(candidate))

    (out_dir / "forged.jsonl").write_text(
        "".join(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in accepted),
        encoding="utf-8",
    )
    (out_dir / "rejections.jsonl").write_text(
        "".join(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in rejected),
        encoding="utf-8",
    )
    if session.mode is CassetteMode.RECORD:
        session.save()
    return {"accepted": len(accepted), "rejected": len(rejected), "out_dir": str(out_dir)}


class _SessionLinkProvider:
    """LinkProvider view over a cassette session (with optional live backend)."""

    def __init__(self, session: CassetteSession, live=None):
        self.session = session
        self.live = live

    def out_links(self, title: str) -> list[str]:
        def fetch() -> list[str]:
            if self.live is None:
                from .providers import ProviderError

                raise ProviderError(f"unknown entity: {title}")
            return self.live.out_links(title)

        return self.session.call("out_links", {"title": title}, fetch)
