"""Deterministic fixed tool policy: the non-adaptive baseline.

The pipeline is prescribed up front: optional EXIF rotate, six crops (five
views at 0.80 plus a center view at 0.60), a 2x super-resolution pass over
all seven views, an image search per view in fixed order, then one text
search and one page visit for each of the first three unique result URLs,
and a single model call to synthesize the answer. No retries, no
reordering, no extra calls; overlays and pixel analysis stay disabled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .engine import Trajectory, TrajectoryStatus
from .instances import BenchmarkInstance, Level
from .models import TextModel
from .prompts import FIXED_ANSWER_PROMPT
from .tools import EpisodeContext, dispatch
from .turns import FinalAnswer, Observation, ObservationKind, ToolCall, Turn

logger = logging.getLogger(__name__)

CROP_SCALE_PRIMARY = 0.80
CROP_SCALE_CENTER = 0.60
SEARCH_VIEWS = 7  # original + five crops at 0.80 + center crop at 0.60
UNIQUE_URL_LIMIT = 3

VIEW_ORDER = ("original", "tl_080", "tr_080", "bl_080", "br_080", "c_080", "c_060")


@dataclass(frozen=True)
class ImageMeta:
    height: int
    width: int
    exif_orientation: int = 0  # degrees; only 90/270 trigger a rotate


@dataclass(frozen=True)
class PlannedCall:
    index: int
    tool: str
    arguments: dict
    derived_from: str

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "tool": self.tool,
            "arguments": self.arguments,
            "derived_from": self.derived_from,
        }


def five_crop_boxes(height: int, width: int, ratio: float) -> list[tuple[int, int, int, int]]:
    """Corner and center boxes (L, T, R, B) of size (floor(rH), floor(rW)).

    Order: top-left, top-right, bottom-left, bottom-right, center.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if height < 1 or width < 1:
        raise ValueError(f"invalid image size {height}x{width}")
    ch, cw = int(ratio * height), int(ratio * width)
    if ch < 1 or cw < 1:
        raise ValueError(f"crop of ratio {ratio} on {height}x{width} is empty")
    cl, ct = (width - cw) // 2, (height - ch) // 2
    return [
        (0, 0, cw, ch),
        (width - cw, 0, width, ch),
        (0, height - ch, cw, height),
        (width - cw, height - ch, width, height),
        (cl, ct, cl + cw, ct + ch),
    ]


def _crop_code(box: tuple[int, int, int, int]) -> str:
    left, top, right, bottom = box
    return (
        "img = load_image()\n"
        f"out = img.crop(({left}, {top}, {right}, {bottom}))\n"
        "save_image(out)"
    )


_SR_CODE = (
    "img = load_image()\n"
    "W, H = img.size\n"
    "out = img.resize((2*W, 2*H), Image.LANCZOS)\n"
    "save_image(out)"
)

_ROTATE_CODE_TEMPLATE = (
    "img = load_image()\n"
    "out = img.rotate({degrees}, expand=True)\n"
    "save_image(out)"
)


def build_plan(meta: ImageMeta, level: Level) -> list[PlannedCall]:
    """The static call sequence for one instance.

    Image references are symbolic ("view:NAME" / "sr:NAME"); the executor
    resolves them to registry ids as outputs appear. Pure function of the
    image dimensions, EXIF orientation, and level.
    """
    calls: list[PlannedCall] = []

    def add(tool: str, arguments: dict, derived_from: str) -> None:
        calls.append(
            PlannedCall(
                index=len(calls), tool=tool, arguments=arguments, derived_from=derived_from
            )
        )

    height, width = meta.height, meta.width
    base_view = "original"
    if meta.exif_orientation in (90, 270):
        add(
            "Rotate",
            {"image_ref": "view:original", "code": _ROTATE_CODE_TEMPLATE.format(
                degrees=meta.exif_orientation
            )},
            f"exif orientation {meta.exif_orientation}",
        )
        base_view = "rotated"
        height, width = width, height  # rotation swaps the crop geometry

    for view_name, box in zip(
        VIEW_ORDER[1:6], five_crop_boxes(height, width, CROP_SCALE_PRIMARY)
    ):
        add(
            "Crop",
            {"image_ref": f"view:{base_view}", "code": _crop_code(box)},
            f"five-crop r={CROP_SCALE_PRIMARY} {view_name}",
        )
    center_box = five_crop_boxes(height, width, CROP_SCALE_CENTER)[4]
    add(
        "Crop",
        {"image_ref": f"view:{base_view}", "code": _crop_code(center_box)},
        f"center crop r={CROP_SCALE_CENTER}",
    )

    sr_sources = [base_view, *VIEW_ORDER[1:]]
    for view_name in sr_sources:
        add(
            "Local Super-Resolution",
            {"image_ref": f"view:{view_name}", "code": _SR_CODE},
            f"2x super-resolution on {view_name}",
        )

    for view_name in sr_sources:
        add(
            "Web Image Search",
            {"image_ref": f"sr:{view_name}"},
            f"image search on enhanced {view_name}",
        )

    if level is Level.L2:
        add(
            "Web Text Search",
            {"queries": ["<instance prompt>"]},
            "extra text search on the textual query",
        )
    return calls


def _record(traj: Trajectory, thought: str, call: ToolCall, obs: Observation) -> None:
    traj.turns.append(Turn(thought=thought, action=call, observation=obs))


def execute_fixed(
    inst: BenchmarkInstance,
    ctx: EpisodeContext,
    answer_model: TextModel,
    meta: ImageMeta,
) -> Trajectory:
    """Run the static plan, then the URL-driven search/visit tail.

    Failed steps are recorded and their dependents are skipped; the
    pipeline never compensates with extra calls.
    """
    plan = build_plan(meta, inst.level)
    # Static calls plus at most 2 per unique URL and the final answer turn.
    traj = Trajectory(
        instance_id=inst.question_id, budget=len(plan) + 2 * UNIQUE_URL_LIMIT + 1
    )

    views: dict[str, int | None] = {"original": 0}
    sr_views: dict[str, int | None] = {}
    crop_queue = [name for name in VIEW_ORDER[1:]]
    crop_idx = 0
    search_hits: list[dict] = []  # top-1 per successful image search, in view order
    evidence: list[str] = []

    def resolve_ref(ref: str) -> int | None:
        kind, _, name = ref.partition(":")
        return (views if kind == "view" else sr_views).get(name)

    for planned in plan:
        args = dict(planned.arguments)
        ref = args.pop("image_ref", None)
        if planned.tool == "Web Text Search":
            args["queries"] = [inst.prompt]
            call = ToolCall(planned.tool, args)
            obs = dispatch(call, ctx)
            _record(traj, planned.derived_from, call, obs)
            if obs.kind is not ObservationKind.ERROR and obs.results:
                for r in obs.results[0].get("results", [])[:1]:
                    evidence.append(
                        f"Text search ({inst.prompt!r}): {r.get('title', '')} — "
                        f"{r.get('excerpt', '')}"
                    )
            continue

        img_id = resolve_ref(ref) if ref else None
        if ref is not None and img_id is None:
            logger.info("skipping %s: source %s unavailable", planned.tool, ref)
            continue

        if planned.tool == "Web Image Search":
            call = ToolCall(planned.tool, {"image_ids": [img_id]})
            obs = dispatch(call, ctx)
            _record(traj, planned.derived_from, call, obs)
            if obs.kind is not ObservationKind.ERROR and obs.results:
                top = obs.results[0].get("results", [])[:1]
                if top:
                    search_hits.append(top[0])
            continue

        call = ToolCall(planned.tool, {"image_id": img_id, "code": args["code"]})
        obs = dispatch(call, ctx)
        _record(traj, planned.derived_from, call, obs)
        produced = obs.images[0].img_id if obs.images else None
        if planned.tool == "Rotate":
            views["rotated"] = produced
        elif planned.tool == "Crop":
            views[crop_queue[crop_idx]] = produced
            crop_idx += 1
        elif planned.tool == "Local Super-Resolution":
            _, _, name = ref.partition(":")
            key = "original" if name == "rotated" else name
            sr_views[key] = produced

    seen: list[str] = []
    for hit in search_hits:
        url = hit.get("url", "")
        if not url or url in seen:
            continue
        if len(seen) >= UNIQUE_URL_LIMIT:
            break
        seen.append(url)
        title = hit.get("title", "") or url

        call = ToolCall("Web Text Search", {"queries": [title]})
        obs = dispatch(call, ctx)
        _record(traj, f"text search on image-result title for {url}", call, obs)
        if obs.kind is not ObservationKind.ERROR and obs.results:
            for r in obs.results[0].get("results", [])[:1]:
                evidence.append(
                    f"Text search ({title!r}): {r.get('title', '')} — {r.get('excerpt', '')}"
                )

        call = ToolCall(
            "Visit", {"url": url, "goal": f"verify evidence for: {inst.prompt}"}
        )
        obs = dispatch(call, ctx)
        _record(traj, f"visit top image-result page {url}", call, obs)
        if obs.kind is not ObservationKind.ERROR and obs.results:
            evidence.append(f"Visit {url}: {obs.results[0].get('summary', '')}")

    for hit in search_hits:
        evidence.insert(
            0, f"Image search hit: {hit.get('title', '')} ({hit.get('url', '')})"
        )

    prompt = FIXED_ANSWER_PROMPT.format(
        question=inst.prompt, evidence="\n".join(evidence) or "(no evidence gathered)"
    )
    answer = answer_model.complete(prompt).strip()
    traj.turns.append(
        Turn(thought="synthesize final answer from gathered evidence",
             action=FinalAnswer(answer))
    )
    traj.final_answer = answer
    traj.status = TrajectoryStatus.ANSWERED
    return traj
