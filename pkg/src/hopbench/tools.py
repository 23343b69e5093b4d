"""The nine-tool suite behind a uniform dispatcher.

Five image primitives (Crop, Rotate, Auxiliary Lines, Local
Super-Resolution, Pixel Analysis) run model-written code in the execution
sandbox; four knowledge tools (Web Text Search, Web Image Search, Visit,
Code Interpreter) reach external providers. Provider or sandbox trouble
becomes an Error observation, never an exception out of dispatch: tool
failures must not kill an episode.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import requests

from .cassette import CassetteSession
from .models import TextModel
from .prompts import VISIT_SUMMARY_PROMPT
from .providers import IMAGE_RESULT_CAP, TEXT_RESULT_CAP, ProviderError, ProviderStack
from .registry import ImageRegistry, Provenance, UnknownImageError, persist_image
from .turns import Observation, ObservationImage, ObservationKind, ToolCall, error_observation

logger = logging.getLogger(__name__)

IMAGE_TOOLS = (
    "Crop",
    "Rotate",
    "Auxiliary Lines",
    "Local Super-Resolution",
    "Pixel Analysis",
)
KNOWLEDGE_TOOLS = ("Web Text Search", "Web Image Search", "Visit", "Code Interpreter")
ALL_TOOLS = IMAGE_TOOLS + KNOWLEDGE_TOOLS

# Generic alias: carries code + image ref and is attributed to a primitive
# by inspecting the code.
IMAGE_PROCESSOR_ALIAS = "image_processor"


class SandboxError(RuntimeError):
    """Sandbox unreachable or protocol-level failure."""


class SandboxClient(Protocol):
    def execute(
        self,
        code: str,
        image_pointer: str | None = None,
        timeout_s: float | None = None,
        output_format: str | None = None,
    ) -> dict: ...


class HttpSandboxClient:
    """Client for the execution service: POST /execute, GET /health.

    Run-relative image pointers are resolved against ``base_dir`` here, at
    the HTTP boundary, so upstream requests (and their cassette digests)
    stay independent of where the run directory lives.
    """

    def __init__(self, base_url: str, timeout_s: float = 70.0, base_dir: str | Path | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def _resolve(self, pointer: str) -> str:
        if pointer.startswith(("http://", "https://")) or Path(pointer).is_absolute():
            return pointer
        if self.base_dir is not None:
            return str(self.base_dir / pointer)
        return pointer

    def execute(
        self,
        code: str,
        image_pointer: str | None = None,
        timeout_s: float | None = None,
        output_format: str | None = None,
    ) -> dict:
        body: dict[str, Any] = {"code": code}
        if image_pointer is not None:
            body["image_pointer"] = self._resolve(image_pointer)
        if timeout_s is not None:
            body["timeout_s"] = timeout_s
        if output_format is not None:
            body["output_format"] = output_format
        try:
            resp = requests.post(
                f"{self.base_url}/execute", json=body, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise SandboxError(f"sandbox unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise SandboxError(f"sandbox HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def health(self) -> dict:
        try:
            resp = requests.get(f"{self.base_url}/health", timeout=self.timeout_s)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise SandboxError(f"sandbox health check failed: {exc}") from exc
        return resp.json()


class CassetteSandboxClient:
    """Record/replay wrapper over any sandbox client."""

    def __init__(self, session: CassetteSession, inner: SandboxClient | None = None):
        self.session = session
        self.inner = inner

    def execute(
        self,
        code: str,
        image_pointer: str | None = None,
        timeout_s: float | None = None,
        output_format: str | None = None,
    ) -> dict:
        payload = {
            "code": code,
            "image_pointer": image_pointer,
            "timeout_s": timeout_s,
            "output_format": output_format,
        }

        def live() -> dict:
            if self.inner is None:
                raise SandboxError("no live sandbox behind cassette")
            return self.inner.execute(code, image_pointer, timeout_s, output_format)

        return self.session.call("sandbox.execute", payload, live)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    argument_schema: dict[str, dict]
    usage_note: str


def _arg(type_: str, required: bool = False, aliases: tuple[str, ...] = ()) -> dict:
    return {"type": type_, "required": required, "aliases": aliases}


_IMAGE_TOOL_SCHEMA = {
    "code": _arg("string", required=True),
    "image_id": _arg("integer", aliases=("image_url",)),
    "out_format": _arg("string"),
}

TOOL_SPECS: dict[str, ToolSpec] = {
    **{
        name: ToolSpec(
            name=name,
            argument_schema=_IMAGE_TOOL_SCHEMA,
            usage_note=f"Runs image code in the sandbox ({name.lower()} primitive); "
            "return outputs via save_image(img) or print a report.",
        )
        for name in IMAGE_TOOLS
    },
    "Web Text Search": ToolSpec(
        name="Web Text Search",
        argument_schema={"queries": _arg("array", required=True, aliases=("query",))},
        usage_note=f"Retrieves the top {TEXT_RESULT_CAP} text excerpts per query.",
    ),
    "Web Image Search": ToolSpec(
        name="Web Image Search",
        argument_schema={
            "image_ids": _arg("array", required=True, aliases=("image_urls",))
        },
        usage_note=f"Retrieves the top {IMAGE_RESULT_CAP} images and descriptions per "
        "queried image. Should only be used once per image.",
    ),
    "Visit": ToolSpec(
        name="Visit",
        argument_schema={
            "url": _arg("string", required=True),
            "goal": _arg("string", required=True),
        },
        usage_note="Visits a webpage and returns a goal-conditioned summary.",
    ),
    "Code Interpreter": ToolSpec(
        name="Code Interpreter",
        argument_schema={"code": _arg("string", required=True)},
        usage_note="Executes Python code for calculation, data analysis, or content "
        "extraction.",
    ),
}


@dataclass
class PolicyLimits:
    visit_summary_limit: int = 2000
    image_search_per_image: int = 1
    sandbox_timeout_s: float | None = None


@dataclass
class EpisodeContext:
    """Per-episode wiring handed to dispatch. Never shared across episodes."""

    registry: ImageRegistry
    providers: ProviderStack
    sandbox: SandboxClient | None = None
    summarizer: TextModel | None = None
    limits: PolicyLimits = field(default_factory=PolicyLimits)
    enabled_tools: frozenset[str] | None = None
    base_dir: Path = field(default_factory=Path.cwd)
    image_search_uses: dict[int, int] = field(default_factory=dict)

    @property
    def image_dir(self) -> Path:
        return self.base_dir / "images"

    def resolve_pointer(self, pointer: str) -> str:
        if pointer.startswith(("http://", "https://")) or Path(pointer).is_absolute():
            return pointer
        return str(self.base_dir / pointer)


def canonical_tool_name(name: str) -> str | None:
    if name in TOOL_SPECS or name == IMAGE_PROCESSOR_ALIAS:
        return name
    return None


def expand_tool_groups(names: list[str]) -> list[str]:
    """Expand toggle-set shorthands: "Image Processor" means all five image
    primitives (the usual single-tool ablation setting)."""
    expanded: list[str] = []
    for name in names:
        if name in ("Image Processor", IMAGE_PROCESSOR_ALIAS):
            expanded.extend(t for t in IMAGE_TOOLS if t not in expanded)
        elif name not in expanded:
            expanded.append(name)
    return expanded


def classify_image_code(code: str) -> str:
    """Attribute a generic image_processor snippet to one primitive.

    Used for provenance and usage profiles when the model calls the
    generic tool instead of a named primitive.
    """
    produces_image = "save_image" in code
    if not produces_image and ("to_numpy" in code or "print(" in code):
        return "Pixel Analysis"
    if "ImageDraw" in code or ".rectangle(" in code or ".line(" in code:
        return "Auxiliary Lines"
    if ".resize(" in code:
        return "Local Super-Resolution"
    if ".crop(" in code:
        return "Crop"
    if ".rotate(" in code or "transpose" in code:
        return "Rotate"
    return "Crop"


def validate_arguments(spec: ToolSpec, arguments: dict[str, Any]) -> tuple[dict, list[str]]:
    """Resolve aliases and check required fields; returns (canonical args, problems)."""
    canonical: dict[str, Any] = {}
    problems: list[str] = []
    for key, descriptor in spec.argument_schema.items():
        present = None
        if key in arguments:
            present = arguments[key]
        else:
            for alias in descriptor["aliases"]:
                if alias in arguments:
                    present = arguments[alias]
                    break
        if present is None:
            if descriptor["required"]:
                problems.append(f"missing required argument: {key}")
            continue
        canonical[key] = present
    return canonical, problems


def _params_digest(arguments: dict[str, Any]) -> str:
    canon = json.dumps(arguments, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


# --- knowledge tools --------------------------------------------------------


def web_text_search(queries: list[str], providers: ProviderStack) -> Observation:
    """Top text excerpts per query, concatenated with per-query headers."""
    if not queries:
        raise ValueError("queries must be a non-empty list")
    blocks = []
    structured = []
    for i, query in enumerate(queries, start=1):
        results = providers.search(str(query))[:TEXT_RESULT_CAP]
        structured.append({"query": str(query), "results": results})
        lines = [f'Results for query {i}: "{query}"']
        if not results:
            lines.append("(no results)")
        for j, r in enumerate(results, start=1):
            lines.append(f"{j}. {r.get('title', '')} — {r.get('excerpt', '')} ({r.get('url', '')})")
        blocks.append("\n".join(lines))
    return Observation(
        kind=ObservationKind.TEXT, text="\n\n".join(blocks), results=structured
    )


def web_image_search(image_ids: list[int], ctx: EpisodeContext) -> Observation:
    """Reverse image search; result thumbnails are persisted and registered."""
    if not image_ids:
        raise ValueError("image_ids must be a non-empty list")
    per_image_cap = ctx.limits.image_search_per_image
    ids: list[int] = []
    for raw in image_ids:
        img_id = int(raw)
        ctx.registry.resolve(img_id)  # raises UnknownImageError for bad ids
        if ctx.image_search_uses.get(img_id, 0) >= per_image_cap:
            return error_observation(
                f"usage limit: Web Image Search was already used on img_id={img_id}; "
                "it should only be used once per image"
            )
        ids.append(img_id)

    blocks = []
    images: list[ObservationImage] = []
    structured = []
    for img_id in ids:
        # Keyed on the stored (run-relative) pointer so cassette digests do
        # not depend on where the run directory lives.
        pointer = ctx.registry.resolve(img_id)
        results = ctx.providers.image_search(pointer)[:IMAGE_RESULT_CAP]
        structured.append({"image_id": img_id, "results": results})
        lines = [f"Image search results for img_id={img_id}:"]
        if not results:
            lines.append("(no matching images found)")
        for j, r in enumerate(results, start=1):
            lines.append(f"{j}. {r.get('title', '')} ({r.get('url', '')})")
            thumb = r.get("thumbnail", "")
            if not thumb:
                continue
            try:
                data = ctx.providers.fetch(thumb)
            except ProviderError as exc:
                lines.append(f"   (thumbnail unavailable: {exc})")
                continue
            stored = persist_image(data, ctx.image_dir)
            new_id = ctx.registry.register(
                pointer=stored,
                snippet=(r.get("title") or "image search result")[:60],
                provenance=Provenance(
                    "Web Image Search", parent=img_id, params_digest=_params_digest(r)
                ),
            )
            images.append(
                ObservationImage(img_id=new_id, pointer=stored, caption=r.get("title", ""))
            )
        blocks.append("\n".join(lines))
        ctx.image_search_uses[img_id] = ctx.image_search_uses.get(img_id, 0) + 1
    return Observation(
        kind=ObservationKind.IMAGES,
        text="\n\n".join(blocks),
        images=images,
        results=structured,
    )


def visit(url: str, goal: str, ctx: EpisodeContext) -> Observation:
    """Fetch readable page text and summarize it against the goal."""
    if not goal or not goal.strip():
        raise ValueError("goal must be non-empty")
    if not str(url).startswith(("http://", "https://")):
        raise ValueError(f"not a valid URL: {url!r}")
    content = ctx.providers.read(url)
    limit = ctx.limits.visit_summary_limit
    if ctx.summarizer is not None:
        prompt = VISIT_SUMMARY_PROMPT.format(goal=goal, content=content, limit=limit)
        summary = ctx.summarizer.complete(prompt).strip()[:limit]
    else:
        summary = content.strip()[:limit]
    return Observation(
        kind=ObservationKind.TEXT,
        text=f"Visit summary for {url} (goal: {goal}):\n{summary}",
        results=[{"url": url, "goal": goal, "summary": summary}],
    )


def code_interpret(code: str, ctx: EpisodeContext) -> Observation:
    """Run plain (image-free) code in the sandbox; stdout comes back as a report."""
    if not code or not code.strip():
        raise ValueError("code must be non-empty")
    if ctx.sandbox is None:
        raise SandboxError("no sandbox configured")
    result = ctx.sandbox.execute(code=code, timeout_s=ctx.limits.sandbox_timeout_s)
    return _sandbox_result_to_observation(result, ctx, producing_tool=None, parent=None)


def image_process(
    code: str,
    ctx: EpisodeContext,
    image_id: int | None = None,
    image_url: str | None = None,
    producing_tool: str = "Crop",
    output_format: str | None = None,
) -> Observation:
    """Run image code in the sandbox; image outputs are registered with lineage."""
    if not code or not code.strip():
        raise ValueError("code must be non-empty")
    if ctx.sandbox is None:
        raise SandboxError("no sandbox configured")
    # Pointers stay run-relative here; the sandbox client resolves them at
    # the transport boundary so request digests are location-independent.
    parent: int | None = None
    if image_id is not None:
        parent = int(image_id)
        pointer = ctx.registry.resolve(parent)
    elif image_url is not None:
        # Tolerated legacy argument: match a registered pointer if possible,
        # otherwise hand the raw URL to the sandbox.
        pointer = image_url
        for entry in ctx.registry.entries:
            if entry.pointer == image_url:
                parent = entry.img_id
                pointer = entry.pointer
                break
    else:
        raise ValueError("an image reference is required (image_id)")
    result = ctx.sandbox.execute(
        code=code,
        image_pointer=pointer,
        timeout_s=ctx.limits.sandbox_timeout_s,
        output_format=output_format,
    )
    return _sandbox_result_to_observation(
        result, ctx, producing_tool=producing_tool, parent=parent, code=code
    )


def _sandbox_result_to_observation(
    result: dict,
    ctx: EpisodeContext,
    producing_tool: str | None,
    parent: int | None,
    code: str = "",
) -> Observation:
    status = result.get("status")
    if status == "Timeout":
        return error_observation(
            f"sandbox execution timed out after {result.get('duration_ms', '?')} ms"
        )
    if status != "OK":
        stderr = (result.get("stderr") or "").strip()
        return error_observation(f"sandbox execution failed: {stderr[-800:] or status}")

    texts: list[str] = []
    images: list[ObservationImage] = []
    for output in result.get("outputs", []):
        kind = output.get("kind")
        if kind in ("text", "json"):
            texts.append(str(output.get("payload", "")))
        elif kind == "image" and producing_tool is not None:
            import base64

            data = base64.b64decode(output.get("payload", ""))
            stored = persist_image(data, ctx.image_dir)
            new_id = ctx.registry.register(
                pointer=stored,
                snippet=f"{producing_tool} output",
                provenance=Provenance(
                    producing_tool,
                    parent=parent,
                    params_digest=_params_digest({"code": code}),
                ),
            )
            images.append(ObservationImage(img_id=new_id, pointer=stored))
    if images:
        return Observation(
            kind=ObservationKind.IMAGES, text="\n".join(texts), images=images
        )
    return Observation(kind=ObservationKind.REPORT, text="\n".join(texts))


# --- dispatcher -------------------------------------------------------------


def dispatch(call: ToolCall, ctx: EpisodeContext) -> Observation:
    """Route one validated tool call; all failures become Error observations."""
    name = canonical_tool_name(call.name)
    if name is None:
        valid = ", ".join(ALL_TOOLS)
        return error_observation(f"unknown tool {call.name!r}; valid tools are: {valid}")

    attributed = name
    if name == IMAGE_PROCESSOR_ALIAS:
        attributed = classify_image_code(str(call.arguments.get("code", "")))
    if ctx.enabled_tools is not None and attributed not in ctx.enabled_tools:
        enabled = ", ".join(sorted(ctx.enabled_tools))
        return error_observation(
            f"tool {attributed!r} is disabled in this run; enabled tools: {enabled}"
        )

    spec = TOOL_SPECS[attributed] if name == IMAGE_PROCESSOR_ALIAS else TOOL_SPECS[name]
    args, problems = validate_arguments(spec, call.arguments)
    if problems:
        return error_observation(
            f"invalid arguments for {name}: " + "; ".join(problems)
        )

    try:
        if attributed in IMAGE_TOOLS:
            image_ref = args.get("image_id")
            image_url = None
            if isinstance(image_ref, str) and not image_ref.lstrip("-").isdigit():
                image_url, image_ref = image_ref, None
            if image_ref is None and image_url is None:
                return error_observation(
                    f"invalid arguments for {name}: missing required argument: image_id"
                )
            return image_process(
                code=str(args["code"]),
                ctx=ctx,
                image_id=None if image_ref is None else int(image_ref),
                image_url=image_url,
                producing_tool=attributed,
                output_format=args.get("out_format"),
            )
        if name == "Web Text Search":
            queries = args["queries"]
            if isinstance(queries, str):
                queries = [queries]
            return web_text_search([str(q) for q in queries], ctx.providers)
        if name == "Web Image Search":
            ids = args["image_ids"]
            if not isinstance(ids, list):
                ids = [ids]
            return web_image_search(ids, ctx)
        if name == "Visit":
            return visit(str(args["url"]), str(args["goal"]), ctx)
        return code_interpret(str(args["code"]), ctx)
    except UnknownImageError as exc:
        return error_observation(f"hallucinated image reference: {exc.args[0]}")
    except ProviderError as exc:
        advice = " The provider may be rate-limited; retry later." if exc.retryable else ""
        return error_observation(f"provider failure in {name}: {exc}.{advice}")
    except SandboxError as exc:
        return error_observation(f"sandbox failure in {name}: {exc}")
    except (ValueError, TypeError, KeyError) as exc:
        return error_observation(f"bad call to {name}: {exc}")


def tool_descriptions(enabled: frozenset[str] | None = None) -> str:
    """System-prompt block describing the callable tools and their arguments."""
    lines = []
    for name in ALL_TOOLS:
        if enabled is not None and name not in enabled:
            continue
        spec = TOOL_SPECS[name]
        args = ", ".join(
            f"{key} ({desc['type']}{', required' if desc['required'] else ''})"
            for key, desc in spec.argument_schema.items()
        )
        lines.append(f"- {name}: {spec.usage_note} Arguments: {args}.")
    return "\n".join(lines)
