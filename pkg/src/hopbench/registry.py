"""Per-episode image registry.

Every image an episode touches (the input, tool-produced edits, search
thumbnails) is registered under a small integer id with provenance. The
agent only ever speaks in ids; pointers (paths/URLs) stay server-side so a
mistyped path can never break a tool call.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class UnknownImageError(KeyError):
    """Raised when an id does not exist in the registry (hallucinated reference)."""


class DanglingParentError(ValueError):
    """Raised when a registration names a parent id that is not registered."""


@dataclass(frozen=True)
class Provenance:
    """Who produced an image: tool name, optional parent id, argument digest."""

    producing_tool: str
    parent: int | None = None
    params_digest: str = ""

    def label(self) -> str:
        if self.parent is None:
            return self.producing_tool
        return f"{self.producing_tool}(img_id={self.parent})"


@dataclass(frozen=True)
class ImageRegistryEntry:
    img_id: int
    pointer: str
    snippet: str
    metadata: Provenance


@dataclass
class ImageRegistry:
    """Append-only table of image ids. Confined to a single episode."""

    entries: list[ImageRegistryEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def register(self, pointer: str, snippet: str, provenance: Provenance) -> int:
        """Append an entry and return its id (the previous size)."""
        if provenance.parent is not None and not (
            0 <= provenance.parent < len(self.entries)
        ):
            raise DanglingParentError(
                f"parent img_id={provenance.parent} not registered "
                f"(registry has {len(self.entries)} entries)"
            )
        img_id = len(self.entries)
        self.entries.append(
            ImageRegistryEntry(
                img_id=img_id, pointer=pointer, snippet=snippet, metadata=provenance
            )
        )
        return img_id

    def resolve(self, img_id: int) -> str:
        """Return the pointer stored at registration time."""
        if not isinstance(img_id, int) or not 0 <= img_id < len(self.entries):
            raise UnknownImageError(
                f"img_id={img_id!r} is not registered (valid ids: 0..{len(self.entries) - 1})"
            )
        return self.entries[img_id].pointer

    def lineage(self, img_id: int) -> list[int]:
        """Ids from the parentless root down to ``img_id`` along parent links."""
        if not isinstance(img_id, int) or not 0 <= img_id < len(self.entries):
            raise UnknownImageError(f"img_id={img_id!r} is not registered")
        chain: list[int] = []
        cur: int | None = img_id
        while cur is not None:
            chain.append(cur)
            cur = self.entries[cur].metadata.parent
        chain.reverse()
        return chain

    def render_table(self, snippet_width: int = 80) -> str:
        """Compact agent-facing table: id, snippet, provenance. No pointers."""
        lines = ["img_id | snippet | metadata"]
        for e in self.entries:
            snippet = e.snippet
            if len(snippet) > snippet_width:
                snippet = snippet[: snippet_width - 1] + "…"
            lines.append(f"{e.img_id} | {snippet} | {e.metadata.label()}")
        return "\n".join(lines)

    def to_json(self) -> list[dict]:
        return [
            {
                "img_id": e.img_id,
                "pointer": e.pointer,
                "snippet": e.snippet,
                "metadata": {
                    "producing_tool": e.metadata.producing_tool,
                    "parent": e.metadata.parent,
                    "params_digest": e.metadata.params_digest,
                },
            }
            for e in self.entries
        ]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")


def content_address(data: bytes, suffix: str = ".png") -> str:
    """Stable filename for image bytes, so reruns land on identical pointers."""
    return hashlib.sha256(data).hexdigest()[:16] + suffix


def persist_image(data: bytes, image_dir: str | Path, suffix: str = ".png") -> str:
    """Write image bytes under ``image_dir`` and return the relative pointer."""
    name = content_address(data, suffix)
    directory = Path(image_dir)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / name
    if not target.exists():
        target.write_bytes(data)
    return f"{directory.name}/{name}"
