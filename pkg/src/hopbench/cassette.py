"""JSON cassettes: record/replay for every nondeterministic dependency.

A cassette is a JSON array of {digest, request, response} entries keyed by
a digest of the canonical request. In replay mode a missing digest is an
error, never a silent live call, so replayed batches are bit-reproducible.
"""
from __future__ import annotations

import hashlib
import json
import threading
from enum import Enum
from pathlib import Path
from typing import Any, Callable


class CassetteMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class ReplayMissError(KeyError):
    """Replay mode hit a request that was never recorded."""


def request_digest(kind: str, payload: dict[str, Any]) -> str:
    canon = json.dumps(
        {"kind": kind, "request": payload}, sort_keys=True, ensure_ascii=False
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class CassetteSession:
    """One cassette file plus a mode; safe for concurrent callers."""

    def __init__(self, path: str | Path | None, mode: CassetteMode = CassetteMode.LIVE):
        self.path = Path(path) if path is not None else None
        self.mode = mode
        self._entries: dict[str, Any] = {}
        self._lock = threading.Lock()
        if self.mode is CassetteMode.REPLAY:
            if self.path is None or not self.path.exists():
                raise FileNotFoundError(f"replay mode requires a cassette file: {self.path}")
            self._load()
        elif self.mode is CassetteMode.RECORD and self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        data = json.loads(self.path.read_text(encoding="utf-8"))
        for entry in data:
            self._entries[entry["digest"]] = entry["response"]

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        rows = [
            {"digest": digest, "response": response}
            for digest, response in sorted(self._entries.items())
        ]
        self.path.write_text(json.dumps(rows, indent=2, ensure_ascii=False), encoding="utf-8")

    def call(self, kind: str, payload: dict[str, Any], live: Callable[[], Any]) -> Any:
        """Route one request through the cassette according to the mode."""
        if self.mode is CassetteMode.LIVE:
            return live()
        digest = request_digest(kind, payload)
        with self._lock:
            if digest in self._entries:
                return json.loads(json.dumps(self._entries[digest]))
        if self.mode is CassetteMode.REPLAY:
            raise ReplayMissError(
                f"no recorded response for {kind} request digest {digest[:12]}…"
            )
        response = live()
        with self._lock:
            self._entries[digest] = json.loads(json.dumps(response))
        return response


def null_session() -> CassetteSession:
    return CassetteSession(None, CassetteMode.LIVE)
