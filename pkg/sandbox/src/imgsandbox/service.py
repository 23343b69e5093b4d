"""Execution orchestration: one fresh, limited process per request.

The parent validates the request, stages the input image into a scratch
directory, runs runner.py in a subprocess with a hard wall-clock kill,
and packages whatever the snippet saved or printed into the result
shape: {status, outputs: [{kind, payload}], stderr, duration_ms}.
Image payloads are the exact bytes the snippet saved, base64-wrapped.
"""
from __future__ import annotations

import base64
import json
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

RUNNER_PATH = Path(__file__).with_name("runner.py")

DEFAULT_TIMEOUT_S = 20.0
TIMEOUT_CAP_S = 60.0
CODE_SIZE_CAP = 100_000
OUTPUT_FORMATS = ("PNG", "JPEG")


class RequestError(ValueError):
    """Invalid request or unfetchable image; maps to HTTP 400."""


@dataclass
class ExecutionRequest:
    code: str
    image_pointer: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S
    output_format: str = "PNG"

    def validate(self) -> None:
        if not self.code or not self.code.strip():
            raise RequestError("code must be non-empty")
        if len(self.code) > CODE_SIZE_CAP:
            raise RequestError(f"code exceeds the {CODE_SIZE_CAP}-character cap")
        if not 0 < self.timeout_s <= TIMEOUT_CAP_S:
            raise RequestError(f"timeout_s must be in (0, {TIMEOUT_CAP_S}]")
        if self.output_format.upper() not in OUTPUT_FORMATS:
            raise RequestError(f"output_format must be one of {OUTPUT_FORMATS}")


@dataclass
class ExecutionResult:
    status: str  # OK | ErrorExit | Timeout
    outputs: list[dict] = field(default_factory=list)
    stderr: str = ""
    duration_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "outputs": self.outputs,
            "stderr": self.stderr,
            "duration_ms": self.duration_ms,
        }


def _stage_image(pointer: str, workdir: Path) -> str:
    target = workdir / "input.img"
    if pointer.startswith(("http://", "https://")):
        try:
            resp = requests.get(pointer, timeout=30)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise RequestError(f"image fetch failed: {pointer}: {exc}") from exc
        target.write_bytes(resp.content)
    else:
        source = Path(pointer)
        if not source.exists():
            raise RequestError(f"image not found: {pointer}")
        shutil.copyfile(source, target)
    return str(target)


def _collect_outputs(workdir: Path, stdout: str) -> list[dict]:
    outputs: list[dict] = []
    for image_file in sorted(workdir.glob("out_*")):
        payload = base64.b64encode(image_file.read_bytes()).decode("ascii")
        outputs.append({"kind": "image", "payload": payload})
    text = stdout.strip()
    if text:
        kind = "text"
        if text.startswith(("{", "[")):
            try:
                if isinstance(json.loads(text), (dict, list)):
                    kind = "json"
            except ValueError:
                pass
        outputs.append({"kind": kind, "payload": text})
    return outputs


def execute(request: ExecutionRequest) -> ExecutionResult:
    """Run one snippet in a fresh, network-disabled, resource-limited process."""
    request.validate()
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="imgsandbox-") as tmp:
        workdir = Path(tmp)
        image_path = (
            _stage_image(request.image_pointer, workdir)
            if request.image_pointer
            else None
        )
        (workdir / "request.json").write_text(
            json.dumps(
                {
                    "code": request.code,
                    "image_path": image_path,
                    "output_format": request.output_format.upper(),
                    "cpu_seconds": int(request.timeout_s) + 1,
                }
            ),
            encoding="utf-8",
        )
        proc = subprocess.Popen(
            [sys.executable, str(RUNNER_PATH), str(workdir)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=workdir,
            text=True,
        )
        try:
            stdout, stderr = proc.communicate(timeout=request.timeout_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            duration = (time.monotonic() - started) * 1000.0
            return ExecutionResult(
                status="Timeout",
                outputs=[],
                stderr=f"killed after {request.timeout_s}s",
                duration_ms=duration,
            )
        duration = (time.monotonic() - started) * 1000.0
        if proc.returncode != 0:
            return ExecutionResult(
                status="ErrorExit", outputs=[], stderr=stderr, duration_ms=duration
            )
        return ExecutionResult(
            status="OK",
            outputs=_collect_outputs(workdir, stdout),
            stderr=stderr,
            duration_ms=duration,
        )


def helper_versions() -> dict:
    import numpy
    import PIL

    return {
        "python": sys.version.split()[0],
        "pillow": PIL.__version__,
        "numpy": numpy.__version__,
    }
