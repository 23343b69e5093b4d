"""Child-process entry point: executes one untrusted snippet and exits.

Invoked as ``python runner.py <workdir>``. The work directory holds
request.json ({code, image_path?, output_format}); saved images land back
in the work directory as out_NNN.<ext>. This module is deliberately
standalone (stdlib + preloads only) so it can run outside the package.
"""
from __future__ import annotations

import json
import resource
import socket
import sys
import traceback
from pathlib import Path

MEMORY_LIMIT_BYTES = 1 << 30  # 1 GiB address space per snippet


def _block_network() -> None:
    def _refuse(*args, **kwargs):
        raise OSError("network access is disabled inside the sandbox")

    socket.socket = _refuse  # type: ignore[misc]
    socket.create_connection = _refuse  # type: ignore[assignment]
    socket.getaddrinfo = _refuse  # type: ignore[assignment]


def _apply_limits(cpu_seconds: int) -> None:
    resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
    try:
        resource.setrlimit(resource.RLIMIT_AS, (MEMORY_LIMIT_BYTES, MEMORY_LIMIT_BYTES))
    except ValueError:
        pass  # some kernels refuse lowering below current usage


def main() -> int:
    workdir = Path(sys.argv[1])
    request = json.loads((workdir / "request.json").read_text(encoding="utf-8"))
    code = request["code"]
    image_path = request.get("image_path")
    output_format = (request.get("output_format") or "PNG").upper()

    # Imports happen before the memory ceiling so the preloads fit.
    from PIL import Image, ImageDraw, ImageEnhance, ImageFilter, ImageOps  # noqa: F401
    import numpy as np

    _apply_limits(int(request.get("cpu_seconds", 30)))
    _block_network()

    saved = {"count": 0}
    ext = "jpg" if output_format == "JPEG" else "png"

    def load_image():
        if image_path is None:
            raise ValueError("no image was attached to this request")
        return Image.open(image_path)

    def save_image(img):
        if output_format == "JPEG" and img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        target = workdir / f"out_{saved['count']:03d}.{ext}"
        img.save(target, format=output_format)
        saved["count"] += 1
        return str(target)

    def to_numpy(img, mode: str = "RGB"):
        return np.asarray(img.convert(mode))

    env = {
        "__name__": "__main__",
        "Image": Image,
        "ImageOps": ImageOps,
        "ImageEnhance": ImageEnhance,
        "ImageDraw": ImageDraw,
        "ImageFilter": ImageFilter,
        "np": np,
        "numpy": np,
        "load_image": load_image,
        "save_image": save_image,
        "to_numpy": to_numpy,
    }
    try:
        exec(compile(code, "<snippet>", "exec"), env)  # noqa: S102 - that is the job
    except BaseException:
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
