"""Model handles: the narrow interface the harness needs from an LLM.

Everything upstream speaks ModelRequest -> text. Scripted models drive
tests and replays; the HTTP client covers OpenAI-compatible chat APIs.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Protocol

import requests


class ModelTransportError(RuntimeError):
    """Transport-level model failure (network, HTTP 5xx, malformed reply)."""


@dataclass
class ModelRequest:
    system: str
    text: str
    images: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"system": self.system, "text": self.text, "images": self.images}


class ChatModel(Protocol):
    def generate(self, request: ModelRequest) -> str: ...


class TextModel(Protocol):
    def complete(self, prompt: str) -> str: ...


class ScriptedModel:
    """Replays a fixed list of outputs; doubles as TextModel and ChatModel.

    ``default`` is returned once the script runs out (handy for
    never-answering scripts); without it, exhaustion raises.
    """

    def __init__(self, outputs: list[str], default: str | None = None):
        self.outputs = list(outputs)
        self.default = default
        self.calls: list[ModelRequest | str] = []
        self._index = 0

    def _next(self) -> str:
        if self._index < len(self.outputs):
            out = self.outputs[self._index]
            self._index += 1
            return out
        if self.default is not None:
            return self.default
        raise ModelTransportError("scripted model exhausted")

    def generate(self, request: ModelRequest) -> str:
        self.calls.append(request)
        return self._next()

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        return self._next()


class FailingModel:
    """Raises on every call; for abort-path tests."""

    def __init__(self, message: str = "injected transport failure"):
        self.message = message

    def generate(self, request: ModelRequest) -> str:
        raise ModelTransportError(self.message)

    def complete(self, prompt: str) -> str:
        raise ModelTransportError(self.message)


class OpenAICompatModel:
    """Minimal chat-completions client for OpenAI-compatible endpoints.

    The API key is read from ``api_key_env`` at call time so secrets never
    live in config files or manifests.
    """

    def __init__(
        self,
        model: str,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = 120.0,
        temperature: float = 0.0,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.temperature = temperature

    def _post(self, messages: list[dict]) -> str:
        key = os.environ.get(self.api_key_env, "")
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {key}"},
                json={
                    "model": self.model,
                    "messages": messages,
                    "temperature": self.temperature,
                },
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ModelTransportError(f"chat completion failed: {exc}") from exc

    def generate(self, request: ModelRequest) -> str:
        content: list[dict] | str
        if request.images:
            content = [{"type": "text", "text": request.text}]
            for pointer in request.images:
                content.append({"type": "image_url", "image_url": {"url": pointer}})
        else:
            content = request.text
        return self._post(
            [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ]
        )

    def complete(self, prompt: str) -> str:
        return self._post([{"role": "user", "content": prompt}])


class CassetteModel:
    """Record/replay wrapper so agentic runs are reproducible offline."""

    def __init__(self, session, inner: ChatModel | None = None):
        # ``session`` is a cassette.CassetteSession; kept untyped to avoid a cycle.
        self.session = session
        self.inner = inner

    def _call(self, kind: str, payload: dict) -> str:
        def live() -> str:
            if self.inner is None:
                raise ModelTransportError("no live model behind cassette")
            if kind == "model.generate":
                return self.inner.generate(
                    ModelRequest(
                        system=payload["system"],
                        text=payload["text"],
                        images=list(payload["images"]),
                    )
                )
            return self.inner.complete(payload["prompt"])

        return self.session.call(kind, payload, live)

    def generate(self, request: ModelRequest) -> str:
        return self._call("model.generate", request.to_json())

    def complete(self, prompt: str) -> str:
        return self._call("model.complete", {"prompt": prompt})


def scripted_from_file(path: str) -> ScriptedModel:
    """Load a ScriptedModel from a JSON file: list of outputs or {outputs, default}."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        return ScriptedModel(data)
    return ScriptedModel(data["outputs"], default=data.get("default"))
