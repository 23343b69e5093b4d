from __future__ import annotations

import json

import pytest
import requests

from hopbench.cassette import CassetteMode, CassetteSession
from hopbench.models import (
    CassetteModel,
    FailingModel,
    ModelRequest,
    ModelTransportError,
    OpenAICompatModel,
    ScriptedModel,
    scripted_from_file,
)


class DummyResponse:
    def __init__(self, status_code=200, body=None):
        self.status_code = status_code
        self._body = body or {"choices": [{"message": {"content": "reply"}}]}

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"HTTP {self.status_code}")

    def json(self):
        return self._body


class TestScriptedModel:
    def test_plays_outputs_in_order_then_default(self):
        model = ScriptedModel(["a", "b"], default="z")
        assert [model.complete("p") for _ in range(4)] == ["a", "b", "z", "z"]

    def test_exhaustion_without_default_raises(self):
        model = ScriptedModel(["only"])
        model.complete("p")
        with pytest.raises(ModelTransportError):
            model.complete("p")

    def test_loadable_from_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"outputs": ["x"], "default": "d"}))
        model = scripted_from_file(str(path))
        assert model.complete("p") == "x"
        assert model.complete("p") == "d"

    def test_plain_list_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(["one"]))
        assert scripted_from_file(str(path)).complete("p") == "one"


class TestOpenAICompatModel:
    def test_request_shape_and_key_from_env(self, monkeypatch):
        captured = {}

        def fake_post(url, headers=None, json=None, timeout=None):
            captured.update({"url": url, "headers": headers, "json": json})
            return DummyResponse()

        monkeypatch.setattr(requests, "post", fake_post)
        monkeypatch.setenv("MY_KEY", "abc123")
        model = OpenAICompatModel("some-model", api_key_env="MY_KEY")
        out = model.generate(ModelRequest(system="sys", text="hello"))

        assert out == "reply"
        assert captured["url"].endswith("/chat/completions")
        assert captured["headers"]["Authorization"] == "Bearer abc123"
        assert captured["json"]["model"] == "some-model"
        assert captured["json"]["messages"][0] == {"role": "system", "content": "sys"}

    def test_images_become_content_parts(self, monkeypatch):
        captured = {}

        def fake_post(url, headers=None, json=None, timeout=None):
            captured["json"] = json
            return DummyResponse()

        monkeypatch.setattr(requests, "post", fake_post)
        model = OpenAICompatModel("m")
        model.generate(ModelRequest(system="s", text="t", images=["https://img.example/a.png"]))
        content = captured["json"]["messages"][1]["content"]
        assert content[0] == {"type": "text", "text": "t"}
        assert content[1]["type"] == "image_url"

    def test_http_error_is_transport_error(self, monkeypatch):
        monkeypatch.setattr(requests, "post", lambda *a, **k: DummyResponse(status_code=500))
        with pytest.raises(ModelTransportError):
            OpenAICompatModel("m").complete("p")


class TestCassetteModel:
    def test_record_then_replay_without_inner(self, tmp_path):
        tape = tmp_path / "model.json"
        record = CassetteModel(
            CassetteSession(tape, CassetteMode.RECORD), inner=ScriptedModel(["live answer"])
        )
        request = ModelRequest(system="s", text="question")
        assert record.generate(request) == "live answer"
        record.session.save()

        replay = CassetteModel(CassetteSession(tape, CassetteMode.REPLAY), inner=None)
        assert replay.generate(request) == "live answer"

    def test_replay_without_recording_errors(self, tmp_path):
        tape = tmp_path / "model.json"
        CassetteSession(tape, CassetteMode.RECORD).save()
        replay = CassetteModel(CassetteSession(tape, CassetteMode.REPLAY), inner=None)
        from hopbench.cassette import ReplayMissError

        with pytest.raises(ReplayMissError):
            replay.complete("never asked")


def test_failing_model_always_raises():
    with pytest.raises(ModelTransportError):
        FailingModel().generate(ModelRequest(system="s", text="t"))
