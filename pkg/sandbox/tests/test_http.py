"""HTTP surface tests, including the sandbox acceptance criteria."""
from __future__ import annotations

import base64
import io
import json
import time

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from imgsandbox.app import app

client = TestClient(app)


@pytest.fixture
def fixture_100x200(tmp_path):
    # 100 px tall, 200 px wide (PIL sizes are (width, height)).
    path = tmp_path / "scene.png"
    Image.new("RGB", (200, 100), (50, 90, 130)).save(path, format="PNG")
    return str(path)


@pytest.fixture
def solid_gray(tmp_path):
    path = tmp_path / "gray.png"
    Image.new("RGB", (64, 64), (128, 128, 128)).save(path, format="PNG")
    return str(path)


def post_execute(**body):
    response = client.post("/execute", json=body)
    assert response.status_code == 200, response.text
    return response.json()


class TestAcceptance:
    """The sandbox acceptance criteria, driven through POST /execute."""

    def test_crop_geometry_r08_on_100x200(self, fixture_100x200):
        started = time.monotonic()
        code = (
            "img = load_image()\n"
            "out = img.crop((20, 10, 180, 90))\n"  # center box for r=0.8
            "save_image(out)"
        )
        result = post_execute(code=code, image_pointer=fixture_100x200)
        assert result["status"] == "OK"
        (output,) = result["outputs"]
        assert output["kind"] == "image"
        decoded = Image.open(io.BytesIO(base64.b64decode(output["payload"])))
        assert decoded.size == (160, 80)  # 80 px tall, 160 px wide
        assert time.monotonic() - started < 15.0

    def test_solid_gray_mean_rgb(self, solid_gray):
        code = (
            "import json\n"
            "arr = to_numpy(load_image(), mode='RGB')\n"
            "means = arr.reshape(-1, 3).mean(axis=0)\n"
            "print(json.dumps({'mean_rgb': [round(float(v)) for v in means]}))"
        )
        result = post_execute(code=code, image_pointer=solid_gray)
        assert result["status"] == "OK"
        (output,) = result["outputs"]
        assert output["kind"] == "json"
        assert json.loads(output["payload"]) == {"mean_rgb": [128, 128, 128]}

    def test_infinite_loop_times_out_at_two_seconds(self):
        result = post_execute(code="while True: pass", timeout_s=2)
        assert result["status"] == "Timeout"
        assert result["outputs"] == []
        assert 1500 <= result["duration_ms"] <= 2500

    def test_sequential_requests_share_no_state(self):
        first = post_execute(code="leaked_marker = 42\nprint('set')")
        assert first["outputs"][0]["payload"] == "set"
        probe = (
            "try:\n"
            "    print(leaked_marker)\n"
            "except NameError:\n"
            "    print('undefined')"
        )
        second = post_execute(code=probe)
        assert second["status"] == "OK"
        assert second["outputs"][0]["payload"] == "undefined"


class TestExecuteEndpoint:
    def test_validation_errors_are_400(self):
        response = client.post("/execute", json={"code": "   "})
        assert response.status_code == 400
        response = client.post("/execute", json={"code": "print(1)", "timeout_s": 999})
        assert response.status_code == 400

    def test_unfetchable_image_is_400(self):
        response = client.post(
            "/execute", json={"code": "print(1)", "image_pointer": "/missing.png"}
        )
        assert response.status_code == 400

    def test_error_exit_passes_through(self):
        result = post_execute(code="1 / 0")
        assert result["status"] == "ErrorExit"
        assert "ZeroDivisionError" in result["stderr"]

    def test_image_payload_bytes_are_exactly_what_was_saved(self, fixture_100x200):
        code = "save_image(load_image())"
        result = post_execute(code=code, image_pointer=fixture_100x200)
        payload = base64.b64decode(result["outputs"][0]["payload"])
        assert payload.startswith(b"\x89PNG")
        decoded = Image.open(io.BytesIO(payload))
        assert decoded.size == (200, 100)


class TestHealth:
    def test_health_reports_ok_and_versions(self):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert set(body["helpers"]) == {"python", "pillow", "numpy"}

    def test_health_is_fast_even_after_work(self, solid_gray):
        post_execute(code="print('warm')", image_pointer=solid_gray)
        started = time.monotonic()
        response = client.get("/health")
        assert response.status_code == 200
        assert time.monotonic() - started < 1.0
