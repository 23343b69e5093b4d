from __future__ import annotations

import pytest

from hopbench.providers import FlakyProvider, StaticProviders
from hopbench.tools import (
    ALL_TOOLS,
    classify_image_code,
    dispatch,
    tool_descriptions,
    web_text_search,
)
from hopbench.turns import ObservationKind, ToolCall
from tests.conftest import MockSandbox, make_context


def twelve_hits(query="q"):
    return {
        query: [
            {"title": f"t{i}", "excerpt": f"e{i}", "url": f"https://r.example/{i}"}
            for i in range(12)
        ]
    }


class TestDispatchRouting:
    def test_unknown_tool_lists_the_nine_names(self, tmp_path):
        ctx = make_context(tmp_path)
        obs = dispatch(ToolCall("Search", {"queries": ["x"]}), ctx)
        assert obs.kind is ObservationKind.ERROR
        for name in ALL_TOOLS:
            assert name in obs.error_detail
        assert len(ALL_TOOLS) == 9

    def test_valid_visit_via_mock(self, tmp_path):
        static = StaticProviders(pages={"https://p.example/a": "body text"})
        ctx = make_context(tmp_path, static)
        obs = dispatch(
            ToolCall("Visit", {"url": "https://p.example/a", "goal": "find facts"}), ctx
        )
        assert obs.kind is ObservationKind.TEXT
        assert "body text" in obs.text

    def test_disabled_tool_rejected(self, tmp_path):
        static = StaticProviders(text_results=twelve_hits())
        ctx = make_context(tmp_path, static, enabled_tools=frozenset({"Visit"}))
        obs = dispatch(ToolCall("Web Text Search", {"queries": ["q"]}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "disabled" in obs.error_detail

    def test_missing_required_argument(self, tmp_path):
        ctx = make_context(tmp_path)
        obs = dispatch(ToolCall("Visit", {"url": "https://p.example/a"}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "goal" in obs.error_detail


class TestWebTextSearch:
    def test_caps_at_ten_results(self, tmp_path):
        static = StaticProviders(text_results=twelve_hits())
        ctx = make_context(tmp_path, static)
        obs = dispatch(ToolCall("Web Text Search", {"queries": ["q"]}), ctx)
        assert obs.kind is ObservationKind.TEXT
        assert len(obs.results[0]["results"]) == 10
        assert "t9" in obs.text and "t10" not in obs.text

    def test_two_queries_keep_input_order(self, tmp_path):
        static = StaticProviders(
            text_results={
                "first": [{"title": "A", "excerpt": "a", "url": "u1"}],
                "second": [{"title": "B", "excerpt": "b", "url": "u2"}],
            }
        )
        ctx = make_context(tmp_path, static)
        obs = dispatch(ToolCall("Web Text Search", {"queries": ["first", "second"]}), ctx)
        assert obs.text.index('query 1: "first"') < obs.text.index('query 2: "second"')

    def test_query_alias_accepted(self, tmp_path):
        static = StaticProviders(text_results=twelve_hits())
        ctx = make_context(tmp_path, static)
        obs = dispatch(ToolCall("Web Text Search", {"query": ["q"]}), ctx)
        assert obs.kind is ObservationKind.TEXT

    def test_empty_query_list_rejected(self, tmp_path):
        ctx = make_context(tmp_path)
        with pytest.raises(ValueError):
            web_text_search([], ctx.providers)

    def test_repeated_429_becomes_error_with_advice(self, tmp_path):
        flaky = FlakyProvider(StaticProviders(text_results=twelve_hits()), failures=5)
        ctx = make_context(tmp_path, flaky)
        obs = dispatch(ToolCall("Web Text Search", {"queries": ["q"]}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "429" in obs.error_detail
        assert "retry" in obs.error_detail.lower()

    def test_single_transient_failure_is_retried(self, tmp_path):
        flaky = FlakyProvider(StaticProviders(text_results=twelve_hits()), failures=1)
        ctx = make_context(tmp_path, flaky)
        obs = dispatch(ToolCall("Web Text Search", {"queries": ["q"]}), ctx)
        assert obs.kind is ObservationKind.TEXT


def image_results_for(pointer: str, n: int = 8):
    return {
        pointer: [
            {
                "title": f"match {i}",
                "url": f"https://page.example/{i}",
                "thumbnail": f"https://thumb.example/{i}.png",
            }
            for i in range(n)
        ]
    }


def thumb_bytes(n: int = 8):
    return {f"https://thumb.example/{i}.png": f"THUMB{i}".encode() for i in range(n)}


class TestWebImageSearch:
    def test_caps_at_five_and_registers_thumbnails(self, tmp_path):
        static = StaticProviders(
            image_results=image_results_for("input.png"), images=thumb_bytes()
        )
        ctx = make_context(tmp_path, static)
        obs = dispatch(ToolCall("Web Image Search", {"image_ids": [0]}), ctx)
        assert obs.kind is ObservationKind.IMAGES
        assert len(obs.results[0]["results"]) == 5
        assert len(obs.images) == 5
        assert len(ctx.registry) == 6  # input + five thumbnails
        entry = ctx.registry.entries[1]
        assert entry.metadata.producing_tool == "Web Image Search"
        assert entry.metadata.parent == 0

    def test_unknown_img_id_is_hallucinated_reference(self, tmp_path):
        ctx = make_context(tmp_path, StaticProviders())
        obs = dispatch(ToolCall("Web Image Search", {"image_ids": [99]}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "hallucinated" in obs.error_detail

    def test_empty_result_set_is_explained(self, tmp_path):
        ctx = make_context(tmp_path, StaticProviders())
        obs = dispatch(ToolCall("Web Image Search", {"image_ids": [0]}), ctx)
        assert obs.kind is ObservationKind.IMAGES
        assert obs.images == []
        assert "no matching images" in obs.text

    def test_second_use_on_same_image_hits_usage_limit(self, tmp_path):
        static = StaticProviders(
            image_results=image_results_for("input.png"), images=thumb_bytes()
        )
        ctx = make_context(tmp_path, static)
        first = dispatch(ToolCall("Web Image Search", {"image_ids": [0]}), ctx)
        assert first.kind is ObservationKind.IMAGES
        second = dispatch(ToolCall("Web Image Search", {"image_ids": [0]}), ctx)
        assert second.kind is ObservationKind.ERROR
        assert "once" in second.error_detail

    def test_image_urls_alias_accepted(self, tmp_path):
        static = StaticProviders(
            image_results=image_results_for("input.png"), images=thumb_bytes()
        )
        ctx = make_context(tmp_path, static)
        obs = dispatch(ToolCall("Web Image Search", {"image_urls": [0]}), ctx)
        assert obs.kind is ObservationKind.IMAGES


class TestVisit:
    def test_goal_conditioned_summary_with_summarizer(self, tmp_path):
        from hopbench.models import ScriptedModel

        static = StaticProviders(
            pages={"https://bio.example/person": "Long biography. Elected in 1869. More."}
        )
        summarizer = ScriptedModel(["He was elected a Fellow in 1869."])
        ctx = make_context(tmp_path, static, summarizer=summarizer)
        obs = dispatch(
            ToolCall("Visit", {"url": "https://bio.example/person", "goal": "election year"}),
            ctx,
        )
        assert "1869" in obs.text
        assert "election year" in summarizer.calls[0]

    def test_404_page_reports_status(self, tmp_path):
        ctx = make_context(tmp_path, StaticProviders())
        obs = dispatch(
            ToolCall("Visit", {"url": "https://gone.example/x", "goal": "g"}), ctx
        )
        assert obs.kind is ObservationKind.ERROR
        assert "404" in obs.error_detail

    def test_empty_goal_is_a_precondition_error(self, tmp_path):
        ctx = make_context(tmp_path, StaticProviders(pages={"https://a.example/": "x"}))
        obs = dispatch(ToolCall("Visit", {"url": "https://a.example/", "goal": "  "}), ctx)
        assert obs.kind is ObservationKind.ERROR

    def test_summary_respects_length_limit(self, tmp_path):
        from hopbench.tools import PolicyLimits

        static = StaticProviders(pages={"https://long.example/": "z" * 5000})
        ctx = make_context(tmp_path, static)
        ctx.limits = PolicyLimits(visit_summary_limit=100)
        obs = dispatch(ToolCall("Visit", {"url": "https://long.example/", "goal": "g"}), ctx)
        assert len(obs.results[0]["summary"]) <= 100


class TestCodeInterpreter:
    def test_report_comes_back(self, tmp_path):
        sandbox = MockSandbox(reports={"print(2+3)": "5"})
        ctx = make_context(tmp_path, sandbox=sandbox)
        obs = dispatch(ToolCall("Code Interpreter", {"code": "print(2+3)"}), ctx)
        assert obs.kind is ObservationKind.REPORT
        assert obs.text == "5"
        assert sandbox.requests[0]["image_pointer"] is None

    def test_timeout_surfaces_as_error(self, tmp_path):
        class TimeoutSandbox:
            def execute(self, code, image_pointer=None, timeout_s=None, output_format=None):
                return {"status": "Timeout", "outputs": [], "stderr": "", "duration_ms": 2000}

        ctx = make_context(tmp_path, sandbox=TimeoutSandbox())
        obs = dispatch(ToolCall("Code Interpreter", {"code": "while True: pass"}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "timed out" in obs.error_detail

    def test_no_sandbox_configured(self, tmp_path):
        ctx = make_context(tmp_path)
        obs = dispatch(ToolCall("Code Interpreter", {"code": "print(1)"}), ctx)
        assert obs.kind is ObservationKind.ERROR


class TestImageTools:
    def test_crop_registers_output_with_lineage(self, tmp_path, mock_sandbox):
        ctx = make_context(tmp_path, sandbox=mock_sandbox)
        code = "img = load_image()\nout = img.crop((0, 0, 10, 10))\nsave_image(out)"
        obs = dispatch(ToolCall("Crop", {"image_id": 0, "code": code}), ctx)
        assert obs.kind is ObservationKind.IMAGES
        assert len(obs.images) == 1
        entry = ctx.registry.entries[obs.images[0].img_id]
        assert entry.metadata.producing_tool == "Crop"
        assert entry.metadata.parent == 0
        assert ctx.registry.lineage(obs.images[0].img_id) == [0, obs.images[0].img_id]

    def test_analysis_report_passthrough(self, tmp_path):
        sandbox = MockSandbox(reports={"mean_rgb": '{"mean_rgb": [128, 128, 128]}'})
        ctx = make_context(tmp_path, sandbox=sandbox)
        code = "import json\narr = to_numpy(load_image(), mode='RGB')\nprint(json.dumps({'mean_rgb': [128,128,128]}))"
        obs = dispatch(ToolCall("Pixel Analysis", {"image_id": 0, "code": code}), ctx)
        assert obs.kind is ObservationKind.REPORT
        assert "128" in obs.text

    def test_generic_alias_attributes_to_primitive(self, tmp_path, mock_sandbox):
        ctx = make_context(tmp_path, sandbox=mock_sandbox)
        code = "img = load_image()\nout = img.crop((1, 1, 5, 5))\nsave_image(out)"
        obs = dispatch(ToolCall("image_processor", {"image_id": 0, "code": code}), ctx)
        assert obs.kind is ObservationKind.IMAGES
        assert ctx.registry.entries[obs.images[0].img_id].metadata.producing_tool == "Crop"

    def test_image_url_argument_tolerated(self, tmp_path, mock_sandbox):
        ctx = make_context(tmp_path, sandbox=mock_sandbox)
        code = "img = load_image()\nsave_image(img.crop((0, 0, 2, 2)))"
        obs = dispatch(
            ToolCall(
                "image_processor",
                {"image_url": "input.png", "code": code, "out_format": "PNG"},
            ),
            ctx,
        )
        assert obs.kind is ObservationKind.IMAGES
        # input.png matches the registered input pointer, so lineage holds.
        assert ctx.registry.entries[obs.images[0].img_id].metadata.parent == 0

    def test_unresolvable_image_id(self, tmp_path, mock_sandbox):
        ctx = make_context(tmp_path, sandbox=mock_sandbox)
        obs = dispatch(ToolCall("Crop", {"image_id": 7, "code": "save_image(load_image())"}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "hallucinated" in obs.error_detail

    def test_sandbox_error_exit_reports_stderr(self, tmp_path):
        class FailingSandbox:
            def execute(self, code, image_pointer=None, timeout_s=None, output_format=None):
                return {
                    "status": "ErrorExit",
                    "outputs": [],
                    "stderr": "Traceback: NameError",
                    "duration_ms": 3,
                }

        ctx = make_context(tmp_path, sandbox=FailingSandbox())
        obs = dispatch(ToolCall("Rotate", {"image_id": 0, "code": "save_image(x)"}), ctx)
        assert obs.kind is ObservationKind.ERROR
        assert "NameError" in obs.error_detail


class TestCodeClassification:
    @pytest.mark.parametrize(
        "code,expected",
        [
            ("out = img.crop((0,0,1,1))\nsave_image(out)", "Crop"),
            ("out = img.rotate(90, expand=True)\nsave_image(out)", "Rotate"),
            ("from PIL import ImageDraw\ndraw.line([(0,0),(1,1)])\nsave_image(img)", "Auxiliary Lines"),
            ("out = img.resize((2*W, 2*H))\nsave_image(out)", "Local Super-Resolution"),
            ("arr = to_numpy(img, 'RGB')\nprint(arr.mean())", "Pixel Analysis"),
        ],
    )
    def test_each_primitive_detected(self, code, expected):
        assert classify_image_code(code) == expected


def test_tool_descriptions_cover_all_names():
    text = tool_descriptions()
    for name in ALL_TOOLS:
        assert name in text
