"""Shared fixtures: sample instance lines, a protocol-mock sandbox, helpers."""
from __future__ import annotations

import base64
import hashlib
import json

import pytest

from hopbench.instances import instance_from_json
from hopbench.providers import ProviderStack, StaticProviders
from hopbench.registry import ImageRegistry, Provenance
from hopbench.tools import EpisodeContext

# Transcribed dataset samples: a one-level visual instance and a multi-hop
# instance whose chain ends at the textual gold answer.
L1_INSTANCE = {
    "question_id": 21,
    "prompt": "Identify the dam in which Chinese city through the image.",
    "image": "https://img.example/24.png",
    "gold_image_answer": "Xiangjiang Songjiazhou Hydropower Station Dam in Yongzhou City, Hunan Province",
    "image_solution": "Seen as follow",
    "source": "https://example.com",
}

L2_CHAIN_NODES = [
    {
        "hop": 1,
        "role": "root_from_image",
        "entity": "Jeju Island, South Korea",
        "reasoning": "The image shows roadside volcanic-rock walls, a distinctive cue associated with Jeju Island.",
    },
    {
        "hop": 2,
        "role": "cultural_tradition",
        "entity": "Jeju Haenyeo (women divers) culture",
        "reasoning": "The island tradition described as women diving to forage underwater corresponds to Jeju Haenyeo.",
    },
    {
        "hop": 3,
        "role": "ich_inscription_event",
        "entity": "UNESCO Representative List of the Intangible Cultural Heritage of Humanity (2016, 11.COM)",
        "reasoning": "Jeju Haenyeo was inscribed on the representative list in 2016 at Session 11.COM.",
    },
    {
        "hop": 4,
        "role": "meeting_city_capital",
        "entity": "Addis Ababa",
        "reasoning": "Session 11.COM was held in Addis Ababa, which is a capital city in Africa.",
    },
    {
        "hop": 5,
        "role": "pan_african_org",
        "entity": "African Union (AU) Commission headquarters",
        "reasoning": "Addis Ababa is the headquarters location of the African Union Commission.",
    },
    {
        "hop": 6,
        "role": "predecessor_org",
        "entity": "Organization of African Unity (OAU)",
        "reasoning": "The AU's predecessor organization is the OAU, which was established in Addis Ababa.",
    },
    {
        "hop": 7,
        "role": "gold_answer",
        "entity": "32",
        "reasoning": "When the OAU was founded in Addis Ababa in 1963, it had 32 independent founding member countries.",
    },
]

L2_PROMPT = (
    'Determine which region of South Korea the image is from. There is a tradition '
    'on this island centered around "women\'s diving for food collection," which has '
    'been inscribed in the intangible cultural heritage list of an international '
    'organization. A related resolution for this list was passed at an annual meeting '
    'in the capital city of an African country. This capital is also the headquarters '
    'location of a Pan-African continental organization, and its predecessor '
    'organization was established in the same city. How many independent countries '
    'were founding members when this predecessor organization was established?'
)

L2_INSTANCE = {
    "question_id": 92,
    "prompt": L2_PROMPT,
    "image": "https://img.example/92.png",
    "gold_image_answer": "Jeju Island, South Korea",
    "gold_text_answer": "32",
    "image_source": "https://www.example.com",
    "text_solution": {
        "query": L2_PROMPT,
        "nodes": L2_CHAIN_NODES,
        "gold_answer": "32",
    },
}


@pytest.fixture
def l1_instance():
    return instance_from_json(json.loads(json.dumps(L1_INSTANCE)))


@pytest.fixture
def l2_instance():
    return instance_from_json(json.loads(json.dumps(L2_INSTANCE)))


class MockSandbox:
    """Protocol mock of the execution service.

    Pure function of the request: code with save_image yields one
    deterministic fake image; otherwise a canned or synthesized report.
    """

    def __init__(self, reports: dict[str, str] | None = None):
        self.reports = reports or {}
        self.requests: list[dict] = []

    def execute(self, code, image_pointer=None, timeout_s=None, output_format=None):
        self.requests.append(
            {"code": code, "image_pointer": image_pointer, "timeout_s": timeout_s}
        )
        for marker, report in self.reports.items():
            if marker in code:
                return {
                    "status": "OK",
                    "outputs": [{"kind": "text", "payload": report}],
                    "stderr": "",
                    "duration_ms": 1,
                }
        if "save_image" in code:
            digest = hashlib.sha256(
                f"{code}|{image_pointer}".encode("utf-8")
            ).hexdigest()[:12]
            payload = base64.b64encode(f"IMG:{digest}".encode("ascii")).decode("ascii")
            return {
                "status": "OK",
                "outputs": [{"kind": "image", "payload": payload}],
                "stderr": "",
                "duration_ms": 1,
            }
        return {
            "status": "OK",
            "outputs": [{"kind": "text", "payload": "(no output)"}],
            "stderr": "",
            "duration_ms": 1,
        }


@pytest.fixture
def mock_sandbox():
    return MockSandbox()


def make_context(tmp_path, static: StaticProviders | None = None, sandbox=None, **kwargs):
    registry = ImageRegistry()
    registry.register("input.png", "input image", Provenance("input"))
    providers = ProviderStack(
        text_search=static, image_search=static, reader=static, fetcher=static, links=static
    )
    return EpisodeContext(
        registry=registry,
        providers=providers,
        sandbox=sandbox,
        base_dir=tmp_path,
        **kwargs,
    )
