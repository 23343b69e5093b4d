from __future__ import annotations

import json

import pytest

from hopbench.cli import main
from tests.conftest import L1_INSTANCE


@pytest.fixture
def demo_setup(tmp_path):
    instances = tmp_path / "instances.jsonl"
    instances.write_text(json.dumps(L1_INSTANCE) + "\n", encoding="utf-8")
    script = tmp_path / "model.json"
    script.write_text(
        json.dumps({"outputs": [], "default": "<think>ok</think><answer>Yongzhou</answer>"}),
        encoding="utf-8",
    )
    config = tmp_path / "run.yaml"
    config.write_text(
        "\n".join(
            [
                f"instances: {instances}",
                "policy: agentic",
                f"model: scripted:{script}",
                "budget: 3",
                f"output_dir: {tmp_path / 'run'}",
            ]
        ),
        encoding="utf-8",
    )
    judge_script = tmp_path / "judge.json"
    judge_script.write_text(
        json.dumps(
            {
                "outputs": [],
                "default": "extracted_final_answer: Yongzhou\nreasoning: match\ncorrect: yes\nconfidence: 100%",
            }
        ),
        encoding="utf-8",
    )
    return {"config": config, "run_dir": tmp_path / "run", "judge": judge_script}


def test_run_then_eval_then_report(demo_setup, capsys):
    assert main(["run", "--config", str(demo_setup["config"])]) == 0
    out = capsys.readouterr().out
    assert "1 done" in out

    assert (
        main(
            [
                "eval",
                "--run-dir",
                str(demo_setup["run_dir"]),
                "--judge",
                f"scripted:{demo_setup['judge']}",
            ]
        )
        == 0
    )
    out = capsys.readouterr().out
    assert "pass@1 (micro): 100.0%" in out

    assert (
        main(["report", "--eval-json", str(demo_setup["run_dir"] / "eval.json")]) == 0
    )
    assert "pass@1" in capsys.readouterr().out


def test_rerun_resumes(demo_setup, capsys):
    main(["run", "--config", str(demo_setup["config"])])
    capsys.readouterr()
    main(["run", "--config", str(demo_setup["config"])])
    assert "1 skipped" in capsys.readouterr().out


def test_bad_config_is_exit_code_2(tmp_path, capsys):
    config = tmp_path / "broken.yaml"
    config.write_text("policy: agentic\n", encoding="utf-8")
    assert main(["run", "--config", str(config)]) == 2
    assert "error:" in capsys.readouterr().err


def test_forge_verb_end_to_end(tmp_path, capsys):
    # Record a link-graph cassette, precompute the sampled path, script the
    # generator to answer for exactly that path, then forge via the CLI.
    from hopbench.cassette import CassetteMode, CassetteSession
    from hopbench.forge import EntityGraph, sample_path
    from hopbench.providers import ProviderStack, StaticProviders
    from tests.test_forge import generation_reply

    root_entity = L1_INSTANCE["gold_image_answer"]
    edges = {
        root_entity: ["Hunan", "Xiang River"],
        "Hunan": ["Changsha"],
        "Xiang River": ["Dongting Lake"],
        "Changsha": [],
        "Dongting Lake": [],
    }
    cassette = tmp_path / "links.json"
    session = CassetteSession(cassette, CassetteMode.RECORD)
    graph = EntityGraph(
        provider=ProviderStack(session=session, links=StaticProviders(links=edges))
    )
    seed = 5 * 100003 + L1_INSTANCE["question_id"]
    path = sample_path(graph, root_entity, 2, seed)
    session.save()

    roots = tmp_path / "roots.jsonl"
    roots.write_text(json.dumps(L1_INSTANCE) + "\n", encoding="utf-8")
    generator_script = tmp_path / "generator.json"
    generator_script.write_text(
        json.dumps([generation_reply(path, "Two hidden hops lead from the image to a place.")]),
        encoding="utf-8",
    )
    config = tmp_path / "forge.yaml"
    config.write_text(
        "\n".join(
            [
                f"roots: {roots}",
                "depth: 2",
                "seed: 5",
                f"generator: scripted:{generator_script}",
                f"output_dir: {tmp_path / 'forged'}",
                "cassette:",
                "  mode: replay",
                f"  path: {cassette}",
                "solvability_runs: 0",
            ]
        ),
        encoding="utf-8",
    )
    assert main(["forge", "--config", str(config)]) == 0
    assert "1 accepted" in capsys.readouterr().out
    forged = json.loads((tmp_path / "forged" / "forged.jsonl").read_text().splitlines()[0])
    assert forged["gold_text_answer"] == path.nodes[-1]


def test_tools_override(demo_setup, capsys):
    assert (
        main(
            [
                "run",
                "--config",
                str(demo_setup["config"]),
                "--tools",
                "Visit,Web Text Search",
                "--output-dir",
                str(demo_setup["run_dir"].parent / "run2"),
            ]
        )
        == 0
    )
    manifest = json.loads(
        (demo_setup["run_dir"].parent / "run2" / "manifest.json").read_text()
    )
    assert manifest["policy"] == "agentic"
