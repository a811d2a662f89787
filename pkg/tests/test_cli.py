from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from refer_engine.cli import main
from refer_engine.fixtures import generate_scenario, write_scenario


@pytest.fixture
def runner():
    return CliRunner()


def gen_fixture_dir(tmp_path, template="single_target", seed=1):
    sc = generate_scenario(seed, template)
    write_scenario(sc, tmp_path / "fx")
    return tmp_path / "fx", sc


def config_file(tmp_path, scenario_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "backends": {"mock_scenario": str(scenario_path), "backoff_base": 0.0},
            }
        )
    )
    return path


class TestGenFixture:
    def test_generates_layout(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["gen-fixture", "--template", "single_target", "--seed", "3", "--out", str(tmp_path / "fx")],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "fx" / "frames" / "00000.png").exists()
        assert (tmp_path / "fx" / "gt" / "target_0" / "00000.png").exists()
        assert (tmp_path / "fx" / "scenario.json").exists()
        payload = json.loads(result.output)
        assert payload["frames"] == 10

    def test_bad_template_rejected(self, runner, tmp_path):
        result = runner.invoke(
            main, ["gen-fixture", "--template", "nope", "--seed", "1", "--out", str(tmp_path)]
        )
        assert result.exit_code != 0


class TestRun:
    def test_run_session_writes_outputs(self, runner, tmp_path):
        fx, sc = gen_fixture_dir(tmp_path)
        cfg = config_file(tmp_path, fx / "scenario.json")
        result = runner.invoke(
            main,
            [
                "run",
                "--video", str(fx / "frames"),
                "--query", sc.query,
                "--out", str(tmp_path / "out"),
                "--config", str(cfg),
                "--dump-reflection",
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["accepted"] is True
        assert (tmp_path / "out" / "session.json").exists()
        assert (tmp_path / "out" / "masks" / "target_0" / "00000.png").exists()
        assert (tmp_path / "out" / "masks_rle" / "masklets.json").exists()
        assert (tmp_path / "out" / "overlays" / "00000.png").exists()
        assert (tmp_path / "out" / "reflection_round1.json").exists()

    def test_max_turn_override(self, runner, tmp_path):
        fx, sc = gen_fixture_dir(tmp_path)
        cfg = config_file(tmp_path, fx / "scenario.json")
        result = runner.invoke(
            main,
            [
                "run",
                "--video", str(fx / "frames"),
                "--query", sc.query,
                "--out", str(tmp_path / "out"),
                "--config", str(cfg),
                "--max-turn", "0",
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads((tmp_path / "out" / "session.json").read_text())
        assert doc["config"]["pipeline"]["max_turn"] == 0


class TestEval:
    def test_eval_manifest(self, runner, tmp_path):
        fx, _ = gen_fixture_dir(tmp_path)
        result = runner.invoke(
            main,
            [
                "eval",
                "--manifest", str(fx / "manifest.json"),
                "--out", str(tmp_path / "out"),
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["samples"] == 1
        assert payload["errors"] == 0
        assert payload["mean_jf"] == pytest.approx(1.0)
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["schema"] == "batch-report/1"


class TestConfigLoading:
    def test_toml_config(self, tmp_path):
        from refer_engine.config import load_config

        path = tmp_path / "c.toml"
        path.write_text(
            "[selection]\nn = 8\nk = 3\n[pipeline]\nmax_turn = 2\nmerge = 'all'\n"
        )
        cfg = load_config(path)
        assert cfg.selection.n == 8
        assert cfg.pipeline.max_turn == 2
        assert cfg.pipeline.merge == "all"

    def test_unknown_key_rejected(self, tmp_path):
        from refer_engine.config import load_config

        path = tmp_path / "c.json"
        path.write_text(json.dumps({"selection": {"bogus": 1}}))
        with pytest.raises(ValueError, match="bogus"):
            load_config(path)

    def test_bad_merge_rejected(self):
        from refer_engine.config import PipelineConfig

        with pytest.raises(ValueError):
            PipelineConfig(merge="everything")
