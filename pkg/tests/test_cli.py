import json
from pathlib import Path

import pytest

from superprompt.cli import main

SAMPLE = str(Path(__file__).parent / "data" / "sample.jsonl")


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


class TestCost:
    def test_table(self, capsys):
        code, out = run_cli(capsys, "cost", "--shape", "mpt-7b", "--workload", "nq_like")
        assert code == 0
        assert "naive" in out and "superposition" in out

    def test_csv(self, capsys):
        code, out = run_cli(capsys, "cost", "--out", "csv")
        assert out.splitlines()[0] == "variant,compute_cycles,speedup"

    def test_json(self, capsys):
        code, out = run_cli(capsys, "cost", "--out", "json")
        rows = json.loads(out)
        assert any(r["variant"] == "naive" for r in rows)


class TestServe:
    def test_serve_json(self, capsys):
        code, out = run_cli(
            capsys, "serve", "--dataset", SAMPLE, "--index", "0",
            "--max-new-tokens", "3", "--top-k", "1",
        )
        assert code == 0
        doc = json.loads(out)
        assert len(doc["response_tokens"]) >= 1
        assert doc["selected"]

    def test_serve_left_aligned_rotary(self, capsys):
        code, out = run_cli(
            capsys, "serve", "--dataset", SAMPLE, "--backend", "reference-rotary",
            "--positioning", "left_aligned", "--max-new-tokens", "2",
        )
        assert code == 0
        json.loads(out)

    def test_serve_iterative(self, capsys):
        code, out = run_cli(
            capsys, "serve", "--dataset", SAMPLE, "--index", "1",
            "--iters", "2", "--top-k", "1", "--max-new-tokens", "2",
        )
        doc = json.loads(out)
        assert len(doc["selected"]) == 2

    def test_plan_file(self, capsys, tmp_path):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "positioning": "equilibrium", "saliency": "none", "top_k": 1,
            "factor": None, "iterations": 1, "use_cache": True,
            "parallel_paths": True, "prune": False, "include_prior": True,
            "posterior_threshold": None, "max_new_tokens": 2,
        }))
        code, out = run_cli(
            capsys, "serve", "--dataset", SAMPLE, "--plan", str(plan),
            "--saliency", "none", "--no-prune", "--max-new-tokens", "2",
        )
        doc = json.loads(out)
        assert doc["selected"] == [0, 1, 2]


class TestPreprocess:
    def test_populates_cache_dir(self, capsys, tmp_path):
        cache = tmp_path / "kv"
        code, out = run_cli(
            capsys, "preprocess", "--dataset", SAMPLE, "--cache-dir", str(cache),
        )
        doc = json.loads(out)
        assert doc["examples"] == 3
        assert doc["backend_calls"] > 0
        assert len(list(cache.iterdir())) > 0

        # second run is fully warm
        code, out = run_cli(
            capsys, "preprocess", "--dataset", SAMPLE, "--cache-dir", str(cache),
        )
        assert json.loads(out)["backend_calls"] == 0


class TestEval:
    def test_json_report(self, capsys):
        code, out = run_cli(
            capsys, "eval", "--dataset", SAMPLE, "--max-new-tokens", "2",
        )
        doc = json.loads(out)
        assert doc["counts"]["examples"] == 3
        assert "aggregates" in doc

    def test_csv_report(self, capsys):
        code, out = run_cli(
            capsys, "eval", "--dataset", SAMPLE, "--out", "csv",
            "--max-new-tokens", "2", "--limit", "2",
        )
        assert len(out.strip().splitlines()) == 3


class TestSweep:
    def test_sweep_k(self, capsys):
        code, out = run_cli(
            capsys, "sweep", "--dataset", SAMPLE, "--param", "top_k",
            "--values", "1,2", "--limit", "1", "--max-new-tokens", "2",
        )
        doc = json.loads(out)
        assert [p["value"] for p in doc["points"]] == [1, 2]

    def test_sweep_factor_classical_point(self, capsys):
        code, out = run_cli(
            capsys, "sweep", "--dataset", SAMPLE, "--param", "factor",
            "--values", "1,3", "--limit", "1", "--saliency", "none",
            "--no-prune", "--max-new-tokens", "2",
        )
        doc = json.loads(out)
        assert len(doc["points"]) == 2
