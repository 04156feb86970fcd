import json
from pathlib import Path

import pytest

from reportgen.cli import main, resolve_config, build_parser
from reportgen.config import ConfigError, RunConfig, load_config_file

from conftest import THREE_SECTIONS, agentic_script, decomposed_rules, make_text
from reportgen.corpus import parse_template


@pytest.fixture
def workspace(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    docs = []
    for i in range(2):
        (corpus / f"c{i}.txt").write_text(make_text(2000, seed=i), encoding="utf-8")
        (corpus / f"c{i}.json").write_text('{"revenue": 23.5, "eps": 1.94}', encoding="utf-8")
        docs.append({"doc_id": f"C{i}", "company": "C", "year": 2024, "quarter": 3,
                     "transcript": f"c{i}.txt", "statement": f"c{i}.json"})
    (corpus / "manifest.json").write_text(json.dumps({"documents": docs}), encoding="utf-8")
    (tmp_path / "template.md").write_text(THREE_SECTIONS, encoding="utf-8")
    template = parse_template(THREE_SECTIONS)
    rules = decomposed_rules(2) + agentic_script(template) + [
        {"tag": "reflect_revise", "response": "Revised."},
        {"tag": "judge_sentence", "response": "YES"},
        {"tag": "judge_geval", "response": "Score: 4"},
    ]
    (tmp_path / "stub.json").write_text(json.dumps({"rules": rules, "embedding_dim": 32}), encoding="utf-8")
    (tmp_path / "loop.json").write_text(json.dumps({"rules": [
        {"tag": "assistant", "response": "Still thinking."}]}), encoding="utf-8")
    return tmp_path


def gen(ws, *extra, stub="stub.json"):
    return main(["generate", "--corpus", str(ws / "corpus"), "--template", str(ws / "template.md"),
                 "--stub", str(ws / stub), "--out", str(ws / "out"), *extra])


def run_dirs(ws):
    return sorted(p for p in (ws / "out").iterdir() if p.is_dir())


class TestIngest:
    def test_counts(self, workspace, capsys):
        assert main(["ingest", "--corpus", str(workspace / "corpus")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert (summary["docs"], summary["chunks"], summary["statements"]) == (2, 6, 2)
        assert len((workspace / "corpus" / "chunks.jsonl").read_text().splitlines()) == 6

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["ingest", "--corpus", str(tmp_path / "empty")]) == 1
        assert "empty" in capsys.readouterr().err

    def test_malformed_statement(self, workspace, capsys):
        (workspace / "corpus" / "c1.json").write_text("{oops", encoding="utf-8")
        assert main(["ingest", "--corpus", str(workspace / "corpus")]) == 1
        assert "c1.json" in capsys.readouterr().err


class TestGenerate:
    def test_decomposed(self, workspace):
        assert gen(workspace, "--method", "decomposed") == 0
        (rd,) = run_dirs(workspace)
        md = (rd / "report.md").read_text()
        assert [l for l in md.splitlines() if l.startswith("#")] == ["# Financial Overview", "# Business Segments", "# Outlook"]
        for name in ("config.json", "template.md", "report.json", "provenance.json", "run.json"):
            assert (rd / name).exists()
        record = json.loads((rd / "run.json").read_text())
        assert record["status"] == "ok" and record["exchanges"]
        assert json.loads((rd / "config.json").read_text())["top_n"] == 3

    def test_agentic_with_reflection(self, workspace):
        assert gen(workspace, "--method", "agentic", "--self-reflect") == 0
        (rd,) = run_dirs(workspace)
        assert json.loads((rd / "report.json").read_text())["tag"] == "agentic+self_reflect"
        assert (rd / "messages.jsonl").exists()

    def test_agentic_incomplete(self, workspace, capsys):
        assert gen(workspace, "--method", "agentic", "--max-turns", "1", stub="loop.json") == 1
        assert "no final report" in capsys.readouterr().err
        (rd,) = run_dirs(workspace)
        record = json.loads((rd / "run.json").read_text())
        assert record["status"] == "failed" and "IncompleteRunError" in record["error"]
        assert (rd / "messages.jsonl").exists() and not (rd / "report.md").exists()

    def test_rerun_byte_identical_and_cached(self, workspace):
        assert gen(workspace) == 0
        lines_before = len((workspace / "out" / "cache.jsonl").read_text().splitlines())
        assert gen(workspace) == 0
        a, b = run_dirs(workspace)
        assert (a / "report.md").read_bytes() == (b / "report.md").read_bytes()
        assert len((workspace / "out" / "cache.jsonl").read_text().splitlines()) == lines_before
        assert all(e["cached"] for e in json.loads((b / "run.json").read_text())["exchanges"])

    def test_render_replays(self, workspace):
        assert gen(workspace, "--method", "agentic") == 0
        (rd,) = run_dirs(workspace)
        original = (rd / "report.md").read_bytes()
        (rd / "report.md").unlink()
        (rd / "report.json").unlink()
        assert main(["render", str(rd)]) == 0
        assert (rd / "report.md").read_bytes() == original


class TestEvaluate:
    def test_self_reference_and_all_yes(self, workspace):
        assert gen(workspace) == 0
        (rd,) = run_dirs(workspace)
        assert main(["evaluate", str(rd), "--stub", str(workspace / "stub.json"), "--out", str(workspace / "out"),
                     "--reference", str(rd / "report.md"), "--rouge", "--bertscore"]) == 0
        ev = json.loads((rd / "eval.json").read_text())
        for m in ("rouge1", "rouge2", "rougeL"):
            assert ev["reference"][m]["f"] == pytest.approx(1.0)
        assert ev["reference"]["bertscore"]["f"] == pytest.approx(1.0)
        assert all(c["decomp"]["score"] == 1.0 for c in ev["characteristics"].values())
        assert len(ev["characteristics"]) == 4
        assert (rd / "summary.md").exists()

    def test_rouge_without_reference(self, workspace, capsys):
        assert gen(workspace) == 0
        (rd,) = run_dirs(workspace)
        assert main(["evaluate", str(rd), "--rouge", "--no-judge"]) == 1
        assert "--reference" in capsys.readouterr().err


def synthetic_eval(path: Path, method, adherent, total):
    path.mkdir(parents=True)
    ev = {
        "report_ref": path.name,
        "method": method,
        "characteristics": {"Financial Takeaways": {"decomp": {"adherent": adherent, "total": total}, "geval": 3}},
        "readability": None,
        "reference": {},
    }
    (path / "eval.json").write_text(json.dumps(ev), encoding="utf-8")


class TestCompare:
    def test_known_table(self, tmp_path, capsys):
        synthetic_eval(tmp_path / "a", "agentic", 30, 100)
        synthetic_eval(tmp_path / "b", "decomposed", 50, 100)
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out-dir", str(tmp_path / "cmp")]) == 0
        cmp = json.loads((tmp_path / "cmp" / "compare.json").read_text())
        assert cmp["pooled_chi_square"]["p"] == pytest.approx(0.0039, abs=1e-3)
        assert (tmp_path / "cmp" / "compare.md").exists()

    def test_identical(self, tmp_path):
        synthetic_eval(tmp_path / "a", "x", 30, 100)
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "a"), "--out-dir", str(tmp_path / "cmp")]) == 0
        row = json.loads((tmp_path / "cmp" / "compare.json").read_text())["characteristics"]["Financial Takeaways"]
        assert row["de_delta"] == 0 and row["chi_square"]["p"] == pytest.approx(1.0)

    def test_missing_eval_names_run(self, tmp_path, capsys):
        synthetic_eval(tmp_path / "a", "x", 1, 2)
        (tmp_path / "b").mkdir()
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
        assert str(tmp_path / "b") in capsys.readouterr().err


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("# comment\ntop_n = 5\nchunk-size = 800\nslot_budget = none\n", encoding="utf-8")
        args = build_parser().parse_args(["generate", "--config", str(cfg_file), "--top-n", "7"])
        cfg = resolve_config(args)
        assert (cfg.top_n, cfg.chunk_size, cfg.chunk_overlap, cfg.slot_budget) == (7, 800, 200, None)

    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.top_n, cfg.chunk_size, cfg.chunk_overlap, cfg.method) == (3, 1000, 200, "decomposed")

    def test_credentials_refused(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("api_key = sk-123\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="api_key_env"):
            RunConfig().merged(load_config_file(cfg_file))

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            RunConfig().merged({"top_n": "zero"})
        with pytest.raises(ConfigError):
            RunConfig(method="other")
