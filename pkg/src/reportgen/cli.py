"""reportgen command line: ingest, generate, evaluate, compare, render."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import agentic, decomposed
from .config import ConfigError, RunConfig, load_config_file
from .corpus import Corpus, CorpusError, load_corpus, parse_template
from .evaluation import (
    EvaluationResult,
    compare_methods,
    comparison_markdown,
    evaluate_report,
    load_characteristics,
    report_sentences,
)
from .gateway import Gateway, GatewayError, HTTPBackend, ResponseCache, ScriptedBackend, TokenBucket
from .report import GeneratedReport, self_reflect

log = logging.getLogger("reportgen")


class CLIError(RuntimeError):
    pass


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    _write(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# shared plumbing


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, then the config file, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = cfg.merged(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    return cfg.merged(flags)


def build_gateway(cfg: RunConfig, cache_path: Path | None) -> Gateway:
    if cfg.stub:
        backend = ScriptedBackend.from_file(cfg.stub)
    else:
        backend = HTTPBackend(cfg.chat_endpoint, cfg.embed_endpoint, api_key_env=cfg.api_key_env)
    return Gateway(
        backend,
        model=cfg.chat_model,
        embed_model=cfg.embed_model,
        cache=ResponseCache(cache_path) if cfg.cache else None,
        max_retries=cfg.max_retries,
        rate_limiter=TokenBucket(cfg.rate_limit) if cfg.rate_limit > 0 else None,
        slot_budget=cfg.slot_budget,
    )


def _corpus_digest(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for t in corpus.transcripts:
        h.update(t.doc_id.encode())
        h.update(hashlib.sha256(t.text.encode()).digest())
        if t.doc_id in corpus.statements:
            h.update(corpus.statements[t.doc_id].to_json().encode())
    return h.hexdigest()


def make_run_id(cfg: RunConfig, corpus: Corpus, template_text: str) -> str:
    payload = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    h = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
    h.update(_corpus_digest(corpus).encode())
    h.update(template_text.encode())
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    return f"{stamp}-{h.hexdigest()[:10]}"


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.corpus:
        raise CLIError("--corpus is required")
    corpus = load_corpus(cfg.corpus)
    chunks = corpus.chunks(cfg.chunking)
    out = Path(args.chunks_out) if args.chunks_out else Path(cfg.corpus) / "chunks.jsonl"
    with open(out, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(json.dumps(c.to_dict(), ensure_ascii=False) + "\n")
    summary = {
        "docs": len(corpus.transcripts),
        "chunks": len(chunks),
        "statements": len(corpus.statements),
        "chunk_size": cfg.chunk_size,
        "chunk_overlap": cfg.chunk_overlap,
        "chunk_cache": str(out),
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.corpus or not cfg.template:
        raise CLIError("--corpus and --template are required")
    template_text = Path(cfg.template).read_text(encoding="utf-8")
    template = parse_template(template_text, Path(cfg.template).stem)
    corpus = load_corpus(cfg.corpus)
    if cfg.doc_ids:
        corpus = corpus.select(cfg.doc_ids)
    out_root = Path(cfg.out)
    out_root.mkdir(parents=True, exist_ok=True)
    gateway = build_gateway(cfg, out_root / "cache.jsonl")
    run_id = make_run_id(cfg, corpus, template_text)
    run_dir = out_root / run_id
    if run_dir.exists():
        raise CLIError(f"run directory {run_dir} already exists")
    run_dir.mkdir()
    _write_json(run_dir / "config.json", cfg.to_dict())
    _write(run_dir / "template.md", template_text)

    record: dict = {"run_id": run_id, "config": cfg.to_dict(), "status": "running"}
    transcript: list = []
    provenance: dict = {}
    try:
        if cfg.method == "decomposed":
            sqs = decomposed.load_manual_subqueries(cfg.subqueries, template) if cfg.subqueries else None
            run = decomposed.run_decomposed(
                template,
                corpus,
                gateway,
                top_n=cfg.top_n,
                parallelism=cfg.parallelism,
                subqueries=sqs,
                chunking=cfg.chunking,
                run_id=run_id,
            )
            report, provenance = run.report, run.provenance()
        else:
            try:
                run = agentic.run_agentic(
                    template,
                    corpus,
                    gateway,
                    top_n=cfg.top_n,
                    max_turns=cfg.max_turns,
                    chunking=cfg.chunking,
                    run_id=run_id,
                )
            except agentic.AgenticRunError as exc:
                transcript = exc.transcript
                raise
            transcript = run.transcript
            report, provenance = run.report, run.provenance()
        if cfg.self_reflect:
            chars = load_characteristics(cfg.characteristics) if cfg.characteristics else load_characteristics()
            report = self_reflect(report, chars, gateway)
            provenance["method"] = report.tag
    except Exception as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _finish_run(run_dir, record, gateway, transcript)
        raise CLIError(f"generation failed (run record kept in {run_dir}): {exc}") from exc

    _write(run_dir / "report.md", report.to_markdown(template))
    _write_json(run_dir / "report.json", report.to_dict())
    provenance["exchange_ids"] = [e.exchange_id for e in gateway.exchanges]
    _write_json(run_dir / "provenance.json", provenance)
    record.update(status="ok", report=report.to_dict())
    _finish_run(run_dir, record, gateway, transcript)
    print(str(run_dir))
    return 0


def _finish_run(run_dir: Path, record: dict, gateway: Gateway, transcript) -> None:
    record["exchanges"] = gateway.exchange_log()
    if transcript:
        agentic.write_transcript(transcript, run_dir / "messages.jsonl")
    _write_json(run_dir / "run.json", record)


def _report_text(target: Path) -> tuple[str, str, str, Path]:
    """(text, ref, method, output dir) for a run directory or a report file."""
    if target.is_dir():
        md = target / "report.md"
        if not md.exists():
            raise CLIError(f"{target} has no report.md")
        method = ""
        if (target / "report.json").exists():
            method = json.loads((target / "report.json").read_text(encoding="utf-8"))["tag"]
        return md.read_text(encoding="utf-8"), target.name, method, target
    if not target.exists():
        raise CLIError(f"report {target} does not exist")
    return target.read_text(encoding="utf-8"), target.stem, "", target.parent


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    text, ref, method, out_dir = _report_text(Path(args.target))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    if (args.rouge or args.bertscore) and not args.reference:
        raise CLIError("--rouge/--bertscore need --reference")
    reference = None
    if args.reference:
        ref_path = Path(args.reference)
        if not ref_path.exists():
            raise CLIError(f"reference {ref_path} does not exist")
        reference = " ".join(report_sentences(ref_path.read_text(encoding="utf-8")))
        text_for_overlap = " ".join(report_sentences(text))
    judges = not args.no_judge
    gateway = None
    if judges or args.bertscore:
        gateway = build_gateway(cfg, Path(cfg.out) / "cache.jsonl" if cfg.cache else None)
    chars = load_characteristics(cfg.characteristics) if cfg.characteristics else load_characteristics()

    token_embedder = None
    if args.bertscore:
        def token_embedder(tokens):
            uniq = sorted(set(tokens))
            table = dict(zip(uniq, gateway.embed(uniq)))
            return [table[t] for t in tokens]

    result = evaluate_report(
        text,
        gateway,
        chars,
        report_ref=ref,
        method=method,
        judges=judges,
        parallelism=cfg.parallelism,
    )
    if reference is not None:
        overlap = evaluate_report(
            text_for_overlap, None, (), judges=False, reference=reference, token_embedder=token_embedder
        )
        result.reference = overlap.reference
    _write_json(out_dir / "eval.json", result.to_dict())
    _write(out_dir / "summary.md", result.summary_markdown())
    print(str(out_dir / "eval.json"))
    return 0


def _load_eval(target: Path) -> EvaluationResult:
    path = target / "eval.json" if target.is_dir() else target
    if not path.exists():
        raise CLIError(f"run {target} has no eval.json")
    return EvaluationResult.from_dict(json.loads(path.read_text(encoding="utf-8")))


def cmd_compare(args: argparse.Namespace) -> int:
    a, b = Path(args.run_a), Path(args.run_b)
    ea, eb = _load_eval(a), _load_eval(b)
    cmp = compare_methods(ea, eb, ea.method or a.name, eb.method or b.name)
    out = Path(args.out_dir) if args.out_dir else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "compare.json", cmp)
    _write(out / "compare.md", comparison_markdown(cmp))
    pooled = cmp["pooled_chi_square"]
    print(f"pooled chi2={pooled['chi2']:.4f} p={pooled['p']:.4g} -> {out / 'compare.md'}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    """Re-create report.md from what the run directory stores."""
    run_dir = Path(args.run_dir)
    template = parse_template((run_dir / "template.md").read_text(encoding="utf-8"))
    if (run_dir / "report.json").exists():
        report = GeneratedReport.from_dict(json.loads((run_dir / "report.json").read_text(encoding="utf-8")))
    elif (run_dir / "messages.jsonl").exists():
        report = agentic.replay_report(agentic.read_transcript(run_dir / "messages.jsonl"), template, run_dir.name)
    else:
        raise CLIError(f"{run_dir} has neither report.json nor messages.jsonl")
    _write(run_dir / "report.md", report.to_markdown(template))
    if (run_dir / "eval.json").exists():
        _write(run_dir / "summary.md", _load_eval(run_dir).summary_markdown())
    print(str(run_dir / "report.md"))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--stub", help="scripted backend JSON file (no network)")
    p.add_argument("--out", help="output root directory (default: runs)")
    p.add_argument("--cache", action=argparse.BooleanOptionalAction, default=None, help="response cache")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--chat-model", dest="chat_model")
    p.add_argument("--chat-endpoint", dest="chat_endpoint")
    p.add_argument("--embed-model", dest="embed_model")
    p.add_argument("--embed-endpoint", dest="embed_endpoint")
    p.add_argument("--characteristics", help="JSON list of {name, description}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reportgen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus directory and write its chunk cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int)
    p.add_argument("--chunks-out", dest="chunks_out", help="chunk cache path (default: <corpus>/chunks.jsonl)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="generate a report into a new run directory")
    _add_run_flags(p)
    p.add_argument("--method", choices=["agentic", "decomposed"])
    p.add_argument("--self-reflect", dest="self_reflect", action="store_const", const=True, default=None)
    p.add_argument("--top-n", dest="top_n", type=int)
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int)
    p.add_argument("--template")
    p.add_argument("--corpus")
    p.add_argument("--max-turns", dest="max_turns", type=int)
    p.add_argument("--subqueries", help="manual subquery JSON file (decomposed method)")
    p.add_argument("--docs", help="comma-separated doc ids to restrict the corpus to")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a report (run directory or Markdown file)")
    p.add_argument("target")
    _add_run_flags(p)
    p.add_argument("--reference", help="reference report for ROUGE / BERTScore")
    p.add_argument("--rouge", action="store_true", help="require ROUGE (needs --reference)")
    p.add_argument("--bertscore", action="store_true", help="also compute BERTScore over token embeddings")
    p.add_argument("--no-judge", dest="no_judge", action="store_true", help="skip the LLM-judged metrics")
    p.add_argument("--out-dir", dest="out_dir", help="where to write eval.json (default: next to the report)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare two evaluated runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="re-render report.md from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, CorpusError, GatewayError, ValueError, RuntimeError, OSError) as exc:
        print(f"reportgen: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
