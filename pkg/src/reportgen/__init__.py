"""Template-based report generation from earnings documents.

Two interchangeable workflows produce a report that follows an
analyst-authored Markdown template: :func:`run_decomposed` (template ->
subqueries -> retrieved answers -> section summaries) and
:func:`run_agentic` (an assistant agent driving ``task_decompose`` and
``retrieve_generate`` calls). :mod:`reportgen.evaluation` scores the output.
"""

from .agentic import run_agentic
from .corpus import (
    Chunk,
    ChunkingConfig,
    Corpus,
    FinancialStatement,
    ReportTemplate,
    Section,
    Transcript,
    chunk_text,
    load_corpus,
    parse_template,
    serialize_template,
    split_sentences,
)
from .decomposed import run_decomposed
from .gateway import Gateway, HTTPBackend, ResponseCache, ScriptedBackend
from .report import GeneratedReport, self_reflect
from .retrieval import VectorIndex, build_index, cosine_similarity, top_n_chunks

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkingConfig",
    "Corpus",
    "FinancialStatement",
    "Gateway",
    "GeneratedReport",
    "HTTPBackend",
    "ReportTemplate",
    "ResponseCache",
    "ScriptedBackend",
    "Section",
    "Transcript",
    "VectorIndex",
    "build_index",
    "chunk_text",
    "cosine_similarity",
    "load_corpus",
    "parse_template",
    "run_agentic",
    "run_decomposed",
    "self_reflect",
    "serialize_template",
    "split_sentences",
    "top_n_chunks",
]
