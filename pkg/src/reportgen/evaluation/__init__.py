"""Report evaluation: judge-based characteristic scores, readability,
reference-based overlap metrics, and method comparison."""

from ..report import CharacteristicSpec, default_characteristics, load_characteristics
from .compare import ComparisonError, compare_methods, comparison_markdown
from .judges import (
    DecompEvalResult,
    EvaluationResult,
    JudgeError,
    SentenceJudgment,
    decomp_eval,
    evaluate_report,
    g_eval,
    parse_score,
    parse_verdict,
    report_sentences,
)
from .metrics import (
    PRF,
    Readability,
    bert_score,
    chi_square_2x2,
    count_syllables,
    readability,
    readability_from_counts,
    rouge_l,
    rouge_n,
    tokenize,
)

__all__ = [
    "CharacteristicSpec",
    "ComparisonError",
    "DecompEvalResult",
    "EvaluationResult",
    "JudgeError",
    "PRF",
    "Readability",
    "SentenceJudgment",
    "bert_score",
    "chi_square_2x2",
    "compare_methods",
    "comparison_markdown",
    "count_syllables",
    "decomp_eval",
    "default_characteristics",
    "evaluate_report",
    "g_eval",
    "load_characteristics",
    "parse_score",
    "parse_verdict",
    "readability",
    "readability_from_counts",
    "report_sentences",
    "rouge_l",
    "rouge_n",
    "tokenize",
]
