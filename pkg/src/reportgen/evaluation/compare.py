"""Side-by-side comparison of two methods' evaluation results."""

from __future__ import annotations

from typing import Sequence

from .judges import EvaluationResult
from .metrics import chi_square_2x2

__all__ = ["CHI_SQUARE_CONSTRUCTION", "ComparisonError", "compare_methods", "comparison_markdown"]

CHI_SQUARE_CONSTRUCTION = (
    "2x2 table per characteristic: rows = method A, method B; columns = adherent, non-adherent "
    "sentence counts pooled over all reports of the method. Pearson chi-square, no continuity correction."
)


class ComparisonError(ValueError):
    pass


def _as_list(x) -> list[EvaluationResult]:
    return [x] if isinstance(x, EvaluationResult) else list(x)


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def _rel(a, b):
    if a is None or b is None or a == 0:
        return None
    return 100.0 * (b - a) / a


def _chi(table) -> dict:
    try:
        stat, p, dof = chi_square_2x2(table)
        return {"table": table, "chi2": stat, "p": p, "dof": dof, "degenerate": False}
    except ValueError:
        # a zero marginal: both methods identical in that column, no evidence of difference
        return {"table": table, "chi2": 0.0, "p": 1.0, "dof": 1, "degenerate": True}


def compare_methods(
    a: EvaluationResult | Sequence[EvaluationResult],
    b: EvaluationResult | Sequence[EvaluationResult],
    name_a: str = "A",
    name_b: str = "B",
) -> dict:
    """Deltas (B minus A), relative improvements and chi-square p-values.

    DE is averaged per report by default; the pooled sentence ratio is
    reported alongside it.
    """
    ra, rb = _as_list(a), _as_list(b)
    if not ra or not rb:
        raise ComparisonError("both methods need at least one evaluation result")
    names = list(ra[0].characteristics)
    for r in ra + rb:
        if set(r.characteristics) != set(names):
            raise ComparisonError(
                f"characteristic sets differ: {sorted(names)} vs {sorted(r.characteristics)} ({r.report_ref})"
            )

    per: dict[str, dict] = {}
    rels: list[float] = []
    total = [[0, 0], [0, 0]]
    for name in names:
        row: dict = {}
        for key, results in (("a", ra), ("b", rb)):
            decomps = [r.characteristics[name].decomp for r in results]
            decomps = [d for d in decomps if d is not None]
            adh = sum(d.adherent for d in decomps)
            tot = sum(d.total for d in decomps)
            row[f"de_{key}"] = _mean([d.score for d in decomps])
            row[f"de_pooled_{key}"] = adh / tot if tot else None
            row[f"adherent_{key}"] = adh
            row[f"total_{key}"] = tot
            row[f"ge_{key}"] = _mean([r.characteristics[name].geval for r in results])
        for metric in ("de", "ge"):
            va, vb = row[f"{metric}_a"], row[f"{metric}_b"]
            row[f"{metric}_delta"] = None if va is None or vb is None else vb - va
            row[f"{metric}_rel_pct"] = _rel(va, vb)
            if row[f"{metric}_rel_pct"] is not None:
                rels.append(row[f"{metric}_rel_pct"])
        table = [
            [row["adherent_a"], row["total_a"] - row["adherent_a"]],
            [row["adherent_b"], row["total_b"] - row["adherent_b"]],
        ]
        for i in range(2):
            for j in range(2):
                total[i][j] += table[i][j]
        row["chi_square"] = _chi(table)
        per[name] = row

    return {
        "method_a": name_a,
        "method_b": name_b,
        "reports_a": [r.report_ref for r in ra],
        "reports_b": [r.report_ref for r in rb],
        "characteristics": per,
        "mean_rel_improvement_pct": _mean(rels),
        "pooled_chi_square": _chi(total),
        "chi_square_construction": CHI_SQUARE_CONSTRUCTION,
    }


def _fmt(x, spec=".2f"):
    return "-" if x is None else format(x, spec)


def comparison_markdown(cmp: dict) -> str:
    names = list(cmp["characteristics"])
    head = "| Method | " + " | ".join(f"{n} DE | {n} GE" for n in names) + " |"
    sep = "|---|" + "---|---|" * len(names)
    lines = [head, sep]
    for key, label in (("a", cmp["method_a"]), ("b", cmp["method_b"])):
        cells = []
        for n in names:
            row = cmp["characteristics"][n]
            cells += [_fmt(row[f"de_{key}"]), _fmt(row[f"ge_{key}"])]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    cells = []
    for n in names:
        row = cmp["characteristics"][n]
        cells += [_fmt(row["de_rel_pct"], "+.1f") + "%", _fmt(row["ge_rel_pct"], "+.1f") + "%"]
    lines.append("| relative change | " + " | ".join(cells) + " |")
    cells = []
    for n in names:
        cells += [_fmt(cmp["characteristics"][n]["chi_square"]["p"], ".4g"), ""]
    lines.append("| chi-square p (DE) | " + " | ".join(cells) + " |")
    pooled = cmp["pooled_chi_square"]
    lines += [
        "",
        f"Pooled over characteristics: chi2 = {pooled['chi2']:.4f}, p = {pooled['p']:.4g}.",
        f"Mean relative improvement: {_fmt(cmp['mean_rel_improvement_pct'], '+.1f')}%.",
        "",
        f"_{cmp['chi_square_construction']}_",
        "",
    ]
    return "\n".join(lines)
