from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reportgen.evaluation import (
    ComparisonError,
    EvaluationResult,
    compare_methods,
    comparison_markdown,
)
from reportgen.evaluation.judges import (
    CharacteristicScores,
    DecompEvalResult,
    JudgeError,
    decomp_eval,
    evaluate_report,
    g_eval,
    parse_score,
    parse_verdict,
    report_sentences,
)
from reportgen.report import CharacteristicSpec, default_characteristics

from conftest import stub_gateway

CH = CharacteristicSpec("Financial Takeaways", "crucial financial details")


def test_default_characteristics():
    names = [c.name for c in default_characteristics()]
    assert names == ["Financial Takeaways", "Financial Context", "Reasoning Correctness", "Management Expectation"]
    assert all(c.description for c in default_characteristics())


def test_report_sentences_skips_headings_and_splits_bullets():
    md = "# Overview\nRevenue rose. Margins fell.\n\n## Detail\n- bullet one\n- bullet two."
    assert report_sentences(md) == ["Revenue rose.", "Margins fell.", "bullet one", "bullet two."]


class TestParsers:
    @pytest.mark.parametrize("reply,want", [("YES", True), ("no.", False), ("Answer: Yes, it does", True), ("maybe", None)])
    def test_verdict(self, reply, want):
        assert parse_verdict(reply) is want

    @pytest.mark.parametrize("reply,want", [("Score: 4", 4), ("1", 1), ("5/5", 5), ("7", None), ("0", None), ("none", None)])
    def test_score(self, reply, want):
        assert parse_score(reply) == want


class TestDecompEval:
    def test_all_yes(self):
        gw, _ = stub_gateway([{"tag": "judge_sentence", "response": "YES"}])
        r = decomp_eval("A rose. B fell. C held.", CH, gw)
        assert r.score == 1.0 and (r.adherent, r.total) == (3, 3)

    def test_half(self):
        rules = [
            {"tag": "judge_sentence", "match": "Sentence one", "response": "YES"},
            {"tag": "judge_sentence", "match": "Sentence two", "response": "YES"},
            {"tag": "judge_sentence", "response": "NO"},
        ]
        gw, _ = stub_gateway(rules)
        r = decomp_eval("Sentence one. Sentence two. Sentence three. Sentence four.", CH, gw)
        assert r.ratio == Fraction(1, 2)
        assert [j.adheres for j in r.judgments] == [True, True, False, False]

    def test_reformat_retry_then_error_names_index(self):
        rules = [
            {"tag": "judge_sentence", "match": "Good one", "response": "YES"},
            {"tag": "judge_sentence", "response": "I am unsure"},
        ]
        gw, backend = stub_gateway(rules)
        with pytest.raises(JudgeError, match="sentence 1"):
            decomp_eval("Good one. Bad one.", CH, gw)
        assert len(backend.chat_calls("judge_sentence")) == 3

    def test_retry_recovers(self):
        gw, _ = stub_gateway([{"tag": "judge_sentence", "responses": ["hmm", "NO"]}])
        r = decomp_eval("Only.", CH, gw)
        assert (r.adherent, r.total) == (0, 1)

    def test_empty(self):
        gw, _ = stub_gateway([])
        with pytest.raises(JudgeError):
            decomp_eval("# Heading only\n", CH, gw)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=12))
    def test_score_is_exact_boolean_mean(self, verdicts):
        sents = [f"Sentence {i}." for i in range(len(verdicts))]
        rules = [
            {"tag": "judge_sentence", "match": f"Sentence {i}.", "response": "YES" if v else "NO"}
            for i, v in enumerate(verdicts)
        ]
        gw, _ = stub_gateway(rules)
        r = decomp_eval(" ".join(sents), CH, gw, parallelism=3)
        assert r.adherent == sum(verdicts) and r.total == len(verdicts)
        assert r.ratio == Fraction(sum(verdicts), len(verdicts))


class TestGEval:
    def test_parse(self):
        gw, _ = stub_gateway([{"tag": "judge_geval", "response": "Score: 4"}])
        assert g_eval("A report.", CH, gw) == 4

    def test_out_of_range_twice(self):
        gw, backend = stub_gateway([{"tag": "judge_geval", "response": "7"}])
        with pytest.raises(JudgeError):
            g_eval("A report.", CH, gw)
        assert len(backend.chat_calls("judge_geval")) == 2

    def test_retry_accepts(self):
        gw, _ = stub_gateway([{"tag": "judge_geval", "responses": ["9", "3"]}])
        assert g_eval("A report.", CH, gw) == 3

    def test_empty(self):
        gw, _ = stub_gateway([])
        with pytest.raises(JudgeError):
            g_eval("  ", CH, gw)


def test_evaluate_report_roundtrip():
    gw, _ = stub_gateway([{"tag": "judge_sentence", "response": "YES"}, {"tag": "judge_geval", "response": "5"}])
    text = "# A\nThe cat sat. The dog ran."
    res = evaluate_report(text, gw, [CH], report_ref="r1", method="decomposed", reference=text,
                          token_embedder=lambda toks: [[1.0, float(len(t))] for t in toks])
    assert res.characteristics[CH.name].decomp.score == 1.0
    assert res.reference["rougeL"].f1 == 1.0
    assert res.reference["bertscore"].f1 == pytest.approx(1.0)
    assert res.readability.sentences == 2
    back = EvaluationResult.from_dict(res.to_dict())
    assert back.to_dict() == res.to_dict()
    assert "Financial Takeaways" in res.summary_markdown()


def synthetic(ref, method, counts, geval=3):
    return EvaluationResult(
        report_ref=ref,
        method=method,
        characteristics={n: CharacteristicScores(DecompEvalResult(a, t), geval) for n, (a, t) in counts.items()},
    )


class TestCompare:
    def test_identical(self):
        a = synthetic("a", "x", {"F": (5, 10), "G": (3, 4)})
        cmp = compare_methods(a, a)
        for row in cmp["characteristics"].values():
            assert row["de_delta"] == 0 and row["ge_delta"] == 0
            assert row["chi_square"]["p"] == pytest.approx(1.0)

    def test_monotone(self):
        a = synthetic("a", "x", {"F": (3, 10), "G": (2, 10)}, geval=2)
        b = synthetic("b", "y", {"F": (6, 10), "G": (7, 10)}, geval=4)
        cmp = compare_methods(a, b)
        assert all(r["de_delta"] > 0 and r["ge_delta"] > 0 for r in cmp["characteristics"].values())

    def test_pooled_table_flows_through(self):
        a = synthetic("a", "agentic", {"F": (30, 100)})
        b = synthetic("b", "decomposed", {"F": (50, 100)})
        cmp = compare_methods(a, b)
        chi = cmp["characteristics"]["F"]["chi_square"]
        assert chi["table"] == [[30, 70], [50, 50]]
        assert chi["p"] == pytest.approx(0.0039, abs=1e-3)
        assert "chi-square" in comparison_markdown(cmp)

    def test_lists_pool_counts(self):
        a = [synthetic("a1", "x", {"F": (10, 50)}), synthetic("a2", "x", {"F": (20, 50)})]
        b = [synthetic("b1", "y", {"F": (25, 50)}), synthetic("b2", "y", {"F": (25, 50)})]
        row = compare_methods(a, b)["characteristics"]["F"]
        assert row["chi_square"]["table"] == [[30, 70], [50, 50]]
        assert row["de_a"] == pytest.approx(0.3) and row["de_pooled_a"] == pytest.approx(0.3)

    def test_degenerate_table(self):
        a = synthetic("a", "x", {"F": (10, 10)})
        chi = compare_methods(a, a)["characteristics"]["F"]["chi_square"]
        assert chi["degenerate"] and chi["p"] == 1.0

    def test_mismatch(self):
        with pytest.raises(ComparisonError):
            compare_methods(synthetic("a", "x", {"F": (1, 2)}), synthetic("b", "y", {"G": (1, 2)}))
