import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import chi2 as scipy_chi2
from scipy.stats import chi2_contingency

from reportgen.evaluation.metrics import (
    bert_score,
    chi_square_2x2,
    count_syllables,
    readability,
    readability_from_counts,
    rouge_l,
    rouge_n,
    tokenize,
)

texts = st.lists(st.sampled_from("the cat sat ran on mat a dog big red".split()), min_size=1, max_size=12).map(" ".join)


class TestRouge:
    def test_identical(self):
        for fn in (lambda a, b: rouge_n(a, b, 1), lambda a, b: rouge_n(a, b, 2), rouge_l):
            assert tuple(fn("the cat sat down", "the cat sat down")) == (1.0, 1.0, 1.0)

    def test_unigram_hand(self):
        assert tuple(rouge_n("the cat sat", "the cat ran", 1)) == pytest.approx((2 / 3,) * 3, abs=1e-6)

    def test_bigram_hand(self):
        assert tuple(rouge_n("the cat sat", "the cat ran", 2)) == pytest.approx((0.5,) * 3, abs=1e-6)

    def test_lcs_hand(self):
        assert tuple(rouge_l("the cat sat", "the cat ran")) == pytest.approx((2 / 3,) * 3, abs=1e-6)

    def test_disjoint(self):
        assert tuple(rouge_l("alpha beta", "gamma delta")) == (0.0, 0.0, 0.0)

    def test_clipped_counts(self):
        p, r, _ = rouge_n("the the the", "the cat", 1)
        assert p == pytest.approx(1 / 3) and r == pytest.approx(1 / 2)

    def test_tokenization(self):
        assert tokenize("Revenue: $23.5B, up 12%!") == ["revenue", "23", "5b", "up", "12"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rouge_n("...", "the cat")
        with pytest.raises(ValueError):
            rouge_l("the", "")

    def test_bad_n(self):
        with pytest.raises(ValueError):
            rouge_n("a", "a", 3)

    @settings(max_examples=200, deadline=None)
    @given(texts, texts)
    def test_properties(self, a, b):
        for fn in (lambda x, y: rouge_n(x, y, 1), rouge_l):
            p, r, f = fn(a, b)
            p2, r2, f2 = fn(b, a)
            assert p == pytest.approx(r2) and r == pytest.approx(p2)
            assert 0 <= f <= 1 and f <= max(p, r) + 1e-12
        assert tuple(rouge_l(a, a)) == (1.0, 1.0, 1.0)
        assert tuple(rouge_n(a, a, 1)) == (1.0, 1.0, 1.0)


class TestBertScore:
    def test_hand_case(self):
        assert tuple(bert_score([[1, 0], [0, 1]], [[1, 0], [0.6, 0.8]])) == pytest.approx((0.9, 0.9, 0.9), abs=1e-6)

    def test_identical(self):
        v = [[1, 2, 3], [0, 1, 0]]
        assert tuple(bert_score(v, v)) == pytest.approx((1, 1, 1))

    def test_orthogonal(self):
        assert tuple(bert_score([[1, 0, 0]], [[0, 1, 0], [0, 0, 1]])) == (0.0, 0.0, 0.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            bert_score([], [[1, 0]])
        with pytest.raises(ValueError):
            bert_score([[1, 0]], [[1, 0, 0]])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        c, r = rng.normal(size=(rng.integers(1, 6), 4)), rng.normal(size=(rng.integers(1, 6), 4))
        p, rec, _ = bert_score(c, r)
        assert -1 <= p <= 1 and -1 <= rec <= 1
        # appending the reference tokens to the candidate gives an exact match for every reference token
        assert bert_score(np.vstack([c, r]), r).recall == pytest.approx(1.0)


SYLLABLES = {
    "the": 1, "cat": 1, "sat": 1, "revenue": 3, "margin": 2, "wafer": 2, "demand": 2,
    "quarter": 2, "growth": 1, "capacity": 4, "inventory": 4, "customers": 3, "pricing": 2,
    "played": 1, "jumped": 1, "wanted": 2, "needed": 2, "boxes": 2, "makes": 1, "table": 2,
    "little": 2, "apple": 2, "company": 3, "financial": 3, "earnings": 2, "expectation": 4,
    "management": 3, "reasoning": 3, "takeaways": 3, "context": 2, "smartphone": 2,
    "automotive": 4, "utilization": 5, "business": 2, "guidance": 2, "simple": 2, "created": 3,
}


@pytest.mark.parametrize("word,count", sorted(SYLLABLES.items()))
def test_syllable_fixture(word, count):
    assert count_syllables(word) == count


class TestReadability:
    def test_cat_sat(self):
        r = readability("The cat sat.")
        assert (r.words, r.sentences, r.syllables, r.letters) == (3, 1, 3, 9)
        assert r.fkgl == pytest.approx(-2.62, abs=1e-6)
        assert r.cli == pytest.approx(-8.0267, abs=1e-3)
        assert r.ari == pytest.approx(-5.80, abs=1e-6)

    def test_formula_from_counts(self):
        r = readability_from_counts(sentences=4, words=60, syllables=90, letters=300)
        assert r.fkgl == pytest.approx(0.39 * 15 + 11.8 * 1.5 - 15.59, abs=1e-9)
        assert r.cli == pytest.approx(0.0588 * 500 - 0.296 * (400 / 60) - 15.8, abs=1e-9)
        assert r.ari == pytest.approx(4.71 * 5 + 0.5 * 15 - 21.43, abs=1e-9)

    def test_zero_words(self):
        with pytest.raises(ValueError):
            readability("... !!")


def brute_chi2(t):
    n = sum(map(sum, t))
    rows = [sum(r) for r in t]
    cols = [t[0][j] + t[1][j] for j in range(2)]
    return sum((t[i][j] - rows[i] * cols[j] / n) ** 2 / (rows[i] * cols[j] / n) for i in range(2) for j in range(2))


class TestChiSquare:
    def test_hand_case(self):
        stat, p, dof = chi_square_2x2([[30, 70], [50, 50]])
        assert stat == pytest.approx(8.3333, abs=1e-3)
        assert p == pytest.approx(0.0039, abs=1e-3)
        assert dof == 1

    def test_homogeneous(self):
        stat, p, _ = chi_square_2x2([[10, 10], [10, 10]])
        assert stat == 0 and p == 1

    def test_zero_marginal(self):
        with pytest.raises(ValueError):
            chi_square_2x2([[0, 5], [0, 7]])

    def test_random_tables_vs_oracles(self):
        rng = random.Random(11)
        for _ in range(300):
            t = [[rng.randint(1, 200) for _ in range(2)] for _ in range(2)]
            stat, p, _ = chi_square_2x2(t)
            assert abs(stat - brute_chi2(t)) < 1e-9
            ref_stat, ref_p, dof, _ = chi2_contingency(np.array(t), correction=False)
            assert stat == pytest.approx(ref_stat, rel=1e-9, abs=1e-9)
            assert p == pytest.approx(ref_p, rel=1e-6, abs=1e-12)
            assert p == pytest.approx(scipy_chi2.sf(stat, 1), rel=1e-6, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 100), min_size=4, max_size=4), st.lists(st.integers(0, 100), min_size=4, max_size=4))
    def test_p_monotone_in_stat(self, a, b):
        ta, tb = [a[:2], a[2:]], [b[:2], b[2:]]
        try:
            sa, pa, _ = chi_square_2x2(ta)
            sb, pb, _ = chi_square_2x2(tb)
        except ValueError:
            assume(False)
        if sa < sb:
            assert pa >= pb
        assert 0 <= pa <= 1 and math.isfinite(sa)
