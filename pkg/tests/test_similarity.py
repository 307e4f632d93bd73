"""Metric oracles and purity properties."""

import math
import random

import pytest

from rtc_eval import similarity
from rtc_eval.similarity import (
    Metric,
    MetricValue,
    bleu,
    corpus_bleu,
    exact_match,
    normalize_code,
    rouge_l,
    strip_code_fences,
    tokenize,
)

# Hand-computed oracle for "the cat sat" vs "the cat sat down":
# tokens 3 vs 4; p1 = 3/3; p2 = (2+1)/(2+1); p3 = (1+1)/(1+1);
# p4 = (0+1)/(0+1); BP = exp(1 - 4/3).
BLEU_MICRO_EXPECTED = 100.0 * math.exp(1.0 - 4.0 / 3.0)

# Hand-computed oracle for "a b c d" vs "a c d e": LCS = 3 ("a c d"),
# P = R = 3/4, F1 = 0.75.
ROUGE_MICRO_EXPECTED = 75.0


class TestTokenize:
    def test_whitespace_split(self):
        assert tokenize("the cat  sat") == ["the", "cat", "sat"]

    def test_punctuation_split_off(self):
        assert tokenize('use "127.0.0.1" now') == [
            "use", '"', "127", ".", "0", ".", "0", ".", "1", '"', "now",
        ]

    def test_empty(self):
        assert tokenize("   ") == []


class TestBleu:
    def test_identity_scores_100(self):
        assert bleu("the cat sat down", "the cat sat down") == pytest.approx(100.0)

    def test_token_disjoint_scores_under_smoothing_floor(self):
        assert bleu("alpha beta gamma", "delta epsilon zeta") < 1.0

    def test_micro_case_matches_hand_computation(self):
        assert bleu("the cat sat", "the cat sat down") == pytest.approx(
            BLEU_MICRO_EXPECTED, abs=1e-9
        )

    def test_empty_candidate_scores_zero(self):
        assert bleu("", "anything at all") == 0.0

    def test_deterministic(self):
        pair = ("compute the mean value", "compute the mean of the values")
        assert bleu(*pair) == bleu(*pair)

    def test_whitespace_collapse_invariance(self):
        a = "fold   the\tresult \n into one"
        b = "fold the result into one"
        ref = "fold the results into one"
        assert bleu(a, ref) == bleu(b, ref)


class TestCorpusBleu:
    def test_identity_pairs_score_100(self):
        pairs = [("a b c d", "a b c d"), ("x y z w", "x y z w")]
        assert corpus_bleu(pairs) == pytest.approx(100.0)

    def test_empty_input(self):
        assert corpus_bleu([]) == 0.0

    def test_differs_from_sentence_mean_in_general(self):
        pairs = [("a b c d e f", "a b c d e f"), ("q", "z z z z")]
        sentence_mean = math.fsum(bleu(c, r) for c, r in pairs) / 2
        assert corpus_bleu(pairs) != pytest.approx(sentence_mean)


class TestRougeL:
    def test_identity_scores_100(self):
        assert rouge_l("a b c d", "a b c d") == pytest.approx(100.0)

    def test_disjoint_scores_zero(self):
        assert rouge_l("a b c", "x y z") == 0.0

    def test_micro_case_matches_lcs_oracle(self):
        assert rouge_l("a b c d", "a c d e") == pytest.approx(ROUGE_MICRO_EXPECTED, abs=1e-9)

    def test_empty_candidate_scores_zero(self):
        assert rouge_l("", "a b c") == 0.0

    def test_symmetric_for_equal_token_counts(self):
        a, b = "a b c d", "a c d e"
        assert rouge_l(a, b) == pytest.approx(rouge_l(b, a))

    def test_whitespace_collapse_invariance(self):
        assert rouge_l("a   b\tc", "a b x") == rouge_l("a b c", "a b x")


class TestExactMatch:
    def test_identity(self):
        assert exact_match("x = 1\n", "x = 1\n") == 100.0

    def test_trailing_whitespace_normalized(self):
        assert exact_match("x = 1   \ny = 2\n\n", "x = 1\ny = 2") == 100.0

    def test_crlf_normalized(self):
        assert exact_match("x = 1\r\ny = 2", "x = 1\ny = 2") == 100.0

    def test_strict_mode_requires_raw_equality(self):
        assert exact_match("x = 1 ", "x = 1", strict=True) == 0.0
        assert exact_match("x = 1", "x = 1", strict=True) == 100.0

    def test_interior_difference_not_ignored(self):
        assert exact_match("x  =  1", "x = 1") == 0.0

    def test_normalize_idempotent(self):
        samples = ["", "\n\nx = 1  \n\n", "a\r\nb  ", "  lead\n", "x\n\n\ny"]
        for text in samples:
            once = normalize_code(text)
            assert normalize_code(once) == once


class TestReflexivity:
    def test_all_metrics_max_on_identical_inputs(self):
        rng = random.Random(7)
        alphabet = ["foo", "bar", "(", ")", "x", "return", "+", "12"]
        for _ in range(50):
            text = " ".join(rng.choice(alphabet) for _ in range(rng.randint(1, 30)))
            assert bleu(text, text) == pytest.approx(100.0)
            assert rouge_l(text, text) == pytest.approx(100.0)
            assert exact_match(text, text) == 100.0


class TestMetricValue:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MetricValue("bleu", 101.0, 100.0)

    def test_rejects_unknown_id(self):
        with pytest.raises(ValueError):
            MetricValue("levenshtein", 1.0, 1.0)

    def test_accepts_boundaries(self):
        MetricValue("pass", 0.0, 1.0)
        MetricValue("pass", 1.0, 1.0)
        MetricValue("exact_match", 100.0, 100.0)


class TestMetricWrapper:
    def test_score_delegates_and_minimum_is_zero(self):
        metric = Metric("bleu", 100.0, lambda cand, task: bleu(cand, task))
        assert metric.score("a b", "a b") == pytest.approx(100.0)
        assert metric.minimum == 0.0


class TestStripCodeFences:
    def test_fenced_block_unwrapped(self):
        assert strip_code_fences("```python\nx = 1\n```") == "x = 1"

    def test_bare_text_unchanged(self):
        assert strip_code_fences("x = 1\ny = 2") == "x = 1\ny = 2"

    def test_leading_blank_lines_before_fence(self):
        assert strip_code_fences("\n\n```\ny = 2\n```\n") == "y = 2"
