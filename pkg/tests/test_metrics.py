import numpy as np
import pytest

from subprobe.metrics import bio_spans, macro_las, repair_bio, span_f1, tagging_accuracy

from helpers import brute_force_span_f1

BIO_TAGS = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"]


class TestTaggingAccuracy:
    def test_all_correct(self):
        assert tagging_accuracy([["A", "B"]], [["A", "B"]]) == 1.0

    def test_all_wrong(self):
        assert tagging_accuracy([["A", "B"]], [["B", "A"]]) == 0.0

    def test_micro_over_sentences(self):
        pred = [["A", "B"], ["A", "A"]]
        gold = [["A", "B"], ["A", "B"]]
        assert tagging_accuracy(pred, gold) == 0.75


class TestMacroLas:
    def test_token_needs_both_head_and_label(self):
        # 3 tokens, two fully correct, one with right head but wrong label
        las = macro_las([[2, 0, 2]], [["a", "root", "b"]],
                        [[2, 0, 2]], [["a", "root", "c"]])
        assert las == pytest.approx(2 / 3)

    def test_macro_is_unweighted_over_sentences(self):
        las = macro_las([[0], [0, 1]], [["root"], ["root", "x"]],
                        [[0], [0, 1]], [["root"], ["root", "y"]])
        assert las == pytest.approx(0.75)

    def test_order_invariant(self):
        ph, pr = [[0], [2, 0]], [["root"], ["d", "root"]]
        gh, gr = [[0], [0, 0]], [["root"], ["d", "root"]]
        a = macro_las(ph, pr, gh, gr)
        b = macro_las(ph[::-1], pr[::-1], gh[::-1], gr[::-1])
        assert a == b


class TestBioRepair:
    def test_i_after_o_becomes_b(self):
        assert repair_bio(["O", "I-PER"]) == ["O", "B-PER"]

    def test_type_switch_becomes_b(self):
        assert repair_bio(["B-PER", "I-LOC"]) == ["B-PER", "B-LOC"]

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            tags = [BIO_TAGS[i] for i in rng.integers(0, len(BIO_TAGS), size=12)]
            once = repair_bio(tags)
            assert repair_bio(once) == once

    def test_well_formed_unchanged(self):
        tags = ["B-PER", "I-PER", "O", "B-LOC"]
        assert repair_bio(tags) == tags


class TestSpanF1:
    def test_identical_sequences(self):
        seq = [["B-PER", "I-PER", "O", "B-LOC"]]
        assert span_f1(seq, seq) == (1.0, 1.0, 1.0)

    def test_boundary_off_is_fp_plus_fn(self):
        gold = [["B-PER", "I-PER", "O"]]
        pred = [["B-PER", "O", "O"]]
        p, r, f1 = span_f1(pred, gold)
        assert (p, r) == (0.0, 0.0) and f1 == 0.0

    def test_worked_corpus_example(self):
        # 3 gold spans, 2 predicted, 1 exact match -> P=1/2, R=1/3, F1=0.4
        gold = [["B-PER", "O", "B-LOC"], ["B-ORG", "O"]]
        pred = [["B-PER", "O", "O"], ["B-LOC", "O"]]
        p, r, f1 = span_f1(pred, gold)
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1 / 3)
        assert f1 == pytest.approx(0.4)
        assert brute_force_span_f1(pred, gold) == (p, r, f1)

    def test_zero_denominator_gives_zero(self):
        assert span_f1([["O"]], [["O"]]) == (0.0, 0.0, 0.0)

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(42)
        pred, gold = [], []
        for _ in range(1000):
            n = int(rng.integers(1, 15))
            pred.append([BIO_TAGS[i] for i in rng.integers(0, len(BIO_TAGS), size=n)])
            gold.append([BIO_TAGS[i] for i in rng.integers(0, len(BIO_TAGS), size=n)])
        assert span_f1(pred, gold) == brute_force_span_f1(pred, gold)


def test_bio_spans_extraction():
    assert bio_spans(["B-PER", "I-PER", "O", "B-PER"]) == [(0, 2, "PER"), (3, 4, "PER")]
    assert bio_spans(["O", "O"]) == []
