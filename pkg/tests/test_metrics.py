import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnet.errors import ClassOutOfRange, EmptyCounts, LengthMismatch, NotFiveClass
from ssnet.metrics import (
    ConfusionCounts,
    ConfusionMatrix,
    build_report,
    class_metrics,
    confusion,
    kappa_multiclass,
    macro_average,
    one_vs_rest,
    per_class_rows,
    render_confusion_csv,
    render_report,
    rem_detection_summary,
    report_from_json,
)

FIXTURES = Path(__file__).parent / "fixtures"
FIVE = ("W", "N1", "N2", "N3", "REM")
GOLDEN_CM = np.array([[50, 3, 1, 0, 2], [4, 20, 6, 0, 5], [2, 5, 70, 8, 3], [0, 0, 9, 40, 0], [3, 4, 2, 0, 45]])


def brute_force(preds, labels, c):
    """Per-example counting, in exact rationals."""
    tp = sum(1 for p, t in zip(preds, labels) if p == c and t == c)
    tn = sum(1 for p, t in zip(preds, labels) if p != c and t != c)
    fp = sum(1 for p, t in zip(preds, labels) if p == c and t != c)
    fn = sum(1 for p, t in zip(preds, labels) if p != c and t == c)
    F = Fraction
    pct = lambda a, b: F(100) * a / b if b else F(0)
    se, sp, pr = pct(tp, tp + fn), pct(tn, tn + fp), pct(tp, tp + fp)
    f1 = 2 * se * pr / (se + pr) if se + pr else F(0)
    den = (tn + fn) * (fn + tp) + (fp + tp) * (tn + fp)
    kappa = F(200) * (tn * tp - fp * fn) / den if den else F(0)
    return (tp, tn, fp, fn), {"se": se, "sp": sp, "acc": pct(tp + tn, len(preds)), "precision": pr, "f1": f1, "kappa": kappa}


class TestConfusion:
    def test_perfect_diagonal(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 2]))

    def test_single_column(self):
        cm = confusion([1] * 6, [0, 1, 2, 0, 1, 2], 3)
        assert np.count_nonzero(cm.counts.sum(axis=0)) == 1
        np.testing.assert_array_equal(cm.counts[:, 1], [2, 2, 2])

    def test_random_vs_pairwise(self, rng):
        preds, labels = rng.integers(0, 5, 500), rng.integers(0, 5, 500)
        cm = confusion(preds, labels, 5)
        for t in range(5):
            for p in range(5):
                assert cm.counts[t, p] == sum(1 for a, b in zip(labels, preds) if a == t and b == p)
        assert cm.total == 500

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion([0, 1], [0], 2)

    @pytest.mark.parametrize("preds,labels", [([0, 3], [0, 1]), ([0, 1], [-1, 1])])
    def test_out_of_range(self, preds, labels):
        with pytest.raises(ClassOutOfRange):
            confusion(preds, labels, 3)


class TestOneVsRest:
    def test_two_class(self):
        cm = ConfusionMatrix(np.array([[5, 1], [2, 4]]), ("a", "b"))
        assert one_vs_rest(cm, 0) == ConfusionCounts(tp=5, tn=4, fp=2, fn=1)
        assert one_vs_rest(cm, 0).n == 12

    def test_sums_to_total(self, rng):
        cm = ConfusionMatrix(rng.integers(0, 30, (5, 5)), FIVE)
        for c in range(5):
            assert one_vs_rest(cm, c).n == cm.total

    def test_bad_class(self):
        with pytest.raises(ClassOutOfRange):
            one_vs_rest(ConfusionMatrix(np.eye(2, dtype=int), ("a", "b")), 2)


class TestClassMetrics:
    def test_perfect(self):
        r = class_metrics(ConfusionCounts(10, 10, 0, 0))
        for v in (r.se, r.sp, r.acc, r.precision, r.f1, r.kappa):
            assert v == 100.0
        assert r.degenerate == ()

    def test_chance(self):
        assert class_metrics(ConfusionCounts(25, 25, 25, 25)).kappa == 0.0

    def test_worked_example(self):
        r = class_metrics(ConfusionCounts(tp=50, tn=30, fp=10, fn=10))
        got = [round(v, 2) for v in (r.se, r.sp, r.acc, r.precision, r.f1, r.kappa)]
        assert got == [83.33, 75.00, 80.00, 83.33, 83.33, 58.33]
        assert r.kappa == pytest.approx(200 * (1500 - 100) / (40 * 60 + 60 * 40), abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyCounts):
            class_metrics(ConfusionCounts(0, 0, 0, 0))

    def test_degenerate_flags(self):
        r = class_metrics(ConfusionCounts(tp=0, tn=10, fp=0, fn=0))
        assert r.se == r.precision == r.f1 == 0.0
        assert {"SE", "Precision", "F1"} <= set(r.degenerate)

    def test_brute_force_1000(self):
        rng = np.random.default_rng(99)
        for case in range(1000):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(1, 60))
            preds, labels = rng.integers(0, k, n).tolist(), rng.integers(0, k, n).tolist()
            cm = confusion(preds, labels, k)
            for c in range(k):
                counts, exact = brute_force(preds, labels, c)
                cc = one_vs_rest(cm, c)
                assert (cc.tp, cc.tn, cc.fp, cc.fn) == counts
                row = class_metrics(cc)
                for name, want in exact.items():
                    assert abs(getattr(row, name) - float(want)) <= 1e-12, (case, c, name)

    @settings(max_examples=300, deadline=None)
    @given(st.tuples(*[st.integers(0, 500)] * 4))
    def test_kappa_properties(self, t):
        tp, tn, fp, fn = t
        if tp + tn + fp + fn == 0:
            return
        r = class_metrics(ConfusionCounts(tp, tn, fp, fn))
        assert -100.0 - 1e-9 <= r.kappa <= 100.0 + 1e-9
        if tp * tn == fp * fn:
            assert r.kappa == 0.0
        if fp == fn == 0 and tp > 0 and tn > 0:
            assert r.kappa == pytest.approx(100.0)
        if r.kappa == pytest.approx(100.0, abs=1e-9):
            assert fp == fn == 0 and tp > 0 and tn > 0
        for v in (r.se, r.sp, r.acc, r.precision, r.f1):
            assert 0.0 <= v <= 100.0

    @settings(max_examples=300, deadline=None)
    @given(st.tuples(*[st.integers(0, 500)] * 4))
    def test_f1_consistency(self, t):
        tp, tn, fp, fn = t
        if tp + tn + fp + fn == 0:
            return
        r = class_metrics(ConfusionCounts(tp, tn, fp, fn))
        if r.se + r.precision > 0:
            assert r.f1 == pytest.approx(2 * r.se * r.precision / (r.se + r.precision), rel=1e-12)


class TestMacroAverage:
    def test_identical(self):
        r = class_metrics(ConfusionCounts(50, 30, 10, 10), "x")
        m = macro_average([r, r, r])
        for k in ("se", "sp", "acc", "precision", "f1", "kappa"):
            assert getattr(m, k) == pytest.approx(getattr(r, k), rel=1e-15)

    def test_hundred_and_zero(self):
        a = class_metrics(ConfusionCounts(10, 10, 0, 0))
        b = class_metrics(ConfusionCounts(0, 0, 10, 10))
        assert macro_average([a, b]).acc == 50.0

    def test_three_rows_by_hand(self):
        cm = ConfusionMatrix(np.array([[8, 2, 0], [1, 7, 2], [0, 3, 7]]), ("a", "b", "c"))
        _, avg = build_report(cm)
        # per-class ACC: (8+19)/30, (7+15)/30, (7+18)/30
        assert avg.acc == pytest.approx(100 * (27 + 22 + 25) / 90, abs=1e-12)
        # not the overall accuracy
        assert avg.acc != pytest.approx(100 * 22 / 30)

    def test_empty(self):
        with pytest.raises(EmptyCounts):
            macro_average([])


class TestRender:
    def rows(self):
        cm = ConfusionMatrix(GOLDEN_CM, FIVE)
        rows, avg = build_report(cm)
        return cm, rows + [avg]

    def test_golden_table(self):
        cm, rows = self.rows()
        assert render_report(cm, rows, "table") == (FIXTURES / "report_golden.txt").read_text()

    def test_csv(self):
        cm, rows = self.rows()
        lines = render_report(cm, rows, "csv").splitlines()
        assert lines[0] == "Class,ACC,SE,SP,F1,Kappa"
        assert len(lines) - 1 == cm.n_classes + 1

    def test_json_idempotent(self):
        cm, rows = self.rows()
        doc = render_report(cm, rows, "json")
        cm2, rows2 = report_from_json(doc)
        assert render_report(cm2, rows2, "json") == doc
        assert json.loads(doc)["kappa_multiclass"] == pytest.approx(kappa_multiclass(cm))

    def test_deterministic(self):
        cm, rows = self.rows()
        for fmt in ("table", "csv", "json"):
            assert render_report(cm, rows, fmt) == render_report(cm, rows, fmt)

    def test_rows_must_cover_classes(self):
        cm, rows = self.rows()
        with pytest.raises(ValueError):
            render_report(cm, rows[:-1])

    def test_confusion_csv(self):
        text = render_confusion_csv(ConfusionMatrix(np.array([[5, 1], [2, 4]]), ("a", "b")))
        assert text == "true\\pred,a,b\na,5,1\nb,2,4\n"


class TestRemSummary:
    def test_perfect(self):
        s = rem_detection_summary(ConfusionMatrix(np.diag([3, 4, 5, 6, 7]), FIVE))
        assert (s["precision"], s["recall"]) == (100.0, 100.0)

    def test_empty_column(self):
        counts = np.diag([3, 4, 5, 6, 0])
        counts[4, 0] = 2
        s = rem_detection_summary(ConfusionMatrix(counts, FIVE))
        assert s["precision"] == 0.0 and "Precision" in s["degenerate"]

    def test_consistent(self, rng):
        cm = ConfusionMatrix(rng.integers(0, 40, (5, 5)), FIVE)
        s = rem_detection_summary(cm)
        row = per_class_rows(cm)[4]
        assert (s["precision"], s["recall"]) == (row.precision, row.se)

    def test_not_five(self):
        with pytest.raises(NotFiveClass):
            rem_detection_summary(ConfusionMatrix(np.eye(3, dtype=int), ("W", "N3", "REM")))


def test_kappa_multiclass_perfect():
    assert kappa_multiclass(ConfusionMatrix(np.diag([5, 5, 5]), ("a", "b", "c"))) == pytest.approx(100.0)
