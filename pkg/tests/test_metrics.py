import numpy as np
import pytest

from seqnas.metrics import (ClassCounts, count, macro_average, report,
                            render_report_text, report_to_dict,
                            weighted_average)

# Published reference report: per-class F1 and support for seven BIO classes,
# with overall macro 0.8115, weighted 0.9331, micro == accuracy 0.9354.
REFERENCE_ROWS = {
    "B-LOC": (0.86, 397),
    "B-ORG": (0.76, 291),
    "B-PER": (0.89, 614),
    "I-LOC": (0.57, 147),
    "I-ORG": (0.71, 251),
    "I-PER": (0.93, 527),
    "O": (0.96, 6901),
}


def test_reference_supports_sum():
    assert sum(s for _, s in REFERENCE_ROWS.values()) == 9128


def test_reference_macro_f1():
    macro = macro_average(f1 for f1, _ in REFERENCE_ROWS.values())
    assert abs(macro - 0.8115) < 0.001


def test_reference_weighted_f1():
    f1s = [f1 for f1, _ in REFERENCE_ROWS.values()]
    sups = [s for _, s in REFERENCE_ROWS.values()]
    assert abs(weighted_average(f1s, sups) - 0.9331) < 0.01


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------


def test_perfect_predictions_have_no_errors():
    golds = [0, 1, 2, 1, 0]
    c = count(golds, golds, ignore_id=-100)
    assert sum(c.fp.values()) == 0
    assert sum(c.fn.values()) == 0
    assert c.correct == c.total == 5


def test_all_ignored_gives_empty_counts():
    c = count([1, 2, 3], [-100, -100, -100], ignore_id=-100)
    assert c.total == 0
    assert c.classes() == []


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        count([1, 2], [1], ignore_id=-100)


def test_counts_match_brute_force_recount():
    rng = np.random.default_rng(0)
    preds = rng.integers(0, 5, size=200)
    golds = rng.integers(0, 5, size=200)
    golds[rng.random(200) < 0.15] = -100
    c = count(preds, golds, ignore_id=-100)
    for cls in range(5):
        tp = sum(1 for p, g in zip(preds, golds) if g != -100 and p == g == cls)
        fp = sum(1 for p, g in zip(preds, golds) if g != -100 and p == cls and g != cls)
        fn = sum(1 for p, g in zip(preds, golds) if g != -100 and g == cls and p != cls)
        assert c.tp.get(cls, 0) == tp
        assert c.fp.get(cls, 0) == fp
        assert c.fn.get(cls, 0) == fn
        assert c.support(cls) == tp + fn
    assert sum(c.support(cls) for cls in c.classes()) == c.total


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_micro_f1_equals_accuracy_on_random_sets():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(5, 60))
        preds = rng.integers(0, 4, size=n)
        golds = rng.integers(0, 4, size=n)
        rep = report(count(preds, golds, -100))
        assert rep.micro_f1 == rep.accuracy


def test_perfect_predictions_give_all_ones():
    golds = [0, 1, 2, 0, 1, 2]
    rep = report(count(golds, golds, -100))
    assert rep.accuracy == 1.0
    assert rep.micro_f1 == 1.0
    assert rep.macro_f1 == 1.0
    assert rep.weighted_f1 == 1.0
    assert all(v["f1"] == 1.0 for v in rep.per_class.values())


def test_order_invariance():
    rng = np.random.default_rng(2)
    preds = rng.integers(0, 4, size=100)
    golds = rng.integers(0, 4, size=100)
    rep_a = report(count(preds, golds, -100))
    perm = rng.permutation(100)
    rep_b = report(count(preds[perm], golds[perm], -100))
    assert rep_a == rep_b


def test_zero_denominator_convention():
    # class 1 never predicted: precision 0; class 2 never gold: recall 0
    rep = report(count([0, 0, 2], [0, 1, 1], -100))
    assert rep.per_class["1"]["precision"] == 0.0
    assert rep.per_class["1"]["f1"] == 0.0
    assert rep.per_class["2"]["recall"] == 0.0


def test_all_metrics_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(25):
        preds = rng.integers(0, 6, size=80)
        golds = rng.integers(0, 6, size=80)
        rep = report(count(preds, golds, -100))
        for v in (rep.macro_f1, rep.micro_f1, rep.weighted_f1, rep.accuracy):
            assert 0.0 <= v <= 1.0
        for row in rep.per_class.values():
            for key in ("precision", "recall", "f1"):
                assert 0.0 <= row[key] <= 1.0


def test_weighted_f1_definition():
    rng = np.random.default_rng(4)
    preds = rng.integers(0, 4, size=300)
    golds = rng.integers(0, 4, size=300)
    rep = report(count(preds, golds, -100))
    manual = sum(v["f1"] * v["support"] for v in rep.per_class.values()) / \
        sum(v["support"] for v in rep.per_class.values())
    assert abs(rep.weighted_f1 - manual) < 1e-15


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_report_dict_has_overall_and_per_class_blocks():
    rep = report(count([0, 1, 1], [0, 1, 0], -100), label_names={0: "O", 1: "B-PER"},
                 loss=0.5)
    d = report_to_dict(rep)
    assert set(d) == {"overall", "per_class"}
    assert set(d["per_class"]) == {"O", "B-PER"}
    assert d["overall"]["loss"] == 0.5
    for key in ("accuracy", "f1_macro", "f1_micro", "f1_weighted"):
        assert key in d["overall"]


def test_text_rendering_row_order():
    rep = report(count([0, 1, 2, 2], [0, 1, 2, 1], -100),
                 label_names={0: "O", 1: "B-PER", 2: "I-PER"})
    text = render_report_text(rep)
    lines = [l for l in text.splitlines() if l]
    class_rows = [l.split()[0] for l in lines if l.startswith(("O", "B-", "I-", "Macro", "Weighted"))]
    assert class_rows == ["B-PER", "I-PER", "O", "Macro", "Weighted"]
    assert "Support" in text
