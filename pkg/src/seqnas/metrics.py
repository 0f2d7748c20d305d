"""Token-level evaluation: per-class precision/recall/F1/support plus
macro/micro/weighted aggregates and accuracy.

Positions whose gold label is the ignore marker are excluded everywhere.
Since every evaluated token carries exactly one prediction and one gold
label, micro F1 equals accuracy; that identity is asserted by the tests.
P/R/F1 with a zero denominator are defined as 0, and classes absent from
both gold and predictions are dropped from macro averaging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class ClassCounts:
    tp: dict[int, int] = field(default_factory=dict)
    fp: dict[int, int] = field(default_factory=dict)
    fn: dict[int, int] = field(default_factory=dict)
    total: int = 0
    correct: int = 0

    def support(self, cls: int) -> int:
        return self.tp.get(cls, 0) + self.fn.get(cls, 0)

    def classes(self) -> list[int]:
        return sorted(set(self.tp) | set(self.fp) | set(self.fn))


@dataclass
class MetricsReport:
    per_class: dict  # label -> {"precision","recall","f1","support"}
    macro_f1: float
    micro_f1: float
    weighted_f1: float
    accuracy: float
    macro_precision: float
    macro_recall: float
    weighted_precision: float
    weighted_recall: float
    loss: float | None = None


def count(preds, golds, ignore_id: int) -> ClassCounts:
    """Tally per-class TP/FP/FN, skipping positions whose gold is ignored."""
    preds = list(preds)
    golds = list(golds)
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    counts = ClassCounts()
    for p, g in zip(preds, golds):
        if g == ignore_id:
            continue
        counts.total += 1
        if p == g:
            counts.correct += 1
            counts.tp[g] = counts.tp.get(g, 0) + 1
        else:
            counts.fp[p] = counts.fp.get(p, 0) + 1
            counts.fn[g] = counts.fn.get(g, 0) + 1
    return counts


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    if p == r:
        # 2pp/(p+p) == p exactly; avoids rounding the micro-F1 == accuracy
        # identity away
        f1 = p
    elif p + r:
        f1 = 2 * p * r / (p + r)
    else:
        f1 = 0.0
    return p, r, f1


def macro_average(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def weighted_average(values, supports) -> float:
    values, supports = list(values), list(supports)
    total = sum(supports)
    return sum(v * s for v, s in zip(values, supports)) / total if total else 0.0


def report(counts: ClassCounts, label_names: dict[int, str] | None = None,
           loss: float | None = None) -> MetricsReport:
    per_class = {}
    f1s, ps, rs, sups = [], [], [], []
    for cls in counts.classes():
        p, r, f1 = _prf(counts.tp.get(cls, 0), counts.fp.get(cls, 0), counts.fn.get(cls, 0))
        sup = counts.support(cls)
        name = label_names[cls] if label_names else str(cls)
        per_class[name] = {"precision": p, "recall": r, "f1": f1, "support": sup}
        f1s.append(f1)
        ps.append(p)
        rs.append(r)
        sups.append(sup)
    pooled_tp = sum(counts.tp.values())
    pooled_fp = sum(counts.fp.values())
    pooled_fn = sum(counts.fn.values())
    _, _, micro = _prf(pooled_tp, pooled_fp, pooled_fn)
    return MetricsReport(
        per_class=per_class,
        macro_f1=macro_average(f1s),
        micro_f1=micro,
        weighted_f1=weighted_average(f1s, sups),
        accuracy=counts.correct / counts.total if counts.total else 0.0,
        macro_precision=macro_average(ps),
        macro_recall=macro_average(rs),
        weighted_precision=weighted_average(ps, sups),
        weighted_recall=weighted_average(rs, sups),
        loss=loss,
    )


def report_to_dict(rep: MetricsReport) -> dict:
    overall = {
        "accuracy": rep.accuracy,
        "f1_macro": rep.macro_f1,
        "f1_micro": rep.micro_f1,
        "f1_weighted": rep.weighted_f1,
    }
    if rep.loss is not None:
        overall["loss"] = rep.loss
    return {"overall": overall, "per_class": rep.per_class}


def save_report_json(path, rep: MetricsReport):
    with open(path, "w") as fh:
        json.dump(report_to_dict(rep), fh, indent=2)


def render_report_text(rep: MetricsReport) -> str:
    """Plain-text table: classes lexicographic, then Macro Avg, Weighted Avg."""
    rows = []
    width = max([len("Weighted Avg")] + [len(k) for k in rep.per_class])
    header = f"{'Class':<{width}}  Precision  Recall  F1-Score  Support"
    rows.append(header)
    total_support = sum(v["support"] for v in rep.per_class.values())
    for name in sorted(rep.per_class):
        v = rep.per_class[name]
        rows.append(f"{name:<{width}}  {v['precision']:>9.2f}  {v['recall']:>6.2f}"
                    f"  {v['f1']:>8.2f}  {v['support']:>7d}")
    rows.append(f"{'Macro Avg':<{width}}  {rep.macro_precision:>9.2f}  {rep.macro_recall:>6.2f}"
                f"  {rep.macro_f1:>8.2f}  {total_support:>7d}")
    rows.append(f"{'Weighted Avg':<{width}}  {rep.weighted_precision:>9.2f}  "
                f"{rep.weighted_recall:>6.2f}  {rep.weighted_f1:>8.2f}  {total_support:>7d}")
    overall = [f"Accuracy      {rep.accuracy:.4f}",
               f"F1 (Macro)    {rep.macro_f1:.4f}",
               f"F1 (Micro)    {rep.micro_f1:.4f}",
               f"F1 (Weighted) {rep.weighted_f1:.4f}"]
    if rep.loss is not None:
        overall.insert(0, f"Loss          {rep.loss:.4f}")
    return "\n".join(overall) + "\n\n" + "\n".join(rows) + "\n"
