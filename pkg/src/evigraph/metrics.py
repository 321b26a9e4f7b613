"""Verdict-prediction metrics: confusion matrix, per-class and averaged F1."""
from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import LABELS


@dataclass
class EvalReport:
    macro_f1: float
    micro_f1: float
    per_class: dict[str, dict[str, float]]
    confusion: dict[str, dict[str, int]]
    absent_labels: list[str] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    n_claims: int = 0

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "absent_labels": self.absent_labels,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "n_claims": self.n_claims,
        }


def compute_report(golds, preds, seed: int = 0, config_hash: str = "") -> EvalReport:
    """All values are percentages in [0, 100]; micro F1 equals accuracy for
    single-label multiclass. A label absent from the gold split gets F1 = 0
    and is listed in absent_labels."""
    if len(golds) != len(preds):
        raise ValueError(f"{len(golds)} golds vs {len(preds)} predictions")
    if not golds:
        raise ValueError("empty evaluation split")
    confusion = {g: {p: 0 for p in LABELS} for g in LABELS}
    for g, p in zip(golds, preds):
        confusion[g][p] += 1

    per_class = {}
    absent = []
    for label in LABELS:
        tp = confusion[label][label]
        fn = sum(confusion[label][p] for p in LABELS) - tp
        fp = sum(confusion[g][label] for g in LABELS) - tp
        support = tp + fn
        if support == 0:
            absent.append(label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = {
            "precision": 100.0 * precision,
            "recall": 100.0 * recall,
            "f1": 100.0 * f1,
            "support": support,
        }
    macro = sum(per_class[l]["f1"] for l in LABELS) / len(LABELS)
    micro = 100.0 * sum(1 for g, p in zip(golds, preds) if g == p) / len(golds)
    return EvalReport(macro_f1=macro, micro_f1=micro, per_class=per_class,
                      confusion=confusion, absent_labels=absent, seed=seed,
                      config_hash=config_hash, n_claims=len(golds))
