"""Detection and localization metrics (malicious is the positive class)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyPredictions, MisalignedSets

POSITIVE = "malicious"


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(predictions: Iterable[tuple[str, str]]) -> EvalMetrics:
    """``predictions`` holds (true label, predicted label) pairs."""
    tp = fp = fn = tn = 0
    for truth, pred in predictions:
        if pred == POSITIVE:
            if truth == POSITIVE:
                tp += 1
            else:
                fp += 1
        elif truth == POSITIVE:
            fn += 1
        else:
            tn += 1
    total = tp + fp + fn + tn
    if total == 0:
        raise EmptyPredictions("no predictions to score")
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return EvalMetrics(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
        fpr=_ratio(fp, fp + tn),
    )


@dataclass(frozen=True)
class LocalizationMetrics:
    N: int
    N_hit: int
    correct: tuple[int, ...]  # correctly located methods per sample
    n: int
    hit_rate: float
    accuracy: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["correct"] = list(self.correct)
        return d


def localization_metrics(reports: Mapping[str, Sequence[str]], truth: Mapping[str, Iterable[str]], n: int) -> LocalizationMetrics:
    """Hit rate and accuracy of top-``n`` method lists against planted methods.

    A sample is hit when at least one reported method is truly malicious;
    accuracy is the total number of correct methods over ``N * n``.
    """
    if set(reports) != set(truth):
        missing = sorted(set(reports) ^ set(truth))
        raise MisalignedSets(f"reports and truth disagree on samples: {missing[:5]}")
    if n < 1:
        raise ValueError("n must be >= 1")
    correct = []
    for sid in sorted(reports):
        located = list(dict.fromkeys(reports[sid]))[:n]
        correct.append(len(set(located) & set(truth[sid])))
    N = len(correct)
    hits = sum(c > 0 for c in correct)
    return LocalizationMetrics(
        N=N,
        N_hit=hits,
        correct=tuple(correct),
        n=n,
        hit_rate=_ratio(hits, N),
        accuracy=_ratio(sum(correct), N * n),
    )


def format_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Aligned plain-text table."""
    def cell(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
