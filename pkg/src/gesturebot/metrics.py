"""Confusion matrix with an Unknown column, and support-weighted metrics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import BackendError, EmptyInputError, EvaluationAborted, InputError
from .gsd import TRUE_LABELS, Label, PromptTemplate, classify_many
from .llm import DEFAULT_CONCURRENCY, Backend

log = logging.getLogger(__name__)

PRED_LABELS = (*TRUE_LABELS, Label.UNKNOWN)
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows: true Consent, Instruction, Neither. Columns: the same plus Unknown."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.counts, dtype=np.int64)
        if c.shape != (3, 4):
            raise InputError(f"confusion matrix must be 3x4, got {c.shape}")
        if np.any(c < 0):
            raise InputError("confusion counts must be >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *(lab.value for lab in PRED_LABELS)])
        for lab, row in zip(TRUE_LABELS, self.counts):
            w.writerow([lab.value, *(int(x) for x in row)])
        return buf.getvalue()

    def to_dict(self) -> dict[str, dict[str, int]]:
        return {
            t.value: {p.value: int(self.counts[i, j]) for j, p in enumerate(PRED_LABELS)}
            for i, t in enumerate(TRUE_LABELS)
        }


def confusion(truths: Sequence[Label], preds: Sequence[Label]) -> ConfusionMatrix:
    if len(truths) != len(preds):
        raise InputError(f"{len(truths)} truths vs {len(preds)} predictions")
    counts = np.zeros((3, 4), dtype=np.int64)
    for t, p in zip(truths, preds):
        t, p = Label.parse(t), Label.parse(p)
        if t is Label.UNKNOWN:
            raise InputError("Unknown cannot be a true label")
        counts[TRUE_LABELS.index(t), PRED_LABELS.index(p)] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: Mapping[Label, ClassScore]
    total: int
    unknown: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "total": self.total,
            "unknown_predictions": self.unknown,
            "per_class": {
                lab.value: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                    "precision_undefined": s.precision_undefined,
                    "recall_undefined": s.recall_undefined,
                }
                for lab, s in self.per_class.items()
            },
        }

    def table(self) -> str:
        lines = [f"{'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"]
        for lab, s in self.per_class.items():
            lines.append(f"{lab.value:<12}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}{s.support:>10d}")
        lines.append("")
        lines.append(f"{'accuracy':<22}{self.accuracy:.4f}")
        lines.append(f"{'weighted precision':<22}{self.weighted_precision:.4f}")
        lines.append(f"{'weighted recall':<22}{self.weighted_recall:.4f}")
        lines.append(f"{'weighted F1':<22}{self.weighted_f1:.4f}")
        lines.append(f"{'unknown predictions':<22}{self.unknown}")
        return "\n".join(lines) + "\n"


def metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus per-class and support-weighted precision/recall/F1.

    Unknown predictions count in the totals (so they lower accuracy and
    recall) but are not a scored class. Empty denominators give 0 and set
    the matching ``*_undefined`` flag.
    """
    c = matrix.counts.astype(float)
    total = c.sum()
    if total == 0:
        raise EmptyInputError("confusion matrix is empty")
    diag = np.array([c[i, i] for i in range(3)])
    col = c[:, :3].sum(axis=0)
    row = c.sum(axis=1)

    per_class: dict[Label, ClassScore] = {}
    for i, lab in enumerate(TRUE_LABELS):
        p = diag[i] / col[i] if col[i] else 0.0
        r = diag[i] / row[i] if row[i] else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per_class[lab] = ClassScore(float(p), float(r), float(f), int(row[i]), not col[i], not row[i])

    w = row / total
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        weighted_precision=float(sum(w[i] * per_class[lab].precision for i, lab in enumerate(TRUE_LABELS))),
        weighted_recall=float(sum(w[i] * per_class[lab].recall for i, lab in enumerate(TRUE_LABELS))),
        weighted_f1=float(sum(w[i] * per_class[lab].f1 for i, lab in enumerate(TRUE_LABELS))),
        per_class=per_class,
        total=int(total),
        unknown=int(c[:, 3].sum()),
    )


@dataclass
class EvalRun:
    matrix: ConfusionMatrix
    report: MetricsReport
    log: list[dict[str, Any]] = field(default_factory=list)
    failures: int = 0
    valid: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "failures": self.failures,
            "metrics": self.report.to_dict(),
            "confusion": self.matrix.to_dict(),
        }


def eval_model(
    dataset: Sequence[tuple[str, str, Label]],
    backend: Backend,
    template: PromptTemplate,
    concurrency: int = DEFAULT_CONCURRENCY,
    max_failure_rate: float = MAX_FAILURE_RATE,
) -> EvalRun:
    """Classify every ``(sentence_id, text, true_label)`` and score the run.

    Sentences whose request failed are logged and left out of the matrix.

    Raises:
        EvaluationAborted: more than ``max_failure_rate`` of requests failed;
            ``exc.partial`` holds the run, flagged invalid.
    """
    if not dataset:
        raise EmptyInputError("empty evaluation dataset")
    results = classify_many([(sid, text) for sid, text, _ in dataset], backend, template, concurrency)
    truths, preds, entries = [], [], []
    failures = 0
    for (sid, text, truth), res in zip(dataset, results):
        truth = Label.true_label(truth)
        if isinstance(res, BackendError):
            failures += 1
            entries.append({"sentence_id": sid, "true": truth.value, "pred": None, "error": str(res)})
            continue
        truths.append(truth)
        preds.append(res.label)
        entries.append({
            "sentence_id": sid,
            "true": truth.value,
            "pred": res.label.value,
            "correct": res.label is truth,
            "reasoning": res.reasoning,
        })
    matrix = confusion(truths, preds)
    report = metrics(matrix) if matrix.total else None
    run = EvalRun(matrix, report, entries, failures)  # type: ignore[arg-type]
    if failures / len(dataset) > max_failure_rate:
        run.valid = False
        raise EvaluationAborted(
            f"{failures}/{len(dataset)} requests failed (> {max_failure_rate:.0%}); report invalid", run
        )
    return run


def load_eval_dataset(rows: Iterable[Mapping[str, Any]]) -> list[tuple[str, str, Label]]:
    """Accepts finalized dataset rows (``id``, ``text``, ``final_label``)
    or plain ``{sentence_id, text, label}`` rows."""
    out = []
    for d in rows:
        sid = d.get("id", d.get("sentence_id"))
        label = d.get("final_label", d.get("label"))
        if sid is None or label is None or "text" not in d:
            raise InputError(f"evaluation row lacks id/text/label: {d!r}")
        out.append((str(sid), str(d["text"]), Label.true_label(label)))
    return out


def plot_confusion(matrix: ConfusionMatrix, path: str | Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow(matrix.counts, cmap="Blues")
    ax.set_xticks(range(4), [lab.value for lab in PRED_LABELS])
    ax.set_yticks(range(3), [lab.value for lab in TRUE_LABELS])
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    vmax = matrix.counts.max() or 1
    for i in range(3):
        for j in range(4):
            v = int(matrix.counts[i, j])
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > vmax / 2 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
