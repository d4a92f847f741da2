"""Annotated clinical-conversation corpus construction.

Pipeline: ASR segments -> full sentences with timestamps -> clip cut list
-> per-model annotations -> consensus (unanimous or split) -> human review
queue -> finalized dataset and statistics.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import BackendError, EmptyInputError, InputError, OrderingError
from .gsd import TRUE_LABELS, Label, PromptTemplate, build_prompt, parse_response
from .llm import DEFAULT_CONCURRENCY, Backend, bounded_map

log = logging.getLogger(__name__)

TERMINALS = (".", "?", "!")
HONORIFICS = frozenset({"dr.", "mr.", "mrs.", "ms."})
AUDIT_FRACTION = 0.2
_TRAILING_CLOSERS = "\"')]”’"


@dataclass(frozen=True)
class AsrSegment:
    text: str
    start: float
    end: float
    source_id: str

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise InputError(f"segment {self.text!r}: start {self.start} > end {self.end}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AsrSegment:
        try:
            return cls(str(d["text"]), float(d["start"]), float(d["end"]), str(d["source_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed ASR segment {d!r}: {exc!r}") from exc


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    start: float
    end: float
    source_id: str
    tail: bool = False

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise InputError(f"sentence {self.id}: start {self.start} must be < end {self.end}")

    def to_dict(self) -> dict[str, Any]:
        d = {"id": self.id, "text": self.text, "start": self.start, "end": self.end, "source_id": self.source_id}
        if self.tail:
            d["tail"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Sentence:
        try:
            return cls(
                str(d["id"]), str(d["text"]), float(d["start"]), float(d["end"]),
                str(d.get("source_id", "")), bool(d.get("tail", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed sentence {d!r}: {exc!r}") from exc


def is_terminal(fragment: str) -> bool:
    """Whether ``fragment`` ends a sentence (honorific abbreviations do not)."""
    text = fragment.rstrip().rstrip(_TRAILING_CLOSERS)
    if not text.endswith(TERMINALS):
        return False
    last_word = text.split()[-1].lower() if text.split() else ""
    return last_word not in HONORIFICS


def merge_segments(segments: Sequence[AsrSegment]) -> list[Sentence]:
    """Join ASR fragments into full sentences, per source, in input order.

    Sentence ids are ``<source_id>-<nnnnn>``; a trailing unterminated run
    becomes a sentence flagged ``tail``.
    """
    by_source: dict[str, list[AsrSegment]] = {}
    for seg in segments:
        by_source.setdefault(seg.source_id, []).append(seg)

    out: list[Sentence] = []
    for source, segs in by_source.items():
        for prev, cur in zip(segs, segs[1:]):
            if cur.start < prev.start or cur.start < prev.end:
                raise OrderingError(
                    f"source {source}: segment at {cur.start}s overlaps or precedes segment at "
                    f"{prev.start}-{prev.end}s"
                )
        buf: list[AsrSegment] = []
        n = 0
        for i, seg in enumerate(segs):
            buf.append(seg)
            last = i == len(segs) - 1
            if not (is_terminal(seg.text) or last):
                continue
            text = " ".join(s.text.strip() for s in buf if s.text.strip())
            if text:
                tail = not is_terminal(seg.text)
                out.append(Sentence(f"{source}-{n:05d}", text, buf[0].start, buf[-1].end, source, tail))
                n += 1
            buf = []
    return out


def clip_boundaries(sentences: Sequence[Sentence], padding: float = 0.0) -> list[tuple[str, float, float]]:
    """Cut list ``(sentence_id, clip_start, clip_end)``, one row per sentence."""
    if padding < 0:
        raise InputError("padding must be >= 0")
    return [(s.id, max(0.0, s.start - padding), s.end + padding) for s in sentences]


# -- annotation -------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationRecord:
    sentence_id: str
    annotator: str
    label: Label
    reasoning: str
    anomaly: bool = False

    def __post_init__(self) -> None:
        if self.label not in TRUE_LABELS:
            raise InputError(f"annotation label must be a true label, got {self.label}")

    def to_dict(self) -> dict[str, Any]:
        d = {"sentence_id": self.sentence_id, "annotator": self.annotator,
             "label": self.label.value, "reasoning": self.reasoning}
        if self.anomaly:
            d["anomaly"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AnnotationRecord:
        try:
            return cls(str(d["sentence_id"]), str(d["annotator"]), Label.true_label(d["label"]),
                       str(d.get("reasoning", "")), bool(d.get("anomaly", False)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed annotation {d!r}") from exc


@dataclass(frozen=True)
class AnnotationFailure:
    sentence_id: str
    annotator: str
    error: str

    def to_dict(self) -> dict[str, Any]:
        return {"sentence_id": self.sentence_id, "annotator": self.annotator, "error": self.error}


@dataclass
class AnnotationRun:
    records: list[AnnotationRecord] = field(default_factory=list)
    failures: list[AnnotationFailure] = field(default_factory=list)

    @property
    def anomaly_count(self) -> int:
        return sum(r.anomaly for r in self.records)


def _annotate_one(sentence: Sentence, annotator: str, backend: Backend, template: PromptTemplate) -> AnnotationRecord:
    prompt = build_prompt(template, sentence.text)
    label, reasoning = parse_response(backend.complete(prompt))
    if label is Label.UNKNOWN:
        label, reasoning = parse_response(backend.complete(prompt))
    if label is Label.UNKNOWN:
        log.warning("%s gave no usable label for %s twice; recording Neither", annotator, sentence.id)
        return AnnotationRecord(sentence.id, annotator, Label.NEITHER, reasoning, anomaly=True)
    return AnnotationRecord(sentence.id, annotator, label, reasoning)


def annotate_corpus(
    sentences: Sequence[Sentence],
    backends: Sequence[Backend],
    template: PromptTemplate,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> AnnotationRun:
    """One record per (sentence, backend), sentence-major order.

    An Unknown answer is re-asked once, then stored as Neither with the
    anomaly flag. Transport failures are collected, not raised.
    """
    if not backends:
        raise InputError("at least one annotator backend is required")
    names = [b.name for b in backends]
    if len(set(names)) != len(names):
        raise InputError(f"annotator names must be unique, got {names}")
    jobs = [(s, b) for s in sentences for b in backends]
    results = bounded_map(lambda job: _annotate_one(job[0], job[1].name, job[1], template), jobs, concurrency)
    run = AnnotationRun()
    for (s, b), res in zip(jobs, results):
        if isinstance(res, BackendError):
            run.failures.append(AnnotationFailure(s.id, b.name, str(res)))
        elif isinstance(res, BaseException):
            raise res
        else:
            run.records.append(res)
    if run.failures:
        log.warning("%d annotation request(s) failed", len(run.failures))
    return run


# -- consensus ------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsensusOutcome:
    """Agreement state of one sentence's annotators.

    ``votes`` maps label to count. Unanimous Neither is final immediately;
    unanimous Consent/Instruction is final but still flagged for review;
    a split waits for a human.
    """

    sentence_id: str
    votes: Mapping[Label, int]
    final_label: Label | None = None
    resolved_by: str | None = None
    needs_review: bool = False

    @property
    def unanimous(self) -> bool:
        return len(self.votes) == 1

    @property
    def is_split(self) -> bool:
        return len(self.votes) > 1

    @property
    def unanimous_label(self) -> Label | None:
        return next(iter(self.votes)) if self.unanimous else None

    def resolve(self, label: Label, reviewer: str) -> ConsensusOutcome:
        return ConsensusOutcome(self.sentence_id, self.votes, Label.true_label(label), reviewer, False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "unanimous" if self.unanimous else "split",
            "votes": {k.value: v for k, v in sorted(self.votes.items(), key=lambda kv: kv[0].value)},
            "needs_review": self.needs_review,
        }


def consensus(records: Sequence[AnnotationRecord]) -> ConsensusOutcome:
    """Consensus of all records for a single sentence."""
    if not records:
        raise EmptyInputError("consensus needs at least one record")
    ids = {r.sentence_id for r in records}
    if len(ids) != 1:
        raise InputError(f"records span several sentences: {sorted(ids)}")
    counts = Counter(r.label for r in records)
    votes = {lab: counts[lab] for lab in TRUE_LABELS if counts[lab]}
    sid = records[0].sentence_id
    if len(votes) == 1:
        (label,) = votes
        return ConsensusOutcome(sid, votes, label, None, needs_review=label is not Label.NEITHER)
    return ConsensusOutcome(sid, votes)


def group_records(records: Iterable[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    groups: dict[str, list[AnnotationRecord]] = {}
    for r in records:
        groups.setdefault(r.sentence_id, []).append(r)
    return groups


def consensus_all(records: Iterable[AnnotationRecord]) -> list[ConsensusOutcome]:
    return [consensus(g) for g in group_records(records).values()]


def disagreement_rate(outcomes: Sequence[ConsensusOutcome]) -> float:
    """Fraction of sentences whose annotators were not unanimous."""
    if not outcomes:
        raise EmptyInputError("disagreement rate of no outcomes")
    return sum(o.is_split for o in outcomes) / len(outcomes)


# -- dataset ------------------------------------------------------------------------------


@dataclass
class DatasetRow:
    sentence: Sentence
    annotations: list[AnnotationRecord]
    outcome: ConsensusOutcome | None
    human_label: Label | None = None
    reviewer: str | None = None
    review_reason: str | None = None

    @property
    def final_label(self) -> Label | None:
        if self.human_label is not None:
            return self.human_label
        if self.outcome is not None:
            return self.outcome.final_label
        return None

    @property
    def pending(self) -> bool:
        return self.final_label is None or (
            self.outcome is not None and self.outcome.needs_review and self.human_label is None
        )

    def to_dict(self) -> dict[str, Any]:
        d = self.sentence.to_dict()
        d["annotations"] = [
            {k: v for k, v in a.to_dict().items() if k != "sentence_id"} for a in self.annotations
        ]
        d["consensus"] = self.outcome.to_dict() if self.outcome else None
        d["final_label"] = self.final_label.value if self.final_label else None
        d["resolved_by"] = self.reviewer
        if self.review_reason:
            d["review_reason"] = self.review_reason
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DatasetRow:
        sentence = Sentence.from_dict(d)
        anns = [AnnotationRecord.from_dict({**a, "sentence_id": sentence.id}) for a in d.get("annotations", [])]
        outcome = consensus(anns) if anns else None
        human = None
        reviewer = d.get("resolved_by")
        final = d.get("final_label")
        if reviewer:
            human = Label.true_label(final)
        elif final is not None and outcome is None:
            human = Label.true_label(final)
        row = cls(sentence, anns, outcome, human, reviewer, d.get("review_reason"))
        if final is not None and row.final_label is not Label.true_label(final):
            raise InputError(f"{sentence.id}: final_label {final} inconsistent with annotations")
        return row


def build_dataset(
    sentences: Sequence[Sentence],
    records: Iterable[AnnotationRecord],
) -> list[DatasetRow]:
    groups = group_records(records)
    return [
        DatasetRow(s, groups.get(s.id, []), consensus(groups[s.id]) if s.id in groups else None)
        for s in sentences
    ]


def review_queue(rows: Sequence[DatasetRow]) -> list[dict[str, Any]]:
    """Rows a human must look at: splits, unanimous Consent/Instruction, audit picks.

    Each row carries ``human_label: null`` for the reviewer to fill in,
    plus ``reviewer``.
    """
    audit = set(audit_selection(rows))
    queue = []
    for row in rows:
        if row.human_label is not None:
            continue
        if row.outcome is None:
            reason = "unannotated"
        elif row.outcome.is_split:
            reason = "split"
        elif row.outcome.needs_review:
            reason = "validate"
        elif row.sentence.id in audit:
            reason = "audit"
        else:
            continue
        queue.append({
            "sentence_id": row.sentence.id,
            "text": row.sentence.text,
            "reason": reason,
            "votes": row.outcome.to_dict()["votes"] if row.outcome else {},
            "model_label": row.outcome.unanimous_label.value if row.outcome and row.outcome.unanimous else None,
            "human_label": None,
            "reviewer": None,
        })
    return queue


def apply_reviews(rows: Sequence[DatasetRow], reviews: Iterable[Mapping[str, Any]]) -> int:
    """Fold filled-in review rows back into ``rows``; returns how many applied.

    Review rows with ``human_label: null`` are skipped.
    """
    by_id = {r.sentence.id: r for r in rows}
    n = 0
    for rev in reviews:
        if rev.get("human_label") in (None, ""):
            continue
        sid = str(rev.get("sentence_id"))
        if sid not in by_id:
            raise InputError(f"review for unknown sentence {sid!r}")
        row = by_id[sid]
        row.human_label = Label.true_label(rev["human_label"])
        row.reviewer = str(rev.get("reviewer") or "human")
        row.review_reason = rev.get("reason")
        n += 1
    return n


def audit_selection(rows: Sequence[DatasetRow]) -> list[str]:
    """Top 20% (ceiling) longest Neither sentences by character count.

    Ties keep input order. Only rows whose label is final count.
    """
    neither = [r for r in rows if r.final_label is Label.NEITHER]
    k = math.ceil(AUDIT_FRACTION * len(neither))
    ranked = sorted(enumerate(neither), key=lambda p: (-len(p[1].sentence.text), p[0]))
    return [r.sentence.id for _, r in ranked[:k]]


def dataset_stats(labels: Iterable[Label | None]) -> dict[str, int]:
    """Per-class counts and total of a finalized dataset."""
    counts = Counter()
    for lab in labels:
        if lab is None:
            raise InputError("dataset has unfinalized sentences")
        counts[Label.true_label(lab)] += 1
    out = {lab.value: counts[lab] for lab in TRUE_LABELS}
    out["total"] = sum(counts.values())
    return out


def validate_stats(stats: Mapping[str, int]) -> None:
    """Check a stats mapping: non-negative class counts that sum to ``total``."""
    keys = [lab.value for lab in TRUE_LABELS]
    missing = [k for k in [*keys, "total"] if k not in stats]
    if missing:
        raise InputError(f"stats missing keys {missing}")
    if any(int(stats[k]) < 0 for k in keys):
        raise InputError("negative class count")
    if sum(int(stats[k]) for k in keys) != int(stats["total"]):
        raise InputError(f"class counts sum to {sum(int(stats[k]) for k in keys)}, total is {stats['total']}")


def human_agreement(rows: Sequence[DatasetRow]) -> dict[str, Any]:
    """Human vs unanimous-model agreement over human-reviewed rows.

    Split rows have no model consensus and are left out of the denominator.
    """
    pairs = [
        (r.human_label, r.outcome.unanimous_label)
        for r in rows
        if r.human_label is not None and r.outcome is not None and r.outcome.unanimous
    ]
    agreed = sum(h is m for h, m in pairs)
    return {
        "scope": "human-reviewed rows with a unanimous model label",
        "reviewed": len(pairs),
        "agreed": agreed,
        "rate": agreed / len(pairs) if pairs else None,
    }


def corpus_report(rows: Sequence[DatasetRow]) -> dict[str, Any]:
    outcomes = [r.outcome for r in rows if r.outcome is not None]
    pending = [r.sentence.id for r in rows if r.pending]
    report: dict[str, Any] = {
        "sentences": len(rows),
        "pending": len(pending),
        "disagreement_rate": disagreement_rate(outcomes) if outcomes else None,
        "anomalies": sum(a.anomaly for r in rows for a in r.annotations),
        "human_agreement": human_agreement(rows),
    }
    finals = [r.final_label for r in rows]
    if all(f is not None for f in finals):
        report["counts"] = dataset_stats(finals)
    else:
        report["counts"] = None
        report["provisional_counts"] = dataset_stats([f for f in finals if f is not None])
    return report

