"""Gesture sentence detection: few-shot prompt, response parsing, trigger.

Sentences are labelled Consent, Instruction or Neither. Anything the model
says outside those three becomes ``Unknown``, which never triggers a
gesture.
"""

from __future__ import annotations

import enum
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import BackendError, ConfigError, InputError
from .io import load_yaml
from .llm import DEFAULT_CONCURRENCY, Backend, bounded_map


class Label(str, enum.Enum):
    CONSENT = "Consent"
    INSTRUCTION = "Instruction"
    NEITHER = "Neither"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, value: str | Label) -> Label:
        """Case-insensitive lookup by value or name; raises on anything else."""
        if isinstance(value, Label):
            return value
        key = str(value).strip().upper()
        for lab in cls:
            if lab.name == key:
                return lab
        raise InputError(f"unknown label {value!r}")

    @classmethod
    def true_label(cls, value: str | Label) -> Label:
        lab = cls.parse(value)
        if lab is cls.UNKNOWN:
            raise InputError("Unknown is a prediction-only label")
        return lab

    def __str__(self) -> str:
        return self.value


TRUE_LABELS = (Label.CONSENT, Label.INSTRUCTION, Label.NEITHER)
DEFAULT_CLASS_COUNTS = {Label.INSTRUCTION: 4, Label.CONSENT: 4, Label.NEITHER: 3}


@dataclass(frozen=True)
class Exemplar:
    sentence: str
    label: Label
    reasoning: str
    source: str = "handcrafted"


@dataclass(frozen=True)
class PromptTemplate:
    instruction_header: str
    exemplars: tuple[Exemplar, ...]
    output_format: str
    class_counts: Mapping[Label, int] = field(default_factory=lambda: dict(DEFAULT_CLASS_COUNTS))

    def __post_init__(self) -> None:
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        counts = Counter(e.label for e in self.exemplars)
        want = {Label.parse(k): int(v) for k, v in self.class_counts.items()}
        if any(e.label is Label.UNKNOWN for e in self.exemplars):
            raise ConfigError("exemplars must use true labels")
        if dict(counts) != {k: v for k, v in want.items() if v}:
            raise ConfigError(
                f"exemplar class counts {dict((k.value, v) for k, v in counts.items())} "
                f"do not match configuration {dict((k.value, v) for k, v in want.items())}"
            )
        for token in ("INSTRUCTION", "CONSENT", "NEITHER"):
            if token not in self.output_format:
                raise ConfigError(f"output_format must mention {token}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PromptTemplate:
        try:
            exemplars = tuple(
                Exemplar(
                    sentence=str(e["sentence"]),
                    label=Label.true_label(e["label"]),
                    reasoning=str(e.get("reasoning", "")),
                    source=str(e.get("source", "handcrafted")),
                )
                for e in data["exemplars"]
            )
            counts = {Label.parse(k): int(v) for k, v in (data.get("class_counts") or DEFAULT_CLASS_COUNTS).items()}
            return cls(
                instruction_header=str(data["header"]).rstrip("\n"),
                exemplars=exemplars,
                output_format=str(data["output_format"]).rstrip("\n"),
                class_counts=counts,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise ConfigError(str(exc)) from exc
            raise ConfigError(f"malformed prompt template: {exc!r}") from exc


def load_template(path: str | Path) -> PromptTemplate:
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: template must be a mapping")
    return PromptTemplate.from_dict(data)


def default_template() -> PromptTemplate:
    ref = resources.files("gesturebot") / "data" / "gsd_template.yaml"
    with resources.as_file(ref) as p:
        return load_template(p)


def render_answer(label: Label, reasoning: str) -> str:
    return f"Classification: {label.name}\nReasoning: {reasoning}"


def _render_exemplar(e: Exemplar) -> str:
    return f'Sentence: "{e.sentence}"\n{render_answer(e.label, e.reasoning)}'


def build_prompt(template: PromptTemplate, sentence: str) -> str:
    """Header, answer format, the exemplars, then the open query block.

    The format block is indented so that the only flush-left
    ``Classification:`` lines before the query are the exemplars'.
    """
    text = sentence.strip()
    if not text:
        raise InputError("sentence is empty")
    fmt = "\n".join("    " + line for line in template.output_format.splitlines())
    parts = [
        template.instruction_header,
        "Answer format:\n" + fmt,
        "Examples:",
        *(_render_exemplar(e) for e in template.exemplars),
        "Now classify this sentence:",
        f'Sentence: "{text}"\nClassification:',
    ]
    return "\n\n".join(parts)


def estimate_tokens(text: str, safety: float = 1.5) -> int:
    """Conservative token count: whitespace words times ``safety``."""
    return int(len(text.split()) * safety + 0.999)


_THINK_BLOCK = re.compile(r"<think>.*?</think>", re.IGNORECASE | re.DOTALL)
_THINK_OPEN = re.compile(r"<think>.*\Z", re.IGNORECASE | re.DOTALL)
_THINK_CLOSE = re.compile(r"\A.*?</think>", re.IGNORECASE | re.DOTALL)
_CLASS_LINE = re.compile(r"^[\s*#>_`-]*classification[\s*_`]*:(.*)$", re.IGNORECASE)
_REASON_LINE = re.compile(r"^[\s*#>_`-]*reasoning[\s*_`]*:[\s*_`]*(.*?)\s*$", re.IGNORECASE)
_CATEGORY = re.compile(r"\b(consent|instructions?|neither)\b", re.IGNORECASE)


def strip_think(raw: str) -> str:
    """Remove reasoning blocks, including a dangling open or close tag."""
    text = _THINK_BLOCK.sub("", raw)
    text = _THINK_CLOSE.sub("", text) if re.search("</think>", text, re.I) else text
    return _THINK_OPEN.sub("", text)


def parse_response(raw: str) -> tuple[Label, str]:
    """Extract ``(label, reasoning)`` from arbitrary model output.

    The first ``Classification:`` line after think-block removal decides.
    It must name exactly one category; otherwise the label is Unknown.
    """
    lines = strip_think(raw).splitlines()
    for i, line in enumerate(lines):
        m = _CLASS_LINE.match(line)
        if not m:
            continue
        found = {t.lower().rstrip("s") for t in _CATEGORY.findall(m.group(1))}
        label = Label.parse(found.pop()) if len(found) == 1 else Label.UNKNOWN
        reasoning = ""
        for rest in lines[i + 1 :]:
            r = _REASON_LINE.match(rest)
            if r:
                reasoning = r.group(1).rstrip("*_` ").strip()
                break
        return label, reasoning
    return Label.UNKNOWN, ""


def gesture_trigger(label: Label) -> bool:
    """True only for Consent and Instruction."""
    return label in (Label.CONSENT, Label.INSTRUCTION)


@dataclass(frozen=True)
class ClassificationResult:
    sentence_id: str
    label: Label
    reasoning: str
    raw_response: str
    latency: float

    def to_dict(self, with_latency: bool = True) -> dict[str, Any]:
        d: dict[str, Any] = {
            "sentence_id": self.sentence_id,
            "label": self.label.value,
            "reasoning": self.reasoning,
        }
        if with_latency:
            d["latency_s"] = self.latency
        return d


def classify(
    sentence: str,
    backend: Backend,
    template: PromptTemplate,
    sentence_id: str = "",
) -> ClassificationResult:
    """Prompt the backend and parse its answer.

    Model misbehaviour maps to Unknown; transport errors propagate.
    Replay backends report zero latency so their output is reproducible.
    """
    prompt = build_prompt(template, sentence)
    t0 = time.perf_counter()
    raw = backend.complete(prompt)
    latency = 0.0 if getattr(backend, "replay", False) else time.perf_counter() - t0
    label, reasoning = parse_response(raw)
    return ClassificationResult(sentence_id, label, reasoning, raw, latency)


def classify_many(
    sentences: Sequence[tuple[str, str]],
    backend: Backend,
    template: PromptTemplate,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> list[ClassificationResult | BackendError]:
    """Classify ``(sentence_id, text)`` pairs; transport failures are returned in place."""
    out = bounded_map(lambda item: classify(item[1], backend, template, item[0]), sentences, concurrency)
    for r in out:
        if isinstance(r, BaseException) and not isinstance(r, BackendError):
            raise r
    return out  # type: ignore[return-value]
