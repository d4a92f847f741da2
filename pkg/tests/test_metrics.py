from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import hand_metrics

from gesturebot.errors import EmptyInputError, EvaluationAborted, InputError
from gesturebot.gsd import Label, build_prompt, default_template
from gesturebot.io import read_jsonl
from gesturebot.llm import MockBackend, fingerprint
from gesturebot.metrics import ConfusionMatrix, confusion, eval_model, load_eval_dataset, metrics, plot_confusion

C, I, N, U = Label.CONSENT, Label.INSTRUCTION, Label.NEITHER, Label.UNKNOWN

REFERENCE_MATRIX = [[101, 0, 6, 10], [28, 711, 135, 38], [26, 86, 2567, 28]]

# e6-0 C->C, e6-1 C->Unknown, e6-2 I->I, e6-3 I->N, e6-4 N->N, e6-5 N->C
EVAL6_MATRIX = [[1, 0, 0, 1], [0, 1, 1, 0], [1, 0, 1, 0]]


def dataset(fixtures, name):
    return load_eval_dataset(read_jsonl(fixtures / "gsd" / name))


class TestConfusion:
    def test_counts(self):
        m = confusion([C, C, I, N], [C, U, N, N])
        assert m.counts.tolist() == [[1, 0, 0, 1], [0, 0, 1, 0], [0, 0, 1, 0]]

    def test_unknown_truth_rejected(self):
        with pytest.raises(InputError):
            confusion([U], [C])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            confusion([C], [])

    def test_shape(self):
        with pytest.raises(InputError):
            ConfusionMatrix(np.zeros((3, 3)))

    def test_csv(self):
        csv = ConfusionMatrix(EVAL6_MATRIX).to_csv().splitlines()
        assert csv[0] == "true\\pred,Consent,Instruction,Neither,Unknown"
        assert csv[1] == "Consent,1,0,0,1"


class TestMetrics:
    def test_reference_matrix_anchor(self):
        r = metrics(ConfusionMatrix(REFERENCE_MATRIX))
        assert r.total == 3736
        assert r.accuracy == 3379 / 3736
        assert r.unknown == 76

    def test_matches_hand_oracle_reference_matrix(self):
        r, h = metrics(ConfusionMatrix(REFERENCE_MATRIX)), hand_metrics(REFERENCE_MATRIX)
        assert r.weighted_precision == pytest.approx(h["wp"], abs=1e-12)
        assert r.weighted_recall == pytest.approx(h["wr"], abs=1e-12)
        assert r.weighted_f1 == pytest.approx(h["wf"], abs=1e-12)

    def test_eval6_hand_values(self):
        r = metrics(ConfusionMatrix(EVAL6_MATRIX))
        assert r.accuracy == pytest.approx(0.5)
        assert r.per_class[C].precision == pytest.approx(0.5)
        assert r.per_class[I].precision == pytest.approx(1.0)
        assert r.per_class[I].f1 == pytest.approx(2 / 3)
        assert r.weighted_precision == pytest.approx(2 / 3)
        assert r.weighted_recall == pytest.approx(0.5)
        assert r.weighted_f1 == pytest.approx(5 / 9)

    def test_weighted_recall_equals_accuracy_without_unknowns(self):
        r = metrics(ConfusionMatrix([[3, 1, 0, 0], [0, 5, 2, 0], [1, 0, 9, 0]]))
        assert r.weighted_recall == pytest.approx(r.accuracy)

    def test_undefined_precision_flagged(self):
        r = metrics(ConfusionMatrix([[0, 0, 0, 2], [0, 3, 0, 0], [0, 0, 1, 0]]))
        assert r.per_class[C].precision == 0.0 and r.per_class[C].precision_undefined
        assert not r.per_class[I].precision_undefined

    def test_missing_class_flagged(self):
        r = metrics(ConfusionMatrix([[0, 0, 0, 0], [0, 3, 0, 0], [0, 1, 1, 0]]))
        assert r.per_class[C].recall_undefined and r.per_class[C].support == 0

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            metrics(ConfusionMatrix(np.zeros((3, 4))))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.int64, (3, 4), elements=st.integers(0, 50)).filter(lambda a: a.sum() > 0))
    def test_property_vs_oracle(self, counts):
        r, h = metrics(ConfusionMatrix(counts)), hand_metrics(counts.tolist())
        assert r.accuracy == pytest.approx(h["accuracy"], abs=1e-12)
        assert r.weighted_precision == pytest.approx(h["wp"], abs=1e-12)
        assert r.weighted_f1 == pytest.approx(h["wf"], abs=1e-12)
        assert 0.0 <= r.weighted_f1 <= 1.0

    def test_table_lists_every_class(self):
        text = metrics(ConfusionMatrix(REFERENCE_MATRIX)).table()
        for lab in ("Consent", "Instruction", "Neither", "weighted F1", "0.9044"):
            assert lab in text


class TestEvalModel:
    def test_eval6_matrix(self, fixtures):
        backend = MockBackend.from_file(fixtures / "gsd" / "eval_6_responses.json")
        run = eval_model(dataset(fixtures, "eval_6.jsonl"), backend, default_template())
        assert run.matrix.counts.tolist() == EVAL6_MATRIX
        assert run.valid and run.failures == 0
        assert [e["pred"] for e in run.log] == ["Consent", "Unknown", "Instruction", "Neither", "Neither", "Consent"]

    def test_eval50_matrix(self, fixtures):
        backend = MockBackend.from_file(fixtures / "gsd" / "eval_50_responses.json")
        run = eval_model(dataset(fixtures, "eval_50.jsonl"), backend, default_template())
        assert run.matrix.counts.tolist() == [[12, 1, 1, 1], [1, 12, 2, 0], [0, 2, 17, 1]]

    def test_small_failure_rate_tolerated(self, fixtures):
        data = dataset(fixtures, "eval_50.jsonl")
        fx = MockBackend.from_file(fixtures / "gsd" / "eval_50_responses.json").fixtures
        fx.pop(fingerprint(build_prompt(default_template(), data[0][1])))
        run = eval_model(data, MockBackend(fx), default_template())
        assert run.failures == 1 and run.matrix.total == 49

    def test_abort_above_five_percent(self, fixtures):
        data = dataset(fixtures, "eval_50.jsonl")
        fx = MockBackend.from_file(fixtures / "gsd" / "eval_50_responses.json").fixtures
        for _, text, _ in data[:3]:
            fx.pop(fingerprint(build_prompt(default_template(), text)))
        with pytest.raises(EvaluationAborted) as ei:
            eval_model(data, MockBackend(fx), default_template())
        assert ei.value.partial.valid is False
        assert ei.value.exit_code == 3

    def test_load_dataset_rejects_unknown_truth(self):
        with pytest.raises(InputError):
            load_eval_dataset([{"id": "a", "text": "t", "label": "Unknown"}])

    def test_plot(self, tmp_path):
        p = tmp_path / "cm.png"
        plot_confusion(ConfusionMatrix(REFERENCE_MATRIX), p, title="fixture")
        assert p.read_bytes()[:4] == b"\x89PNG"
