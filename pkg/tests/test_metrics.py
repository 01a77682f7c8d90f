import json
import random

import pytest

from finsynth.dsl import Step, execute, parse_program, serialize_program
from finsynth.metrics import (
    EvalResult,
    MetricsError,
    Prediction,
    PredictionFormatError,
    UnknownExampleIdError,
    answer_match,
    evaluate,
    execution_accuracy,
    program_accuracy,
    read_predictions,
)

from oracles import gen_bindings, gen_program


def _record(rid, program, exe_ans, bindings=None):
    return {
        "id": rid,
        "qa": {"program": program, "exe_ans": exe_ans},
        "meta": {"bindings": bindings or {}},
    }


# ---------------------------------------------------------------------------
# Program accuracy


def test_program_accuracy_ignores_spacing_and_case():
    assert program_accuracy("divide(2449.9,15191.5)", "divide(2449.9, 15191.5)")
    assert program_accuracy("ADD(A, B)", "add(a, b)")


def test_program_accuracy_identical_strings():
    assert program_accuracy("add(2, 3)", "add(2, 3)")


def test_program_accuracy_no_commutativity():
    assert not program_accuracy("add(2, 3)", "add(3, 2)")


def test_program_accuracy_unparseable_is_false():
    assert not program_accuracy("frobnicate(2, 3)", "add(2, 3)")
    assert not program_accuracy("add(2", "add(2, 3)")
    assert not program_accuracy(None, "add(2, 3)")


def test_program_accuracy_equivalence_relation():
    rng = random.Random(11)
    texts = [serialize_program(gen_program(rng)) for _ in range(30)]
    variants = [(s, s.upper(), s.replace(", ", ",")) for s in texts]
    for a, b, c in variants:
        assert program_accuracy(a, a)
        assert program_accuracy(a, b) == program_accuracy(b, a)
        assert program_accuracy(a, b) and program_accuracy(b, c)
        assert program_accuracy(a, c)
    for (a, _, _), (d, _, _) in zip(variants, variants[1:]):
        assert not program_accuracy(a, d)


# ---------------------------------------------------------------------------
# Answer and execution accuracy


def test_answer_match_tolerance():
    assert answer_match(0.16127, 0.16127)
    assert answer_match(0.16128, 0.16127)
    assert not answer_match(0.16129, 0.16127)
    assert answer_match(0.16129, 0.16127, tol=1e-3)


def test_answer_match_rounds_before_comparing():
    assert answer_match(2.871434999, 2.87143)


def test_answer_match_yes_no():
    assert answer_match("yes", "yes")
    assert not answer_match("no", "yes")
    assert answer_match(True, "yes")
    assert answer_match(False, "no")
    assert not answer_match("yes", 1.0)
    assert not answer_match(1.0, "yes")


def test_execution_accuracy_prefers_stated_answer():
    pred = Prediction("x", program="add(1, 1)", answer=5.0)
    assert execution_accuracy(pred, 5.0)
    assert not execution_accuracy(pred, 2.0)


def test_execution_accuracy_executes_program():
    pred = Prediction("x", program="add(3, 2)")
    assert execution_accuracy(pred, 5.0)
    assert not execution_accuracy(pred, 6.0)


def test_execution_accuracy_uses_bindings():
    pred = Prediction("x", program="divide(ebit_2011, interest_expense_2011)")
    bindings = {"ebit_2011": 10.0, "interest_expense_2011": 4.0}
    assert execution_accuracy(pred, 2.5, bindings=bindings)


def test_execution_accuracy_failure_is_false():
    assert not execution_accuracy(Prediction("x", program="divide(1, 0)"), 5.0)
    assert not execution_accuracy(Prediction("x", program="add(missing, 1)"), 5.0)
    assert not execution_accuracy(Prediction("x", program="add(1"), 5.0)


# ---------------------------------------------------------------------------
# evaluate


def _perfect_set():
    records = [
        _record("a", "add(2, 3)", 5.0),
        _record("b", "divide(2449.9, 15191.5)", 0.16127),
        _record("c", "greater(2, 1)", "yes"),
        _record("d", "divide(x_2011, y_2011)", 2.5, {"x_2011": 10.0, "y_2011": 4.0}),
    ]
    predictions = [Prediction(r["id"], program=r["qa"]["program"]) for r in records]
    return records, predictions


def test_evaluate_perfect():
    records, predictions = _perfect_set()
    result = evaluate(predictions, records)
    assert result.program_accuracy == result.execution_accuracy == 1.0
    assert result.pa_count == result.ea_count == result.n == 4
    assert all(v.program_correct and v.execution_correct for v in result.verdicts)


def test_evaluate_half_blanked():
    records, predictions = _perfect_set()
    result = evaluate(predictions[:2], records)
    assert result.program_accuracy == result.execution_accuracy == 0.5
    missing = [v for v in result.verdicts if v.reason == "missing prediction"]
    assert len(missing) == 2 and not any(v.execution_correct for v in missing)


def test_evaluate_order_independent():
    records, predictions = _perfect_set()
    forward = evaluate(predictions, records)
    backward = evaluate(list(reversed(predictions)), records)
    assert forward == backward
    assert [v.id for v in forward.verdicts] == [r["id"] for r in records]


def test_evaluate_commutative_perturbation():
    records, _ = _perfect_set()
    predictions = []
    for r in records:
        program = parse_program(r["qa"]["program"])
        steps = [
            Step(s.op, (s.args[1], s.args[0])) if s.op in ("add", "multiply") else s
            for s in program.steps
        ]
        predictions.append(
            Prediction(r["id"], program=serialize_program(type(program)(tuple(steps))))
        )
    result = evaluate(predictions, records)
    assert result.execution_accuracy == 1.0
    assert result.program_accuracy < 1.0


def test_evaluate_unknown_id():
    records, predictions = _perfect_set()
    with pytest.raises(UnknownExampleIdError):
        evaluate(predictions + [Prediction("zzz", answer=1.0)], records)


def test_evaluate_duplicate_prediction():
    records, predictions = _perfect_set()
    with pytest.raises(PredictionFormatError, match="duplicate"):
        evaluate(predictions + [predictions[0]], records)


def test_evaluate_records_failure_reasons():
    records = [_record("a", "add(2, 3)", 5.0), _record("b", "add(2, 3)", 5.0)]
    predictions = [
        Prediction("a", program="add(2"),
        Prediction("b", program="divide(1, 0)"),
    ]
    result = evaluate(predictions, records)
    reasons = {v.id: v.reason for v in result.verdicts}
    assert "parse failure" in reasons["a"]
    assert "execution failure: DivisionByZeroError" in reasons["b"]


def test_contradictory_prediction_rejected():
    records = [_record("a", "add(2, 3)", 5.0)]
    with pytest.raises(MetricsError, match="contradicts"):
        evaluate([Prediction("a", program="add(2, 3)", answer=9.0)], records)


def test_eval_result_invariant():
    with pytest.raises(MetricsError):
        EvalResult(n=2, pa_count=2, ea_count=1, verdicts=())
    empty = EvalResult(n=0, pa_count=0, ea_count=0, verdicts=())
    assert empty.program_accuracy == empty.execution_accuracy == 0.0


def test_execution_at_least_program_accuracy_on_random_programs():
    records = [_record("swap-seed", "add(2, 3)", 5.0)]
    predictions = [Prediction("swap-seed", program="add(3, 2)")]
    for i in range(300):
        rng = random.Random(i)
        program = gen_program(rng)
        bindings = gen_bindings(rng)
        try:
            value = execute(program, bindings)
        except Exception:
            continue
        exe_ans = ("yes" if value else "no") if isinstance(value, bool) else round(value, 5)
        rid = f"case-{i}"
        records.append(_record(rid, serialize_program(program), exe_ans, bindings))
        steps = [
            Step(s.op, (s.args[1], s.args[0])) if s.op in ("add", "multiply") else s
            for s in program.steps
        ]
        predictions.append(Prediction(rid, program=serialize_program(type(program)(tuple(steps)))))
    assert len(records) > 100
    result = evaluate(predictions, records)
    assert result.execution_accuracy == 1.0
    assert result.program_accuracy < result.execution_accuracy


# ---------------------------------------------------------------------------
# Prediction files


def test_read_predictions(tmp_path):
    path = tmp_path / "preds.json"
    path.write_text(
        json.dumps(
            [
                {"id": "a", "predicted_program": "add(2, 3)"},
                {"id": "b", "predicted_answer": 0.5},
                {"id": "c", "predicted_program": "add(1, 1)", "predicted_answer": "yes"},
            ]
        )
    )
    preds = read_predictions(str(path))
    assert preds == [
        Prediction("a", program="add(2, 3)"),
        Prediction("b", answer=0.5),
        Prediction("c", program="add(1, 1)", answer="yes"),
    ]


@pytest.mark.parametrize(
    "payload, message",
    [
        ({"id": "a"}, "neither program nor answer"),
        ({"id": "", "predicted_answer": 1}, "non-empty"),
        ({"id": "a", "program": "add(1, 2)"}, "unexpected shape"),
        ({"id": "a", "predicted_answer": "maybe"}, "yes or no"),
        ({"id": "a", "predicted_answer": True}, "number or yes/no"),
        ({"id": "a", "predicted_answer": [1]}, "number or yes/no"),
    ],
)
def test_read_predictions_rejects(tmp_path, payload, message):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([payload]))
    with pytest.raises(PredictionFormatError, match=message):
        read_predictions(str(path))


def test_read_predictions_rejects_non_array(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"id": "a"}')
    with pytest.raises(PredictionFormatError, match="array"):
        read_predictions(str(path))
