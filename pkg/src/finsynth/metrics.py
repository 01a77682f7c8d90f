"""Scoring predicted programs and answers against dataset records.

Two headline numbers:

* program accuracy (PA): the predicted program equals the gold program after
  canonicalization. Lexical normalization only; add(2, 3) and add(3, 2) are
  different programs. Unparseable predictions score zero.
* execution accuracy (EA): the predicted answer matches the gold answer,
  numeric answers compared at five decimal places. When a prediction carries
  only a program, it is executed against the record's variable bindings to
  get an answer.

An explicit answer on a prediction is authoritative for EA; the program is a
fallback, not a cross-check. EA is at least PA on any set of predictions
whose answers agree with their own programs, and the aggregate result checks
that relation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .dsl import DslError, canonicalize, execute, parse_program, serialize_program

ANSWER_TOLERANCE = 1e-5

_PREDICTION_KEYS = {"id", "predicted_program", "predicted_answer"}


class MetricsError(Exception):
    pass


class PredictionFormatError(MetricsError):
    pass


class UnknownExampleIdError(MetricsError):
    pass


@dataclass(frozen=True)
class Prediction:
    """One model output: a program, an answer, or both."""

    id: str
    program: str | None = None
    answer: float | str | None = None

    def validate(self) -> "Prediction":
        if not isinstance(self.id, str) or not self.id:
            raise PredictionFormatError("prediction id must be a non-empty string")
        if self.program is not None and not isinstance(self.program, str):
            raise PredictionFormatError(f"{self.id}: program must be a string")
        if self.answer is not None:
            if isinstance(self.answer, bool) or not isinstance(self.answer, (int, float, str)):
                raise PredictionFormatError(f"{self.id}: answer must be a number or yes/no")
            if isinstance(self.answer, str) and self.answer not in ("yes", "no"):
                raise PredictionFormatError(f"{self.id}: string answers must be yes or no")
        if self.program is None and self.answer is None:
            raise PredictionFormatError(f"{self.id}: prediction carries neither program nor answer")
        return self


@dataclass(frozen=True)
class Verdict:
    """Per-example outcome; reason explains a false verdict when known."""

    id: str
    program_correct: bool
    execution_correct: bool
    reason: str | None = None


@dataclass(frozen=True)
class EvalResult:
    n: int
    pa_count: int
    ea_count: int
    verdicts: tuple[Verdict, ...]

    def __post_init__(self):
        if not 0 <= self.pa_count <= self.ea_count <= self.n:
            raise MetricsError(
                f"inconsistent counts: PA {self.pa_count} > EA {self.ea_count}; "
                "some prediction's stated answer contradicts its own correct program"
            )

    @property
    def program_accuracy(self) -> float:
        return self.pa_count / self.n if self.n else 0.0

    @property
    def execution_accuracy(self) -> float:
        return self.ea_count / self.n if self.n else 0.0

    def summary(self) -> dict:
        return {
            "examples": self.n,
            "pa_count": self.pa_count,
            "ea_count": self.ea_count,
            "program_accuracy": self.program_accuracy,
            "execution_accuracy": self.execution_accuracy,
        }


def read_predictions(path: str) -> list[Prediction]:
    """Load a JSON array of {"id", "predicted_program"?, "predicted_answer"?}."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise PredictionFormatError("top level: expected a JSON array of predictions")
    out = []
    for i, row in enumerate(data):
        if not isinstance(row, dict) or not set(row) <= _PREDICTION_KEYS:
            raise PredictionFormatError(f"predictions[{i}]: unexpected shape")
        out.append(
            Prediction(
                id=row.get("id", ""),
                program=row.get("predicted_program"),
                answer=row.get("predicted_answer"),
            ).validate()
        )
    return out


def _canonical(text: str) -> str:
    return serialize_program(canonicalize(parse_program(text)))


def program_accuracy(pred_program: str | None, gold_program: str) -> bool:
    """Equality after canonicalization; anything unparseable scores zero."""
    correct, _ = _program_verdict(pred_program, gold_program)
    return correct


def _program_verdict(pred_program: str | None, gold_program: str) -> tuple[bool, str | None]:
    if pred_program is None:
        return False, "no program"
    try:
        canonical = _canonical(pred_program)
    except DslError as err:
        return False, f"parse failure: {type(err).__name__}"
    if canonical == _canonical(gold_program):
        return True, None
    return False, None


def answer_match(
    predicted: float | str | bool | None,
    gold: float | str,
    tol: float = ANSWER_TOLERANCE,
) -> bool:
    """Numeric answers agree within tol at five places; yes/no exactly."""
    if predicted is None:
        return False
    if isinstance(predicted, bool):
        predicted = "yes" if predicted else "no"
    if isinstance(gold, str) or isinstance(predicted, str):
        return predicted == gold
    p, g = float(predicted), float(gold)
    if not (math.isfinite(p) and math.isfinite(g)):
        return False
    # Integer ticks of 1e-5 keep the boundary exact: a difference of exactly
    # tol must match, and binary float subtraction would put it a hair over.
    return abs(round(p * 1e5) - round(g * 1e5)) <= round(tol * 1e5)


def execution_accuracy(
    pred: Prediction,
    gold_answer: float | str,
    tol: float = ANSWER_TOLERANCE,
    bindings: Mapping[str, float] | None = None,
) -> bool:
    """Answer match, executing the predicted program when no answer is given."""
    correct, _ = _execution_verdict(pred, gold_answer, tol, bindings or {})
    return correct


def _execution_verdict(
    pred: Prediction,
    gold_answer: float | str,
    tol: float,
    bindings: Mapping[str, float],
) -> tuple[bool, str | None]:
    if pred.answer is not None:
        return answer_match(pred.answer, gold_answer, tol), None
    if pred.program is None:
        return False, "no answer"
    try:
        value = execute(parse_program(pred.program), bindings)
    except DslError as err:
        return False, f"execution failure: {type(err).__name__}"
    return answer_match(value, gold_answer, tol), None


def evaluate(
    predictions: Sequence[Prediction],
    records: Sequence[Mapping],
    tol: float = ANSWER_TOLERANCE,
) -> EvalResult:
    """Score predictions against gold records.

    Every record counts in the denominator; records without a prediction
    score zero on both metrics. Predictions for unknown ids are an error, as
    are duplicate predictions for one id. Prediction order does not matter:
    verdicts come back in record order.
    """
    by_id: dict[str, Prediction] = {}
    known = {r["id"] for r in records}
    for prediction in predictions:
        if prediction.id not in known:
            raise UnknownExampleIdError(f"prediction for unknown example {prediction.id!r}")
        if prediction.id in by_id:
            raise PredictionFormatError(f"duplicate prediction for {prediction.id!r}")
        by_id[prediction.id] = prediction

    verdicts = []
    for record in records:
        prediction = by_id.get(record["id"])
        if prediction is None:
            verdicts.append(Verdict(record["id"], False, False, "missing prediction"))
            continue
        pa, pa_reason = _program_verdict(prediction.program, record["qa"]["program"])
        meta = record.get("meta") or {}
        ea, ea_reason = _execution_verdict(
            prediction, record["qa"]["exe_ans"], tol, meta.get("bindings") or {}
        )
        verdicts.append(Verdict(record["id"], pa, ea, pa_reason or ea_reason))
    return EvalResult(
        n=len(records),
        pa_count=sum(v.program_correct for v in verdicts),
        ea_count=sum(v.execution_correct for v in verdicts),
        verdicts=tuple(verdicts),
    )
