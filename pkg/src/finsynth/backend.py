"""Pluggable text generation backend for report synthesis.

Two implementations of the same one-method interface:

* LiveBackend posts chat-completion requests to an OpenAI-compatible
  endpoint, with bounded retries on 429/5xx, jittered exponential backoff
  and a concurrency cap. The API key is read from an environment variable
  at call time and never stored or logged.
* MockBackend is a pure function of (prompt, seed). It keeps an internal
  value ledger so that every number it puts into a table or sentence can be
  recovered exactly by a later extract request with the same reference id.
  All offline tests and the default pipeline run against it.

Prompts are built deterministically from a PromptRequest; the payload is
rendered as `Key: value` lines that both the mock and a live model can read.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import requests

from .dsl import Program, execute
from .seeding import draw_value, stable_seed

TASK_KINDS = ("table", "table_text", "text", "text_table", "extract")
SHOT_MODES = {"zero": 0, "one": 1, "few": 4}
DEFAULT_RANGE = (100.0, 100000.0)
DEFAULT_API_KEY_ENV = "FINSYNTH_API_KEY"


class BackendError(Exception):
    """Base class for backend failures."""


class AuthError(BackendError):
    """API key environment variable unset, or the server rejected the key."""


class RateLimitedError(BackendError):
    """Still throttled after exhausting retries."""


class ServerError(BackendError):
    """5xx from the endpoint after exhausting retries."""


class BadRequestError(BackendError):
    """Non-retryable 4xx from the endpoint."""


class RequestTimeoutError(BackendError):
    pass


class MalformedResponseError(BackendError):
    """Response body did not carry a completion."""


class ExemplarCountMismatchError(BackendError):
    """Number of exemplars does not match the shot mode."""


class UnknownTaskKindError(BackendError):
    pass


class NoTableFoundError(BackendError):
    pass


class RaggedRowsError(BackendError):
    pass


class MockDataError(BackendError):
    """MockBackend could not honor a request (bad prompt or cyclic formulas)."""


@dataclass(frozen=True)
class PromptRequest:
    """One generation task: what to produce, for which items and years."""

    task_kind: str
    payload: Mapping[str, str]
    shot_mode: str = "zero"
    exemplars: tuple[tuple[Mapping[str, str], str], ...] = ()

    def validate(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise UnknownTaskKindError(self.task_kind)
        if self.shot_mode not in SHOT_MODES:
            raise BackendError(f"unknown shot mode {self.shot_mode!r}")
        expected = SHOT_MODES[self.shot_mode]
        if len(self.exemplars) != expected:
            raise ExemplarCountMismatchError(
                f"{self.shot_mode}-shot wants {expected} exemplars, got {len(self.exemplars)}"
            )


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o-mini"
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_retries: int = 3
    backoff_base_ms: int = 250
    timeout_s: float = 30.0
    max_concurrency: int = 4
    temperature: float = 0.7


class TextBackend(Protocol):
    def complete(self, prompt: str, *, temperature: float | None = None) -> str:
        ...


_INSTRUCTIONS = {
    "table": (
        "You are writing a fragment of a company financial report.\n"
        "Produce a markdown table with a header row `| item | <year> ... |`,\n"
        "one row per item and one column per year. Format every amount like\n"
        "$1,234.56 and output nothing but the table."
    ),
    "table_text": (
        "You are writing a fragment of a company financial report.\n"
        "Write a short paragraph introducing the table below. Mention the\n"
        "items and the years covered, but do not state any amounts."
    ),
    "text": (
        "You are writing a fragment of a company financial report.\n"
        "Write one sentence per item and year of the form\n"
        "`In <year>, the company reported <item> of $<amount>.` followed by\n"
        "a closing sentence without figures."
    ),
    "text_table": (
        "You are writing a fragment of a company financial report.\n"
        "Produce a markdown table of supplementary items, with a header row\n"
        "`| item | <year> ... |`, one row per item and one column per year.\n"
        "Format every amount like $1,234.56 and output nothing but the table."
    ),
    "extract": (
        "Read the report fragment and return every requested value as a line\n"
        "`item | year | value`, using the item names exactly as listed and\n"
        "plain decimal numbers. Output nothing else."
    ),
}

_PAYLOAD_KEYS = ("items", "years", "reference", "table", "text", "report")


def _render_payload(payload: Mapping[str, str]) -> str:
    lines = []
    for key in _PAYLOAD_KEYS:
        if key in payload:
            value = payload[key]
            if "\n" in value:
                lines.append(f"{key.capitalize()}:\n{value}")
            else:
                lines.append(f"{key.capitalize()}: {value}")
    for key in payload:
        if key not in _PAYLOAD_KEYS:
            raise BackendError(f"unknown payload key {key!r}")
    return "\n".join(lines)


def build_prompt(request: PromptRequest) -> str:
    """Deterministic prompt text for a request, exemplars included."""
    request.validate()
    parts = [f"Task: {request.task_kind}\n" + _INSTRUCTIONS[request.task_kind]]
    for payload, response in request.exemplars:
        parts.append("Example:\n" + _render_payload(payload) + "\nResponse:\n" + response)
    parts.append(_render_payload(request.payload))
    return "\n\n".join(parts) + "\n"


def parse_table_response(text: str) -> list[list[str]]:
    """First markdown pipe table in the text, as rows of stripped cells.

    Separator rows (`| --- | --- |`) are dropped. All remaining rows must
    have the same width.
    """
    rows: list[list[str]] = []
    in_table = False
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("|"):
            in_table = True
            cells = [c.strip() for c in line.strip("|").split("|")]
            if all(set(c) <= set("-: ") and c for c in cells):
                continue
            rows.append(cells)
        elif in_table:
            break
    if not rows:
        raise NoTableFoundError("no markdown table in response")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise RaggedRowsError(f"rows of unequal width: {[len(r) for r in rows]}")
    return rows


# ---------------------------------------------------------------------------
# Live backend


class LiveBackend:
    """OpenAI-compatible chat completion client with retry and throttling."""

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self._gate = threading.Semaphore(self.config.max_concurrency)

    def complete(self, prompt: str, *, temperature: float | None = None) -> str:
        cfg = self.config
        api_key = os.environ.get(cfg.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {cfg.api_key_env} is not set")
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature if temperature is None else temperature,
        }
        last_status = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = (cfg.backoff_base_ms / 1000.0) * (2 ** (attempt - 1))
                time.sleep(delay + random.uniform(0, delay / 2))
            with self._gate:
                try:
                    resp = requests.post(
                        cfg.endpoint,
                        json=body,
                        headers={"Authorization": f"Bearer {api_key}"},
                        timeout=cfg.timeout_s,
                    )
                except requests.Timeout as exc:
                    raise RequestTimeoutError(f"no response in {cfg.timeout_s}s") from exc
            last_status = resp.status_code
            if resp.status_code == 200:
                return _completion_text(resp)
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                continue
            raise BadRequestError(f"status {resp.status_code}: {resp.text[:200]}")
        if last_status == 429:
            raise RateLimitedError(f"throttled after {cfg.max_retries + 1} attempts")
        raise ServerError(f"status {last_status} after {cfg.max_retries + 1} attempts")


def _completion_text(resp: requests.Response) -> str:
    try:
        data = resp.json()
        text = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"unexpected body: {resp.text[:200]}") from exc
    if not isinstance(text, str) or not text.strip():
        raise MalformedResponseError("empty completion")
    return text


# ---------------------------------------------------------------------------
# Mock backend


@dataclass
class MockBackend:
    """Deterministic stand-in for a live model.

    Values come from an internal ledger: leaf variables are log-uniform
    draws from their configured range, seeded by (backend seed, reference
    id, variable, year); derived variables are computed through the seed
    formula registry. Everything is rounded to cents, so the exact float
    shown in a table is the exact float an extract request returns.
    """

    formulas: Mapping[str, Program] = field(default_factory=dict)
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    seed: int = 0

    def complete(self, prompt: str, *, temperature: float | None = None) -> str:
        fields = _parse_prompt(prompt)
        kind = fields.get("task_kind")
        if kind in ("table", "text_table"):
            return self._render_table(fields)
        if kind == "table_text":
            return self._render_intro(fields)
        if kind == "text":
            return self._render_sentences(fields)
        if kind == "extract":
            return self._render_extraction(fields)
        raise MockDataError(f"prompt does not name a known task: {kind!r}")

    # ledger ------------------------------------------------------------

    def ledger_value(self, var: str, year: int, reference: int) -> float:
        """The one value this backend will ever emit for (var, year, ref)."""
        return self._value(var, year, reference, ())

    def _value(self, var: str, year: int, reference: int, trail: tuple[str, ...]) -> float:
        if var in trail:
            raise MockDataError(f"cyclic formula chain at {var!r}")
        program = self.formulas.get(var)
        if program is None:
            lo, hi = self.ranges.get(var, DEFAULT_RANGE)
            return draw_value(lo, hi, stable_seed(self.seed, reference, var, year))
        bindings = {
            name: self._value(name, year, reference, trail + (var,))
            for name in program.variables()
        }
        result = execute(program, bindings)
        if isinstance(result, bool):
            raise MockDataError(f"formula for {var!r} yields a boolean")
        return round(result, 2)

    # renderers ----------------------------------------------------------

    def _render_table(self, fields: Mapping[str, object]) -> str:
        items, years, ref = _require(fields, "items", "years", "reference")
        header = "| item | " + " | ".join(str(y) for y in years) + " |"
        sep = "| --- |" + " --- |" * len(years)
        lines = [header, sep]
        for var in items:
            cells = [
                _money(self.ledger_value(var, y, ref)) for y in years
            ]
            lines.append(f"| {_display(var)} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def _render_intro(self, fields: Mapping[str, object]) -> str:
        items, years, ref = _require(fields, "items", "years", "reference")
        names = _join_names([_display(v) for v in items])
        span = _join_names([str(y) for y in years])
        closers = (
            "Management considers these figures representative of ordinary operations.",
            "Amounts are presented in thousands unless otherwise noted.",
            "No adjustments were applied to previously reported balances.",
        )
        closer = closers[stable_seed(self.seed, ref, "intro") % len(closers)]
        return (
            f"The following table sets forth the {names} of the company "
            f"for {span}. {closer}\n"
        )

    def _render_sentences(self, fields: Mapping[str, object]) -> str:
        items, years, ref = _require(fields, "items", "years", "reference")
        lines = []
        for var in items:
            for y in years:
                value = _money(self.ledger_value(var, y, ref))
                lines.append(f"In {y}, the company reported {_display(var)} of {value}.")
        lines.append("These results reflect the company's continuing operations.")
        return " ".join(lines) + "\n"

    def _render_extraction(self, fields: Mapping[str, object]) -> str:
        items, years, ref = _require(fields, "items", "years", "reference")
        lines = []
        for var in items:
            for y in years:
                value = self.ledger_value(var, y, ref)
                lines.append(f"{var} | {y} | {value:.2f}")
        return "\n".join(lines) + "\n"


def _display(var: str) -> str:
    return var.replace("_", " ")


def _money(value: float) -> str:
    return f"${value:,.2f}"


def _join_names(names: Sequence[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _parse_prompt(prompt: str) -> dict[str, object]:
    """Pick the task kind and the final payload fields out of a prompt.

    Exemplar blocks repeat the payload keys, so the last occurrence wins.
    """
    fields: dict[str, object] = {}
    for line in prompt.splitlines():
        if line.startswith("Task:") and "task_kind" not in fields:
            fields["task_kind"] = line[5:].strip()
        elif line.startswith("Items:"):
            fields["items"] = [v.strip() for v in line[6:].split(",") if v.strip()]
        elif line.startswith("Years:"):
            try:
                fields["years"] = [int(v) for v in line[6:].split(",")]
            except ValueError as exc:
                raise MockDataError(f"bad years line {line!r}") from exc
        elif line.startswith("Reference:"):
            try:
                fields["reference"] = int(line[10:])
            except ValueError as exc:
                raise MockDataError(f"bad reference line {line!r}") from exc
    return fields


def _require(fields: Mapping[str, object], *keys: str):
    out = []
    for key in keys:
        if key not in fields:
            raise MockDataError(f"prompt is missing {key!r}")
        out.append(fields[key])
    return out


def load_exemplars(path: str) -> dict[str, tuple[tuple[dict[str, str], str], ...]]:
    """Read shot exemplars from JSON: {task_kind: [[payload, response], ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    out: dict[str, tuple[tuple[dict[str, str], str], ...]] = {}
    for kind, pairs in raw.items():
        if kind not in TASK_KINDS:
            raise BackendError(f"exemplar file names unknown task {kind!r}")
        out[kind] = tuple((dict(p), r) for p, r in pairs)
    return out


def exemplars_for(
    table: Mapping[str, tuple[tuple[dict[str, str], str], ...]],
    task_kind: str,
    shot_mode: str,
) -> tuple[tuple[dict[str, str], str], ...]:
    """Slice the right number of exemplars for a shot mode."""
    want = SHOT_MODES[shot_mode]
    if want == 0:
        return ()
    have = table.get(task_kind, ())
    if len(have) < want:
        raise ExemplarCountMismatchError(
            f"{task_kind}: {shot_mode}-shot wants {want} exemplars, file has {len(have)}"
        )
    return tuple(have[:want])
