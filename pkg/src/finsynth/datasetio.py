"""Dataset records, JSON round-trip, conversion, splits and stats.

Records follow the common financial QA layout: report text around a table,
plus a qa block with question, program, executable answer and the supporting
report units:

    {
      "id": "...",
      "pre_text": ["sentence", ...],
      "post_text": ["sentence", ...],
      "table": [["", "2016", "2017"], ["revenue", "$1.00", "$2.00"], ...],
      "qa": {
        "question": "...",
        "program": "divide(ebit_2016, interest_expense_2016)",
        "exe_ans": 2.87413,
        "gold_inds": {"table_1": "the revenue of 2016 is $1.00 ; ..."}
      },
      "meta": {...}
    }

gold_inds keys index sentences as text_k over pre_text + post_text
concatenated, and table rows as table_k with the header at k=0.
"""

from __future__ import annotations

import json
import random
import re
import uuid
from typing import Iterable, Mapping, Sequence

from .dsl import DslError, execute, parse_program, program_from_infix, serialize_program
from .genpipe import Example, FinancialReport, match_supporting_facts, row_to_text, split_sentences

DEV_FRACTION = 0.10
TEST_FRACTION = 0.15

_GOLD_KEY = re.compile(r"(text|table)_(\d+)")


class DatasetError(Exception):
    pass


class SchemaError(DatasetError):
    """A record does not match the dataset schema; message names the field."""


class TooFewExamplesError(DatasetError):
    pass


# ---------------------------------------------------------------------------
# Records


def to_record(example: Example) -> dict:
    """Dataset record for a generated example."""
    report = example.report
    header = report.table[0] if report.table else []
    sentences = report.sentences()
    gold_inds: dict[str, str] = {}
    for fact in example.facts:
        if fact.kind == "text":
            gold_inds[f"text_{fact.index}"] = sentences[fact.index]
        else:
            row = report.data_rows()[fact.index]
            gold_inds[f"table_{fact.index + 1}"] = row_to_text(header, row)
    return {
        "id": example.id,
        "pre_text": list(report.pre_text),
        "post_text": list(report.post_text),
        "table": [list(r) for r in report.table],
        "qa": {
            "question": example.question,
            "program": example.program,
            "exe_ans": example.exe_ans,
            "gold_inds": gold_inds,
        },
        "meta": {
            "node_id": example.node_id,
            "variant": example.variant,
            "seed": example.seed,
            "bindings": dict(example.bindings),
        },
    }


def validate_record(record: object, where: str = "record") -> dict:
    """Check one record against the schema; returns it for chaining."""
    if not isinstance(record, dict):
        raise SchemaError(f"{where}: not an object")
    rid = record.get("id")
    if not isinstance(rid, str) or not rid:
        raise SchemaError(f"{where}: id must be a non-empty string")
    for key in ("pre_text", "post_text"):
        block = record.get(key)
        if not isinstance(block, list) or not all(isinstance(s, str) for s in block):
            raise SchemaError(f"{where}.{key}: must be a list of strings")
    table = record.get("table")
    if (
        not isinstance(table, list)
        or not table
        or not all(isinstance(r, list) and all(isinstance(c, str) for c in r) for r in table)
    ):
        raise SchemaError(f"{where}.table: must be a non-empty list of string rows")
    if len({len(r) for r in table}) != 1:
        raise SchemaError(f"{where}.table: rows have unequal width")
    qa = record.get("qa")
    if not isinstance(qa, dict):
        raise SchemaError(f"{where}.qa: missing")
    if not isinstance(qa.get("question"), str) or not qa["question"].strip():
        raise SchemaError(f"{where}.qa.question: must be a non-empty string")
    if not isinstance(qa.get("program"), str) or not qa["program"].strip():
        raise SchemaError(f"{where}.qa.program: must be a non-empty string")
    ans = qa.get("exe_ans")
    if isinstance(ans, bool) or not isinstance(ans, (int, float, str)):
        raise SchemaError(f"{where}.qa.exe_ans: must be a number or yes/no")
    if isinstance(ans, str) and ans not in ("yes", "no"):
        raise SchemaError(f"{where}.qa.exe_ans: string answers must be yes or no")
    gold = qa.get("gold_inds")
    if not isinstance(gold, dict):
        raise SchemaError(f"{where}.qa.gold_inds: must be an object")
    n_sentences = len(record["pre_text"]) + len(record["post_text"])
    for key, text in gold.items():
        m = _GOLD_KEY.fullmatch(key)
        if m is None or not isinstance(text, str):
            raise SchemaError(f"{where}.qa.gold_inds: bad entry {key!r}")
        index = int(m.group(2))
        if m.group(1) == "text" and index >= n_sentences:
            raise SchemaError(f"{where}.qa.gold_inds: {key} out of range")
        if m.group(1) == "table" and not (1 <= index < len(table)):
            raise SchemaError(f"{where}.qa.gold_inds: {key} out of range")
    meta = record.get("meta")
    if meta is not None and not isinstance(meta, dict):
        raise SchemaError(f"{where}.meta: must be an object")
    return record


def write_dataset(path: str, records: Iterable[dict]) -> int:
    """Validate, sort by id and write a JSON array. Returns record count."""
    items = [validate_record(r, f"records[{i}]") for i, r in enumerate(records)]
    items.sort(key=lambda r: r["id"])
    ids = [r["id"] for r in items]
    if len(set(ids)) != len(ids):
        dupe = next(i for i in ids if ids.count(i) > 1)
        raise SchemaError(f"duplicate record id {dupe!r}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(items, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    return len(items)


def read_dataset(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise SchemaError("top level: expected a JSON array of records")
    return [validate_record(r, f"records[{i}]") for i, r in enumerate(data)]


# ---------------------------------------------------------------------------
# Splits and merges


def split_dataset(
    records: Sequence[dict], seed: int = 0
) -> tuple[list[dict], list[dict], list[dict]]:
    """Shuffled train/dev/test split at 75/10/15.

    dev gets round(n * 0.10) records, test round(n * 0.15), train the rest.
    Deterministic in the seed; input order does not matter.
    """
    n = len(records)
    if n < 3:
        raise TooFewExamplesError(f"cannot split {n} records three ways")
    pool = sorted(records, key=lambda r: r["id"])
    random.Random(seed).shuffle(pool)
    n_dev = round(n * DEV_FRACTION)
    n_test = round(n * TEST_FRACTION)
    dev = pool[:n_dev]
    test = pool[n_dev : n_dev + n_test]
    train = pool[n_dev + n_test :]
    return train, dev, test


def merge_datasets(sources: Sequence[Sequence[dict]]) -> list[dict]:
    """Concatenate datasets; colliding ids get a/ b/ ... source prefixes."""
    counts: dict[str, int] = {}
    for source in sources:
        for record in source:
            counts[record["id"]] = counts.get(record["id"], 0) + 1
    merged: list[dict] = []
    for i, source in enumerate(sources):
        prefix = chr(ord("a") + i) if i < 26 else f"src{i}"
        for record in source:
            if counts[record["id"]] > 1:
                record = {**record, "id": f"{prefix}/{record['id']}"}
            merged.append(record)
    return merged


# ---------------------------------------------------------------------------
# Stats


def dataset_stats(records: Sequence[dict]) -> dict:
    """Histograms over supporting-fact counts, program size and fact source."""
    facts = {"1": 0, "2": 0, "3": 0, ">3": 0}
    steps: dict[str, int] = {}
    support = {"table": 0, "text": 0, "mixed": 0, "none": 0}
    for record in records:
        gold = record["qa"]["gold_inds"]
        n = len(gold)
        facts["1" if n == 1 else "2" if n == 2 else "3" if n == 3 else ">3"] += 1
        try:
            length = len(parse_program(record["qa"]["program"]).steps)
            steps[str(length)] = steps.get(str(length), 0) + 1
        except DslError:
            steps["unparseable"] = steps.get("unparseable", 0) + 1
        kinds = {key.split("_")[0] for key in gold}
        if kinds == {"table"}:
            support["table"] += 1
        elif kinds == {"text"}:
            support["text"] += 1
        elif kinds:
            support["mixed"] += 1
        else:
            support["none"] += 1
    return {
        "examples": len(records),
        "facts": facts,
        "steps": dict(sorted(steps.items())),
        "support": support,
    }


# ---------------------------------------------------------------------------
# TAT-QA conversion

_DERIVATION_JUNK = re.compile(r"[$,]")


def _derivation_program(derivation: str):
    cleaned = _DERIVATION_JUNK.sub("", derivation)
    if "%" in cleaned or re.search(r"[A-Za-z]", cleaned):
        raise DslError(f"non-numeric derivation {derivation!r}")
    return program_from_infix(cleaned)


def convert_tatqa(data: object) -> tuple[list[dict], dict[str, int]]:
    """Convert parsed TAT-QA JSON to dataset records.

    Only arithmetic questions with an unscaled numeric answer and a purely
    numeric derivation convert; everything else is counted by skip reason.
    The derivation's infix arithmetic becomes the program, its execution the
    answer, and constant matching recovers the supporting units.
    """
    if not isinstance(data, list):
        raise SchemaError("tatqa: expected a JSON array of report entries")
    records: list[dict] = []
    skipped: dict[str, int] = {}

    def skip(reason: str) -> None:
        skipped[reason] = skipped.get(reason, 0) + 1

    for i, entry in enumerate(data):
        where = f"tatqa[{i}]"
        if not isinstance(entry, dict) or "table" not in entry or "questions" not in entry:
            raise SchemaError(f"{where}: expected table/paragraphs/questions")
        table_block = entry["table"]
        table_uid = str(table_block.get("uid", i))
        table = [[str(c) for c in row] for row in table_block.get("table", [])]
        if not table or len({len(r) for r in table}) != 1:
            raise SchemaError(f"{where}.table: missing or ragged")
        paragraphs = sorted(
            entry.get("paragraphs", []), key=lambda p: p.get("order", 0)
        )
        pre_text: list[str] = []
        for p in paragraphs:
            pre_text.extend(split_sentences(str(p.get("text", ""))))
        for q in entry["questions"]:
            answer_type = q.get("answer_type", "unknown")
            if answer_type != "arithmetic":
                skip(answer_type)
                continue
            if q.get("scale", ""):
                skip("scaled")
                continue
            derivation = q.get("derivation", "")
            if not derivation:
                skip("no_derivation")
                continue
            try:
                program = _derivation_program(derivation)
                result = execute(program, {})
            except DslError:
                skip("unparseable_derivation")
                continue
            if isinstance(result, bool):
                skip("boolean")
                continue
            report = FinancialReport(pre_text, table, [])
            facts = match_supporting_facts(report, program, {})
            header = table[0]
            gold_inds: dict[str, str] = {}
            for fact in facts:
                if fact.kind == "text":
                    gold_inds[f"text_{fact.index}"] = pre_text[fact.index]
                else:
                    gold_inds[f"table_{fact.index + 1}"] = row_to_text(
                        header, table[fact.index + 1]
                    )
            rid = str(uuid.uuid5(uuid.NAMESPACE_URL, f"tatqa/{table_uid}/{q.get('uid')}"))
            records.append(
                {
                    "id": rid,
                    "pre_text": list(pre_text),
                    "post_text": [],
                    "table": table,
                    "qa": {
                        "question": str(q.get("question", "")),
                        "program": serialize_program(program),
                        "exe_ans": round(result, 5),
                        "gold_inds": gold_inds,
                    },
                    "meta": {
                        "source": "tatqa",
                        "table_uid": table_uid,
                        "question_uid": str(q.get("uid")),
                        "original_answer": q.get("answer"),
                        "bindings": {},
                    },
                }
            )
    return records, skipped


def read_tatqa(path: str) -> tuple[list[dict], dict[str, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        return convert_tatqa(json.load(fh))
