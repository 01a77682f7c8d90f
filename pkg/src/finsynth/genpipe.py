"""Example generation pipeline: formula node -> report -> question/answer.

For every formula node the pipeline

1. draws a time context (consecutive report years, with the slice tags of
   temporal nodes mapped onto concrete years),
2. asks the text backend for a report fragment. Table-first examples put the
   values in a table and wrap it in a generated paragraph; text-first
   examples put the values in sentences and attach an unrelated filler table,
3. extracts the value of every independent variable back out of the report,
4. renders the question, rewrites the program onto year-tagged variable
   names, executes it for the gold answer, and records which report units
   (sentences and table rows) carry the numbers the program consumes.

Everything is deterministic given the config seed: each (node, index) pair
gets its own derived seed, so datasets are reproducible byte for byte and
independent of worker scheduling.
"""

from __future__ import annotations

import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backend import (
    BackendError,
    PromptRequest,
    TextBackend,
    build_prompt,
    exemplars_for,
    parse_table_response,
)
from .dsl import (
    DslError,
    Program,
    VariableRef,
    execute,
    format_value,
    parse_program,
    rename_variables,
    serialize_program,
    variable_ref,
)
from .graph import FormulaGraph, FormulaNode
from .numbers import NumberFormatError, UnknownUnit, find_literals, format_number, normalize_literal
from .seeding import stable_seed

YEAR_MIN = 1995
YEAR_MAX = 2022
MAX_DISTRACTOR_YEARS = 2

DEFAULT_DISTRACTOR_ITEMS = (
    "goodwill",
    "inventories",
    "prepaid_expenses",
    "accrued_liabilities",
    "deferred_tax_assets",
    "intangible_assets",
    "accounts_receivable",
    "accounts_payable",
)

DEFAULT_QUESTION_TEMPLATES = {
    "default": "what was the {target} in {year}?",
    "change": "what was the change in {variable} from {year_a} to {year_b}?",
    "rate_of_change": "what was the percentage change in {variable} from {year_a} to {year_b}?",
    "sum": "what was the total {variable} for {year_a} and {year_b} combined?",
    "average": "what was the average {variable} over {year_a} and {year_b}?",
}


class PipelineError(Exception):
    """Base class for generation failures on a single example."""


class ContradictionDetectedError(PipelineError):
    """A distractor table names one of the question's own variables."""


class ExtractionMissError(PipelineError):
    """A required (item, year) value could not be read back from the report."""


class UnitAmbiguityError(PipelineError):
    """An extracted value carries a magnitude word we cannot resolve."""


class NotRectangularError(PipelineError):
    pass


class NoTimeAxisError(PipelineError):
    """Neither table orientation has years in the header."""


class TemplateError(PipelineError):
    pass


@dataclass(frozen=True)
class TimeContext:
    """Concrete report years for one example.

    years lists every year the report covers, in order; the first ones are
    the question-relevant points and the tail is distractor padding.
    slice_map resolves a temporal node's slice tags onto years.
    """

    years: tuple[int, ...]
    question_points: tuple[int, ...]
    slice_map: Mapping[str, int]


@dataclass(frozen=True)
class FactRef:
    """A supporting unit of the report: a sentence or a table data row."""

    kind: str  # "text" | "table-row"
    index: int


@dataclass
class FinancialReport:
    pre_text: list[str]
    table: list[list[str]]  # header row first, corner cell empty
    post_text: list[str]

    def data_rows(self) -> list[list[str]]:
        return self.table[1:]

    def sentences(self) -> list[str]:
        return list(self.pre_text) + list(self.post_text)


@dataclass
class Example:
    id: str
    node_id: str
    variant: str  # "table" | "text"
    question: str
    program: str
    exe_ans: float | str
    report: FinancialReport
    facts: list[FactRef]
    bindings: dict[str, float]
    seed: int


@dataclass(frozen=True)
class GenConfig:
    examples_per_node: int = 2
    global_seed: int = 0
    max_concurrency: int = 1
    content_retries: int = 3
    shot_mode: str = "zero"
    distractor_items: tuple[str, ...] = DEFAULT_DISTRACTOR_ITEMS


# ---------------------------------------------------------------------------
# Time handling


def node_slices(node: FormulaNode) -> list[str]:
    """Distinct slice tags of the node's program, in (length, text) order."""
    tags = {
        arg.tag
        for step in node.program.steps
        for arg in step.args
        if isinstance(arg, VariableRef) and arg.tag
    }
    return sorted(tags, key=lambda t: (len(t), t))


def generate_time(node: FormulaNode, rng: random.Random) -> TimeContext:
    """Draw consecutive years covering the node's slices plus distractors."""
    tags = node_slices(node)
    k = max(1, len(tags))
    base = rng.randint(YEAR_MIN, YEAR_MAX - k)
    extra = rng.randint(0, MAX_DISTRACTOR_YEARS)
    years = tuple(base + i for i in range(k + extra))
    slice_map = {tag: base + i for i, tag in enumerate(tags)}
    points = tuple(slice_map[t] for t in tags) if tags else (base,)
    return TimeContext(years=years, question_points=points, slice_map=slice_map)


@dataclass(frozen=True)
class VariablePlan:
    """Where each program variable's value lives: (base name, year) pairs."""

    items: tuple[str, ...]  # distinct base names, first-occurrence order
    needed: tuple[tuple[str, int], ...]  # (base name, year) per binding
    rename: Mapping[str, str]  # program key -> year-tagged flat name


def plan_variables(node: FormulaNode, ctx: TimeContext) -> VariablePlan:
    base_year = ctx.question_points[0]
    items: list[str] = []
    needed: list[tuple[str, int]] = []
    rename: dict[str, str] = {}
    for key in node.program.variables():
        ref = variable_ref(key)
        year = ctx.slice_map[ref.tag] if ref.tag else base_year
        if ref.name not in items:
            items.append(ref.name)
        if (ref.name, year) not in needed:
            needed.append((ref.name, year))
        rename[key] = f"{ref.name}_{year}"
    return VariablePlan(tuple(items), tuple(needed), rename)


# ---------------------------------------------------------------------------
# Tables


_YEAR_CELL = re.compile(r"(19|20)\d{2}")


def _is_year_header(cells: Sequence[str]) -> bool:
    return len(cells) > 1 and all(_YEAR_CELL.fullmatch(c.strip()) for c in cells[1:])


def transpose_table(rows: list[list[str]]) -> list[list[str]]:
    """Return the table with years across the header, transposing if needed."""
    if not rows or not rows[0]:
        raise NotRectangularError("empty table")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise NotRectangularError(f"row widths {[len(r) for r in rows]}")
    if _is_year_header(rows[0]):
        return rows
    flipped = [list(col) for col in zip(*rows)]
    if _is_year_header(flipped[0]):
        return flipped
    raise NoTimeAxisError(f"no year axis in header {rows[0]!r}")


def row_to_text(header: Sequence[str], row: Sequence[str]) -> str:
    """Sentence form of a table row, one clause per year column."""
    label = row[0].strip() or "this item"
    parts = [
        f"the {label} of {str(h).strip()} is {str(c).strip()} ;"
        for h, c in zip(header[1:], row[1:])
    ]
    return " ".join(parts)


def render_table(table: Sequence[Sequence[str]]) -> str:
    return "\n".join("| " + " | ".join(str(c) for c in row) + " |" for row in table)


def split_sentences(text: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p.strip() for p in parts if p.strip()]


# ---------------------------------------------------------------------------
# Report construction


def _request(
    kind: str,
    payload: dict[str, str],
    config: GenConfig,
    exemplars: Mapping[str, tuple] | None,
) -> PromptRequest:
    shots = ()
    if config.shot_mode != "zero":
        shots = exemplars_for(exemplars or {}, kind, config.shot_mode)
    return PromptRequest(kind, payload, shot_mode=config.shot_mode, exemplars=shots)


def _complete(backend: TextBackend, request: PromptRequest) -> str:
    return backend.complete(build_prompt(request))


def build_table_first(
    node: FormulaNode,
    plan: VariablePlan,
    ctx: TimeContext,
    reference: int,
    backend: TextBackend,
    config: GenConfig,
    exemplars=None,
) -> FinancialReport:
    payload = {
        "items": ", ".join(plan.items),
        "years": ", ".join(str(y) for y in ctx.years),
        "reference": str(reference),
    }
    raw = _complete(backend, _request("table", payload, config, exemplars))
    table = transpose_table(parse_table_response(raw))
    table[0][0] = ""
    intro = _complete(
        backend,
        _request("table_text", {**payload, "table": render_table(table)}, config, exemplars),
    )
    sentences = split_sentences(intro)
    cut = (len(sentences) + 1) // 2
    return FinancialReport(sentences[:cut], table, sentences[cut:])


def build_text_first(
    node: FormulaNode,
    plan: VariablePlan,
    ctx: TimeContext,
    reference: int,
    backend: TextBackend,
    config: GenConfig,
    rng: random.Random,
    exemplars=None,
) -> FinancialReport:
    fact_years = sorted({year for _, year in plan.needed})
    payload = {
        "items": ", ".join(plan.items),
        "years": ", ".join(str(y) for y in fact_years),
        "reference": str(reference),
    }
    prose = _complete(backend, _request("text", payload, config, exemplars))
    sentences = split_sentences(prose)

    candidates = [d for d in config.distractor_items if d not in plan.items]
    if not candidates:
        candidates = ["other_operating_items"]
    count = min(rng.randint(2, 3), len(candidates))
    picked = rng.sample(candidates, count)
    table_payload = {
        "items": ", ".join(picked),
        "years": ", ".join(str(y) for y in ctx.years),
        "reference": str(reference),
    }
    raw = _complete(backend, _request("text_table", table_payload, config, exemplars))
    table = transpose_table(parse_table_response(raw))
    table[0][0] = ""
    for row in table[1:]:
        if row[0].strip().replace(" ", "_") in plan.items:
            raise ContradictionDetectedError(
                f"distractor table mentions {row[0]!r}"
            )
    value_sents = [s for s in sentences if find_literals(s)]
    filler_sents = [s for s in sentences if not find_literals(s)]
    return FinancialReport(value_sents, table, filler_sents)


def render_report(report: FinancialReport) -> str:
    parts = []
    if report.pre_text:
        parts.append(" ".join(report.pre_text))
    parts.append(render_table(report.table))
    if report.post_text:
        parts.append(" ".join(report.post_text))
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Extraction


def extract_bindings(
    report: FinancialReport,
    plan: VariablePlan,
    reference: int,
    backend: TextBackend,
    config: GenConfig,
    exemplars=None,
) -> dict[str, float]:
    """Read every needed (item, year) value back out of the report."""
    years = sorted({year for _, year in plan.needed})
    payload = {
        "items": ", ".join(plan.items),
        "years": ", ".join(str(y) for y in years),
        "reference": str(reference),
        "report": render_report(report),
    }
    raw = _complete(backend, _request("extract", payload, config, exemplars))
    values: dict[tuple[str, int], float] = {}
    for line in raw.splitlines():
        if "|" not in line:
            continue
        cells = [c.strip() for c in line.split("|")]
        if len(cells) != 3:
            continue
        item, year_text, value_text = cells
        try:
            year = int(year_text)
        except ValueError:
            continue
        try:
            values[(item, year)] = normalize_literal(value_text)
        except UnknownUnit as exc:
            raise UnitAmbiguityError(str(exc)) from exc
        except NumberFormatError:
            continue
    bindings: dict[str, float] = {}
    for name, year in plan.needed:
        if (name, year) not in values:
            raise ExtractionMissError(f"no value for {name!r} in {year}")
        bindings[f"{name}_{year}"] = values[(name, year)]
    return bindings


# ---------------------------------------------------------------------------
# Questions


def load_question_templates(path: str) -> dict[str, str]:
    """Read `key: template` lines; # comments and blank lines are skipped."""
    out = dict(DEFAULT_QUESTION_TEMPLATES)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise TemplateError(f"line {lineno}: expected 'key: template'")
            key, template = line.split(":", 1)
            out[key.strip()] = template.strip()
    return out


def _display(name: str) -> str:
    return name.replace("_", " ")


def render_question(
    node: FormulaNode,
    ctx: TimeContext,
    templates: Mapping[str, str] | None = None,
) -> str:
    """Fill the question template selected by the node's provenance."""
    table = dict(DEFAULT_QUESTION_TEMPLATES)
    if templates:
        table.update(templates)
    prov = node.provenance
    key = prov.connector or prov.kind
    template = table.get(key) or table["default"]
    target_ref = variable_ref(node.target)
    fields = {
        "target": _display(target_ref.name),
        "variable": _display(prov.variable) if prov.variable else _display(target_ref.name),
        "year": "",
        "year_a": "",
        "year_b": "",
    }
    if prov.connector and prov.slices and len(prov.slices) == 2:
        fields["year_a"] = str(ctx.slice_map[prov.slices[0]])
        fields["year_b"] = str(ctx.slice_map[prov.slices[1]])
        fields["year"] = fields["year_b"]
    elif target_ref.tag:
        fields["year"] = str(ctx.slice_map[target_ref.tag])
    else:
        fields["year"] = str(ctx.question_points[-1])
    try:
        return template.format(**fields)
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"template {key!r} uses unknown placeholder: {exc}") from exc


# ---------------------------------------------------------------------------
# Supporting facts


def match_supporting_facts(
    report: FinancialReport,
    program: Program,
    bindings: Mapping[str, float],
) -> list[FactRef]:
    """Report units that carry a number the program consumes.

    A sentence or table row supports the example when any literal in it,
    after normalization, prints identically to a program constant or a bound
    variable value. Units come back in document order: pre_text, table data
    rows, post_text.
    """
    needed = {format_number(c) for c in program.constants()}
    needed |= {format_number(v) for v in bindings.values()}

    def hits(text: str) -> bool:
        return any(format_number(x) in needed for x in find_literals(text))

    facts: list[FactRef] = []
    for i, sentence in enumerate(report.pre_text):
        if hits(sentence):
            facts.append(FactRef("text", i))
    header = report.table[0] if report.table else []
    for i, row in enumerate(report.data_rows()):
        if hits(row_to_text(header, row)):
            facts.append(FactRef("table-row", i))
    offset = len(report.pre_text)
    for i, sentence in enumerate(report.post_text):
        if hits(sentence):
            facts.append(FactRef("text", offset + i))
    return facts


# ---------------------------------------------------------------------------
# Assembly


def assemble_example(
    node: FormulaNode,
    ctx: TimeContext,
    plan: VariablePlan,
    report: FinancialReport,
    bindings: dict[str, float],
    *,
    example_id: str,
    variant: str,
    seed: int,
    templates: Mapping[str, str] | None = None,
) -> Example:
    program = rename_variables(node.program, plan.rename)
    answer = format_value(execute(program, bindings))
    facts = match_supporting_facts(report, program, bindings)
    return Example(
        id=example_id,
        node_id=node.id,
        variant=variant,
        question=render_question(node, ctx, templates),
        program=serialize_program(program),
        exe_ans=answer,
        report=report,
        facts=facts,
        bindings=bindings,
        seed=seed,
    )


def generate_example(
    node: FormulaNode,
    index: int,
    config: GenConfig,
    backend: TextBackend,
    templates: Mapping[str, str] | None = None,
    exemplars=None,
) -> Example:
    """Build one example for a node; deterministic in (config seed, node, index)."""
    if not node.independents:
        raise PipelineError(f"{node.id}: no independent variables to report")
    seed = stable_seed(config.global_seed, node.id, index)
    variant = "table" if index % 2 == 0 else "text"
    last_error: Exception | None = None
    for attempt in range(max(1, config.content_retries)):
        rng = random.Random(stable_seed(seed, attempt))
        reference = stable_seed(seed, "ref", attempt) % 10**9
        ctx = generate_time(node, rng)
        plan = plan_variables(node, ctx)
        try:
            if variant == "table":
                report = build_table_first(
                    node, plan, ctx, reference, backend, config, exemplars
                )
            else:
                report = build_text_first(
                    node, plan, ctx, reference, backend, config, rng, exemplars
                )
            bindings = extract_bindings(
                report, plan, reference, backend, config, exemplars
            )
            return assemble_example(
                node,
                ctx,
                plan,
                report,
                bindings,
                example_id=f"{node.id}-{index}",
                variant=variant,
                seed=seed,
                templates=templates,
            )
        except (PipelineError, BackendError, DslError) as exc:
            last_error = exc
    raise PipelineError(
        f"{node.id}[{index}]: gave up after {config.content_retries} attempts: {last_error}"
    ) from last_error


def generate_dataset(
    graph: FormulaGraph,
    config: GenConfig,
    backend: TextBackend,
    templates: Mapping[str, str] | None = None,
    exemplars=None,
) -> tuple[list[Example], dict]:
    """Examples for every node in the graph, plus a generation summary.

    Output order is (node id, index) regardless of worker scheduling, and
    output content depends only on the config seed, so reruns are identical.
    """
    jobs = [
        (node, index)
        for node in graph.sorted_nodes()
        for index in range(config.examples_per_node)
    ]

    def run(job):
        node, index = job
        try:
            return (node.id, index), generate_example(
                node, index, config, backend, templates, exemplars
            ), None
        except (PipelineError, BackendError, DslError) as exc:
            return (node.id, index), None, exc

    if config.max_concurrency > 1:
        with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    examples: list[Example] = []
    skipped: dict[str, int] = {}
    variants = {"table": 0, "text": 0}
    for _, example, error in results:
        if example is None:
            reason = type(error).__name__
            skipped[reason] = skipped.get(reason, 0) + 1
            continue
        examples.append(example)
        variants[example.variant] += 1
    summary = {
        "generated": len(examples),
        "skipped": skipped,
        "variants": variants,
        "nodes": len(graph.nodes),
    }
    return examples, summary


# ---------------------------------------------------------------------------
# Verification


_SENTENCE_FACT = r"In {year}, the company reported {item} of (\$[-\d,.]+)\."


def verify_example(example: Example) -> tuple[bool, list[str]]:
    """Audit an example against its own report, without any backend.

    Checks that every binding is readable from the report at the right item
    and year, that the program re-executes to the stored answer, and that
    the supporting facts are in range.
    """
    problems: list[str] = []
    try:
        program = parse_program(example.program)
    except DslError as exc:
        return False, [f"program does not parse: {exc}"]

    report = example.report
    header = report.table[0] if report.table else []
    text = " ".join(report.sentences())
    for key, value in example.bindings.items():
        name, _, year_text = key.rpartition("_")
        if not name or not year_text.isdigit():
            problems.append(f"binding {key!r} is not name_year shaped")
            continue
        if not _binding_grounded(report, header, text, name, year_text, value):
            problems.append(f"{key}={value!r} not found in report")

    try:
        recomputed = format_value(execute(program, example.bindings))
    except DslError as exc:
        problems.append(f"program does not execute: {exc}")
    else:
        if recomputed != example.exe_ans:
            problems.append(f"answer mismatch: {recomputed!r} != {example.exe_ans!r}")

    n_rows = len(report.data_rows())
    n_sentences = len(report.sentences())
    for fact in example.facts:
        if fact.kind == "table-row" and not (0 <= fact.index < n_rows):
            problems.append(f"fact {fact} out of range")
        if fact.kind == "text" and not (0 <= fact.index < n_sentences):
            problems.append(f"fact {fact} out of range")
    if not example.facts:
        problems.append("no supporting facts")
    if not example.question.strip():
        problems.append("empty question")
    return (not problems), problems


def _binding_grounded(report, header, text, name, year_text, value) -> bool:
    label = _display(name)
    for row in report.data_rows():
        if row[0].strip() == label:
            for h, cell in zip(header[1:], row[1:]):
                if str(h).strip() == year_text:
                    try:
                        if normalize_literal(cell) == value:
                            return True
                    except NumberFormatError:
                        pass
    pattern = _SENTENCE_FACT.format(year=re.escape(year_text), item=re.escape(label))
    for m in re.finditer(pattern, text):
        try:
            if normalize_literal(m.group(1)) == value:
                return True
        except NumberFormatError:
            continue
    return False
