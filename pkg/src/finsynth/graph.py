"""Formula dependency graph: build, compose, extend, add a time dimension.

Nodes are formulas (a target variable plus the program computing it from
independent variables). There is an edge j -> i whenever node j's target is
one of node i's independents, i.e. j's output can be inlined into i.

Three growth operations:

* compose(producer, consumer): inline the producer program into the consumer
  at the producer's target variable, yielding a deeper formula.
* extend(graph): run one round of composition across all unconsumed edges,
  keeping candidates that pass structural checks, size limits and
  deduplication. Repeated rounds reach a fixed point.
* add_temporal(graph, slices): copy every formula once per time slice and add
  change / rate_of_change / sum / average connector formulas between adjacent
  slices for every variable, turning a static graph into a temporal one.
"""

from __future__ import annotations

import hashlib
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .dsl import (
    DslError,
    Program,
    Step,
    StepRef,
    VariableRef,
    canonicalize,
    compile_infix,
    parse_program,
    rename_variables,
    serialize_program,
)

CONNECTOR_KINDS = ("change", "rate_of_change", "sum", "average")


class GraphError(Exception):
    """Base class for graph construction failures."""


class NotConnectedError(GraphError):
    """compose() called on a pair with no producer -> consumer edge."""


class DuplicateNodeError(GraphError):
    pass


class InvalidNodeError(GraphError):
    pass


class AlreadyTemporalError(GraphError):
    """add_temporal() called on a graph that already has time slices."""


class FewerThanTwoSlicesError(GraphError):
    pass


class SeedFileError(GraphError):
    """Malformed seed formula file; message carries the line number."""


@dataclass(frozen=True)
class Provenance:
    """How a node came to exist.

    kind is one of "seed", "composed", "temporal-slice" or "temporal".
    Composed nodes record the producer/consumer ids; temporal connectors
    record the connector kind, the base variable and the slice pair; sliced
    copies record the original node id and their slice.
    """

    kind: str
    connector: str | None = None
    producer: str | None = None
    consumer: str | None = None
    variable: str | None = None
    slices: tuple[str, ...] | None = None


@dataclass(frozen=True)
class FormulaNode:
    id: str
    target: str
    independents: tuple[str, ...]
    program: Program
    provenance: Provenance
    depth: int = 0

    def validate(self) -> None:
        """Raise InvalidNodeError unless the node is well formed.

        Kept out of __post_init__ so that extension can build candidate
        nodes first and filter the invalid ones (e.g. cyclic compositions
        where the target reappears as an input).
        """
        try:
            self.program.validate()
        except DslError as exc:
            raise InvalidNodeError(f"{self.id}: {exc}") from exc
        free = set(self.program.variables())
        declared = set(self.independents)
        if len(declared) != len(self.independents):
            raise InvalidNodeError(f"{self.id}: duplicate independents")
        if free != declared:
            missing = sorted(free ^ declared)
            raise InvalidNodeError(
                f"{self.id}: independents do not match program variables: {missing}"
            )
        if self.target in declared:
            raise InvalidNodeError(f"{self.id}: target {self.target!r} is also an input")

    def describe(self) -> str:
        return f"{self.target} := {serialize_program(self.program)}"


def dedup_key(node: FormulaNode) -> tuple[str, str]:
    """Two nodes are the same formula iff target and canonical program agree."""
    return (node.target, serialize_program(canonicalize(node.program)))


@dataclass
class FormulaGraph:
    nodes: dict[str, FormulaNode]
    edges: set[tuple[str, str]]
    consumed: set[tuple[str, str]] = field(default_factory=set)

    def sorted_nodes(self) -> list[FormulaNode]:
        return [self.nodes[k] for k in sorted(self.nodes)]

    def is_temporal(self) -> bool:
        return any("@" in nid for nid in self.nodes)


def compute_edges(nodes: Mapping[str, FormulaNode]) -> set[tuple[str, str]]:
    by_target: dict[str, list[str]] = defaultdict(list)
    for node in nodes.values():
        by_target[node.target].append(node.id)
    edges: set[tuple[str, str]] = set()
    for consumer in nodes.values():
        for var in consumer.independents:
            for pid in by_target.get(var, ()):
                if pid != consumer.id:
                    edges.add((pid, consumer.id))
    return edges


def build_graph(nodes: Iterable[FormulaNode]) -> FormulaGraph:
    """Index nodes by id and derive the dependency edges."""
    table: dict[str, FormulaNode] = {}
    for node in nodes:
        node.validate()
        if node.id in table:
            raise DuplicateNodeError(node.id)
        table[node.id] = node
    return FormulaGraph(table, compute_edges(table))


# ---------------------------------------------------------------------------
# Composition


def compose(producer: FormulaNode, consumer: FormulaNode) -> FormulaNode:
    """Inline the producer's program into the consumer at its target variable.

    The producer's steps come first; consumer step references shift by the
    producer's length, and every use of the producer's target becomes a
    reference to the producer's final step. The result computes the consumer's
    target directly from the merged independent variables.
    """
    if producer.id == consumer.id or producer.target not in consumer.independents:
        raise NotConnectedError(f"{producer.id} does not feed {consumer.id}")
    shift = len(producer.program.steps)
    steps: list[Step] = list(producer.program.steps)
    for step in consumer.program.steps:
        args = []
        for arg in step.args:
            if isinstance(arg, StepRef):
                args.append(StepRef(arg.index + shift))
            elif isinstance(arg, VariableRef) and arg.key == producer.target:
                args.append(StepRef(shift - 1))
            else:
                args.append(arg)
        steps.append(Step(step.op, (args[0], args[1])))
    program = Program(tuple(steps))
    key_text = serialize_program(canonicalize(program))
    digest = hashlib.sha256(
        f"{consumer.target}\x1f{key_text}".encode("utf-8")
    ).hexdigest()[:10]
    return FormulaNode(
        id=f"{consumer.target}.{digest}",
        target=consumer.target,
        independents=tuple(program.variables()),
        program=program,
        provenance=Provenance("composed", producer=producer.id, consumer=consumer.id),
        depth=max(producer.depth, consumer.depth) + 1,
    )


def extend(
    graph: FormulaGraph,
    *,
    max_steps: int | None = None,
    max_vars: int | None = None,
) -> tuple[FormulaGraph, int]:
    """One composition round over every edge not yet consumed.

    Edges are processed in lexicographic order and marked consumed whether or
    not their candidate survives, so repeated rounds never redo work. Returns
    the grown graph and the number of nodes added.
    """
    snapshot = sorted(graph.edges - graph.consumed)
    if not snapshot:
        return graph, 0
    nodes = dict(graph.nodes)
    consumed = set(graph.consumed) | set(snapshot)
    seen = {dedup_key(n) for n in nodes.values()}
    added = 0
    for producer_id, consumer_id in snapshot:
        candidate = compose(graph.nodes[producer_id], graph.nodes[consumer_id])
        try:
            candidate.validate()
        except InvalidNodeError:
            continue
        if max_steps is not None and len(candidate.program.steps) > max_steps:
            continue
        if max_vars is not None and len(candidate.program.variables()) > max_vars:
            continue
        key = dedup_key(candidate)
        if key in seen:
            continue
        seen.add(key)
        nodes[candidate.id] = candidate
        added += 1
    return FormulaGraph(nodes, compute_edges(nodes), consumed), added


def extend_to_fixed_point(
    graph: FormulaGraph,
    *,
    max_steps: int | None = None,
    max_vars: int | None = None,
    max_rounds: int = 6,
) -> tuple[FormulaGraph, list[int]]:
    """Extend until a round adds nothing (or max_rounds is hit).

    Returns the final graph and the per-round counts of added nodes.
    """
    counts: list[int] = []
    for _ in range(max_rounds):
        if not (graph.edges - graph.consumed):
            break
        graph, added = extend(graph, max_steps=max_steps, max_vars=max_vars)
        counts.append(added)
        if added == 0:
            break
    return graph, counts


# ---------------------------------------------------------------------------
# Temporal dimension


def _connector_programs(var: str, a: str, b: str) -> list[tuple[str, Program]]:
    early = f"{var}@{a}"
    late = f"{var}@{b}"
    return [
        ("change", parse_program(f"subtract({late}, {early})")),
        (
            "rate_of_change",
            parse_program(f"subtract({late}, {early}), divide(#0, {early})"),
        ),
        ("sum", parse_program(f"add({early}, {late})")),
        ("average", parse_program(f"add({early}, {late}), divide(#0, 2)")),
    ]


def add_temporal(graph: FormulaGraph, slices: Sequence[str]) -> FormulaGraph:
    """Copy the graph once per time slice and connect adjacent slices.

    Every node becomes one copy per slice with all variables tagged `@slice`.
    Every variable in the graph (targets and independents alike) gains four
    connector formulas per adjacent slice pair. Node count obeys
    n*s + m*(s-1)*4 for n nodes, m distinct variables and s slices.
    """
    labels = [str(s) for s in slices]
    if len(labels) < 2:
        raise FewerThanTwoSlicesError(f"need at least 2 slices, got {len(labels)}")
    if len(set(labels)) != len(labels):
        raise GraphError(f"duplicate slice labels in {labels}")
    if any("~" in label or "@" in label for label in labels):
        raise GraphError("slice labels may not contain '@' or '~'")
    for node in graph.nodes.values():
        if "@" in node.id or "@" in node.target or any("@" in v for v in node.independents):
            raise AlreadyTemporalError(f"{node.id} already carries a time slice")

    variables = sorted(
        {n.target for n in graph.nodes.values()}
        | {v for n in graph.nodes.values() for v in n.independents}
    )
    nodes: dict[str, FormulaNode] = {}
    for node in graph.sorted_nodes():
        for label in labels:
            mapping = {v: f"{v}@{label}" for v in node.program.variables()}
            copy = FormulaNode(
                id=f"{node.id}@{label}",
                target=f"{node.target}@{label}",
                independents=tuple(f"{v}@{label}" for v in node.independents),
                program=rename_variables(node.program, mapping),
                provenance=Provenance(
                    "temporal-slice", producer=node.id, slices=(label,)
                ),
                depth=node.depth,
            )
            nodes[copy.id] = copy
    for var in variables:
        for a, b in zip(labels, labels[1:]):
            for kind, program in _connector_programs(var, a, b):
                node_id = f"{var}_{kind}@{a}~{b}"
                nodes[node_id] = FormulaNode(
                    id=node_id,
                    target=f"{var}_{kind}",
                    independents=tuple(program.variables()),
                    program=program,
                    provenance=Provenance(
                        "temporal", connector=kind, variable=var, slices=(a, b)
                    ),
                )
    return FormulaGraph(nodes, compute_edges(nodes))


# ---------------------------------------------------------------------------
# Seed files and dumps

_RANGE_LINE = re.compile(
    r"range\s+(?P<name>[a-z_][a-z0-9_]*)\s+(?P<lo>\S+)\s+(?P<hi>\S+)$"
)

ValueRanges = dict[str, tuple[float, float]]


def load_seed_formulas(path: str) -> tuple[list[FormulaNode], ValueRanges]:
    """Read a seed file of `target = expression` lines and range directives.

    Blank lines and `#` comments are skipped. A `range NAME LO HI` line
    declares the positive value range used when synthesizing data for a leaf
    variable. Formula targets must be unique.
    """
    nodes: list[FormulaNode] = []
    ranges: ValueRanges = {}
    seen_targets: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("range "):
            m = _RANGE_LINE.fullmatch(line)
            if m is None:
                raise SeedFileError(f"line {lineno}: malformed range directive")
            try:
                lo, hi = float(m.group("lo")), float(m.group("hi"))
            except ValueError as exc:
                raise SeedFileError(f"line {lineno}: bad range bounds") from exc
            if not (0 < lo <= hi):
                raise SeedFileError(
                    f"line {lineno}: range bounds must be positive and ordered"
                )
            ranges[m.group("name")] = (lo, hi)
            continue
        if "=" not in line:
            raise SeedFileError(f"line {lineno}: expected 'target = expression'")
        try:
            node = compile_infix(line)
        except DslError as exc:
            raise SeedFileError(f"line {lineno}: {exc}") from exc
        if node.target in seen_targets:
            raise SeedFileError(f"line {lineno}: duplicate target {node.target!r}")
        seen_targets.add(node.target)
        nodes.append(node)
    if not nodes:
        raise SeedFileError("no formulas found")
    return nodes, ranges


def dump_graph(graph: FormulaGraph) -> str:
    """Deterministic line-oriented text form of a graph."""
    out = [f"nodes {len(graph.nodes)}", f"edges {len(graph.edges)}"]
    for node in graph.sorted_nodes():
        p = node.provenance
        extra = ""
        if p.kind == "composed":
            extra = f" producer={p.producer} consumer={p.consumer}"
        elif p.kind == "temporal":
            extra = f" connector={p.connector} variable={p.variable} slices={'~'.join(p.slices or ())}"
        elif p.kind == "temporal-slice":
            extra = f" base={p.producer}"
        out.append(f"node {node.id} kind={p.kind} depth={node.depth}{extra}")
        out.append(f"  target {node.target}")
        out.append(f"  independents {', '.join(node.independents)}")
        out.append(f"  program {serialize_program(node.program)}")
    for src, dst in sorted(graph.edges):
        mark = " consumed" if (src, dst) in graph.consumed else ""
        out.append(f"edge {src} -> {dst}{mark}")
    return "\n".join(out) + "\n"
