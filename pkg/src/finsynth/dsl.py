"""Six-operation arithmetic DSL for financial reasoning programs.

A program is an ordered sequence of binary steps over constants, named
variables and references to earlier step results:

    add(total_profit, interest_expense), divide(#0, interest_expense)

Concrete syntax (case-insensitive on input, canonical on output):

    program := step ("," WS step)*
    step    := OP "(" arg "," WS arg ")"
    arg     := NUMBER | IDENT | "#" INT
    OP      := "add" | "subtract" | "multiply" | "divide" | "greater" | "exp"

Identifiers are lowercase underscore-separated names, optionally carrying a
time-slice tag as `name@slice` (e.g. ebit@t1). `greater` yields a boolean
and may only appear as the final step; everything else is plain arithmetic
on IEEE doubles, with exp(a, b) = a ** b.

This module also lowers human-readable infix formulas ("target = expr")
into linear programs, which is how seed formulas are authored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

from .numbers import format_number

OPERATIONS = ("add", "subtract", "multiply", "divide", "greater", "exp")

# Divisors smaller than this are treated as zero to keep generated data free
# of meaningless huge ratios.
DIVISION_EPSILON = 1e-12


class DslError(Exception):
    """Base class for all DSL failures."""


class EmptyProgramError(DslError):
    pass


class UnknownOperationError(DslError):
    pass


class ArityError(DslError):
    pass


class ForwardStepRefError(DslError):
    pass


class MalformedNumberError(DslError):
    pass


class ProgramSyntaxError(DslError):
    pass


class MisplacedGreaterError(DslError):
    """greater used anywhere but the final step."""


class UnboundVariableError(DslError):
    pass


class DivisionByZeroError(DslError):
    pass


class NonFiniteResultError(DslError):
    pass


class BooleanInArithmeticError(DslError):
    pass


class ParseError(DslError):
    """Malformed infix formula."""


class SelfReferenceError(DslError):
    pass


class EmptyExpressionError(DslError):
    pass


# ---------------------------------------------------------------------------
# Program representation


@dataclass(frozen=True)
class Constant:
    value: float

    def text(self) -> str:
        return format_number(self.value)


@dataclass(frozen=True)
class VariableRef:
    name: str
    tag: str | None = None

    @property
    def key(self) -> str:
        """Canonical textual form, `name` or `name@tag`."""
        return self.name if self.tag is None else f"{self.name}@{self.tag}"

    def text(self) -> str:
        return self.key


@dataclass(frozen=True)
class StepRef:
    index: int

    def text(self) -> str:
        return f"#{self.index}"


Operand = Union[Constant, VariableRef, StepRef]


@dataclass(frozen=True)
class Step:
    op: str
    args: tuple[Operand, Operand]


@dataclass(frozen=True)
class Program:
    steps: tuple[Step, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise EmptyProgramError("a program needs at least one step")

    def validate(self) -> None:
        """Check structural invariants, raising the specific DslError."""
        n = len(self.steps)
        for i, step in enumerate(self.steps):
            if step.op not in OPERATIONS:
                raise UnknownOperationError(f"step {i}: unknown op {step.op!r}")
            if len(step.args) != 2:
                raise ArityError(f"step {i}: expected 2 args, got {len(step.args)}")
            if step.op == "greater" and i != n - 1:
                raise MisplacedGreaterError(
                    f"greater at step {i} but only the final step may compare"
                )
            for arg in step.args:
                if isinstance(arg, StepRef):
                    if arg.index < 0 or arg.index >= i:
                        raise ForwardStepRefError(
                            f"step {i} references #{arg.index}"
                        )
                elif isinstance(arg, Constant):
                    if not math.isfinite(arg.value):
                        raise MalformedNumberError(f"step {i}: non-finite constant")

    def variables(self) -> list[str]:
        """Variable keys in first-occurrence order."""
        seen: list[str] = []
        for step in self.steps:
            for arg in step.args:
                if isinstance(arg, VariableRef) and arg.key not in seen:
                    seen.append(arg.key)
        return seen

    def constants(self) -> list[float]:
        return [a.value for s in self.steps for a in s.args if isinstance(a, Constant)]


Value = Union[float, bool]
Bindings = Mapping[str, float]


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"""
      (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:@[A-Za-z0-9_]+)?)
    | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
    | (?P<stepref>\#\d+)
    | (?P<punct>[(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ProgramSyntaxError(f"unexpected character {text[pos]!r} at offset {pos}")
        kind = m.lastgroup or ""
        tokens.append((kind, m.group()))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def advance(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise ProgramSyntaxError("unexpected end of program")
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.advance()
        if tok[1] != text:
            raise ProgramSyntaxError(f"expected {text!r}, got {tok[1]!r}")


def parse_program(text: str) -> Program:
    """Parse DSL source into a validated Program."""
    if not text or not text.strip():
        raise EmptyProgramError("empty program text")
    cur = _Cursor(_tokenize(text))
    steps: list[Step] = []
    while True:
        steps.append(_parse_step(cur, len(steps)))
        tok = cur.peek()
        if tok is None:
            break
        if tok[1] == ",":
            cur.advance()
            continue
        raise ProgramSyntaxError(f"expected ',' between steps, got {tok[1]!r}")
    program = Program(tuple(steps))
    program.validate()
    return program


def _parse_step(cur: _Cursor, index: int) -> Step:
    kind, text = cur.advance()
    if kind != "ident":
        raise ProgramSyntaxError(f"expected operation name, got {text!r}")
    op = text.lower()
    if op not in OPERATIONS:
        raise UnknownOperationError(f"unknown operation {text!r}")
    cur.expect("(")
    args: list[Operand] = [_parse_arg(cur, index)]
    while True:
        tok = cur.advance()
        if tok[1] == ")":
            break
        if tok[1] == ",":
            args.append(_parse_arg(cur, index))
            continue
        raise ProgramSyntaxError(f"expected ',' or ')', got {tok[1]!r}")
    if len(args) != 2:
        raise ArityError(f"{op} takes 2 arguments, got {len(args)}")
    return Step(op, (args[0], args[1]))


def _parse_arg(cur: _Cursor, step_index: int) -> Operand:
    kind, text = cur.advance()
    if kind == "number":
        nxt = cur.peek()
        if nxt is not None and nxt[0] in ("number", "ident") and nxt[1].startswith("."):
            raise MalformedNumberError(f"malformed number near {text!r}")
        value = float(text)
        if not math.isfinite(value):
            raise MalformedNumberError(f"non-finite constant {text!r}")
        return Constant(value)
    if kind == "stepref":
        index = int(text[1:])
        if index >= step_index:
            raise ForwardStepRefError(f"#{index} referenced at step {step_index}")
        return StepRef(index)
    if kind == "ident":
        return _variable_from_key(text.lower())
    raise ProgramSyntaxError(f"expected argument, got {text!r}")


def _variable_from_key(key: str) -> VariableRef:
    name, sep, tag = key.partition("@")
    return VariableRef(name, tag if sep else None)


def variable_ref(key: str) -> VariableRef:
    """Build a VariableRef from its canonical `name` / `name@tag` text."""
    return _variable_from_key(key.lower())


# ---------------------------------------------------------------------------
# Serialization and canonicalization


def serialize_program(p: Program) -> str:
    """Canonical text form: lowercase ops, `op(a, b)` joined by ", "."""
    parts = []
    for step in p.steps:
        a, b = step.args
        parts.append(f"{step.op}({a.text()}, {b.text()})")
    return ", ".join(parts)


def canonicalize(p: Program) -> Program:
    """Lexical normalization only: numbers and identifier case.

    Idempotent and semantics-preserving; argument order is never rewritten.
    """
    steps = []
    for step in p.steps:
        steps.append(Step(step.op.lower(), tuple(_canon_arg(a) for a in step.args)))  # type: ignore[arg-type]
    return Program(tuple(steps))


def _canon_arg(arg: Operand) -> Operand:
    if isinstance(arg, Constant):
        # -0.0 prints as "0"; store the positive zero so equality and text agree
        return Constant(0.0 if arg.value == 0 else arg.value)
    if isinstance(arg, VariableRef):
        return VariableRef(arg.name.lower(), arg.tag.lower() if arg.tag else None)
    return arg


def rename_variables(p: Program, mapping: Mapping[str, str]) -> Program:
    """Rewrite variable keys (e.g. resolve `ebit@t1` to `ebit_2016`)."""
    steps = []
    for step in p.steps:
        args = tuple(
            _variable_from_key(mapping[a.key])
            if isinstance(a, VariableRef) and a.key in mapping
            else a
            for a in step.args
        )
        steps.append(Step(step.op, args))  # type: ignore[arg-type]
    return Program(tuple(steps))


# ---------------------------------------------------------------------------
# Execution


def execute(p: Program, b: Bindings) -> Value:
    """Run the program over the bindings; the final step's value is returned."""
    p.validate()
    values: list[Value] = []
    for i, step in enumerate(p.steps):
        x = _resolve(step.args[0], values, b)
        y = _resolve(step.args[1], values, b)
        values.append(_apply(step.op, x, y, i))
    return values[-1]


def _resolve(arg: Operand, values: list[Value], b: Bindings) -> float:
    if isinstance(arg, Constant):
        return arg.value
    if isinstance(arg, VariableRef):
        try:
            value = b[arg.key]
        except KeyError:
            raise UnboundVariableError(f"unbound variable {arg.key!r}") from None
        if isinstance(value, bool) or not math.isfinite(value):
            raise NonFiniteResultError(f"binding {arg.key!r} is not a finite number")
        return value
    result = values[arg.index]
    if isinstance(result, bool):
        raise BooleanInArithmeticError(f"#{arg.index} is a boolean comparison result")
    return result


def _apply(op: str, x: float, y: float, index: int) -> Value:
    if op == "greater":
        return x > y
    if op == "add":
        result = x + y
    elif op == "subtract":
        result = x - y
    elif op == "multiply":
        result = x * y
    elif op == "divide":
        if abs(y) < DIVISION_EPSILON:
            raise DivisionByZeroError(f"step {index}: divisor {y!r}")
        result = x / y
    elif op == "exp":
        try:
            result = math.pow(x, y)
        except (OverflowError, ValueError) as exc:
            raise NonFiniteResultError(f"step {index}: exp({x!r}, {y!r})") from exc
    else:  # pragma: no cover - validate() rejects this earlier
        raise UnknownOperationError(op)
    if not math.isfinite(result):
        raise NonFiniteResultError(f"step {index}: {op} produced {result!r}")
    return result


def format_value(v: Value, places: int = 5) -> float | str:
    """Dataset rendering of an executed value: rounded number or yes/no."""
    if isinstance(v, bool):
        return "yes" if v else "no"
    return round(v, places)


# ---------------------------------------------------------------------------
# Infix formulas

_INFIX_TOKEN = re.compile(
    r"""
      (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
    | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

_INFIX_OPS = {"+": "add", "-": "subtract", "*": "multiply", "/": "divide", "^": "exp"}


def program_from_infix(expression: str) -> Program:
    """Lower an infix arithmetic expression to a program.

    Precedence: ^ binds tighter than * and /, which bind tighter than + and -;
    all operators associate left. Every binary operation lowers to one step in
    post-order, so the expression tree and the program are the same shape.
    """
    if not expression.strip():
        raise EmptyExpressionError("empty expression")
    tree = _parse_infix(expression)
    steps: list[Step] = []
    root = _lower(tree, steps)
    if not isinstance(root, StepRef):
        raise ParseError("expression must contain at least one operation")
    program = Program(tuple(steps))
    program.validate()
    return program


def infix_variables(expression: str) -> list[str]:
    """Variable names of an infix expression, in reading order."""
    return _tree_variables(_parse_infix(expression))


def compile_infix(equation: str):
    """Compile `target = infix-expression` into a seed FormulaNode."""
    from .graph import FormulaNode, Provenance

    if "=" not in equation:
        raise ParseError("expected 'target = expression'")
    lhs, rhs = equation.split("=", 1)
    target = lhs.strip().lower()
    if not re.fullmatch(r"[a-z_][a-z0-9_]*", target):
        raise ParseError(f"target must be a single identifier, got {lhs.strip()!r}")
    if not rhs.strip():
        raise EmptyExpressionError("empty right-hand side")
    names = infix_variables(rhs)
    if target in names:
        raise SelfReferenceError(f"{target!r} appears on both sides")
    program = program_from_infix(rhs)
    return FormulaNode(
        id=target,
        target=target,
        independents=tuple(names),
        program=program,
        provenance=Provenance("seed"),
    )


def _infix_tokens(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _INFIX_TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}")
        tokens.append((m.lastgroup or "", m.group()))
        pos = m.end()
    return tokens


def _parse_infix(text: str):
    cur = _Cursor(_infix_tokens(text))
    tree = _parse_sum(cur)
    if cur.peek() is not None:
        raise ParseError(f"trailing input {cur.peek()[1]!r}")  # type: ignore[index]
    return tree


def _parse_sum(cur: _Cursor):
    node = _parse_product(cur)
    while cur.peek() is not None and cur.peek()[1] in "+-":  # type: ignore[index]
        op = cur.advance()[1]
        node = ("bin", _INFIX_OPS[op], node, _parse_product(cur))
    return node


def _parse_product(cur: _Cursor):
    node = _parse_power(cur)
    while cur.peek() is not None and cur.peek()[1] in "*/":  # type: ignore[index]
        op = cur.advance()[1]
        node = ("bin", _INFIX_OPS[op], node, _parse_power(cur))
    return node


def _parse_power(cur: _Cursor):
    node = _parse_atom(cur)
    while cur.peek() is not None and cur.peek()[1] == "^":  # type: ignore[index]
        cur.advance()
        node = ("bin", "exp", node, _parse_atom(cur))
    return node


def _parse_atom(cur: _Cursor):
    kind, text = cur.advance()
    if kind == "number":
        return ("num", float(text))
    if kind == "ident":
        return ("var", text.lower())
    if text == "(":
        node = _parse_sum(cur)
        cur.expect(")")
        return node
    if text == "-":
        # unary minus is only supported directly on a numeric literal
        kind2, text2 = cur.advance()
        if kind2 != "number":
            raise ParseError("unary minus is only allowed before a number")
        return ("num", -float(text2))
    raise ParseError(f"unexpected token {text!r}")


def _tree_variables(tree, seen: list[str] | None = None) -> list[str]:
    if seen is None:
        seen = []
    kind = tree[0]
    if kind == "var" and tree[1] not in seen:
        seen.append(tree[1])
    elif kind == "bin":
        _tree_variables(tree[2], seen)
        _tree_variables(tree[3], seen)
    return seen


def _lower(tree, steps: list[Step]) -> Operand:
    kind = tree[0]
    if kind == "num":
        return Constant(tree[1])
    if kind == "var":
        return VariableRef(tree[1])
    _, op, left, right = tree
    a = _lower(left, steps)
    b = _lower(right, steps)
    steps.append(Step(op, (a, b)))
    return StepRef(len(steps) - 1)
