"""Number formatting and normalization shared by the DSL serializer and the
report pipeline.

Normalization strips currency symbols, thousands separators and percent
signs, and resolves magnitude words (thousand/million/billion) to base
units. All scaling goes through Decimal so that e.g. "2.4 million" lands
exactly on 2400000.0.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation

DEFAULT_UNIT_FACTORS: dict[str, int] = {
    "thousand": 10**3,
    "million": 10**6,
    "billion": 10**9,
}


class NumberFormatError(ValueError):
    """A string could not be normalized to a finite number."""


class UnknownUnit(NumberFormatError):
    """A magnitude word was present but is not in the unit table."""


def format_number(x: float) -> str:
    """Shortest decimal string that round-trips through float()."""
    if x == 0:
        return "0"
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


_LITERAL = re.compile(
    r"""\$?\s*
        (?P<num>-?\d[\d,]*(?:\.\d+)?(?:[eE][-+]?\d+)?)
        (?:\s*(?P<unit>%|[a-zA-Z]+))?
    """,
    re.VERBOSE,
)

_UNIT_LIKE = re.compile(r"^(%|[a-z]+s?)$")


def normalize_literal(text: str, unit_factors: dict[str, int] | None = None) -> float:
    """Normalize one numeric literal such as "$15,191.5" or "2.4 million".

    Raises NumberFormatError for unparseable input and UnknownUnit when a
    magnitude word is attached that the unit table does not resolve.
    """
    factors = DEFAULT_UNIT_FACTORS if unit_factors is None else unit_factors
    s = text.strip()
    if not s:
        raise NumberFormatError("empty literal")
    m = _LITERAL.fullmatch(s)
    if m is None:
        raise NumberFormatError(f"not a numeric literal: {text!r}")
    num = m.group("num").replace(",", "")
    try:
        value = Decimal(num)
    except InvalidOperation as exc:
        raise NumberFormatError(f"bad number: {text!r}") from exc
    unit = m.group("unit")
    if unit:
        value = _apply_unit(value, unit, factors)
    result = float(value)
    if result != result or result in (float("inf"), float("-inf")):
        raise NumberFormatError(f"not finite: {text!r}")
    return result


def _apply_unit(value: Decimal, unit: str, factors: dict[str, int]) -> Decimal:
    if unit == "%":
        return value / 100
    word = unit.lower()
    if word.endswith("s"):
        word = word[:-1]
    if word in factors:
        return value * factors[word]
    raise UnknownUnit(f"unresolvable unit word: {unit!r}")


_SCAN = re.compile(
    r"""\$?\s?
        (?P<num>-?\d[\d,]*(?:\.\d+)?)
        (?P<unit>\s*(?:%|thousands?|millions?|billions?))?
    """,
    re.VERBOSE | re.IGNORECASE,
)


def find_literals(sentence: str, unit_factors: dict[str, int] | None = None) -> list[float]:
    """All normalized numeric literals appearing in a sentence or cell."""
    factors = DEFAULT_UNIT_FACTORS if unit_factors is None else unit_factors
    out: list[float] = []
    for m in _SCAN.finditer(sentence):
        token = m.group("num") + (m.group("unit") or "")
        try:
            out.append(normalize_literal(token, factors))
        except NumberFormatError:
            continue
    return out
