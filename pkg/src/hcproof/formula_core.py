"""Implicational formulas, foundations and dependency bitstrings.

A foundation is a linearly ordered list of formulas.  Dependency sets over a
foundation are fixed-width bit vectors where bit ``i`` stands for the formula
with ordinal ``i``.  The textual form writes ordinal 0 first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class FoundationError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Imp:
    antecedent: "Formula"
    succedent: "Formula"

    def __str__(self) -> str:
        left = str(self.antecedent)
        if isinstance(self.antecedent, Imp):
            left = f"({left})"
        return f"{left}>{self.succedent}"


Formula = Union[Atom, Imp]

_ATOM_RE = re.compile(r"[A-Za-z0-9_]+")


def parse_formula(text: str) -> Formula:
    """Parse ``A>(B>C)`` style text; ``>`` associates to the right."""
    if not text or not text.strip():
        raise FormulaSyntaxError("empty formula", 0)
    pos = 0

    def skip() -> None:
        nonlocal pos
        while pos < len(text) and text[pos].isspace():
            pos += 1

    def primary() -> Formula:
        nonlocal pos
        skip()
        if pos >= len(text):
            raise FormulaSyntaxError("unexpected end of input", pos)
        if text[pos] == "(":
            pos += 1
            inner = implication()
            skip()
            if pos >= len(text) or text[pos] != ")":
                raise FormulaSyntaxError("expected ')'", pos)
            pos += 1
            return inner
        m = _ATOM_RE.match(text, pos)
        if not m:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        return Atom(m.group(0))

    def implication() -> Formula:
        nonlocal pos
        left = primary()
        skip()
        if pos < len(text) and text[pos] == ">":
            pos += 1
            return Imp(left, implication())
        return left

    result = implication()
    skip()
    if pos != len(text):
        raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
    return result


def format_formula(f: Formula) -> str:
    return str(f)


def depth(f: Formula) -> int:
    if isinstance(f, Atom):
        return 0
    return 1 + max(depth(f.antecedent), depth(f.succedent))


def subformulas(f: Formula) -> set:
    out = {f}
    if isinstance(f, Imp):
        out |= subformulas(f.antecedent)
        out |= subformulas(f.succedent)
    return out


def _as_formula(x) -> Formula:
    return parse_formula(x) if isinstance(x, str) else x


class Foundation:
    """Ordered, duplicate-free sequence of formulas with an ordinal index."""

    __slots__ = ("formulas", "index")

    def __init__(self, formulas: Sequence[Formula]):
        self.formulas = tuple(formulas)
        self.index = {}
        for i, f in enumerate(self.formulas):
            if f in self.index:
                raise FoundationError(f"duplicate formula {f}")
            self.index[f] = i

    def __len__(self) -> int:
        return len(self.formulas)

    def __contains__(self, f) -> bool:
        return f in self.index

    def __iter__(self):
        return iter(self.formulas)

    def __eq__(self, other) -> bool:
        return isinstance(other, Foundation) and self.formulas == other.formulas

    def __hash__(self) -> int:
        return hash(self.formulas)

    def __repr__(self) -> str:
        return f"Foundation({[str(f) for f in self.formulas]})"

    def ordinal(self, f: Formula) -> int:
        try:
            return self.index[f]
        except KeyError:
            raise FoundationError(f"formula {f} not in foundation") from None

    def to_strings(self) -> list:
        return [str(f) for f in self.formulas]


def _default_key(f: Formula):
    if isinstance(f, Atom):
        return (0, 0, f.name)
    return (1, depth(f), str(f))


def build_foundation(formulas: Iterable, explicit_order: Sequence | None = None) -> Foundation:
    fs = {_as_formula(f) for f in formulas}
    if explicit_order is not None:
        order = [_as_formula(f) for f in explicit_order]
        if len(set(order)) != len(order):
            seen = set()
            for f in order:
                if f in seen:
                    raise FoundationError(f"duplicate formula {f} in explicit order")
                seen.add(f)
        missing = fs - set(order)
        if missing:
            raise FoundationError(
                "explicit order misses " + ", ".join(sorted(str(f) for f in missing))
            )
        return Foundation(order)
    return Foundation(sorted(fs, key=_default_key))


@dataclass(frozen=True)
class DepSet:
    bits: int
    width: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.width:
            raise ValueError("bits exceed width")

    def __str__(self) -> str:
        return "".join("1" if (self.bits >> i) & 1 else "0" for i in range(self.width))

    def __contains__(self, ordinal: int) -> bool:
        return bool((self.bits >> ordinal) & 1)

    def ordinals(self) -> list:
        return [i for i in range(self.width) if (self.bits >> i) & 1]

    def count(self) -> int:
        return bin(self.bits).count("1")

    @classmethod
    def zero(cls, width: int) -> "DepSet":
        return cls(0, width)

    @classmethod
    def from_string(cls, s: str) -> "DepSet":
        if any(c not in "01" for c in s):
            raise ValueError(f"not a bitstring: {s!r}")
        bits = 0
        for i, c in enumerate(s):
            if c == "1":
                bits |= 1 << i
        return cls(bits, len(s))


def set_to_bits(f: Foundation, s: Iterable) -> DepSet:
    bits = 0
    for x in s:
        bits |= 1 << f.ordinal(_as_formula(x))
    return DepSet(bits, len(f))


def bits_to_set(f: Foundation, d: DepSet) -> frozenset:
    if d.width != len(f):
        raise FoundationError(f"width {d.width} does not match foundation size {len(f)}")
    return frozenset(f.formulas[i] for i in d.ordinals())


def _check_width(a: DepSet, b: DepSet) -> None:
    if a.width != b.width:
        raise ValueError(f"width mismatch: {a.width} vs {b.width}")


def dep_union(a: DepSet, b: DepSet) -> DepSet:
    _check_width(a, b)
    return DepSet(a.bits | b.bits, a.width)


def dep_singleton(x, f: Foundation) -> DepSet:
    return DepSet(1 << f.ordinal(_as_formula(x)), len(f))


def dep_minus(a: DepSet, x, f: Foundation) -> DepSet:
    if a.width != len(f):
        raise ValueError(f"width mismatch: {a.width} vs {len(f)}")
    x = _as_formula(x)
    if x not in f:
        return a  # never assumed, nothing to discharge
    return DepSet(a.bits & ~(1 << f.ordinal(x)), a.width)


class _Lambda:
    """Sentinel for edges whose dependency set is computed on the fly."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "LAMBDA"

    def __str__(self) -> str:
        return "lambda"

    def __reduce__(self):
        return (_Lambda, ())


LAMBDA = _Lambda()


def parse_formula_list(text: str) -> list:
    """Split a comma separated list of formulas, respecting parentheses."""
    out, depth_, cur = [], 0, []
    for ch in text:
        if ch == "," and depth_ == 0:
            piece = "".join(cur).strip()
            if piece:
                out.append(parse_formula(piece))
            cur = []
            continue
        depth_ += ch == "("
        depth_ -= ch == ")"
        cur.append(ch)
    piece = "".join(cur).strip()
    if piece:
        out.append(parse_formula(piece))
    return out
