"""Signal temporal logic over discrete-time integer state trajectories.

Formulas are immutable trees of frozen dataclasses. Robustness is evaluated
exactly with :class:`fractions.Fraction` arithmetic, so results on integer
grid states are exact rationals (usually integers).

Temporal windows are half-open in trajectory index: ``G[a,b) phi`` at time
``t`` inspects samples ``t+a .. t+b-1``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

UNBOUNDED = math.inf

Number = Union[int, Fraction]


class StlError(ValueError):
    """Base class for formula construction, parsing and evaluation errors."""


class StlSyntaxError(StlError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownVariableError(StlError):
    pass


class BoundError(StlError):
    pass


class HorizonError(StlError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Predicate:
    """Linear inequality ``sum(coef * var) <comparator> constant``."""

    coefficients: tuple[tuple[str, Fraction], ...]
    comparator: str
    constant: Fraction

    def __post_init__(self):
        if self.comparator not in ("<", ">"):
            raise StlError(f"comparator must be '<' or '>', got {self.comparator!r}")
        if not any(c != 0 for _, c in self.coefficients):
            raise StlError("predicate needs at least one nonzero coefficient")

    @classmethod
    def linear(cls, coefficients: dict[str, Number], comparator: str, constant: Number) -> "Predicate":
        coefs = tuple((name, Fraction(value)) for name, value in coefficients.items())
        return cls(coefs, comparator, Fraction(constant))


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Always:
    lo: int
    hi: float | int
    child: "Formula"

    def __post_init__(self):
        _check_bounds(self.lo, self.hi)


@dataclass(frozen=True)
class Eventually:
    lo: int
    hi: float | int
    child: "Formula"

    def __post_init__(self):
        _check_bounds(self.lo, self.hi)


@dataclass(frozen=True)
class Until:
    lo: int
    hi: float | int
    left: "Formula"
    right: "Formula"

    def __post_init__(self):
        _check_bounds(self.lo, self.hi)


Formula = Union[Predicate, Not, And, Or, Always, Eventually, Until]
TEMPORAL = (Always, Eventually, Until)


def _check_bounds(lo, hi):
    if lo < 0 or hi < 0:
        raise BoundError(f"negative time bound [{lo},{hi})")
    if not lo < hi:
        raise BoundError(f"empty time window [{lo},{hi}): lower bound must be below upper")


def conjunction(*parts: Formula) -> Formula:
    """Right-folded binary conjunction of one or more formulas."""
    if not parts:
        raise StlError("empty conjunction")
    result = parts[-1]
    for part in reversed(parts[:-1]):
        result = And(part, result)
    return result


def disjunction(*parts: Formula) -> Formula:
    if not parts:
        raise StlError("empty disjunction")
    result = parts[-1]
    for part in reversed(parts[:-1]):
        result = Or(part, result)
    return result


def children(phi: Formula) -> tuple[Formula, ...]:
    if isinstance(phi, Predicate):
        return ()
    if isinstance(phi, (Not, Always, Eventually)):
        return (phi.child,)
    return (phi.left, phi.right)


def is_temporal_free(phi: Formula) -> bool:
    if isinstance(phi, TEMPORAL):
        return False
    return all(is_temporal_free(c) for c in children(phi))


def walk(phi: Formula) -> Iterator[Formula]:
    """Pre-order traversal."""
    yield phi
    for child in children(phi):
        yield from walk(child)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class Trajectory:
    """States ``s_t .. s_{t+k}`` as integer tuples over named variables."""

    states: tuple[tuple[int, ...], ...]
    variables: tuple[str, ...] = ("x", "y")
    start_time: int = 0

    def __post_init__(self):
        if len(self.states) < 1:
            raise StlError("trajectory needs at least one state")
        dim = len(self.variables)
        for s in self.states:
            if len(s) != dim:
                raise StlError(f"state {s} does not match variables {self.variables}")

    @classmethod
    def of(cls, states: Sequence[Sequence[int]], variables: Sequence[str] = ("x", "y"), start_time: int = 0):
        return cls(tuple(tuple(int(v) for v in s) for s in states), tuple(variables), start_time)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Trajectory(self.states[item], self.variables, self.start_time)
        return self.states[item]


@lru_cache(maxsize=4096)
def _weights(p: Predicate, variables: tuple[str, ...]) -> tuple[tuple[int, Fraction], ...]:
    out = []
    for name, coef in p.coefficients:
        try:
            out.append((variables.index(name), coef))
        except ValueError:
            raise UnknownVariableError(f"variable {name!r} not among {variables}") from None
    return tuple(out)


def predicate_robustness(state: Sequence[int], p: Predicate, variables: Sequence[str] = ("x", "y")) -> Fraction:
    """``c - f(s)`` for ``f(s) < c`` and ``f(s) - c`` for ``f(s) > c``."""
    variables = tuple(variables)
    if len(state) != len(variables):
        raise StlError(f"state {tuple(state)} does not match variables {variables}")
    f = sum((coef * state[i] for i, coef in _weights(p, variables)), Fraction(0))
    return p.constant - f if p.comparator == "<" else f - p.constant


def state_robustness(state: Sequence[int], phi: Formula, variables: Sequence[str] = ("x", "y")) -> Fraction:
    """Robustness of a temporal-operator-free formula at a single state."""
    return robustness(Trajectory.of([state], variables), phi, 0)


def robustness(traj: Trajectory, phi: Formula, t: int = 0) -> Fraction:
    """Quantitative robustness of ``phi`` on ``traj`` at index ``t``.

    Raises :class:`HorizonError` if a window runs past the end of the
    trajectory or an unbounded operator is reached; callers clip long
    formulas with :func:`truncate_horizon` first.
    """
    n = len(traj)
    if not 0 <= t < n:
        raise HorizonError(f"time {t} outside trajectory of length {n}")
    h = horizon(phi)
    if h == UNBOUNDED:
        raise HorizonError("unbounded temporal operator reached evaluation; truncate first")
    if t + h > n - 1:
        raise HorizonError(f"formula needs samples up to index {t + h}, trajectory ends at {n - 1}")
    return _rob(traj.states, traj.variables, phi, t)


def _rob(states, variables, phi, t):
    if isinstance(phi, Predicate):
        return predicate_robustness(states[t], phi, variables)
    if isinstance(phi, Not):
        return -_rob(states, variables, phi.child, t)
    if isinstance(phi, And):
        return min(_rob(states, variables, phi.left, t), _rob(states, variables, phi.right, t))
    if isinstance(phi, Or):
        return max(_rob(states, variables, phi.left, t), _rob(states, variables, phi.right, t))
    if isinstance(phi, Always):
        return min(_rob(states, variables, phi.child, u) for u in range(t + phi.lo, t + int(phi.hi)))
    if isinstance(phi, Eventually):
        return max(_rob(states, variables, phi.child, u) for u in range(t + phi.lo, t + int(phi.hi)))
    if isinstance(phi, Until):
        # max over t' of min(right at t', min of left over [t, t'))
        best = None
        running = None
        for u in range(t, t + int(phi.hi)):
            if u >= t + phi.lo:
                right = _rob(states, variables, phi.right, u)
                value = right if running is None else min(right, running)
                best = value if best is None else max(best, value)
            left = _rob(states, variables, phi.left, u)
            running = left if running is None else min(running, left)
        return best
    raise TypeError(f"not a formula: {phi!r}")


def robustness_signal(values, phi: Formula, variables: Sequence[str] = ("x", "y")) -> np.ndarray:
    """Floating-point robustness of ``phi`` at every index it can be evaluated.

    ``values`` is an ``(n, d)`` array of states. Returns an array of length
    ``n - horizon(phi)`` (entry ``t`` equals ``robustness(traj, phi, t)``),
    computed with whole-array window reductions.
    """
    values = np.asarray(values, dtype=float)
    h = horizon(phi)
    if h == UNBOUNDED:
        raise HorizonError("unbounded temporal operator reached evaluation; truncate first")
    if values.ndim != 2 or values.shape[1] != len(variables):
        raise StlError(f"expected an (n, {len(variables)}) array of states")
    if values.shape[0] - h < 1:
        raise HorizonError(f"formula needs {h + 1} samples, trajectory has {values.shape[0]}")
    return _signal(values, phi, tuple(variables))


def _signal(values, phi, variables):
    if isinstance(phi, Predicate):
        f = sum(float(coef) * values[:, i] for i, coef in _weights(phi, variables))
        c = float(phi.constant)
        return c - f if phi.comparator == "<" else f - c
    if isinstance(phi, Not):
        return -_signal(values, phi.child, variables)
    if isinstance(phi, (And, Or)):
        a, b = _signal(values, phi.left, variables), _signal(values, phi.right, variables)
        m = min(len(a), len(b))
        return np.minimum(a[:m], b[:m]) if isinstance(phi, And) else np.maximum(a[:m], b[:m])
    lo, hi = phi.lo, int(phi.hi)
    if isinstance(phi, (Always, Eventually)):
        child = _signal(values, phi.child, variables)
        count = len(child) - hi + 1
        windows = sliding_window_view(child, hi - lo)[lo : lo + count]
        return windows.min(axis=1) if isinstance(phi, Always) else windows.max(axis=1)
    left, right = _signal(values, phi.left, variables), _signal(values, phi.right, variables)
    count = min(len(left), len(right)) - hi + 1
    out = np.empty(count)
    for t in range(count):
        running = np.minimum.accumulate(np.concatenate(([np.inf], left[t : t + hi - 1])))
        out[t] = np.max(np.minimum(right[t + lo : t + hi], running[lo:hi]))
    return out


# ---------------------------------------------------------------------------
# Horizons


def horizon(phi: Formula) -> float | int:
    """Largest look-ahead (in steps) needed to evaluate ``phi`` at one instant."""
    if isinstance(phi, Predicate):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    inner = max(horizon(c) for c in children(phi))
    if phi.hi == UNBOUNDED or inner == UNBOUNDED:
        return UNBOUNDED
    return int(phi.hi) - 1 + inner


def truncate_horizon(phi: Formula, k: int) -> Formula:
    """Clip temporal upper bounds so ``phi`` can be evaluated on ``k`` samples.

    Children are clipped first against the full budget, then each temporal
    node keeps as much of its own window as the remaining budget allows.
    Unbounded windows become finite this way. A window whose lower bound no
    longer fits collapses to a single instant and its children are clipped
    again to fit behind it. The result always satisfies
    ``horizon(result) <= k - 1`` and is ``phi`` itself when nothing needs
    clipping.
    """
    if k <= 0:
        raise HorizonError(f"truncation length must be positive, got {k}")
    return _truncate(phi, k)


@lru_cache(maxsize=65536)
def _truncate(phi: Formula, budget: int) -> Formula:
    if isinstance(phi, Predicate):
        return phi
    if isinstance(phi, Not):
        child = _truncate(phi.child, budget)
        return phi if child is phi.child else Not(child)
    if isinstance(phi, (And, Or)):
        left, right = _truncate(phi.left, budget), _truncate(phi.right, budget)
        if left is phi.left and right is phi.right:
            return phi
        return type(phi)(left, right)

    kids = tuple(_truncate(c, budget) for c in children(phi))
    inner = max(horizon(c) for c in kids)
    hi = min(phi.hi, budget - inner)
    lo = phi.lo
    if hi <= lo:
        # single-instant window; shrink the children so it still fits
        lo = min(lo, budget - 1)
        hi = lo + 1
        kids = tuple(_truncate(c, budget - lo) for c in children(phi))
    if hi == phi.hi and lo == phi.lo and all(a is b for a, b in zip(kids, children(phi))):
        return phi
    if isinstance(phi, Until):
        return Until(lo, hi, kids[0], kids[1])
    return type(phi)(lo, hi, kids[0])


def extract_predicates(phi: Formula) -> list[Formula]:
    """Maximal temporal-operator-free subformulas, left to right, deduplicated.

    Repeated operands of a connective are merged first, so ``G(psi | psi)``
    yields ``psi`` once.
    """
    found: list[Formula] = []

    def visit(node):
        if is_temporal_free(node):
            node = _collapse_idempotent(node)
            if node not in found:
                found.append(node)
            return
        for child in children(node):
            visit(child)

    visit(phi)
    if not found:
        raise StlError("formula contains no predicate")
    return found


def _collapse_idempotent(phi: Formula) -> Formula:
    """Rewrite ``a & a`` and ``a | a`` to ``a`` (robustness is unchanged)."""
    if isinstance(phi, Not):
        return Not(_collapse_idempotent(phi.child))
    if isinstance(phi, (And, Or)):
        left, right = _collapse_idempotent(phi.left), _collapse_idempotent(phi.right)
        return left if left == right else type(phi)(left, right)
    return phi


def strip_outer_always(phi: Formula) -> Formula:
    """Drop an outermost unbounded always, leaving the per-window requirement."""
    if isinstance(phi, Always) and phi.hi == UNBOUNDED and phi.lo == 0:
        return phi.child
    return phi


# ---------------------------------------------------------------------------
# Text syntax

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[!&|<>()\[\],+\-*])
    """,
    re.VERBOSE,
)

_OPERATOR_WORDS = {"G", "F", "U"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # number, ident, op, temporal, eof
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - line_start + 1
        if kind == "ws":
            for i, ch in enumerate(value):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        elif kind == "ident" and value in _OPERATOR_WORDS and _next_nonspace(text, m.end()) == "[":
            tokens.append(_Tok("temporal", value, line, col))
        else:
            tokens.append(_Tok(kind, value, line, col))
        pos = m.end()
    tokens.append(_Tok("eof", "", line, pos - line_start + 1))
    return tokens


def _next_nonspace(text, pos):
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return text[pos] if pos < len(text) else ""


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = tuple(variables)

    def peek(self) -> _Tok:
        return self.tokens[self.pos]

    def advance(self) -> _Tok:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return StlSyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def expect(self, text):
        tok = self.peek()
        if tok.text != text or tok.kind not in ("op",):
            raise self.error(f"expected {text!r}")
        return self.advance()

    def parse(self) -> Formula:
        result = self.or_expr()
        if self.peek().kind != "eof":
            raise self.error("unexpected trailing input")
        return result

    def or_expr(self):
        parts = [self.and_expr()]
        while self.peek().kind == "op" and self.peek().text == "|":
            self.advance()
            parts.append(self.and_expr())
        return disjunction(*parts)

    def and_expr(self):
        parts = [self.unary()]
        while self.peek().kind == "op" and self.peek().text == "&":
            self.advance()
            parts.append(self.unary())
        return conjunction(*parts)

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "!":
            self.advance()
            return Not(self.unary())
        if tok.kind == "temporal" and tok.text in ("G", "F"):
            self.advance()
            lo, hi = self.bound()
            child = self.unary()
            return (Always if tok.text == "G" else Eventually)(lo, hi, child)
        left = self.atom()
        if self.peek().kind == "temporal" and self.peek().text == "U":
            self.advance()
            lo, hi = self.bound()
            return Until(lo, hi, left, self.unary())
        return left

    def bound(self):
        start = self.expect("[")
        lo_tok = self.advance()
        if lo_tok.kind != "number" or not lo_tok.text.isdigit():
            raise self.error("expected non-negative integer lower bound", lo_tok)
        self.expect(",")
        hi_tok = self.advance()
        if hi_tok.kind == "ident" and hi_tok.text == "inf":
            hi = UNBOUNDED
        elif hi_tok.kind == "number" and hi_tok.text.isdigit():
            hi = int(hi_tok.text)
        else:
            raise self.error("expected integer or 'inf' upper bound", hi_tok)
        self.expect(")")
        lo = int(lo_tok.text)
        if not lo < hi:
            raise BoundError(f"malformed bound [{lo},{hi_tok.text}) at line {start.line}, column {start.column}")
        return lo, hi

    def atom(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.or_expr()
            self.expect(")")
            return inner
        return self.predicate()

    def predicate(self):
        coefs: dict[str, Fraction] = {}
        sign = 1
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            sign = -1
        while True:
            name, coef = self.term()
            coefs[name] = coefs.get(name, Fraction(0)) + sign * coef
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("+", "-"):
                sign = 1 if tok.text == "+" else -1
                self.advance()
                continue
            break
        tok = self.advance()
        if tok.kind != "op" or tok.text not in ("<", ">"):
            raise self.error("expected '<' or '>'", tok)
        constant = self.number()
        try:
            return Predicate(tuple(coefs.items()), tok.text, constant)
        except StlError as exc:
            raise StlSyntaxError(str(exc), tok.line, tok.column) from None

    def number(self) -> Fraction:
        sign = 1
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            sign = -1
        tok = self.advance()
        if tok.kind != "number":
            raise self.error("expected a number", tok)
        return sign * Fraction(tok.text)

    def term(self):
        tok = self.peek()
        coef = Fraction(1)
        if tok.kind == "number":
            coef = self.number()
            self.expect("*")
            tok = self.peek()
        if tok.kind != "ident":
            raise self.error("expected a state variable")
        self.advance()
        if tok.text not in self.variables:
            raise UnknownVariableError(
                f"unknown variable {tok.text!r} at line {tok.line}, column {tok.column}; declared: {', '.join(self.variables)}"
            )
        return tok.text, coef


def parse_stl(text: str, variables: Sequence[str] = ("x", "y"), aliases: dict[str, str] | None = None) -> Formula:
    """Parse ASCII formula text (``G``/``F``/``U`` with ``[lo,hi)`` bounds).

    >>> parse_stl("F[0,4)(x > 10 & y < 3)")
    Eventually(lo=0, hi=4, child=And(...))  # doctest: +SKIP
    """
    if aliases:
        text = expand_aliases(text, aliases)
    return _Parser(text, variables).parse()


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def expand_aliases(text: str, aliases: dict[str, str]) -> str:
    """Substitute named sub-formulas (parenthesized), recursively."""

    def expand(src, active):
        def repl(m):
            name = m.group()
            if name not in aliases:
                return name
            if name in active:
                raise StlError(f"alias cycle through {name!r}")
            return "(" + expand(aliases[name], active | {name}) + ")"

        return _IDENT.sub(repl, src)

    return expand(text, frozenset())


def _format_number(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _format_predicate(p: Predicate) -> str:
    parts = []
    for i, (name, coef) in enumerate(p.coefficients):
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        term = name if mag == 1 else f"{_format_number(mag)}*{name}"
        if i == 0:
            parts.append(("-" if coef < 0 else "") + term)
        else:
            parts.append(f" {sign} {term}")
    const = p.constant
    const_text = ("-" if const < 0 else "") + _format_number(abs(const))
    return "".join(parts) + f" {p.comparator} {const_text}"


def _format_bound(lo, hi) -> str:
    return f"[{lo},{'inf' if hi == UNBOUNDED else int(hi)})"


def format_stl(phi: Formula) -> str:
    """Render ``phi`` in the text syntax; ``parse_stl`` inverts it exactly."""
    if isinstance(phi, Predicate):
        return _format_predicate(phi)
    if isinstance(phi, Not):
        return f"!({format_stl(phi.child)})"
    if isinstance(phi, And):
        return f"({format_stl(phi.left)}) & ({format_stl(phi.right)})"
    if isinstance(phi, Or):
        return f"({format_stl(phi.left)}) | ({format_stl(phi.right)})"
    if isinstance(phi, Always):
        return f"G{_format_bound(phi.lo, phi.hi)}({format_stl(phi.child)})"
    if isinstance(phi, Eventually):
        return f"F{_format_bound(phi.lo, phi.hi)}({format_stl(phi.child)})"
    if isinstance(phi, Until):
        return f"({format_stl(phi.left)}) U{_format_bound(phi.lo, phi.hi)} ({format_stl(phi.right)})"
    raise TypeError(f"not a formula: {phi!r}")


def variables_of(phi: Formula) -> list[str]:
    names: list[str] = []
    for node in walk(phi):
        if isinstance(node, Predicate):
            for name, _ in node.coefficients:
                if name not in names:
                    names.append(name)
    return names
