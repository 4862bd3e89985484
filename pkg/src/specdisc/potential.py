"""Potential expressions: parsing, canonical printing and evaluation.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := NUMBER | 'x1'..'x3' | 'pi' | 'e' | FUNC '(' expr ')' | '(' expr ')'

so ``-x1^2`` is ``-(x1^2)`` and ``2^3^2`` is ``2^(3^2)``.  There is no implicit
multiplication.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "sqrt": np.sqrt,
    "asinh": np.arcsinh,
    "abs": np.abs,
}
CONSTANTS = {"pi": math.pi, "e": math.e}
MAX_DIM = 3


class PotentialError(ValueError):
    """Base class for potential parsing and evaluation errors."""


class PotentialSyntaxError(PotentialError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class PotentialEvaluationError(PotentialError):
    """Raised when V is not finite or hits a domain error at some point."""


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Expr"


Expr = Union[Num, Var, Const, Neg, BinOp, Call]


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Token:
    kind: str  # 'num', 'name', 'op', 'end'
    text: str
    offset: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            raise PotentialSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, dim: int):
        self.tokens = _tokenize(src)
        self.pos = 0
        self.dim = dim

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def _expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind == "end":
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise PotentialSyntaxError(f"expected {text!r}, found {found}", self.tok.offset)
        self._advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise PotentialSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Num(float(t.text))
        if t.kind == "name":
            self._advance()
            name = t.text
            if name in FUNCTIONS:
                if self.tok.text != "(":
                    raise PotentialSyntaxError(f"function {name!r} needs an argument", self.tok.offset)
                self._advance()
                arg = self.expr()
                if self.tok.text == ",":
                    raise PotentialSyntaxError(f"function {name!r} takes exactly 1 argument", self.tok.offset)
                self._expect(")")
                return Call(name, arg)
            if name in CONSTANTS:
                return Const(name)
            m = re.fullmatch(r"x([1-9][0-9]*)", name)
            if m:
                idx = int(m.group(1))
                if idx > self.dim:
                    raise PotentialSyntaxError(
                        f"variable {name} exceeds dimension {self.dim}", t.offset
                    )
                return Var(idx)
            raise PotentialSyntaxError(f"unknown identifier {name!r}", t.offset)
        if t.kind == "op" and t.text == "(":
            self._advance()
            node = self.expr()
            self._expect(")")
            return node
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise PotentialSyntaxError(f"unexpected {found}", t.offset)


def parse_potential(src: str, dim: int) -> Expr:
    """Parse ``src`` into an expression tree over variables ``x1..x{dim}``."""
    if not 1 <= dim <= MAX_DIM:
        raise PotentialError(f"dimension must be in 1..{MAX_DIM}, got {dim}")
    if not src or not src.strip():
        raise PotentialSyntaxError("empty expression", 0)
    return _Parser(src, dim).parse()


def to_source(node: Expr) -> str:
    """Fully parenthesized canonical form; ``parse_potential`` inverts it."""
    if isinstance(node, Num):
        if not math.isfinite(node.value) or node.value < 0:
            raise PotentialError(f"literal {node.value!r} has no source form")
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)}{node.op}{to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def max_var_index(node: Expr) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Neg):
        return max_var_index(node.operand)
    if isinstance(node, BinOp):
        return max(max_var_index(node.left), max_var_index(node.right))
    if isinstance(node, Call):
        return max_var_index(node.arg)
    return 0


# ---------------------------------------------------------------- evaluation


def _integer_exponent(node: Expr) -> int | None:
    sign = 1
    while isinstance(node, Neg):
        sign = -sign
        node = node.operand
    if isinstance(node, Num) and float(node.value).is_integer() and abs(node.value) < 2**31:
        return sign * int(node.value)
    return None


def _int_power(base: np.ndarray, k: int) -> np.ndarray:
    # square-and-multiply; negative bases are fine
    result = np.ones_like(base)
    acc = base
    n = abs(k)
    while n:
        if n & 1:
            result = result * acc
        n >>= 1
        if n:
            acc = acc * acc
    if k < 0:
        if np.any(result == 0):
            raise PotentialEvaluationError("division by zero in negative integer power")
        result = 1.0 / result
    return result


def _eval(node: Expr, x: np.ndarray) -> np.ndarray:
    # x has shape (npts, dim)
    if isinstance(node, Num):
        return np.full(x.shape[0], node.value)
    if isinstance(node, Var):
        return x[:, node.index - 1].astype(float, copy=True)
    if isinstance(node, Const):
        return np.full(x.shape[0], CONSTANTS[node.name])
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, Call):
        arg = _eval(node.arg, x)
        if node.name == "sqrt" and np.any(arg < 0):
            raise PotentialEvaluationError("sqrt of a negative number")
        return FUNCTIONS[node.name](arg)
    if isinstance(node, BinOp):
        a = _eval(node.left, x)
        if node.op == "^":
            k = _integer_exponent(node.right)
            if k is not None:
                return _int_power(a, k)
            b = _eval(node.right, x)
            if np.any(a <= 0):
                raise PotentialEvaluationError("non-integer power of a non-positive base")
            return np.power(a, b)
        b = _eval(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise PotentialEvaluationError("division by zero")
            return a / b
    raise TypeError(f"not an expression node: {node!r}")


def evaluate_expr(node: Expr, x) -> np.ndarray:
    """Evaluate at points ``x`` of shape (npts, dim); raises instead of returning NaN/Inf."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    with np.errstate(all="ignore"):
        out = _eval(node, pts)
    if not np.all(np.isfinite(out)):
        raise PotentialEvaluationError("potential is not finite at some evaluation point")
    return out


# ---------------------------------------------------------------- named families

FAMILIES = ("harmonic", "gaussian-well", "double-well", "delta")


def _family_source(name: str, params: dict, dim: int) -> str:
    if name == "harmonic":
        c = params["c"]
        return "+".join(f"{float(c[j])!r}*x{j + 1}^2" for j in range(dim))
    if name == "gaussian-well":
        a, s = float(params["A"]), float(params["sigma"])
        r2 = "+".join(f"x{j + 1}^2" for j in range(dim))
        return f"-{a!r}*exp(-({r2})/{s * s!r})"
    if name == "double-well":
        a, b = float(params["a"]), float(params["b"])
        rest = "".join(f"+x{j + 1}^2" for j in range(1, dim))
        return f"{a!r}*(x1^2-{b * b!r})^2{rest}"
    raise PotentialError(f"family {name!r} has no expression form")


def _family_eval(name: str, params: dict, x: np.ndarray) -> np.ndarray:
    dim = x.shape[1]
    if name == "harmonic":
        c = np.asarray(params["c"], dtype=float)
        return np.sum(c[:dim] * x * x, axis=1)
    if name == "gaussian-well":
        a, s = float(params["A"]), float(params["sigma"])
        return -a * np.exp(-np.sum(x * x, axis=1) / (s * s))
    if name == "double-well":
        a, b = float(params["a"]), float(params["b"])
        core = x[:, 0] * x[:, 0] - b * b
        return a * core * core + np.sum(x[:, 1:] * x[:, 1:], axis=1)
    if name == "delta":
        site = np.asarray(params.get("site", [0] * dim), dtype=float)
        hit = np.all(x == site[None, :], axis=1)
        return np.where(hit, float(params["amplitude"]), 0.0)
    raise PotentialError(f"unknown family {name!r}")


@dataclass(frozen=True)
class PotentialSpec:
    """A potential V: R^d -> R, given as an expression or a named family.

    ``decay_exponent_hint`` is the user's claim about the symbol-class decay
    exponent; it is carried along and never checked.
    """

    dim: int
    expr: Expr | None = None
    family: str | None = None
    params: dict = field(default_factory=dict, hash=False)
    decay_exponent_hint: float | None = None

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise PotentialError(f"dimension must be in 1..{MAX_DIM}, got {self.dim}")
        if (self.expr is None) == (self.family is None):
            raise PotentialError("give exactly one of expr or family")
        if self.family is not None:
            if self.family not in FAMILIES:
                raise PotentialError(f"unknown family {self.family!r}")
            if self.family == "harmonic" and len(self.params.get("c", ())) != self.dim:
                raise PotentialError("harmonic family needs one coefficient per axis")
        if self.expr is not None and max_var_index(self.expr) > self.dim:
            raise PotentialError("expression uses a variable beyond the declared dimension")
        h = self.decay_exponent_hint
        if h is not None and not 0 < h <= 1:
            raise PotentialError("decay exponent hint must lie in (0, 1]")

    @classmethod
    def from_source(cls, src: str, dim: int, **kw) -> "PotentialSpec":
        return cls(dim=dim, expr=parse_potential(src, dim), **kw)

    @classmethod
    def named(cls, family: str, dim: int, **params) -> "PotentialSpec":
        return cls(dim=dim, family=family, params=params)

    @property
    def is_delta(self) -> bool:
        return self.family == "delta"

    def source(self) -> str:
        """Expression text equivalent to this potential."""
        if self.expr is not None:
            return to_source(self.expr)
        return _family_source(self.family, self.params, self.dim)

    def __call__(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != self.dim:
            if self.dim == 1 and pts.shape[0] == 1:
                pts = pts.reshape(-1, 1)
            else:
                raise PotentialError(f"points have dimension {pts.shape[1]}, expected {self.dim}")
        if self.expr is not None:
            return evaluate_expr(self.expr, pts)
        with np.errstate(all="ignore"):
            out = _family_eval(self.family, self.params, pts)
        if not np.all(np.isfinite(out)):
            raise PotentialEvaluationError("potential is not finite at some evaluation point")
        return out


def eval_potential(spec: PotentialSpec, x) -> float:
    """V at a single point."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if pt.shape[1] != spec.dim:
        raise PotentialError(f"point has dimension {pt.shape[1]}, expected {spec.dim}")
    if not np.all(np.isfinite(pt)):
        raise PotentialError("evaluation point is not finite")
    return float(spec(pt)[0])
