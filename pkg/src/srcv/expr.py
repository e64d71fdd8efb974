"""Expression trees over {+,-,*,/} x {sin,cos,exp,log}: evaluation, parsing,
printing, complexity, skeletons, simplification, numeric equivalence."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

UNARY_OPS = ("sin", "cos", "exp", "log")
BINARY_OPS = ("+", "-", "*", "/")

# |denominator| below this raises DomainError instead of dividing.
DIV_GUARD = 1e-12

# Integer exponents up to this bound are expanded to repeated multiplication;
# everything else desugars to exp(b*log(a)).
MAX_INT_POWER = 6


class DomainError(ValueError):
    """Evaluation left the valid domain (log<=0, near-zero divisor, overflow)."""


class InsufficientDomain(RuntimeError):
    """Too few points where both expressions evaluate, even after resampling."""


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    slot: int


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Var, Const, Param, Unary, Binary]


@dataclass(frozen=True)
class Skeleton:
    """Expression whose constants have been replaced by parameter slots 0..J-1."""

    expr: Expr
    param_count: int


# ---------------------------------------------------------------------------
# Structure queries
# ---------------------------------------------------------------------------

def complexity(e: Expr) -> int:
    """2 * (#binary operators) + (#unary operators); terminals count zero."""
    if isinstance(e, Binary):
        return 2 + complexity(e.left) + complexity(e.right)
    if isinstance(e, Unary):
        return 1 + complexity(e.child)
    return 0


def count_nodes(e: Expr) -> int:
    if isinstance(e, Binary):
        return 1 + count_nodes(e.left) + count_nodes(e.right)
    if isinstance(e, Unary):
        return 1 + count_nodes(e.child)
    return 1


def free_vars(e: Expr) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Unary):
        return free_vars(e.child)
    if isinstance(e, Binary):
        return free_vars(e.left) | free_vars(e.right)
    return set()


def contains_param(e: Expr) -> bool:
    if isinstance(e, Param):
        return True
    if isinstance(e, Unary):
        return contains_param(e.child)
    if isinstance(e, Binary):
        return contains_param(e.left) or contains_param(e.right)
    return False


def has_nested_unary(e: Expr, inside: bool = False) -> bool:
    """True if some unary operator sits anywhere under another unary operator."""
    if isinstance(e, Unary):
        return inside or has_nested_unary(e.child, True)
    if isinstance(e, Binary):
        return has_nested_unary(e.left, inside) or has_nested_unary(e.right, inside)
    return False


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _eval(e: Expr, X: np.ndarray, params: Sequence[float]):
    # Returns a scalar for constant subtrees, else an (n,) array.
    cls = e.__class__
    if cls is Var:
        return X[:, e.index]
    if cls is Const:
        return e.value
    if cls is Param:
        return params[e.slot]
    if cls is Unary:
        v = _eval(e.child, X, params)
        op = e.op
        if op == "sin":
            return np.sin(v)
        if op == "cos":
            return np.cos(v)
        if op == "exp":
            r = np.exp(v)
            if not np.all(np.isfinite(r)):
                raise DomainError("exp overflow")
            return r
        if np.any(v <= 0.0):
            raise DomainError("log of non-positive value")
        return np.log(v)
    a = _eval(e.left, X, params)
    b = _eval(e.right, X, params)
    op = e.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if np.any(np.abs(b) < DIV_GUARD):
        raise DomainError("division by near-zero denominator")
    return a / b


def evaluate_batch(e: Expr, X: np.ndarray, params: Sequence[float] = ()) -> np.ndarray:
    """Evaluate e at every row of X (n x d). Raises DomainError if any point
    is invalid or the result is non-finite anywhere."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with np.errstate(all="ignore"):
        vals = _eval(e, X, params)
    if np.ndim(vals) == 0:
        vals = np.full(X.shape[0], float(vals))
    if not np.all(np.isfinite(vals)):
        raise DomainError("non-finite result")
    return vals


def evaluate(e: Expr, point: Sequence[float], params: Sequence[float] = ()) -> float:
    """Evaluate e at a single point."""
    return float(evaluate_batch(e, np.asarray(point, dtype=float).reshape(1, -1), params)[0])


def _eval_masked(e: Expr, X: np.ndarray, params, mask: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    cls = e.__class__
    if cls is Var:
        return X[:, e.index]
    if cls is Const:
        return np.full(n, e.value)
    if cls is Param:
        return np.full(n, float(params[e.slot]))
    if cls is Unary:
        v = _eval_masked(e.child, X, params, mask)
        op = e.op
        if op == "sin":
            return np.sin(v)
        if op == "cos":
            return np.cos(v)
        if op == "exp":
            r = np.exp(v)
            mask &= np.isfinite(r)
            return np.where(np.isfinite(r), r, 0.0)
        bad = v <= 0.0
        mask &= ~bad
        return np.log(np.where(bad, 1.0, v))
    a = _eval_masked(e.left, X, params, mask)
    b = _eval_masked(e.right, X, params, mask)
    op = e.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    bad = np.abs(b) < DIV_GUARD
    mask &= ~bad
    return a / np.where(bad, 1.0, b)


def evaluate_masked(e: Expr, X: np.ndarray, params: Sequence[float] = ()):
    """Evaluate e per row, returning (values, valid_mask) instead of raising.

    Invalid rows hold placeholder values and are flagged False in the mask.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mask = np.ones(X.shape[0], dtype=bool)
    with np.errstate(all="ignore"):
        vals = _eval_masked(e, X, params, mask)
    mask &= np.isfinite(vals)
    return np.where(mask, vals, 0.0), mask


def evaluate_with_param_grad(e: Expr, X: np.ndarray, params: Sequence[float]):
    """Evaluate e and the gradient of its values w.r.t. the parameter vector.

    Returns (values (n,), grads (n, J)). One forward pass builds a tape, one
    reverse pass accumulates adjoints into the Param slots. Domain guards match
    evaluate_batch, and a non-finite gradient also raises DomainError so
    callers can treat it as a rejected point.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    params = np.asarray(params, dtype=float)
    # tape rows: (kind, payload, child indices); vals[i] aligned with tape[i]
    tape: list[tuple[str, object, tuple[int, ...]]] = []
    vals: list = []

    def fwd(node: Expr) -> int:
        cls = node.__class__
        if cls is Var:
            tape.append(("var", node.index, ()))
            vals.append(X[:, node.index])
        elif cls is Const:
            tape.append(("const", None, ()))
            vals.append(node.value)
        elif cls is Param:
            tape.append(("param", node.slot, ()))
            vals.append(float(params[node.slot]))
        elif cls is Unary:
            ci = fwd(node.child)
            v = vals[ci]
            op = node.op
            if op == "sin":
                r = np.sin(v)
            elif op == "cos":
                r = np.cos(v)
            elif op == "exp":
                r = np.exp(v)
                if not np.isfinite(r).all():
                    raise DomainError("exp overflow")
            else:
                if (np.asarray(v) <= 0.0).any():
                    raise DomainError("log of non-positive value")
                r = np.log(v)
            tape.append((op, None, (ci,)))
            vals.append(r)
        else:
            li = fwd(node.left)
            ri = fwd(node.right)
            a, b = vals[li], vals[ri]
            op = node.op
            if op == "+":
                r = a + b
            elif op == "-":
                r = a - b
            elif op == "*":
                r = a * b
            else:
                if (np.abs(np.asarray(b)) < DIV_GUARD).any():
                    raise DomainError("division by near-zero denominator")
                r = a / b
            tape.append((op, None, (li, ri)))
            vals.append(r)
        return len(tape) - 1

    with np.errstate(all="ignore"):
        root = fwd(e)
        out = vals[root]
        if np.ndim(out) == 0:
            out = np.full(n, float(out))
        if not np.isfinite(out).all():
            raise DomainError("non-finite result")

        grads = np.zeros((n, params.size))
        adj: list[np.ndarray | None] = [None] * len(tape)
        adj[root] = np.ones(n)

        def push(i: int, contribution: np.ndarray) -> None:
            adj[i] = contribution if adj[i] is None else adj[i] + contribution

        for i in range(len(tape) - 1, -1, -1):
            a = adj[i]
            if a is None:
                continue
            kind, payload, kids = tape[i]
            if kind == "param":
                grads[:, payload] += a
            elif kind == "sin":
                push(kids[0], a * np.cos(vals[kids[0]]))
            elif kind == "cos":
                push(kids[0], -a * np.sin(vals[kids[0]]))
            elif kind == "exp":
                push(kids[0], a * vals[i])
            elif kind == "log":
                push(kids[0], a / vals[kids[0]])
            elif kind == "+":
                push(kids[0], a)
                push(kids[1], a)
            elif kind == "-":
                push(kids[0], a)
                push(kids[1], -a)
            elif kind == "*":
                push(kids[0], a * vals[kids[1]])
                push(kids[1], a * vals[kids[0]])
            elif kind == "/":
                b = vals[kids[1]]
                push(kids[0], a / b)
                push(kids[1], -a * vals[kids[0]] / (b * b))

    if not np.isfinite(grads).all():
        raise DomainError("non-finite parameter gradient")
    return out, grads


# ---------------------------------------------------------------------------
# Skeletons
# ---------------------------------------------------------------------------

def skeletonize(e: Expr) -> tuple[Skeleton, np.ndarray]:
    """Replace every constant by a fresh parameter slot (depth-first order).

    Returns the skeleton and the original constant values as the initial
    parameter vector.
    """
    init: list[float] = []

    def rec(node: Expr) -> Expr:
        if isinstance(node, Const):
            init.append(node.value)
            return Param(len(init) - 1)
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        if isinstance(node, Binary):
            left = rec(node.left)
            return Binary(node.op, left, rec(node.right))
        if isinstance(node, Param):
            raise ValueError("skeletonize expects a ground expression")
        return node

    skel = rec(e)
    return Skeleton(skel, len(init)), np.asarray(init, dtype=float)


def instantiate(s: Skeleton, params: Sequence[float]) -> Expr:
    """Substitute numeric values for every parameter slot."""
    if len(params) != s.param_count:
        raise ValueError(f"expected {s.param_count} parameters, got {len(params)}")

    def rec(node: Expr) -> Expr:
        if isinstance(node, Param):
            return Const(float(params[node.slot]))
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        if isinstance(node, Binary):
            return Binary(node.op, rec(node.left), rec(node.right))
        return node

    return rec(s.expr)


def substitute_params(e: Expr, replacements: Sequence[Expr]) -> Expr:
    """Replace Param(slot) with replacements[slot] (used to splice discovered
    sub-expressions back into a skeleton)."""

    def rec(node: Expr) -> Expr:
        if isinstance(node, Param):
            return replacements[node.slot]
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        if isinstance(node, Binary):
            return Binary(node.op, rec(node.left), rec(node.right))
        return node

    return rec(e)


def rename_vars(e: Expr, mapping: Mapping[int, int]) -> Expr:
    def rec(node: Expr) -> Expr:
        if isinstance(node, Var):
            return Var(mapping.get(node.index, node.index))
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        if isinstance(node, Binary):
            return Binary(node.op, rec(node.left), rec(node.right))
        return node

    return rec(e)


def renumber_params(e: Expr) -> Expr:
    """Renumber parameter slots contiguously in depth-first order."""
    counter = [0]

    def rec(node: Expr) -> Expr:
        if isinstance(node, Param):
            counter[0] += 1
            return Param(counter[0] - 1)
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        if isinstance(node, Binary):
            left = rec(node.left)
            return Binary(node.op, left, rec(node.right))
        return node

    return rec(e)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_PARAM_RE = re.compile(r"^C(\d+)$")
_XVAR_RE = re.compile(r"^x(\d+)$")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tok = None
        self.tok_pos = 0
        self.advance()

    def advance(self):
        if self.pos >= len(self.text):
            self.tok = None
            self.tok_pos = self.pos
            return
        m = _TOKEN_RE.match(self.text, self.pos)
        if m is None or m.end() == self.pos:
            # Nothing matched but characters remain (after possible whitespace).
            stripped = self.text[self.pos:].lstrip()
            if not stripped:
                self.tok = None
                self.tok_pos = len(self.text)
                self.pos = len(self.text)
                return
            raise ParseError(f"unexpected character {stripped[0]!r}",
                             len(self.text) - len(stripped))
        self.tok_pos = m.start() + len(m.group(0)) - len(m.group(0).lstrip())
        if m.group("num") is not None:
            self.tok = ("num", float(m.group("num")))
        elif m.group("ident") is not None:
            self.tok = ("ident", m.group("ident"))
        else:
            self.tok = ("op", m.group("op"))
        self.pos = m.end()


def _desugar_power(base: Expr, exponent: Expr) -> Expr:
    if isinstance(exponent, Const):
        v = exponent.value
        if v == round(v) and 1 <= v <= MAX_INT_POWER:
            n = int(round(v))
            out = base
            for _ in range(n - 1):
                out = Binary("*", out, base)
            return out
    return Unary("exp", Binary("*", exponent, Unary("log", base)))


def _resolve_ident(name: str, names: Sequence[str] | None, pos: int) -> Expr:
    if names is not None:
        try:
            return Var(names.index(name))
        except ValueError:
            pass
    m = _PARAM_RE.match(name)
    if m:
        return Param(int(m.group(1)) - 1)
    m = _XVAR_RE.match(name)
    if m:
        return Var(int(m.group(1)) - 1)
    if name == "x":
        return Var(0)
    if name == "y":
        return Var(1)
    raise ParseError(f"unknown identifier {name!r}", pos)


def parse(text: str, names: Sequence[str] | None = None) -> Expr:
    """Parse an infix expression string.

    Variables: x1..xd (aliases x, y for two-variable input), or any name in
    `names`. Parameters: C1..CJ. `a^b` desugars to repeated multiplication for
    integer literal exponents 1..6, else to exp(b*log(a)).
    """
    tz = _Tokenizer(text)

    def expect_op(sym: str):
        if tz.tok != ("op", sym):
            raise ParseError(f"expected {sym!r}", tz.tok_pos)
        tz.advance()

    def parse_expr() -> Expr:
        node = parse_term()
        while tz.tok in (("op", "+"), ("op", "-")):
            op = tz.tok[1]
            tz.advance()
            node = Binary(op, node, parse_term())
        return node

    def parse_term() -> Expr:
        node = parse_factor()
        while tz.tok in (("op", "*"), ("op", "/")):
            op = tz.tok[1]
            tz.advance()
            node = Binary(op, node, parse_factor())
        return node

    def parse_factor() -> Expr:
        if tz.tok == ("op", "-"):
            tz.advance()
            inner = parse_factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Binary("-", Const(0.0), inner)
        return parse_power()

    def parse_power() -> Expr:
        base = parse_atom()
        if tz.tok == ("op", "^"):
            tz.advance()
            return _desugar_power(base, parse_factor())
        return base

    def parse_atom() -> Expr:
        tok = tz.tok
        if tok is None:
            raise ParseError("unexpected end of input", tz.tok_pos)
        kind, val = tok
        if kind == "num":
            tz.advance()
            return Const(float(val))
        if kind == "ident":
            pos = tz.tok_pos
            tz.advance()
            if val in UNARY_OPS:
                expect_op("(")
                inner = parse_expr()
                expect_op(")")
                return Unary(val, inner)
            return _resolve_ident(val, names, pos)
        if tok == ("op", "("):
            tz.advance()
            inner = parse_expr()
            expect_op(")")
            return inner
        raise ParseError(f"unexpected token {val!r}", tz.tok_pos)

    node = parse_expr()
    if tz.tok is not None:
        raise ParseError(f"trailing input {tz.tok[1]!r}", tz.tok_pos)
    return node


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v: float, precision: int) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.{precision}g}"


def _is_neg(e: Expr) -> bool:
    return isinstance(e, Binary) and e.op == "-" and e.left == Const(0.0)


def to_string(e: Expr, precision: int = 6, names: Sequence[str] | None = None) -> str:
    """Infix form; parses back to the identical tree (constants permitting)."""

    def prec(node: Expr) -> int:
        if _is_neg(node):
            return 1
        if isinstance(node, Binary):
            return _PREC[node.op]
        return 3

    def rec(node: Expr) -> str:
        if isinstance(node, Var):
            return names[node.index] if names is not None else f"x{node.index + 1}"
        if isinstance(node, Const):
            if node.value < 0:
                return f"(-{_fmt_const(-node.value, precision)})"
            return _fmt_const(node.value, precision)
        if isinstance(node, Param):
            return f"C{node.slot + 1}"
        if isinstance(node, Unary):
            return f"{node.op}({rec(node.child)})"
        if _is_neg(node):
            inner = rec(node.right)
            if prec(node.right) < 3:
                inner = f"({inner})"
            return f"-{inner}"
        p = _PREC[node.op]
        left = rec(node.left)
        if prec(node.left) < p:
            left = f"({left})"
        right = rec(node.right)
        if prec(node.right) <= p:
            right = f"({right})"
        if p == 1:
            return f"{left} {node.op} {right}"
        return f"{left}{node.op}{right}"

    return rec(e)


# ---------------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------------

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _fold_unary(op: str, v: float) -> Expr | None:
    if op == "log":
        if v <= 0.0:
            return None
        return Const(math.log(v))
    if op == "exp":
        r = math.exp(v) if v < 709 else math.inf
        return Const(r) if math.isfinite(r) else None
    return Const(math.sin(v) if op == "sin" else math.cos(v))


def _fold_binary(op: str, a: float, b: float) -> Expr | None:
    if op == "/" and abs(b) < DIV_GUARD:
        return None
    r = {"+": a + b, "-": a - b, "*": a * b, "/": a / b if abs(b) >= DIV_GUARD else 0.0}[op]
    return Const(r) if math.isfinite(r) else None


def simplify(e: Expr) -> Expr:
    """Constant folding, identity elimination (v+0, v*1, v*0, v-0, v/1) and
    merging of nested constant multiplications. Never increases complexity."""
    if isinstance(e, Unary):
        c = simplify(e.child)
        if isinstance(c, Const):
            folded = _fold_unary(e.op, c.value)
            if folded is not None:
                return folded
        return Unary(e.op, c)
    if not isinstance(e, Binary):
        return e
    left = simplify(e.left)
    right = simplify(e.right)
    op = e.op
    if isinstance(left, Const) and isinstance(right, Const):
        folded = _fold_binary(op, left.value, right.value)
        if folded is not None:
            return folded
    if op == "+":
        if right == _ZERO:
            return left
        if left == _ZERO:
            return right
    elif op == "-":
        if right == _ZERO:
            return left
    elif op == "*":
        if left == _ZERO or right == _ZERO:
            return _ZERO
        if right == _ONE:
            return left
        if left == _ONE:
            return right
        merged = _merge_const_mul(left, right)
        if merged is not None:
            return merged
    elif op == "/":
        if right == _ONE:
            return left
    return Binary(op, left, right)


def _split_const_mul(e: Expr) -> tuple[float, Expr] | None:
    # e == c * t or t * c for a Const c; returns (c, t).
    if isinstance(e, Binary) and e.op == "*":
        if isinstance(e.left, Const):
            return e.left.value, e.right
        if isinstance(e.right, Const):
            return e.right.value, e.left
    return None


def _merge_const_mul(left: Expr, right: Expr) -> Expr | None:
    # (a * t1) * (b * t2) with constants a, b collapses to (a*b) * (t1*t2);
    # covers the plain Const * (Const * t) shape too.
    ls = (left.value, None) if isinstance(left, Const) else _split_const_mul(left)
    rs = (right.value, None) if isinstance(right, Const) else _split_const_mul(right)
    if ls is None or rs is None or (ls[1] is None and rs[1] is None):
        return None
    if ls[1] is None or rs[1] is None:
        c = ls[0] * rs[0]
        t = ls[1] if rs[1] is None else rs[1]
        if not math.isfinite(c):
            return None
        return t if c == 1.0 else Binary("*", Const(c), t)
    c = ls[0] * rs[0]
    if not math.isfinite(c):
        return None
    t = Binary("*", ls[1], rs[1])
    return t if c == 1.0 else Binary("*", Const(c), t)


def _rewrite_canonical(e: Expr) -> Expr:
    if isinstance(e, Unary):
        return Unary(e.op, _rewrite_canonical(e.child))
    if not isinstance(e, Binary):
        return e
    left = _rewrite_canonical(e.left)
    right = _rewrite_canonical(e.right)
    op = e.op
    if op == "*" and isinstance(right, Const) and not isinstance(left, Const):
        left, right = right, left
    if op == "/" and isinstance(right, Const) and abs(right.value) >= DIV_GUARD:
        op, left, right = "*", Const(1.0 / right.value), left
        if isinstance(right, Const):
            left, right = right, left
    if (op == "*" and isinstance(left, Const)
            and isinstance(right, Binary) and right.op in ("+", "-")
            and _distribution_pays(right)):
        c = left
        return Binary(right.op,
                      _rewrite_canonical(Binary("*", c, right.left)),
                      _rewrite_canonical(Binary("*", c, right.right)))
    # trailing constants in sums: subtraction becomes addition of the
    # negation, constants move right, and adjacent ones gather so chains
    # like (t - c1) + c2 end as t + c
    if op == "-" and isinstance(right, Const) and not isinstance(left, Const):
        op, right = "+", Const(-right.value)
    if op == "+" and isinstance(left, Const) and not isinstance(right, Const):
        left, right = right, left
    if op == "+" and isinstance(right, Const) and isinstance(left, Binary):
        if left.op == "+" and isinstance(left.right, Const):
            s = left.right.value + right.value
            if math.isfinite(s):
                return Binary("+", left.left, Const(s))
        if left.op == "-" and isinstance(left.left, Const):
            s = left.left.value + right.value
            if math.isfinite(s):
                return Binary("-", Const(s), left.right)
    return Binary(op, left, right)


def _distribution_pays(s: Binary) -> bool:
    # Only distribute a constant over a sum when folding recoups the extra
    # multiply on at least one side.
    def absorbs(t: Expr) -> bool:
        return isinstance(t, Const) or _split_const_mul(t) is not None
    return absorbs(s.left) or absorbs(s.right)


def normalize(e: Expr) -> Expr:
    """Canonicalize: simplify plus constant-left products and distribution of
    constants over sums, e.g. (x1 + 3)*2 becomes 2*x1 + 6. Falls back to plain
    simplify if the rewrite would increase complexity."""
    out = simplify(e)
    for _ in range(10):
        nxt = simplify(_rewrite_canonical(out))
        if nxt == out:
            break
        out = nxt
    if complexity(out) > complexity(e):
        return simplify(e)
    return out


# ---------------------------------------------------------------------------
# Numeric equivalence
# ---------------------------------------------------------------------------

def equivalent(a: Expr, b: Expr, domains: Sequence[tuple[float, float]],
               n_points: int = 1000, tol: float = 1e-6,
               rng: np.random.Generator | None = None) -> bool:
    """Numeric equivalence: max over sampled points of |a-b|/(1+|b|) < tol.

    Points where either side is invalid are skipped, resampling up to a 10x
    budget; raises InsufficientDomain if fewer than n_points valid points can
    be found.
    """
    if rng is None:
        rng = np.random.default_rng(0x5EED)
    lo = np.array([d[0] for d in domains], dtype=float)
    hi = np.array([d[1] for d in domains], dtype=float)
    collected = 0
    worst = 0.0
    for _ in range(10):
        X = rng.uniform(lo, hi, size=(n_points, len(domains)))
        va, ma = evaluate_masked(a, X)
        vb, mb = evaluate_masked(b, X)
        m = ma & mb
        if np.any(m):
            rel = np.abs(va[m] - vb[m]) / (1.0 + np.abs(vb[m]))
            worst = max(worst, float(rel.max()))
            collected += int(m.sum())
        if collected >= n_points:
            return worst < tol
    raise InsufficientDomain(
        f"only {collected} valid points found for equivalence check (need {n_points})")
