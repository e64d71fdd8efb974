"""Exact counts of valid expression trees per complexity (dynamic programming
over two strata: trees with no unary operator vs at least one), plus uniform
sampling and exhaustive enumeration at a fixed complexity.

Validity: a proper tree over the alphabet in which no unary operator appears
anywhere inside another unary operator's subtree. Trees are counted by
structure, not by algebraic value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import BINARY_OPS, UNARY_OPS, Binary, Const, Expr, Unary, Var

# Enumeration above this complexity produces tens of millions of trees.
ENUMERATE_MAX_C = 8


class EmptyStratum(ValueError):
    """No valid tree exists at the requested complexity."""


class BudgetExceeded(ValueError):
    """Enumeration refused: the result list would be too large."""


@dataclass(frozen=True)
class Alphabet:
    """Symbol counts: m_t terminals, m_u unary operators, m_b binary operators."""

    m_t: int = 5
    m_u: int = 4
    m_b: int = 4

    def __post_init__(self):
        if min(self.m_t, self.m_u, self.m_b) < 1:
            raise ValueError("alphabet counts must be >= 1")


def default_terminals(n_vars: int = 4) -> list[Expr]:
    """x1..x{n_vars} plus a unit-constant placeholder (m_t = n_vars + 1)."""
    return [Var(i) for i in range(n_vars)] + [Const(1.0)]


@dataclass(frozen=True)
class CountTable:
    """F[i]: valid trees of complexity i with no unary operator.
    G[i]: valid trees of complexity i with at least one unary operator.
    Plain Python ints throughout; the counts overflow 64 bits near i = 20."""

    F: tuple[int, ...]
    G: tuple[int, ...]
    alphabet: Alphabet = field(default_factory=Alphabet)

    @property
    def c_max(self) -> int:
        return len(self.F) - 1


def count_tables(c_max: int, alphabet: Alphabet | None = None) -> CountTable:
    """Fill F and G up to c_max.

    F[0] = m_t and F[i] = m_b * sum_j F[j]*F[i-j-2] (root must be binary, the
    two subtrees split the remaining complexity). G[0] = 0 and
    G[i] = m_u*F[i-1] + m_b * sum_j (G[j]G' + G[j]F' + F[j]G') where the
    primes denote index i-j-2: a unary root forces an operator-free child,
    a binary root needs a unary somewhere below.
    """
    if c_max < 0:
        raise ValueError("c_max must be >= 0")
    a = alphabet if alphabet is not None else Alphabet()
    F = [0] * (c_max + 1)
    G = [0] * (c_max + 1)
    F[0] = a.m_t
    for i in range(1, c_max + 1):
        f = 0
        g = 0
        for j in range(i - 1):
            k = i - j - 2
            f += F[j] * F[k]
            g += G[j] * G[k] + G[j] * F[k] + F[j] * G[k]
        F[i] = a.m_b * f
        G[i] = a.m_u * F[i - 1] + a.m_b * g
    return CountTable(tuple(F), tuple(G), a)


def search_space(table: CountTable, c: int) -> tuple[int, int]:
    """(trees of complexity exactly c, trees of complexity <= c)."""
    if not 0 <= c <= table.c_max:
        raise IndexError(f"complexity {c} outside table range 0..{table.c_max}")
    exact = table.F[c] + table.G[c]
    cumulative = sum(table.F[i] + table.G[i] for i in range(c + 1))
    return exact, cumulative


def sample_by_weight(weights: Sequence[int], rng: np.random.Generator) -> int:
    """Index i with probability weights[i] / sum(weights). Integer weights can
    exceed float range, so the draw is done in exact integer arithmetic."""
    total = sum(weights)
    if total <= 0:
        raise ValueError("weights sum to zero")
    # rng.random() has 53 random bits; stretch to the full integer range.
    r = int(rng.integers(0, 1 << 63)) if total < (1 << 63) else None
    if r is None:
        bits = total.bit_length() + 10
        r = 0
        for _ in range((bits + 62) // 63):
            r = (r << 63) | int(rng.integers(0, 1 << 63))
        r %= total
    else:
        r = r % total
    acc = 0
    for i, w in enumerate(weights):
        acc += w
        if r < acc:
            return i
    return len(weights) - 1


def _check_names(table: CountTable, terminals, unary_names, binary_names):
    a = table.alphabet
    if len(terminals) != a.m_t:
        raise ValueError(f"need {a.m_t} terminals, got {len(terminals)}")
    if len(unary_names) != a.m_u:
        raise ValueError(f"need {a.m_u} unary ops, got {len(unary_names)}")
    if len(binary_names) != a.m_b:
        raise ValueError(f"need {a.m_b} binary ops, got {len(binary_names)}")


def sample_expression(c: int, table: CountTable,
                      terminals: Sequence[Expr] | None = None,
                      unary_names: Sequence[str] = UNARY_OPS,
                      binary_names: Sequence[str] = BINARY_OPS,
                      rng: np.random.Generator | None = None) -> Expr:
    """One tree of complexity exactly c, uniform over all valid trees of that
    complexity. Stratifies on unary-present vs unary-free with weights
    (F[c], G[c]), then follows the count recurrences to pick root and split."""
    if terminals is None:
        terminals = default_terminals(table.alphabet.m_t - 1)
    _check_names(table, terminals, unary_names, binary_names)
    if rng is None:
        rng = np.random.default_rng()
    F, G = table.F, table.G
    if c > table.c_max:
        raise IndexError(f"complexity {c} outside table range 0..{table.c_max}")
    if F[c] + G[c] == 0:
        raise EmptyStratum(f"no valid tree of complexity {c}")

    def pick(seq):
        return seq[int(rng.integers(0, len(seq)))]

    def sample_nu(n: int) -> Expr:
        if n == 0:
            return pick(terminals)
        weights = [F[j] * F[n - j - 2] for j in range(n - 1)]
        j = sample_by_weight(weights, rng)
        op = pick(binary_names)
        return Binary(op, sample_nu(j), sample_nu(n - j - 2))

    def sample_u(n: int) -> Expr:
        unary_count = table.alphabet.m_u * F[n - 1]
        if sample_by_weight([unary_count, G[n] - unary_count], rng) == 0:
            return Unary(pick(unary_names), sample_nu(n - 1))
        # binary root: joint weights over (left complexity j, which side holds
        # the unary operators)
        weights = []
        kinds = []
        for j in range(n - 1):
            k = n - j - 2
            weights += [G[j] * G[k], G[j] * F[k], F[j] * G[k]]
            kinds += [(j, "uu"), (j, "uf"), (j, "fu")]
        idx = sample_by_weight(weights, rng)
        j, kind = kinds[idx]
        k = n - j - 2
        op = pick(binary_names)
        left = sample_u(j) if kind[0] == "u" else sample_nu(j)
        right = sample_u(k) if kind[1] == "u" else sample_nu(k)
        return Binary(op, left, right)

    if sample_by_weight([F[c], G[c]], rng) == 0:
        return sample_nu(c)
    return sample_u(c)


def enumerate_expressions(c: int,
                          terminals: Sequence[Expr] | None = None,
                          unary_names: Sequence[str] = UNARY_OPS,
                          binary_names: Sequence[str] = BINARY_OPS) -> list[Expr]:
    """All valid trees of complexity exactly c, as a flat list.

    Oracle for count_tables and the sampler; refuses c > 8 because the list
    grows past 4e7 entries there.
    """
    if c > ENUMERATE_MAX_C:
        raise BudgetExceeded(f"enumeration limited to complexity <= {ENUMERATE_MAX_C}")
    if c < 0:
        raise ValueError("complexity must be >= 0")
    if terminals is None:
        terminals = default_terminals(4)

    nu_memo: dict[int, list[Expr]] = {}
    u_memo: dict[int, list[Expr]] = {}

    def enum_nu(n: int) -> list[Expr]:
        if n in nu_memo:
            return nu_memo[n]
        if n == 0:
            out = list(terminals)
        else:
            out = []
            for j in range(n - 1):
                for left in enum_nu(j):
                    for right in enum_nu(n - j - 2):
                        for op in binary_names:
                            out.append(Binary(op, left, right))
        nu_memo[n] = out
        return out

    def enum_u(n: int) -> list[Expr]:
        if n in u_memo:
            return u_memo[n]
        out = []
        if n >= 1:
            for op in unary_names:
                for child in enum_nu(n - 1):
                    out.append(Unary(op, child))
            for j in range(n - 1):
                k = n - j - 2
                pairs = []
                pairs += [(l, r) for l in enum_u(j) for r in enum_u(k)]
                pairs += [(l, r) for l in enum_u(j) for r in enum_nu(k)]
                pairs += [(l, r) for l in enum_nu(j) for r in enum_u(k)]
                for left, right in pairs:
                    for op in binary_names:
                        out.append(Binary(op, left, right))
        u_memo[n] = out
        return out

    return enum_nu(c) + enum_u(c)
