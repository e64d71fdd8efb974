"""Single-variable symbolic regression: Monte Carlo tree search over leftmost
grammar derivations of expression trees, with constants fitted by BFGS inside
every candidate evaluation.

A derivation state is a preorder sequence of productions plus a stack of
unfilled holes. Terminals cost nothing, so any prefix whose committed
complexity fits the budget can always be completed; rollouts therefore never
dead-end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cvfit import (COEFF_INIT_RANGE, AllRestartsFailed, bfgs_minimize,
                    mse_objective_and_grad)
from .expr import (
    Binary,
    DomainError,
    Expr,
    Param,
    Skeleton,
    Unary,
    Var,
    complexity,
    evaluate_batch,
    instantiate,
    to_string,
)

STD_FLOOR = 1e-8


class NoValidCandidate(RuntimeError):
    """Every rollout produced an invalid candidate on this data."""


@dataclass
class SearchConfig:
    unary_ops: tuple[str, ...] = ("sin", "cos", "exp", "log")
    binary_ops: tuple[str, ...] = ("+", "-", "*", "/")
    uct_c: float = 1.414
    max_complexity: int = 20
    rollouts: int = 20000
    fit_restarts: int = 4
    forbid_nested_unary: bool = True
    reward_scale: float = 1.0
    fit_max_iter: int = 80
    # stop as soon as some candidate's NRMSE drops below this (0 = never)
    stop_nrmse: float = 0.0
    # candidate RANKING discount per unit of complexity: the returned winner
    # maximizes reward * parsimony**complexity. 1.0 ranks purely by reward.
    # Rollout rewards fed back into the tree are never discounted, so this
    # only affects which near-tied candidate is kept, not the search path.
    parsimony: float = 1.0

    def __post_init__(self):
        if self.max_complexity < 0 or self.rollouts < 1:
            raise ValueError("budgets must be positive")
        if not self.unary_ops or not self.binary_ops:
            raise ValueError("operator sets must be non-empty")
        if not 0.0 < self.parsimony <= 1.0:
            raise ValueError("parsimony must be in (0, 1]")


@dataclass
class SvsrResult:
    expr: Expr                  # ground: constants instantiated
    params: np.ndarray
    nrmse: float
    complexity: int
    rollouts_used: int


# ---------------------------------------------------------------------------
# Productions over the derivation grammar
# ---------------------------------------------------------------------------

# kind, payload, complexity cost, holes opened
@dataclass(frozen=True)
class _Production:
    kind: str                   # "var" | "const" | "unary" | "binary"
    payload: str | None
    cost: int
    arity: int


def _productions(cfg: SearchConfig) -> list[_Production]:
    prods = [_Production("var", None, 0, 0), _Production("const", None, 0, 0)]
    prods += [_Production("unary", op, 1, 1) for op in cfg.unary_ops]
    prods += [_Production("binary", op, 2, 2) for op in cfg.binary_ops]
    return prods


def _legal(prods: Sequence[_Production], in_unary: bool, remaining: int,
           forbid_nested: bool) -> list[int]:
    out = []
    for i, p in enumerate(prods):
        if p.cost > remaining:
            continue
        if p.kind == "unary" and in_unary and forbid_nested:
            continue
        out.append(i)
    return out


def _build_skeleton(tokens: Sequence[_Production]) -> Skeleton:
    pos = 0
    n_params = 0

    def rec() -> Expr:
        nonlocal pos, n_params
        p = tokens[pos]
        pos += 1
        if p.kind == "var":
            return Var(0)
        if p.kind == "const":
            n_params += 1
            return Param(n_params - 1)
        if p.kind == "unary":
            return Unary(p.payload, rec())
        left = rec()
        return Binary(p.payload, left, rec())

    expr = rec()
    if pos != len(tokens):
        raise ValueError("dangling tokens after the derivation")
    return Skeleton(expr, n_params)


class _Node:
    __slots__ = ("visits", "total", "children", "untried", "terminal")

    def __init__(self, untried: list[int], terminal: bool):
        self.visits = 0
        self.total = 0.0
        self.children: dict[int, _Node] = {}
        self.untried = untried
        self.terminal = terminal


# ---------------------------------------------------------------------------
# Constant fitting
# ---------------------------------------------------------------------------

def fit_constants(skel: Skeleton, xs: np.ndarray, ys: np.ndarray,
                  restarts: int = 4, rng: np.random.Generator | None = None,
                  max_iter: int = 500) -> tuple[np.ndarray, float]:
    """Fit the skeleton's parameter slots to (xs, ys) by multi-restart BFGS on
    the mean squared error; returns (params, rmse). The first restart starts
    from all-ones, the rest from uniform draws in [-10, 10]."""
    X = np.asarray(xs, dtype=float).reshape(-1, 1)
    ys = np.asarray(ys, dtype=float)
    j = skel.param_count
    if j == 0:
        try:
            pred = evaluate_batch(skel.expr, X)
        except DomainError as err:
            raise AllRestartsFailed(f"invalid on the data: {err}") from err
        with np.errstate(over="ignore", invalid="ignore"):
            return np.empty(0), float(np.sqrt(np.mean((pred - ys) ** 2)))

    objective, grad = mse_objective_and_grad(skel.expr, X, ys)
    if rng is None:
        rng = np.random.default_rng()
    best = None
    for r in range(restarts):
        x0 = np.ones(j) if r == 0 else rng.uniform(*COEFF_INIT_RANGE, size=j)
        if not np.isfinite(objective(x0)):
            continue
        params, mse, _ = bfgs_minimize(objective, x0, max_iter=max_iter,
                                       grad=grad)
        if best is None or mse < best[1]:
            best = (params, mse)
    if best is None:
        raise AllRestartsFailed("no finite starting point for constant fit")
    return best[0], float(np.sqrt(best[1]))


# ---------------------------------------------------------------------------
# The search
# ---------------------------------------------------------------------------

def discover_single(xs: np.ndarray, ys: np.ndarray, cfg: SearchConfig | None = None,
                    rng: np.random.Generator | None = None) -> SvsrResult:
    """MCTS over derivations: UCT selection (unvisited children first, in rule
    order), one-production expansion, uniform random completion, reward
    1/(1 + NRMSE) with NRMSE = fitted RMSE / max(std(ys), 1e-8).

    Returns the best-reward completed candidate; ties prefer lower complexity,
    then the lexicographically smaller printed form. With cfg.parsimony < 1
    the kept candidate instead maximizes reward * parsimony**complexity, which
    breaks near-ties between a short form and a longer one that fits the noise
    marginally better.
    """
    if cfg is None:
        cfg = SearchConfig()
    if rng is None:
        rng = np.random.default_rng()
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size or xs.size < 10:
        raise ValueError("need at least 10 paired samples")
    if np.all(xs == xs[0]):
        raise ValueError("xs are all identical")

    prods = _productions(cfg)
    budget = cfg.max_complexity
    y_std = max(float(np.std(ys)), STD_FLOOR)

    # candidate cache: skeleton print form -> (nrmse, params) or None if invalid
    cache: dict[str, tuple[float, np.ndarray] | None] = {}
    best: tuple[float, int, str, Expr, np.ndarray, float] | None = None
    # (reward, complexity, print form, ground expr, params, nrmse)

    def evaluate_candidate(tokens: list[_Production]) -> float:
        nonlocal best
        skel = _build_skeleton(tokens)
        key = to_string(skel.expr)
        if key in cache:
            hit = cache[key]
            if hit is None:
                return 0.0
            nrmse, params = hit
        else:
            try:
                params, rmse = fit_constants(skel, xs, ys, cfg.fit_restarts,
                                             rng, max_iter=cfg.fit_max_iter)
            except AllRestartsFailed:
                cache[key] = None
                return 0.0
            nrmse = rmse / y_std
            if not np.isfinite(nrmse):
                cache[key] = None
                return 0.0
            cache[key] = (nrmse, params)
        reward = cfg.reward_scale / (1.0 + nrmse)
        cx = complexity(skel.expr)
        ground = instantiate(skel, params)
        ranked = reward if cfg.parsimony == 1.0 else reward * cfg.parsimony ** cx
        entry = (ranked, cx, to_string(ground))
        if (best is None or entry[0] > best[0]
                or (entry[0] == best[0] and (entry[1], entry[2]) < (best[1], best[2]))):
            best = (ranked, cx, entry[2], ground, params, nrmse)
        return reward

    root = _Node(_legal(prods, False, budget, cfg.forbid_nested_unary), False)
    rollouts = 0
    while rollouts < cfg.rollouts:
        rollouts += 1
        # selection
        node = root
        path = [root]
        chosen: list[_Production] = []
        stack = [False]
        committed = 0
        while not node.terminal and not node.untried and node.children:
            log_n = math.log(node.visits)
            best_score = -1.0
            pick = None
            for idx, child in node.children.items():
                score = (child.total / child.visits
                         + cfg.uct_c * math.sqrt(log_n / child.visits))
                if score > best_score:
                    best_score = score
                    pick = idx
            p = prods[pick]
            in_unary = stack.pop()
            committed += p.cost
            if p.kind == "unary":
                stack.append(True)
            elif p.kind == "binary":
                stack.extend([in_unary, in_unary])
            chosen.append(p)
            node = node.children[pick]
            path.append(node)

        if node.terminal:
            reward = evaluate_candidate(chosen)
        else:
            # expansion: first untried production in rule order
            if node.untried:
                idx = node.untried.pop(0)
                p = prods[idx]
                in_unary = stack.pop()
                committed += p.cost
                if p.kind == "unary":
                    stack.append(True)
                elif p.kind == "binary":
                    stack.extend([in_unary, in_unary])
                chosen.append(p)
                if stack:
                    untried = _legal(prods, stack[-1], budget - committed,
                                     cfg.forbid_nested_unary)
                    child = _Node(untried, False)
                else:
                    child = _Node([], True)
                node.children[idx] = child
                node = child
                path.append(node)
            # simulation: uniform random completion
            sim_tokens = list(chosen)
            sim_stack = list(stack)
            sim_committed = committed
            while sim_stack:
                in_unary = sim_stack.pop()
                legal = _legal(prods, in_unary, budget - sim_committed,
                               cfg.forbid_nested_unary)
                p = prods[legal[int(rng.integers(0, len(legal)))]]
                sim_committed += p.cost
                if p.kind == "unary":
                    sim_stack.append(True)
                elif p.kind == "binary":
                    sim_stack.extend([in_unary, in_unary])
                sim_tokens.append(p)
            reward = evaluate_candidate(sim_tokens)

        for n in path:
            n.visits += 1
            n.total += reward

        if best is not None and cfg.stop_nrmse > 0 and best[5] < cfg.stop_nrmse:
            break

    if best is None or best[0] <= 0.0:
        raise NoValidCandidate("no rollout produced a finite fit on this data")
    return SvsrResult(expr=best[3], params=best[4], nrmse=best[5],
                      complexity=best[1], rollouts_used=rollouts)
