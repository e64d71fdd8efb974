"""Control-variable rounds: generate K groups of M generator queries (one
group per value of the variable under study, all later variables pinned), and
fit the current skeleton's coefficients to each group by BFGS.

The K fitted coefficient vectors, paired with the K values of the manipulated
variable, are what the next single-variable search runs on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .expr import (DomainError, Skeleton, evaluate_batch,
                   evaluate_with_param_grad, instantiate)

COEFF_INIT_RANGE = (-10.0, 10.0)


class AllRestartsFailed(RuntimeError):
    """Every BFGS restart hit a domain error or non-finite loss."""


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

def _fd_gradient(f: Callable, x: np.ndarray, fx: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def bfgs_minimize(objective: Callable[[np.ndarray], float], x0: Sequence[float],
                  tol: float = 1e-8, max_iter: int = 500,
                  grad: Callable[[np.ndarray], np.ndarray] | None = None
                  ) -> tuple[np.ndarray, float, bool]:
    """Quasi-Newton minimization with the inverse-Hessian BFGS update and a
    backtracking Armijo line search (c1 = 1e-4, step halving).

    Gradients come from central finite differences (h = 1e-6*(1+|x_i|)) unless
    `grad` is supplied. Stops when the gradient infinity-norm drops below tol;
    on line-search failure returns the best iterate seen with converged=False.
    """
    c1 = 1e-4
    x = np.asarray(x0, dtype=float).copy()
    if x.ndim == 0:
        x = x.reshape(1)
    n = x.size

    def f(z):
        v = objective(z)
        return float(v) if np.isfinite(v) else np.inf

    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective not finite at the starting point")
    best_x, best_f = x.copy(), fx
    with np.errstate(all="ignore"):
        g = grad(x) if grad is not None else _fd_gradient(f, x, fx)
        H = np.eye(n)
        converged = False
        for _ in range(max_iter):
            if not np.all(np.isfinite(g)):
                break
            if np.max(np.abs(g)) < tol:
                converged = True
                break
            p = -H @ g
            if p @ g >= 0.0:
                # not a descent direction; restart from steepest descent
                H = np.eye(n)
                p = -g
            t = 1.0
            gp = g @ p
            while True:
                f_new = f(x + t * p)
                if f_new <= fx + c1 * t * gp:
                    break
                t *= 0.5
                if t < 1e-20:
                    return best_x, best_f, False
            s = t * p
            x_new = x + s
            g_new = grad(x_new) if grad is not None else _fd_gradient(f, x_new, f_new)
            y = g_new - g
            sy = s @ y
            if sy > 1e-12:
                rho = 1.0 / sy
                V = np.eye(n) - rho * np.outer(s, y)
                H = V @ H @ V.T + rho * np.outer(s, s)
            x, fx, g = x_new, f_new, g_new
            if fx < best_f:
                best_x, best_f = x.copy(), fx
    if converged and fx <= best_f:
        best_x, best_f = x, fx
    return best_x, best_f, converged


def mse_objective_and_grad(expr, X: np.ndarray, targets: np.ndarray):
    """Closures (objective, grad) for the mean squared error of an expression
    against targets, with analytic parameter gradients from a tape pass.

    Kept separate on purpose: line-search trial points only need the value,
    so the objective does a plain forward evaluation and the backward sweep
    runs once per accepted iterate. Domain errors read as an infinite
    objective and a NaN gradient, which the line search and bfgs_minimize's
    finite-gradient check both reject.
    """
    n = targets.size

    def objective(c) -> float:
        try:
            pred = evaluate_batch(expr, X, params=np.asarray(c, dtype=float))
        except DomainError:
            return np.inf
        with np.errstate(all="ignore"):
            mse = float(np.mean((pred - targets) ** 2))
        return mse if np.isfinite(mse) else np.inf

    def grad(c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        try:
            pred, G = evaluate_with_param_grad(expr, X, c)
        except DomainError:
            return np.full(c.size, np.nan)
        with np.errstate(all="ignore"):
            return (2.0 / n) * (G.T @ (pred - targets))

    return objective, grad


# ---------------------------------------------------------------------------
# Round plan and grouped data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundPlan:
    """One control-variable round: study next_var while controls are pinned
    and the already-learned variables vary freely."""

    learned: tuple[int, ...]
    next_var: int
    controls: tuple[int, ...]
    pins: tuple[float, ...]          # one value per entry of controls
    k: int
    m: int
    domains: tuple[tuple[float, float], ...]   # all d variables

    def __post_init__(self):
        d = len(self.domains)
        claimed = set(self.learned) | {self.next_var} | set(self.controls)
        if claimed != set(range(d)) or len(self.learned) + 1 + len(self.controls) != d:
            raise ValueError("learned/next/controls must partition the variables")
        if len(self.pins) != len(self.controls):
            raise ValueError("one pin per control variable")
        for v, idx in zip(self.pins, self.controls):
            lo, hi = self.domains[idx]
            if not lo <= v <= hi:
                raise ValueError(f"pin {v} outside domain of x{idx + 1}")
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")


@dataclass(frozen=True)
class GroupedData:
    """xs[k]: (M, d) full-width query points of group k (controls identical
    across the whole round); fs[k]: the M generator outputs."""

    next_values: np.ndarray          # (K,)
    xs: np.ndarray                   # (K, M, d)
    fs: np.ndarray                   # (K, M)


@dataclass(frozen=True)
class CoeffMatrix:
    values: np.ndarray               # (K, J)
    next_values: np.ndarray          # (K,)
    residuals: np.ndarray            # (K,)


def _draw_distinct(lo: float, hi: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """k uniform draws, re-drawn until pairwise separation >= (hi-lo)/(10k)."""
    min_sep = (hi - lo) / (10.0 * k)
    values: list[float] = []
    attempts = 0
    while len(values) < k:
        v = rng.uniform(lo, hi)
        if all(abs(v - u) >= min_sep for u in values):
            values.append(v)
        attempts += 1
        if attempts > 1000 * k:
            raise RuntimeError("could not draw distinct values (domain too tight)")
    return np.array(values)


def generate_groups(gen: Callable[[np.ndarray], np.ndarray], plan: RoundPlan,
                    rng: np.random.Generator) -> GroupedData:
    """Query the generator K*M times per the round plan.

    Group k fixes the studied variable at next_values[k]; the learned
    variables are drawn uniformly per sample; the controls stay at the pinned
    values for the whole round. With no learned variables yet (first round)
    each group is a single query, whatever M says.
    """
    m_eff = plan.m if plan.learned else 1
    lo, hi = plan.domains[plan.next_var]
    next_values = _draw_distinct(lo, hi, plan.k, rng)
    xs = np.empty((plan.k, m_eff, len(plan.domains)))
    fs = np.empty((plan.k, m_eff))
    for k in range(plan.k):
        for attempt in range(10):
            pts = np.empty((m_eff, len(plan.domains)))
            pts[:, plan.next_var] = next_values[k]
            for idx, pin in zip(plan.controls, plan.pins):
                pts[:, idx] = pin
            for idx in plan.learned:
                dlo, dhi = plan.domains[idx]
                pts[:, idx] = rng.uniform(dlo, dhi, size=m_eff)
            try:
                out = np.asarray(gen(pts), dtype=float)
            except DomainError:
                continue
            if out.shape == (m_eff,) and np.all(np.isfinite(out)):
                xs[k] = pts
                fs[k] = out
                break
        else:
            raise RuntimeError(f"generator kept failing for group {k}")
    return GroupedData(next_values, xs, fs)


def exact_generator(truth, params: Sequence[float] = ()) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a ground-truth expression as a generator function (testing mode)."""
    def gen(points: np.ndarray) -> np.ndarray:
        return evaluate_batch(truth, points, params)
    return gen


def fit_coefficients(skel: Skeleton, grouped: GroupedData,
                     restarts: int = 10, seed: int = 0,
                     init: Sequence[float] | None = None,
                     tol: float = 1e-8, max_iter: int = 500) -> CoeffMatrix:
    """Fit the skeleton's parameters to each group independently by
    multi-restart BFGS on the mean squared error against the group outputs.

    Restart 0 starts from `init` when given (previous round's constants);
    later restarts draw uniform starts from [-10, 10]. Per-group rng streams
    keep results independent of fit order.
    """
    k_total = grouped.xs.shape[0]
    j = skel.param_count
    values = np.empty((k_total, j))
    residuals = np.empty(k_total)
    streams = np.random.SeedSequence(seed).spawn(k_total)
    for k in range(k_total):
        X = grouped.xs[k]
        f_target = grouped.fs[k]
        objective, grad = mse_objective_and_grad(skel.expr, X, f_target)

        if j == 0:
            values[k] = np.empty(0)
            residuals[k] = objective(np.empty(0))
            continue
        rng = np.random.default_rng(streams[k])
        best = None
        for r in range(restarts):
            if r == 0 and init is not None and len(init) == j:
                x0 = np.asarray(init, dtype=float)
            else:
                x0 = rng.uniform(*COEFF_INIT_RANGE, size=j)
            if not np.isfinite(objective(x0)):
                continue
            x_star, f_star, _ = bfgs_minimize(objective, x0, tol=tol,
                                              max_iter=max_iter, grad=grad)
            if best is None or f_star < best[1]:
                best = (x_star, f_star)
        if best is None:
            raise AllRestartsFailed(
                f"group {k}: no restart produced a finite loss")
        values[k] = best[0]
        residuals[k] = best[1]
    return CoeffMatrix(values, grouped.next_values, residuals)
