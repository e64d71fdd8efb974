"""Benchmark problem definitions, synthetic dataset generation, train/val
splitting, fixed-step ODE simulation for the two gene-network systems, and CSV
persistence."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import DomainError, Expr, evaluate_batch, evaluate_masked, parse


class NonFinite(RuntimeError):
    """State left the finite range during integration."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray            # (N, d)
    y: np.ndarray            # (N,)
    domains: tuple[tuple[float, float], ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (N, d) and y (N,)")
        if self.X.shape[1] != len(self.domains) or len(self.domains) != len(self.names):
            raise ValueError("domains/names must match the number of columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    truth: Expr
    domains: tuple[tuple[float, float], ...]
    default_n: int = 8000


# name -> (expression text, one shared range for both variables)
_BENCHMARKS = [
    ("Nguyen-09", "sin(x) + sin(y*y)", (-3.0, 3.0)),
    ("Nguyen-10", "2*sin(x)*cos(y)", (-3.0, 3.0)),
    ("Nguyen-11", "x^y", (1.0, 2.0)),
    ("Nguyen-12", "x^4 - x^3 + 0.5*y^2 - y", (-3.0, 3.0)),
    ("Jin-1", "2.5*x^4 - 1.3*x^3 + 0.5*y^2 - 1.7*y", (-3.0, 3.0)),
    ("Jin-2", "8.0*x^2 + 8.0*y^3 - 15", (-3.0, 3.0)),
    ("Jin-3", "0.2*x^3 + 1.5*y^3 - 1.2*y - 0.5*x", (-3.0, 3.0)),
    ("Jin-4", "1.5*exp(x) + 0.5*cos(y)", (-3.0, 3.0)),
    ("Jin-5", "6.0*sin(x)*cos(y)", (-3.0, 3.0)),
    ("Jin-6", "1.35*x*y + 5.5*sin((x - 1.0)*(y - 1.0))", (-3.0, 3.0)),
]


def benchmark_table() -> list[BenchmarkSpec]:
    """The ten two-variable benchmark problems with their sampling ranges."""
    return [BenchmarkSpec(name, parse(text), ((lo, hi), (lo, hi)))
            for name, text, (lo, hi) in _BENCHMARKS]


def get_benchmark(name: str) -> BenchmarkSpec:
    for spec in benchmark_table():
        if spec.name.lower() == name.lower():
            return spec
    known = ", ".join(n for n, _, _ in _BENCHMARKS)
    raise KeyError(f"unknown benchmark {name!r} (known: {known})")


def synthesize(spec: BenchmarkSpec, n: int, seed: int) -> Dataset:
    """n uniform points in the domain box with noise-free targets. Points where
    the ground truth is undefined are resampled (up to a 10x draw budget)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.array([d[0] for d in spec.domains])
    hi = np.array([d[1] for d in spec.domains])
    rows = []
    targets = []
    have = 0
    for _ in range(10):
        X = rng.uniform(lo, hi, size=(n, len(spec.domains)))
        vals, mask = evaluate_masked(spec.truth, X)
        rows.append(X[mask])
        targets.append(vals[mask])
        have += int(mask.sum())
        if have >= n:
            break
    if have < n:
        raise ValueError(f"could not draw {n} valid points for {spec.name}")
    X = np.concatenate(rows)[:n]
    y = np.concatenate(targets)[:n]
    d = len(spec.domains)
    names = tuple(f"x{i + 1}" for i in range(d))
    return Dataset(X, y, spec.domains, names)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint random partition with sizes floor(N*f) and N - floor(N*f)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_train = int(ds.n * train_fraction)
    tr, va = perm[:n_train], perm[n_train:]
    return (Dataset(ds.X[tr], ds.y[tr], ds.domains, ds.names),
            Dataset(ds.X[va], ds.y[va], ds.domains, ds.names))


# ---------------------------------------------------------------------------
# ODE systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeSystem:
    """Autonomous ODE dx/dt = rhs(x) with one expression per state component.

    init_box / t_end / dt / n_traj carry the system's canonical simulation
    setup; callers may override any of them.
    """

    name: str
    state_names: tuple[str, ...]
    rhs: tuple[Expr, ...]
    params: dict = field(default_factory=dict)
    init_box: tuple[tuple[float, float], ...] = ()
    t_end: float = 1.0
    dt: float = 0.01
    n_traj: int = 1000

    @property
    def dim(self) -> int:
        return len(self.state_names)


def toggle_switch(alpha1: float = 4.0, alpha2: float = 4.0,
                  beta: int = 3, gamma: int = 3) -> OdeSystem:
    """Two mutually repressing genes; bistable for these parameter values."""
    names = ("U", "V")
    rhs = (parse(f"{alpha1}/(1 + V^{beta}) - U", names=names),
           parse(f"{alpha2}/(1 + U^{gamma}) - V", names=names))
    return OdeSystem(
        name="toggle",
        state_names=names,
        rhs=rhs,
        params={"alpha1": alpha1, "alpha2": alpha2, "beta": beta, "gamma": gamma},
        init_box=(((0.0, 4.0),) * 2),
        t_end=1.0,
        dt=0.01,
        n_traj=1000,
    )


def repressilator(beta: float = 1.0, alpha0: float = 1e-5,
                  alpha: float = 10.0, n_hill: int = 3) -> OdeSystem:
    """Three-gene cyclic repression ring (mRNA M_i, protein P_i); each mRNA is
    repressed by the previous gene's protein: lacI by cI, tetR by lacI, cI by
    tetR. Oscillatory for the default parameters."""
    names = ("M_lacI", "M_tetR", "M_cI", "P_lacI", "P_tetR", "P_cI")
    pairs = [("lacI", "cI"), ("tetR", "lacI"), ("cI", "tetR")]
    rhs = []
    for gene, repressor in pairs:
        rhs.append(parse(
            f"-M_{gene} + {alpha}/(1 + P_{repressor}^{n_hill}) + {alpha0}",
            names=names))
    for gene, _ in pairs:
        rhs.append(parse(f"-{beta}*(P_{gene} - M_{gene})", names=names))
    return OdeSystem(
        name="repressilator",
        state_names=names,
        rhs=tuple(rhs),
        params={"beta": beta, "alpha0": alpha0, "alpha": alpha, "n": n_hill},
        init_box=(((0.0, 5.0),) * 6),
        t_end=4.0,
        dt=0.01,
        n_traj=5000,
    )


SYSTEMS = {"toggle": toggle_switch, "repressilator": repressilator}


def _rhs_batch(sys: OdeSystem, states: np.ndarray) -> np.ndarray:
    out = np.empty_like(states)
    for i, e in enumerate(sys.rhs):
        out[:, i] = evaluate_batch(e, states)
    return out


def integrate_ode_batch(sys: OdeSystem, x0: np.ndarray, t_end: float,
                        dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Classic fixed-step RK4 for a batch of initial conditions.

    x0: (B, s). Returns (times (T+1,), states (T+1, B, s)) covering t=0 and
    every multiple of dt up to t_end.
    """
    if dt <= 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    states = np.empty((n_steps + 1,) + x0.shape)
    states[0] = x0
    x = x0.copy()
    for step in range(n_steps):
        try:
            k1 = _rhs_batch(sys, x)
            k2 = _rhs_batch(sys, x + 0.5 * dt * k1)
            k3 = _rhs_batch(sys, x + 0.5 * dt * k2)
            k4 = _rhs_batch(sys, x + dt * k3)
        except DomainError as err:
            raise NonFinite(
                f"state left the valid range at t={times[step]:.4g}: {err}") from err
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"non-finite state at t={times[step + 1]:.4g}")
        states[step + 1] = x
    return times, states


def integrate_ode(sys: OdeSystem, x0: Sequence[float], t_end: float,
                  dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-trajectory wrapper: returns (times (T+1,), states (T+1, s))."""
    times, states = integrate_ode_batch(sys, np.asarray(x0, float).reshape(1, -1),
                                        t_end, dt)
    return times, states[:, 0, :]


def make_derivative_dataset(sys: OdeSystem, n_traj: int, t_end: float, dt: float,
                            init_box: Sequence[tuple[float, float]], seed: int,
                            target: int, mode: str = "exact") -> Dataset:
    """States along simulated trajectories, labeled with one component of the
    state derivative.

    mode "exact" evaluates the true RHS at each stored state and keeps the
    first T samples of each trajectory (t = 0 .. t_end - dt), giving
    n_traj * (t_end/dt) rows. mode "finite-difference" labels interior points
    with central differences (x_{t+1} - x_{t-1}) / (2 dt), one fewer row per
    trajectory. Domains are the observed per-state ranges.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if mode not in ("exact", "finite-difference"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= target < sys.dim:
        raise ValueError(f"target index {target} out of range")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in init_box])
    hi = np.array([b[1] for b in init_box])
    x0 = rng.uniform(lo, hi, size=(n_traj, sys.dim))
    _, states = integrate_ode_batch(sys, x0, t_end, dt)   # (T+1, B, s)
    if mode == "exact":
        pts = states[:-1]                                  # (T, B, s)
        X = pts.reshape(-1, sys.dim)
        y = evaluate_batch(sys.rhs[target], X)
    else:
        pts = states[1:-1]
        X = pts.reshape(-1, sys.dim)
        deriv = (states[2:] - states[:-2]) / (2.0 * dt)    # (T-1, B, s)
        y = deriv[:, :, target].reshape(-1)
    domains = tuple((float(X[:, i].min()), float(X[:, i].max()))
                    for i in range(sys.dim))
    return Dataset(X, y, domains, sys.state_names)


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def save_csv(ds: Dataset, path: str | Path) -> None:
    """Header `<name1>,...,<named>,y`, then one row per sample at 17
    significant digits (round-trip exact for doubles)."""
    with open(path, "w") as fh:
        fh.write(",".join(ds.names) + ",y\n")
        for i in range(ds.n):
            cells = [f"{v:.17g}" for v in ds.X[i]] + [f"{ds.y[i]:.17g}"]
            fh.write(",".join(cells) + "\n")


def load_csv(path: str | Path) -> Dataset:
    """Inverse of save_csv; domains are the observed per-column ranges."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 2 or header[-1] != "y":
        raise ValueError(f"{path}: header must end with a 'y' column")
    names = tuple(header[:-1])
    d = len(names)
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} columns, got {len(cells)}")
        rows.append([float(c) for c in cells])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows)
    X, y = arr[:, :-1], arr[:, -1]
    domains = tuple((float(X[:, i].min()), float(X[:, i].max())) for i in range(d))
    return Dataset(X, y, domains, names)
