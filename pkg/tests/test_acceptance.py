"""Whole-package acceptance suite: one numbered check per release criterion.

Every test prints a single PASS/FAIL line (collected by conftest and echoed
after the run) before asserting, so a red criterion still reports its
measured numbers. The learned-generator criteria (7, 8, 10, 11) need search
and training budgets that no criterion pins; those live in the constants
below, chosen by probing, and stay fixed so the suite is reproducible.
Expect a few hours of total runtime, dominated by criteria 7, 8 and 10.
"""

import csv
import json
import time
from collections import Counter

import numpy as np

from conftest import record_line
from srcv.cli import main as cli_main
from srcv.cvfit import bfgs_minimize
from srcv.data import (
    Dataset,
    NonFinite,
    OdeSystem,
    get_benchmark,
    integrate_ode_batch,
    make_derivative_dataset,
    split,
    synthesize,
    toggle_switch,
)
from srcv.driver import DriverConfig, msre, recovery_check, run
from srcv.expr import (
    Binary,
    DomainError,
    Unary,
    equivalent,
    evaluate_batch,
    parse,
    to_string,
)
from srcv.exprspace import (
    Alphabet,
    count_tables,
    enumerate_expressions,
    sample_expression,
    search_space,
)
from srcv.neuralgen import TrainConfig, gradient_check, train
from srcv.svsr import SearchConfig

DOM2 = ((-3.0, 3.0), (-3.0, 3.0))

# Budgets for the discovery criteria. The binding case is the cubic
# coefficient column of Jin-2: complexity budget 12 with 2 fit restarts
# constructs the cubic in roughly 60% of isolated 25k-rollout searches, and
# miss-mode searches settle on small-angle sin/log surrogates instead. Those
# surrogates refit to an MSRE plateau near 1e-8 on this noise-free data
# while exactly-right structures land around 1e-14, so the driver restarts
# its search phase (fresh randomness, same generator) until the refit score
# clears RECOVERY_RESTART_MSRE, up to RECOVERY_TRIES passes. The default lr0
# underfits (see criterion 4); lr0=0.01 measures ~1e-5 validation MSRE on
# Jin-4, and that tighter generator both separates true columns from
# surrogates and lets near-constant coefficient columns be pinned outright.
RECOVERY_ROLLOUTS = 25000
RECOVERY_MAX_COMPLEXITY = 12
RECOVERY_LR0 = 0.01
RECOVERY_STOP_NRMSE = 1e-5
RECOVERY_PARSIMONY = 0.99
RECOVERY_TRIES = 3
RECOVERY_RESTART_MSRE = 1e-9
RECOVERY_CONST_SPREAD = 0.05

# criteria 10 and 11 exercise the sweep harness, whose criteria bound shape
# and bookkeeping rather than recovery power; they run a cheaper search
HARNESS_INI = """\
[data]
n = 8000

[train]
lr0 = 0.02
epochs = 1000

[search]
rollouts = 8000
stop_nrmse = 0.01
max_complexity = 12
fit_restarts = 2
"""


def report(num, ok, detail):
    record_line(f"[{num:2d}] {'PASS' if ok else 'FAIL'}  {detail}")


def _recovery_config():
    return DriverConfig(
        train=TrainConfig(lr0=RECOVERY_LR0),
        search=SearchConfig(rollouts=RECOVERY_ROLLOUTS,
                            stop_nrmse=RECOVERY_STOP_NRMSE,
                            max_complexity=RECOVERY_MAX_COMPLEXITY,
                            fit_restarts=2,
                            parsimony=RECOVERY_PARSIMONY),
        const_column_spread=RECOVERY_CONST_SPREAD,
        search_tries=RECOVERY_TRIES, retry_msre=RECOVERY_RESTART_MSRE)


def _dataset_2d(fn, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(n, 2))
    y = fn(X[:, 0], X[:, 1])
    cut = int(n * 0.8)
    tr = Dataset(X[:cut], y[:cut], DOM2, ("x1", "x2"))
    va = Dataset(X[cut:], y[cut:], DOM2, ("x1", "x2"))
    return tr, va


def _has_unary(e):
    if isinstance(e, Unary):
        return True
    if isinstance(e, Binary):
        return _has_unary(e.left) or _has_unary(e.right)
    return False


# ---------------------------------------------------------------------------
# 1-2: expression space
# ---------------------------------------------------------------------------

def test_01_counting_matches_enumeration():
    t0 = time.perf_counter()
    table = count_tables(6)
    mismatches = []
    for c in range(7):
        exprs = enumerate_expressions(c)
        n_with = sum(1 for e in exprs if _has_unary(e))
        n_free = len(exprs) - n_with
        if (n_free, n_with) != (table.F[c], table.G[c]):
            mismatches.append((c, n_free, n_with, table.F[c], table.G[c]))
    pinned = table.F[:4] == (5, 0, 100, 0) and table.G[:4] == (0, 20, 0, 1200)
    dt = time.perf_counter() - t0
    ok = not mismatches and pinned and dt < 60
    report(1, ok, f"counting matches enumeration for c<=6, "
                  f"F/G[0..3] = {table.F[:4]}/{table.G[:4]} ({dt:.1f}s/60s)")
    assert ok, (mismatches, table.F[:4], table.G[:4], dt)


def test_02_sampler_uniformity_at_c3():
    t0 = time.perf_counter()
    table = count_tables(3)
    keys = {to_string(e) for e in enumerate_expressions(3)}
    rng = np.random.default_rng(0)
    counts = Counter(to_string(sample_expression(3, table, rng=rng))
                     for _ in range(120000))
    lo = min(counts.values())
    hi = max(counts.values())
    dt = time.perf_counter() - t0
    ok = set(counts) == keys and 60 <= lo and hi <= 140 and dt < 60
    report(2, ok, f"sampler uniform over the {len(keys)} trees at c=3: "
                  f"frequency range [{lo}, {hi}] in [60, 140] ({dt:.1f}s/60s)")
    assert ok, (len(keys), len(counts), lo, hi, dt)


# ---------------------------------------------------------------------------
# 3-4: data generator
# ---------------------------------------------------------------------------

def test_03_mlp_gradient_check():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(5):
        hidden = tuple(int(rng.integers(2, 7))
                       for _ in range(int(rng.integers(1, 3))))
        widths = (int(rng.integers(1, 5)),) + hidden + (1,)
        worst = max(worst, gradient_check(widths, seed=trial))
    ok = worst < 1e-4
    report(3, ok, f"backprop vs central differences on 5 random nets: "
                  f"worst rel err {worst:.2e} (< 1e-4)")
    assert ok, worst


def test_04_generator_default_recipe_on_jin4():
    # Known red: the default recipe's initial learning rate saturates the
    # tanh stack on this target (measured ~2.6e-2 at seed 0; lr0=0.02 reaches
    # 2.8e-4 with the same code). The requirement stands as stated and the
    # measured value is reported rather than tuned around.
    spec = get_benchmark("Jin-4")
    ds = synthesize(spec, 8000, seed=0)
    tr, va = split(ds, 0.8, seed=0)
    t0 = time.perf_counter()
    _, rep = train(tr, va, TrainConfig())
    dt = time.perf_counter() - t0
    ok = rep.val_msre <= 1e-3 and dt < 600
    report(4, ok, f"generator fit, Jin-4, default recipe (6400/1600): "
                  f"val MSRE {rep.val_msre:.2e} (bound 1e-3, {dt:.0f}s/600s)")
    assert ok, rep.val_msre


# ---------------------------------------------------------------------------
# 5-6: skeleton fitting and the exact-generator loop
# ---------------------------------------------------------------------------

def test_05_bfgs_rosenbrock():
    def rosen(z):
        return (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2

    x, _, _ = bfgs_minimize(rosen, [-1.2, 1.0], max_iter=499)
    dist = float(np.max(np.abs(x - 1.0)))
    ok = dist < 1e-6
    report(5, ok, f"BFGS on Rosenbrock from (-1.2, 1): "
                  f"|x - (1,1)|_inf = {dist:.1e} within 499 iterations")
    assert ok, x


def test_06_walkthrough_with_exact_generator():
    truth = parse("x1*x2 + 2*x2 + 2")
    tr, va = _dataset_2d(lambda a, b: a * b + 2 * b + 2)
    cfg = DriverConfig(use_exact_generator=True, exact_truth=truth,
                       search=SearchConfig(rollouts=4000, stop_nrmse=1e-7))
    t0 = time.perf_counter()
    res = run(tr, va, cfg, seed=0)
    dt = time.perf_counter() - t0
    eq = equivalent(res.expr, truth, DOM2, tol=1e-6)
    subs = [parse(s) for s in res.rounds[1].subexprs]
    x2 = parse("x2")
    lin = parse("2*x2 + 2")
    pair = len(subs) == 2 and (
        (equivalent(subs[0], x2, DOM2, tol=1e-6)
         and equivalent(subs[1], lin, DOM2, tol=1e-6))
        or (equivalent(subs[1], x2, DOM2, tol=1e-6)
            and equivalent(subs[0], lin, DOM2, tol=1e-6)))
    ok = eq and pair and dt < 300
    report(6, ok, f"exact-generator walk-through on x1*x2 + 2*x2 + 2: "
                  f"recovered={eq}, round-2 coefficients are x2 and 2*x2+2: "
                  f"{pair} ({dt:.0f}s/300s)")
    assert ok, (eq, res.rounds[1].subexprs, dt)


# ---------------------------------------------------------------------------
# 7-8: learned-generator discovery
# ---------------------------------------------------------------------------

def test_07_learned_generator_recovery():
    t0 = time.perf_counter()
    wins = {}
    notes = []
    for bench in ("Jin-2", "Nguyen-10"):
        spec = get_benchmark(bench)
        wins[bench] = 0
        for seed in range(5):
            ds = synthesize(spec, spec.default_n, seed=seed)
            tr, va = split(ds, 0.8, seed=seed)
            try:
                res = run(tr, va, _recovery_config(), seed=seed)
            except Exception as err:    # a failed round is a miss, not an abort
                notes.append(f"{bench}/{seed}: {type(err).__name__}")
                continue
            got, _ = recovery_check(res.expr, spec.truth, va)
            wins[bench] += bool(got)
    dt = time.perf_counter() - t0
    ok = all(w >= 3 for w in wins.values()) and dt < 7200
    extra = f"; aborts: {', '.join(notes)}" if notes else ""
    report(7, ok, f"learned-generator recovery: Jin-2 {wins['Jin-2']}/5, "
                  f"Nguyen-10 {wins['Nguyen-10']}/5 (need >= 3/5 each, "
                  f"{dt:.0f}s/7200s){extra}")
    assert ok, (wins, dt, notes)


def _match_inverse_cubic_form(expr):
    """Check f(U, V) = a/(b + V^3) - U semantically and recover (a, b).

    Works on any algebraically equivalent tree: f must be affine in U with
    slope -1 (5% band), and the reciprocal of its U-free part must be linear
    in V^3. Returns (ok, a, b, note).
    """
    u = np.linspace(0.2, 3.8, 9)
    v = np.linspace(0.2, 3.8, 41)
    A = np.column_stack([np.ones_like(u), u])
    intercepts, slopes = [], []
    worst_affine = 0.0
    for vj in v:
        X = np.column_stack([u, np.full_like(u, vj)])
        try:
            f = evaluate_batch(expr, X)
        except DomainError:
            return False, np.nan, np.nan, "undefined on the domain mesh"
        coef, *_ = np.linalg.lstsq(A, f, rcond=None)
        resid = np.max(np.abs(A @ coef - f)) / max(1.0, np.max(np.abs(f)))
        worst_affine = max(worst_affine, resid)
        intercepts.append(coef[0])
        slopes.append(coef[1])
    if worst_affine > 1e-4:
        return False, np.nan, np.nan, f"not affine in U (resid {worst_affine:.1e})"
    slopes = np.array(slopes)
    if np.ptp(slopes) > 1e-3 or abs(slopes.mean() + 1.0) > 0.05:
        return False, np.nan, np.nan, f"U slope {slopes.mean():.3f} not -1"
    g = np.array(intercepts)
    if np.any(g <= 0):
        return False, np.nan, np.nan, "U-free part not positive"
    B = np.column_stack([np.ones_like(v), v ** 3])
    coef, *_ = np.linalg.lstsq(B, 1.0 / g, rcond=None)
    rel = np.max(np.abs(B @ coef - 1.0 / g) * g)
    if rel > 1e-4 or coef[1] <= 0:
        return False, np.nan, np.nan, f"1/g not linear in V^3 (resid {rel:.1e})"
    a = 1.0 / coef[1]
    b = coef[0] * a
    return True, float(a), float(b), ""


def test_08_ode_identification_toggle_switch():
    t0 = time.perf_counter()
    system = toggle_switch()
    found = []
    for target in range(2):
        ds = make_derivative_dataset(system, 100, 1.0, 0.01, system.init_box,
                                     seed=0, target=target, mode="exact")
        tr, va = split(ds, 0.8, seed=0)
        try:
            res = run(tr, va, _recovery_config(), seed=0)
            found.append(res.expr)
        except Exception as err:
            dt = time.perf_counter() - t0
            report(8, False, f"ode identification: state {target} discovery "
                             f"aborted ({type(err).__name__}, {dt:.0f}s)")
            raise

    form_ok, a, b, note = _match_inverse_cubic_form(found[0])
    bands = form_ok and abs(a - 4.0) <= 0.2 and abs(b - 1.0) <= 0.05

    disc = OdeSystem(name="discovered", state_names=system.state_names,
                     rhs=tuple(found), init_box=system.init_box)
    rng = np.random.default_rng(11)
    x0 = rng.uniform([d[0] for d in system.init_box],
                     [d[1] for d in system.init_box], size=(10, 2))
    _, truth_states = integrate_ode_batch(system, x0, 1.0, 0.01)
    try:
        _, disc_states = integrate_ode_batch(disc, x0, 1.0, 0.01)
        traj = msre(disc_states.ravel(), truth_states.ravel())
    except NonFinite:
        traj = float("inf")
    dt = time.perf_counter() - t0
    ok = bands and traj < 1e-2 and dt < 3600
    shape = (f"a={a:.3f} b={b:.3f}" if form_ok
             else f"no a/(b+V^3)-U form ({note})")
    report(8, ok, f"ode identification on the toggle switch: {shape}, "
                  f"trajectory MSRE {traj:.2e} over 10 inits "
                  f"({dt:.0f}s/3600s)")
    assert ok, (form_ok, a, b, note, traj, dt)


# ---------------------------------------------------------------------------
# 9: search-space size
# ---------------------------------------------------------------------------

def test_09_search_space_reduction():
    big = count_tables(16)
    small = count_tables(16, Alphabet(m_t=2))
    cums_big = [search_space(big, c)[1] for c in range(17)]
    cums_small = [search_space(small, c)[1] for c in range(17)]
    increasing = (all(b > a for a, b in zip(cums_big, cums_big[1:]))
                  and all(b > a for a, b in zip(cums_small, cums_small[1:])))
    ratio = cums_big[16] / cums_small[16]
    ok = increasing and ratio >= 1e3
    report(9, ok, f"search-space reduction: cumulative counts strictly "
                  f"increasing; 5-terminal vs 2-terminal ratio at c=16 is "
                  f"{ratio:.1f} (>= 1e3)")
    assert ok, (increasing, cums_big[16], cums_small[16])


# ---------------------------------------------------------------------------
# 10-11: sweep harness
# ---------------------------------------------------------------------------

def test_10_ablation_grid_over_m(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text(HARNESS_INI)
    out = tmp_path / "runs"
    t0 = time.perf_counter()
    rc = cli_main(["ablate", "--param", "M", "--values", "50", "100", "150",
                   "200", "--benchmarks", "Nguyen-09", "--seeds", "3",
                   "--config", str(ini), "--out", str(out)])
    dt = time.perf_counter() - t0
    table = out / "ablation_M.csv"
    rows = (list(csv.reader(table.open())) if table.is_file() else [])
    shape_ok = (rc == 0 and len(rows) == 2
                and rows[0] == ["benchmark", "M=50", "M=100", "M=150", "M=200"]
                and rows[1][0] == "Nguyen-09"
                and all("/" in cell for cell in rows[1][1:]))
    if shape_ok:
        hits = [int(cell.split("/")[0]) for cell in rows[1][1:]]
        flat = max(hits) - min(hits) <= 1
        spread = "flat" if flat else f"spread {max(hits) - min(hits)} (report flag)"
        detail = (f"ablation over M on Nguyen-09: rates "
                  f"{' '.join(rows[1][1:])}, {spread} ({dt:.0f}s)")
    else:
        detail = f"ablation harness failed: rc={rc}, rows={rows!r} ({dt:.0f}s)"
    report(10, shape_ok, detail)
    assert shape_ok, (rc, rows, dt)


def test_11_jin6_failures_recorded(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text(HARNESS_INI)
    out = tmp_path / "runs"
    t0 = time.perf_counter()
    rc = cli_main(["benchmark", "--benchmarks", "Jin-6", "--seeds", "3",
                   "--config", str(ini), "--out", str(out)])
    dt = time.perf_counter() - t0
    rec_path = out / "records.jsonl"
    records = ([json.loads(line) for line in
                rec_path.read_text().splitlines() if line.strip()]
               if rec_path.is_file() else [])
    summary = out / "recovery.csv"
    rows = (list(csv.reader(summary.open())) if summary.is_file() else [])
    rate = next((r[3] for r in rows if r and r[0] == "Jin-6"), None)
    crashed = sum(1 for r in records if r["error"] is not None)
    ok = (rc == 0 and len(records) == 3
          and all(not r["recovered"] for r in records) and rate == "0/3")
    report(11, ok, f"Jin-6 sweep: {len(records)} records, 0 recoveries "
                   f"(rate {rate}), {crashed} aborted runs, exit {rc} "
                   f"({dt:.0f}s)")
    assert ok, (rc, len(records), rate, dt)
