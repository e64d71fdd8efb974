"""Command-line surface: single discoveries, seeded benchmark sweeps,
ablation grids, and thin wrappers over counting, sampling, and ODE
simulation.

Every completed run appends one RunRecord to a JSON-lines file; summary
tables go to CSV. Records embed a hash of the effective configuration, and a
sweep skips (benchmark, seed, config) triples that already have a record, so
interrupted sweeps restart where they left off. Identical command line,
config, and seed reproduce record bytes exactly, apart from the *_seconds
timing fields.

Exit codes: 0 success, 1 usage or config error, 2 discovery failure,
3 internal error. SRCV_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    SYSTEMS,
    benchmark_table,
    get_benchmark,
    load_csv,
    make_derivative_dataset,
    save_csv,
    split,
    synthesize,
)
from .driver import DriverConfig, recovery_check, run
from .expr import complexity, to_string
from .exprspace import Alphabet, count_tables, sample_expression, search_space
from .neuralgen import TrainConfig, save_generator, train
from .svsr import SearchConfig

logger = logging.getLogger("srcv")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DISCOVERY = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    """Bad command line or configuration; maps to exit code 1."""


@dataclass
class RunRecord:
    benchmark: str
    seed: int
    recovered: bool
    msre: float | None
    expression: str | None
    gen_seconds: float
    sr_seconds: float
    total_seconds: float
    config_hash: str
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class AblationGrid:
    parameter: str                  # "M" | "K" | "N"
    values: list[int]
    benchmarks: list[str]
    n_seeds: int

    def __post_init__(self):
        if self.parameter not in ("M", "K", "N"):
            raise UsageError(f"unknown ablation parameter {self.parameter!r}")
        if not self.values or any(v < 1 for v in self.values):
            raise UsageError("ablation values must be positive")
        if self.values != sorted(self.values):
            raise UsageError("ablation values must be sorted")
        if self.n_seeds < 1:
            raise UsageError("need at least one seed")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def default_config() -> dict[str, dict]:
    """Effective defaults, taken from the dataclasses so they cannot drift."""
    dc = DriverConfig()
    sc, tc = dc.search, dc.train
    return {
        "data": {"n": 8000, "train_fraction": 0.8},
        "driver": {"k": dc.k, "m": dc.m, "refit_restarts": dc.refit_restarts,
                   "msre_tol": dc.msre_tol, "equiv_tol": dc.equiv_tol,
                   "const_column_spread": dc.const_column_spread,
                   "pin_draws": dc.pin_draws, "search_tries": dc.search_tries,
                   "retry_msre": dc.retry_msre},
        "search": {"rollouts": sc.rollouts, "max_complexity": sc.max_complexity,
                   "uct_c": sc.uct_c, "fit_restarts": sc.fit_restarts,
                   "fit_max_iter": sc.fit_max_iter, "stop_nrmse": sc.stop_nrmse,
                   "parsimony": sc.parsimony},
        "train": {"lr0": tc.lr0, "lr_floor": tc.lr_floor, "epochs": tc.epochs,
                  "beta1": tc.beta1, "beta2": tc.beta2, "eps": tc.eps},
    }


def load_config(path: str | None) -> dict[str, dict]:
    cfg = default_config()
    if path is None:
        return cfg
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as err:
        raise UsageError(f"cannot parse {path}: {err}") from err
    for section in cp.sections():
        if section not in cfg:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in cfg[section]:
                raise UsageError(f"unknown config key {section}.{key}")
            kind = type(cfg[section][key])
            try:
                cfg[section][key] = kind(raw)
            except ValueError as err:
                raise UsageError(
                    f"bad value for {section}.{key}: {raw!r}") from err
    return cfg


def config_hash(cfg: dict[str, dict]) -> str:
    lines = sorted(f"{s}.{k}={cfg[s][k]!r}"
                   for s in cfg for k in cfg[s])
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]


def driver_config_from(cfg: dict[str, dict]) -> DriverConfig:
    d, s, t = cfg["driver"], cfg["search"], cfg["train"]
    return DriverConfig(
        k=d["k"], m=d["m"],
        search=SearchConfig(rollouts=s["rollouts"],
                            max_complexity=s["max_complexity"],
                            uct_c=s["uct_c"], fit_restarts=s["fit_restarts"],
                            fit_max_iter=s["fit_max_iter"],
                            stop_nrmse=s["stop_nrmse"],
                            parsimony=s["parsimony"]),
        train=TrainConfig(lr0=t["lr0"], lr_floor=t["lr_floor"],
                          epochs=t["epochs"], beta1=t["beta1"],
                          beta2=t["beta2"], eps=t["eps"]),
        refit_restarts=d["refit_restarts"], msre_tol=d["msre_tol"],
        equiv_tol=d["equiv_tol"],
        const_column_spread=d["const_column_spread"],
        pin_draws=d["pin_draws"], search_tries=d["search_tries"],
        retry_msre=d["retry_msre"])


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

def run_benchmark_job(name: str, seed: int, cfg: dict[str, dict]) -> RunRecord:
    """One seeded discovery on a named benchmark. Failures come back as a
    not-recovered record with the error message; they never raise."""
    spec = get_benchmark(name)
    ds = synthesize(spec, cfg["data"]["n"], seed=seed)
    tr, va = split(ds, cfg["data"]["train_fraction"], seed=seed)
    t0 = time.perf_counter()
    try:
        res = run(tr, va, driver_config_from(cfg), seed=seed)
    except Exception as err:
        logger.warning("%s seed %d failed: %s", spec.name, seed, err)
        return RunRecord(spec.name, seed, False, None, None, 0.0, 0.0,
                         time.perf_counter() - t0, config_hash(cfg),
                         error=f"{type(err).__name__}: {err}")
    ok, err_val = recovery_check(res.expr, spec.truth, va,
                                 msre_tol=cfg["driver"]["msre_tol"],
                                 equiv_tol=cfg["driver"]["equiv_tol"])
    # precision 17 so the recorded string reparses to the exact tree; the
    # default 6 digits can destroy near-degenerate constant relationships
    return RunRecord(spec.name, seed, bool(ok),
                     float(err_val) if np.isfinite(err_val) else None,
                     to_string(res.expr, precision=17), res.gen_seconds,
                     res.sr_seconds, res.total_seconds, config_hash(cfg))


def _round_logs(res) -> list[dict]:
    out = []
    for r in res.rounds:
        out.append({"index": r.index, "next_var": r.next_var,
                    "pins": [[int(i), float(v)] for i, v in r.pins],
                    "skeleton": r.skeleton,
                    "coeff_shape": list(r.coeff_shape),
                    "max_residual": float(r.max_residual),
                    "subexprs": list(r.subexprs),
                    "constant_columns": list(map(bool, r.constant_columns))})
    return out


def cmd_discover(args) -> int:
    cfg = load_config(args.config)
    if (args.benchmark is None) == (args.data is None):
        raise UsageError("give exactly one of --benchmark or --data")
    if args.benchmark is not None:
        spec = get_benchmark(args.benchmark)
        name, truth = spec.name, spec.truth
        ds = synthesize(spec, cfg["data"]["n"], seed=args.seed)
    else:
        if not Path(args.data).is_file():
            raise UsageError(f"data file not found: {args.data}")
        name, truth = args.data, None
        ds = load_csv(args.data)
    tr, va = split(ds, cfg["data"]["train_fraction"], seed=args.seed)

    t0 = time.perf_counter()
    try:
        res = run(tr, va, driver_config_from(cfg), seed=args.seed)
    except Exception as err:
        record = RunRecord(name, args.seed, False, None, None, 0.0, 0.0,
                           time.perf_counter() - t0, config_hash(cfg),
                           error=f"{type(err).__name__}: {err}")
        if args.out:
            Path(args.out).write_text(record.to_json() + "\n")
        print(f"discovery failed: {err}", file=sys.stderr)
        return EXIT_DISCOVERY

    if truth is not None:
        ok, err_val = recovery_check(res.expr, truth, va,
                                     msre_tol=cfg["driver"]["msre_tol"],
                                     equiv_tol=cfg["driver"]["equiv_tol"])
    else:
        ok, err_val = res.val_msre < cfg["driver"]["msre_tol"], res.val_msre
    text = to_string(res.expr, names=ds.names)
    record = RunRecord(name, args.seed, bool(ok),
                       float(err_val) if np.isfinite(err_val) else None,
                       to_string(res.expr, names=ds.names, precision=17),
                       res.gen_seconds, res.sr_seconds,
                       res.total_seconds, config_hash(cfg))
    if args.out:
        payload = dict(record.__dict__, rounds=_round_logs(res))
        Path(args.out).write_text(json.dumps(payload, sort_keys=True,
                                             indent=2) + "\n")
    print(f"{text}")
    print(f"msre={res.val_msre:.6e}  recovered={record.recovered}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _existing_keys(records_path: Path) -> set[tuple[str, int, str]]:
    done = set()
    if records_path.is_file():
        for line in records_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            done.add((rec["benchmark"], rec["seed"], rec["config_hash"]))
    return done


def _run_jobs(jobs: list[tuple[str, int, dict]], records_path: Path,
              n_workers: int) -> None:
    """Execute (benchmark, seed, cfg) jobs, appending one record line as each
    finishes. Appends happen only in this process, in completion order."""
    if not jobs:
        return
    records_path.parent.mkdir(parents=True, exist_ok=True)
    with open(records_path, "a") as fh:
        if n_workers > 1:
            with concurrent.futures.ProcessPoolExecutor(n_workers) as pool:
                futs = [pool.submit(run_benchmark_job, *job) for job in jobs]
                for fut in concurrent.futures.as_completed(futs):
                    fh.write(fut.result().to_json() + "\n")
                    fh.flush()
        else:
            for job in jobs:
                rec = run_benchmark_job(*job)
                fh.write(rec.to_json() + "\n")
                fh.flush()
                logger.info("%s seed %d: recovered=%s", rec.benchmark,
                            rec.seed, rec.recovered)


def _load_records(records_path: Path) -> list[dict]:
    if not records_path.is_file():
        return []
    return [json.loads(line)
            for line in records_path.read_text().splitlines() if line.strip()]


def _rate(recovered: int, n: int) -> str:
    """Nearest-10% percentage at the 10-seed granularity, exact fraction
    otherwise."""
    if n == 10:
        return f"{int(round(10.0 * recovered / n)) * 10}%"
    return f"{recovered}/{n}"


def _summarize(records: list[dict], benchmarks: list[str], n_seeds: int,
               chash: str) -> list[list[str]]:
    rows = [["benchmark", "seeds", "recovered", "rate", "mean_seconds"]]
    total_rec = 0
    for name in benchmarks:
        mine = [r for r in records
                if r["benchmark"] == name and r["config_hash"] == chash
                and r["seed"] < n_seeds]
        rec = sum(1 for r in mine if r["recovered"])
        total_rec += rec
        mean_s = (sum(r["total_seconds"] for r in mine) / len(mine)
                  if mine else 0.0)
        rows.append([name, str(n_seeds), str(rec), _rate(rec, n_seeds),
                     f"{mean_s:.1f}"])
    n_total = len(benchmarks) * n_seeds
    pct = 100.0 * total_rec / n_total if n_total else 0.0
    rows.append(["Average", str(n_total), str(total_rec), f"{pct:.0f}%", ""])
    return rows


def _write_csv(rows: list[list[str]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(",".join(row) for row in rows) + "\n")


def _print_table(rows: list[list[str]]) -> None:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    if args.seeds < 1:
        raise UsageError("need at least one seed")
    names = ([get_benchmark(n).name for n in args.benchmarks]
             if args.benchmarks else [s.name for s in benchmark_table()])
    out_dir = Path(args.out)
    records_path = out_dir / "records.jsonl"
    chash = config_hash(cfg)
    done = _existing_keys(records_path)
    jobs = [(name, seed, cfg)
            for name in names for seed in range(args.seeds)
            if (name, seed, chash) not in done]
    logger.info("sweep: %d jobs (%d already recorded)", len(jobs),
                len(names) * args.seeds - len(jobs))
    _run_jobs(jobs, records_path, args.jobs)
    rows = _summarize(_load_records(records_path), names, args.seeds, chash)
    _write_csv(rows, out_dir / "recovery.csv")
    _print_table(rows)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    names = ([get_benchmark(n).name for n in args.benchmarks]
             if args.benchmarks else
             ["Nguyen-09", "Nguyen-10", "Nguyen-11", "Nguyen-12"])
    grid = AblationGrid(args.param, args.values, names, args.seeds)
    out_dir = Path(args.out)
    records_path = out_dir / "records.jsonl"

    header = ["benchmark"] + [f"{grid.parameter}={v}" for v in grid.values]
    cells = {name: [] for name in names}
    for value in grid.values:
        vcfg = {s: dict(cfg[s]) for s in cfg}
        if grid.parameter == "M":
            vcfg["driver"]["m"] = value
        elif grid.parameter == "K":
            vcfg["driver"]["k"] = value
        else:
            vcfg["data"]["n"] = value
        chash = config_hash(vcfg)
        done = _existing_keys(records_path)
        jobs = [(name, seed, vcfg)
                for name in names for seed in range(grid.n_seeds)
                if (name, seed, chash) not in done]
        logger.info("%s=%d: %d jobs", grid.parameter, value, len(jobs))
        _run_jobs(jobs, records_path, args.jobs)
        records = _load_records(records_path)
        for name in names:
            mine = [r for r in records
                    if r["benchmark"] == name and r["config_hash"] == chash
                    and r["seed"] < grid.n_seeds]
            rec = sum(1 for r in mine if r["recovered"])
            cells[name].append(_rate(rec, grid.n_seeds))

    rows = [header] + [[name] + cells[name] for name in names]
    _write_csv(rows, out_dir / f"ablation_{grid.parameter}.csv")
    _print_table(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Utility commands
# ---------------------------------------------------------------------------

def cmd_count_space(args) -> int:
    table = count_tables(args.max, Alphabet(args.m_t, args.m_u, args.m_b))
    rows = [["c", "unary_free", "with_unary", "exact", "cumulative"]]
    for c in range(args.max + 1):
        exact, cum = search_space(table, c)
        rows.append([str(c), str(table.F[c]), str(table.G[c]),
                     str(exact), str(cum)])
    if args.out:
        _write_csv(rows, Path(args.out))
    else:
        _print_table(rows)
    return EXIT_OK


def cmd_sample_exprs(args) -> int:
    table = count_tables(args.complexity)
    rng = np.random.default_rng(args.seed)
    lines = []
    for _ in range(args.n):
        e = sample_expression(args.complexity, table, rng=rng)
        assert complexity(e) == args.complexity
        lines.append(to_string(e))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.system not in SYSTEMS:
        raise UsageError(f"unknown system {args.system!r} "
                         f"(known: {', '.join(SYSTEMS)})")
    system = SYSTEMS[args.system]()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, state in enumerate(system.state_names):
        ds = make_derivative_dataset(system, args.n_traj, system.t_end,
                                     system.dt, system.init_box,
                                     seed=args.seed, target=i, mode=args.mode)
        path = out_dir / f"{system.name}_{state.lower()}.csv"
        save_csv(ds, path)
        print(path)
    return EXIT_OK


def cmd_train_gen(args) -> int:
    cfg = load_config(args.config)
    if (args.benchmark is None) == (args.data is None):
        raise UsageError("give exactly one of --benchmark or --data")
    if args.benchmark is not None:
        spec = get_benchmark(args.benchmark)
        ds = synthesize(spec, cfg["data"]["n"], seed=args.seed)
    else:
        if not Path(args.data).is_file():
            raise UsageError(f"data file not found: {args.data}")
        ds = load_csv(args.data)
    tr, va = split(ds, cfg["data"]["train_fraction"], seed=args.seed)
    t = cfg["train"]
    tcfg = TrainConfig(lr0=t["lr0"], lr_floor=t["lr_floor"],
                       epochs=t["epochs"], beta1=t["beta1"], beta2=t["beta2"],
                       eps=t["eps"], seed=args.seed)
    gen, report = train(tr, va, tcfg)
    save_generator(gen, args.out)
    print(f"val_msre={report.val_msre:.6e}  best_epoch={report.best_epoch}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srcv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None, out_required=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="INI config file")
        sp.add_argument("--out", default=out_default, required=out_required)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("discover", help="one seeded discovery")
    sp.add_argument("--benchmark", default=None)
    sp.add_argument("--data", default=None, help="CSV dataset path")
    common(sp)
    sp.set_defaults(fn=cmd_discover)

    sp = sub.add_parser("benchmark", help="seeded recovery-rate sweep")
    sp.add_argument("--benchmarks", nargs="*", default=None)
    sp.add_argument("--seeds", type=int, default=10)
    common(sp, out_default="runs", out_required=False)
    sp.set_defaults(fn=cmd_benchmark)

    sp = sub.add_parser("ablate", help="hyperparameter sweep over M, K, or N")
    sp.add_argument("--param", required=True, choices=["M", "K", "N"])
    sp.add_argument("--values", type=int, nargs="+", required=True)
    sp.add_argument("--benchmarks", nargs="*", default=None)
    sp.add_argument("--seeds", type=int, default=10)
    common(sp, out_default="runs")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("count-space", help="valid-equation counts per complexity")
    sp.add_argument("--max", type=int, default=16)
    sp.add_argument("--m-t", type=int, default=5)
    sp.add_argument("--m-u", type=int, default=4)
    sp.add_argument("--m-b", type=int, default=4)
    common(sp)
    sp.set_defaults(fn=cmd_count_space)

    sp = sub.add_parser("sample-exprs", help="uniform expression samples")
    sp.add_argument("--complexity", type=int, required=True)
    sp.add_argument("--n", type=int, default=1)
    common(sp)
    sp.set_defaults(fn=cmd_sample_exprs)

    sp = sub.add_parser("simulate", help="ODE trajectory derivative datasets")
    sp.add_argument("--system", required=True)
    sp.add_argument("--n-traj", type=int, default=10)
    sp.add_argument("--mode", default="exact",
                    choices=["exact", "finite-difference"])
    common(sp, out_default="trajectories")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("train-gen", help="train and save a data generator")
    sp.add_argument("--benchmark", default=None)
    sp.add_argument("--data", default=None)
    common(sp, out_required=True)
    sp.set_defaults(fn=cmd_train_gen)

    return p


def main(argv=None) -> int:
    level = os.environ.get("SRCV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:
        logger.exception("internal error")
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
