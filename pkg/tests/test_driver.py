import numpy as np
import pytest

from srcv.data import Dataset, get_benchmark, synthesize
from srcv.driver import DriverConfig, msre, recovery_check, run
from srcv.expr import equivalent, free_vars, parse, to_string
from srcv.svsr import SearchConfig

DOM2 = ((-3.0, 3.0), (-3.0, 3.0))


def _dataset_2d(fn, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(n, 2))
    y = fn(X[:, 0], X[:, 1])
    cut = int(n * 0.8)
    tr = Dataset(X[:cut], y[:cut], DOM2, ("x1", "x2"))
    va = Dataset(X[cut:], y[cut:], DOM2, ("x1", "x2"))
    return tr, va


# ---------------------------------------------------------------------------
# msre
# ---------------------------------------------------------------------------

def test_msre_identical():
    assert msre([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_msre_unit_offset():
    t = np.zeros(4)
    assert msre(t + 1.0, t) == 1.0


def test_msre_relative_scale():
    t = np.full(10, 10.0)
    assert abs(msre(1.1 * t, t) - (1.0 / 11.0) ** 2) < 1e-15


def test_msre_validation():
    with pytest.raises(ValueError):
        msre([1.0, 2.0], [1.0])


# ---------------------------------------------------------------------------
# recovery_check
# ---------------------------------------------------------------------------

def test_recovery_identity():
    spec = get_benchmark("Jin-5")
    va = synthesize(spec, 1000, seed=3)
    ok, err = recovery_check(spec.truth, spec.truth, va)
    assert ok
    assert err == 0.0


def test_recovery_trig_identity():
    found = parse("2*sin(x1)*cos(x2)")
    truth = parse("sin(x1 + x2) + sin(x1 - x2)")
    rng = np.random.default_rng(1)
    X = rng.uniform(-3, 3, size=(800, 2))
    y = 2 * np.sin(X[:, 0]) * np.cos(X[:, 1])
    va = Dataset(X, y, DOM2, ("x1", "x2"))
    ok, err = recovery_check(found, truth, va)
    assert ok


def test_recovery_offset_fails():
    spec = get_benchmark("Nguyen-10")
    va = synthesize(spec, 1000, seed=5)
    shifted = parse("2*sin(x1)*cos(x2) + 0.1")
    ok, err = recovery_check(shifted, spec.truth, va)
    assert not ok
    assert err > 1e-3


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _exact_cfg(truth, rollouts=4000):
    return DriverConfig(use_exact_generator=True, exact_truth=truth,
                        search=SearchConfig(rollouts=rollouts, stop_nrmse=1e-7))


def test_walkthrough_exact_generator():
    truth = parse("x1*x2 + 2*x2 + 2")
    tr, va = _dataset_2d(lambda a, b: a * b + 2 * b + 2)
    res = run(tr, va, _exact_cfg(truth), seed=0)
    assert equivalent(res.expr, truth, DOM2)
    # the affine round-1 discovery re-skeletonizes into the two-slot form
    assert res.rounds[1].skeleton == "C1*x1 + C2"
    sub1 = parse(res.rounds[1].subexprs[0])
    sub2 = parse(res.rounds[1].subexprs[1])
    assert equivalent(sub1, parse("x2"), DOM2)
    assert equivalent(sub2, parse("2*x2 + 2"), DOM2)
    ok, err = recovery_check(res.expr, truth, va)
    assert ok and err < 1e-10


def test_one_variable_degenerates_to_single_search():
    truth = parse("sin(x1)")
    rng = np.random.default_rng(2)
    X = rng.uniform(-3, 3, size=(1200, 1))
    y = np.sin(X[:, 0])
    tr = Dataset(X[:1000], y[:1000], ((-3.0, 3.0),), ("x1",))
    va = Dataset(X[1000:], y[1000:], ((-3.0, 3.0),), ("x1",))
    res = run(tr, va, _exact_cfg(truth), seed=1)
    assert len(res.rounds) == 1
    assert equivalent(res.expr, truth, [(-3.0, 3.0)])


def test_variable_coverage_and_records():
    truth = parse("x1*x2 + 2*x2 + 2")
    tr, va = _dataset_2d(lambda a, b: a * b + 2 * b + 2, seed=4)
    res = run(tr, va, _exact_cfg(truth), seed=3)
    assert free_vars(res.expr) <= {0, 1}
    assert [r.index for r in res.rounds] == [0, 1]
    assert res.rounds[0].next_var == 0 and res.rounds[1].next_var == 1
    # round 0 pins x2, round 1 pins nothing
    assert [idx for idx, _ in res.rounds[0].pins] == [1]
    assert res.rounds[1].pins == ()
    for (idx, val) in res.rounds[0].pins:
        lo, hi = DOM2[idx]
        assert lo <= val <= hi
    assert res.gen_seconds + res.sr_seconds <= res.total_seconds + 1e-6
    assert res.val_msre >= 0.0


def test_constant_column_skip():
    # x1*x2 + 5: round 2 sees C1(x2)=x2-ish and a pure-constant column
    truth = parse("x1*x2 + 5")
    tr, va = _dataset_2d(lambda a, b: a * b + 5, seed=6)
    res = run(tr, va, _exact_cfg(truth), seed=2)
    assert equivalent(res.expr, truth, DOM2)
    assert any(any(r.constant_columns) for r in res.rounds)


def test_determinism_same_seed():
    truth = parse("x1*x2 + 2*x2 + 2")
    tr, va = _dataset_2d(lambda a, b: a * b + 2 * b + 2, seed=8)
    cfg = _exact_cfg(truth)
    a = run(tr, va, cfg, seed=5)
    b = run(tr, va, cfg, seed=5)
    assert to_string(a.expr) == to_string(b.expr)
    assert a.val_msre == b.val_msre


def test_config_validation():
    with pytest.raises(ValueError):
        DriverConfig(k=0)
    with pytest.raises(ValueError):
        DriverConfig(msre_tol=0.0)
    with pytest.raises(ValueError):
        DriverConfig(search_tries=0)
    with pytest.raises(ValueError):
        DriverConfig(use_exact_generator=True)   # missing exact_truth
    truth = parse("x1 + x2")
    tr, va = _dataset_2d(lambda a, b: a + b, n=200, seed=9)
    with pytest.raises(ValueError):
        run(tr, va, DriverConfig(use_exact_generator=True, exact_truth=truth,
                                 variable_order=(0, 0)), seed=0)
