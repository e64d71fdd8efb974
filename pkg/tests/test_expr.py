import numpy as np
import pytest

from srcv.expr import (
    Binary,
    Const,
    DomainError,
    Param,
    ParseError,
    Unary,
    Var,
    complexity,
    count_nodes,
    equivalent,
    evaluate,
    evaluate_batch,
    evaluate_masked,
    free_vars,
    has_nested_unary,
    instantiate,
    normalize,
    parse,
    renumber_params,
    simplify,
    skeletonize,
    substitute_params,
    to_string,
)


def test_parse_basic_structure():
    e = parse("2*sin(x1)*cos(x2)")
    assert e == Binary(
        "*",
        Binary("*", Const(2.0), Unary("sin", Var(0))),
        Unary("cos", Var(1)),
    )


def test_parse_precedence():
    e = parse("x1 + x2*x1")
    assert e == Binary("+", Var(0), Binary("*", Var(1), Var(0)))
    e = parse("(x1 + x2)*x1")
    assert e == Binary("*", Binary("+", Var(0), Var(1)), Var(0))


def test_parse_power_integer_expands():
    assert to_string(parse("x1^3")) == "x1*x1*x1"
    assert parse("x1^1") == Var(0)
    assert to_string(parse("x1^2")) == "x1*x1"


def test_parse_power_general_desugars():
    assert to_string(parse("x1^x2")) == "exp(x2*log(x1))"
    # non-integer exponent goes through exp/log too
    assert to_string(parse("x1^0.5")) == "exp(0.5*log(x1))"


def test_parse_aliases_two_vars():
    assert parse("x + y") == parse("x1 + x2")
    assert parse("2.5*x^4") == parse("2.5*x1^4")


def test_parse_params():
    e = parse("C1*x1 + C2")
    assert e == Binary("+", Binary("*", Param(0), Var(0)), Param(1))


def test_parse_unary_minus():
    assert parse("-2.5") == Const(-2.5)
    assert parse("-x1") == Binary("-", Const(0.0), Var(0))
    assert parse("2 - -3*x1") == Binary(
        "-", Const(2.0), Binary("*", Const(-3.0), Var(0)))


def test_parse_errors():
    with pytest.raises(ParseError):
        parse("x1 +")
    with pytest.raises(ParseError):
        parse("sin x1")
    with pytest.raises(ParseError):
        parse("foo(x1)")
    with pytest.raises(ParseError):
        parse("x1 ) x2")


def test_evaluate_walkthrough_point():
    e = parse("x1*x2 + 2*x2 + 2")
    assert evaluate(e, [1.0, 2.0]) == 8.0


def test_evaluate_batch_shape():
    e = parse("sin(x1) + x2")
    X = np.array([[0.0, 1.0], [np.pi / 2, 2.0]])
    out = evaluate_batch(e, X)
    assert out.shape == (2,)
    assert np.allclose(out, [1.0, 3.0])


def test_evaluate_constant_expression_broadcasts():
    out = evaluate_batch(Const(3.5), np.zeros((4, 2)))
    assert out.shape == (4,) and np.all(out == 3.5)


def test_evaluate_with_params():
    e = parse("C1*x1 + C2")
    assert evaluate(e, [2.0], params=[3.0, 1.0]) == 7.0


def test_domain_error_log():
    with pytest.raises(DomainError):
        evaluate(parse("log(x1)"), [-1.0])
    with pytest.raises(DomainError):
        evaluate(parse("log(x1)"), [0.0])


def test_domain_error_division_guard():
    with pytest.raises(DomainError):
        evaluate(parse("x1/x2"), [1.0, 1e-13])
    # just above the guard is fine
    assert np.isfinite(evaluate(parse("x1/x2"), [1.0, 1e-11]))


def test_domain_error_exp_overflow():
    with pytest.raises(DomainError):
        evaluate(parse("exp(x1)"), [1000.0])


def test_evaluate_masked_flags_bad_rows():
    vals, mask = evaluate_masked(parse("log(x1)"), np.array([[1.0], [-1.0], [2.0]]))
    assert mask.tolist() == [True, False, True]
    assert vals[0] == 0.0 and np.isclose(vals[2], np.log(2.0))


def test_complexity_frozen_values():
    assert complexity(parse("2*sin(x1)*cos(x2)")) == 6
    assert complexity(parse("x1^3")) == 4
    assert complexity(Const(3.0)) == 0
    assert complexity(Var(0)) == 0


def test_complexity_equals_nodes_minus_one():
    for s in ["2*sin(x1)*cos(x2)", "x1^3", "x1*x2 + 2*x2 + 2", "1.5",
              "sin(x1 + cos(x2))/x1"]:
        e = parse(s)
        assert complexity(e) == count_nodes(e) - 1


def test_skeletonize_single_constant():
    sk, init = skeletonize(parse("2*sin(x1)*cos(x2)"))
    assert to_string(sk.expr) == "C1*sin(x1)*cos(x2)"
    assert sk.param_count == 1
    assert init.tolist() == [2.0]


def test_skeletonize_preorder_numbering():
    sk, init = skeletonize(parse("x1*x2 + 2*x2 + 2"))
    assert to_string(sk.expr) == "x1*x2 + C1*x2 + C2"
    assert init.tolist() == [2.0, 2.0]


def test_instantiate_inverts_skeletonize():
    e = parse("1.5*exp(x1) + 0.5*cos(x2)")
    sk, init = skeletonize(e)
    assert instantiate(sk, init) == e
    with pytest.raises(ValueError):
        instantiate(sk, [1.0])


def test_substitute_params_splices_expressions():
    sk, _ = skeletonize(parse("2*x1 + 6"))
    # replace C1 by x2 and C2 by 2*x2 + 2 (walk-through composition step)
    out = substitute_params(sk.expr, [Var(1), parse("2*x2 + 2")])
    assert equivalent(out, parse("x2*x1 + 2*x2 + 2"), [(1, 2), (1, 2)])


def test_renumber_params():
    e = Binary("+", Param(3), Binary("*", Param(7), Var(0)))
    out = renumber_params(e)
    assert out == Binary("+", Param(0), Binary("*", Param(1), Var(0)))


def test_free_vars():
    assert free_vars(parse("sin(x1)*x3 + 2")) == {0, 2}
    assert free_vars(Const(1.0)) == set()


def test_has_nested_unary():
    assert not has_nested_unary(parse("sin(x1) + cos(x2)"))
    assert has_nested_unary(parse("sin(cos(x1))"))
    assert has_nested_unary(parse("sin(x1 + cos(x2))"))


def test_print_parenthesization():
    assert to_string(parse("x1 - (x2 - x1)")) == "x1 - (x2 - x1)"
    assert to_string(parse("(x1 + x2)*x1")) == "(x1 + x2)*x1"
    assert to_string(parse("x1/(x2*x1)")) == "x1/(x2*x1)"
    assert to_string(parse("x1 + x2*x1")) == "x1 + x2*x1"


def test_print_constant_precision():
    assert to_string(Const(2.0)) == "2"
    assert to_string(Const(0.5)) == "0.5"
    assert to_string(Const(1.2345678)) == "1.23457"
    assert to_string(Const(-2.5)) == "(-2.5)"


def test_print_named_variables():
    e = parse("a + b*c", names=["a", "b", "c"])
    assert e == Binary("+", Var(0), Binary("*", Var(1), Var(2)))
    assert to_string(e, names=["a", "b", "c"]) == "a + b*c"


def test_roundtrip_random_trees():
    # printed form must parse back to the identical tree
    rng = np.random.default_rng(42)

    def random_tree(depth):
        r = rng.random()
        if depth <= 0 or r < 0.3:
            k = rng.integers(0, 3)
            if k == 0:
                return Var(int(rng.integers(0, 2)))
            if k == 1:
                return Const(float(np.round(rng.uniform(-5, 5), 3)))
            return Param(int(rng.integers(0, 3)))
        if r < 0.55:
            op = ["sin", "cos", "exp", "log"][rng.integers(0, 4)]
            return Unary(op, random_tree(depth - 1))
        op = "+-*/"[rng.integers(0, 4)]
        return Binary(op, random_tree(depth - 1), random_tree(depth - 1))

    for _ in range(200):
        t = random_tree(4)
        assert parse(to_string(t)) == t, to_string(t)


def test_simplify_identities():
    assert simplify(parse("x1 + 0")) == Var(0)
    assert simplify(parse("0 + x1")) == Var(0)
    assert simplify(parse("x1 - 0")) == Var(0)
    assert simplify(parse("x1*1")) == Var(0)
    assert simplify(parse("1*x1")) == Var(0)
    assert simplify(parse("x1*0")) == Const(0.0)
    assert simplify(parse("x1/1")) == Var(0)


def test_simplify_constant_folding():
    assert simplify(parse("2 + 3*4")) == Const(14.0)
    assert simplify(parse("sin(0)")) == Const(0.0)
    assert simplify(parse("log(1)")) == Const(0.0)
    # folding that would leave the domain is left alone
    assert simplify(parse("log(0 - 1)")) == Unary("log", Const(-1.0))


def test_simplify_merges_constant_products():
    assert simplify(parse("2*(3*x1)")) == Binary("*", Const(6.0), Var(0))
    assert simplify(parse("(2*x1)*(3*x2)")) == Binary(
        "*", Const(6.0), Binary("*", Var(0), Var(1)))


def test_simplify_never_increases_complexity():
    rng = np.random.default_rng(7)
    pool = ["x1 + 0*x2", "sin(x1)*1", "(2*x1)*3", "x1/1 + 2 - 2",
            "cos(0)*x2", "exp(x1)*0 + x2", "2*(x1 + 3)"]
    for s in pool:
        e = parse(s)
        assert complexity(simplify(e)) <= complexity(e)

    # and on random trees
    def random_tree(depth):
        r = rng.random()
        if depth <= 0 or r < 0.35:
            k = rng.integers(0, 2)
            return Var(int(rng.integers(0, 2))) if k == 0 else Const(
                float(np.round(rng.uniform(-3, 3), 2)))
        if r < 0.55:
            op = ["sin", "cos", "exp", "log"][rng.integers(0, 4)]
            return Unary(op, random_tree(depth - 1))
        op = "+-*/"[rng.integers(0, 4)]
        return Binary(op, random_tree(depth - 1), random_tree(depth - 1))

    for _ in range(100):
        e = random_tree(4)
        assert complexity(simplify(e)) <= complexity(e)


def test_normalize_distributes_trailing_constants():
    out = normalize(parse("(x1 + 3)*2"))
    assert to_string(out) == "2*x1 + 6"


def test_normalize_division_by_constant():
    out = normalize(parse("x1/2"))
    assert out == Binary("*", Const(0.5), Var(0))


def test_normalize_preserves_value():
    rng = np.random.default_rng(3)
    for s in ["(x1 + 3)*2", "x1/4 + (x2 - 1)*3", "((x1*2)*3 + 6)/3",
              "2*(sin(x1) + 1)"]:
        e = parse(s)
        assert equivalent(e, normalize(e), [(-2, 2), (-2, 2)], rng=rng)
        assert complexity(normalize(e)) <= complexity(e)


def test_equivalent_true_for_identity():
    a = parse("sin(x1)*cos(x2) + cos(x1)*sin(x2)")
    b = parse("sin(x1 + x2)")
    assert equivalent(a, b, [(-3, 3), (-3, 3)])


def test_equivalent_false_for_different():
    a = parse("sin(x1)*cos(x2)")
    b = parse("sin(x1)")
    assert not equivalent(a, b, [(-3, 3), (-3, 3)])


def test_equivalent_skips_invalid_points():
    # log(x1*x1) == 2*log(x1) only holds for x1 > 0; on a symmetric domain the
    # negative half is invalid for the right side and must be resampled around
    a = parse("log(x1)*2")
    b = parse("log(x1*x1)")
    assert equivalent(a, b, [(0.1, 3.0)])


def test_equivalent_relative_scale():
    # differs by 1e-4 absolute but the values are ~1e4, well inside rel tol
    a = parse("10000*x1")
    b = parse("10000*x1 + 0.0001")
    assert equivalent(a, b, [(1.0, 2.0)])
    assert not equivalent(a, parse("10000*x1 + 1"), [(1.0, 2.0)])
