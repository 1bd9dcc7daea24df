"""Expression-core tests.

The validator used here deliberately re-derives grammar rules from the
completed tree (path flags on a recursive walk) instead of reusing the
incremental open-ancestor stack that generation uses, so the two
implementations check each other.
"""

import math

import numpy as np
import pytest

from formula_distill import expressions as ex
from formula_distill.errors import (
    ArityMismatch,
    ConfigError,
    ConstantCountMismatch,
    DomainViolation,
    InvalidTokenKind,
    Malformed,
    TrailingTokens,
)
from formula_distill.vocab import arity


# --- independent validator -------------------------------------------------

def _build(tokens):
    """Parse a preorder token list into nested tuples; None on failure."""
    pos = 0

    def rec():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("ran out of tokens")
        tok = tokens[pos]
        pos += 1
        return (tok, tuple(rec() for _ in range(arity(tok))))

    try:
        tree = rec()
    except (ValueError, InvalidTokenKind):
        return None
    return tree if pos == len(tokens) else None


def _rules_ok(node, trig_above=False, logsqrt_above=False, parent=None):
    tok, children = node
    if tok in ("sin", "cos") and (trig_above or logsqrt_above):
        return False
    if tok == "-" and parent in ("log", "sqrt"):
        return False
    t = trig_above or tok in ("sin", "cos")
    ls = logsqrt_above or tok in ("log", "sqrt")
    return all(_rules_ok(ch, t, ls, tok) for ch in children)


def valid_skeleton(tokens, max_vars=9):
    tree = _build(tokens)
    if tree is None:
        return False
    for tok in tokens:
        if tok.startswith("x") and int(tok[1:]) > max_vars:
            return False
    return _rules_ok(tree)


# --- arity and counting ----------------------------------------------------

def test_arity_values():
    assert arity("+") == 2
    assert arity("/") == 2
    assert arity("sin") == 1
    assert arity("exp") == 1
    assert arity("sqrt") == 1
    assert arity("C") == 0
    assert arity("x1") == 0
    assert arity("x9") == 0


def test_arity_rejects_non_expression_tokens():
    for tok in ("0.63", "1.00", "<bos>", "<pad>", "tan", ""):
        with pytest.raises(InvalidTokenKind):
            arity(tok)


def test_remaining_slots_worked_example():
    # [*, C, sin, x1]: 1 -> 2 -> 1 -> 1 -> 0
    seq = ["*", "C", "sin", "x1"]
    assert ex.remaining_slots([]) == 1
    assert ex.remaining_slots(seq[:1]) == 2
    assert ex.remaining_slots(seq[:2]) == 1
    assert ex.remaining_slots(seq[:3]) == 1
    assert ex.remaining_slots(seq) == 0


def test_remaining_slots_trailing():
    with pytest.raises(TrailingTokens):
        ex.remaining_slots(["x1", "x1"])
    with pytest.raises(TrailingTokens):
        ex.remaining_slots(["sin", "x1", "C"])


# --- structural constraints ------------------------------------------------

def test_constraint_trig_nesting():
    assert ex.constraint_check(["sin"], "cos") is False
    assert ex.constraint_check(["cos"], "cos") is False
    assert ex.constraint_check(["sin", "+", "x1"], "cos") is False  # via + under sin
    assert ex.constraint_check(["+", "sin", "x1"], "cos") is True  # sibling, sin closed
    assert ex.constraint_check(["+", "x1"], "sin") is True


def test_constraint_trig_inside_log_sqrt():
    assert ex.constraint_check(["log"], "sin") is False
    assert ex.constraint_check(["sqrt"], "cos") is False
    assert ex.constraint_check(["log", "+", "x1"], "sin") is False  # anywhere in argument
    assert ex.constraint_check(["+", "log", "x1"], "sin") is True  # log argument closed


def test_constraint_minus_at_log_sqrt_root():
    assert ex.constraint_check(["log"], "-") is False
    assert ex.constraint_check(["sqrt"], "-") is False
    assert ex.constraint_check(["log", "+"], "-") is True  # not at the argument root
    assert ex.constraint_check(["+", "x1"], "-") is True


def test_open_ancestors():
    assert ex.open_ancestors([]) == []
    assert ex.open_ancestors(["+"]) == ["+"]
    assert ex.open_ancestors(["+", "sin"]) == ["+", "sin"]
    assert ex.open_ancestors(["+", "sin", "x1"]) == ["+"]
    assert ex.open_ancestors(["+", "sin", "x1", "cos"]) == ["+", "cos"]


# --- parse / serialize -----------------------------------------------------

def test_parse_round_trip_examples():
    for seq in (
        ["x1"],
        ["C"],
        ["*", "C", "sin", "x1"],
        ["+", "+", "*", "x1", "x1", "x1", "C"],
        ["/", "sqrt", "x2", "exp", "x1"],
    ):
        tree = ex.parse_preorder(seq)
        assert ex.to_preorder(tree) == seq


def test_parse_malformed():
    with pytest.raises(Malformed):
        ex.parse_preorder(["sin", "cos"])  # never completes
    with pytest.raises(Malformed):
        ex.parse_preorder(["+", "x1"])  # missing operand
    with pytest.raises(Malformed):
        ex.parse_preorder(["x1", "x1"])  # trailing
    with pytest.raises(Malformed):
        ex.parse_preorder(["0.63"])  # reward token is not an expression
    with pytest.raises(Malformed):
        ex.parse_preorder(["tan", "x1"])  # unknown token
    with pytest.raises(Malformed):
        ex.parse_preorder([])


def test_round_trip_random_trees():
    rng = np.random.default_rng(7)
    cfg = ex.SkeletonConfig(max_len=25, max_vars=3)
    for _ in range(1000):
        seq = ex.sample_skeleton(rng, cfg)
        assert ex.to_preorder(ex.parse_preorder(seq)) == seq


# --- sampling --------------------------------------------------------------

def test_sample_skeleton_respects_config():
    rng = np.random.default_rng(0)
    cfg = ex.SkeletonConfig(max_len=12, max_vars=2, max_depth=4)
    for _ in range(500):
        seq = ex.sample_skeleton(rng, cfg)
        assert 1 <= len(seq) <= 12
        assert valid_skeleton(seq, max_vars=2)
        assert ex.tree_depth(ex.parse_preorder(seq)) <= 4


def test_sample_skeleton_deterministic():
    cfg = ex.SkeletonConfig(max_len=20, max_vars=2)
    a = [ex.sample_skeleton(np.random.default_rng(123), cfg) for _ in range(20)]
    b = [ex.sample_skeleton(np.random.default_rng(123), cfg) for _ in range(20)]
    assert a == b


def test_sample_skeleton_token_subset():
    rng = np.random.default_rng(1)
    cfg = ex.SkeletonConfig(max_len=1, tokens=("x1",))
    assert ex.sample_skeleton(rng, cfg) == ["x1"]
    with pytest.raises(ConfigError):
        ex.SkeletonConfig(max_len=5, tokens=("+", "sin"))  # no terminals


def test_sample_skeleton_weights():
    rng = np.random.default_rng(2)
    cfg = ex.SkeletonConfig(max_len=9, tokens=("+", "x1", "x2"), weights={"x2": 0.0})
    for _ in range(50):
        assert "x2" not in ex.sample_skeleton(rng, cfg)


# --- evaluation ------------------------------------------------------------

def test_evaluate_polynomial():
    tree = ex.parse_preorder(["+", "*", "x1", "x1", "x1"])  # x^2 + x
    X = np.array([[2.0], [0.0], [-1.5]])
    np.testing.assert_allclose(ex.evaluate(tree, X), [6.0, 0.0, 0.75])


def test_evaluate_with_constants():
    tree = ex.parse_preorder(["*", "C", "sin", "x1"])
    X = np.array([[0.5]])
    got = ex.evaluate(tree, X, [2.0])
    np.testing.assert_allclose(got, [2.0 * math.sin(0.5)], rtol=1e-15)


def test_evaluate_constant_only_broadcasts():
    tree = ex.parse_preorder(["C"])
    got = ex.evaluate(tree, np.zeros((4, 1)), [3.25])
    np.testing.assert_array_equal(got, np.full(4, 3.25))


def test_evaluate_constant_count_mismatch():
    tree = ex.parse_preorder(["*", "C", "x1"])
    with pytest.raises(ConstantCountMismatch):
        ex.evaluate(tree, np.ones((2, 1)), [])
    with pytest.raises(ConstantCountMismatch):
        ex.evaluate(tree, np.ones((2, 1)), [1.0, 2.0])


def test_evaluate_domain_violations():
    X = np.array([[-1.0], [2.0]])
    with pytest.raises(DomainViolation):
        ex.evaluate(ex.parse_preorder(["log", "x1"]), X)
    with pytest.raises(DomainViolation):
        ex.evaluate(ex.parse_preorder(["sqrt", "x1"]), X)
    with pytest.raises(DomainViolation):
        ex.evaluate(ex.parse_preorder(["/", "C", "x1"]), np.array([[0.0]]), [1.0])
    with pytest.raises(DomainViolation):  # exp overflow -> non-finite
        ex.evaluate(ex.parse_preorder(["exp", "x1"]), np.array([[1000.0]]))


def test_evaluate_log_zero_is_violation():
    with pytest.raises(DomainViolation):
        ex.evaluate(ex.parse_preorder(["log", "x1"]), np.array([[0.0]]))


def test_evaluate_arity_mismatch_on_bad_tree():
    bad = ex.ExprTree("+", (ex.ExprTree("x1", ()),))  # binary with one child
    with pytest.raises(ArityMismatch):
        ex.evaluate(bad, np.ones((2, 1)))


def test_evaluate_var_beyond_columns():
    tree = ex.parse_preorder(["x3"])
    with pytest.raises(ex.DimsError if hasattr(ex, "DimsError") else Exception):
        ex.evaluate(tree, np.ones((2, 2)))


def test_tree_helpers():
    tree = ex.parse_preorder(["+", "*", "C", "x2", "C"])
    assert ex.const_count(tree) == 2
    assert ex.max_var_index(tree) == 2
    assert ex.tree_depth(tree) == 3
    assert ex.tree_depth(ex.parse_preorder(["x1"])) == 1
