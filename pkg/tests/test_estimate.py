import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import leaves, toy_space
from implspace.estimate import (CandidateTree, Estimate, ExplicitTree, StratifierError, TreeTooLarge,
                                chen_estimate, default_stratifier, exact_count, knuth_estimate, tighter)


def binary(depth):
    return [] if depth == 0 else [binary(depth - 1), binary(depth - 1)]


def random_tree(rng, depth=0, max_depth=9):
    if depth >= max_depth or (depth > 2 and rng.random() < 0.15):
        return []
    return [random_tree(rng, depth + 1, max_depth) for _ in range(rng.randint(1, 3))]


class Caterpillar:
    """A spine where node i carries a complete binary bush of height i % 12.

    ``remaining`` tells spine nodes apart from bush nodes, so the default
    stratifier only merges isomorphic subtrees."""

    def __init__(self, length=40):
        self.length = length
        self.root = ("spine", 0)

    def children(self, node):
        kind, x = node
        if kind == "spine":
            if x == self.length:
                return []
            return [("spine", x + 1), ("bush", x % 12)]
        return [] if x == 0 else [("bush", x - 1)] * 2

    def remaining(self, node):
        kind, x = node
        return 100 + self.length - x if kind == "spine" else x


def test_knuth_is_exact_on_a_uniform_tree():
    t = ExplicitTree(binary(10))
    e = knuth_estimate(t, 50, seed=3)
    assert e.value == 1024 and e.width == 0
    assert knuth_estimate(t, 20, count="nodes").value == 2047


def test_chen_is_exact_on_a_uniform_tree():
    t = ExplicitTree(binary(10))
    for n in (1, 7):
        e = chen_estimate(t, n, seed=n)
        assert e.value == 1024 and e.width == 0
    assert chen_estimate(t, 3, count="nodes").value == 2047


def test_exact_count_binary():
    c = exact_count(ExplicitTree(binary(10)))
    assert (c.leaves, c.nodes) == (1024, 2047)
    assert c.per_depth == tuple(2 ** d for d in range(11))


def test_single_node():
    t = ExplicitTree([])
    assert knuth_estimate(t, 10).value == 1
    assert chen_estimate(t, 10).value == 1
    assert exact_count(t).leaves == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_knuth_mean_on_random_trees(seed):
    t = ExplicitTree(random_tree(random.Random(seed)))
    exact = exact_count(t).leaves
    assert abs(knuth_estimate(t, 10 ** 5, seed=seed).value - exact) <= 0.02 * exact


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_chen_ci_is_consistent_with_exact(seed):
    t = ExplicitTree(random_tree(random.Random(seed), max_depth=6))
    exact = exact_count(t).leaves
    e = chen_estimate(t, 200, seed=seed)
    # five standard errors: never flaky, still catches bias
    half = (e.ci[1] - e.ci[0]) / 2
    assert abs(e.value - exact) <= max(half * 5 / 1.96, 1e-9)


def test_chen_beats_knuth_on_caterpillar():
    t = Caterpillar()
    exact = exact_count(t, budget=10 ** 7).leaves
    k = knuth_estimate(t, 10 ** 5, seed=1)
    c = chen_estimate(t, 10 ** 3, seed=1)
    assert c.value == exact
    assert c.width < k.width
    assert tighter(k, c) is c


def test_bad_stratifier_is_rejected():
    t = ExplicitTree(binary(3))
    with pytest.raises(StratifierError):
        chen_estimate(t, 1, stratifier=lambda node, depth: 0)
    with pytest.raises(StratifierError):
        chen_estimate(t, 1, stratifier=lambda node, depth: depth)


def test_default_stratifier_decreases():
    _, root = toy_space()
    t = CandidateTree(root)
    key = default_stratifier(t)
    k0 = key(root, 0)
    for child in t.children(root):
        assert key(child, 1) < k0


def test_exact_count_budget():
    with pytest.raises(TreeTooLarge):
        exact_count(ExplicitTree(binary(10)), budget=100)


def test_iterations_must_be_positive():
    t = ExplicitTree(binary(2))
    with pytest.raises(ValueError):
        knuth_estimate(t, 0)
    with pytest.raises(ValueError):
        chen_estimate(t, 0)


def test_log_scale_interval():
    t = ExplicitTree(random_tree(random.Random(4)))
    normal = knuth_estimate(t, 200, seed=2)
    log = knuth_estimate(t, 200, seed=2, ci_scale="log")
    assert normal.value == log.value
    lo, hi = log.ci
    assert 0 < lo < log.value < hi
    assert math.isclose(log.value / lo, hi / log.value)


def test_tighter_uses_relative_width():
    a = Estimate(100.0, (90.0, 110.0), "knuth", 1, 0)
    b = Estimate(10.0, (8.0, 12.0), "chen", 1, 0)
    assert tighter(a, b) is a and tighter(b, a) is a
    assert Estimate(0.0, (0.0, 0.0), "x", 1, 0).to_dict()["ci"] == [0.0, 0.0]


def test_toy_count_two_traversals():
    _, root = toy_space()
    by_tree = exact_count(CandidateTree(root)).leaves
    assert by_tree == sum(1 for _ in leaves(root)) == 33792


def test_open_candidate_has_no_leaf_value():
    _, root = toy_space()
    t = CandidateTree(root)
    assert t.leaf_value(root) == 0
