from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdbsde.basis import (
    JumpSpec,
    build_grid,
    build_tree,
    conditional_expectation,
    conditional_expectation_layer,
    layer_expectation,
)
from mfdbsde.errors import AlignmentError, BudgetError, IncompleteLayerError, ThinningError

ONE_MARK = JumpSpec((1.0,), (0.4,))


def test_grid_with_delay_and_shift():
    g = build_grid(1.0, 4, delta=0.5, s=-0.25)
    assert g.dt == 0.25
    assert g.lag_steps == 2
    assert g.shift_steps == 1
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])


def test_grid_without_delay():
    g = build_grid(2.0, 8)
    assert g.dt == 0.25 and g.lag_steps == 0


def test_misaligned_delay_is_rejected():
    with pytest.raises(AlignmentError):
        build_grid(1.0, 4, delta=0.3)


def test_binomial_tree_counts():
    tree = build_tree(build_grid(1.0, 2))
    assert tree.node_count == 7
    np.testing.assert_array_equal(tree.child_prob, [0.5, 0.5])


def test_one_mark_children():
    tree = build_tree(build_grid(0.25, 1), ONE_MARK)
    np.testing.assert_allclose(tree.child_prob, [0.45, 0.45, 0.05, 0.05], atol=1e-15)
    np.testing.assert_allclose(sorted(set(np.round(tree.child_dN[:, 0], 12))), [-0.1, 0.9])


def test_thinning_violation():
    with pytest.raises(ThinningError):
        build_tree(build_grid(0.25, 1), JumpSpec((1.0,), (5.0,)))


def test_node_budget():
    with pytest.raises(BudgetError):
        build_tree(build_grid(1.0, 12), JumpSpec((1.0, 2.0), (0.1, 0.1)), node_budget=1000)


def test_navigation_round_trip():
    tree = build_tree(build_grid(1.0, 3), ONE_MARK)
    for node in range(tree.node_count):
        layer, k = tree.locate(node)
        assert tree.node_id(layer, k) == node
        for child in tree.children(node):
            assert tree.parent(child) == node


def test_conditional_expectation_examples():
    tree = build_tree(build_grid(0.25, 1))
    assert conditional_expectation(tree, [1.0, -1.0], 0) == 0.0
    assert conditional_expectation(tree, {1: 2.5, 2: 2.5}, 0) == 2.5
    jt = build_tree(build_grid(0.25, 1), ONE_MARK)
    on_jump = {1: 0.0, 2: 0.0, 3: 1.0, 4: 1.0}
    assert conditional_expectation(jt, on_jump, 0) == pytest.approx(0.1, abs=1e-15)


def test_conditional_expectation_needs_all_children():
    tree = build_tree(build_grid(0.25, 1))
    with pytest.raises(IncompleteLayerError):
        conditional_expectation(tree, {1: 1.0}, 0)


def test_layer_expectation_examples():
    tree = build_tree(build_grid(1.0, 4), ONE_MARK)
    for i in range(5):
        assert abs(layer_expectation(tree, tree.brownian[i], i)) < 1e-12
        assert layer_expectation(tree, np.full(tree.layer_size(i), 3.0), i) == pytest.approx(3.0, abs=1e-12)
        comp = tree.counts[i][:, 0] - 0.4 * i * tree.grid.dt
        assert abs(layer_expectation(tree, comp, i)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(
    N=st.integers(1, 4),
    lam=st.lists(st.floats(0.0, 0.45), max_size=2),
    seed=st.integers(0, 2**16),
)
def test_tower_and_conservation(N, lam, seed):
    jumps = JumpSpec(tuple(float(j + 1) for j in range(len(lam))), tuple(lam))
    tree = build_tree(build_grid(1.0, N), jumps)
    for i in range(N + 1):
        assert abs(math.fsum(tree.cum_prob[i]) - 1.0) < 1e-12
    rng = np.random.default_rng(seed)
    i = int(rng.integers(0, N))
    v = rng.normal(size=tree.layer_size(i + 1))
    lhs = layer_expectation(tree, v, i + 1)
    rhs = layer_expectation(tree, conditional_expectation_layer(tree, v, i), i)
    assert abs(lhs - rhs) < 1e-12


def test_tree_is_reproducible():
    g = build_grid(1.0, 3)
    a, b = build_tree(g, ONE_MARK), build_tree(g, ONE_MARK)
    for x, y in zip(a.cum_prob + a.brownian, b.cum_prob + b.brownian):
        assert np.array_equal(x, y)
