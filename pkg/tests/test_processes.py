from __future__ import annotations

import math

import numpy as np
import pytest

from mfdbsde.basis import JumpSpec, build_grid, build_tree
from mfdbsde.errors import MissingMeasureError, TreeMismatchError
from mfdbsde.processes import (
    AdaptedProcess,
    SolutionTriple,
    norm_calL,
    norm_H2_beta,
    norm_L2_beta,
    norm_S2_beta,
    norm_segment,
    segment_block,
    segment_view,
    triple_distance,
)


def _ramp(tree, kind):
    n = tree.N + 1 if kind == "Y" else tree.N
    tail = (tree.m,) if kind == "K" else ()
    return AdaptedProcess(tree, tuple(np.full((tree.layer_size(i),) + tail, 10.0 + i) for i in range(n)), kind)


def test_segment_conventions():
    tree = build_tree(build_grid(1.0, 4, delta=0.5))
    Y, Z = _ramp(tree, "Y"), _ramp(tree, "Z")
    node = tree.node_id(1, 1)
    np.testing.assert_array_equal(segment_view(Y, node).values, [10.0, 10.0, 11.0])
    np.testing.assert_array_equal(segment_view(Z, node).values, [0.0, 10.0, 11.0])


def test_degenerate_window_at_terminal():
    tree = build_tree(build_grid(1.0, 4))
    Y = _ramp(tree, "Y")
    view = segment_view(Y, tree.node_id(4, 3))
    np.testing.assert_array_equal(view.values, [14.0])


def test_block_matches_views():
    tree = build_tree(build_grid(1.0, 3, delta=2 / 3), JumpSpec((1.0,), (0.5,)))
    rng = np.random.default_rng(1)
    K = AdaptedProcess(tree, tuple(rng.normal(size=(tree.layer_size(i), 1)) for i in range(3)), "K")
    block = segment_block(K, 2)
    for k in range(tree.layer_size(2)):
        np.testing.assert_array_equal(block.values[k], segment_view(K, tree.node_id(2, k)).values)


def test_s2_examples():
    tree = build_tree(build_grid(1.0, 4))
    assert norm_S2_beta(AdaptedProcess.constant(tree, 1.0), 1.0) == pytest.approx(math.e, rel=1e-12)
    assert norm_S2_beta(AdaptedProcess.zeros(tree), 1.0) == 0.0


def test_s2_brownian_by_path_enumeration():
    tree = build_tree(build_grid(1.0, 2))
    B = AdaptedProcess(tree, tree.brownian, "Y")
    # four equally likely paths: sup of B^2 is 2, 0.5, 0.5, 2
    assert norm_S2_beta(B, 0.0) == pytest.approx(1.25, abs=1e-15)


def test_l2_examples():
    tree = build_tree(build_grid(1.0, 4))
    one = AdaptedProcess.constant(tree, 1.0, "Z")
    assert norm_L2_beta(one, 0.0) == pytest.approx(1.0, abs=1e-15)
    expected = math.fsum(math.exp(0.25 * i) * 0.25 for i in range(4))
    assert norm_L2_beta(one, 1.0) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(1.512436676, abs=1e-9)
    assert norm_L2_beta(AdaptedProcess.zeros(tree, "Z"), 1.0) == 0.0


def test_h2_examples():
    tree = build_tree(build_grid(1.0, 4), JumpSpec((1.0,), (2.0,)))
    assert norm_H2_beta(AdaptedProcess.constant(tree, 1.0, "K"), 0.0) == pytest.approx(2.0, abs=1e-14)
    t2 = build_tree(build_grid(0.5, 4), JumpSpec((1.0, 2.0), (1.0, 3.0)))
    c = 1.7
    assert norm_H2_beta(AdaptedProcess.constant(t2, c, "K"), 0.0) == pytest.approx(2 * c * c, rel=1e-12)


def test_segment_norms():
    tree = build_tree(build_grid(1.0, 4, delta=0.5))
    view = segment_view(AdaptedProcess.constant(tree, 3.0), tree.node_id(2, 0))
    assert norm_segment(view, "S") == 9.0
    Z = AdaptedProcess(tree, tuple(np.full(tree.layer_size(i), 1.0 if i == 2 else 0.0) for i in range(4)), "Z")
    assert norm_segment(segment_view(Z, tree.node_id(2, 0)), "L") == 0.25
    jt = build_tree(build_grid(1.0, 4, delta=0.5), JumpSpec((1.0,), (2.0,)))
    K = AdaptedProcess.constant(jt, 1.0, "K")
    vk = segment_view(K, jt.node_id(3, 0))
    assert norm_segment(vk, "H", jt.jumps) == pytest.approx(1.5)
    with pytest.raises(MissingMeasureError):
        norm_segment(vk, "H")


def test_triple_distance_examples():
    tree = build_tree(build_grid(1.0, 2))
    a = SolutionTriple.zeros(tree)
    assert triple_distance(a, a, 1.0) == 0.0
    b = SolutionTriple(tree, AdaptedProcess.constant(tree, 0.1), a.Z, a.K)
    assert triple_distance(a, b, 0.0) == pytest.approx(0.01, rel=1e-12)
    other = SolutionTriple.zeros(build_tree(build_grid(1.0, 3)))
    with pytest.raises(TreeMismatchError):
        triple_distance(a, other, 1.0)


def test_distance_symmetry_and_beta_monotone():
    tree = build_tree(build_grid(1.0, 3), JumpSpec((1.0,), (0.5,)))
    rng = np.random.default_rng(3)

    def rand():
        return SolutionTriple(
            tree,
            AdaptedProcess(tree, tuple(rng.normal(size=tree.layer_size(i)) for i in range(4)), "Y"),
            AdaptedProcess(tree, tuple(rng.normal(size=tree.layer_size(i)) for i in range(3)), "Z"),
            AdaptedProcess(tree, tuple(rng.normal(size=(tree.layer_size(i), 1)) for i in range(3)), "K"),
        )

    for _ in range(20):
        a, b = rand(), rand()
        assert triple_distance(a, b, 0.7) == triple_distance(b, a, 0.7)
        assert norm_calL(a, 0.3) <= norm_calL(a, 0.9)


def test_calL_of_decaying_path():
    tree = build_tree(build_grid(4.0, 64), collapsed=True)
    Y = AdaptedProcess(tree, tuple(np.array([math.exp(-t) / 2]) for t in tree.grid.times), "Y")
    triple = SolutionTriple(tree, Y, AdaptedProcess.zeros(tree, "Z"), AdaptedProcess.zeros(tree, "K"))
    assert norm_calL(triple, 0.0) == pytest.approx(0.25, abs=1e-15)
