"""Discrete probability model: time grid, jump marks and the scenario tree.

The Brownian motion is approximated by a symmetric coin (increments
``+-sqrt(dt)``) and the compensated Poisson measure by one-jump-per-step
thinning (mark ``j`` fires with probability ``lambda_j * dt``).  Both laws
match the first two conditional moments of the continuous increments, so every
conditional expectation on the tree is an exact finite sum.

Node layout
-----------
Layer ``i`` holds ``b**i`` nodes, ``b = 2 * (m + 1)``.  The children of node
``k`` at layer ``i`` are ``k * b + c`` at layer ``i + 1`` with

    c = outcome * 2 + sign,   sign 0 -> +sqrt(dt), sign 1 -> -sqrt(dt),
                              outcome 0 -> no jump, outcome j -> mark j.

Global node ids enumerate layers in order: ``offset(i) + k``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, BudgetError, IncompleteLayerError, ThinningError

DEFAULT_NODE_BUDGET = 2_000_000
ALIGN_TOL = 1e-9


def _steps(value: float, dt: float, name: str) -> int:
    ratio = value / dt
    steps = round(ratio)
    if abs(ratio - steps) > ALIGN_TOL:
        raise AlignmentError(f"{name}={value!r} is not a multiple of dt={dt!r}")
    return int(steps)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with a delay window ``[-delta, 0]``.

    ``s`` is the point shift used by the finite-horizon condition; the
    infinite-horizon solver stores its shift ``r`` in the same slot.
    """

    T: float
    N: int
    delta: float = 0.0
    s: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be >= 0, got {self.delta!r}")
        if not (-self.delta - ALIGN_TOL * self.dt <= self.s <= 0):
            raise ValueError(f"s must lie in [-delta, 0], got {self.s!r}")
        _steps(self.delta, self.dt, "delta")
        _steps(-self.s, self.dt, "s")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def lag_steps(self) -> int:
        """Number of steps spanned by the delay window."""
        return _steps(self.delta, self.dt, "delta")

    @property
    def shift_steps(self) -> int:
        """``|s| / dt``."""
        return _steps(-self.s, self.dt, "s")

    def steps_for(self, offset: float, name: str = "offset") -> int:
        """Signed step count of an aligned offset."""
        return _steps(offset, self.dt, name)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


def build_grid(T: float, N: int, delta: float = 0.0, s: float = 0.0) -> TimeGrid:
    return TimeGrid(float(T), int(N), float(delta), float(s))


@dataclass(frozen=True)
class JumpSpec:
    """Finitely many jump marks with intensities ``lambda_j = nu({zeta_j})``."""

    marks: tuple[float, ...] = ()
    intensities: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "marks", tuple(float(z) for z in self.marks))
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        if len(self.marks) != len(self.intensities):
            raise ValueError("marks and intensities must have equal length")
        if any(z == 0 or not math.isfinite(z) for z in self.marks):
            raise ValueError("jump marks must be finite and nonzero")
        if len(set(self.marks)) != len(self.marks):
            raise ValueError("jump marks must be distinct")
        if any(not (math.isfinite(v) and v >= 0) for v in self.intensities):
            raise ValueError("intensities must be finite and >= 0")

    @property
    def m(self) -> int:
        return len(self.marks)

    @property
    def total_intensity(self) -> float:
        return math.fsum(self.intensities)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)

    def check_grid(self, grid: TimeGrid) -> None:
        if self.total_intensity * grid.dt >= 1:
            raise ThinningError(
                f"sum(lambda)*dt = {self.total_intensity * grid.dt!r} >= 1; refine the grid"
            )


NO_JUMPS = JumpSpec()


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Immutable non-recombining event tree.

    Per-layer arrays are precomputed: ``cum_prob[i]`` (path probabilities),
    ``brownian[i]`` (``B(t_i)``) and ``counts[i]`` (jump counts per mark).
    A *collapsed* tree has one node per layer and no noise; it carries the
    trivial filtration and is used when the solution is known to be
    deterministic.
    """

    grid: TimeGrid
    jumps: JumpSpec
    collapsed: bool
    child_prob: np.ndarray
    child_dB: np.ndarray
    child_dN: np.ndarray
    cum_prob: tuple[np.ndarray, ...] = field(repr=False)
    brownian: tuple[np.ndarray, ...] = field(repr=False)
    counts: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def key(self) -> tuple:
        return (self.grid, self.jumps, self.collapsed)

    @property
    def branching(self) -> int:
        return len(self.child_prob)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def m(self) -> int:
        return self.jumps.m

    def layer_size(self, i: int) -> int:
        return self.branching**i

    def offset(self, i: int) -> int:
        b = self.branching
        return i if b == 1 else (b**i - 1) // (b - 1)

    @property
    def node_count(self) -> int:
        return self.offset(self.N + 1)

    def node_id(self, layer: int, index: int) -> int:
        return self.offset(layer) + index

    def locate(self, node_id: int) -> tuple[int, int]:
        """Return ``(layer, index)`` of a global node id."""
        if not 0 <= node_id < self.node_count:
            raise IndexError(f"node id {node_id} outside tree of {self.node_count} nodes")
        layer = 0
        while self.offset(layer + 1) <= node_id:
            layer += 1
        return layer, node_id - self.offset(layer)

    def parent(self, node_id: int) -> int | None:
        layer, k = self.locate(node_id)
        if layer == 0:
            return None
        return self.node_id(layer - 1, k // self.branching)

    def children(self, node_id: int) -> range:
        layer, k = self.locate(node_id)
        if layer >= self.N:
            return range(0)
        start = self.node_id(layer + 1, k * self.branching)
        return range(start, start + self.branching)

    def transition_prob(self, layer: int) -> np.ndarray:
        """Transition probability from the parent, per node of ``layer``."""
        if layer == 0:
            return np.ones(1)
        return np.tile(self.child_prob, self.layer_size(layer - 1))

    def dB(self, layer: int) -> np.ndarray:
        """Brownian increment leading into each node of ``layer``."""
        if layer == 0:
            return np.zeros(1)
        return np.tile(self.child_dB, self.layer_size(layer - 1))

    def dN(self, layer: int) -> np.ndarray:
        """Compensated jump increments leading into each node, shape (n, m)."""
        if layer == 0:
            return np.zeros((1, self.m))
        return np.tile(self.child_dN, (self.layer_size(layer - 1), 1))

    def ancestor_index(self, layer: int, back: int) -> np.ndarray:
        """Index at layer ``layer - back`` of the ancestor of each node."""
        return np.arange(self.layer_size(layer)) // (self.branching**back)


def build_tree(
    grid: TimeGrid,
    jumps: JumpSpec = NO_JUMPS,
    *,
    node_budget: int = DEFAULT_NODE_BUDGET,
    collapsed: bool = False,
) -> ScenarioTree:
    jumps.check_grid(grid)
    m, dt = jumps.m, grid.dt
    lam = jumps.lam
    if collapsed:
        child_prob = np.ones(1)
        child_dB = np.zeros(1)
        child_dN = np.zeros((1, m))
        child_jump = np.zeros((1, m))
    else:
        b = 2 * (m + 1)
        nodes = sum(b**i for i in range(grid.N + 1))
        if nodes > node_budget:
            raise BudgetError(
                f"tree with N={grid.N}, m={m} needs {nodes} nodes > budget {node_budget}"
            )
        outcome_prob = np.concatenate(([1.0 - math.fsum(lam * dt)], lam * dt))
        sq = math.sqrt(dt)
        child_prob = np.empty(b)
        child_dB = np.empty(b)
        child_jump = np.zeros((b, m))
        for outcome in range(m + 1):
            for sign in range(2):
                c = outcome * 2 + sign
                child_prob[c] = 0.5 * outcome_prob[outcome]
                child_dB[c] = sq if sign == 0 else -sq
                if outcome > 0:
                    child_jump[c, outcome - 1] = 1.0
        child_dN = child_jump - lam * dt

    cum = [np.ones(1)]
    level = [np.zeros(1)]
    counts = [np.zeros((1, m))]
    for _ in range(grid.N):
        cum.append((cum[-1][:, None] * child_prob[None, :]).ravel())
        level.append((level[-1][:, None] + child_dB[None, :]).ravel())
        counts.append((counts[-1][:, None, :] + child_jump[None, :, :]).reshape(len(cum[-1]), m))
    for arr in (child_prob, child_dB, child_dN, *cum, *level, *counts):
        arr.setflags(write=False)
    return ScenarioTree(
        grid=grid,
        jumps=jumps,
        collapsed=collapsed,
        child_prob=child_prob,
        child_dB=child_dB,
        child_dN=child_dN,
        cum_prob=tuple(cum),
        brownian=tuple(level),
        counts=tuple(counts),
    )


def _layer_array(tree: ScenarioTree, values, layer: int) -> np.ndarray:
    n = tree.layer_size(layer)
    if isinstance(values, Mapping):
        start = tree.offset(layer)
        try:
            arr = np.array([values[start + k] for k in range(n)], dtype=float)
        except KeyError as exc:
            raise IncompleteLayerError(f"no value for node {exc.args[0]} of layer {layer}") from None
        return arr
    arr = np.asarray(values, dtype=float)
    if arr.shape[0] != n:
        raise IncompleteLayerError(f"layer {layer} has {n} nodes, got {arr.shape[0]} values")
    return arr


def conditional_expectation_layer(tree: ScenarioTree, next_values, layer: int) -> np.ndarray:
    """E[values | F_{t_layer}] for every node of ``layer``.

    ``next_values`` lives on layer ``layer + 1``; trailing axes (marks) are
    carried through.  Children are summed in ascending index order.
    """
    v = _layer_array(tree, next_values, layer + 1)
    b = tree.branching
    v = v.reshape((tree.layer_size(layer), b) + v.shape[1:])
    p = tree.child_prob
    acc = v[:, 0] * p[0]
    for c in range(1, b):
        acc = acc + v[:, c] * p[c]
    return acc


def conditional_expectation(tree: ScenarioTree, next_values, node_id: int) -> float:
    """Sum of ``p(child) * value(child)`` over the children of ``node_id``.

    ``next_values`` is either an array over the next layer or a mapping
    from global node id to value.
    """
    layer, k = tree.locate(node_id)
    if layer >= tree.N:
        raise IndexError(f"node {node_id} is a leaf")
    b = tree.branching
    if isinstance(next_values, Mapping):
        start = tree.node_id(layer + 1, k * b)
        try:
            vals = [float(next_values[start + c]) for c in range(b)]
        except KeyError as exc:
            raise IncompleteLayerError(f"no value for child node {exc.args[0]}") from None
    else:
        arr = _layer_array(tree, next_values, layer + 1)
        vals = [float(x) for x in arr[k * b : (k + 1) * b]]
    acc = 0.0
    for c in range(b):
        acc += float(tree.child_prob[c]) * vals[c]
    return acc


def layer_expectation(tree: ScenarioTree, values, layer: int) -> float | np.ndarray:
    """E[values(t_layer)] as a sequential ascending-order sum.

    Values with a trailing mark axis return one mean per mark.
    """
    v = _layer_array(tree, values, layer)
    w = tree.cum_prob[layer]
    if v.ndim == 1:
        return float(np.cumsum(w * v)[-1])
    return np.cumsum(w[:, None] * v, axis=0)[-1]


def mark_dot(values, weights) -> np.ndarray:
    """``sum_j values[..., j] * weights[j]`` in ascending ``j``.

    Used instead of ``@`` so results never depend on the BLAS thread count.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] == 0:
        return np.zeros(values.shape[:-1])
    acc = values[..., 0] * weights[0]
    for j in range(1, weights.shape[0]):
        acc = acc + values[..., j] * weights[j]
    return acc
