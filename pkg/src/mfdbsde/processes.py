"""Adapted processes on a scenario tree, delayed segments and weighted norms.

A process stores one array per layer.  ``Y`` lives on layers ``0..N``;
``Z`` and ``K`` only on ``0..N-1`` because they multiply the increment that
follows.  ``K`` arrays carry a trailing mark axis.

Before time zero the segments follow the usual conventions: ``Y`` is frozen at
its root value, ``Z`` and ``K`` vanish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import JumpSpec, ScenarioTree, layer_expectation, mark_dot
from .errors import MissingMeasureError, TreeMismatchError

KINDS = ("Y", "Z", "K")


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    tree: ScenarioTree
    layers: tuple[np.ndarray, ...]
    kind: str = "Y"

    def __post_init__(self) -> None:
        _check_kind(self.kind)
        expected = self.tree.N + 1 if self.kind == "Y" else self.tree.N
        if len(self.layers) != expected:
            raise ValueError(f"{self.kind}-process needs {expected} layers, got {len(self.layers)}")
        fixed = []
        for i, arr in enumerate(self.layers):
            arr = np.asarray(arr, dtype=float)
            shape = (self.tree.layer_size(i),) + ((self.tree.m,) if self.kind == "K" else ())
            if arr.shape != shape:
                raise ValueError(f"layer {i} of {self.kind} has shape {arr.shape}, expected {shape}")
            fixed.append(arr)
        object.__setattr__(self, "layers", tuple(fixed))

    @classmethod
    def zeros(cls, tree: ScenarioTree, kind: str = "Y") -> AdaptedProcess:
        _check_kind(kind)
        n_layers = tree.N + 1 if kind == "Y" else tree.N
        tail = (tree.m,) if kind == "K" else ()
        return cls(tree, tuple(np.zeros((tree.layer_size(i),) + tail) for i in range(n_layers)), kind)

    @classmethod
    def constant(cls, tree: ScenarioTree, value: float, kind: str = "Y") -> AdaptedProcess:
        z = cls.zeros(tree, kind)
        return cls(tree, tuple(a + value for a in z.layers), kind)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def __sub__(self, other: AdaptedProcess) -> AdaptedProcess:
        _same_tree(self.tree, other.tree)
        return AdaptedProcess(self.tree, tuple(a - b for a, b in zip(self.layers, other.layers)), self.kind)

    def scaled(self, c: float) -> AdaptedProcess:
        return AdaptedProcess(self.tree, tuple(c * a for a in self.layers), self.kind)

    def value(self, node_id: int) -> float | np.ndarray:
        layer, k = self.tree.locate(node_id)
        if layer >= self.n_layers:
            raise IndexError(f"{self.kind} is not defined on layer {layer}")
        return self.layers[layer][k]

    def means(self) -> list:
        return [layer_expectation(self.tree, a, i) for i, a in enumerate(self.layers)]


def _same_tree(a: ScenarioTree, b: ScenarioTree) -> None:
    if a is not b and a.key != b.key:
        raise TreeMismatchError("processes live on different trees")


@dataclass(frozen=True, eq=False)
class SolutionTriple:
    """Candidate or solved ``(Y, Z, K)`` on one tree."""

    tree: ScenarioTree
    Y: AdaptedProcess
    Z: AdaptedProcess
    K: AdaptedProcess

    @classmethod
    def zeros(cls, tree: ScenarioTree) -> SolutionTriple:
        return cls(tree, *(AdaptedProcess.zeros(tree, k) for k in KINDS))

    def __sub__(self, other: SolutionTriple) -> SolutionTriple:
        _same_tree(self.tree, other.tree)
        return SolutionTriple(self.tree, self.Y - other.Y, self.Z - other.Z, self.K - other.K)

    def scaled(self, c: float) -> SolutionTriple:
        return SolutionTriple(self.tree, self.Y.scaled(c), self.Z.scaled(c), self.K.scaled(c))

    @property
    def y0(self) -> float:
        return float(self.Y.layers[0][0])

    def component(self, kind: str) -> AdaptedProcess:
        _check_kind(kind)
        return getattr(self, kind)


# --------------------------------------------------------------------------
# segments


@dataclass(frozen=True, eq=False)
class SegmentView:
    """Window of past values ending at one anchor node.

    ``values[w]`` is the sample at time ``t + offsets[w]``; for ``K`` each
    sample is a vector over marks.
    """

    kind: str
    anchor: int
    time: float
    offsets: np.ndarray
    values: np.ndarray
    dt: float

    def at(self, offset: float) -> float | np.ndarray:
        return self.values[_offset_index(self.offsets, offset, self.dt)]


@dataclass(frozen=True, eq=False)
class SegmentBlock:
    """Segments of every node of one layer; ``values`` has a leading node axis."""

    kind: str
    offsets: np.ndarray
    values: np.ndarray
    dt: float

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def at(self, offset: float) -> np.ndarray:
        return self.values[:, _offset_index(self.offsets, offset, self.dt)]

    def weighted(self, weights: np.ndarray) -> np.ndarray:
        """Sum over the window of ``weights[w] * sample[w]``, ascending ``w``."""
        acc = self.values[:, 0] * weights[0]
        for w in range(1, len(weights)):
            acc = acc + self.values[:, w] * weights[w]
        return acc

    @classmethod
    def from_view(cls, view: SegmentView) -> SegmentBlock:
        return cls(view.kind, view.offsets, view.values[None, ...], view.dt)


def _offset_index(offsets: np.ndarray, offset: float, dt: float) -> int:
    idx = len(offsets) - 1 + int(round(offset / dt))
    if not 0 <= idx < len(offsets) or abs(offsets[idx] - offset) > 1e-9 * max(dt, 1.0):
        raise ValueError(f"offset {offset!r} is not a sample of the window")
    return idx


def window_offsets(lag_steps: int, dt: float) -> np.ndarray:
    return (np.arange(lag_steps + 1) - lag_steps) * dt


def segment_block(proc: AdaptedProcess, layer: int, lag_steps: int | None = None) -> SegmentBlock:
    """Segments of ``proc`` for all nodes of ``layer`` (vectorized)."""
    tree = proc.tree
    L = tree.grid.lag_steps if lag_steps is None else lag_steps
    if layer >= proc.n_layers:
        raise IndexError(f"{proc.kind} is not defined on layer {layer}")
    n = tree.layer_size(layer)
    tail = proc.layers[0].shape[1:]
    out = np.empty((n, L + 1) + tail)
    for w in range(L + 1):
        src = layer - L + w
        if src < 0:
            out[:, w] = proc.layers[0][0] if proc.kind == "Y" else 0.0
        else:
            out[:, w] = proc.layers[src][tree.ancestor_index(layer, layer - src)]
    return SegmentBlock(proc.kind, window_offsets(L, tree.grid.dt), out, tree.grid.dt)


def segment_view(proc: AdaptedProcess, node_id: int, kind: str | None = None) -> SegmentView:
    """Delayed window at one node, sampled along its ancestral path."""
    if kind is not None and kind != proc.kind:
        raise ValueError(f"process is of kind {proc.kind}, not {kind}")
    tree = proc.tree
    layer, k = tree.locate(node_id)
    L = tree.grid.lag_steps
    if layer >= proc.n_layers:
        raise IndexError(f"{proc.kind} is not defined on layer {layer}")
    samples = []
    for w in range(L + 1):
        src = layer - L + w
        if src < 0:
            samples.append(proc.layers[0][0] if proc.kind == "Y" else np.zeros_like(proc.layers[0][0]))
        else:
            samples.append(proc.layers[src][k // tree.branching ** (layer - src)])
    return SegmentView(
        proc.kind,
        node_id,
        layer * tree.grid.dt,
        window_offsets(L, tree.grid.dt),
        np.array(samples, dtype=float),
        tree.grid.dt,
    )


def norm_segment(view: SegmentView, kind: str, jumps: JumpSpec | None = None) -> float:
    """Squared segment-space norm: ``S`` sup, ``L`` and ``H`` Riemann sums."""
    v = np.asarray(view.values, dtype=float)
    if kind == "S":
        return float(np.max(v**2))
    if kind == "L":
        return float(np.sum(v**2) * view.dt)
    if kind == "H":
        if jumps is None:
            raise MissingMeasureError("H-norm needs the jump intensities")
        v = v.reshape(v.shape[0], -1)
        return float(np.sum(v**2 * jumps.lam[None, :]) * view.dt)
    raise ValueError(f"segment norm kind must be S, L or H, got {kind!r}")


# --------------------------------------------------------------------------
# beta-weighted path norms


def _weights(tree: ScenarioTree, beta: float, n: int) -> np.ndarray:
    return np.exp(beta * np.arange(n) * tree.grid.dt)


def norm_S2_beta(Y: AdaptedProcess, beta: float, last_layer: int | None = None) -> float:
    """E[max_i e^{beta t_i} Y(t_i)^2] with the max taken along each path."""
    tree = Y.tree
    last = Y.n_layers - 1 if last_layer is None else last_layer
    w = _weights(tree, beta, last + 1)
    running = w[0] * Y.layers[0] ** 2
    for i in range(1, last + 1):
        running = np.maximum(np.repeat(running, tree.branching), w[i] * Y.layers[i] ** 2)
    return float(layer_expectation(tree, running, last))


def norm_L2_beta(Q: AdaptedProcess, beta: float, n_steps: int | None = None) -> float:
    """E[sum_i e^{beta t_i} Q(t_i)^2 dt], left-endpoint rule."""
    tree = Q.tree
    n = tree.N if n_steps is None else n_steps
    w = _weights(tree, beta, n)
    acc = 0.0
    for i in range(n):
        acc += w[i] * tree.grid.dt * layer_expectation(tree, Q.layers[i] ** 2, i)
    return acc


def norm_H2_beta(K: AdaptedProcess, beta: float, jumps: JumpSpec | None = None, n_steps: int | None = None) -> float:
    """E[sum_i sum_j e^{beta t_i} K(t_i, zeta_j)^2 lambda_j dt]."""
    tree = K.tree
    jumps = tree.jumps if jumps is None else jumps
    if jumps.m == 0:
        return 0.0
    n = tree.N if n_steps is None else n_steps
    w = _weights(tree, beta, n)
    lam = jumps.lam
    acc = 0.0
    for i in range(n):
        sq = K.layers[i] ** 2
        weighted = sq[:, 0] * lam[0]
        for j in range(1, jumps.m):
            weighted = weighted + sq[:, j] * lam[j]
        acc += w[i] * tree.grid.dt * layer_expectation(tree, weighted, i)
    return acc


def triple_distance(a: SolutionTriple, b: SolutionTriple, beta: float) -> float:
    """Sum of squared S2/L2/H2 beta-norms of the componentwise difference."""
    _same_tree(a.tree, b.tree)
    d = a - b
    return norm_S2_beta(d.Y, beta) + norm_L2_beta(d.Z, beta) + norm_H2_beta(d.K, beta)


def norm_calL(triple: SolutionTriple, beta: float, last_layer: int | None = None) -> float:
    """Infinite-horizon norm restricted to the grid ``[0, t_last]``."""
    last = triple.tree.N if last_layer is None else last_layer
    return (
        norm_S2_beta(triple.Y, beta, last)
        + norm_L2_beta(triple.Z, beta, last)
        + norm_H2_beta(triple.K, beta, n_steps=last)
    )


# --------------------------------------------------------------------------
# shifted and mean-field integrals used by the contraction estimates


def shifted_integral(P: AdaptedProcess, beta: float, shift_steps: int) -> float:
    """E[sum_i e^{beta t_i} |P(t_i - shift_steps*dt)|^2 dt] over ``i < N``.

    Before time zero ``Y`` is frozen at ``P(0)``, ``Z``/``K`` vanish.  For
    ``K`` the squared sample is integrated against the jump intensities.
    """
    tree = P.tree
    w = _weights(tree, beta, tree.N)
    lam = tree.jumps.lam
    acc = 0.0
    for i in range(tree.N):
        src = i - shift_steps
        if src < 0:
            if P.kind != "Y":
                continue
            vals = np.full(tree.layer_size(i), P.layers[0][0])
        else:
            vals = P.layers[src][tree.ancestor_index(i, shift_steps)]
        sq = vals**2
        if P.kind == "K":
            sq = mark_dot(sq, lam)
        acc += w[i] * tree.grid.dt * layer_expectation(tree, sq, i)
    return acc


def meanfield_integral(P: AdaptedProcess, beta: float) -> float:
    """sum_i e^{beta t_i} (E|P(t_i)|)^2 dt, with ``nu`` weights for ``K``."""
    tree = P.tree
    w = _weights(tree, beta, tree.N)
    acc = 0.0
    for i in range(tree.N):
        m = layer_expectation(tree, np.abs(P.layers[i]), i)
        if P.kind == "K":
            m2 = float(mark_dot(np.asarray(m) ** 2, tree.jumps.lam))
        else:
            m2 = m**2
        acc += w[i] * tree.grid.dt * m2
    return acc
