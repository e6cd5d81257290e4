"""Finite-horizon solver: the Picard map on the scenario tree.

One application of the map takes a candidate triple, freezes the driver along
it and solves the resulting plain backward equation exactly on the tree:

1. driver pass: ``phi(node) = f(t_i, segments at node, layer means, pi(t_i))``;
2. backward pass: ``Y(N) = xi``, ``Y(node) = E[Y(children)] + phi(node) dt``;
3. representation pass: ``(Z, K)(node)`` is the conditional least-squares
   projection of ``Y(children)`` on the increments ``(dB, dN_1..dN_m)``.

Iterating from the zero triple until the weighted triple distance drops below
the tolerance gives the fixed point.  :func:`solve_mean_recursion` handles
drivers that only see layer means by iterating the deterministic mean path
instead of the exponentially large tree.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .basis import JumpSpec, ScenarioTree, TimeGrid, conditional_expectation_layer, layer_expectation, mark_dot
from .contraction import c_beta
from .errors import (
    AlignmentError,
    DivergenceError,
    GeneratorEvaluationError,
    NonConvergenceError,
    TreeMismatchError,
)
from .generators import GeneratorSpec, evaluate_block
from .processes import AdaptedProcess, SegmentBlock, SolutionTriple, segment_block, triple_distance, window_offsets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-10
    max_iterations: int = 200
    beta: float = 1.0
    divergence_patience: int = 3

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.divergence_patience < 1:
            raise ValueError("divergence_patience must be >= 1")


@dataclass
class IterationTrace:
    beta: float
    distances: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    converged: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.distances)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "iterations": self.iterations,
            "distances": list(self.distances),
            "ratios": [r if math.isfinite(r) else None for r in self.ratios],
            "converged": self.converged,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class FiniteSolveResult:
    solution: SolutionTriple
    trace: IterationTrace


# --------------------------------------------------------------------------
# terminal values


def terminal_from_levels(tree: ScenarioTree, g: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """``xi = g(B(T), jump counts)`` evaluated on every leaf."""
    N = tree.N
    xi = np.asarray(g(tree.brownian[N], tree.counts[N]), dtype=float)
    return np.broadcast_to(xi, (tree.layer_size(N),)).astype(float, copy=True)


@dataclass(frozen=True)
class TerminalMoments:
    mean: float
    cov_brownian: float
    cov_jumps: np.ndarray
    deterministic: bool


def terminal_moments(grid: TimeGrid, jumps: JumpSpec, g: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> TerminalMoments:
    """E[xi], E[xi B(T)] and E[xi N~_j(T)] for ``xi = g(B(T), counts)``.

    Enumerates the terminal law of the tree (binomial up-count times the
    multinomial jump-outcome counts); cost is polynomial in ``N``.
    """
    N, dt, m = grid.N, grid.dt, jumps.m
    jumps.check_grid(grid)
    lam = jumps.lam
    p_out = np.concatenate(([1.0 - math.fsum(lam * dt)], lam * dt))
    sq = math.sqrt(dt)
    ups = np.arange(N + 1)
    b_levels = (2 * ups - N) * sq
    b_prob = np.array([math.comb(N, u) for u in ups], dtype=float) / 2.0**N

    outcomes = []
    for counts in itertools.product(range(N + 1), repeat=m):
        if sum(counts) > N:
            continue
        full = (N - sum(counts),) + counts
        coef = math.factorial(N)
        for c in full:
            coef //= math.factorial(c)
        pr = float(coef)
        for c, p in zip(full, p_out):
            pr *= p**c if c else 1.0
        outcomes.append((np.array(counts, dtype=float), pr))

    mean = cov_b = 0.0
    cov_k = np.zeros(m)
    values = []
    for counts, pj in outcomes:
        xi = np.asarray(g(b_levels, np.tile(counts, (N + 1, 1))), dtype=float)
        xi = np.broadcast_to(xi, (N + 1,))
        w = b_prob * pj
        for u in range(N + 1):
            mean += w[u] * xi[u]
            cov_b += w[u] * xi[u] * b_levels[u]
            if m:
                cov_k += w[u] * xi[u] * (counts - lam * grid.T)
        values.append(xi[(b_prob * pj) > 0])
    allv = np.concatenate(values)
    return TerminalMoments(float(mean), float(cov_b), cov_k, bool(np.all(allv == allv[0])))


# --------------------------------------------------------------------------
# one-step representation


@dataclass(frozen=True)
class Projection:
    z: float
    k: np.ndarray
    residual: float


def _jump_solve(b: np.ndarray, jumps: JumpSpec, dt: float) -> np.ndarray:
    """Solve ``G k = b`` for the jump Gram matrix ``G = diag(l dt) - (l dt)(l dt)^T``.

    Explicit inverse (Sherman-Morrison): ``G^{-1} = diag(1/(l dt)) + 1 1^T / (1 - sum l dt)``.
    Marks with zero intensity carry no increment and get ``k = 0``.
    """
    lam = jumps.lam
    live = lam > 0
    k = np.zeros_like(b)
    if not live.any():
        return k
    ld = lam[live] * dt
    bl = b[..., live]
    denom = 1.0 - math.fsum(ld)
    total = bl[..., 0]
    for j in range(1, bl.shape[-1]):
        total = total + bl[..., j]
    k[..., live] = bl / ld + (total / denom)[..., None]
    return k


def project_layer(tree: ScenarioTree, next_values: np.ndarray, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection for every node of ``layer``: ``(z, k, residual)``."""
    b = tree.branching
    n = tree.layer_size(layer)
    v = np.asarray(next_values, dtype=float).reshape(n, b)
    p, dB, dN = tree.child_prob, tree.child_dB, tree.child_dN
    mean = conditional_expectation_layer(tree, next_values, layer)
    centered = v - mean[:, None]
    dt = tree.grid.dt
    m = tree.m
    if tree.collapsed:
        return np.zeros(n), np.zeros((n, m)), np.abs(centered[:, 0])
    cov_b = centered[:, 0] * (p[0] * dB[0])
    for c in range(1, b):
        cov_b = cov_b + centered[:, c] * (p[c] * dB[c])
    z = cov_b / dt
    cov_n = np.zeros((n, m))
    for c in range(b):
        cov_n = cov_n + centered[:, c, None] * (p[c] * dN[c])[None, :]
    k = _jump_solve(cov_n, tree.jumps, dt)
    fitted = z[:, None] * dB[None, :] + mark_dot(k[:, None, :], dN.T)
    res = centered - fitted
    res2 = res[:, 0] ** 2 * p[0]
    for c in range(1, b):
        res2 = res2 + res[:, c] ** 2 * p[c]
    return z, k, np.sqrt(res2)


def projection_residuals(tree: ScenarioTree, next_values: np.ndarray, layer: int) -> np.ndarray:
    """Per-child residuals ``v - E[v] - z dB - k.dN``, shape (n, b)."""
    z, k, _ = project_layer(tree, next_values, layer)
    n, b = tree.layer_size(layer), tree.branching
    v = np.asarray(next_values, dtype=float).reshape(n, b)
    mean = conditional_expectation_layer(tree, next_values, layer)
    return v - mean[:, None] - z[:, None] * tree.child_dB[None, :] - mark_dot(k[:, None, :], tree.child_dN.T)


def martingale_projection(tree: ScenarioTree, node_id: int, next_values) -> Projection:
    """Representation of the centered one-step value at a single node."""
    layer, idx = tree.locate(node_id)
    if layer >= tree.N:
        raise IndexError(f"node {node_id} is a leaf")
    full = _full_layer(tree, next_values, layer + 1, idx)
    z, k, res = project_layer(tree, full, layer)
    return Projection(float(z[idx]), k[idx].copy(), float(res[idx]))


def _full_layer(tree: ScenarioTree, next_values, layer: int, parent_idx: int) -> np.ndarray:
    b = tree.branching
    n = tree.layer_size(layer)
    if isinstance(next_values, dict):
        start = tree.node_id(layer, parent_idx * b)
        arr = np.zeros(n)
        for c in range(b):
            if start + c not in next_values:
                from .errors import IncompleteLayerError

                raise IncompleteLayerError(f"no value for child node {start + c}")
            arr[parent_idx * b + c] = float(next_values[start + c])
        return arr
    arr = np.asarray(next_values, dtype=float)
    if arr.shape == (b,):
        full = np.zeros(n)
        full[parent_idx * b : (parent_idx + 1) * b] = arr
        return full
    return arr


# --------------------------------------------------------------------------
# the Picard map


def check_delay(tree: ScenarioTree, gen: GeneratorSpec) -> None:
    """The driver's delay descriptor must fit in the grid's window."""
    grid = tree.grid
    if gen.reach > grid.delta + 1e-9 * grid.dt:
        raise AlignmentError(f"{gen.name} looks back {gen.reach!r} but the grid window is delta={grid.delta!r}")
    offsets = window_offsets(grid.lag_steps, grid.dt)
    gen.projection_weights(offsets, grid.dt)


def driver_layers(tree: ScenarioTree, gen: GeneratorSpec, triple: SolutionTriple) -> list[np.ndarray]:
    """``phi_i`` on every node of layers ``0..N-1`` along ``triple``."""
    grid = tree.grid
    out = []
    for i in range(tree.N):
        t = i * grid.dt
        segs = [segment_block(p, i) for p in (triple.Y, triple.Z, triple.K)]
        mY = layer_expectation(tree, triple.Y.layers[i], i)
        mZ = layer_expectation(tree, triple.Z.layers[i], i)
        mK = layer_expectation(tree, triple.K.layers[i], i) if tree.m else np.zeros(0)
        try:
            out.append(evaluate_block(gen, t, *segs, mY, mZ, mK))
        except GeneratorEvaluationError as exc:
            raise GeneratorEvaluationError(f"layer {i} (t={t!r}): {exc}") from exc
    return out


def backward_pass(tree: ScenarioTree, xi: np.ndarray, phi: list[np.ndarray]) -> SolutionTriple:
    """Solve ``Y_i = E_i[Y_{i+1}] + phi_i dt`` with ``Y_N = xi`` and project."""
    dt = tree.grid.dt
    N = tree.N
    Y = [None] * (N + 1)
    Z = [None] * N
    K = [None] * N
    Y[N] = np.array(xi, dtype=float, copy=True)
    for i in range(N - 1, -1, -1):
        Y[i] = conditional_expectation_layer(tree, Y[i + 1], i) + phi[i] * dt
        z, k, _ = project_layer(tree, Y[i + 1], i)
        Z[i], K[i] = z, k
    return SolutionTriple(
        tree,
        AdaptedProcess(tree, tuple(Y), "Y"),
        AdaptedProcess(tree, tuple(Z), "Z"),
        AdaptedProcess(tree, tuple(K), "K"),
    )


def _check_xi(tree: ScenarioTree, xi) -> np.ndarray:
    arr = np.asarray(xi, dtype=float)
    arr = np.broadcast_to(arr, (tree.layer_size(tree.N),)) if arr.ndim == 0 else arr
    if arr.shape != (tree.layer_size(tree.N),):
        raise ValueError(f"xi needs {tree.layer_size(tree.N)} leaf values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("xi must be finite")
    return np.array(arr, dtype=float)


def apply_upsilon(tree: ScenarioTree, gen: GeneratorSpec, xi, triple: SolutionTriple) -> SolutionTriple:
    if triple.tree is not tree and triple.tree.key != tree.key:
        raise TreeMismatchError("input triple lives on another tree")
    phi = driver_layers(tree, gen, triple)
    return backward_pass(tree, _check_xi(tree, xi), phi)


def solve_finite(
    tree: ScenarioTree,
    gen: GeneratorSpec,
    xi,
    config: PicardConfig = PicardConfig(),
    start: SolutionTriple | None = None,
) -> FiniteSolveResult:
    """Iterate the Picard map from ``start`` (zero triple by default)."""
    check_delay(tree, gen)
    xi = _check_xi(tree, xi)
    current = SolutionTriple.zeros(tree) if start is None else start
    trace = IterationTrace(config.beta)
    rising = 0
    for _ in range(config.max_iterations):
        nxt = apply_upsilon(tree, gen, xi, current)
        d = triple_distance(nxt, current, config.beta)
        if not math.isfinite(d):
            raise DivergenceError(f"non-finite Picard distance after {trace.iterations + 1} iterations", trace)
        if trace.distances:
            prev = trace.distances[-1]
            trace.ratios.append(d / prev if prev > 0 else (0.0 if d == 0 else math.inf))
            rising = rising + 1 if d > prev else 0
        trace.distances.append(d)
        current = nxt
        log.debug("picard iteration %d: distance %.3e", trace.iterations, d)
        if d <= config.tol:
            trace.converged = True
            return FiniteSolveResult(current, trace)
        if rising >= config.divergence_patience:
            raise DivergenceError(
                f"Picard distances increased {rising} times in a row (last {d:.3e})", trace
            )
    raise NonConvergenceError(
        f"no convergence within {config.max_iterations} iterations (last distance {trace.distances[-1]:.3e})",
        trace,
    )


# --------------------------------------------------------------------------
# verification and stability


@dataclass(frozen=True)
class VerificationReport:
    max_step_residual: float
    worst_node: int
    max_projection_residual: float
    max_orthogonality: float
    terminal_exact: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_step_residual": self.max_step_residual,
            "worst_node": self.worst_node,
            "max_projection_residual": self.max_projection_residual,
            "max_orthogonality": self.max_orthogonality,
            "terminal_exact": self.terminal_exact,
            "passed": self.passed,
        }


def verify_solution(tree: ScenarioTree, gen: GeneratorSpec, xi, sol: SolutionTriple, tol: float) -> VerificationReport:
    """Check the one-step identity with the driver evaluated on ``sol`` itself.

    Also reports the largest projection residual and the largest conditional
    correlation of residuals with the increments (which should be zero).
    """
    xi = _check_xi(tree, xi)
    phi = driver_layers(tree, gen, sol)
    dt = tree.grid.dt
    worst, worst_node, proj, ortho = 0.0, 0, 0.0, 0.0
    for i in range(tree.N):
        nxt = sol.Y.layers[i + 1]
        step = np.abs(sol.Y.layers[i] - conditional_expectation_layer(tree, nxt, i) - phi[i] * dt)
        k = int(np.argmax(step))
        if step[k] > worst:
            worst, worst_node = float(step[k]), tree.node_id(i, k)
        _, _, res = project_layer(tree, nxt, i)
        proj = max(proj, float(np.max(res)))
        ortho = max(ortho, _orthogonality(tree, nxt, i))
    terminal = bool(np.array_equal(sol.Y.layers[tree.N], xi))
    return VerificationReport(worst, worst_node, proj, ortho, terminal, terminal and worst <= tol and proj <= tol)


def _orthogonality(tree: ScenarioTree, next_values: np.ndarray, layer: int) -> float:
    if tree.collapsed:
        return 0.0
    res = projection_residuals(tree, next_values, layer)
    p = tree.child_prob
    incs = [tree.child_dB] + [tree.child_dN[:, j] for j in range(tree.m)]
    worst = 0.0
    for inc in incs:
        acc = res[:, 0] * (p[0] * inc[0])
        for c in range(1, tree.branching):
            acc = acc + res[:, c] * (p[c] * inc[c])
        worst = max(worst, float(np.max(np.abs(acc))))
    return worst


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    holds: bool


def stability_check(
    tree: ScenarioTree,
    a: tuple[GeneratorSpec, np.ndarray, SolutionTriple],
    b: tuple[GeneratorSpec, np.ndarray, SolutionTriple],
    beta: float,
) -> StabilityReport:
    """Compare the triple distance with ``C_beta (E|dxi|^2 + E sum e^{beta t}|df|^2 dt)``."""
    gen_a, xi_a, sol_a = a
    gen_b, xi_b, sol_b = b
    for sol in (sol_a, sol_b):
        if sol.tree is not tree and sol.tree.key != tree.key:
            raise TreeMismatchError("both instances must be solved on the same tree")
    lhs = triple_distance(sol_a, sol_b, beta)
    N, dt = tree.N, tree.grid.dt
    dxi = _check_xi(tree, xi_a) - _check_xi(tree, xi_b)
    term = layer_expectation(tree, dxi**2, N)
    fa = driver_layers(tree, gen_a, sol_a)
    fb = driver_layers(tree, gen_b, sol_b)
    for i in range(N):
        term += math.exp(beta * i * dt) * dt * layer_expectation(tree, (fa[i] - fb[i]) ** 2, i)
    rhs = c_beta(beta, tree.grid.T) * term
    return StabilityReport(lhs, rhs, lhs <= rhs * (1 + 1e-9))


# --------------------------------------------------------------------------
# deterministic mean recursion


@dataclass(frozen=True)
class MeanRecursionResult:
    times: np.ndarray
    mean_y: np.ndarray
    mean_z: np.ndarray
    mean_k: np.ndarray
    trace: IterationTrace
    deterministic: bool

    @property
    def y0(self) -> float:
        return float(self.mean_y[0])


def solve_mean_recursion(
    grid: TimeGrid,
    jumps: JumpSpec,
    gen: GeneratorSpec,
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    config: PicardConfig = PicardConfig(),
) -> MeanRecursionResult:
    """Picard iteration on the layer means, without building the tree.

    Valid when the driver sees the noise only through layer means
    (``gen.mean_only``) or when ``xi = g(B(T), counts)`` is deterministic
    (then the whole solution is deterministic).  In both cases the driver is
    the same at every node of a layer and

        E[Y(t_i)] = E[xi] + sum_{j >= i} phi_j dt,
        E[Z(t_i)] = E[xi B(T)] / T,   E[K(t_i)] = G^{-1} E[xi N~(T)] / N,

    the last two by exchangeability of the increments.  Distances after the
    first iteration equal the tree distances exactly; the first one is the
    mean-path lower bound.
    """
    if not gen.noise_free:
        raise ValueError(f"{gen.name} depends on the noise directly; mean recursion does not apply")
    moments = terminal_moments(grid, jumps, g)
    if not (gen.mean_only or moments.deterministic):
        raise ValueError(f"{gen.name} reads path values and xi is random; use the full tree")
    N, dt, m = grid.N, grid.dt, jumps.m
    L = grid.lag_steps
    if gen.reach > grid.delta + 1e-9 * dt:
        raise AlignmentError(f"{gen.name} looks back {gen.reach!r} but the grid window is delta={grid.delta!r}")
    offsets = window_offsets(L, dt)
    mz = moments.cov_brownian / grid.T if not moments.deterministic else 0.0
    mk = _jump_solve(moments.cov_jumps / N, jumps, dt) if (m and not moments.deterministic) else np.zeros(m)
    mean_z = np.full(N, mz)
    mean_k = np.tile(mk, (N, 1))
    weights = np.exp(config.beta * np.arange(N + 1) * dt)

    def window(path: np.ndarray, i: int, frozen: bool) -> np.ndarray:
        out = np.empty((1, L + 1) + path.shape[1:])
        for w in range(L + 1):
            src = i - L + w
            out[0, w] = (path[0] if frozen else 0.0) if src < 0 else path[src]
        return out

    my = np.zeros(N + 1)
    cur_z = np.zeros(N)
    cur_k = np.zeros((N, m))
    trace = IterationTrace(config.beta)
    rising = 0
    for it in range(config.max_iterations):
        new = np.empty(N + 1)
        new[N] = moments.mean
        phi = np.empty(N)
        for i in range(N):
            segs = [
                SegmentBlock("Y", offsets, window(my, i, True), dt),
                SegmentBlock("Z", offsets, window(cur_z, i, False), dt),
                SegmentBlock("K", offsets, window(cur_k, i, False), dt),
            ]
            phi[i] = evaluate_block(gen, i * dt, *segs, float(my[i]), float(cur_z[i]), cur_k[i])[0]
        for i in range(N - 1, -1, -1):
            new[i] = new[i + 1] + phi[i] * dt
        d = float(np.max(weights * (new - my) ** 2))
        if it == 0:
            d += float(np.sum(weights[:N] * dt * (mean_z**2 + mark_dot(mean_k**2, jumps.lam))))
        my, cur_z, cur_k = new, mean_z, mean_k
        if trace.distances:
            prev = trace.distances[-1]
            trace.ratios.append(d / prev if prev > 0 else (0.0 if d == 0 else math.inf))
            rising = rising + 1 if d > prev else 0
        trace.distances.append(d)
        if d <= config.tol:
            trace.converged = True
            return MeanRecursionResult(grid.times, my, mean_z, mean_k, trace, moments.deterministic)
        if rising >= config.divergence_patience:
            raise DivergenceError(f"mean recursion distances increased {rising} times in a row", trace)
    raise NonConvergenceError(f"mean recursion did not converge in {config.max_iterations} iterations", trace)
