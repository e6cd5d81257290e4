"""Randomized property suites shared by the ``verify`` command and the tests.

Each suite draws its own instances from a seeded generator and returns a
:class:`SuiteResult` counting violations of one property.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import contraction as ct
from .basis import JumpSpec, ScenarioTree, build_grid, build_tree, conditional_expectation_layer, layer_expectation
from .generators import builtin, evaluate_block, linear, probe_lipschitz
from .infinite import LadderConfig, solve_infinite
from .picard import PicardConfig, project_layer, projection_residuals, solve_finite, terminal_from_levels
from .processes import (
    AdaptedProcess,
    SegmentBlock,
    SolutionTriple,
    meanfield_integral,
    norm_H2_beta,
    norm_L2_beta,
    norm_S2_beta,
    shifted_integral,
    triple_distance,
    window_offsets,
)

MOMENT_TOL = 1e-12
INEQ_TOL = 1e-9


@dataclass(frozen=True)
class SuiteResult:
    name: str
    trials: int
    violations: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "worst": self.worst if math.isfinite(self.worst) else None,
            "passed": self.passed,
        }


class _Tally:
    def __init__(self, name: str) -> None:
        self.name = name
        self.trials = 0
        self.violations = 0
        self.worst = 0.0

    def gap(self, value: float, tol: float) -> None:
        """Record a quantity that must stay ``<= tol``."""
        self.trials += 1
        self.worst = max(self.worst, value)
        if not value <= tol:
            self.violations += 1

    def ineq(self, lhs: float, rhs: float, tol: float = INEQ_TOL) -> None:
        """Record ``lhs <= rhs`` up to a relative tolerance."""
        self.gap(lhs - rhs * (1 + tol) - tol, 0.0)

    def result(self) -> SuiteResult:
        return SuiteResult(self.name, self.trials, self.violations, self.worst)


# --------------------------------------------------------------------------
# random instances


def random_jumps(rng: np.random.Generator, dt: float, max_marks: int = 2) -> JumpSpec:
    m = int(rng.integers(0, max_marks + 1))
    if m == 0:
        return JumpSpec()
    lam = rng.uniform(0.05, 0.9 / (m * dt), m)
    return JumpSpec(tuple(float(j + 1) for j in range(m)), tuple(float(v) for v in lam))


def random_tree(rng: np.random.Generator, max_N: int = 4, lag: bool = True) -> ScenarioTree:
    N = int(rng.integers(1, max_N + 1))
    T = float(rng.choice([0.5, 1.0, 2.0]))
    dt = T / N
    L = int(rng.integers(0, N + 1)) if lag else 0
    grid = build_grid(T, N, delta=L * dt)
    return build_tree(grid, random_jumps(rng, dt))


def random_process(rng: np.random.Generator, tree: ScenarioTree, kind: str) -> AdaptedProcess:
    n_layers = tree.N + 1 if kind == "Y" else tree.N
    tail = (tree.m,) if kind == "K" else ()
    return AdaptedProcess(
        tree, tuple(rng.normal(0.0, 2.0, (tree.layer_size(i),) + tail) for i in range(n_layers)), kind
    )


def random_triple(rng: np.random.Generator, tree: ScenarioTree) -> SolutionTriple:
    return SolutionTriple(tree, *(random_process(rng, tree, k) for k in ("Y", "Z", "K")))


def random_linear(rng: np.random.Generator, tree: ScenarioTree, budget: float):
    """Random affine driver with squared Lipschitz constant ``budget``."""
    L = tree.grid.lag_steps
    s = -float(rng.integers(0, L + 1)) * tree.grid.dt
    raw = rng.normal(size=6)
    lam_tot = tree.jumps.total_intensity
    scale = [1.0, 1.0, lam_tot, 1.0, 1.0, lam_tot]
    norm = sum(r * r * c for r, c in zip(raw, scale))
    coef = raw * math.sqrt(budget / norm) if norm > 0 else raw * 0
    return (
        linear(*coef, b=float(rng.normal()), s=s, intensities=tuple(tree.jumps.intensities)),
        s,
    )


def random_terminal(rng: np.random.Generator, tree: ScenarioTree) -> np.ndarray:
    c0, cb = rng.normal(size=2)
    cj = rng.normal(size=tree.m)
    q = rng.normal()
    return terminal_from_levels(tree, lambda B, n: c0 + cb * B + q * np.sin(B) + (n @ cj if tree.m else 0.0))


# --------------------------------------------------------------------------
# scenario tree


def suite_probability(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("probability conservation")
    for _ in range(trials):
        tree = random_tree(rng)
        for i in range(tree.N + 1):
            t.gap(abs(math.fsum(tree.cum_prob[i]) - 1.0), MOMENT_TOL)
    return t.result()


def suite_tower(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("tower property")
    for _ in range(trials):
        tree = random_tree(rng)
        i = int(rng.integers(0, tree.N))
        v = rng.normal(size=tree.layer_size(i + 1))
        lhs = layer_expectation(tree, v, i + 1)
        rhs = layer_expectation(tree, conditional_expectation_layer(tree, v, i), i)
        t.gap(abs(lhs - rhs), MOMENT_TOL)
    return t.result()


def suite_increment_moments(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("increment moments")
    for _ in range(trials):
        tree = random_tree(rng)
        dt = tree.grid.dt
        p, dB, dN = tree.child_prob, tree.child_dB, tree.child_dN
        t.gap(abs(math.fsum(p * dB)), MOMENT_TOL)
        t.gap(abs(math.fsum(p * dB * dB) - dt), MOMENT_TOL)
        for j, lam in enumerate(tree.jumps.lam):
            t.gap(abs(math.fsum(p * dN[:, j])), MOMENT_TOL)
            t.gap(abs(math.fsum(p * dN[:, j] ** 2) - lam * dt * (1 - lam * dt)), MOMENT_TOL)
            t.gap(abs(math.fsum(p * dB * dN[:, j])), MOMENT_TOL)
    return t.result()


def suite_tree_determinism(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("tree determinism")
    for _ in range(max(1, trials // 10)):
        a = random_tree(rng)
        b = build_tree(a.grid, a.jumps)
        same = all(
            np.array_equal(x, y)
            for xs, ys in ((a.cum_prob, b.cum_prob), (a.brownian, b.brownian), (a.counts, b.counts))
            for x, y in zip(xs, ys)
        )
        t.gap(0.0 if same else 1.0, 0.0)
    return t.result()


# --------------------------------------------------------------------------
# processes and norms


def suite_norm_equivalence(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("norm equivalence")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.01, 3.0))
        growth = math.exp(beta * tree.grid.T)
        tr = random_triple(rng, tree)
        for norm, proc in ((norm_S2_beta, tr.Y), (norm_L2_beta, tr.Z), (norm_H2_beta, tr.K)):
            n0, nb = norm(proc, 0.0), norm(proc, beta)
            t.ineq(n0, nb)
            t.ineq(nb, growth * n0)
    return t.result()


def suite_norm_axioms(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("norm positivity and homogeneity")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.0, 2.0))
        c = float(rng.normal())
        tr = random_triple(rng, tree)
        zero = SolutionTriple.zeros(tree)
        t.gap(abs(triple_distance(zero, zero, beta)), 0.0)
        for norm, proc in ((norm_S2_beta, tr.Y), (norm_L2_beta, tr.Z), (norm_H2_beta, tr.K)):
            n = norm(proc, beta)
            t.gap(-n, 0.0)
            t.gap(abs(norm(proc.scaled(c), beta) - c * c * n), INEQ_TOL * max(1.0, c * c * n))
    return t.result()


def _random_shift(rng: np.random.Generator, tree: ScenarioTree) -> int:
    return int(rng.integers(0, tree.N + 1))


def suite_shift_sup(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("shift inequality, S2")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.01, 3.0))
        k = _random_shift(rng, tree)
        Y = random_process(rng, tree, "Y")
        lhs = shifted_integral(Y, beta, k)
        rhs = tree.grid.T * math.exp(beta * k * tree.grid.dt) * norm_S2_beta(Y, beta)
        t.ineq(lhs, rhs)
    return t.result()


def suite_shift_integral(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("shift inequality, L2 and H2")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.01, 3.0))
        k = _random_shift(rng, tree)
        factor = math.exp(beta * k * tree.grid.dt)
        Z = random_process(rng, tree, "Z")
        K = random_process(rng, tree, "K")
        t.ineq(shifted_integral(Z, beta, k), factor * norm_L2_beta(Z, beta))
        t.ineq(shifted_integral(K, beta, k), factor * norm_H2_beta(K, beta))
    return t.result()


def suite_meanfield(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("mean-field inequalities")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.01, 3.0))
        tr = random_triple(rng, tree)
        t.ineq(meanfield_integral(tr.Y, beta), tree.grid.T * norm_S2_beta(tr.Y, beta))
        t.ineq(meanfield_integral(tr.Z, beta), norm_L2_beta(tr.Z, beta))
        t.ineq(meanfield_integral(tr.K, beta), norm_H2_beta(tr.K, beta))
    return t.result()


def suite_special_shift(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("full-window shift with e^(beta delta)")
    for _ in range(trials):
        tree = random_tree(rng)
        beta = float(rng.uniform(0.01, 3.0))
        L = tree.grid.lag_steps
        factor = math.exp(beta * tree.grid.delta)
        tr = random_triple(rng, tree)
        t.ineq(shifted_integral(tr.Y, beta, L), tree.grid.T * factor * norm_S2_beta(tr.Y, beta))
        t.ineq(shifted_integral(tr.Z, beta, L), factor * norm_L2_beta(tr.Z, beta))
        t.ineq(shifted_integral(tr.K, beta, L), factor * norm_H2_beta(tr.K, beta))
    return t.result()


# --------------------------------------------------------------------------
# generators and the analyzer


def _builtin_instances() -> list:
    return [
        builtin("zero"),
        builtin("affine_meanfield", a=0.5, b=0.2),
        builtin("point_delay", a=0.25, s=-0.5),
        builtin("two_point", a1=0.3, a2=0.2, delta=0.5),
        builtin("recursive_utility", c=0.3, pi_path=((0.0, 0.5), (1.0, 2.0))),
        builtin("forced_decay", a=1.0, kappa=1.0),
        builtin("linear", y=0.1, z=0.2, k=0.3, mean_y=0.1, mean_z=0.1, mean_k=0.2, b=1.0, s=-0.5,
                intensities=[0.4, 0.2]),
    ]


def suite_lipschitz(rng: np.random.Generator, trials: int, probe_trials: int = 10_000) -> SuiteResult:
    t = _Tally("declared Lipschitz constants")
    seed = int(rng.integers(0, 2**31))
    for gen in _builtin_instances():
        rep = probe_lipschitz(gen, trials=probe_trials, scale=10.0, seed=seed)
        t.gap(rep.max_ratio - 1.0, INEQ_TOL)
    return t.result()


def suite_evaluate_determinism(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("generator determinism")
    for gen in _builtin_instances():
        dt = 0.25
        L = int(round(gen.reach / dt))
        offsets = window_offsets(L, dt)
        m = 2
        vals = [rng.normal(size=(3, L + 1)), rng.normal(size=(3, L + 1)), rng.normal(size=(3, L + 1, m))]
        blocks = [SegmentBlock(k, offsets, v, dt) for k, v in zip("YZK", vals)]
        mk = rng.normal(size=m)
        a = evaluate_block(gen, 0.3, *blocks, 0.1, 0.2, mk)
        b = evaluate_block(gen, 0.3, *blocks, 0.1, 0.2, mk)
        t.gap(0.0 if np.array_equal(a, b) else 1.0, 0.0)
    return t.result()


def suite_analyzer(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("analyzer monotonicity and search")
    for _ in range(max(1, trials // 5)):
        beta = float(rng.uniform(0.01, 5.0))
        T = float(rng.uniform(0.1, 3.0))
        C = float(rng.uniform(0.0, 2.0))
        s = -float(rng.uniform(0.0, 1.0))
        t.gap(ct.c_beta(beta, T) - ct.c_beta(beta, T * 1.1), 0.0)
        t.gap(ct.finite_condition(beta, C, T, s) - ct.finite_condition(beta, C * 1.1, T, s), 0.0)
        t.gap(ct.finite_condition(beta, C, T, s) - ct.finite_condition(beta, C, T * 1.1, s), 0.0)
        t.gap(abs(ct.finite_condition(beta, C, T, 0.0) - 2 * ct.c_beta(beta, T) * C * max(1.0, T)), 0.0)
        C1 = float(rng.uniform(0.0, 0.3))
        r = -float(rng.uniform(0.0, 1.0))
        rep = ct.search_beta("infinite", C1, r=r, budget=100)
        if rep.feasible:
            chk = ct.infinite_condition(rep.beta, rep.epsilon, C1, r)
            t.gap(0.0 if chk.ok and chk.slack_beta > 0 and chk.slack_eps > 0 else 1.0, 0.0)
        Cf = float(rng.uniform(0.001, 0.05))
        a = ct.search_beta("finite_point", Cf, 1.0, s=s, budget=100)
        b = ct.search_beta("finite_point", Cf, 1.0, s=s, budget=100)
        t.gap(0.0 if (a.beta, a.value) == (b.beta, b.value) else 1.0, 0.0)
        t.gap(a.value - min(v for _, v in a.trace), 1e-6)
    return t.result()


# --------------------------------------------------------------------------
# finite solver


def suite_one_iteration(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("one-iteration exactness")
    for _ in range(max(1, trials // 5)):
        tree = random_tree(rng, max_N=3)
        gen = linear(b=float(rng.normal()), intensities=tuple(tree.jumps.intensities))
        res = solve_finite(tree, gen, random_terminal(rng, tree), PicardConfig(tol=1e-12))
        t.gap(res.trace.distances[1] if len(res.trace.distances) > 1 else 0.0, 1e-12)
        t.gap(float(res.trace.iterations > 2), 0.0)
    return t.result()


def feasible_instance(rng: np.random.Generator, max_N: int = 4, target: float = 0.9):
    """Random affine instance whose finite condition is below ``target``."""
    tree = random_tree(rng, max_N=max_N)
    T = tree.grid.T
    s_probe = -float(rng.integers(0, tree.grid.lag_steps + 1)) * tree.grid.dt
    best = ct.search_beta("finite_point", 1.0, T, s=s_probe, budget=60)
    budget = target * float(rng.uniform(0.2, 1.0)) / best.value
    gen, s = random_linear(rng, tree, budget)
    beta = best.beta
    factor = ct.finite_condition(beta, gen.lipschitz, T, s)
    return tree, gen, beta, factor


def suite_contraction(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("observed contraction ratios")
    for _ in range(max(1, trials // 5)):
        tree, gen, beta, factor = feasible_instance(rng)
        res = solve_finite(tree, gen, random_terminal(rng, tree), PicardConfig(tol=1e-10, beta=beta))
        for rho in res.trace.ratios:
            t.gap(rho - factor, 1e-6)
    return t.result()


def suite_uniqueness(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("uniqueness from perturbed start")
    tol = 1e-12
    for _ in range(max(1, trials // 5)):
        tree, gen, beta, _ = feasible_instance(rng)
        xi = random_terminal(rng, tree)
        cfg = PicardConfig(tol=tol, beta=beta)
        a = solve_finite(tree, gen, xi, cfg).solution
        b = solve_finite(tree, gen, xi, cfg, start=random_triple(rng, tree)).solution
        t.gap(triple_distance(a, b, beta), 4 * tol)
    return t.result()


def suite_orthogonality(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("projection orthogonality and terminal value")
    for _ in range(max(1, trials // 5)):
        tree, gen, beta, _ = feasible_instance(rng)
        xi = random_terminal(rng, tree)
        sol = solve_finite(tree, gen, xi, PicardConfig(tol=1e-10, beta=beta)).solution
        t.gap(0.0 if np.array_equal(sol.Y.layers[tree.N], xi) else 1.0, 0.0)
        p = tree.child_prob
        for i in range(tree.N):
            res = projection_residuals(tree, sol.Y.layers[i + 1], i)
            scale = max(1.0, float(np.max(np.abs(sol.Y.layers[i + 1]))))
            for inc in [tree.child_dB] + [tree.child_dN[:, j] for j in range(tree.m)]:
                acc = res[:, 0] * (p[0] * inc[0])
                for c in range(1, tree.branching):
                    acc = acc + res[:, c] * (p[c] * inc[c])
                t.gap(float(np.max(np.abs(acc))) / scale, MOMENT_TOL)
    return t.result()


def suite_jump_representation(rng: np.random.Generator, trials: int) -> SuiteResult:
    """``xi = g(jump count)`` with one mark is spanned exactly by the increments."""
    t = _Tally("jump representation")
    for _ in range(max(1, trials // 10)):
        N = int(rng.integers(1, 5))
        tree = build_tree(build_grid(1.0, N), JumpSpec((1.0,), (0.4,)))
        coef = rng.normal(size=3)
        xi = terminal_from_levels(tree, lambda B, n: coef[0] + coef[1] * n[:, 0] + coef[2] * n[:, 0] ** 2)
        sol = solve_finite(tree, builtin("zero"), xi, PicardConfig(tol=1e-12)).solution
        for i in range(N):
            _, k, res = project_layer(tree, sol.Y.layers[i + 1], i)
            t.gap(float(np.max(res)), 1e-12)
            t.gap(float(np.max(np.abs(k - brute_force_k(tree, sol.Y.layers[i + 1], i)))), 1e-12)
    return t.result()


def brute_force_k(tree: ScenarioTree, next_values: np.ndarray, layer: int) -> np.ndarray:
    """``K`` by a dense least-squares solve of the one-step covariance equations."""
    n, b, m = tree.layer_size(layer), tree.branching, tree.m
    v = np.asarray(next_values, dtype=float).reshape(n, b)
    p = tree.child_prob
    X = np.column_stack([tree.child_dB, tree.child_dN])
    G = (X * p[:, None]).T @ X
    out = np.zeros((n, m))
    for node in range(n):
        c = v[node] - p @ v[node]
        x = np.linalg.solve(G, (X * p[:, None]).T @ c)
        out[node] = x[1:]
    return out


# --------------------------------------------------------------------------
# infinite horizon


def suite_ladder(rng: np.random.Generator, trials: int) -> SuiteResult:
    t = _Tally("ladder monotonicity, tail bound and zero extension")
    for _ in range(max(1, trials // 50)):
        kappa = float(rng.uniform(0.8, 1.5))
        gen = builtin("forced_decay", a=float(rng.uniform(0.5, 1.5)), kappa=kappa)
        beta, eps = 1.0, 0.02
        ladder = LadderConfig((1.0, 2.0, 4.0), 1 / 8, beta, eps, 1e-30)
        try:
            solve_infinite(gen, JumpSpec(), ladder)
            t.gap(1.0, 0.0)
            continue
        except Exception as exc:  # ladder is meant to be exhausted
            res = exc.trace
        d = res.deltas
        t.gap(float(not all(b < a for a, b in zip(d, d[1:]))), 0.0)
        for delta, tail in zip(d, res.tail_bounds):
            t.ineq(delta, tail)
        sol = res.rungs[0]
        beyond = sol.value_at("Y", sol.horizon + sol.dt)
        t.gap(abs(beyond), 0.0)
        long, short = res.rungs[-1], res.rungs[-2]
        keep = int(round(0.75 * short.horizon / short.dt))
        gap = max(abs(long.triple.Y.layers[i][0] - short.triple.Y.layers[i][0]) for i in range(keep + 1))
        t.gap(gap * gap * math.exp(beta * keep * short.dt) - d[-1], INEQ_TOL)
    return t.result()


SUITES: dict[str, Callable[[np.random.Generator, int], SuiteResult]] = {
    "probability": suite_probability,
    "tower": suite_tower,
    "increment_moments": suite_increment_moments,
    "tree_determinism": suite_tree_determinism,
    "norm_equivalence": suite_norm_equivalence,
    "norm_axioms": suite_norm_axioms,
    "shift_sup": suite_shift_sup,
    "shift_integral": suite_shift_integral,
    "meanfield": suite_meanfield,
    "special_shift": suite_special_shift,
    "lipschitz": suite_lipschitz,
    "evaluate_determinism": suite_evaluate_determinism,
    "analyzer": suite_analyzer,
    "one_iteration": suite_one_iteration,
    "contraction": suite_contraction,
    "uniqueness": suite_uniqueness,
    "orthogonality": suite_orthogonality,
    "jump_representation": suite_jump_representation,
    "ladder": suite_ladder,
}


def run_suites(seed: int = 0, trials: int = 100, names: list[str] | None = None) -> list[SuiteResult]:
    out = []
    for name in names or list(SUITES):
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        out.append(SUITES[name](rng, trials))
    return out
