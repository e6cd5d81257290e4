"""Infinite-horizon solutions through a ladder of truncated problems.

Each rung solves the finite problem on ``[0, n]`` with zero terminal value and
is extended by zero beyond ``n``.  Consecutive rungs are compared in the
weighted norm restricted to the shorter interval; the ladder stops at the
first difference below the tolerance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .basis import JumpSpec, ScenarioTree, build_grid, build_tree, layer_expectation
from .contraction import infinite_condition
from .errors import ConfigError, DomainError, NonConvergenceError
from .generators import GeneratorSpec
from .picard import IterationTrace, PicardConfig, solve_finite
from .processes import (
    AdaptedProcess,
    SolutionTriple,
    norm_calL,
    norm_H2_beta,
    norm_L2_beta,
    norm_S2_beta,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LadderConfig:
    horizons: tuple[float, ...]
    dt: float
    beta: float
    epsilon: float
    tol: float
    r: float = 0.0
    picard: PicardConfig = PicardConfig(tol=1e-12, beta=4.0, max_iterations=200)
    require_h3: bool = False

    def __post_init__(self) -> None:
        hs = tuple(float(h) for h in self.horizons)
        object.__setattr__(self, "horizons", hs)
        if not hs:
            raise ConfigError("ladder needs at least one horizon", "/ladder/horizons")
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ConfigError("horizons must be strictly increasing", "/ladder/horizons")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", "/ladder/dt")
        for k, h in enumerate(hs):
            steps = h / self.dt
            if h <= 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigError(f"horizon {h!r} is not a positive multiple of dt", f"/ladder/horizons/{k}")
        if not (self.beta > 0 and self.epsilon > 0 and self.tol > 0):
            raise ConfigError("beta, epsilon and tol must be > 0", "/ladder")
        if self.r > 0:
            raise ConfigError("r must be <= 0", "/ladder/r")

    def steps(self, horizon: float) -> int:
        return int(round(horizon / self.dt))


@dataclass(frozen=True)
class TruncatedSolution:
    """Solution on ``[0, n]``; every component is zero beyond ``n``."""

    horizon: float
    triple: SolutionTriple
    trace: IterationTrace
    warnings: tuple[str, ...] = ()

    @property
    def tree(self) -> ScenarioTree:
        return self.triple.tree

    @property
    def dt(self) -> float:
        return self.tree.grid.dt

    @property
    def y0(self) -> float:
        return self.triple.y0

    def value_at(self, kind: str, t: float) -> np.ndarray | float:
        """Layer values of ``Y``, ``Z`` or ``K`` at grid time ``t`` (0 beyond the horizon)."""
        proc = self.triple.component(kind)
        i = t / self.dt
        if abs(i - round(i)) > 1e-9 * max(1.0, i) or t < 0:
            raise ValueError(f"time {t!r} is not on the grid")
        i = int(round(i))
        if i >= proc.n_layers:
            return 0.0
        return proc.layers[i]

    def mean_square(self) -> np.ndarray:
        """``E|Y(t_i)|^2`` for every grid time."""
        return np.array([layer_expectation(self.tree, y**2, i) for i, y in enumerate(self.triple.Y.layers)])


def _integrability_note(gen: GeneratorSpec, beta: float) -> str | None:
    if gen.decay is None:
        return None
    _, kappa = gen.decay
    if beta >= 2 * kappa:
        return f"witness decays at rate {kappa!r}; int e^(beta t) f(t,0)^2 dt diverges for beta={beta!r} >= 2*kappa"
    return None


def solve_truncated(
    gen: GeneratorSpec,
    jumps: JumpSpec,
    n: float,
    dt: float,
    picard_cfg: PicardConfig = PicardConfig(),
    *,
    beta: float | None = None,
    delta: float | None = None,
    node_budget: int = 2_000_000,
    collapsed: bool | None = None,
) -> TruncatedSolution:
    """Solve on ``[0, n]`` with zero terminal value.

    With a noise-free driver and zero terminal value every Picard iterate is
    deterministic, so one node per layer represents the solution exactly;
    ``collapsed=None`` picks that automatically.
    """
    if gen.form != "decaying" and gen.name != "zero":
        log.warning("%s does not declare a decaying Lipschitz form", gen.name)
    steps = n / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"horizon {n!r} is not a multiple of dt={dt!r}")
    delta = gen.reach if delta is None else delta
    grid = build_grid(n, int(round(steps)), delta=delta)
    if collapsed is None:
        collapsed = gen.noise_free
    tree = build_tree(grid, jumps, node_budget=node_budget, collapsed=collapsed)
    warnings = []
    note = _integrability_note(gen, picard_cfg.beta if beta is None else beta)
    if note:
        warnings.append(note)
    result = solve_finite(tree, gen, 0.0, picard_cfg)
    return TruncatedSolution(n, result.solution, result.trace, tuple(warnings))


def restricted_difference(long: TruncatedSolution, short: TruncatedSolution) -> SolutionTriple:
    """``long - short`` on the layers of the shorter rung.

    Both trees index their first layers identically, so the long rung's
    leading layers can be placed on the short rung's tree.
    """
    tree = short.tree
    if long.tree.collapsed != tree.collapsed or long.tree.jumps != tree.jumps:
        raise ValueError("rungs must share the tree layout")
    if abs(long.dt - short.dt) > 1e-15:
        raise ValueError("rungs must share dt")
    n = tree.N
    head = SolutionTriple(
        tree,
        AdaptedProcess(tree, long.triple.Y.layers[: n + 1], "Y"),
        AdaptedProcess(tree, long.triple.Z.layers[:n], "Z"),
        AdaptedProcess(tree, long.triple.K.layers[:n], "K"),
    )
    return head - short.triple


def witness_tail(gen: GeneratorSpec, beta: float, start: float) -> float:
    """``int_start^inf e^{beta s} f(s,0)^2 ds``: closed form for exponential witnesses."""
    if gen.name == "zero":
        return 0.0
    if gen.decay is not None:
        M, kappa = gen.decay
        if M == 0:
            return 0.0
        rate = beta - 2 * kappa
        if rate >= 0:
            return math.inf
        return M * M * math.exp(rate * start) / (-rate)
    val, _ = integrate.quad(lambda s: math.exp(beta * s) * gen.witness_at(s) ** 2, start, math.inf, limit=200)
    return float(val)


@dataclass
class LadderResult:
    solution: TruncatedSolution
    rungs: list[TruncatedSolution]
    deltas: list[float]
    tail_bounds: list[float]
    converged: bool
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def fin(x):
            return x if math.isfinite(x) else None

        return {
            "horizons": [r.horizon for r in self.rungs],
            "deltas": [fin(float(d)) for d in self.deltas],
            "tail_bounds": [fin(b) for b in self.tail_bounds],
            "picard_iterations": [r.trace.iterations for r in self.rungs],
            "y0": [r.y0 for r in self.rungs],
            "converged": self.converged,
            "warnings": list(self.warnings),
        }


def solve_infinite(gen: GeneratorSpec, jumps: JumpSpec, ladder: LadderConfig, *, node_budget: int = 2_000_000) -> LadderResult:
    warnings = []
    check = infinite_condition(ladder.beta, ladder.epsilon, gen.lipschitz_first_power, ladder.r)
    if not check.ok:
        msg = (
            f"(beta, epsilon)=({ladder.beta!r}, {ladder.epsilon!r}) fail the infinite-horizon condition "
            f"(slacks {check.slack_beta:.4g}, {check.slack_eps:.4g}); convergence is monitored empirically"
        )
        if ladder.require_h3:
            raise DomainError(msg)
        warnings.append(msg)
    note = _integrability_note(gen, ladder.beta)
    if note:
        warnings.append(note)

    rungs: list[TruncatedSolution] = []
    deltas: list[float] = []
    tails: list[float] = []
    delta = max(gen.reach, -ladder.r)
    for h in ladder.horizons:
        rung = solve_truncated(gen, jumps, h, ladder.dt, ladder.picard, beta=ladder.beta, delta=delta, node_budget=node_budget)
        rungs.append(rung)
        if len(rungs) < 2:
            continue
        prev = rungs[-2]
        d = norm_calL(restricted_difference(rung, prev), ladder.beta)
        deltas.append(d)
        tails.append(witness_tail(gen, ladder.beta, prev.horizon) / ladder.epsilon)
        log.info("ladder %g -> %g: Delta = %.3e", prev.horizon, h, d)
        if d <= ladder.tol:
            return LadderResult(rung, rungs, deltas, tails, True, warnings)
    if len(rungs) == 1 and rungs[0].trace.converged and _trivially_zero(rungs[0]):
        return LadderResult(rungs[0], rungs, deltas, tails, True, warnings)
    result = LadderResult(rungs[-1], rungs, deltas, tails, False, warnings)
    raise NonConvergenceError(f"ladder exhausted; last Delta = {deltas[-1] if deltas else math.nan:.3e}", result)


def _trivially_zero(rung: TruncatedSolution) -> bool:
    return all(not np.any(a) for a in rung.triple.Y.layers)


@dataclass(frozen=True)
class DecayReport:
    times: np.ndarray
    lhs: np.ndarray
    bound: np.ndarray
    holds: bool
    downward: bool

    def to_dict(self) -> dict:
        return {"holds": self.holds, "downward": self.downward, "max_ratio": float(_max_ratio(self.lhs, self.bound))}


def _max_ratio(lhs: np.ndarray, bound: np.ndarray) -> float:
    ratios = [a / b for a, b in zip(lhs, bound) if b > 0]
    return max(ratios) if ratios else 0.0


def decay_check(solution: TruncatedSolution, beta_prime: float, beta: float) -> DecayReport:
    """Weighted second-moment decay of ``Y`` when the weight is lowered.

    ``e^{beta' t} E|Y(t)|^2`` is compared with ``e^{(beta'-beta) t} sup_s
    e^{beta s} E|Y(s)|^2``; a finite ``beta``-weighted sup forces the
    ``beta'``-weighted moments to vanish at rate ``beta - beta'``.  Also
    reports whether the weighted moment falls over the last quarter of the grid.
    """
    if not beta_prime < beta:
        raise DomainError(f"need beta' < beta, got {beta_prime!r} >= {beta!r}")
    times = solution.tree.grid.times
    ms = solution.mean_square()
    sup = float(np.max(np.exp(beta * times) * ms))
    lhs = np.exp(beta_prime * times) * ms
    bound = np.exp((beta_prime - beta) * times) * sup
    holds = bool(np.all(lhs <= bound * (1 + 1e-9)))
    start = (3 * (len(times) - 1)) // 4
    downward = bool(lhs[-1] <= lhs[start])
    return DecayReport(times, lhs, bound, holds, downward)


@dataclass(frozen=True)
class AprioriReport:
    lhs: float
    rhs: float
    holds: bool
    factor: float
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs if math.isfinite(self.rhs) else None,
            "holds": self.holds,
            "factor": self.factor if math.isfinite(self.factor) else None,
            "notes": list(self.notes),
        }


def apriori_check(solution: TruncatedSolution | SolutionTriple, gen: GeneratorSpec, beta: float, epsilon: float) -> AprioriReport:
    """Weighted norm of the solution against ``(1/epsilon) int e^{beta t} f(t,0)^2 dt``."""
    if gen.witness is None:
        raise ConfigError(f"{gen.name} has no integrability witness", "/generator")
    if not epsilon > 0:
        raise DomainError("epsilon must be > 0")
    triple = solution.triple if isinstance(solution, TruncatedSolution) else solution
    lhs = (
        norm_S2_beta(triple.Y, beta)
        + norm_L2_beta(AdaptedProcess(triple.tree, triple.Y.layers[:-1], "Z"), beta)
        + norm_L2_beta(triple.Z, beta)
        + norm_H2_beta(triple.K, beta)
    )
    rhs = witness_tail(gen, beta, 0.0) / epsilon
    notes = ("constant taken as 1/epsilon",)
    if math.isinf(rhs):
        notes += ("witness integral diverges at this beta",)
    factor = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return AprioriReport(float(lhs), rhs, bool(lhs <= rhs * (1 + 1e-9)), float(factor), notes)

