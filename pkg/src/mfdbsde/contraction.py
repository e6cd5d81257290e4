"""Existence/uniqueness constants and the search for an admissible weight.

All finite-horizon conditions have the form ``C_beta * C_f * D(beta) *
max(1, T) < 1`` with ``C_beta = max(9 e^{beta T}, 8 T + 1/beta)`` and a delay
factor ``D`` that depends on how the driver looks into the past.  The
infinite-horizon condition is a pair of strict inequalities in ``(beta,
epsilon)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

MODES = ("finite_point", "finite_measure", "special_two_point", "infinite")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def c_beta(beta: float, T: float) -> float:
    if not beta > 0:
        raise DomainError(f"beta must be > 0 (1/beta is singular), got {beta!r}")
    if not T > 0:
        raise DomainError(f"T must be > 0, got {T!r}")
    return max(9.0 * math.exp(beta * T), 8.0 * T + 1.0 / beta)


def finite_condition(beta: float, C_f: float, T: float, s: float) -> float:
    if C_f < 0:
        raise DomainError(f"C_f must be >= 0, got {C_f!r}")
    if s > 0:
        raise DomainError(f"s must be <= 0, got {s!r}")
    return c_beta(beta, T) * C_f * (1.0 + math.exp(-beta * s)) * max(1.0, T)


@dataclass(frozen=True)
class MeasureSpec:
    """``lebesgue`` on ``[-delta, 0]`` or ``dirac`` at ``t0``."""

    kind: str
    delta: float = 0.0
    t0: float = 0.0


def measure_integral(beta: float, mu: MeasureSpec) -> float:
    """``int_{-delta}^0 e^{-beta s} mu(ds)`` in closed form."""
    if mu.kind == "lebesgue":
        if mu.delta < 0:
            raise DomainError("delta must be >= 0")
        if mu.delta == 0:
            return 0.0
        return math.expm1(beta * mu.delta) / beta
    if mu.kind == "dirac":
        if mu.t0 > 0:
            raise DomainError("Dirac point must lie in [-delta, 0]")
        return math.exp(-beta * mu.t0)
    raise ConfigError(f"unsupported measure {mu.kind!r}")


def measure_factor(beta: float, mu: MeasureSpec) -> float:
    return 2.0 + measure_integral(beta, mu)


def measure_condition(beta: float, C_f: float, T: float, mu: MeasureSpec) -> float:
    return c_beta(beta, T) * C_f * measure_factor(beta, mu) * max(1.0, T)


def special_condition(beta: float, C_hat: float, T: float, delta: float) -> float:
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta!r}")
    return c_beta(beta, T) * C_hat * (2.0 + math.exp(beta * delta)) * max(1.0, T)


@dataclass(frozen=True)
class InfiniteCheck:
    ok: bool
    slack_beta: float
    slack_eps: float


def infinite_condition(beta: float, epsilon: float, C: float, r: float) -> InfiniteCheck:
    """Both strict inequalities for the infinite-horizon weight and epsilon.

    ``C`` is the first-power Lipschitz constant.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon!r}")
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta!r}")
    if r > 0:
        raise DomainError(f"r must be <= 0, got {r!r}")
    slack_beta = beta - 6.0 * C * C / epsilon - 0.5
    slack_eps = 0.5 - 6.0 * epsilon * (2.0 + math.exp(-beta * r))
    return InfiniteCheck(slack_beta > 0 and slack_eps > 0, slack_beta, slack_eps)


def epsilon_interval(beta: float, C: float, r: float) -> tuple[float, float]:
    """Open interval of admissible epsilon for a given beta (may be empty)."""
    upper = 1.0 / (12.0 * (2.0 + math.exp(-beta * r)))
    if beta <= 0.5:
        return (math.inf, upper)
    return (6.0 * C * C / (beta - 0.5), upper)


def _infinite_value(beta: float, C: float, r: float) -> float:
    lo, hi = epsilon_interval(beta, C, r)
    return lo / hi


@dataclass
class FeasibilityReport:
    mode: str
    feasible: bool
    value: float
    beta: float
    epsilon: float | None = None
    margin: float | None = None
    trace: list[tuple[float, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "feasible": self.feasible,
            "value": _finite_or_none(self.value),
            "beta": self.beta,
            "epsilon": self.epsilon,
            "margin": _finite_or_none(self.margin) if self.margin is not None else None,
            "trace": [[b, _finite_or_none(v)] for b, v in self.trace],
            "notes": list(self.notes),
        }


def _finite_or_none(x: float | None) -> float | None:
    return x if x is not None and math.isfinite(x) else None


def _objective(mode: str, C: float, horizon: float, *, s: float, mu: MeasureSpec | None, delta: float, r: float):
    if mode == "finite_point":
        return lambda b: finite_condition(b, C, horizon, s)
    if mode == "finite_measure":
        if mu is None:
            raise ConfigError("finite_measure mode needs a measure")
        return lambda b: measure_condition(b, C, horizon, mu)
    if mode == "special_two_point":
        return lambda b: special_condition(b, C, horizon, delta)
    if mode == "infinite":
        return lambda b: _infinite_value(b, C, r)
    raise ConfigError(f"unknown analysis mode {mode!r}", "/analysis/mode")


def _golden_min(fn, lo: float, hi: float, tol: float = 1e-9) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


def search_beta(
    mode: str,
    C: float,
    horizon: float = 1.0,
    *,
    s: float = 0.0,
    mu: MeasureSpec | None = None,
    delta: float = 0.0,
    r: float = 0.0,
    budget: int = 200,
    beta_range: tuple[float, float] = (1e-4, 50.0),
) -> FeasibilityReport:
    """Log-grid scan of beta followed by golden-section refinement.

    ``C`` is ``C_f`` / ``C_hat`` (squared form) for the finite modes and the
    first-power constant for ``infinite``.  ``horizon`` is ``T`` for finite
    modes and ignored for ``infinite``.  Ties go to the smaller beta.
    """
    if budget < 10:
        raise ValueError("budget must be >= 10")
    fn = _objective(mode, C, horizon, s=s, mu=mu, delta=delta, r=r)
    grid = np.exp(np.linspace(math.log(beta_range[0]), math.log(beta_range[1]), budget))
    values = [fn(float(b)) for b in grid]
    trace = list(zip((float(b) for b in grid), values))
    best = 0
    for k in range(1, len(values)):
        if values[k] < values[best]:
            best = k
    beta, value = float(grid[best]), values[best]
    if math.isfinite(value):
        lo = float(grid[max(best - 1, 0)])
        hi = float(grid[min(best + 1, len(grid) - 1)])
        b_ref, v_ref = _golden_min(fn, lo, hi)
        if v_ref < value:
            beta, value = b_ref, v_ref

    report = FeasibilityReport(mode, False, value, beta, trace=trace)
    if mode == "infinite":
        lo, hi = epsilon_interval(beta, C, r)
        if lo < hi:
            eps = 0.5 * (lo + hi)
            check = infinite_condition(beta, eps, C, r)
            report.epsilon = eps
            report.feasible = check.ok
        report.notes.append("value is the ratio of the epsilon-interval endpoints; feasible iff < 1")
    else:
        report.feasible = value < 1
        report.margin = 1.0 - value
    return report
