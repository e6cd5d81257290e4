from __future__ import annotations

import math

import numpy as np
import pytest

from mfdbsde.basis import JumpSpec, build_grid, build_tree
from mfdbsde.errors import DomainError, NonConvergenceError
from mfdbsde.generators import builtin
from mfdbsde.infinite import (
    LadderConfig,
    TruncatedSolution,
    apriori_check,
    decay_check,
    solve_infinite,
    solve_truncated,
    witness_tail,
)
from mfdbsde.picard import IterationTrace, PicardConfig
from mfdbsde.processes import AdaptedProcess, SolutionTriple

DECAY = builtin("forced_decay", a=1.0, kappa=1.0)
LADDER_PICARD = PicardConfig(tol=1e-12, beta=4.0)


def _explicit_truncated(n, dt):
    """Closed form of the discrete fixed point on ``[0, n]``.

    The Picard fixed point of the left-endpoint scheme satisfies
    ``y_i = y_{i+1} + dt (e^{-t_i} - y_i)``, i.e. ``y_i = (y_{i+1} + dt e^{-t_i}) / (1 + dt)``.
    """
    N = int(round(n / dt))
    y = np.zeros(N + 1)
    for i in range(N - 1, -1, -1):
        y[i] = (y[i + 1] + dt * math.exp(-i * dt)) / (1 + dt)
    return y


def _as_solution(values, T):
    N = len(values) - 1
    tree = build_tree(build_grid(T, N), collapsed=True)
    Y = AdaptedProcess(tree, tuple(np.array([v]) for v in values), "Y")
    triple = SolutionTriple(tree, Y, AdaptedProcess.zeros(tree, "Z"), AdaptedProcess.zeros(tree, "K"))
    return TruncatedSolution(T, triple, IterationTrace(1.0))


def test_truncated_matches_scheme_and_closed_form():
    sol = solve_truncated(DECAY, JumpSpec(), 4.0, 1 / 16, PicardConfig(tol=1e-24, beta=4.0))
    y = _explicit_truncated(4.0, 1 / 16)
    np.testing.assert_allclose([l[0] for l in sol.triple.Y.layers], y, atol=1e-9)
    assert sol.y0 == pytest.approx(0.5 * (1 - math.exp(-8)), abs=2 / 16)


def test_zero_driver_gives_zero_triple():
    sol = solve_truncated(builtin("zero"), JumpSpec(), 2.0, 0.25)
    assert all(not np.any(y) for y in sol.triple.Y.layers)


def test_integrability_warning():
    sol = solve_truncated(DECAY, JumpSpec(), 1.0, 0.25, LADDER_PICARD, beta=2.5)
    assert any("diverges" in w for w in sol.warnings)


def test_zero_extension():
    sol = solve_truncated(DECAY, JumpSpec(), 1.0, 0.25, LADDER_PICARD)
    assert sol.value_at("Y", 1.25) == 0.0
    assert sol.value_at("Z", 1.0) == 0.0
    assert sol.value_at("Y", 0.5)[0] > 0


def test_ladder_oracle():
    ladder = LadderConfig((2.0, 4.0, 8.0), 1 / 16, 1.0, 0.02, 0.015625)
    res = solve_infinite(DECAY, JumpSpec(), ladder)
    assert res.converged and len(res.deltas) == 2
    assert res.deltas[1] < res.deltas[0]
    assert abs(res.solution.y0 - 0.5) <= max(2 / 16, math.exp(-4))
    for n, d in zip((2.0, 4.0), res.deltas):
        assert 0.02 * d <= math.exp(-n) / (2 - 1.0)


def test_ladder_zero_driver_stops_at_first_difference():
    ladder = LadderConfig((1.0, 2.0, 4.0), 0.25, 1.0, 0.02, 1e-12)
    res = solve_infinite(builtin("zero"), JumpSpec(), ladder)
    assert res.deltas == [0.0]


def test_ladder_exhaustion():
    ladder = LadderConfig((1.0, 2.0), 0.25, 1.0, 0.02, 1e-30)
    with pytest.raises(NonConvergenceError) as exc:
        solve_infinite(DECAY, JumpSpec(), ladder)
    assert len(exc.value.trace.deltas) == 1


def test_witness_tail_closed_form():
    assert witness_tail(DECAY, 1.0, 2.0) == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert witness_tail(DECAY, 2.0, 0.0) == math.inf
    quad = witness_tail(builtin("recursive_utility", c=0.1, pi_path=((0.0, 1.0), (math.e, 1.0))), 0.5, 0.0)
    assert quad == pytest.approx(2 * (math.exp(0.5) - 1), rel=1e-8)


def test_decay_examples():
    times = np.arange(65) / 16
    sol = _as_solution(np.exp(-times) / 2, 4.0)
    rep = decay_check(sol, 1.0, 1.5)
    assert rep.holds and rep.downward
    assert np.all(np.diff(rep.lhs) < 0)
    zero = decay_check(_as_solution(np.zeros(9), 2.0), 1.0, 1.5)
    assert zero.holds
    flat = decay_check(_as_solution(np.ones(9), 2.0), 1.0, 1.5)
    assert not flat.downward
    with pytest.raises(DomainError):
        decay_check(sol, 1.5, 1.5)


def test_apriori_examples():
    z = solve_truncated(builtin("zero"), JumpSpec(), 1.0, 0.25)
    rep = apriori_check(z, builtin("zero"), 1.0, 0.02)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.holds
    sol = solve_truncated(DECAY, JumpSpec(), 8.0, 1 / 16, LADDER_PICARD)
    rep = apriori_check(sol, DECAY, 1.0, 0.02)
    assert rep.rhs == pytest.approx(50.0, rel=1e-14)
    # continuous values: sup e^t e^{-2t}/4 = 1/4 and int e^t e^{-2t}/4 = 1/4
    assert rep.lhs == pytest.approx(0.5, abs=0.05)
    assert rep.holds
    big = apriori_check(sol.triple.scaled(100.0), DECAY, 1.0, 0.02)
    assert not big.holds and big.factor > 1
