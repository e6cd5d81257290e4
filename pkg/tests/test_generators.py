from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from mfdbsde.errors import ConfigError, GeneratorEvaluationError
from mfdbsde.generators import builtin, check_witness, evaluate, probe_lipschitz, window_view

DT = 0.25


def _views(y, z=None, k=None):
    y = np.asarray(y, dtype=float)
    z = np.zeros_like(y) if z is None else z
    k = np.zeros((len(y), 1)) if k is None else k
    return window_view("Y", y, DT), window_view("Z", z, DT), window_view("K", k, DT)


def test_zero_generator():
    assert evaluate(builtin("zero"), 0.3, *_views([5.0, -2.0]), 1.0, 2.0, [3.0]) == 0.0


def test_affine_meanfield_value():
    assert evaluate(builtin("affine_meanfield", a=0.5, b=0.0), 0.0, *_views([7.0]), 2.0, 0.0, [0.0]) == 1.0


def test_point_delay_value():
    gen = builtin("point_delay", a=0.25, s=-1.0)
    y = np.zeros(5)
    y[0] = 4 / 3
    assert evaluate(gen, 0.0, *_views(y), 0.0, 0.0, [0.0]) == pytest.approx(1 / 3, abs=1e-15)


def test_forced_decay_witness():
    gen = builtin("forced_decay", a=1.0, kappa=1.0)
    assert gen.form == "decaying"
    assert check_witness(gen, [0.0, 0.5, 2.0, 7.0], m=1) < 1e-15


def test_unknown_builtin():
    with pytest.raises(ConfigError) as exc:
        builtin("foo")
    assert exc.value.path == "/generator/name"


def test_recursive_utility_reads_pi():
    gen = builtin("recursive_utility", c=0.5, pi_path=((0.0, 0.5), (1.0, math.e)))
    assert evaluate(gen, 0.75, *_views([2.0]), 0.0, 0.0, [0.0]) == pytest.approx(1.0 - 1.0)
    assert evaluate(gen, 0.25, *_views([0.0]), 0.0, 0.0, [0.0]) == 0.0


def test_non_finite_driver_is_reported():
    gen = builtin("recursive_utility", c=0.5, pi_path=((0.0,), (1.0,)))
    bad = dataclasses.replace(gen, func=lambda *a: math.nan)
    with pytest.raises(GeneratorEvaluationError, match="non-finite"):
        evaluate(bad, 0.0, *_views([1.0]), 0.0, 0.0, [0.0])


@pytest.mark.parametrize(
    "name,params",
    [
        ("zero", {}),
        ("affine_meanfield", {"a": 0.5, "b": 1.0}),
        ("point_delay", {"a": 0.25, "s": -0.5}),
        ("two_point", {"a1": 0.1, "a2": 0.1, "delta": 0.5}),
        ("forced_decay", {"a": 1.0, "kappa": 1.0}),
        ("linear", {"y": 0.2, "z": -0.3, "k": 0.1, "mean_y": 0.4, "mean_k": 0.2, "s": -0.25,
                    "intensities": [0.5, 1.5]}),
    ],
)
def test_declared_constants_survive_probing(name, params):
    rep = probe_lipschitz(builtin(name, **params), trials=10_000, scale=10.0)
    assert rep.passed, rep


def test_understated_constant_is_caught():
    gen = builtin("affine_meanfield", a=0.5, b=1.0)
    rep = probe_lipschitz(dataclasses.replace(gen, lipschitz=0.1), trials=2000)
    assert not rep.passed
    assert rep.max_ratio == pytest.approx(2.5, rel=1e-9)


def test_evaluate_is_deterministic():
    gen = builtin("linear", y=0.2, z=0.1, k=0.3, s=-0.25, intensities=[0.7])
    rng = np.random.default_rng(0)
    views = _views(rng.normal(size=2), rng.normal(size=2), rng.normal(size=(2, 1)))
    assert evaluate(gen, 0.1, *views, 0.2, 0.3, [0.4]) == evaluate(gen, 0.1, *views, 0.2, 0.3, [0.4])
