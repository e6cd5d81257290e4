"""Driver functions ``f(t, Y_t, Z_t, K_t, E[Y], E[Z], E[K], pi)``.

A :class:`GeneratorSpec` bundles a vectorized callback with the metadata the
analysis needs: a Lipschitz constant in squared form, the delay descriptor
telling which window samples the driver reads, and the size of
``|f(t, 0, ..., 0)|``.

Callbacks receive :class:`~mfdbsde.processes.SegmentBlock` objects whose
values carry a leading node axis, the three layer means, the consumption
rate ``pi(t)`` (or ``None``) and return one driver value per node.

Lipschitz constants are always declared in the squared form

    |f - f~|^2 <= C * (sum over slots of |slot difference|^2),

where jump slots are weighted by ``nu``.  For the infinite-horizon analysis
the first-power constant is ``sqrt(C)``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .basis import JumpSpec, mark_dot
from .errors import ConfigError, GeneratorEvaluationError
from .processes import SegmentBlock, SegmentView, window_offsets

Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True)
class PointShift:
    """Driver reads the sample at offset ``s``."""

    s: float

    @property
    def reach(self) -> float:
        return -self.s

    def weights(self, offsets: np.ndarray, dt: float) -> list[np.ndarray]:
        return [_unit(offsets, self.s, dt)]


@dataclass(frozen=True)
class TwoPoint:
    """Driver reads ``X(t)`` and ``X(t - delta)``."""

    delta: float

    @property
    def reach(self) -> float:
        return self.delta

    def weights(self, offsets: np.ndarray, dt: float) -> list[np.ndarray]:
        return [_unit(offsets, 0.0, dt), _unit(offsets, -self.delta, dt)]


@dataclass(frozen=True)
class Measure:
    """Driver reads ``int X(t+u) mu(du)`` for Lebesgue or Dirac ``mu``.

    Lebesgue on ``[-delta, 0]`` is discretized by the left-endpoint rule
    (weight ``dt`` on offsets ``-delta .. -dt``); Dirac puts unit weight on
    the aligned offset ``t0``.
    """

    kind: str
    delta: float = 0.0
    t0: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("lebesgue", "dirac"):
            raise ConfigError(f"unsupported measure {self.kind!r}")

    @property
    def reach(self) -> float:
        return self.delta if self.kind == "lebesgue" else -self.t0

    def weights(self, offsets: np.ndarray, dt: float) -> list[np.ndarray]:
        if self.kind == "dirac":
            return [_unit(offsets, self.t0, dt)]
        w = np.zeros(len(offsets))
        n = int(round(self.delta / dt))
        w[len(offsets) - 1 - n : len(offsets) - 1] = dt
        return [w]


DelayDescriptor = PointShift | TwoPoint | Measure


def _unit(offsets: np.ndarray, at: float, dt: float) -> np.ndarray:
    w = np.zeros(len(offsets))
    idx = len(offsets) - 1 + int(round(at / dt))
    if not 0 <= idx < len(offsets) or abs(offsets[idx] - at) > 1e-9 * max(dt, 1.0):
        raise ValueError(f"offset {at!r} is not aligned with the window")
    w[idx] = 1.0
    return w


def _zero_witness(t: float) -> float:
    return 0.0


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    func: Evaluator
    lipschitz: float
    form: str = "pointwise"
    delay: DelayDescriptor | None = None
    witness: Callable[[float], float] = _zero_witness
    decay: tuple[float, float] | None = None
    mean_only: bool = False
    noise_free: bool = True
    pi: Callable[[float], float] | None = None
    params: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lipschitz) and self.lipschitz >= 0):
            raise ConfigError(f"Lipschitz constant must be >= 0, got {self.lipschitz!r}")
        if self.form not in ("pointwise", "window", "decaying"):
            raise ConfigError(f"unknown Lipschitz form {self.form!r}")

    @property
    def lipschitz_first_power(self) -> float:
        return math.sqrt(self.lipschitz)

    @property
    def reach(self) -> float:
        return 0.0 if self.delay is None else self.delay.reach

    def projection_weights(self, offsets: np.ndarray, dt: float) -> list[np.ndarray]:
        """Window weights defining the slots that enter the Lipschitz bound."""
        if self.delay is None:
            return [_unit(offsets, 0.0, dt)]
        return self.delay.weights(offsets, dt)

    def pi_at(self, t: float) -> float | None:
        return None if self.pi is None else float(self.pi(t))

    def witness_at(self, t: float) -> float:
        return float(self.witness(t))


def evaluate_block(
    gen: GeneratorSpec,
    t: float,
    segY: SegmentBlock,
    segZ: SegmentBlock,
    segK: SegmentBlock,
    meanY: float,
    meanZ: float,
    meanK: np.ndarray,
    pi: float | None = None,
) -> np.ndarray:
    """Vectorized driver values, one per node of the blocks."""
    if pi is None:
        pi = gen.pi_at(t)
    out = np.asarray(gen.func(t, segY, segZ, segK, meanY, meanZ, np.asarray(meanK, dtype=float), pi), dtype=float)
    out = np.broadcast_to(out, (segY.n,)).astype(float, copy=True)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise GeneratorEvaluationError(
            f"{gen.name}: non-finite driver value at t={t!r}, node {bad}: "
            f"Y={segY.values[bad].tolist()}, Z={segZ.values[bad].tolist()}, "
            f"meanY={meanY!r}, meanZ={meanZ!r}, meanK={np.asarray(meanK).tolist()}, pi={pi!r}"
        )
    return out


def evaluate(
    gen: GeneratorSpec,
    t: float,
    segY: SegmentView,
    segZ: SegmentView,
    segK: SegmentView,
    meanY: float,
    meanZ: float,
    meanK: Sequence[float] | np.ndarray,
    pi: float | None = None,
) -> float:
    blocks = [SegmentBlock.from_view(v) for v in (segY, segZ, segK)]
    return float(evaluate_block(gen, t, *blocks, meanY, meanZ, np.asarray(meanK, dtype=float), pi)[0])


def window_view(kind: str, values, dt: float, time: float = 0.0) -> SegmentView:
    """Build a free-standing segment from raw samples (oldest first)."""
    values = np.asarray(values, dtype=float)
    return SegmentView(kind, -1, time, window_offsets(values.shape[0] - 1, dt), values, dt)


# --------------------------------------------------------------------------
# builtins


def _zero(t, segY, segZ, segK, mY, mZ, mK, pi):
    return np.zeros(segY.n)


def zero() -> GeneratorSpec:
    return GeneratorSpec("zero", _zero, 0.0, mean_only=True)


def affine_meanfield(a: float, b: float = 0.0) -> GeneratorSpec:
    """``f = a * E[Y(t)] + b``."""
    a, b = float(a), float(b)

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        return np.full(segY.n, a * mY + b)

    return GeneratorSpec(
        "affine_meanfield",
        func,
        a * a,
        mean_only=True,
        witness=lambda t: abs(b),
        decay=(abs(b), 0.0),
        params={"a": a, "b": b},
    )


def point_delay(a: float, s: float) -> GeneratorSpec:
    """``f = a * Y(t + s)``, ``s <= 0``."""
    a, s = float(a), float(s)
    if s > 0:
        raise ConfigError(f"shift must be <= 0, got {s!r}", "/generator/params/s")

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        return a * segY.at(s)

    return GeneratorSpec("point_delay", func, a * a, delay=PointShift(s), decay=(0.0, 0.0), params={"a": a, "s": s})


def two_point(a1: float, a2: float, delta: float) -> GeneratorSpec:
    """``f = a1 * Y(t) + a2 * Y(t - delta)``.

    Squared-form constant ``a1**2 + a2**2`` (Cauchy-Schwarz, attained when the
    two differences are proportional to the coefficients).
    """
    a1, a2, delta = float(a1), float(a2), float(delta)
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta!r}", "/generator/params/delta")

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        return a1 * segY.at(0.0) + a2 * segY.at(-delta)

    return GeneratorSpec(
        "two_point",
        func,
        a1 * a1 + a2 * a2,
        form="window",
        delay=TwoPoint(delta),
        decay=(0.0, 0.0),
        params={"a1": a1, "a2": a2, "delta": delta},
    )


def step_path(times: Sequence[float], values: Sequence[float]) -> Callable[[float], float]:
    """Right-continuous step function through sampled ``(time, value)`` pairs."""
    ts = np.asarray(times, dtype=float)
    vs = np.asarray(values, dtype=float)
    if ts.ndim != 1 or ts.shape != vs.shape or len(ts) == 0:
        raise ConfigError("pi path needs equally many times and values", "/pi")
    if np.any(np.diff(ts) <= 0):
        raise ConfigError("pi times must be strictly increasing", "/pi/times")

    def path(t: float) -> float:
        k = int(np.searchsorted(ts, t + 1e-12, side="right")) - 1
        return float(vs[max(k, 0)])

    return path


def recursive_utility(c: float, pi_path: Callable[[float], float] | tuple) -> GeneratorSpec:
    """Discounted log-utility of consumption: ``f = log(pi(t)) - c * Y(t)``."""
    c = float(c)
    path = step_path(*pi_path) if isinstance(pi_path, tuple) else pi_path

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        if pi is None or not pi > 0:
            raise GeneratorEvaluationError(f"recursive_utility needs pi(t) > 0, got {pi!r} at t={t!r}")
        return math.log(pi) - c * segY.at(0.0)

    return GeneratorSpec(
        "recursive_utility",
        func,
        c * c,
        witness=lambda t: abs(math.log(path(t))),
        pi=path,
        params={"c": c},
    )


def forced_decay(a: float, kappa: float, r: float = 0.0) -> GeneratorSpec:
    """``f = -a * Y(t + r) + exp(-kappa * t)``; infinite-horizon test driver."""
    a, kappa, r = float(a), float(kappa), float(r)
    if not (a > 0 and kappa > 0):
        raise ConfigError("forced_decay needs a > 0 and kappa > 0", "/generator/params")
    if r > 0:
        raise ConfigError(f"shift must be <= 0, got {r!r}", "/generator/params/r")

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        return -a * segY.at(r) + math.exp(-kappa * t)

    return GeneratorSpec(
        "forced_decay",
        func,
        a * a,
        form="decaying",
        delay=PointShift(r) if r else None,
        witness=lambda t: math.exp(-kappa * t),
        decay=(1.0, kappa),
        params={"a": a, "kappa": kappa, "r": r},
    )


def linear(
    y: float = 0.0,
    z: float = 0.0,
    k: float = 0.0,
    mean_y: float = 0.0,
    mean_z: float = 0.0,
    mean_k: float = 0.0,
    b: float = 0.0,
    s: float = 0.0,
    intensities: Sequence[float] = (),
) -> GeneratorSpec:
    """General affine driver touching every slot at shift ``s``.

    ``f = y Y(t+s) + z Z(t+s) + k int K(t+s,.) dnu + mean_y E[Y] + mean_z E[Z]
    + mean_k int E[K] dnu + b``, with ``nu`` given by ``intensities``.
    """
    y, z, k, mean_y, mean_z, mean_k, b, s = map(float, (y, z, k, mean_y, mean_z, mean_k, b, s))
    lam = np.asarray(intensities, dtype=float)
    lam_tot = math.fsum(lam)
    # |k <dK, lam>|^2 <= k^2 (sum lam) (sum lam dK^2)
    C = y * y + z * z + mean_y * mean_y + mean_z * mean_z + (k * k + mean_k * mean_k) * lam_tot
    if s > 0:
        raise ConfigError(f"shift must be <= 0, got {s!r}", "/generator/params/s")

    def func(t, segY, segZ, segK, mY, mZ, mK, pi):
        out = y * segY.at(s) + z * segZ.at(s) + mean_y * mY + mean_z * mZ + b
        if len(lam) and (k or mean_k):
            out = out + k * mark_dot(segK.at(s), lam) + mean_k * float(mark_dot(mK, lam))
        return out

    return GeneratorSpec(
        "linear",
        func,
        C,
        delay=PointShift(s),
        witness=lambda t: abs(b),
        decay=(abs(b), 0.0),
        mean_only=not (y or z or k),
        params={"y": y, "z": z, "k": k, "mean_y": mean_y, "mean_z": mean_z, "mean_k": mean_k,
                "b": b, "s": s, "intensities": [float(v) for v in lam]},
    )


BUILTINS: dict[str, Callable[..., GeneratorSpec]] = {
    "zero": zero,
    "affine_meanfield": affine_meanfield,
    "point_delay": point_delay,
    "two_point": two_point,
    "recursive_utility": recursive_utility,
    "forced_decay": forced_decay,
    "linear": linear,
}


def builtin(name: str, **params) -> GeneratorSpec:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown generator {name!r}", "/generator/name") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(str(exc), "/generator/params") from None


# --------------------------------------------------------------------------
# Lipschitz probing


@dataclass(frozen=True)
class ProbeReport:
    max_ratio: float
    passed: bool
    trials: int
    declared: float


def probe_lipschitz(
    gen: GeneratorSpec,
    trials: int = 10_000,
    scale: float = 10.0,
    *,
    jumps: JumpSpec | None = None,
    seed: int = 0,
) -> ProbeReport:
    """Search for violations of the declared squared-form Lipschitz bound.

    Each trial draws a base input uniform in ``[-scale, scale]`` per slot and
    a partner that redraws a random nonempty subset of slots, so single-slot
    perturbations are well represented.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if jumps is None:
        lam = gen.params.get("intensities") if gen.name == "linear" else None
        jumps = JumpSpec(tuple(float(i + 1) for i in range(len(lam))), tuple(lam)) if lam else JumpSpec((1.0,), (1.0,))
    m, lam = jumps.m, jumps.lam
    reach = gen.reach
    dt = reach / 4 if reach > 0 else 0.25
    L = int(round(reach / dt))
    offsets = window_offsets(L, dt)
    W = L + 1
    rng = np.random.default_rng(seed)

    def draw():
        return {
            "Y": rng.uniform(-scale, scale, (trials, W)),
            "Z": rng.uniform(-scale, scale, (trials, W)),
            "K": rng.uniform(-scale, scale, (trials, W, m)),
            "mY": rng.uniform(-scale, scale, trials),
            "mZ": rng.uniform(-scale, scale, trials),
            "mK": rng.uniform(-scale, scale, (trials, m)),
        }

    base, other = draw(), draw()
    slots = list(base)
    mask = rng.random((trials, len(slots))) < 0.5
    single = rng.integers(0, len(slots), trials)
    only_one = rng.random(trials) < 0.5
    mask[only_one] = False
    mask[only_one, single[only_one]] = True
    empty = ~mask.any(axis=1)
    mask[empty, single[empty]] = True
    partner = {}
    for j, key in enumerate(slots):
        sel = mask[:, j].reshape((trials,) + (1,) * (base[key].ndim - 1))
        partner[key] = np.where(sel, other[key], base[key])

    # mean-field slots are scalars per call, so trials are evaluated one by one
    times = rng.uniform(0.0, 1.0, trials)
    f1 = np.empty(trials)
    f2 = np.empty(trials)
    for out, inp in ((f1, base), (f2, partner)):
        for n in range(trials):
            blocks = [SegmentBlock(kind, offsets, inp[kind][n : n + 1], dt) for kind in ("Y", "Z", "K")]
            out[n] = evaluate_block(
                gen, float(times[n]), *blocks, float(inp["mY"][n]), float(inp["mZ"][n]), inp["mK"][n]
            )[0]

    weights = gen.projection_weights(offsets, dt)
    bound = np.zeros(trials)
    for w in weights:
        dY = mark_dot(base["Y"] - partner["Y"], w)
        dZ = mark_dot(base["Z"] - partner["Z"], w)
        dK = mark_dot(np.moveaxis(base["K"] - partner["K"], 1, 2), w)
        bound += dY**2 + dZ**2 + mark_dot(dK**2, lam)
    bound += (base["mY"] - partner["mY"]) ** 2 + (base["mZ"] - partner["mZ"]) ** 2
    bound += mark_dot((base["mK"] - partner["mK"]) ** 2, lam)
    bound *= gen.lipschitz
    diff2 = (f1 - f2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, diff2 / np.where(bound > 0, bound, 1.0), np.where(diff2 > 0, np.inf, 0.0))
    max_ratio = float(np.max(ratio))
    return ProbeReport(max_ratio, max_ratio <= 1 + 1e-9, trials, gen.lipschitz)


def check_witness(gen: GeneratorSpec, times: Sequence[float], m: int = 0, lag_steps: int = 0, dt: float = 0.25) -> float:
    """Largest gap between ``|f(t, 0, ..., 0)|`` and the declared witness."""
    offsets = window_offsets(lag_steps, dt)
    worst = 0.0
    for t in times:
        blocks = [
            SegmentBlock("Y", offsets, np.zeros((1, lag_steps + 1)), dt),
            SegmentBlock("Z", offsets, np.zeros((1, lag_steps + 1)), dt),
            SegmentBlock("K", offsets, np.zeros((1, lag_steps + 1, m)), dt),
        ]
        val = abs(float(evaluate_block(gen, float(t), *blocks, 0.0, 0.0, np.zeros(m))[0]))
        worst = max(worst, abs(val - gen.witness_at(float(t))))
    return worst
