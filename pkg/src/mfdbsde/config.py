"""Run configuration: JSON schema, semantic checks and object construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .basis import JumpSpec, TimeGrid, build_grid
from .contraction import MODES, MeasureSpec
from .errors import ConfigError
from .generators import BUILTINS, GeneratorSpec, builtin
from .infinite import LadderConfig
from .picard import PicardConfig

SUBCOMMANDS = ("solve-finite", "solve-infinite", "analyze", "verify")
TREE_MODES = ("auto", "full", "collapsed", "mean")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonpos = {"type": "number", "maximum": 0}
_nonneg = {"type": "number", "minimum": 0}
_numlist = {"type": "array", "items": _num}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "grid": _obj({"T": _pos, "N": {"type": "integer", "minimum": 1}, "delta": _nonneg, "s": _nonpos}, ("T", "N")),
        "jumps": _obj(
            {"marks": _numlist, "intensities": {"type": "array", "items": _nonneg}}, ("marks", "intensities")
        ),
        "generator": _obj({"name": {"type": "string"}, "params": {"type": "object"}}, ("name",)),
        "pi": _obj({"times": _numlist, "values": {"type": "array", "items": _pos}}, ("times", "values")),
        "terminal": _obj(
            {
                "kind": {"enum": ["constant", "affine"]},
                "constant": _num,
                "brownian": _num,
                "jump_counts": _numlist,
            },
            ("kind",),
        ),
        "picard": _obj(
            {
                "tol": _pos,
                "max_iterations": {"type": "integer", "minimum": 1},
                "beta": _pos,
                "divergence_patience": {"type": "integer", "minimum": 1},
            }
        ),
        "tree": _obj({"mode": {"enum": list(TREE_MODES)}, "node_budget": {"type": "integer", "minimum": 1}}),
        "ladder": _obj(
            {
                "horizons": {"type": "array", "items": _pos, "minItems": 1},
                "dt": _pos,
                "beta": _pos,
                "epsilon": _pos,
                "tol": _pos,
                "r": _nonpos,
                "picard_beta": _pos,
                "decay_beta_prime": _pos,
                "decay_beta": _pos,
            },
            ("horizons", "dt", "tol"),
        ),
        "analysis": _obj(
            {
                "mode": {"enum": list(MODES)},
                "C": _nonneg,
                "T": _pos,
                "s": _nonpos,
                "delta": _nonneg,
                "r": _nonpos,
                "measure": _obj(
                    {"kind": {"enum": ["lebesgue", "dirac"]}, "delta": _nonneg, "t0": _nonpos}, ("kind",)
                ),
                "budget": {"type": "integer", "minimum": 10},
            },
            ("mode",),
        ),
    }
)

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    grid: TimeGrid | None = None
    jumps: JumpSpec = field(default_factory=JumpSpec)
    generator: GeneratorSpec | None = None
    terminal: dict = field(default_factory=lambda: {"kind": "constant", "constant": 0.0})
    picard: PicardConfig = PicardConfig()
    picard_beta_given: bool = False
    tree_mode: str = "auto"
    node_budget: int = 2_000_000
    ladder: LadderConfig | None = None
    ladder_raw: dict = field(default_factory=dict)
    analysis: dict | None = None

    def terminal_function(self):
        """``g(B(T), counts)`` described by the terminal section."""
        kind = self.terminal["kind"]
        c0 = float(self.terminal.get("constant", 0.0))
        if kind == "constant":
            return lambda B, n: np.full(len(B), c0)
        cb = float(self.terminal.get("brownian", 0.0))
        cj = np.asarray(self.terminal.get("jump_counts", [0.0] * self.jumps.m), dtype=float)

        def g(B, n):
            out = c0 + cb * np.asarray(B, dtype=float)
            for j in range(len(cj)):
                out = out + cj[j] * n[:, j]
            return out

        return g

    @property
    def terminal_deterministic(self) -> bool:
        if self.terminal["kind"] == "constant":
            return True
        return self.terminal.get("brownian", 0.0) == 0 and not any(self.terminal.get("jump_counts", []))


def load_json(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", "/") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top-level value must be an object", "/")
    return doc


def _aligned(value: float, dt: float) -> bool:
    steps = value / dt
    return abs(steps - round(steps)) <= 1e-9 * max(1.0, abs(steps))


def parse_config(text: str, subcommand: str = "solve-finite") -> RunConfig:
    """Validate a JSON document and build the run objects.

    Every error is a :class:`ConfigError` whose message starts with the JSON
    pointer of the offending field.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}", "/")
    doc = load_json(text)
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))

    for section in {"solve-finite": ("grid", "generator"), "solve-infinite": ("generator", "ladder"),
                    "analyze": ("analysis",), "verify": ()}[subcommand]:
        if section not in doc:
            raise ConfigError(f"{subcommand} needs a '{section}' section", f"/{section}")

    jumps = JumpSpec()
    if "jumps" in doc:
        j = doc["jumps"]
        if len(j["marks"]) != len(j["intensities"]):
            raise ConfigError("marks and intensities must have the same length", "/jumps/intensities")
        try:
            jumps = JumpSpec(tuple(map(float, j["marks"])), tuple(map(float, j["intensities"])))
        except ValueError as exc:
            raise ConfigError(str(exc), "/jumps") from exc

    grid = None
    if "grid" in doc:
        g = doc["grid"]
        T, N = float(g["T"]), int(g["N"])
        dt = T / N
        for key in ("delta", "s"):
            if key in g and not _aligned(float(g[key]), dt):
                raise ConfigError(f"{key}={g[key]!r} is not a multiple of dt={dt!r}", f"/grid/{key}")
        try:
            grid = build_grid(T, N, delta=float(g.get("delta", 0.0)), s=float(g.get("s", 0.0)))
            jumps.check_grid(grid)
        except ValueError as exc:
            raise ConfigError(str(exc), "/grid") from exc

    gen = None
    if "generator" in doc:
        gen = _build_generator(doc, grid)

    terminal = dict(doc.get("terminal", {"kind": "constant", "constant": 0.0}))
    if "jump_counts" in terminal and len(terminal["jump_counts"]) != jumps.m:
        raise ConfigError(f"need {jumps.m} jump-count coefficients", "/terminal/jump_counts")

    p = doc.get("picard", {})
    picard = PicardConfig(
        tol=float(p.get("tol", 1e-10)),
        max_iterations=int(p.get("max_iterations", 200)),
        beta=float(p.get("beta", 1.0)),
        divergence_patience=int(p.get("divergence_patience", 3)),
    )
    tree = doc.get("tree", {})

    ladder = None
    ladder_raw = dict(doc.get("ladder", {}))
    if "ladder" in doc and subcommand == "solve-infinite":
        lad = doc["ladder"]
        ladder = LadderConfig(
            tuple(lad["horizons"]),
            float(lad["dt"]),
            float(lad.get("beta", 1.0)),
            float(lad.get("epsilon", 0.02)),
            float(lad["tol"]),
            float(lad.get("r", 0.0)),
            PicardConfig(
                tol=float(p.get("tol", 1e-12)),
                max_iterations=picard.max_iterations,
                beta=float(lad.get("picard_beta", 4.0)),
                divergence_patience=picard.divergence_patience,
            ),
        )
        if gen is not None and gen.reach > 0 and not _aligned(gen.reach, ladder.dt):
            raise ConfigError(f"generator delay {gen.reach!r} is not a multiple of dt", "/generator/params")

    analysis = dict(doc["analysis"]) if "analysis" in doc else None
    if analysis is not None:
        if analysis["mode"] == "finite_measure" and "measure" not in analysis:
            raise ConfigError("finite_measure mode needs a measure", "/analysis/measure")
        if "C" not in analysis and gen is None:
            raise ConfigError("give analysis.C or a generator to read it from", "/analysis/C")

    return RunConfig(
        raw=doc,
        grid=grid,
        jumps=jumps,
        generator=gen,
        terminal=terminal,
        picard=picard,
        picard_beta_given="beta" in p,
        tree_mode=tree.get("mode", "auto"),
        node_budget=int(tree.get("node_budget", 2_000_000)),
        ladder=ladder,
        ladder_raw=ladder_raw,
        analysis=analysis,
    )


def _build_generator(doc: dict, grid: TimeGrid | None) -> GeneratorSpec:
    spec = doc["generator"]
    name = spec["name"]
    if name not in BUILTINS:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(BUILTINS)}", "/generator/name")
    params = dict(spec.get("params", {}))
    if name == "recursive_utility":
        if "pi" not in doc:
            raise ConfigError("recursive_utility needs a consumption path", "/pi")
        pi = doc["pi"]
        if len(pi["times"]) != len(pi["values"]) or not pi["times"]:
            raise ConfigError("pi times and values must be nonempty and of equal length", "/pi/values")
        params["pi_path"] = (tuple(pi["times"]), tuple(pi["values"]))
    if name == "linear" and "jumps" in doc:
        params.setdefault("intensities", list(doc["jumps"]["intensities"]))
    try:
        gen = builtin(name, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}", "/generator/params") from exc
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "/generator/params") from exc
    if grid is not None:
        if gen.reach > grid.delta + 1e-9 * grid.dt:
            raise ConfigError(
                f"{name} looks back {gen.reach!r} but the grid window is delta={grid.delta!r}", "/grid/delta"
            )
        if gen.reach > 0 and not _aligned(gen.reach, grid.dt):
            raise ConfigError(f"generator delay {gen.reach!r} is not a multiple of dt", "/generator/params")
    return gen


def analysis_inputs(cfg: RunConfig) -> dict:
    """Keyword arguments for :func:`contraction.search_beta` from the analysis section."""
    a = cfg.analysis
    mode = a["mode"]
    gen = cfg.generator
    if "C" in a:
        C = float(a["C"])
    else:
        C = gen.lipschitz_first_power if mode == "infinite" else gen.lipschitz
    horizon = float(a.get("T", cfg.grid.T if cfg.grid else 1.0))
    kwargs = {"s": float(a.get("s", cfg.grid.s if cfg.grid else 0.0)), "delta": float(a.get("delta", 0.0)),
              "r": float(a.get("r", 0.0)), "budget": int(a.get("budget", 200))}
    if "measure" in a:
        m = a["measure"]
        kwargs["mu"] = MeasureSpec(m["kind"], float(m.get("delta", 0.0)), float(m.get("t0", 0.0)))
    if not math.isfinite(C):
        raise ConfigError("Lipschitz constant must be finite", "/analysis/C")
    return {"mode": mode, "C": C, "horizon": horizon, **kwargs}
