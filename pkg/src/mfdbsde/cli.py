"""Command line entry point: ``mfdbsde <subcommand> --config <path> --out <dir>``.

Exit codes: 0 success, 1 failed invariant suite (``verify``), 2 infeasible
under ``analyze --strict``, 3 solver non-convergence or divergence (the
report is still written), 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import contraction as ct
from .basis import ScenarioTree, build_tree
from .config import SUBCOMMANDS, RunConfig, analysis_inputs, parse_config
from .errors import BudgetError, ConfigError, MFDBSDEError, NonConvergenceError
from .generators import Measure, TwoPoint
from .infinite import apriori_check, decay_check, solve_infinite
from .invariants import run_suites
from .picard import PicardConfig, solve_finite, solve_mean_recursion, terminal_from_levels, verify_solution
from .processes import SolutionTriple, norm_H2_beta, norm_L2_beta, norm_S2_beta

log = logging.getLogger("mfdbsde")

EXIT_OK, EXIT_SUITE, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_CONFIG = 0, 1, 2, 3, 4


def _clean(obj):
    """Recursively turn numpy scalars into Python ones and non-finite floats into None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_report(out: Path, report: dict) -> None:
    text = json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False)
    (out / "report.json").write_text(text + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_tree_csv(out: Path, sol: SolutionTriple) -> int:
    tree = sol.tree
    m = tree.m
    times = tree.grid.times
    rows = 0
    with open(out / "trajectories.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node_id", "prob", "Y", "Z"] + [f"K_{j + 1}" for j in range(m)])
        for i in range(tree.N + 1):
            probs = tree.cum_prob[i]
            base = tree.offset(i)
            Y = sol.Y.layers[i]
            last = i == tree.N
            for k in range(tree.layer_size(i)):
                row = [_fmt(times[i]), str(base + k), _fmt(probs[k]), _fmt(Y[k])]
                if last:
                    row += [""] * (1 + m)
                else:
                    row += [_fmt(sol.Z.layers[i][k])] + [_fmt(v) for v in sol.K.layers[i][k]]
                w.writerow(row)
                rows += 1
    return rows


def write_mean_csv(out: Path, times: np.ndarray, mean_y, mean_z, mean_k) -> None:
    m = mean_k.shape[1] if mean_k.ndim == 2 else 0
    with open(out / "trajectories.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node_id", "prob", "Y", "Z"] + [f"K_{j + 1}" for j in range(m)])
        N = len(times) - 1
        for i in range(N + 1):
            row = [_fmt(times[i]), str(i), _fmt(1.0), _fmt(mean_y[i])]
            if i == N:
                row += [""] * (1 + m)
            else:
                row += [_fmt(mean_z[i])] + [_fmt(v) for v in mean_k[i]]
            w.writerow(row)


# --------------------------------------------------------------------------
# subcommands


def _pick_tree_mode(cfg: RunConfig) -> str:
    gen, grid = cfg.generator, cfg.grid
    b = 2 * (cfg.jumps.m + 1)
    nodes = sum(b**i for i in range(grid.N + 1))
    collapsible = gen.noise_free and cfg.terminal_deterministic
    meanable = gen.noise_free and (gen.mean_only or cfg.terminal_deterministic)
    mode = cfg.tree_mode
    if mode == "auto":
        if nodes <= cfg.node_budget:
            return "full"
        if collapsible:
            return "collapsed"
        if meanable:
            return "mean"
        raise ConfigError(
            f"full tree needs {nodes} nodes > budget {cfg.node_budget} and no exact reduction applies",
            "/tree/node_budget",
        )
    if mode == "collapsed" and not collapsible:
        raise ConfigError("collapsed tree needs a deterministic terminal value and a noise-free driver", "/tree/mode")
    if mode == "mean" and not meanable:
        raise ConfigError("mean recursion needs a mean-only driver or a deterministic terminal value", "/tree/mode")
    if mode == "full" and nodes > cfg.node_budget:
        raise ConfigError(f"full tree needs {nodes} nodes > budget {cfg.node_budget}", "/tree/node_budget")
    return mode


def _finite_beta(cfg: RunConfig, report: dict) -> float:
    """Norm weight for the stopping rule: config, else the analyzer, else 1."""
    if cfg.picard_beta_given:
        report["beta_source"] = "config"
        return cfg.picard.beta
    gen, grid = cfg.generator, cfg.grid
    if isinstance(gen.delay, TwoPoint):
        rep = ct.search_beta("special_two_point", gen.lipschitz, grid.T, delta=gen.delay.delta)
    elif isinstance(gen.delay, Measure):
        mu = ct.MeasureSpec(gen.delay.kind, gen.delay.delta, gen.delay.t0)
        rep = ct.search_beta("finite_measure", gen.lipschitz, grid.T, mu=mu)
    else:
        rep = ct.search_beta("finite_point", gen.lipschitz, grid.T, s=-gen.reach)
    summary = rep.to_dict()
    summary.pop("trace")
    report["analysis"] = summary
    if rep.feasible:
        report["beta_source"] = "analyzer"
        return rep.beta
    report["beta_source"] = "default"
    report["warnings"].append(
        f"contraction condition not met (best value {rep.value:.6g}); stopping rule uses beta=1"
    )
    return 1.0


def run_solve_finite(cfg: RunConfig, out: Path) -> int:
    gen, grid = cfg.generator, cfg.grid
    report: dict = {"command": "solve-finite", "generator": gen.name, "params": gen.params, "warnings": []}
    report["lipschitz"] = {"declared_squared": gen.lipschitz, "form": gen.form}
    beta = _finite_beta(cfg, report)
    pc = cfg.picard
    picard = PicardConfig(pc.tol, pc.max_iterations, beta, pc.divergence_patience)
    mode = _pick_tree_mode(cfg)
    report["tree"] = {"mode": mode, "N": grid.N, "T": grid.T, "marks": cfg.jumps.m}
    g = cfg.terminal_function()
    try:
        if mode == "mean":
            res = solve_mean_recursion(grid, cfg.jumps, gen, g, picard)
            report["trace"] = res.trace.to_dict()
            report["y0"] = res.y0
            report["notes"] = ["rows of trajectories.csv are layer means; first distance is a mean-path lower bound"]
            write_mean_csv(out, res.times, res.mean_y, res.mean_z, res.mean_k)
            write_report(out, report)
            return EXIT_OK
        try:
            tree = build_tree(grid, cfg.jumps, node_budget=cfg.node_budget, collapsed=(mode == "collapsed"))
        except BudgetError as exc:
            raise ConfigError(str(exc), "/tree/node_budget") from exc
        xi = terminal_from_levels(tree, g)
        result = solve_finite(tree, gen, xi, picard)
    except NonConvergenceError as exc:
        report["trace"] = exc.trace.to_dict() if exc.trace is not None else None
        report["error"] = str(exc)
        write_report(out, report)
        return EXIT_NONCONVERGENCE
    sol = result.solution
    report["tree"]["nodes"] = tree.node_count
    report["trace"] = result.trace.to_dict()
    report["y0"] = sol.y0
    report["norms"] = {
        "S2": norm_S2_beta(sol.Y, beta),
        "L2": norm_L2_beta(sol.Z, beta),
        "H2": norm_H2_beta(sol.K, beta),
    }
    # the stopping rule bounds a squared distance, so one-step residuals scale with its root
    verify_tol = 10.0 * math.sqrt(pc.tol)
    report["verification"] = {"tol": verify_tol, **verify_solution(tree, gen, xi, sol, verify_tol).to_dict()}
    report["rows"] = write_tree_csv(out, sol)
    write_report(out, report)
    return EXIT_OK


def run_solve_infinite(cfg: RunConfig, out: Path) -> int:
    gen, ladder = cfg.generator, cfg.ladder
    report: dict = {"command": "solve-infinite", "generator": gen.name, "params": gen.params, "warnings": []}
    search = ct.search_beta("infinite", gen.lipschitz_first_power, r=ladder.r)
    summary = search.to_dict()
    summary.pop("trace")
    report["analysis"] = summary
    report["beta"], report["epsilon"] = ladder.beta, ladder.epsilon
    try:
        res = solve_infinite(gen, cfg.jumps, ladder, node_budget=cfg.node_budget)
    except NonConvergenceError as exc:
        report["ladder"] = exc.trace.to_dict() if exc.trace is not None else None
        report["error"] = str(exc)
        write_report(out, report)
        return EXIT_NONCONVERGENCE
    except BudgetError as exc:
        raise ConfigError(str(exc), "/ladder/dt") from exc
    report["ladder"] = res.to_dict()
    report["warnings"].extend(res.warnings)
    report["y0"] = res.solution.y0
    bp = float(cfg.ladder_raw.get("decay_beta_prime", ladder.beta))
    bd = float(cfg.ladder_raw.get("decay_beta", 1.5 * ladder.beta))
    report["decay"] = {"beta_prime": bp, "beta": bd, **decay_check(res.solution, bp, bd).to_dict()}
    report["apriori"] = apriori_check(res.solution, gen, ladder.beta, ladder.epsilon).to_dict()
    report["rows"] = write_tree_csv(out, res.solution.triple)
    write_report(out, report)
    return EXIT_OK


def run_analyze(cfg: RunConfig, out: Path, strict: bool) -> int:
    kw = analysis_inputs(cfg)
    rep = ct.search_beta(kw.pop("mode"), kw.pop("C"), kw.pop("horizon"), **kw)
    report = {"command": "analyze", "input": cfg.analysis, **rep.to_dict()}
    write_report(out, report)
    if strict and not rep.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def run_verify(out: Path, seed: int = 0, trials: int = 100) -> int:
    results = run_suites(seed=seed, trials=trials)
    ok = all(r.passed for r in results)
    write_report(out, {"command": "verify", "seed": seed, "passed": ok, "suites": [r.to_dict() for r in results]})
    return EXIT_OK if ok else EXIT_SUITE


def run(subcommand: str, config_text: str | None, out: Path, *, strict: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if subcommand == "verify":
        return run_verify(out)
    cfg = parse_config(config_text or "", subcommand)
    if subcommand == "solve-finite":
        return run_solve_finite(cfg, out)
    if subcommand == "solve-infinite":
        return run_solve_infinite(cfg, out)
    return run_analyze(cfg, out, strict)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfdbsde", description="Delayed mean-field BSDE solver with jumps.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration (not needed for verify)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--strict", action="store_true", help="analyze: exit 2 when infeasible")
    p.add_argument("--threads", type=int, default=None, help="cap numeric library threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        text = None
        if args.subcommand != "verify":
            if args.config is None:
                raise ConfigError("--config is required", "/")
            try:
                text = args.config.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}", "/") from exc
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1", "/")
        with threadpool_limits(limits=args.threads):
            return run(args.subcommand, text, args.out, strict=args.strict)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MFDBSDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
