from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import pytest

from mfdbsde.cli import main
from mfdbsde.config import parse_config
from mfdbsde.errors import ConfigError

ZERO = {"grid": {"T": 1, "N": 4}, "generator": {"name": "zero"}, "terminal": {"kind": "constant", "constant": 2.0}}


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return p


def _run(tmp_path, sub, doc, *extra, out="out"):
    cfg = _write(tmp_path, doc) if doc is not None else None
    args = [sub, "--out", str(tmp_path / out), *extra]
    if cfg is not None:
        args += ["--config", str(cfg)]
    return main(args), tmp_path / out


def test_minimal_config_is_valid():
    cfg = parse_config(json.dumps(ZERO))
    assert cfg.generator.name == "zero" and cfg.grid.N == 4


def test_misaligned_delta_points_at_grid_delta():
    doc = {"grid": {"T": 1, "N": 4, "delta": 0.3}, "generator": {"name": "zero"}}
    with pytest.raises(ConfigError) as exc:
        parse_config(json.dumps(doc))
    assert exc.value.path == "/grid/delta"


def test_unknown_generator_points_at_name():
    doc = {"grid": {"T": 1, "N": 4}, "generator": {"name": "foo"}}
    with pytest.raises(ConfigError) as exc:
        parse_config(json.dumps(doc))
    assert exc.value.path == "/generator/name"


@pytest.mark.parametrize(
    "doc,path",
    [
        ({**ZERO, "bogus": 1}, "/"),
        ({"grid": {"T": 1, "N": 4, "extra": 0}, "generator": {"name": "zero"}}, "/grid"),
        ({"grid": {"T": -1, "N": 4}, "generator": {"name": "zero"}}, "/grid/T"),
        ({**ZERO, "jumps": {"marks": [1], "intensities": [0.4, 0.1]}}, "/jumps/intensities"),
        ({"grid": {"T": 1, "N": 4}, "generator": {"name": "point_delay", "params": {"a": 0.1, "s": -0.5}}},
         "/grid/delta"),
        ({"grid": {"T": 1, "N": 4}, "generator": {"name": "recursive_utility", "params": {"c": 0.1}}}, "/pi"),
    ],
)
def test_config_errors_carry_pointer(doc, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(json.dumps(doc))
    assert exc.value.path == path


def test_bad_json_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    assert main(["solve-finite", "--config", str(p), "--out", str(tmp_path / "o")]) == 4


def test_analyze_strict_infeasible(tmp_path):
    code, out = _run(tmp_path, "analyze", {"analysis": {"mode": "finite_point", "C": 1, "T": 1, "s": 0}}, "--strict")
    assert code == 2
    rep = json.loads((out / "report.json").read_text())
    assert rep["feasible"] is False
    code, _ = _run(tmp_path, "analyze", {"analysis": {"mode": "finite_point", "C": 1, "T": 1, "s": 0}}, out="o2")
    assert code == 0


def test_solve_finite_zero_generator(tmp_path):
    doc = {**ZERO, "jumps": {"marks": [1.0], "intensities": [0.4]}}
    code, out = _run(tmp_path, "solve-finite", doc)
    assert code == 0
    with open(out / "trajectories.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "node_id", "prob", "Y", "Z", "K_1"]
    assert len(rows) == sum(4**i for i in range(5))
    assert all(float(r["Y"]) == pytest.approx(2.0, abs=1e-14) for r in rows)
    by_layer = {}
    for r in rows:
        by_layer[r["t"]] = by_layer.get(r["t"], 0.0) + float(r["prob"])
    assert math.fsum(by_layer.values()) == pytest.approx(5.0, abs=1e-9)
    assert all(abs(v - 1) < 1e-9 for v in by_layer.values())


def test_report_round_trip(tmp_path):
    doc = {"grid": {"T": 1, "N": 6}, "generator": {"name": "affine_meanfield", "params": {"a": 0.5}},
           "terminal": {"kind": "affine", "constant": 1.0, "brownian": 1.0}}
    code, out = _run(tmp_path, "solve-finite", doc)
    assert code == 0
    text = (out / "report.json").read_text()
    rep = json.loads(text)
    assert json.dumps(rep, indent=2, sort_keys=True, allow_nan=False) + "\n" == text
    assert rep["verification"]["passed"]


def test_non_convergence_writes_report(tmp_path):
    doc = {"grid": {"T": 1, "N": 4}, "generator": {"name": "affine_meanfield", "params": {"a": 0.5}},
           "terminal": {"kind": "constant", "constant": 1.0}, "picard": {"max_iterations": 2, "tol": 1e-30}}
    code, out = _run(tmp_path, "solve-finite", doc)
    assert code == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["trace"]["iterations"] == 2


def test_mean_mode_for_large_grids(tmp_path):
    doc = {"grid": {"T": 1, "N": 40}, "generator": {"name": "affine_meanfield", "params": {"a": 0.5}},
           "terminal": {"kind": "affine", "constant": 1.0, "brownian": 1.0}}
    code, out = _run(tmp_path, "solve-finite", doc)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["tree"]["mode"] == "mean"
    assert abs(rep["y0"] - math.exp(0.5)) <= 0.5 / 40


def test_outputs_are_byte_identical(tmp_path):
    doc = {"grid": {"T": 1, "N": 5, "delta": 0.4}, "jumps": {"marks": [1.0], "intensities": [0.7]},
           "generator": {"name": "linear", "params": {"y": 0.1, "z": 0.1, "k": 0.1, "mean_y": 0.1, "s": -0.4}},
           "terminal": {"kind": "affine", "constant": 1.0, "brownian": 0.5, "jump_counts": [1.0]}}
    outs = []
    for k, threads in enumerate(("1", "4", "1")):
        code, out = _run(tmp_path, "solve-finite", doc, "--threads", threads, out=f"o{k}")
        assert code == 0
        outs.append(((out / "report.json").read_bytes(), (out / "trajectories.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_solve_infinite(tmp_path):
    doc = {"generator": {"name": "forced_decay", "params": {"a": 1, "kappa": 1}},
           "ladder": {"horizons": [1, 2], "dt": 0.125, "beta": 1, "epsilon": 0.02, "tol": 0.1}}
    code, out = _run(tmp_path, "solve-infinite", doc)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["ladder"]["converged"] and rep["apriori"]["holds"]


def test_console_script_entry_point(tmp_path):
    cfg = _write(tmp_path, ZERO)
    proc = subprocess.run(
        [sys.executable, "-m", "mfdbsde.cli", "solve-finite", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr


def test_verify_subcommand(tmp_path):
    code, out = _run(tmp_path, "verify", None)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and all(s["violations"] == 0 for s in rep["suites"])
