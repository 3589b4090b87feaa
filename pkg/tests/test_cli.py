import json
import subprocess
import sys

import pytest

from polyabranch.cli import main
from polyabranch.config import ConfigError, load_config

BASE = {
    "seed": 11,
    "replicas": 4000,
    "space": {"kind": "discrete", "atoms": ["a", "b", "c", "d"], "blocks": ["L", "L", "R", "R"]},
    "measure": {"weights": [1, 2, 1, 1]},
    "kernel": {"variant": "partition"},
    "process": {"family": "sum", "z": 0.5},
    "functions": {"fa": {"a": 1.0}, "f2": [0.2, 0.5, 0.0, 1.0]},
    "functionals": [
        {"g": "fa", "name": "a"},
        {"g": {"indicator": ["L"]}, "phi": {"kind": "exp", "f": "f2"}, "name": "L-exp"},
        {"g": [0, 0, 1, 1], "phi": {"kind": "indicator", "region": ["R"], "ks": [1]}, "name": "R-ind"},
    ],
    "exhaustion": {"kind": "geometric"},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(tmp_path, kind, doc, *extra):
    out = tmp_path / kind
    code = main([kind, "--config", write(tmp_path, doc), "--out", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report


def test_cocycle_identity_exits_zero(tmp_path):
    code, rep = run(tmp_path, "verify-cocycle", {**BASE, "kernel": {"variant": "identity"}})
    assert code == 0 and rep["passed"]


def test_cocycle_smoothing_exits_one(tmp_path):
    code, rep = run(tmp_path, "verify-cocycle", {**BASE, "kernel": {"variant": "smoothing"}})
    assert code == 1 and not rep["passed"]
    assert rep["reports"][0]["defect"] > 1e-3


def test_malformed_config_exits_two(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["verify-ibp", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert run(tmp_path, "verify-ibp", {**BASE, "kernel": {"variant": "wobbly"}})[0] == 2
    assert run(tmp_path, "verify-ibp", {**BASE, "functionals": [{"g": "nope"}]})[0] == 2
    assert run(tmp_path, "verify-ibp", {**BASE, "replicas": 0})[0] == 2


def test_report_embeds_config_and_seed(tmp_path):
    code, rep = run(tmp_path, "verify-ibp", BASE, "--seed", "5")
    assert code == 0
    assert rep["seed"] == 5 and rep["config"]["seed"] == 5
    assert rep["config"]["space"] == BASE["space"]
    assert (tmp_path / "verify-ibp" / "tables" / "ibp.csv").exists()


def test_reports_are_bit_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    cfg = write(tmp_path, BASE)
    main(["laplace", "--config", cfg, "--out", str(a), "--workers", "1"])
    main(["laplace", "--config", cfg, "--out", str(b), "--workers", "2"])
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    ra["config"].pop("workers"), rb["config"].pop("workers")
    assert ra == rb


@pytest.mark.parametrize("kind,extra", [
    ("sample", {}),
    ("verify-palm", {}),
    ("laplace", {"options": {"functions": ["fa", "f2"]}}),
    ("superposition", {"options": {"mc": True}}),
    ("verify-ibp", {"options": {"mode": "both"}, "process": {"family": "difference", "z": 1.0}}),
])
def test_experiments_pass(tmp_path, kind, extra):
    code, rep = run(tmp_path, kind, {**BASE, **extra})
    assert code == 0, rep["reports"]


def test_boundary_experiment(tmp_path):
    doc = {**BASE,
           "space": {"kind": "discrete", "atoms": [f"x{i}" for i in range(16)]},
           "measure": {"weights": [8] * 16},
           "kernel": {"variant": "identity"},
           "process": {"family": "difference", "z": 1.0},
           "functions": {}, "functionals": [],
           "options": {"f": {"x0": 0.5}, "u": [0.25, 0.5], "bound": 0.05}}
    code, rep = run(tmp_path, "boundary", doc)
    assert code == 0
    assert (tmp_path / "boundary" / "tables" / "boundary_u0.25.csv").exists()


def test_mixed_ibp_experiment(tmp_path):
    atoms = ["a", "b"] + [f"x{i}" for i in range(31)]
    doc = {**BASE,
           "space": {"kind": "discrete", "atoms": atoms, "blocks": ["B", "B"] + atoms[2:]},
           "measure": {"weights": [1, 2] + [32] * 31},
           "functions": {}, "functionals": [{"g": {"indicator": ["B"]}, "name": "B"}],
           "options": {"mixture": {"zs": [0.3, 0.6], "probs": [0.5, 0.5]}, "exclude": 0}}
    code, rep = run(tmp_path, "mixed-ibp", doc)
    assert code == 0, rep["reports"]
    assert rep["reports"][0]["details"]["z_allowance"] > 0


def test_palm_difference_is_config_error(tmp_path):
    code, _ = run(tmp_path, "verify-palm", {**BASE, "process": {"family": "difference", "z": 1.0}})
    assert code == 2


def test_grid_config_resolves():
    cfg = load_config({**BASE, "experiment": "sample",
                       "space": {"kind": "grid", "sides": [1, 1], "cells": [3, 3]},
                       "measure": {"density": 2.0}, "kernel": {"variant": "permutation"},
                       "functions": {}, "functionals": []})
    assert cfg.space.n_sites == 9 and cfg.rho.mass() == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        load_config({**BASE, "experiment": "sample", "space": {"kind": "torus"}})


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, {**BASE, "kernel": {"variant": "identity"}})
    r = subprocess.run([sys.executable, "-m", "polyabranch", "verify-cocycle", "--config", cfg,
                        "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0 and "PASS" in r.stdout
