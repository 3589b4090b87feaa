"""Command line entry point: ``polyabranch <experiment> --config PATH``.

Writes ``report.json`` (verdicts, resolved config and seed) and
``tables/*.csv`` under ``--out``. Exit status: 0 all checks pass,
1 a verification failed, 2 the configuration is invalid.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .boundary import convergence_experiment, verify_mixed_ibp
from .branching import check_cocycle, cocycle_search
from .campbell import (BivariateFunctional, One, UnsupportedOperation, exact_ibp,
                       intensity_measure, verify_ibp_battery, verify_palm, verify_superposition)
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, read_config
from .laplace import laplace_branching, laplace_empirical
from .rng import replicate
from .samplers import DIFFERENCE, EnumerationTooLarge
from .stats import Estimate, VerificationReport, _jsonable, bonferroni_z

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _block_functionals(cfg: ExperimentConfig) -> list:
    if cfg.functionals:
        return cfg.functionals
    return [BivariateFunctional(cfg.space.mask([b]).astype(float), One(), f"1_{name}")
            for b, name in enumerate(cfg.space.block_names)]


def _report_rows(reports) -> list:
    keys = ("name", "lhs", "rhs", "lhs_se", "rhs_se", "z_score", "defect", "threshold", "passed")
    return [{k: getattr(r, k) for k in keys} for r in reports]


def run_sample(cfg: ExperimentConfig):
    spec = cfg.spec
    counts = replicate(spec.draw, cfg.replicas, cfg.seed, (0,), workers=cfg.workers)
    ids = list(cfg.space.site_ids)
    rows = [dict(zip(ids, map(int, c))) for c in counts[: int(cfg.options.get("keep", 1000))]]
    total = BivariateFunctional(np.ones(cfg.space.n_sites), One(), "total")
    est = Estimate.from_values(counts.sum(axis=1))
    expected = Estimate.exact(float(intensity_measure(spec).weights.sum()))
    rep = VerificationReport.from_estimates("mean-total-count", est, expected, cfg.z_max, cfg.eps_exact,
                                            seed=cfg.seed, details={"functional": total.name})
    means = [{"site": s, "mean": float(m), "intensity": float(v)}
             for s, m, v in zip(ids, counts.mean(axis=0), intensity_measure(spec).weights)]
    return [rep], {"samples": rows, "site_means": means}


def run_verify_ibp(cfg: ExperimentConfig):
    spec = cfg.spec
    hs = _block_functionals(cfg)
    mode = cfg.options.get("mode", "mc")
    reports = []
    if mode in ("exact", "both"):
        reports += exact_ibp(spec, hs, eps=cfg.eps_exact)
    if mode in ("mc", "both"):
        reports += verify_ibp_battery(spec, hs, cfg.replicas, cfg.seed, cfg.z_max, workers=cfg.workers)
    if not reports:
        raise ConfigError(f"unknown verify-ibp mode {mode!r}")
    return reports, {"ibp": _report_rows(reports)}


def run_verify_palm(cfg: ExperimentConfig):
    spec = cfg.spec
    hs = _block_functionals(cfg)
    thr = bonferroni_z(cfg.z_max, len(hs))
    reports = []
    for i, h in enumerate(hs):
        rep = verify_palm(spec, h.g, [h.phi], cfg.replicas, cfg.seed + i, thr, workers=cfg.workers)[0]
        rep.name = f"palm[{h.name}]"
        reports.append(rep)
    return reports, {"palm": _report_rows(reports)}


def run_verify_cocycle(cfg: ExperimentConfig):
    z = cfg.process.z if cfg.process is not None else 1.0
    sign = cfg.process.sign if cfg.process is not None else 1
    rep = cocycle_search(cfg.kappa, cfg.rho, z, sign)
    eye = np.eye(cfg.space.n_sites)
    rows = []
    for a in range(cfg.space.n_sites):
        for b in range(a, cfg.space.n_sites):
            r = check_cocycle(cfg.kappa, eye[a], eye[b], cfg.rho, z, sign)
            rows.append({"a": cfg.space.site_ids[a], "b": cfg.space.site_ids[b], "defect": r.defect})
    return [rep], {"cocycle_pairs": rows}


def run_laplace(cfg: ExperimentConfig):
    spec = cfg.spec
    refs = cfg.options.get("functions") or list(cfg.functions)
    if not refs:
        raise ConfigError("laplace needs options.functions or declared functions")
    fs = [cfg.function(r) for r in refs]
    emp = laplace_empirical(spec.draw, fs, cfg.replicas, cfg.seed, workers=cfg.workers)
    thr = bonferroni_z(cfg.z_max, len(fs))
    reports, rows = [], []
    for ref, f, e in zip(refs, fs, emp):
        exact = laplace_branching(spec.process, cfg.kappa, f)
        rep = VerificationReport.from_estimates(f"laplace[{ref}]", e, Estimate.exact(exact), thr,
                                                cfg.eps_exact, seed=cfg.seed)
        reports.append(rep)
        rows.append({"function": str(ref), "analytic": exact, "empirical": e.mean, "stderr": e.stderr,
                     "z": rep.z_score})
    return reports, {"laplace": rows}


def run_superposition(cfg: ExperimentConfig):
    n = cfg.replicas if cfg.options.get("mc", False) else 0
    rep = verify_superposition(cfg.spec, cfg.options.get("blocks"), n, cfg.seed, cfg.eps_exact)
    rows = [{"block": i, "defect": d} for i, d in enumerate(rep.details["per_block_defect"])]
    return [rep], {"superposition": rows}


def run_boundary(cfg: ExperimentConfig):
    if cfg.process is None or cfg.process.family != DIFFERENCE:
        raise ConfigError("boundary convergence is implemented for the difference family")
    if cfg.exhaustion is None:
        raise ConfigError("boundary needs an exhaustion")
    if "f" not in cfg.options:
        raise ConfigError("boundary needs options.f")
    f = cfg.function(cfg.options["f"])
    bound = float(cfg.options.get("bound", 1e-2))
    reports, tables = [], {}
    for u in cfg.options.get("u", [0.25, 0.5]):
        table = convergence_experiment(cfg.rho, f, cfg.exhaustion, float(u), bound=bound)
        errs = table.errors()
        reports.append(VerificationReport(f"boundary[u={u}]", errs[-1] if errs else float("nan"), 0.0,
                                          defect=errs[-1] if errs else float("nan"), passed=table.passed,
                                          threshold=bound, details={"z_limit": table.z_limit}))
        tables[f"boundary_u{u}"] = table.rows
    return reports, tables


def run_mixed_ibp(cfg: ExperimentConfig):
    mix = cfg.mixture()
    hs = _block_functionals(cfg)
    reports = verify_mixed_ibp(mix, hs, cfg.replicas, cfg.seed, cfg.exhaustion,
                               cfg.options.get("exclude"), cfg.z_max, workers=cfg.workers)
    return reports, {"mixed_ibp": _report_rows(reports)}


RUNNERS = {"sample": run_sample, "verify-ibp": run_verify_ibp, "verify-palm": run_verify_palm,
           "verify-cocycle": run_verify_cocycle, "laplace": run_laplace,
           "superposition": run_superposition, "boundary": run_boundary, "mixed-ibp": run_mixed_ibp}


def write_tables(out: Path, tables: dict) -> list:
    tdir = out / "tables"
    tdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in tables.items():
        path = tdir / f"{name}.csv"
        rows = _jsonable(rows)
        fields = list(dict.fromkeys(k for r in rows for k in r)) if rows else []
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        written.append(str(path.relative_to(out)))
    return written


def run(cfg: ExperimentConfig, out) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reports, tables = RUNNERS[cfg.experiment](cfg)
    passed = all(r.passed for r in reports)
    doc = {"experiment": cfg.experiment, "seed": cfg.seed, "passed": passed,
           "config": cfg.raw, "reports": [r.to_dict() for r in reports],
           "tables": write_tables(out, tables)}
    (out / "report.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True))
    for r in reports:
        print(r.line())
    return EXIT_PASS if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyabranch", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON config document")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config, experiment=args.experiment, seed=args.seed,
                          replicas=args.replicas, workers=args.workers)
        return run(cfg, args.out)
    except (ConfigError, UnsupportedOperation, EnumerationTooLarge) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
