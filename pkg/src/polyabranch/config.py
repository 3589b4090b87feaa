"""Experiment configuration documents (JSON).

Layout::

    {
      "experiment": "verify-ibp",
      "seed": 0, "replicas": 10000, "workers": 1,
      "tolerances": {"eps_exact": 1e-12, "z_max": 4.0},
      "space": {"kind": "discrete", "atoms": ["a", "b", "c"], "blocks": ["L", "L", "R"]},
      "measure": {"weights": [1, 1, 1]},
      "kernel": {"variant": "partition"},
      "process": {"family": "difference", "z": 1.0},
      "functions": {"fa": {"a": 1.0}},
      "functionals": [{"g": "fa", "phi": {"kind": "exp", "f": [0.3, 0, 0]}}],
      "exhaustion": {"kind": "geometric"},
      "options": {...experiment specific...}
    }

Gridded boxes use ``{"kind": "grid", "sides": [...], "cells": [...]}``
with optional ``blocks`` (one label per cell) and a measure given by
``{"density": c}`` or explicit cell ``weights``. Functions are a site
list, a ``{site_id: value}`` map, or ``{"indicator": [block, ...]}``;
strings refer to entries of ``functions``.

Random streams are Philox generators keyed by (seed, stream, chunk); the
chunk size is fixed, so results do not depend on ``workers``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .boundary import MixtureSpec
from .branching import BranchingKernel, smoothing_kernel
from .campbell import (BivariateFunctional, CountIndicator, CountPolynomial, ExpCount, One,
                       PapangelouSpec)
from .samplers import DIFFERENCE, POISSON, SUM, ProcessSpec
from .space import BaseMeasure, Exhaustion, Space
from .stats import EPS_EXACT, Z_MAX

EXPERIMENTS = ("sample", "verify-ibp", "verify-palm", "verify-cocycle", "laplace",
               "superposition", "boundary", "mixed-ibp")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    raw: dict
    experiment: str
    seed: int
    replicas: int
    workers: int
    eps_exact: float
    z_max: float
    space: Space
    rho: BaseMeasure
    kappa: BranchingKernel
    process: ProcessSpec | None
    functions: dict = field(default_factory=dict)
    functionals: list = field(default_factory=list)
    exhaustion: Exhaustion | None = None
    options: dict = field(default_factory=dict)

    @property
    def spec(self) -> PapangelouSpec:
        if self.process is None:
            raise ConfigError("this experiment needs a 'process' section")
        return PapangelouSpec(self.process, self.kappa)

    def function(self, ref) -> np.ndarray:
        return parse_function(ref, self.space, self.functions)

    def mixture(self) -> MixtureSpec:
        mix = self.options.get("mixture")
        if not mix or "zs" not in mix:
            raise ConfigError("mixed-ibp needs options.mixture.zs")
        try:
            return MixtureSpec(self.spec, tuple(mix["zs"]), mix.get("probs"))
        except ValueError as e:
            raise ConfigError(str(e)) from e


def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing '{key}' in {where}")
    return d[key]


def parse_space(d: dict) -> Space:
    kind = _need(d, "kind", "space")
    if kind == "discrete":
        return Space.discrete(_need(d, "atoms", "space"), d.get("blocks"), d.get("coords"))
    if kind == "grid":
        return Space.grid(_need(d, "sides", "space"), _need(d, "cells", "space"), d.get("origin"),
                          d.get("blocks"))
    raise ConfigError(f"unknown space kind {kind!r}")


def parse_function(ref, space: Space, named: dict | None = None) -> np.ndarray:
    named = named or {}
    if isinstance(ref, str):
        if ref not in named:
            raise ConfigError(f"undeclared function {ref!r}")
        return named[ref]
    if isinstance(ref, dict):
        if "indicator" in ref:
            return space.mask(ref["indicator"]).astype(float)
        v = np.zeros(space.n_sites)
        for k, val in ref.items():
            v[space.site(k)] = float(val)
        return v
    v = np.asarray(ref, dtype=float)
    if v.shape != (space.n_sites,):
        raise ConfigError(f"function needs {space.n_sites} site values")
    return v


def parse_measure(d: dict, space: Space) -> BaseMeasure:
    if "density" in d:
        return BaseMeasure.from_density(space, float(d["density"]))
    w = d.get("weights")
    if w is None:
        raise ConfigError("measure needs 'weights' or 'density'")
    return BaseMeasure(space, parse_function(w, space))


def parse_kernel(d: dict, space: Space) -> BranchingKernel:
    variant = d.get("variant", "identity")
    H = d.get("H")
    H = None if H is None else parse_function(H, space)
    if variant == "identity":
        return BranchingKernel.identity(space)
    if variant == "partition":
        return BranchingKernel.partition(space, H)
    if variant == "trivial":
        return BranchingKernel.trivial(space, H)
    if variant == "isotropic":
        return BranchingKernel.isotropic(space, int(d.get("n_bins", 2)), H)
    if variant == "permutation":
        return BranchingKernel.permutation(space, H)
    if variant == "smoothing":
        return smoothing_kernel(space, float(d.get("weight", 0.5)))
    if variant == "custom":
        return BranchingKernel.custom(space, _need(d, "matrix", "kernel"), d.get("conditional"))
    raise ConfigError(f"unknown kernel variant {variant!r}")


def parse_phi(d: dict, space: Space, named: dict):
    kind = d.get("kind", "one")
    if kind == "one":
        return One()
    if kind == "exp":
        return ExpCount(parse_function(_need(d, "f", "phi"), space, named))
    if kind == "indicator":
        return CountIndicator(space.mask(d.get("region")), tuple(int(k) for k in _need(d, "ks", "phi")))
    if kind == "poly":
        return CountPolynomial(space.mask(d.get("region")), tuple(float(c) for c in _need(d, "coeffs", "phi")))
    raise ConfigError(f"unknown phi kind {kind!r}")


def parse_exhaustion(d: dict | None, space: Space) -> Exhaustion | None:
    if d is None:
        return None
    if d.get("kind", "geometric") == "geometric" and "levels" not in d:
        return Exhaustion.geometric(space, d.get("order"))
    return Exhaustion(space, tuple(tuple(level) for level in _need(d, "levels", "exhaustion")))


def load_config(doc: dict, **overrides) -> ExperimentConfig:
    """Validate and resolve a config document. ``overrides`` (seed, replicas,
    workers, experiment) take precedence when not None."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(doc)
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    try:
        experiment = _need(raw, "experiment", "config")
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        seed = int(raw.get("seed", 0))
        replicas = int(raw.get("replicas", 10_000))
        workers = int(raw.get("workers", 1))
        if seed < 0 or seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if replicas < 1 or workers < 1:
            raise ConfigError("replicas and workers must be >= 1")
        tol = raw.get("tolerances", {})
        space = parse_space(_need(raw, "space", "config"))
        rho = parse_measure(_need(raw, "measure", "config"), space)
        kappa = parse_kernel(raw.get("kernel", {}), space)
        process = None
        if "process" in raw:
            p = raw["process"]
            family = _need(p, "family", "process")
            if family not in (POISSON, SUM, DIFFERENCE):
                raise ConfigError(f"unknown family {family!r}")
            process = ProcessSpec(family, rho, float(p.get("z", 1.0)), p.get("region"))
        named = {k: parse_function(v, space) for k, v in raw.get("functions", {}).items()}
        functionals = []
        for i, h in enumerate(raw.get("functionals", [])):
            functionals.append(BivariateFunctional(parse_function(_need(h, "g", "functional"), space, named),
                                                   parse_phi(h.get("phi", {}), space, named),
                                                   h.get("name", str(i))))
        exhaustion = parse_exhaustion(raw.get("exhaustion"), space)
        raw["seed"], raw["replicas"], raw["workers"] = seed, replicas, workers
        return ExperimentConfig(raw, experiment, seed, replicas, workers,
                                float(tol.get("eps_exact", EPS_EXACT)), float(tol.get("z_max", Z_MAX)),
                                space, rho, kappa, process, named, functionals, exhaustion,
                                raw.get("options", {}))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def read_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config: {e}") from e
    return load_config(doc, **overrides)
