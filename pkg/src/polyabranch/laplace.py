"""Laplace functionals L(f) = E exp(-mu(f)), analytic and empirical.

Closed forms, per unit of rho at a site with value f:

* Poisson     log L = -∫ (1 - e^{-f}) drho
* difference  log L =  ∫ log((1 + z e^{-f}) / (1 + z)) drho
* sum         log L =  ∫ log((1 - z) / (1 - z e^{-f})) drho

The sum form follows from the compound-Poisson representation (cluster
rate -log(1-z), logarithmic pile sizes); it is checked against the exact
count law in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branching import BranchingKernel, kernel_apply
from .rng import CHUNK, replicate
from .samplers import DIFFERENCE, POISSON, SUM, ProcessSpec
from .space import values_of
from .stats import Estimate


def log_laplace(spec: ProcessSpec, f) -> float:
    v = np.asarray(values_of(f), dtype=float)
    w = spec.weights
    on = w > 0
    v, w = v[on], w[on]
    e = np.exp(-v)
    z = spec.z
    if spec.family == POISSON:
        terms = np.expm1(-v)
    elif spec.family == DIFFERENCE:
        terms = np.log1p(z * e) - np.log1p(z)
    else:
        if not z < 1:
            raise ValueError("the sum family needs z < 1")
        terms = np.log1p(-z) - np.log1p(-z * e)
    return float(w @ terms)


def laplace_analytic(spec: ProcessSpec, f) -> float:
    return float(np.exp(log_laplace(spec, f)))


@dataclass(frozen=True)
class _LaplaceStat:
    sampler: object
    fs: tuple

    def __call__(self, rng, size):
        c = self.sampler(rng, size)
        return np.exp(-(c @ np.array(self.fs).T))


def laplace_empirical(sampler, f, n: int, seed: int = 0, key=(8,), chunk: int = CHUNK,
                      workers: int = 1):
    """Mean of exp(-mu(f)) over n draws of ``sampler(rng, size)``.

    ``f`` may be a list of functions; then a list of Estimates is returned.
    """
    many = isinstance(f, (list, tuple))
    fs = tuple(np.asarray(values_of(g), dtype=float) for g in (f if many else [f]))
    vals = replicate(_LaplaceStat(sampler, fs), n, seed, key, chunk, workers)
    est = [Estimate.from_values(vals[:, j]) for j in range(len(fs))]
    return est if many else est[0]


def branched_exponent(kappa: BranchingKernel, f, spec: ProcessSpec | None = None) -> np.ndarray:
    """g = -log kappa(e^{-f}); finite wherever the reference measure lives."""
    k = kernel_apply(kappa, np.exp(-np.asarray(values_of(f), dtype=float))).values
    live = np.ones_like(k, dtype=bool) if spec is None else spec.weights > 0
    if np.any(k[live] <= 0):
        raise ValueError("kappa(e^{-f}) vanishes on the support of rho")
    with np.errstate(divide="ignore"):
        g = -np.log(k)
    return np.where(live, g, np.where(np.isfinite(g), g, 0.0))


def laplace_branching(spec: ProcessSpec, kappa: BranchingKernel, f) -> float:
    """L of the branched process: the underlying transform at -log kappa(e^{-f})."""
    return laplace_analytic(spec, branched_exponent(kappa, f, spec))
