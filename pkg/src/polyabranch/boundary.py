"""Conditioned branched Pólya processes and the limit parameter Z.

gamma_n keeps the configuration outside B_n and redraws the inside given
its total count k: for the difference family the inside law is
∝ prod_x C(rho(x), nu(x)) (multivariate hypergeometric), for the sum family
a k-step Pólya urn on rho. Both are then branched by kappa, which keeps
the points inside the invariant set B_n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .branching import branch_counts, branch_pmf
from .campbell import PapangelouSpec, as_functionals
from .laplace import laplace_analytic
from .rng import CHUNK, replicate
from .samplers import (DIFFERENCE, SUM, CountPmf, PointConfiguration, ProcessSpec, enumerate_counts,
                       urn_place)
from .space import BaseMeasure, Exhaustion, values_of
from .stats import Z_MAX, Estimate, VerificationReport, bonferroni_z, columns


ZERO_ERROR = 1e-15


class Infeasible(ValueError):
    pass


# -- conditioned sampling ----------------------------------------------------------

def conditioned_counts(spec: PapangelouSpec, exhaustion: Exhaustion, n: int, k: int, rng,
                       size: int, mu=None) -> np.ndarray:
    """Rows drawn from gamma_n(mu, ·) given zeta_{B_n} = k."""
    inside = exhaustion.mask(n)
    idx = np.flatnonzero(inside)
    r = spec.process.rho.weights[idx]
    if k < 0:
        raise Infeasible("k must be >= 0")
    out = np.zeros((size, spec.space.n_sites), dtype=np.int64)
    if mu is not None:
        outside = np.asarray(getattr(mu, "counts", mu), dtype=np.int64)
        out[:, ~inside] = outside[~inside]
    if k == 0:
        return out
    if spec.family == DIFFERENCE:
        ri = spec.process.rho.int_weights()[idx]
        if k > ri.sum():
            raise Infeasible(f"k={k} exceeds rho(B_n)={ri.sum()}")
        nu = rng.multivariate_hypergeometric(ri, k, size=size)
    elif spec.family == SUM:
        if r.sum() <= 0:
            raise Infeasible("rho(B_n) = 0 admits no points")
        nu = urn_place(r, np.full(size, k), rng)
    else:
        raise ValueError("conditioning is defined for the Pólya families")
    inner = np.zeros_like(out)
    inner[:, idx] = nu
    return out + branch_counts(inner, spec.kappa, rng)


def conditioned_pmf(spec: PapangelouSpec, exhaustion: Exhaustion, n: int, k: int, mu=None,
                    branched: bool = True) -> CountPmf:
    """Exact law of gamma_n(mu, ·) given zeta_{B_n} = k (discrete spaces)."""
    inside = exhaustion.mask(n)
    idx = np.flatnonzero(inside)
    r = spec.process.rho.weights[idx]
    if spec.family == DIFFERENCE:
        caps = spec.process.rho.int_weights()[idx]
        if k > caps.sum():
            raise Infeasible(f"k={k} exceeds rho(B_n)={caps.sum()}")
    elif spec.family == SUM:
        caps = np.where(r > 0, k, 0)
    else:
        raise ValueError("conditioning is defined for the Pólya families")
    nu = enumerate_counts(caps, k)
    nu = nu[nu.sum(axis=1) == k]
    if len(nu) == 0:
        raise Infeasible("no configuration carries the requested count")
    if spec.family == DIFFERENCE:
        logw = _log_choose(caps, nu).sum(axis=1)
    else:
        # Dirichlet-multinomial, the law of k urn draws started from rho
        rr = np.where(r > 0, r, 1.0)
        logw = np.where(r > 0, gammaln(rr + nu) - gammaln(rr) - gammaln(nu + 1), 0.0).sum(axis=1)
    w = np.exp(logw - logw.max())
    full = np.zeros((len(nu), spec.space.n_sites), dtype=np.int64)
    if mu is not None:
        outside = np.asarray(getattr(mu, "counts", mu), dtype=np.int64)
        full[:, ~inside] = outside[~inside]
    full[:, idx] = nu
    pmf = CountPmf(np.arange(spec.space.n_sites), full, w / w.sum(), 0.0, None, spec.space.n_sites)
    return branch_pmf(pmf, spec.kappa) if branched else pmf


def conditioned_sampler(spec: PapangelouSpec, exhaustion: Exhaustion, n: int, k: int, rng,
                        mu=None) -> PointConfiguration:
    return PointConfiguration(spec.space, conditioned_counts(spec, exhaustion, n, k, rng, 1, mu)[0])


# -- exact conditioned Laplace transform (difference family) -----------------------

def _log_choose(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def conditional_lt_exact_difference(z: float, rho: BaseMeasure, f, region, m: int, inner=None) -> float:
    """E[exp(-mu(f)) | zeta_A(mu) = m] under the Pólya difference process.

    Sum over k of C_{A,m,k} times the sum over nu <= rho on B with |nu| = k of
    prod_x C(rho(x), nu(x)) e^{-nu(f)}; here C_{A,m,k}·C(rho(B), k) is the
    hypergeometric weight of k points falling in B. The inner sum is built
    atom by atom in normalised form. The value does not depend on z.
    """
    space = rho.space
    A = space.mask(region)
    fv = np.asarray(values_of(f), dtype=float)
    r = rho.int_weights()
    if np.any((fv > 0) & ~A & (r > 0)):
        raise ValueError("supp f must lie inside the conditioning region")
    B = (fv > 0) & A & (r > 0) if inner is None else space.mask(inner) & A
    if np.any((fv > 0) & (r > 0) & ~B):
        raise ValueError("supp f must lie inside the inner region")
    RA, RB = int(r[A].sum()), int(r[B].sum())
    if m < 0 or m > RA:
        raise Infeasible(f"m={m} outside [0, rho(A)={RA}]")
    # E[k] = mean of e^{-nu(f)} over nu uniform among k-subsets of the rho(B) unit atoms
    E = np.ones(1)
    Rt = 0
    for rx, fx in zip(r[B], fv[B]):
        new = np.zeros(Rt + rx + 1)
        for j in range(Rt + rx + 1):
            i = np.arange(max(0, j - Rt), min(rx, j) + 1)
            logh = _log_choose(Rt, j - i) + _log_choose(rx, i) - _log_choose(Rt + rx, j)
            new[j] = np.sum(np.exp(logh - i * fx) * E[j - i])
        E, Rt = new, Rt + rx
    k = np.arange(0, min(RB, m) + 1)
    k = k[m - k <= RA - RB]
    logw = _log_choose(RB, k) + _log_choose(RA - RB, m - k) - _log_choose(RA, m)
    return float(np.sum(np.exp(logw) * E[k]))


def conditional_lt_bruteforce(rho: BaseMeasure, f, region, m: int) -> float:
    """Enumerate nu <= rho on the region with |nu| = m, weights prod C(rho, nu)."""
    from itertools import product

    A = np.flatnonzero(rho.space.mask(region))
    r = rho.int_weights()[A]
    fv = np.asarray(values_of(f), dtype=float)[A]
    num = den = 0.0
    for nu in product(*(range(x + 1) for x in r)):
        nu = np.array(nu)
        if nu.sum() != m:
            continue
        w = math.prod(math.comb(int(a), int(b)) for a, b in zip(r, nu))
        num += w * math.exp(-float(nu @ fv))
        den += w
    return num / den


# -- density statistic and parameter ----------------------------------------------

def u_statistic(mu, rho: BaseMeasure, exhaustion: Exhaustion, n: int = -1, exclude: int | None = None):
    """U_n = zeta_{B_n}(mu) / rho(B_n) (optionally over B_n minus B_exclude)."""
    mask = exhaustion.mask(n)
    if exclude is not None:
        mask = mask & ~exhaustion.mask(exclude)
    mass = rho.weights[mask].sum()
    if mass <= 0:
        raise ValueError("rho(B_n) must be positive")
    c = np.asarray(getattr(mu, "counts", mu))
    val = (c[..., mask].sum(axis=-1)) / mass
    return float(val) if np.ndim(val) == 0 else val


def z_parameter(u, family: str):
    """Z = U/(1+U) for the sum family, U/(1-U) for the difference family."""
    u = np.asarray(u, dtype=float)
    if family == SUM:
        out = u / (1 + u)
    elif family == DIFFERENCE:
        if np.any(u >= 1):
            raise ValueError("the difference family needs U < 1")
        out = u / (1 - u)
    else:
        raise ValueError("Z is defined for the Pólya families")
    return float(out) if out.ndim == 0 else out


def estimate_Z_from_sample(mu, rho: BaseMeasure, exhaustion: Exhaustion, family: str,
                           level: int = -1, exclude: int | None = None, min_mass: float = 0.0):
    """U at the deepest level mapped to the process parameter."""
    mask = exhaustion.mask(level)
    if exclude is not None:
        mask = mask & ~exhaustion.mask(exclude)
    if rho.weights[mask].sum() < min_mass:
        raise ValueError(f"rho at the estimation level is below {min_mass}")
    return z_parameter(u_statistic(mu, rho, exhaustion, level, exclude), family)


# -- convergence of conditioned transforms ------------------------------------------

@dataclass
class ConvergenceTable:
    rows: list
    passed: bool
    bound: float
    u: float
    z_limit: float

    def errors(self) -> list:
        return [r["error"] for r in self.rows]

    def to_dict(self):
        return {"rows": self.rows, "passed": self.passed, "bound": self.bound,
                "u": self.u, "z_limit": self.z_limit}


def convergence_experiment(rho: BaseMeasure, f, exhaustion: Exhaustion, u: float,
                           counts=None, bound: float = 1e-2) -> ConvergenceTable:
    """Exact GP(e^{-zeta_f} | zeta_{B_n} = k_n) against GP_{z'}(e^{-zeta_f}), z' = u/(1-u).

    Default k_n = floor(u rho(B_n)). Passes when the error strictly decreases
    over the last three levels and the deepest error is below ``bound``.
    """
    fv = np.asarray(values_of(f), dtype=float)
    z_lim = z_parameter(u, DIFFERENCE)
    limit = laplace_analytic(ProcessSpec(DIFFERENCE, rho, z_lim), fv)
    supp = (fv > 0) & (rho.weights > 0)
    rows = []
    for n in range(len(exhaustion)):
        mask = exhaustion.mask(n)
        if np.any(supp & ~mask):
            continue
        mass = rho.weights[mask].sum()
        k = int(math.floor(u * mass)) if counts is None else int(counts[n])
        exact = conditional_lt_exact_difference(z_lim, rho, fv, exhaustion.levels[n], k)
        rows.append({"level": n, "k_n": k, "rho_Bn": float(mass), "u_n": k / mass,
                     "exact_lt": exact, "limit_lt": limit, "error": abs(exact - limit)})
    errs = [r["error"] for r in rows]
    tail = errs[-3:]
    # an error already at rounding level counts as converged
    falling = all(a > b or max(a, b) < ZERO_ERROR for a, b in zip(tail, tail[1:]))
    passed = len(tail) == 3 and falling and tail[-1] < bound
    return ConvergenceTable(rows, bool(passed), bound, u, z_lim)


# -- mixtures ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Mixture over z of the branched process ``template.with_z(z)``."""

    template: PapangelouSpec
    zs: tuple
    probs: tuple = field(default=None)

    def __post_init__(self):
        zs = tuple(float(z) for z in np.atleast_1d(self.zs))
        probs = tuple(np.full(len(zs), 1 / len(zs))) if self.probs is None else tuple(float(p) for p in self.probs)
        if len(zs) != len(probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-12) or min(probs) < 0:
            raise ValueError("mixing weights must be a probability vector over zs")
        fam = self.template.family
        if fam == SUM and not all(0 < z < 1 for z in zs):
            raise ValueError("sum mixtures live on (0, 1)")
        if fam == DIFFERENCE and not all(z > 0 for z in zs):
            raise ValueError("difference mixtures live on (0, inf)")
        object.__setattr__(self, "zs", zs)
        object.__setattr__(self, "probs", probs)

    @property
    def family(self) -> str:
        return self.template.family

    @property
    def degenerate(self) -> bool:
        return sum(p > 0 for p in self.probs) == 1

    def draw_with_z(self, rng, size: int):
        which = rng.choice(len(self.zs), size=size, p=self.probs)
        out = np.zeros((size, self.template.space.n_sites), dtype=np.int64)
        for i, z in enumerate(self.zs):
            sel = which == i
            if sel.any():
                out[sel] = self.template.with_z(z).draw(rng, int(sel.sum()))
        return out, np.asarray(self.zs)[which]

    def draw(self, rng, size: int) -> np.ndarray:
        return self.draw_with_z(rng, size)[0]


@dataclass(frozen=True)
class _MixedLhs:
    mixture: MixtureSpec
    hs: tuple

    def __call__(self, rng, size):
        c = self.mixture.draw(rng, size)
        return np.stack([h.lhs_values(c) for h in self.hs], axis=1)


@dataclass(frozen=True)
class _MixedRhs:
    mixture: MixtureSpec
    hs: tuple
    exhaustion: Exhaustion | None
    exclude: int | None

    def __call__(self, rng, size):
        mix = self.mixture
        c, z = mix.draw_with_z(rng, size)
        if mix.degenerate:
            zhat = z
        else:
            zhat = estimate_Z_from_sample(c, mix.template.process.rho, self.exhaustion, mix.family,
                                          exclude=self.exclude)
        unit = mix.template.intensity_rows(c, z=np.ones(size))
        cols = []
        for h in self.hs:
            v = h.rhs_values(c, unit)
            cols += [zhat * v, z * v, v]
        cols.append(zhat - z)
        return np.stack(cols, axis=1)


def verify_mixed_ibp(mixture: MixtureSpec, hs, n: int, seed: int = 0, exhaustion: Exhaustion | None = None,
                     exclude: int | None = None, z_max: float = Z_MAX, chunk: int = CHUNK,
                     workers: int = 1) -> list:
    """C_P(h) against ∬ h(x, mu + delta_x) Z(mu)(kappa rho ± kappa mu)(dx) P(dmu).

    Z(mu) is read off the sample (U over the deepest level, minus level
    ``exclude`` when given); for a degenerate mixture it is the constant z.
    The tolerance is widened by the Cauchy-Schwarz bound
    sqrt(E(Zhat - Z)^2) sqrt(E V^2) on the plug-in error, V being the
    right-hand integrand at Z = 1.
    """
    hs = tuple(as_functionals(hs))
    if not mixture.degenerate and exhaustion is None:
        raise ValueError("a non-degenerate mixture needs an exhaustion to estimate Z")
    lhs = columns(replicate(_MixedLhs(mixture, hs), n, seed, (11,), chunk, workers))
    raw = replicate(_MixedRhs(mixture, hs, exhaustion, exclude), n, seed, (12,), chunk, workers)
    dz = raw[:, -1]
    z_rms = float(np.sqrt(np.mean(dz ** 2)))
    thr = bonferroni_z(z_max, len(hs))
    out = []
    for i, h in enumerate(hs):
        est_hat = Estimate.from_values(raw[:, 3 * i])
        est_true = Estimate.from_values(raw[:, 3 * i + 1])
        v_rms = float(np.sqrt(np.mean(raw[:, 3 * i + 2] ** 2)))
        allowance = z_rms * v_rms
        rep = VerificationReport.from_estimates(
            f"mixed-ibp[{h.name or i}]", lhs[i], est_hat, thr, allowance=allowance, seed=seed,
            details={"rhs_true_z": est_true.mean, "rhs_true_z_se": est_true.stderr,
                     "z_allowance": allowance, "z_rms_error": z_rms,
                     "degenerate": mixture.degenerate, "zs": list(mixture.zs)})
        out.append(rep)
    return out
