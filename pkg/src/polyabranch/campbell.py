"""Campbell measures, Papangelou kernels and their verification.

The Papangelou kernel of the branched Pólya process is
``pi_kappa(mu, f) = z (rho ± mu)(kappa f)``; Poisson uses ``rho(kappa f)``.
Functionals are products ``h(x, mu) = g(x) phi(mu)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import comb

from .branching import BranchingKernel, branch_counts, branch_pmf
from .rng import CHUNK, replicate
from .samplers import (DIFFERENCE, MAX_SUPPORT, SUM, CountPmf, EnumerationTooLarge, ProcessSpec,
                       draw_counts, enumerate_counts, exact_count_pmf, partition_function,
                       pmf_from_dict, superpose, truncation_level, TAIL)
from .space import BaseMeasure, Space, check_same_space, values_of
from .stats import (EPS_EXACT, Z_MAX, Estimate, VerificationReport, bonferroni_z,
                    chi_square_two_sample, columns)

EXACT_TERMS = 10_000_000


class UnsupportedOperation(NotImplementedError):
    pass


@dataclass(frozen=True, eq=False)
class PapangelouSpec:
    """A Pólya (or Poisson) process together with the branching kernel applied to it."""

    process: ProcessSpec
    kappa: BranchingKernel

    def __post_init__(self):
        check_same_space(self.process, self.kappa)

    @classmethod
    def build(cls, family, rho, z, kappa, region=None) -> "PapangelouSpec":
        return cls(ProcessSpec(family, rho, z, region), kappa)

    @property
    def space(self) -> Space:
        return self.process.space

    @property
    def family(self) -> str:
        return self.process.family

    @property
    def sign(self) -> int:
        return self.process.sign

    @property
    def z(self) -> float:
        return self.process.z

    @property
    def rho_w(self) -> np.ndarray:
        return self.process.weights

    def with_z(self, z) -> "PapangelouSpec":
        return PapangelouSpec(self.process.with_z(z), self.kappa)

    def draw(self, rng, size: int) -> np.ndarray:
        """Branched configurations, shape (size, n_sites)."""
        return branch_counts(draw_counts(self.process, rng, size), self.kappa, rng)

    def intensity_rows(self, counts, z=None) -> np.ndarray:
        """Row r: the site masses of pi_kappa(mu_r, ·). ``z`` may be a per-row array."""
        c = np.atleast_2d(np.asarray(counts, dtype=float))
        zz = self.z if z is None else np.asarray(z, dtype=float).reshape(-1, 1)
        return zz * ((self.rho_w[None, :] + self.sign * c) @ self.kappa.matrix)


# -- functionals -------------------------------------------------------------------

class CountFunctional:
    """phi(mu) evaluated on rows of counts."""

    def __call__(self, counts) -> np.ndarray:
        raise NotImplementedError

    def plus(self, counts, sites) -> np.ndarray:
        """phi(mu + delta_y) for y in ``sites``; shape (m, len(sites))."""
        c = np.atleast_2d(counts)
        out = np.empty((len(c), len(sites)))
        for j, y in enumerate(sites):
            shifted = c.copy()
            shifted[:, y] += 1
            out[:, j] = self(shifted)
        return out


@dataclass(frozen=True, eq=False)
class One(CountFunctional):
    def __call__(self, counts):
        return np.ones(len(np.atleast_2d(counts)))

    def plus(self, counts, sites):
        return np.ones((len(np.atleast_2d(counts)), len(sites)))

    def describe(self):
        return "1"


@dataclass(frozen=True, eq=False)
class ExpCount(CountFunctional):
    """exp(-mu(f))."""

    f: np.ndarray

    def __call__(self, counts):
        return np.exp(-(np.atleast_2d(counts) @ np.asarray(self.f, dtype=float)))

    def plus(self, counts, sites):
        return self(counts)[:, None] * np.exp(-np.asarray(self.f, dtype=float)[sites])[None, :]

    def describe(self):
        return f"exp(-mu(f)), f={np.round(self.f, 4).tolist()}"


@dataclass(frozen=True, eq=False)
class CountIndicator(CountFunctional):
    """1{zeta_B(mu) in ks} for a site mask B."""

    mask: np.ndarray
    ks: tuple

    def __call__(self, counts):
        return np.isin(np.atleast_2d(counts) @ np.asarray(self.mask, dtype=np.int64), self.ks).astype(float)

    def describe(self):
        return f"1{{zeta_B in {list(self.ks)}}}"


@dataclass(frozen=True, eq=False)
class CountPolynomial(CountFunctional):
    """sum_i c_i zeta_B(mu)^i."""

    mask: np.ndarray
    coeffs: tuple

    def __call__(self, counts):
        n = np.atleast_2d(counts) @ np.asarray(self.mask, dtype=float)
        return np.polynomial.polynomial.polyval(n, self.coeffs)

    def describe(self):
        return f"poly{list(self.coeffs)}(zeta_B)"


@dataclass(frozen=True, eq=False)
class BivariateFunctional:
    """h(x, mu) = g(x) phi(mu)."""

    g: np.ndarray
    phi: CountFunctional = field(default_factory=One)
    name: str = ""

    def __post_init__(self):
        g = np.asarray(values_of(self.g), dtype=float)
        if np.any(g < 0):
            raise ValueError("g must be nonnegative")
        object.__setattr__(self, "g", g)

    @cached_property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.g)

    def __call__(self, x: int, counts) -> float:
        return float(self.g[x] * self.phi(np.atleast_2d(counts))[0])

    def lhs_values(self, counts) -> np.ndarray:
        """sum over points x of mu of h(x, mu)."""
        c = np.atleast_2d(counts)
        return (c @ self.g) * self.phi(c)

    def rhs_values(self, counts, intensity) -> np.ndarray:
        """∫ h(x, mu + delta_x) pi(mu, dx) given the kernel's site masses per row."""
        s = self.support
        if len(s) == 0:
            return np.zeros(len(np.atleast_2d(counts)))
        return (self.phi.plus(counts, s) * intensity[:, s] * self.g[s]).sum(axis=1)


def as_functionals(hs) -> list:
    return [hs] if isinstance(hs, BivariateFunctional) else list(hs)


# -- Monte Carlo estimators -----------------------------------------------------

@dataclass(frozen=True)
class _CampbellStat:
    sampler: object
    hs: tuple

    def __call__(self, rng, size):
        c = self.sampler(rng, size)
        return np.stack([h.lhs_values(c) for h in self.hs], axis=1)


@dataclass(frozen=True)
class _IbpRhsStat:
    spec: PapangelouSpec
    hs: tuple

    def __call__(self, rng, size):
        c = self.spec.draw(rng, size)
        w = self.spec.intensity_rows(c)
        return np.stack([h.rhs_values(c, w) for h in self.hs], axis=1)


def estimate_campbell(sampler, h, n: int, seed: int = 0, key=(1,), chunk: int = CHUNK,
                      workers: int = 1):
    """MC estimate of ∬ h(x, mu) mu(dx) P(dmu).

    ``sampler(rng, size)`` returns count rows (a PapangelouSpec's ``draw``
    works). Returns an Estimate, or a list of them when ``h`` is a list.
    """
    hs = as_functionals(h)
    vals = replicate(_CampbellStat(sampler, tuple(hs)), n, seed, key, chunk, workers)
    est = columns(vals)
    return est[0] if isinstance(h, BivariateFunctional) else est


def evaluate_papangelou(spec: PapangelouSpec, mu, f) -> float:
    """pi_kappa(mu, f) = z (rho ± mu)(kappa f)."""
    c = np.asarray(getattr(mu, "counts", mu), dtype=float)
    m = spec.rho_w + spec.sign * c
    if spec.family == DIFFERENCE:
        if np.any(m @ spec.kappa.matrix < -1e-12):
            raise ValueError("configuration exceeds rho: (rho - mu) kappa is not a measure")
    return float(spec.z * (m @ (spec.kappa.matrix @ values_of(f))))


def verify_ibp_battery(spec: PapangelouSpec, hs, n: int, seed: int = 0, z_max: float = Z_MAX,
                       chunk: int = CHUNK, workers: int = 1, name: str = "ibp") -> list:
    """Campbell side vs Papangelou side for every functional, from independent streams.

    Pass threshold is z_max after Bonferroni over the battery size.
    """
    hs = tuple(as_functionals(hs))
    lhs = columns(replicate(_CampbellStat(spec.draw, hs), n, seed, (1,), chunk, workers))
    rhs = columns(replicate(_IbpRhsStat(spec, hs), n, seed, (2,), chunk, workers))
    thr = bonferroni_z(z_max, len(hs))
    return [VerificationReport.from_estimates(f"{name}[{h.name or i}]", a, b, thr, seed=seed,
                                              details={"family": spec.family, "z": spec.z,
                                                       "kernel": spec.kappa.variant})
            for i, (h, a, b) in enumerate(zip(hs, lhs, rhs))]


def verify_ibp(spec: PapangelouSpec, h: BivariateFunctional, n: int, seed: int = 0,
               z_max: float = Z_MAX, **kw) -> VerificationReport:
    return verify_ibp_battery(spec, [h], n, seed, z_max, **kw)[0]


# -- exact enumeration ---------------------------------------------------------------

def _branch_terms(pmf: CountPmf, kappa: BranchingKernel) -> int:
    """Number of (configuration, branching outcome) pairs an exact pushforward visits."""
    total = 0
    full = pmf.full_configs()
    if kappa.classes is None:
        for c in full:
            t = 1
            for x in np.flatnonzero(c):
                s = int(np.count_nonzero(kappa.matrix[x]))
                t *= int(comb(c[x] + s - 1, s - 1, exact=True))
            total += t
        return total
    groups = kappa.class_masks()
    sizes = [int(np.count_nonzero(kappa.matrix[np.flatnonzero(m)[0]])) for m in groups]
    T = np.unique(full @ np.stack(groups, axis=1).astype(np.int64), axis=0)
    for row in T:
        total += math.prod(int(comb(k + s - 1, s - 1, exact=True)) for k, s in zip(row, sizes))
    return total


def branched_pmf(spec: PapangelouSpec, region=None, tail: float = TAIL,
                 limit: int = EXACT_TERMS) -> CountPmf:
    """Exact law of the branched process on a discrete space."""
    base = exact_count_pmf(spec.process, region, tail)
    terms = _branch_terms(base, spec.kappa)
    if terms > limit:
        raise EnumerationTooLarge(f"exact branching needs {terms} terms (limit {limit})")
    return branch_pmf(base, spec.kappa)


def exact_ibp(spec: PapangelouSpec, h, tail: float = TAIL, limit: int = EXACT_TERMS,
              eps: float = EPS_EXACT):
    """Both sides of the IBP formula as exact sums over the branched law."""
    pmf = branched_pmf(spec, tail=tail, limit=limit)
    X = pmf.full_configs()
    W = spec.intensity_rows(X)
    out = []
    for i, hh in enumerate(as_functionals(h)):
        lhs = float(pmf.probs @ hh.lhs_values(X))
        rhs = float(pmf.probs @ hh.rhs_values(X, W))
        out.append(VerificationReport.exact(f"exact-ibp[{hh.name or i}]", lhs, rhs, eps,
                                            details={"family": spec.family, "z": spec.z,
                                                     "kernel": spec.kappa.variant,
                                                     "configurations": len(pmf),
                                                     "truncation_error": pmf.truncation_error}))
    return out[0] if isinstance(h, BivariateFunctional) else out


def exact_ibp_difference(spec: PapangelouSpec, h, limit: int = EXACT_TERMS, eps: float = EPS_EXACT):
    if spec.family != DIFFERENCE:
        raise ValueError("exact_ibp_difference needs the Pólya difference family")
    return exact_ibp(spec, h, limit=limit, eps=eps)


# -- iterated kernels --------------------------------------------------------------

def iterated_kernel(spec: PapangelouSpec, points, branched: bool = True) -> float:
    """pi_kappa^{(n)}(0; {x_1} x ... x {x_n}) for a tuple of site indices."""
    K = spec.kappa.matrix if branched else np.eye(spec.space.n_sites)
    mu = np.zeros(spec.space.n_sites)
    val = 1.0
    for x in points:
        val *= spec.z * ((spec.rho_w + spec.sign * mu) @ K[:, x])
        mu[x] += 1
    return float(val)


def iterated_tensor(spec: PapangelouSpec, n: int, sites=None, branched: bool = True) -> np.ndarray:
    """All values pi^{(n)}(0; {x_1} x ... x {x_n}) for x_i in ``sites`` as an n-way array."""
    K = spec.kappa.matrix if branched else np.eye(spec.space.n_sites)
    sites = np.arange(spec.space.n_sites) if sites is None else np.asarray(sites)
    b = (spec.rho_w @ K)[sites]
    Ks = K[np.ix_(sites, sites)]
    s = len(sites)
    T = spec.z * b
    for m in range(2, n + 1):
        A = np.broadcast_to(b, (s,) * m).copy()
        for j in range(m - 1):
            shape = [1] * m
            shape[j], shape[m - 1] = s, s
            A = A + spec.sign * Ks.reshape(shape)
        T = T[..., None] * spec.z * A
    return T


def verify_iterated_symmetry(spec: PapangelouSpec, n: int, eps: float = EPS_EXACT) -> VerificationReport:
    """Permutation symmetry of pi_kappa^{(n)}(0; ·) and the identity
    pi_kappa^{(n)}(0; B_1 x ... x B_n) = pi^{(n)}(0; kappa 1_{B_1} ⊗ ... ⊗ kappa 1_{B_n})
    checked on all singleton tuples (hence on all block tuples by additivity)."""
    if n > 6:
        raise ValueError("n <= 6")
    T = iterated_tensor(spec, n)
    sym = 0.0
    for perm in itertools.permutations(range(n)):
        sym = max(sym, float(np.abs(T - T.transpose(perm)).max()))
    R = iterated_tensor(spec, n, branched=False)
    K = spec.kappa.matrix
    for axis in range(n):
        R = np.moveaxis(np.tensordot(R, K, axes=([axis], [0])), -1, axis)
    brp = float(np.abs(T - R).max())
    defect = max(sym, brp)
    return VerificationReport(f"iterated-symmetry[n={n}]", float(T.sum()), float(R.sum()),
                              defect=defect, passed=defect < eps, threshold=eps,
                              details={"symmetry_defect": sym, "brpapkern_defect": brp,
                                       "kernel": spec.kappa.variant,
                                       "conditional": spec.kappa.conditional})


# -- superposition of finite block processes -----------------------------------

def qj_pmf(spec: PapangelouSpec, block, tail: float = TAIL, limit: int = MAX_SUPPORT) -> CountPmf:
    """Exact law of Q_j on block X_j: weights pi_kappa^{(n)}(0; x_1..x_n)/prod k_x!,
    normalised by their sum Xi_j."""
    space = spec.space
    j = space.block_ids([block])
    sites = space.sites_in(j)
    mass = float(spec.rho_w[sites].sum())
    level = truncation_level(spec.family, mass, spec.z, tail)
    configs = enumerate_counts([level] * len(sites), level, limit)
    K = spec.kappa.matrix
    base = spec.rho_w @ K
    weights = np.empty(len(configs))
    for r, cfg in enumerate(configs):
        mu = np.zeros(space.n_sites)
        w = 1.0
        for y, k in zip(sites, cfg):
            for i in range(1, int(k) + 1):
                w *= spec.z * (base[y] + spec.sign * (mu @ K[:, y])) / i
                mu[y] += 1
        weights[r] = w
    keep = weights > 0
    xi = float(weights.sum())
    trunc = 0.0 if spec.family == DIFFERENCE else max(0.0, 1 - xi / partition_function(spec.family, mass, spec.z))
    return CountPmf(sites, configs[keep], weights[keep] / xi, trunc, level, space.n_sites,
                    {"xi": xi, "block": space.block_names[next(iter(j))]})


def sample_Qj(spec: PapangelouSpec, block, rng, size: int | None = None):
    pmf = qj_pmf(spec, block)
    out = pmf.sample(rng, 1 if size is None else size)
    return out[0] if size is None else out


@dataclass(frozen=True)
class _SuperposedDraw:
    pmfs: tuple

    def __call__(self, rng, size):
        return sum(p.sample(rng, size) for p in self.pmfs)


def _pmf_gap(a: dict, b: dict) -> float:
    return max((abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b)), default=0.0)


def verify_superposition(spec: PapangelouSpec, blocks=None, n: int = 0, seed: int = 0,
                         eps: float = EPS_EXACT, p_min: float = 1e-3, chunk: int = CHUNK,
                         joint_limit: int = 100_000) -> VerificationReport:
    """⊛_j Q_j against the branched process.

    Exact part: per block, the law of Q_j equals the branched law on X_j
    (and the joint law when small enough). Statistical part (``n > 0``):
    chi-square homogeneity of per-block configurations between the
    superposed Q_j sampler and the direct branching sampler.
    """
    space = spec.space
    blocks = list(range(space.n_blocks)) if blocks is None else [next(iter(space.block_ids([b]))) for b in blocks]
    qs = [qj_pmf(spec, b) for b in blocks]
    per_block = []
    for b, q in zip(blocks, qs):
        direct = branched_pmf(spec, region=[b])
        per_block.append(_pmf_gap(q.as_dict(), dict(zip(map(tuple, direct.full_configs()[:, q.sites].tolist()),
                                                        direct.probs))))
    defect = max(per_block)
    details = {"per_block_defect": per_block,
               "truncation_error": max(q.truncation_error for q in qs),
               "xi": [q.meta["xi"] for q in qs]}
    if math.prod(len(q) for q in qs) <= joint_limit:
        joint = superpose(*qs)
        direct = branched_pmf(spec, region=blocks)
        details["joint_defect"] = _pmf_gap(_full_dict(joint), _full_dict(direct))
        defect = max(defect, details["joint_defect"])
    passed = defect < eps
    if n:
        a = replicate(_SuperposedDraw(tuple(qs)), n, seed, (3,), chunk)
        restricted = PapangelouSpec(spec.process.restricted(blocks), spec.kappa)
        b = replicate(restricted.draw, n, seed, (4,), chunk)
        pvals = [chi_square_two_sample(a[:, q.sites], b[:, q.sites]) for q in qs]
        details["chi2_pvalues"] = pvals
        passed = passed and min(pvals) * len(pvals) > p_min
    return VerificationReport("superposition", 1.0, 1.0 - defect, defect=defect, passed=bool(passed),
                              replicas=n, seed=seed, threshold=eps, details=details)


def _full_dict(pmf: CountPmf) -> dict:
    return {tuple(c): float(p) for c, p in zip(pmf.full_configs().tolist(), pmf.probs)}


# -- intensity and Palm ---------------------------------------------------------------

def intensity_factor(family: str, z: float) -> float:
    if family == SUM:
        return z / (1.0 - z)
    if family == DIFFERENCE:
        return z / (1.0 + z)
    return 1.0


def intensity_measure(spec: PapangelouSpec) -> BaseMeasure:
    """nu^1 = c(z) · kappa rho with c = z/(1-z) (sum), z/(1+z) (difference), 1 (Poisson)."""
    return BaseMeasure(spec.space, intensity_factor(spec.family, spec.z) * spec.kappa.measure(spec.rho_w))


def palm_counts(spec: PapangelouSpec, xs, rng) -> np.ndarray:
    """Rows drawn from Poi_rho ∗ Poi_{delta_x} ∗ Delta_x, one row per entry of ``xs``."""
    if spec.family != SUM:
        raise UnsupportedOperation("Palm kernels are only available for the sum family")
    xs = np.asarray(xs, dtype=np.int64)
    size = len(xs)
    out = spec.draw(rng, size)
    extra = rng.negative_binomial(1, 1.0 - spec.z, size=size) if spec.z > 0 else np.zeros(size, int)
    K = spec.kappa.matrix
    for x in np.unique(xs):
        sel = xs == x
        out[sel] += rng.multinomial(extra[sel], K[x])
    out[np.arange(size), xs] += 1
    return out


def sample_palm(spec: PapangelouSpec, x, rng, size: int | None = None):
    """Palm configuration(s) seen from a point at site ``x`` (index or id)."""
    xi = x if isinstance(x, (int, np.integer)) else spec.space.site(x)
    if intensity_measure(spec).weights[xi] <= 0:
        raise ValueError("x is outside the support of kappa rho")
    rows = palm_counts(spec, np.full(1 if size is None else size, xi), rng)
    return rows[0] if size is None else rows


def palm_pmf(spec: PapangelouSpec, x: int, region=None, tail: float = TAIL) -> CountPmf:
    """Exact Palm law at x by superposing the three exact factors."""
    if spec.family != SUM:
        raise UnsupportedOperation("Palm kernels are only available for the sum family")
    base = branched_pmf(spec, region, tail)
    delta = np.zeros(spec.space.n_sites)
    delta[x] = 1.0
    one = BaseMeasure(spec.space, delta)
    geo = branched_pmf(PapangelouSpec(ProcessSpec(SUM, one, spec.z), spec.kappa), tail=tail)
    point = pmf_from_dict({tuple(delta.astype(int).tolist()): 1.0}, spec.space.n_sites)
    return superpose(base, geo, point)


@dataclass(frozen=True)
class _PalmStat:
    spec: PapangelouSpec
    g: np.ndarray
    phis: tuple

    def __call__(self, rng, size):
        nu = intensity_measure(self.spec).weights * self.g
        total = nu.sum()
        xs = rng.choice(len(nu), size=size, p=nu / total)
        c = palm_counts(self.spec, xs, rng)
        return np.stack([total * phi(c) for phi in self.phis], axis=1)


def verify_palm(spec: PapangelouSpec, g, phis, n: int, seed: int = 0, z_max: float = Z_MAX,
                chunk: int = CHUNK, workers: int = 1) -> list:
    """C(g ⊗ phi) against ∫ g(x) Palm_x(phi) nu^1(dx), for each phi, on independent streams."""
    if spec.family != SUM:
        raise UnsupportedOperation("Palm kernels are only available for the sum family")
    g = np.asarray(values_of(g), dtype=float)
    phis = tuple([phis] if isinstance(phis, CountFunctional) else phis)
    hs = tuple(BivariateFunctional(g, p) for p in phis)
    lhs = columns(replicate(_CampbellStat(spec.draw, hs), n, seed, (5,), chunk, workers))
    if g.any():
        rhs = columns(replicate(_PalmStat(spec, g, phis), n, seed, (6,), chunk, workers))
    else:
        rhs = [Estimate.exact(0.0)] * len(phis)
    thr = bonferroni_z(z_max, len(phis))
    return [VerificationReport.from_estimates(f"palm[{getattr(p, 'describe', lambda: i)()}]", a, b, thr,
                                              seed=seed)
            for i, (p, a, b) in enumerate(zip(phis, lhs, rhs))]
