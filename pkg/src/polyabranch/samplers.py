"""Poisson, Pólya sum and Pólya difference processes on bounded regions.

Configurations are stored aggregated: an integer count per site. Batch
samplers return arrays of shape ``(size, n_sites)``; the ``sample_*``
wrappers return a single :class:`PointConfiguration`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .space import BaseMeasure, Space

POISSON = "poisson"
SUM = "sum"
DIFFERENCE = "difference"
FAMILIES = (POISSON, SUM, DIFFERENCE)
SIGN = {POISSON: 0, SUM: 1, DIFFERENCE: -1}

TAIL = 1e-13
MAX_SUPPORT = 2_000_000


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    space: Space
    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.shape != (self.space.n_sites,) or np.any(c < 0):
            raise ValueError("counts must be a nonnegative integer per site")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, space: Space) -> "PointConfiguration":
        return cls(space, np.zeros(space.n_sites, dtype=np.int64))

    @classmethod
    def from_points(cls, space: Space, points) -> "PointConfiguration":
        """From site ids or ``(site id, multiplicity)`` pairs; repeats accumulate."""
        c = np.zeros(space.n_sites, dtype=np.int64)
        for p in points:
            site, k = p if isinstance(p, tuple) else (p, 1)
            if k < 1:
                raise ValueError("multiplicities are >= 1")
            c[space.site(site)] += int(k)
        return cls(space, c)

    @property
    def points(self) -> list[tuple[str, int]]:
        return [(self.space.site_ids[i], int(self.counts[i])) for i in np.flatnonzero(self.counts)]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, region=None) -> int:
        """zeta_B(mu): number of points (with multiplicity) in the block set."""
        return int(self.counts[self.space.mask(region)].sum())

    def __add__(self, other: "PointConfiguration") -> "PointConfiguration":
        return PointConfiguration(self.space, self.counts + other.counts)

    def __le__(self, other) -> bool:
        return bool(np.all(self.counts <= np.asarray(getattr(other, "counts", getattr(other, "weights", other)))))

    def __eq__(self, other):
        return isinstance(other, PointConfiguration) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"PointConfiguration({self.points})"


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    family: str
    rho: BaseMeasure
    z: float = 1.0
    region: frozenset | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        z = 1.0 if self.family == POISSON else float(self.z)
        if self.family == SUM and not 0.0 <= z < 1.0:
            raise ValueError("the Pólya sum process needs 0 <= z < 1")
        if self.family == DIFFERENCE:
            if not z >= 0.0 or not math.isfinite(z):
                raise ValueError("the Pólya difference process needs a finite z >= 0")
            self.rho.int_weights()
        if self.region is not None:
            object.__setattr__(self, "region", self.rho.space.block_ids(self.region))
        object.__setattr__(self, "z", z)

    @property
    def space(self) -> Space:
        return self.rho.space

    @property
    def sign(self) -> int:
        return SIGN[self.family]

    @property
    def mask(self) -> np.ndarray:
        return self.space.mask(self.region)

    @property
    def weights(self) -> np.ndarray:
        """rho restricted to the region."""
        return np.where(self.mask, self.rho.weights, 0.0)

    def with_z(self, z: float) -> "ProcessSpec":
        return ProcessSpec(self.family, self.rho, z, self.region)

    def restricted(self, region) -> "ProcessSpec":
        ids = self.space.block_ids(region)
        if self.region is not None:
            ids = ids & self.region
        return ProcessSpec(self.family, self.rho, self.z, ids)


# -- per-site and total count laws ------------------------------------------

def site_weights(r: float, kmax: int, sign: int, z: float) -> np.ndarray:
    """w_k = z^k r(r+s)...(r+(k-1)s)/k!, the unnormalised weight of k points at one site.

    This is pi^{(k)}(0; x, ..., x)/k! for the kernel z(rho + s*mu).
    """
    w = np.empty(kmax + 1)
    w[0] = 1.0
    for k in range(1, kmax + 1):
        w[k] = w[k - 1] * z * (r + sign * (k - 1)) / k
    return np.maximum(w, 0.0)


def total_count_dist(family: str, mass: float, z: float):
    """Frozen scipy law of the total count on a region of reference mass ``mass``."""
    if family == POISSON:
        return stats.poisson(mass)
    if family == SUM:
        return stats.nbinom(mass, 1.0 - z) if mass > 0 else stats.poisson(0.0)
    p = z / (1.0 + z)
    return stats.binom(int(round(mass)), p)


def partition_function(family: str, mass: float, z: float) -> float:
    """Xi(B) = sum_n pi^{(n)}(0; B^n)/n! in closed form."""
    if family == POISSON:
        return math.exp(mass)
    if family == SUM:
        return (1.0 - z) ** (-mass)
    return (1.0 + z) ** mass


def truncation_level(family: str, mass: float, z: float, tail: float = TAIL) -> int:
    if family == DIFFERENCE:
        return int(round(mass))
    if mass == 0 or z == 0 and family == SUM:
        return 0
    dist = total_count_dist(family, mass, z)
    n = int(dist.isf(tail))
    while dist.sf(n) >= tail:
        n += 1
    return n


def cluster_parameters(z: float) -> tuple[float, float]:
    """(cluster rate per unit of rho, logarithmic parameter) of the sum process.

    The sum process is a compound Poisson: clusters at rate -log(1-z)·rho,
    each a pile of Log(z) points, P(j) = z^j / (j · -log(1-z)).
    """
    return -math.log1p(-z), z


# -- placement ---------------------------------------------------------------

def polya_urn(weights, k: int, rng: np.random.Generator, start=None) -> np.ndarray:
    """Place ``k`` points one by one, each at a site chosen ∝ (weights + current counts)."""
    w = np.asarray(weights, dtype=float)
    counts = np.zeros(len(w), dtype=np.int64) if start is None else np.array(start, dtype=np.int64)
    for _ in range(k):
        p = w + counts
        i = rng.choice(len(w), p=p / p.sum())
        counts[i] += 1
    return counts


def urn_place(weights, totals, rng: np.random.Generator) -> np.ndarray:
    """Batch Pólya-urn placement via its Dirichlet-multinomial representation.

    Row r places ``totals[r]`` points; the law equals :func:`polya_urn`.
    """
    w = np.asarray(weights, dtype=float)
    totals = np.asarray(totals, dtype=np.int64)
    out = np.zeros((len(totals), len(w)), dtype=np.int64)
    pos = np.flatnonzero(w > 0)
    if len(pos) == 0 or not totals.any():
        return out
    if len(pos) == 1:
        out[:, pos[0]] = totals
        return out
    g = rng.gamma(w[pos], size=(len(totals), len(pos)))
    s = g.sum(axis=1, keepdims=True)
    p = np.divide(g, s, out=np.full_like(g, 1.0 / len(pos)), where=s > 0)
    out[:, pos] = rng.multinomial(totals, p)
    return out


# -- batch samplers ------------------------------------------------------------

def poisson_counts(spec: ProcessSpec, rng, size: int) -> np.ndarray:
    return rng.poisson(spec.weights, size=(size, spec.space.n_sites)).astype(np.int64)


def polya_sum_counts(spec: ProcessSpec, rng, size: int) -> np.ndarray:
    """Total from the negative-binomial count law, then sequential-urn placement."""
    w = spec.weights
    mass = w.sum()
    if mass == 0 or spec.z == 0:
        return np.zeros((size, spec.space.n_sites), dtype=np.int64)
    totals = rng.negative_binomial(mass, 1.0 - spec.z, size=size)
    return urn_place(w, totals, rng)


def polya_sum_cluster_counts(spec: ProcessSpec, rng, size: int) -> np.ndarray:
    """Compound-Poisson construction of the sum process (see cluster_parameters)."""
    w = spec.weights
    n = spec.space.n_sites
    if w.sum() == 0 or spec.z == 0:
        return np.zeros((size, n), dtype=np.int64)
    rate, p = cluster_parameters(spec.z)
    clusters = rng.poisson(rate * w, size=(size, n))
    flat = clusters.ravel()
    m = int(flat.sum())
    piles = rng.logseries(p, size=m)
    owner = np.repeat(np.arange(flat.size), flat)
    return np.bincount(owner, weights=piles, minlength=flat.size).astype(np.int64).reshape(size, n)


def polya_difference_counts(spec: ProcessSpec, rng, size: int) -> np.ndarray:
    """Independent Binomial(rho(x), z/(1+z)) multiplicity at each atom."""
    r = np.where(spec.mask, spec.rho.int_weights(), 0)
    p = spec.z / (1.0 + spec.z)
    return rng.binomial(r, p, size=(size, spec.space.n_sites)).astype(np.int64)


_DRAW = {POISSON: poisson_counts, SUM: polya_sum_counts, DIFFERENCE: polya_difference_counts}


def draw_counts(spec: ProcessSpec, rng, size: int) -> np.ndarray:
    return _DRAW[spec.family](spec, rng, size)


def _one(fn, spec, rng) -> PointConfiguration:
    return PointConfiguration(spec.space, fn(spec, rng, 1)[0])


def sample_poisson(spec: ProcessSpec, rng) -> PointConfiguration:
    if spec.family != POISSON:
        raise ValueError("expected a Poisson spec")
    return _one(poisson_counts, spec, rng)


def sample_polya_sum(spec: ProcessSpec, rng) -> PointConfiguration:
    if spec.family != SUM:
        raise ValueError("expected a Pólya sum spec")
    return _one(polya_sum_counts, spec, rng)


def sample_polya_sum_cluster(spec: ProcessSpec, rng) -> PointConfiguration:
    if spec.family != SUM:
        raise ValueError("expected a Pólya sum spec")
    return _one(polya_sum_cluster_counts, spec, rng)


def sample_polya_difference(spec: ProcessSpec, rng) -> PointConfiguration:
    if spec.family != DIFFERENCE:
        raise ValueError("expected a Pólya difference spec")
    return _one(polya_difference_counts, spec, rng)


# -- exact laws ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CountPmf:
    """Exact (possibly tail-truncated) law of the counts on ``sites``."""

    sites: np.ndarray
    configs: np.ndarray
    probs: np.ndarray
    truncation_error: float = 0.0
    level: int | None = None
    n_sites: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.probs)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in c): float(p) for c, p in zip(self.configs, self.probs)}

    def full_configs(self) -> np.ndarray:
        """Configurations embedded as count vectors over all sites of the space."""
        out = np.zeros((len(self.configs), self.n_sites), dtype=np.int64)
        out[:, self.sites] = self.configs
        return out

    def expect(self, fn) -> float:
        """E[fn(mu)] where fn maps a (m, n_sites) count array to m values."""
        return float(np.asarray(fn(self.full_configs()), dtype=float) @ self.probs)

    def marginal(self, groups) -> dict:
        """Law of the vector of counts over the given site groups (list of index arrays/masks)."""
        full = self.full_configs()
        cols = np.stack([full[:, np.asarray(g)].sum(axis=1) if np.asarray(g).dtype != bool
                         else full[:, g].sum(axis=1) for g in groups], axis=1)
        out: dict = {}
        for c, p in zip(map(tuple, cols.tolist()), self.probs):
            out[c] = out.get(c, 0.0) + p
        return out

    def sample(self, rng, size: int) -> np.ndarray:
        """Inverse-cdf draws, returned as full count vectors."""
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
        idx = np.minimum(idx, len(cdf) - 1)
        out = np.zeros((size, self.n_sites), dtype=np.int64)
        out[:, self.sites] = self.configs[idx]
        return out


def enumerate_counts(caps, total_max: int, limit: int = MAX_SUPPORT) -> np.ndarray:
    """All integer vectors 0 <= c <= caps with sum(c) <= total_max."""
    caps = [int(min(c, total_max)) for c in caps]
    size = _count_bounded(caps, total_max)
    if size > limit:
        raise EnumerationTooLarge(f"support has {size} configurations (limit {limit})")
    rows = np.zeros((1, 0), dtype=np.int64)
    totals = np.zeros(1, dtype=np.int64)
    for cap in caps:
        parts, tparts = [], []
        for k in range(cap + 1):
            sel = totals + k <= total_max
            if not sel.any():
                break
            parts.append(np.hstack([rows[sel], np.full((sel.sum(), 1), k, dtype=np.int64)]))
            tparts.append(totals[sel] + k)
        rows, totals = np.vstack(parts), np.concatenate(tparts)
    return rows


def _count_bounded(caps, total_max) -> int:
    # number of vectors 0 <= c_i <= cap_i with sum <= total_max
    ways = np.zeros(total_max + 1, dtype=object)
    ways[0] = 1
    for cap in caps:
        new = np.zeros_like(ways)
        for k in range(cap + 1):
            new[k:] += ways[: total_max + 1 - k]
        ways = new
    return int(sum(ways))


def exact_count_pmf(spec: ProcessSpec, region=None, tail: float = TAIL,
                    limit: int = MAX_SUPPORT) -> CountPmf:
    """Exact law of the configuration on ``region`` (default: the process's own region).

    Configuration weights are pi^{(n)}(0; x_1..x_n)/prod k_x!, normalised by
    their sum. For the sum and Poisson families the total count is
    truncated where the tail drops below ``tail``; the missing mass
    relative to the closed-form normaliser is reported as
    ``truncation_error``.
    """
    if spec.space.kind != "discrete":
        raise ValueError("exact laws are only available on discrete spaces")
    sub = spec if region is None else spec.restricted(region)
    w = sub.weights
    sites = np.flatnonzero(sub.mask)
    r = w[sites]
    mass = float(r.sum())
    level = truncation_level(sub.family, mass, sub.z, tail)
    if sub.family == DIFFERENCE:
        caps = r.astype(np.int64)
    else:
        caps = np.where(r > 0, level, 0)
    configs = enumerate_counts(caps, level, limit)
    weights = np.ones(len(configs))
    for j, rj in enumerate(r):
        weights *= site_weights(rj, int(caps[j]), sub.sign, sub.z)[configs[:, j]]
    xi = weights.sum()
    trunc = 0.0
    if sub.family != DIFFERENCE:
        trunc = max(0.0, 1.0 - xi / partition_function(sub.family, mass, sub.z))
    keep = weights > 0
    return CountPmf(sites, configs[keep], weights[keep] / xi, trunc, level, spec.space.n_sites,
                    {"family": sub.family, "z": sub.z, "xi": xi})


def unique_rows(rows: np.ndarray):
    """``np.unique(rows, axis=0, return_inverse=True)`` via mixed-radix integer keys."""
    radix = rows.max(axis=0) + 1 if len(rows) else np.ones(rows.shape[1], dtype=np.int64)
    if np.sum(np.log2(radix.astype(float))) > 62:
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        return uniq, inv.ravel()
    place = np.concatenate([np.cumprod(radix[::-1])[::-1][1:], [1]]).astype(np.int64)
    keys, first, inv = np.unique(rows @ place, return_index=True, return_inverse=True)
    return rows[first], inv.ravel()


def superpose(*pmfs: CountPmf, limit: int = MAX_SUPPORT) -> CountPmf:
    """Law of the sum of independent configurations (the ⊛ product)."""
    n = pmfs[0].n_sites
    configs = np.zeros((1, n), dtype=np.int64)
    probs = np.ones(1)
    trunc = 0.0
    for pmf in pmfs:
        full = pmf.full_configs()
        if len(configs) * len(full) > 20 * limit:
            raise EnumerationTooLarge(f"superposition exceeds {limit} configurations")
        pairs = (configs[:, None, :] + full[None, :, :]).reshape(-1, n)
        uniq, inv = unique_rows(pairs)
        probs = np.bincount(inv.ravel(), weights=np.outer(probs, pmf.probs).ravel(), minlength=len(uniq))
        configs = uniq
        if len(configs) > limit:
            raise EnumerationTooLarge(f"superposition exceeds {limit} configurations")
        trunc = trunc + pmf.truncation_error
    used = np.flatnonzero(configs.any(axis=0))
    if len(used) == 0:
        used = np.arange(n)
    return CountPmf(used, configs[:, used], probs, trunc, None, n)


def pmf_from_dict(d: dict, n_sites: int, truncation_error: float = 0.0) -> CountPmf:
    configs = np.array(list(d.keys()), dtype=np.int64).reshape(len(d), n_sites)
    used = np.flatnonzero(configs.any(axis=0)) if len(configs) else np.array([], dtype=int)
    if len(used) == 0:
        used = np.arange(n_sites)
    return CountPmf(used, configs[:, used], np.array(list(d.values())), truncation_error,
                    None, n_sites)


def urn_law(weights, n: int) -> dict:
    """Exact law of the counts after n sequential urn draws (brute force over all paths)."""
    w = np.asarray(weights, dtype=float)
    out: dict = {}

    def walk(counts, prob, left):
        if left == 0:
            key = tuple(int(c) for c in counts)
            out[key] = out.get(key, 0.0) + prob
            return
        tot = w.sum() + counts.sum()
        for i in range(len(w)):
            q = (w[i] + counts[i]) / tot
            if q > 0:
                counts[i] += 1
                walk(counts, prob * q, left - 1)
                counts[i] -= 1

    walk(np.zeros(len(w), dtype=np.int64), 1.0, n)
    return out
