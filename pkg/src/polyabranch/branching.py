"""Branching kernels and the branching of configurations.

A kernel is a row-stochastic matrix ``K[x, y] = kappa_x({y})`` over the
sites. Kernels built from a conditional probability given a partition
(identity, partition, isotropic, permutation, trivial) also carry the
partition as ``classes``; their rows are constant within a class, which
gives a fast exact branching path.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .rng import CHUNK, replicate
from .samplers import CountPmf, PointConfiguration, enumerate_counts, pmf_from_dict
from .space import GRID, Space, TestFunction, check_same_space, values_of
from .stats import EPS_EXACT, VerificationReport

IDENTITY = "identity"
PARTITION = "partition"
ISOTROPIC = "isotropic"
PERMUTATION = "permutation"
TRIVIAL = "trivial"
CUSTOM = "custom"


def _stochastic(K: np.ndarray, tol: float = 1e-12) -> None:
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("kernel matrix must be square")
    if np.any(K < 0) or not np.allclose(K.sum(axis=1), 1.0, atol=tol, rtol=0):
        raise ValueError("kernel rows must be probability vectors")


@dataclass(frozen=True, eq=False)
class BranchingKernel:
    space: Space
    variant: str
    matrix: np.ndarray
    conditional: bool
    classes: np.ndarray | None = None
    outside_assumptions: bool = False

    def __post_init__(self):
        K = np.array(self.matrix, dtype=float)
        if K.shape != (self.space.n_sites, self.space.n_sites):
            raise ValueError("kernel matrix does not match the space")
        _stochastic(K)
        K.setflags(write=False)
        object.__setattr__(self, "matrix", K)
        if self.classes is not None:
            c = np.array(self.classes, dtype=np.int64)
            c.setflags(write=False)
            object.__setattr__(self, "classes", c)

    # -- constructors -------------------------------------------------------
    @classmethod
    def identity(cls, space: Space) -> "BranchingKernel":
        return cls(space, IDENTITY, np.eye(space.n_sites), True, np.arange(space.n_sites))

    @classmethod
    def _from_classes(cls, space, variant, classes, H=None, **kw) -> "BranchingKernel":
        classes = np.asarray(classes)
        H = np.ones(space.n_sites) if H is None else np.asarray(values_of(H), dtype=float)
        if np.any(H < 0):
            raise ValueError("H must be nonnegative")
        _, inv = np.unique(classes, return_inverse=True)
        mass = np.bincount(inv, weights=H)
        if np.any(mass <= 0):
            raise ValueError("every class needs positive H-mass")
        same = inv[:, None] == inv[None, :]
        K = np.where(same, H[None, :] / mass[inv][:, None], 0.0)
        return cls(space, variant, K, True, inv, **kw)

    @classmethod
    def partition(cls, space: Space, H=None) -> "BranchingKernel":
        """kappa_x = H(· ∩ X_j)/H(X_j) for x in block X_j."""
        return cls._from_classes(space, PARTITION, space.blocks, H)

    @classmethod
    def trivial(cls, space: Space, H=None) -> "BranchingKernel":
        """kappa_x = H for every x (trivial sigma-algebra).

        Representable on bounded spaces but outside the local-finiteness
        assumptions of the theory; flagged accordingly.
        """
        return cls._from_classes(space, TRIVIAL, np.zeros(space.n_sites, dtype=int), H,
                                 outside_assumptions=True)

    @classmethod
    def isotropic(cls, space: Space, n_bins: int, H=None) -> "BranchingKernel":
        """Uniform (or H-weighted) over the cells sharing the radial bin of x."""
        if space.kind != GRID or space.dim != 2:
            raise ValueError("the isotropic kernel needs a 2-d gridded box")
        return cls._from_classes(space, ISOTROPIC, radial_bins(space, n_bins), H)

    @classmethod
    def permutation(cls, space: Space, H=None) -> "BranchingKernel":
        """Uniform over the cells whose index is a coordinate permutation of x's."""
        return cls._from_classes(space, PERMUTATION, permutation_orbits(space), H)

    @classmethod
    def custom(cls, space: Space, matrix, conditional: bool | None = None) -> "BranchingKernel":
        """Arbitrary stochastic matrix. ``conditional`` is decided by the exact
        cocycle search unless given."""
        K = np.asarray(matrix, dtype=float)
        _stochastic(K)
        if conditional is None:
            conditional = cocycle_defect(K) < EPS_EXACT
        return cls(space, CUSTOM, K, bool(conditional))

    # -- queries --------------------------------------------------------------
    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]

    def class_masks(self) -> list[np.ndarray]:
        if self.classes is None:
            raise ValueError("kernel has no invariant partition")
        return [self.classes == c for c in np.unique(self.classes)]

    def is_invariant(self, mask) -> bool:
        """kappa_x(B) = 1 for every x in B."""
        mask = np.asarray(mask, dtype=bool)
        return bool(np.allclose(self.matrix[mask][:, ~mask].sum(axis=1), 0.0, atol=1e-15))

    def measure(self, rho_weights) -> np.ndarray:
        """kappa rho = ∫ kappa_x rho(dx) as site weights."""
        return np.asarray(rho_weights, dtype=float) @ self.matrix

    def __repr__(self):
        return f"BranchingKernel({self.variant}, conditional={self.conditional})"


def radial_bins(space: Space, n_bins: int) -> np.ndarray:
    r = np.linalg.norm(space.coords, axis=1)
    edges = np.linspace(0.0, r.max() * (1 + 1e-12), n_bins + 1)
    return np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)


def permutation_orbits(space: Space) -> np.ndarray:
    if space.kind != GRID:
        raise ValueError("the permutation kernel needs a gridded box")
    if len(set(space.shape)) != 1 or len(set(space.sides)) != 1 or len(set(space.origin)) != 1:
        raise ValueError("grid is not symmetric under coordinate permutations")
    idx = list(itertools.product(*(range(c) for c in space.shape)))
    keys = [tuple(sorted(i)) for i in idx]
    lookup = {k: n for n, k in enumerate(dict.fromkeys(keys))}
    return np.array([lookup[k] for k in keys])


def smoothing_kernel(space: Space, weight: float = 0.5) -> BranchingKernel:
    """Nearest-neighbour smoothing along the site order (reflecting ends).

    Not a conditional probability: it fails the cocycle condition.
    """
    n = space.n_sites
    K = np.zeros((n, n))
    side = (1.0 - weight) / 2
    for i in range(n):
        K[i, i] += weight
        K[i, max(i - 1, 0)] += side
        K[i, min(i + 1, n - 1)] += side
    return BranchingKernel.custom(space, K)


# -- operations ----------------------------------------------------------------

def kernel_apply(kappa: BranchingKernel, f) -> TestFunction:
    """x ↦ kappa_x(f)."""
    if isinstance(f, TestFunction):
        check_same_space(kappa, f)
    return TestFunction(kappa.space, kappa.matrix @ values_of(f))


def branch_counts(counts, kappa: BranchingKernel, rng: np.random.Generator) -> np.ndarray:
    """Relocate every unit of multiplicity independently by a draw from kappa_x."""
    c = np.asarray(counts, dtype=np.int64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if kappa.variant == IDENTITY:
        out = c.copy()
    elif kappa.classes is not None:
        out = np.zeros_like(c)
        for m in kappa.class_masks():
            idx = np.flatnonzero(m)
            if len(idx) == 1:
                out[:, idx[0]] = c[:, idx[0]]
                continue
            totals = c[:, idx].sum(axis=1)
            if totals.any():
                out[:, idx] = rng.multinomial(totals, kappa.matrix[idx[0], idx])
    else:
        out = np.zeros_like(c)
        K = kappa.matrix
        for x in np.flatnonzero(c.any(axis=0)):
            out += rng.multinomial(c[:, x], K[x])
    return out[0] if single else out


def branch_configuration(mu: PointConfiguration, kappa: BranchingKernel, rng) -> PointConfiguration:
    check_same_space(mu, kappa)
    return PointConfiguration(mu.space, branch_counts(mu.counts, kappa, rng))


def _compositions(t: int, s: int) -> np.ndarray:
    """All vectors of s nonnegative integers summing to t."""
    if s == 1:
        return np.array([[t]], dtype=np.int64)
    # stars and bars: choose positions of s-1 bars among t+s-1 slots
    bars = np.array(list(itertools.combinations(range(t + s - 1), s - 1)), dtype=np.int64)
    edges = np.hstack([np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), t + s - 1)])
    return np.diff(edges, axis=1) - 1


_LAW_CACHE: dict = {}


def _multinomial_law(t: int, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All outcomes of Multinomial(t, p) with their probabilities (support of p only)."""
    key = (t, p.tobytes())
    hit = _LAW_CACHE.get(key)
    if hit is not None:
        return hit
    sup = np.flatnonzero(p > 0)
    rows = _compositions(t, len(sup))
    logp = gammaln(t + 1) - gammaln(rows + 1).sum(axis=1) + rows @ np.log(p[sup])
    full = np.zeros((len(rows), len(p)), dtype=np.int64)
    full[:, sup] = rows
    if len(_LAW_CACHE) > 4096:
        _LAW_CACHE.clear()
    _LAW_CACHE[key] = (full, np.exp(logp))
    return _LAW_CACHE[key]


def branch_law(counts, kappa: BranchingKernel) -> dict:
    """Exact law of V_mu as {count tuple: probability}."""
    c = np.asarray(counts, dtype=np.int64)
    K = kappa.matrix
    factors = []
    if kappa.classes is not None:
        for m in kappa.class_masks():
            idx = np.flatnonzero(m)
            t = int(c[idx].sum())
            if t:
                factors.append(_multinomial_law(t, K[idx[0]]))
    else:
        for x in np.flatnonzero(c):
            factors.append(_multinomial_law(int(c[x]), K[x]))
    acc = {tuple([0] * len(c)): 1.0}
    for rows, probs in factors:
        nxt: dict = {}
        for key, p0 in acc.items():
            base = np.array(key)
            for r, p in zip(rows, probs):
                k = tuple((base + r).tolist())
                nxt[k] = nxt.get(k, 0.0) + p0 * p
        acc = nxt
    return acc


def branch_pmf(pmf: CountPmf, kappa: BranchingKernel) -> CountPmf:
    """Push an exact configuration law through the branching.

    With an invariant partition the branched law only depends on the class
    totals, so configurations are grouped by those first.
    """
    full = pmf.full_configs()
    if kappa.classes is not None:
        groups: dict = {}
        rep: dict = {}
        T = full @ np.stack(kappa.class_masks(), axis=1).astype(np.int64)
        for t, c, p in zip(map(tuple, T.tolist()), full, pmf.probs):
            groups[t] = groups.get(t, 0.0) + p
            rep.setdefault(t, c)
        items = [(rep[t], p) for t, p in groups.items()]
    else:
        items = zip(full, pmf.probs)
    out: dict = {}
    for c, p in items:
        for k, q in branch_law(c, kappa).items():
            out[k] = out.get(k, 0.0) + p * q
    return pmf_from_dict(out, pmf.n_sites, pmf.truncation_error)


# -- cocycle ---------------------------------------------------------------------

def _sign(sign) -> int:
    table = {"+": 1, "-": -1, "sum": 1, "difference": -1, "poisson": 0, 1: 1, -1: -1, 0: 0}
    try:
        return table[sign]
    except KeyError:
        raise ValueError(f"bad sign {sign!r}") from None


def cocycle_defect(K: np.ndarray) -> float:
    """max over x, a, b of |kappa_x(1_a kappa(1_b)) - kappa_x(1_b kappa(1_a))|."""
    D = K[:, :, None] * K[None, :, :]
    return float(np.abs(D - D.transpose(0, 2, 1)).max())


def second_iterated(K, rho_w, z, sign, mu=None) -> np.ndarray:
    """Matrix of pi_kappa^{(2)}(mu; {x1} x {x2})."""
    base = np.asarray(rho_w, dtype=float) + (0 if mu is None else sign * np.asarray(mu, dtype=float))
    first = z * (base @ K)
    return first[:, None] * z * ((base @ K)[None, :] + sign * K)


def check_cocycle(kappa: BranchingKernel, f1, f2, rho, z: float, sign, mu=None) -> VerificationReport:
    """Pointwise kappa(f1 kappa f2) = kappa(f2 kappa f1) and symmetry of pi_kappa^{(2)}."""
    s = _sign(sign)
    K = kappa.matrix
    a, b = values_of(f1), values_of(f2)
    left, right = K @ (a * (K @ b)), K @ (b * (K @ a))
    pointwise = float(np.abs(left - right).max())
    rw = values_of(getattr(rho, "weights", rho))
    base = rw + (0 if mu is None else s * np.asarray(getattr(mu, "counts", mu), dtype=float))
    P2 = second_iterated(K, rw, z, s, None if mu is None else getattr(mu, "counts", mu))
    direct12, direct21 = a @ P2 @ b, b @ P2 @ a
    formula12 = z ** 2 * ((base @ (K @ a)) * (base @ (K @ b)) + s * (base @ (K @ (a * (K @ b)))))
    sym = abs(direct12 - direct21)
    defect = max(pointwise, sym)
    return VerificationReport("cocycle", float(direct12), float(direct21), defect=defect,
                              passed=defect < EPS_EXACT, threshold=EPS_EXACT,
                              details={"pointwise_defect": pointwise, "pi2_symmetry_defect": sym,
                                       "formula_defect": float(abs(direct12 - formula12)),
                                       "variant": kappa.variant})


def cocycle_search(kappa: BranchingKernel, rho=None, z: float = 1.0, sign="+") -> VerificationReport:
    """check_cocycle over every pair of atom indicators; reports the worst pair."""
    n = kappa.n_sites
    rho_w = np.ones(n) if rho is None else values_of(getattr(rho, "weights", rho))
    worst, pair, reports = -1.0, None, 0
    eye = np.eye(n)
    for a in range(n):
        for b in range(a, n):
            r = check_cocycle(kappa, eye[a], eye[b], rho_w, z, sign)
            reports += 1
            if r.defect > worst:
                worst, pair = r.defect, (kappa.space.site_ids[a], kappa.space.site_ids[b])
    return VerificationReport("cocycle-search", 0.0, worst, defect=worst, passed=worst < EPS_EXACT,
                              threshold=EPS_EXACT,
                              details={"worst_pair": pair, "pairs": reports, "variant": kappa.variant})


# -- count preservation -------------------------------------------------------

@dataclass(frozen=True)
class _PreservationCheck:
    kappa: BranchingKernel
    sampler: object
    masks: np.ndarray

    def __call__(self, rng, size):
        mu = self.sampler(rng, size)
        nu = branch_counts(mu, self.kappa, rng)
        return np.sum((mu @ self.masks.T) != (nu @ self.masks.T), axis=1)


def verify_count_preservation(kappa: BranchingKernel, mu_sampler, invariant_sets, n_draws: int,
                              seed: int = 0, chunk: int = CHUNK * 5, workers: int = 1) -> VerificationReport:
    """Draw mu, branch it, and check zeta_B(V_mu) = zeta_B(mu) on every given set B.

    ``invariant_sets`` are boolean site masks or block-id collections.
    ``mu_sampler(rng, size)`` returns a (size, n_sites) count array.
    """
    masks = np.array([np.asarray(s, dtype=bool) if np.asarray(s).dtype == bool
                      and np.asarray(s).shape == (kappa.n_sites,) else kappa.space.mask(s)
                      for s in invariant_sets], dtype=np.int64)
    viol = replicate(_PreservationCheck(kappa, mu_sampler, masks), n_draws, seed, (7,), chunk, workers)
    total = int(viol.sum())
    return VerificationReport("count-preservation", 0.0, float(total), defect=float(total),
                              passed=total == 0, replicas=n_draws, seed=seed, threshold=0.0,
                              details={"violating_draws": int(np.count_nonzero(viol)),
                                       "sets": len(masks), "variant": kappa.variant})
