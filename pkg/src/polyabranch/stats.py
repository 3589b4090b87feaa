"""Estimates, comparisons and verification reports."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

EPS_EXACT = 1e-12
Z_MAX = 4.0


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float = 0.0
    n: int = 0

    @classmethod
    def from_values(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float)
        n = len(v)
        se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(v.mean()), se, n)

    @classmethod
    def exact(cls, value: float) -> "Estimate":
        return cls(float(value), 0.0, 0)

    @property
    def is_exact(self) -> bool:
        return self.stderr == 0.0

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def __str__(self):
        return f"{self.mean:.6g}" if self.is_exact else f"{self.mean:.6g} ± {self.stderr:.2g}"


def columns(values) -> list[Estimate]:
    """One Estimate per column of a (replicas, m) array."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return [Estimate.from_values(v[:, j]) for j in range(v.shape[1])]


def compare_estimates(a: Estimate, b: Estimate) -> float:
    """z-score (a - b)/sqrt(se_a² + se_b²); the absolute defect if both are exact."""
    if a.is_exact and b.is_exact:
        return abs(a.mean - b.mean)
    return (a.mean - b.mean) / math.sqrt(a.stderr ** 2 + b.stderr ** 2)


def bonferroni_z(z_max: float, m: int) -> float:
    """Two-sided threshold whose family-wise level over m tests equals that of |z| < z_max."""
    if m <= 1:
        return z_max
    return float(stats.norm.isf(stats.norm.sf(z_max) / m))


@dataclass
class VerificationReport:
    name: str
    lhs: float
    rhs: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    z_score: float | None = None
    defect: float | None = None
    passed: bool = False
    replicas: int = 0
    seed: int | None = None
    threshold: float | None = None
    details: dict = field(default_factory=dict)

    @classmethod
    def exact(cls, name, lhs, rhs, eps=EPS_EXACT, **kw) -> "VerificationReport":
        d = abs(lhs - rhs)
        return cls(name, float(lhs), float(rhs), defect=float(d), passed=bool(d < eps),
                   threshold=eps, **kw)

    @classmethod
    def from_estimates(cls, name, a: Estimate, b: Estimate, z_max=Z_MAX, eps=EPS_EXACT,
                       allowance: float = 0.0, **kw) -> "VerificationReport":
        if a.is_exact and b.is_exact:
            return cls.exact(name, a.mean, b.mean, eps, replicas=max(a.n, b.n), **kw)
        z = compare_estimates(a, b)
        se = math.sqrt(a.stderr ** 2 + b.stderr ** 2)
        gap = abs(a.mean - b.mean)
        passed = gap < z_max * se + allowance
        return cls(name, a.mean, b.mean, a.stderr, b.stderr, z_score=float(z), defect=float(gap),
                   passed=bool(passed), replicas=max(a.n, b.n), threshold=z_max, **kw)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.z_score is None:
            return f"[{tag}] {self.name}: lhs={self.lhs:.12g} rhs={self.rhs:.12g} defect={self.defect:.3g}"
        return (f"[{tag}] {self.name}: lhs={self.lhs:.6g}±{self.lhs_se:.2g} "
                f"rhs={self.rhs:.6g}±{self.rhs_se:.2g} z={self.z_score:+.2f}")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def all_passed(reports) -> bool:
    return all(r.passed for r in reports)


def _pool(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0):
    """Merge cells in increasing expected order until each has >= min_expected."""
    order = np.argsort(expected)
    obs_p, exp_p = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += observed[i]
        acc_e += expected[i]
        if acc_e >= min_expected:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_p:
            obs_p[-1] += acc_o
            exp_p[-1] += acc_e
        else:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
    return np.array(obs_p), np.array(exp_p)


def chi_square_gof(samples, pmf: dict) -> float:
    """p-value of a chi-square goodness-of-fit test of row samples against a pmf.

    ``samples`` is an array of shape (n, d) (or (n,)); ``pmf`` maps tuples
    (or scalars) to probabilities. Observations outside the pmf's support
    form an extra cell of expectation = missing mass.
    """
    s = np.asarray(samples)
    if s.ndim == 1:
        s = s[:, None]
    n = len(s)
    keys = [k if isinstance(k, tuple) else (k,) for k in pmf]
    probs = np.array(list(pmf.values()), dtype=float)
    index = {k: i for i, k in enumerate(keys)}
    uniq, cnt = np.unique(s, axis=0, return_counts=True)
    obs = np.zeros(len(keys) + 1)
    for row, c in zip(map(tuple, uniq.tolist()), cnt):
        obs[index.get(row, len(keys))] += c
    exp = np.append(probs, max(0.0, 1.0 - probs.sum())) * n
    o, e = _pool(obs, exp)
    if len(o) < 2:
        return 1.0
    e = e * o.sum() / e.sum()
    return float(stats.chisquare(o, e).pvalue)


def chi_square_two_sample(a, b) -> float:
    """p-value of a chi-square homogeneity test between two samples of rows."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    keys, inv = np.unique(np.vstack([a, b]), axis=0, return_inverse=True)
    inv = inv.ravel()
    ca = np.bincount(inv[: len(a)], minlength=len(keys)).astype(float)
    cb = np.bincount(inv[len(a):], minlength=len(keys)).astype(float)
    # pool sparse categories by combined frequency
    order = np.argsort(ca + cb)
    table, acc = [], np.zeros(2)
    for i in order:
        acc += (ca[i], cb[i])
        if acc.sum() >= 10:
            table.append(acc.copy())
            acc[:] = 0
    if acc.sum():
        if table:
            table[-1] += acc
        else:
            table.append(acc.copy())
    if len(table) < 2:
        return 1.0
    return float(stats.chi2_contingency(np.array(table).T, correction=False).pvalue)


def covariance_z(x, y) -> float:
    """z-score of the empirical covariance of paired samples against zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    prod = (x - x.mean()) * (y - y.mean())
    se = prod.std(ddof=1) / math.sqrt(len(prod))
    return 0.0 if se == 0 else float(prod.mean() / se)
