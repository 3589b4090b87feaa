"""Ground spaces, reference measures, test functions and exhaustions.

Both concrete spaces reduce to a finite list of *sites*: atoms for a
discrete space, cells (represented by their midpoints) for a gridded box.
Every measure and function is then a vector indexed by site, and all
integrals are finite sums.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DISCRETE = "discrete"
GRID = "grid"


class SpaceMismatch(ValueError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Space:
    kind: str
    site_ids: tuple
    coords: np.ndarray
    blocks: np.ndarray
    block_names: tuple
    cell_volume: float = 1.0
    shape: tuple | None = None
    origin: tuple | None = None
    sides: tuple | None = None

    def __post_init__(self):
        if self.kind not in (DISCRETE, GRID):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if len(self.site_ids) != len(self.blocks) or len(self.coords) != len(self.blocks):
            raise ValueError("site ids, coordinates and block labels must align")
        if len(set(self.site_ids)) != len(self.site_ids):
            raise ValueError("site ids must be unique")
        if len(self.blocks) and (self.blocks.min() < 0 or self.blocks.max() >= len(self.block_names)):
            raise ValueError("block label out of range")

    # -- constructors -----------------------------------------------------
    @classmethod
    def discrete(cls, atoms: Sequence, blocks: Sequence | None = None, coords=None) -> "Space":
        """Discrete space over named atoms.

        ``blocks`` gives the partition label of each atom (any hashable);
        by default every atom is its own block.
        """
        ids = tuple(str(a) for a in atoms)
        labels = list(ids) if blocks is None else [str(b) for b in blocks]
        names = tuple(dict.fromkeys(labels))
        index = {b: i for i, b in enumerate(names)}
        if coords is None:
            coords = np.arange(len(ids), dtype=float)[:, None]
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.shape[0] != len(ids):
            coords = coords.T
        return cls(DISCRETE, ids, _frozen(coords), _frozen([index[b] for b in labels], int), names)

    @classmethod
    def grid(cls, sides: Sequence[float], cells: Sequence[int], origin=None, blocks=None) -> "Space":
        """Gridded box ``origin + [0, sides)`` split into ``prod(cells)`` cells.

        Sites are cells in C order of their multi-index; coordinates are the
        cell midpoints. ``blocks`` is a label per cell (flat C order) or a
        callable mapping a cell multi-index to a label. Default: one block
        per cell.
        """
        sides = tuple(float(s) for s in sides)
        cells = tuple(int(c) for c in cells)
        if len(sides) != len(cells) or min(cells) < 1 or min(sides) <= 0:
            raise ValueError("sides and cells must have equal length and be positive")
        origin = tuple(0.0 for _ in sides) if origin is None else tuple(float(o) for o in origin)
        width = np.array(sides) / np.array(cells)
        idx = list(itertools.product(*(range(c) for c in cells)))
        centers = np.array(origin) + (np.array(idx, dtype=float) + 0.5) * width
        if blocks is None:
            labels = [str(i) for i in range(len(idx))]
        elif callable(blocks):
            labels = [str(blocks(i)) for i in idx]
        else:
            labels = [str(b) for b in blocks]
        if len(labels) != len(idx):
            raise ValueError("need one block label per cell")
        names = tuple(dict.fromkeys(labels))
        index = {b: i for i, b in enumerate(names)}
        ids = tuple("c" + "_".join(map(str, i)) for i in idx)
        return cls(GRID, ids, _frozen(centers), _frozen([index[b] for b in labels], int), names,
                   float(np.prod(width)), cells, origin, sides)

    # -- queries ------------------------------------------------------------
    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @property
    def n_blocks(self) -> int:
        return len(self.block_names)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def site(self, site_id) -> int:
        try:
            return self.site_ids.index(str(site_id))
        except ValueError:
            raise KeyError(f"no site {site_id!r}") from None

    def block(self, name) -> int:
        try:
            return self.block_names.index(str(name))
        except ValueError:
            raise KeyError(f"no block {name!r}") from None

    def block_ids(self, names: Iterable) -> frozenset:
        out = set()
        for b in names:
            out.add(int(b) if isinstance(b, (int, np.integer)) else self.block(b))
        return frozenset(out)

    def mask(self, region: Iterable | None) -> np.ndarray:
        """Boolean site mask of a block set (``None`` means everything)."""
        if region is None:
            return np.ones(self.n_sites, dtype=bool)
        ids = self.block_ids(region)
        return np.isin(self.blocks, sorted(ids))

    def sites_in(self, region: Iterable | None) -> np.ndarray:
        return np.flatnonzero(self.mask(region))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Space):
            return NotImplemented
        return (self.kind == other.kind and self.site_ids == other.site_ids
                and self.block_names == other.block_names
                and np.array_equal(self.blocks, other.blocks)
                and np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash((self.kind, self.site_ids, self.block_names))


def check_same_space(*objs) -> Space:
    spaces = [o.space for o in objs]
    for s in spaces[1:]:
        if s != spaces[0]:
            raise SpaceMismatch("objects live on different spaces")
    return spaces[0]


@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """Reference measure as a weight per site."""

    space: Space
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.shape != (self.space.n_sites,):
            raise ValueError(f"expected {self.space.n_sites} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_density(cls, space: Space, density) -> "BaseMeasure":
        """Midpoint rule: cell weight = density at the cell centre times cell volume."""
        if callable(density):
            d = np.array([density(c) for c in space.coords], dtype=float)
        else:
            d = np.broadcast_to(np.asarray(density, dtype=float), (space.n_sites,))
        return cls(space, d * space.cell_volume)

    @property
    def integral(self) -> bool:
        return bool(np.all(self.weights == np.round(self.weights)))

    def int_weights(self) -> np.ndarray:
        if not self.integral:
            raise ValueError("measure is not integer valued (a point measure is required)")
        return self.weights.astype(np.int64)

    def mass(self, region=None) -> float:
        return float(self.weights[self.space.mask(region)].sum())

    def block_mass(self) -> np.ndarray:
        return np.bincount(self.space.blocks, weights=self.weights, minlength=self.space.n_blocks)

    def __repr__(self):
        return f"BaseMeasure({self.space.kind}, total={self.weights.sum():g})"


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Nonnegative function on the sites."""

    __test__ = False  # keep pytest from collecting this class

    space: Space
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.space.n_sites,):
            raise ValueError(f"expected {self.space.n_sites} values, got shape {v.shape}")
        if np.any(np.isnan(v)) or np.any(v < 0):
            raise ValueError("test functions are nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def indicator(cls, space: Space, region=None, sites=None) -> "TestFunction":
        v = np.zeros(space.n_sites)
        if sites is not None:
            v[[space.site(s) if not isinstance(s, (int, np.integer)) else s for s in sites]] = 1.0
        else:
            v[space.mask(region)] = 1.0
        return cls(space, v)

    @classmethod
    def constant(cls, space: Space, c: float = 1.0) -> "TestFunction":
        return cls(space, np.full(space.n_sites, float(c)))

    @property
    def support(self) -> frozenset:
        return frozenset(np.unique(self.space.blocks[self.values != 0]).tolist())

    def __mul__(self, other):
        if isinstance(other, TestFunction):
            check_same_space(self, other)
            return TestFunction(self.space, self.values * other.values)
        return TestFunction(self.space, self.values * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        check_same_space(self, other)
        return TestFunction(self.space, self.values + other.values)


def values_of(f, space: Space | None = None) -> np.ndarray:
    """Site values of a TestFunction or plain array."""
    if isinstance(f, TestFunction):
        if space is not None and f.space != space:
            raise SpaceMismatch("function lives on a different space")
        return f.values
    return np.asarray(f, dtype=float)


@dataclass(frozen=True, eq=False)
class Exhaustion:
    """Increasing block sets B_1 ⊂ B_2 ⊂ ... covering the space."""

    space: Space
    levels: tuple = field(default=())

    def __post_init__(self):
        lv = tuple(self.space.block_ids(level) for level in self.levels)
        if not lv:
            raise ValueError("an exhaustion needs at least one level")
        for a, b in zip(lv, lv[1:]):
            if not a <= b:
                raise ValueError("exhaustion levels must be increasing")
        if lv[-1] != frozenset(range(self.space.n_blocks)):
            raise ValueError("the last level must contain every block")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def geometric(cls, space: Space, order: Sequence | None = None) -> "Exhaustion":
        """Levels made of the first 1, 2, 4, ... blocks (last level = all)."""
        order = list(range(space.n_blocks)) if order is None else list(space.block_ids(order))
        sizes, s = [], 1
        while s < len(order):
            sizes.append(s)
            s *= 2
        sizes.append(len(order))
        return cls(space, tuple(order[:s] for s in sizes))

    def __len__(self):
        return len(self.levels)

    def mask(self, n: int) -> np.ndarray:
        return self.space.mask(self.levels[n])

    def level_containing(self, region) -> int:
        ids = self.space.block_ids(region)
        for n, level in enumerate(self.levels):
            if ids <= level:
                return n
        raise ValueError("region is not bounded by the exhaustion")


def integrate(f, rho: BaseMeasure) -> float:
    """rho(f) = sum over sites of f * weight."""
    if isinstance(f, TestFunction):
        check_same_space(f, rho)
    v = values_of(f)
    if v.shape != rho.weights.shape:
        raise SpaceMismatch("function and measure have different numbers of sites")
    return float(v @ rho.weights)


def restrict(rho: BaseMeasure, region) -> BaseMeasure:
    return BaseMeasure(rho.space, np.where(rho.space.mask(region), rho.weights, 0.0))
