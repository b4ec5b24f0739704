"""Finite lattices, reproducing functions and the geometry-only constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path


@dataclass(frozen=True)
class Lattice:
    """Hypercubic lattice with sites enumerated row-major.

    ``metric="graph"`` uses breadth-first distances on ``edges`` (defaulting
    to the nearest-neighbour bonds of the grid); ``"manhattan"`` is the
    coordinate L1 distance, wrapped per axis when periodic.
    """

    extents: tuple
    metric: str = "manhattan"
    boundary: str = "open"
    edges: tuple | None = None
    distances: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        if not ext:
            raise ValueError("lattice needs at least one extent")
        if any(e < 1 for e in ext):
            raise ValueError(f"every extent must be >= 1, got {ext}")
        if self.metric not in ("manhattan", "graph"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        object.__setattr__(self, "extents", ext)
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple(tuple(sorted(map(int, e))) for e in self.edges))
        dist = self._manhattan() if self.metric == "manhattan" else self._graph()
        dist.setflags(write=False)
        object.__setattr__(self, "distances", dist)

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def sites(self) -> tuple:
        return tuple(range(self.n_sites))

    def coords(self, site: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(site, self.extents))

    def site(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.extents))

    def _coord_array(self):
        return np.array(np.unravel_index(np.arange(self.n_sites), self.extents)).T

    def _manhattan(self):
        c = self._coord_array()
        delta = np.abs(c[:, None, :] - c[None, :, :])
        if self.boundary == "periodic":
            ext = np.array(self.extents)
            delta = np.minimum(delta, ext - delta)
        return delta.sum(axis=-1).astype(float)

    def nearest_neighbour_bonds(self) -> tuple:
        bonds = set()
        c = self._coord_array()
        for s, xs in enumerate(c):
            for ax, ext in enumerate(self.extents):
                nxt = xs.copy()
                nxt[ax] += 1
                if nxt[ax] >= ext:
                    if self.boundary != "periodic" or ext <= 2:
                        continue
                    nxt[ax] = 0
                t = self.site(nxt)
                if t != s:
                    bonds.add(tuple(sorted((s, t))))
        return tuple(sorted(bonds))

    def _graph(self):
        edges = self.edges if self.edges is not None else self.nearest_neighbour_bonds()
        n = self.n_sites
        if edges:
            i, j = np.array(edges).T
            adj = csr_matrix((np.ones(len(edges)), (i, j)), shape=(n, n))
        else:
            adj = csr_matrix((n, n))
        return shortest_path(adj, method="D", directed=False, unweighted=True)

    def distance(self, x: int, y: int) -> float:
        return float(self.distances[x, y])

    def set_distance(self, xs: Sequence[int], ys: Sequence[int]) -> float:
        """Smallest distance between two site sets."""
        return float(self.distances[np.ix_(list(xs), list(ys))].min())


def build_lattice(dims: Sequence[int], metric: str = "manhattan", boundary: str = "open", edges=None) -> Lattice:
    if dims is None or len(dims) == 0:
        raise ValueError("empty extent list")
    return Lattice(tuple(dims), metric, boundary, None if edges is None else tuple(map(tuple, edges)))


@dataclass(frozen=True)
class ReproducingFunction:
    """Positive non-increasing kernel ``F(r)``.

    forms: ``exponential`` ``exp(-a r)``, ``power`` ``(1 + r)**(-p)``, and
    ``tabulated`` values at ``r = 0, 1, 2, ...`` (held at the last value
    beyond the table, linearly interpolated in between).
    """

    form: str
    parameters: tuple = ()

    def __post_init__(self):
        params = tuple(float(p) for p in self.parameters)
        object.__setattr__(self, "parameters", params)
        if self.form in ("exponential", "power"):
            if len(params) != 1 or params[0] < 0:
                raise ValueError(f"{self.form} F needs one non-negative parameter")
        elif self.form == "tabulated":
            vals = np.array(params)
            if vals.size == 0 or np.any(vals <= 0) or np.any(np.diff(vals) > 0):
                raise ValueError("tabulated F must be positive and non-increasing")
        else:
            raise ValueError(f"unknown reproducing-function form {self.form!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.form == "exponential":
            return np.exp(-self.parameters[0] * r)
        if self.form == "power":
            return (1.0 + r) ** (-self.parameters[0])
        vals = np.array(self.parameters)
        return np.interp(r, np.arange(vals.size), vals)


@dataclass(frozen=True)
class GeometryConstants:
    f_norm: float
    c_mu: float
    mu: float


def f_norm(F: ReproducingFunction, lat: Lattice) -> float:
    """``max_x sum_y F(d(x, y))``."""
    return float(F(lat.distances).sum(axis=1).max())


def _kernel(F, lat, mu):
    D = lat.distances
    return F(D) * np.exp(-mu * D)


def c_mu(F: ReproducingFunction, lat: Lattice, mu: float, convention: str = "standard") -> float:
    """Convolution constant of ``F``.

    ``standard``: ``max_{x,y} sum_z K(x,z) K(z,y) / K(x,y)`` with
    ``K = F(d) exp(-mu d)``.  ``literal`` uses the alternative index placement
    ``K(x,y) sum_z K(y,z) / K(x,z)`` for comparison.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    K = _kernel(F, lat, mu)
    if convention == "standard":
        vals = (K @ K) / K
    elif convention == "literal":
        vals = K * ((1.0 / K) @ K.T)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return float(vals.max())


def geometry_constants(F: ReproducingFunction, lat: Lattice, mu: float) -> GeometryConstants:
    return GeometryConstants(f_norm(F, lat), c_mu(F, lat, mu), mu)


def generator_mu_norm(gen, F: ReproducingFunction, lat: Lattice, mu: float, cb=None) -> float:
    """``max_{x,y} sum_{Z containing x,y} ||I_Z||_cb exp(mu d(x,y)) / F(d(x,y))``.

    ``cb`` optionally maps term index to a precomputed cb norm.
    """
    n = lat.n_sites
    S = np.zeros((n, n))
    for i, term in enumerate(gen.terms):
        if not term.support:
            raise ValueError(f"term {i} has empty support")
        if any(s >= n or s < 0 for s in term.support):
            raise ValueError(f"term {i} support {term.support} outside the lattice")
        w = term.cb_norm() if cb is None else cb[i]
        idx = np.array(term.support)
        S[np.ix_(idx, idx)] += w
    D = lat.distances
    return float((S * np.exp(mu * D) / F(D)).max())
