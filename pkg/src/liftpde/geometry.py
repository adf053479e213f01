"""Computational domains and the lattice that carries every field.

A :class:`GridDomain` is a uniform axis-aligned lattice covering the bounding
box of the domain inflated by ``eps + h``.  Each node is classified as
interior (inside the open domain), strip (outside, within distance ``eps``)
or exterior.  Node ids follow C-order raveling of the lattice coordinates, so
node order is lexicographic in lattice coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INTERIOR = 0
STRIP = 1
EXTERIOR = 2
LABEL_NAMES = ("interior", "strip", "exterior")

# Minimum eps/h: below this the ball stencil is too coarse for the discrete
# sup/inf and the quadrature to mean anything.
MIN_RESOLUTION = 4.0

# Classification slack, relative to h; absorbs roundoff in lo + i*h.
_REL_TOL = 1e-9


class GridError(ValueError):
    """Invalid domain or lattice parameters."""


@dataclass(frozen=True)
class DomainShape:
    """A box ``prod (lower_i, upper_i)`` or a ball ``|x - center| < radius``."""

    kind: str
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind == "box":
            lo = tuple(float(v) for v in self.lower)
            hi = tuple(float(v) for v in self.upper)
            if len(lo) == 0 or len(lo) != len(hi):
                raise GridError("box needs matching, nonempty lower/upper bounds")
            if any(not (a < b) for a, b in zip(lo, hi)):
                raise GridError(f"box needs lower < upper on every axis, got {lo} / {hi}")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "ball":
            c = tuple(float(v) for v in self.center)
            if len(c) == 0:
                raise GridError("ball needs a nonempty center")
            if not self.radius > 0:
                raise GridError(f"ball radius must be positive, got {self.radius}")
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise GridError(f"unknown domain kind {self.kind!r}; expected 'box' or 'ball'")

    @classmethod
    def box(cls, lower, upper) -> "DomainShape":
        return cls("box", lower=tuple(np.atleast_1d(lower)), upper=tuple(np.atleast_1d(upper)))

    @classmethod
    def ball(cls, center, radius: float) -> "DomainShape":
        return cls("ball", center=tuple(np.atleast_1d(center)), radius=radius)

    @property
    def n(self) -> int:
        return len(self.lower) if self.kind == "box" else len(self.center)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return np.array(self.lower), np.array(self.upper)
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            lo, hi = self.bounds
            return float(np.linalg.norm(hi - lo))
        return 2.0 * self.radius

    def width(self, direction) -> float:
        """Extent ``sup x.nu - inf x.nu`` of the domain along a unit vector."""
        nu = np.asarray(direction, dtype=float)
        nu = nu / np.linalg.norm(nu)
        if self.kind == "box":
            lo, hi = self.bounds
            return float(np.sum(np.abs(nu) * (hi - lo)))
        return 2.0 * self.radius

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the closed domain."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "box":
            lo, hi = self.bounds
            gap = np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)
            return np.sqrt(np.sum(gap * gap, axis=1))
        r = np.linalg.norm(x - np.array(self.center), axis=1)
        return np.maximum(r - self.radius, 0.0)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Membership in the open domain, shrunk by ``tol``."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "box":
            lo, hi = self.bounds
            return np.all((x > lo + tol) & (x < hi - tol), axis=1)
        r = np.linalg.norm(x - np.array(self.center), axis=1)
        return r < self.radius - tol

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from interior points to the boundary (0 outside)."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "box":
            lo, hi = self.bounds
            d = np.minimum(x - lo, hi - x).min(axis=1)
        else:
            d = self.radius - np.linalg.norm(x - np.array(self.center), axis=1)
        return np.maximum(d, 0.0)

    def describe(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


def lattice_ball(eps: float, h: float, n: int) -> np.ndarray:
    """Integer vectors ``m`` with ``|m| h <= eps``, in lexicographic order."""
    r = int(math.floor(eps / h * (1 + 1e-12)))
    axes = [np.arange(-r, r + 1)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.sum(pts * pts, axis=1) <= (eps / h) ** 2 * (1 + 1e-12)
    return pts[keep].astype(np.int64)


@dataclass(frozen=True, eq=False)
class GridDomain:
    shape: DomainShape
    h: float
    eps: float
    origin: np.ndarray
    dims: tuple[int, ...]
    labels: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.shape.n

    @property
    def n_nodes(self) -> int:
        return int(self.labels.size)

    @property
    def strides(self) -> np.ndarray:
        """Node-id increment per unit step along each lattice axis."""
        s = np.ones(self.n, dtype=np.int64)
        for i in range(self.n - 2, -1, -1):
            s[i] = s[i + 1] * self.dims[i + 1]
        return s

    def lattice_coords(self, node_ids) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(node_ids), self.dims), axis=-1).astype(np.int64)

    def node_id(self, lattice) -> np.ndarray:
        idx = np.asarray(lattice, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.dims)

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_nodes, n) physical coordinates."""
        return self.origin + self.h * self.lattice_coords(np.arange(self.n_nodes))

    def nearest_node(self, x) -> int:
        idx = np.rint((np.asarray(x, dtype=float) - self.origin) / self.h).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.array(self.dims)):
            raise GridError(f"point {x} lies outside the lattice")
        return int(self.node_id(idx))

    @cached_property
    def interior_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == INTERIOR)

    @cached_property
    def strip_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == STRIP)

    @cached_property
    def stencil_lattice(self) -> np.ndarray:
        """Integer offsets ``m`` with ``|m| h <= eps``, lexicographically sorted."""
        return lattice_ball(self.eps, self.h, self.n)

    @cached_property
    def stencil_offsets(self) -> np.ndarray:
        """Physical offset vectors of the closed eps-ball stencil."""
        return self.h * self.stencil_lattice.astype(float)

    @cached_property
    def stencil_flat(self) -> np.ndarray:
        """Node-id increments matching :attr:`stencil_offsets`."""
        return self.stencil_lattice @ self.strides

    @cached_property
    def stencil_tilt(self) -> np.ndarray:
        """``sqrt(eps^2 - |d|^2)`` per stencil offset, clamped at 0."""
        d2 = np.sum(self.stencil_offsets ** 2, axis=1)
        return np.sqrt(np.maximum(self.eps * self.eps - d2, 0.0))

    @cached_property
    def core_distance(self) -> np.ndarray:
        """Distance of every node to the domain boundary (0 off the domain)."""
        return self.shape.boundary_distance(self.coords)

    def describe(self) -> dict:
        return {
            "shape": self.shape.describe(),
            "h": self.h,
            "eps": self.eps,
            "dims": list(self.dims),
            "n_interior": int(self.interior_ids.size),
            "n_strip": int(self.strip_ids.size),
        }


def build_grid(shape: DomainShape, h: float, eps: float) -> GridDomain:
    """Lattice discretization of the domain plus its eps-strip."""
    if not (h > 0 and eps > 0):
        raise GridError(f"h and eps must be positive, got h={h}, eps={eps}")
    if eps < MIN_RESOLUTION * h * (1 - 1e-12):
        raise GridError(f"eps/h = {eps / h:.6g} is below the resolution floor {MIN_RESOLUTION:g}")
    if shape.diameter < 2 * eps:
        raise GridError(
            f"domain diameter {shape.diameter:.6g} < 2*eps = {2 * eps:.6g}; nothing but strip would remain"
        )
    h = float(h)
    eps = float(eps)
    lo, hi = shape.bounds
    anchor = lo if shape.kind == "box" else np.array(shape.center)
    pad = eps + h
    # lattice index range per axis, anchored so that `anchor` is a node
    i_lo = np.floor((lo - pad - anchor) / h + 1e-9).astype(np.int64)
    i_hi = np.ceil((hi + pad - anchor) / h - 1e-9).astype(np.int64)
    origin = anchor + i_lo * h
    dims = tuple(int(v) for v in (i_hi - i_lo + 1))

    # coordinates once, to classify; GridDomain recomputes lazily
    axes = [origin[k] + h * np.arange(dims[k]) for k in range(shape.n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, shape.n)
    tol = _REL_TOL * h
    inside = shape.contains(pts, tol=tol)
    near = shape.distance(pts) <= eps + tol
    labels = np.full(pts.shape[0], EXTERIOR, dtype=np.int8)
    labels[near & ~inside] = STRIP
    labels[inside] = INTERIOR
    labels.setflags(write=False)
    origin.setflags(write=False)
    grid = GridDomain(shape=shape, h=h, eps=eps, origin=origin, dims=dims, labels=labels)
    if grid.interior_ids.size == 0:
        raise GridError("lattice has no interior nodes; refine h")
    return grid


def ball_stencil(grid: GridDomain, center: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes within distance eps of an interior node, with their offsets.

    Returns ``(node_ids, offsets)``; node ids ascend, the center is included
    with offset zero.
    """
    if grid.labels[center] != INTERIOR:
        raise GridError(f"node {center} is not interior")
    return center + grid.stencil_flat, grid.stencil_offsets.copy()
