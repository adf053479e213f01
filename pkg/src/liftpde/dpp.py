"""The projected dynamic programming operator and its fixed point.

For an interior node x the operator is

    Tu(x) = (alpha/2) (S+[u](x) + S-[u](x)) + beta * sum_d w(d) u(x + d)

with the tilted optima ``S+/-[u](x) = max/min_d u(x+d) +/- sqrt(eps^2 - |d|^2)``
taken over the closed eps-ball stencil, and ``Tu = F`` on the strip.
``alpha = (p-2)/(p+n+1)`` and ``beta = 1 - alpha`` are the usual
p-harmonious weights of dimension n+1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .geometry import EXTERIOR, INTERIOR, STRIP, GridDomain
from .kernel import KernelWeights

log = logging.getLogger(__name__)


class SchemeError(ValueError):
    """Inconsistent scheme parameters."""


def coefficients(p: float, n: int) -> tuple[float, float]:
    """Weights ``(alpha, beta)`` of the strategic and noise terms."""
    if not p >= 2:
        raise SchemeError(f"p must satisfy p >= 2 (the scheme is only valid for p >= 2), got p={p}")
    if n < 1:
        raise SchemeError(f"dimension must be >= 1, got {n}")
    alpha = (p - 2.0) / (p + n + 1.0)
    return alpha, 1.0 - alpha


@dataclass(frozen=True)
class SchemeParams:
    p: float
    eps: float
    n: int
    tol_fixed_point: float = 1e-10
    max_iterations: int = 500_000
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        alpha, beta = coefficients(self.p, self.n)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if not self.eps > 0:
            raise SchemeError(f"eps must be positive, got {self.eps}")
        if not self.tol_fixed_point > 0:
            raise SchemeError("tol_fixed_point must be positive")
        if self.max_iterations < 1:
            raise SchemeError("max_iterations must be >= 1")

    @classmethod
    def for_grid(cls, p: float, grid: GridDomain, **kw) -> "SchemeParams":
        return cls(p=p, eps=grid.eps, n=grid.n, **kw)


@dataclass(eq=False)
class ValueField:
    """Node values on the lattice with the strip pinned to the boundary datum.

    ``values`` spans every node; exterior nodes hold the boundary function's
    extension when one was supplied, NaN otherwise.  ``boundary`` is the
    pinned copy of ``F`` aligned with ``grid.strip_ids``.
    """

    grid: GridDomain
    values: np.ndarray
    boundary: np.ndarray

    @classmethod
    def from_boundary(cls, grid: GridDomain, F, interior: float | np.ndarray | Callable = 0.0) -> "ValueField":
        """Build a field from ``F`` (callable on (k, n) coordinates, or strip values)."""
        values = np.full(grid.n_nodes, np.nan)
        if callable(F):
            off = grid.labels != INTERIOR
            values[off] = np.asarray(F(grid.coords[off]), dtype=float)
            boundary = values[grid.strip_ids].copy()
        else:
            boundary = np.array(F, dtype=float).reshape(-1)
            if boundary.size != grid.strip_ids.size:
                raise SchemeError(f"expected {grid.strip_ids.size} strip values, got {boundary.size}")
            values[grid.strip_ids] = boundary
        if not np.all(np.isfinite(boundary)):
            raise SchemeError("boundary data must be finite")
        ids = grid.interior_ids
        if callable(interior):
            values[ids] = np.asarray(interior(grid.coords[ids]), dtype=float)
        else:
            values[ids] = interior if np.ndim(interior) == 0 else np.asarray(interior, dtype=float)
        return cls(grid=grid, values=values, boundary=boundary)

    def copy(self) -> "ValueField":
        return ValueField(self.grid, self.values.copy(), self.boundary)

    def with_interior(self, interior) -> "ValueField":
        out = self.copy()
        out.values[self.grid.interior_ids] = interior
        return out

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior_ids]

    def boundary_sup_norm(self) -> float:
        return float(np.abs(self.boundary).max())

    def sup_norm(self) -> float:
        v = self.values[self.grid.labels != EXTERIOR]
        return float(np.abs(v).max())

    def check_pinned(self) -> bool:
        return bool(np.array_equal(self.values[self.grid.strip_ids], self.boundary))

    def __call__(self, node) -> float:
        return float(self.values[node])


@dataclass(frozen=True)
class ArgInfo:
    node: int
    value: float
    tilt: float


def _check_interior(field: ValueField, x: int):
    if field.grid.labels[x] != INTERIOR:
        raise SchemeError(f"node {x} is not interior")


def tilted_sup(field: ValueField, x: int) -> ArgInfo:
    """Tilted maximum ``max u(x+d) + sqrt(eps^2-|d|^2)`` and its argmax.

    Ties resolve to the smallest node id.
    """
    _check_interior(field, x)
    g = field.grid
    cand = field.values[x + g.stencil_flat] + g.stencil_tilt
    k = int(np.argmax(cand))
    return ArgInfo(node=int(x + g.stencil_flat[k]), value=float(cand[k]), tilt=float(g.stencil_tilt[k]))


def tilted_inf(field: ValueField, x: int) -> ArgInfo:
    _check_interior(field, x)
    g = field.grid
    cand = field.values[x + g.stencil_flat] - g.stencil_tilt
    k = int(np.argmin(cand))
    return ArgInfo(node=int(x + g.stencil_flat[k]), value=float(cand[k]), tilt=float(g.stencil_tilt[k]))


def _check_consistent(field: ValueField, params: SchemeParams, weights: KernelWeights):
    g = field.grid
    if params.n != g.n or weights.n != g.n:
        raise SchemeError("dimension mismatch between field, params and weights")
    if not (np.isclose(params.eps, g.eps, rtol=1e-12) and np.isclose(weights.eps, g.eps, rtol=1e-12)):
        raise SchemeError("eps mismatch between field, params and weights")
    if weights.weights.size != g.stencil_flat.size:
        raise SchemeError("weights were built for a different stencil")


def apply_T(field: ValueField, params: SchemeParams, weights: KernelWeights, *, backend: str | None = None) -> ValueField:
    """One application of the projected operator; the input is not modified."""
    _check_consistent(field, params, weights)
    out = field.copy()
    _apply_into(field.values, out.values, field.grid, params, weights, backend)
    return out


def _apply_into(src, dst, grid, params, weights, backend=None):
    if backend is None:
        fn = _kernels.apply_operator
    elif backend == "numba":
        fn = _kernels.apply_operator_numba
    elif backend == "numpy":
        fn = _kernels.apply_operator_numpy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return fn(src, dst, grid.interior_ids, grid.stencil_flat, grid.stencil_tilt, weights.weights,
              params.alpha, params.beta)


@dataclass
class SolveResult:
    field: ValueField
    converged: bool
    iterations: int
    residuals: np.ndarray
    min_increments: np.ndarray
    max_increments: np.ndarray
    error_estimate: float
    init: str

    @property
    def final_residual(self) -> float:
        return float(self.residuals[-1]) if self.residuals.size else 0.0

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iterations"


class ConvergenceError(RuntimeError):
    """Fixed-point iteration hit ``max_iterations``; carries the partial result."""

    def __init__(self, result: SolveResult):
        self.result = result
        super().__init__(
            f"no convergence after {result.iterations} iterations "
            f"(last residual {result.final_residual:.3e})"
        )


def initial_field(field: ValueField, init: str) -> ValueField:
    """Barrier initializations: interior set to inf F or sup F."""
    if init == "lower_barrier":
        return field.with_interior(float(field.boundary.min()))
    if init == "upper_barrier":
        return field.with_interior(float(field.boundary.max()))
    if init == "custom":
        return field.copy()
    raise SchemeError(f"unknown init {init!r}; expected lower_barrier, upper_barrier or custom")


def solve_fixed_point(
    field: ValueField,
    params: SchemeParams,
    weights: KernelWeights,
    init: str = "lower_barrier",
    *,
    stop: str = "error",
    relaxation: float = 1.0,
    raise_on_failure: bool = False,
    backend: str | None = None,
) -> SolveResult:
    """Picard iteration ``u <- T u`` to the fixed point.

    ``stop="residual"`` stops once ``||u_{j+1} - u_j|| <= tol``.  The default
    ``stop="error"`` additionally requires the a-posteriori bound
    ``res * r / (1 - r) <= tol``, with ``r`` the largest of the last few
    residual ratios, so that the returned field is within about ``tol`` of
    the fixed point rather than merely slow-moving.  Either rule accepts a
    residual at the roundoff floor.

    ``relaxation != 1`` over-relaxes the update; the iterates are then no
    longer guaranteed monotone.
    """
    _check_consistent(field, params, weights)
    if stop not in ("error", "residual"):
        raise SchemeError(f"unknown stop rule {stop!r}")
    if not 0 < relaxation < 2:
        raise SchemeError("relaxation must lie in (0, 2)")
    grid = field.grid
    cur = initial_field(field, init)
    a = cur.values
    b = a.copy()
    ids = grid.interior_ids
    tol = params.tol_fixed_point
    floor = 32 * np.finfo(float).eps * max(1.0, float(np.nanmax(np.abs(a[grid.labels != EXTERIOR]))))
    residuals = []
    lows = []
    highs = []
    converged = False
    estimate = np.inf
    window = 5
    for it in range(1, params.max_iterations + 1):
        res, lo, hi = _apply_into(a, b, grid, params, weights, backend)
        if relaxation != 1.0:
            b[ids] = a[ids] + relaxation * (b[ids] - a[ids])
            d = b[ids] - a[ids]
            res, lo, hi = float(np.abs(d).max()), float(d.min()), float(d.max())
        residuals.append(res)
        lows.append(lo)
        highs.append(hi)
        a, b = b, a
        if res <= floor:
            converged = True
            estimate = res
            break
        if res <= tol and stop == "residual":
            converged = True
            estimate = res
            break
        if res <= tol and len(residuals) > window:
            prev = np.asarray(residuals[-window - 1:])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = prev[1:] / prev[:-1]
            r = float(np.max(ratios))
            if r < 1.0:
                estimate = res * r / (1.0 - r)
                if estimate <= tol:
                    converged = True
                    break
    out = ValueField(grid, a, field.boundary)
    result = SolveResult(
        field=out,
        converged=converged,
        iterations=len(residuals),
        residuals=np.asarray(residuals),
        min_increments=np.asarray(lows),
        max_increments=np.asarray(highs),
        error_estimate=float(estimate),
        init=init,
    )
    if not converged:
        log.warning("fixed-point iteration stopped at max_iterations=%d, residual %.3e",
                    params.max_iterations, result.final_residual)
        if raise_on_failure:
            raise ConvergenceError(result)
    return result


@dataclass(frozen=True)
class ComparisonReport:
    sup_interior: float
    sup_strip: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.sup_interior <= self.sup_strip + self.slack


def check_comparison(a: ValueField, b: ValueField, slack: float = 0.0) -> ComparisonReport:
    """``sup_interior (A - B)`` against ``sup_strip (A - B)``."""
    if a.grid is not b.grid and a.grid.describe() != b.grid.describe():
        raise SchemeError("fields live on different grids")
    g = a.grid
    diff = a.values - b.values
    return ComparisonReport(
        sup_interior=float(diff[g.interior_ids].max()),
        sup_strip=float(diff[g.strip_ids].max()),
        slack=float(slack),
    )


__all__ = [
    "ArgInfo", "ComparisonReport", "ConvergenceError", "SchemeError", "SchemeParams", "SolveResult",
    "ValueField", "apply_T", "check_comparison", "coefficients", "initial_field", "solve_fixed_point",
    "tilted_inf", "tilted_sup", "INTERIOR", "STRIP",
]
