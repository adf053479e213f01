"""Oracles and checks tying the discrete fixed point back to the PDE.

The continuum limit solves the regularized p-Laplace equation
``div((1 + |Dv|^2)^{p/2-1} Dv) = 0``, equivalently ``w(x, s) = v(x) + s`` is
p-harmonic in one more dimension.  The checks here:

* :func:`lifted_dpp_residual` evaluates the ordinary (n+1)-dimensional
  mean-value scheme for ``w`` on a product lattice and measures how far the
  solved field is from satisfying it;
* :func:`pde_residual` plugs central differences into the nondivergence
  form ``-tr X - (p-2) <X xi, xi> / (1 + |xi|^2)``;
* :func:`eps_sweep` solves for a list of eps and measures the interior-core
  error against a known solution;
* :func:`constants_crosscheck` fits the eps^2 coefficients of the kernel
  average and of the tilted mid-range against the lifted Laplacian and
  normalized infinity-Laplacian.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .dpp import SchemeParams, ValueField, solve_fixed_point
from .geometry import INTERIOR, DomainShape, GridDomain, build_grid
from .kernel import ball_weights, quadrature_weights

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Oracle:
    """Boundary datum ``boundary`` plus, when known, the limit ``solution``.

    ``p_valid`` lists the exponents for which ``solution`` solves the
    regularized equation (``None``: every p >= 2).
    """

    kind: str
    boundary: Evaluator
    solution: Evaluator | None = None
    p_valid: tuple[float, ...] | None = None
    params: dict = field(default_factory=dict)

    def valid_for(self, p: float) -> bool:
        return self.solution is not None and (self.p_valid is None or p in self.p_valid)

    def __call__(self, x):
        return self.boundary(x)


def affine(a, b: float = 0.0) -> Oracle:
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def f(x):
        return np.asarray(x, dtype=float) @ a + b

    return Oracle("affine", f, f, None, {"a": a.tolist(), "b": float(b)})


def constant(c: float) -> Oracle:
    def f(x):
        return np.full(np.asarray(x).shape[0], float(c))

    return Oracle("constant", f, f, None, {"c": float(c)})


def linear_ramp(shape: DomainShape, f0: float = 0.0, f1: float = 1.0, axis: int = 0) -> Oracle:
    """``F = f0 + (f1 - f0) clamp((x_axis - lo)/(hi - lo), 0, 1)`` on the strip.

    On a box the limit is the unclamped affine ramp for every p: the flux
    ``t -> (1 + t^2)^{p/2-1} t`` is strictly increasing, so a 1-D solution has
    constant slope.
    """
    lo, hi = shape.bounds
    a, b = lo[axis], hi[axis]

    def t(x):
        return (np.asarray(x, dtype=float)[:, axis] - a) / (b - a)

    def bnd(x):
        return f0 + (f1 - f0) * np.clip(t(x), 0.0, 1.0)

    def sol(x):
        return f0 + (f1 - f0) * t(x)

    exact = sol if shape.kind == "box" else None
    return Oracle("linear_ramp", bnd, exact, None, {"f0": f0, "f1": f1, "axis": axis})


def harmonic_x2y2() -> Oracle:
    def f(x):
        x = np.asarray(x, dtype=float)
        return x[:, 0] ** 2 - x[:, 1] ** 2

    return Oracle("harmonic_x2y2", f, f, (2.0,))


def harmonic_xy() -> Oracle:
    def f(x):
        x = np.asarray(x, dtype=float)
        return x[:, 0] * x[:, 1]

    return Oracle("harmonic_xy", f, f, (2.0,))


def harmonic_poly(degree: int, imaginary: bool = False) -> Oracle:
    """Re or Im of ``(x + i y)^degree``."""

    def f(x):
        x = np.asarray(x, dtype=float)
        z = (x[:, 0] + 1j * x[:, 1]) ** degree
        return z.imag if imaginary else z.real

    return Oracle("harmonic_poly", f, f, (2.0,), {"degree": degree, "imaginary": imaginary})


def flux_is_increasing(p: float, lo: float = -50.0, hi: float = 50.0, samples: int = 20001) -> bool:
    """Numerical check that ``t -> (1 + t^2)^{p/2-1} t`` is strictly increasing."""
    t = np.linspace(lo, hi, samples)
    return bool(np.all(np.diff((1 + t * t) ** (p / 2 - 1) * t) > 0))


BUILTIN_BOUNDARIES = ("constant", "affine", "linear_ramp", "harmonic_xy", "harmonic_x2y2")


def builtin_boundary(name: str, shape: DomainShape, **params) -> Oracle:
    """Named boundary data used by the command line."""
    if name == "constant":
        return constant(params.get("c", 0.0))
    if name == "affine":
        a = params.get("a", [1.0] + [0.0] * (shape.n - 1))
        if len(np.atleast_1d(a)) != shape.n:
            raise ValueError(f"affine slope needs {shape.n} components")
        return affine(a, params.get("b", 0.0))
    if name == "linear_ramp":
        return linear_ramp(shape, params.get("f0", 0.0), params.get("f1", 1.0), params.get("axis", 0))
    if name in ("harmonic_xy", "harmonic_x2y2"):
        if shape.n != 2:
            raise ValueError(f"{name} needs a 2-D domain")
        return harmonic_xy() if name == "harmonic_xy" else harmonic_x2y2()
    raise ValueError(f"unknown boundary {name!r}; choose from {', '.join(BUILTIN_BOUNDARIES)}")


# -- lifted residual --------------------------------------------------------


@dataclass
class LiftedResidual:
    max_residual: float
    residuals: np.ndarray
    nodes: np.ndarray
    s: np.ndarray
    h_s: float


def _product_stencil(grid: GridDomain, h_s: float):
    """Per spatial offset: top lifted step for sup/inf, and open-ball lifted steps."""
    eps = grid.eps
    d2 = np.sum(grid.stencil_offsets ** 2, axis=1)
    room = np.sqrt(np.maximum(eps * eps - d2, 0.0))
    top = np.floor(room / h_s * (1 + 1e-12)) * h_s
    pts_d = []
    pts_t = []
    for k, r in enumerate(room):
        j = int(math.floor(r / h_s * (1 + 1e-12)))
        t = h_s * np.arange(-j, j + 1)
        t = t[d2[k] + t * t < eps * eps * (1 - 1e-12)]
        pts_d.append(np.full(t.size, k))
        pts_t.append(t)
    return top, np.concatenate(pts_d), np.concatenate(pts_t)


def lifted_dpp_residual(field: ValueField, params: SchemeParams, n_samples: int = 200, L: float = 1.0,
                        seed: int = 0, *, h_s: float | None = None, s_values=None, nodes=None) -> LiftedResidual:
    """Residual of ``w = v + s`` in the (n+1)-dimensional mean-value scheme.

    The right-hand side uses a product lattice: spatial stencil offsets ``d``
    and lifted steps ``t`` on a lattice of spacing ``h_s`` (default ``h``).
    Sup and inf run over the closed ball, the average over the open ball with
    equal weights.  Sample points are interior nodes whose whole stencil is
    interior, with ``s`` uniform on ``(-L, L)``.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    g = field.grid
    h_s = g.h if h_s is None else float(h_s)
    flat = g.stencil_flat
    ids = g.interior_ids
    deep = ids[np.all(g.labels[ids[:, None] + flat[None, :]] == INTERIOR, axis=1)]
    if deep.size == 0:
        raise ValueError("no interior node has its whole ball inside the domain; refine the grid")
    rng = np.random.default_rng(seed)
    if nodes is None:
        nodes = deep[rng.integers(0, deep.size, n_samples)]
    nodes = np.asarray(nodes)
    s = rng.uniform(-L, L, nodes.size) if s_values is None else np.broadcast_to(np.asarray(s_values, float), nodes.shape)
    top, kd, kt = _product_stencil(g, h_s)
    a, b = params.alpha, params.beta
    out = np.empty(nodes.size)
    for i, (x, si) in enumerate(zip(nodes, s)):
        v = field.values[x + flat]
        sup = np.max(v + si + top)
        inf = np.min(v + si - top)
        avg = np.mean(v[kd] + si + kt)
        rhs = 0.5 * a * (sup + inf) + b * avg
        out[i] = abs(field.values[x] + si - rhs)
    return LiftedResidual(float(out.max()), out, nodes, np.asarray(s), h_s)


# -- PDE residual -----------------------------------------------------------


@dataclass
class PDEResidual:
    max_residual: float
    residuals: np.ndarray
    nodes: np.ndarray
    stride: int


def operator_Fn(grad: np.ndarray, hess: np.ndarray, p: float) -> np.ndarray:
    """``-tr X - (p-2) <X xi, xi>/(1+|xi|^2)`` for stacked (k, n) / (k, n, n)."""
    tr = np.trace(hess, axis1=1, axis2=2)
    quad = np.einsum("ki,kij,kj->k", grad, hess, grad)
    return -tr - (p - 2) * quad / (1 + np.sum(grad * grad, axis=1))


def pde_residual(field: ValueField, params: SchemeParams, *, stride: int = 1,
                 core_margin: float | None = None) -> PDEResidual:
    """Max ``|F_n(Dv, D^2v)|`` from central differences over the interior core.

    The core keeps nodes farther than ``core_margin`` (default eps) from the
    boundary.  Differences use step ``stride * h``.  Requires ``h <= eps/8``.
    """
    g = field.grid
    if g.h > g.eps / 8 * (1 + 1e-12):
        raise ValueError(f"pde_residual needs h <= eps/8, got eps/h = {g.eps / g.h:.4g}")
    margin = g.eps if core_margin is None else core_margin
    ids = g.interior_ids[g.core_distance[g.interior_ids] > margin + stride * g.h * math.sqrt(g.n)]
    if ids.size == 0:
        raise ValueError("interior core is empty")
    v = field.values
    n = g.n
    st = g.strides * stride
    k = stride * g.h
    grad = np.empty((ids.size, n))
    hess = np.empty((ids.size, n, n))
    for i in range(n):
        up, dn = v[ids + st[i]], v[ids - st[i]]
        grad[:, i] = (up - dn) / (2 * k)
        hess[:, i, i] = (up - 2 * v[ids] + dn) / (k * k)
        for j in range(i + 1, n):
            hij = (v[ids + st[i] + st[j]] - v[ids + st[i] - st[j]] - v[ids - st[i] + st[j]]
                   + v[ids - st[i] - st[j]]) / (4 * k * k)
            hess[:, i, j] = hess[:, j, i] = hij
    r = np.abs(operator_Fn(grad, hess, params.p))
    return PDEResidual(float(r.max()), r, ids, stride)


# -- sweep ------------------------------------------------------------------


@dataclass
class SweepRow:
    eps: float
    h: float
    core_sup_error: float
    iterations: int
    residual: float
    converged: bool
    wall_ms: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    p: float
    ratio: float
    tol: float
    core_margin: float

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.core_sup_error for r in self.rows])

    @property
    def decreasing(self) -> bool:
        """Strictly decreasing errors along the sweep."""
        return bool(np.all(np.diff(self.errors) < 0))

    @property
    def nonincreasing(self) -> bool:
        """Errors never grow by more than the solver can resolve (2 tol)."""
        return bool(np.all(np.diff(self.errors) <= 2 * self.tol))

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)


def eps_sweep(shape: DomainShape, F: Evaluator, p: float, eps_list, ratio: float, oracle: Evaluator,
              *, tol: float = 1e-10, max_iterations: int = 500_000,
              core_margin: float | None = None) -> SweepReport:
    """Solve at each eps (``h = eps/ratio``) and record the interior-core error.

    The core is the set of interior nodes at distance greater than
    ``core_margin`` (default: the largest eps) from the boundary, the same
    for every row.  A row whose solve does not converge is kept and flagged.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    margin = max(eps_list) if core_margin is None else core_margin
    rows = []
    for eps in eps_list:
        t0 = time.perf_counter()
        grid = build_grid(shape, eps / ratio, eps)
        weights = quadrature_weights(grid)
        params = SchemeParams.for_grid(p, grid, tol_fixed_point=tol, max_iterations=max_iterations)
        res = solve_fixed_point(ValueField.from_boundary(grid, F), params, weights)
        core = grid.interior_ids[grid.core_distance[grid.interior_ids] > margin]
        err = float(np.abs(res.field.values[core] - oracle(grid.coords[core])).max())
        rows.append(SweepRow(eps, grid.h, err, res.iterations, res.final_residual, res.converged,
                             1000 * (time.perf_counter() - t0)))
    return SweepReport(rows, p, ratio, tol, margin)


# -- constants cross-check --------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    name: str
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]


def quadratic_test(n: int) -> TestFunction:
    return TestFunction("quadratic", lambda x: float(np.dot(x, x)), lambda x: 2 * np.asarray(x, float),
                        lambda x: 2 * np.eye(n))


def affine_test(a, b: float = 0.0) -> TestFunction:
    a = np.asarray(a, dtype=float)
    return TestFunction("affine", lambda x: float(np.dot(a, x) + b), lambda x: a.copy(),
                        lambda x: np.zeros((a.size, a.size)))


@dataclass
class CrosscheckReport:
    eps: np.ndarray
    average_increment: np.ndarray
    tilt_increment: np.ndarray
    average_coefficient: float
    tilt_coefficient: float
    average_expected: float
    tilt_expected: float

    @staticmethod
    def _rel(fit, exact):
        if exact == 0:
            return abs(fit)
        return abs(fit - exact) / abs(exact)

    @property
    def average_rel_error(self) -> float:
        return self._rel(self.average_coefficient, self.average_expected)

    @property
    def tilt_rel_error(self) -> float:
        return self._rel(self.tilt_coefficient, self.tilt_expected)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps.tolist(),
            "average_increment": self.average_increment.tolist(),
            "tilt_increment": self.tilt_increment.tolist(),
            "average_coefficient": self.average_coefficient,
            "average_expected": self.average_expected,
            "average_rel_error": self.average_rel_error,
            "tilt_coefficient": self.tilt_coefficient,
            "tilt_expected": self.tilt_expected,
            "tilt_rel_error": self.tilt_rel_error,
        }


def _tilted_extremum(fn: TestFunction, x: np.ndarray, eps: float, sign: float) -> float:
    """``max`` (sign=+1) or ``min`` (sign=-1) of ``f(x+d) + sign sqrt(eps^2-|d|^2)``, continuum."""

    def neg(y):
        d = eps * y
        return -(sign * fn.f(x + d) + math.sqrt(max(eps * eps * (1 - y @ y), 0.0)))

    g = fn.grad(x)
    y0 = sign * g / math.sqrt(1 + g @ g)
    best = None
    for start in (y0, 0.5 * y0, np.zeros_like(y0)):
        r = optimize.minimize(neg, start, method="SLSQP",
                              constraints=[{"type": "ineq", "fun": lambda y: 1.0 - y @ y}],
                              options={"ftol": 1e-15, "maxiter": 500})
        if best is None or r.fun < best.fun:
            best = r
    return sign * -best.fun


def constants_crosscheck(p: float, n: int, test: TestFunction, x, eps_list, *, ratio: float = 64) -> CrosscheckReport:
    """Fit eps^2 coefficients of the two building blocks of the scheme.

    Kernel average ``sum w(d) v(x+d)`` (lattice quadrature at ``eps/ratio``)
    minus ``v(x)`` is fitted on ``eps^2, eps^4`` and compared to
    ``Lap w / (2(n+3))``; the tilted mid-range ``(S+ + S-)/2 - v(x)``
    (continuum optimization) is fitted on ``eps^2, eps^3`` and compared to
    ``<D^2w Dw, Dw> / (2 |Dw|^2)`` with ``Dw = (Dv, 1)``.  ``p`` does not
    enter either coefficient; it is carried for the report.
    """
    x = np.asarray(x, dtype=float)
    if x.size != n:
        raise ValueError(f"test point must have {n} coordinates")
    eps = np.asarray(eps_list, dtype=float)
    g = test.grad(x)
    H = test.hess(x)
    Dw = np.append(g, 1.0)
    assert np.linalg.norm(Dw) >= 1.0, "lifted gradient lost its unit last component"
    D2w = np.zeros((n + 1, n + 1))
    D2w[:n, :n] = H
    avg_exact = np.trace(D2w) / (2 * (n + 3))
    tilt_exact = float(Dw @ D2w @ Dw) / (2 * float(Dw @ Dw))
    v0 = test.f(x)
    avg_inc = np.empty(eps.size)
    tilt_inc = np.empty(eps.size)
    for i, e in enumerate(eps):
        kw = ball_weights(e, e / ratio, n)
        vals = np.array([test.f(x + d) for d in kw.offsets])
        avg_inc[i] = float(kw.weights @ vals) - v0
        tilt_inc[i] = 0.5 * (_tilted_extremum(test, x, e, 1.0) + _tilted_extremum(test, x, e, -1.0)) - v0
    A = np.stack([eps ** 2, eps ** 4], axis=1) if eps.size >= 2 else eps[:, None] ** 2
    c_avg = float(np.linalg.lstsq(A, avg_inc, rcond=None)[0][0])
    B = np.stack([eps ** 2, eps ** 3], axis=1) if eps.size >= 2 else eps[:, None] ** 2
    c_tilt = float(np.linalg.lstsq(B, tilt_inc, rcond=None)[0][0])
    return CrosscheckReport(eps, avg_inc, tilt_inc, c_avg, c_tilt, float(avg_exact), tilt_exact)
