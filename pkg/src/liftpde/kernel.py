"""The semicircular noise density and its lattice quadrature.

The density ``rho(h) = 2 sqrt(eps^2 - |h|^2) / |B_eps^{n+1}|`` on the n-ball
is the law of the first n coordinates of a point drawn uniformly from the
(n+1)-ball of radius eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GridDomain, lattice_ball

SEED_MIX = "numpy.random.SeedSequence(master_seed, spawn_key=(index,))"


def unit_ball_volume(m: int) -> float:
    """Lebesgue measure of the unit ball in R^m."""
    if m < 0:
        raise ValueError(f"dimension must be nonnegative, got {m}")
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def rho(h_vec, eps: float, n: int | None = None) -> float | np.ndarray:
    """Semicircular density at one offset, or at each row of an (k, n) array.

    ``n`` defaults to the trailing dimension of ``h_vec``.
    """
    h = np.asarray(h_vec, dtype=float)
    if n is None:
        n = 1 if h.ndim == 0 else h.shape[-1]
    if h.ndim == 0:
        h = h.reshape(1)
    r2 = np.sum(h * h, axis=-1)
    if np.any(r2 > eps * eps * (1 + 1e-12)):
        raise ValueError(f"offset outside the closed {eps}-ball")
    vol = eps ** (n + 1) * unit_ball_volume(n + 1)
    out = 2.0 * np.sqrt(np.maximum(eps * eps - r2, 0.0)) / vol
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class KernelWeights:
    """Normalized quadrature weights aligned with ``grid.stencil_offsets``.

    Rim offsets (``|d| = eps``) carry weight 0.  ``raw_sum`` is the
    pre-normalization sum of ``rho(d) h^n``, kept as a quality diagnostic.
    """

    offsets: np.ndarray
    weights: np.ndarray
    eps: float
    n: int
    raw_sum: float

    def __len__(self):
        return self.weights.size

    def second_moment(self) -> np.ndarray:
        return (self.offsets * self.weights[:, None]).T @ self.offsets


def quadrature_weights(grid: GridDomain) -> KernelWeights:
    return _weights(grid.stencil_offsets, grid.eps, grid.h, grid.n)


def ball_weights(eps: float, h: float, n: int) -> KernelWeights:
    """Same rule on a free-standing lattice ball (no domain needed)."""
    return _weights(h * lattice_ball(eps, h, n).astype(float), eps, h, n)


def _weights(offsets, eps, h, n) -> KernelWeights:
    if offsets.shape[0] < 3 ** n:
        raise ValueError(f"stencil has {offsets.shape[0]} nodes, fewer than 3^n = {3 ** n}")
    raw = rho(offsets, eps, n) * h ** n
    total = float(raw.sum())
    w = raw / total
    w.setflags(write=False)
    return KernelWeights(offsets=offsets, weights=w, eps=eps, n=n, raw_sum=total)


def trajectory_rng(seed: int) -> np.random.Generator:
    """Philox generator for one trajectory."""
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit per-worker/per-trajectory seed from a master seed and an index."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_noise(eps: float, n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from the semicircular density by projecting the uniform (n+1)-ball.

    Gaussian direction times ``U**(1/(n+1))`` radius, last coordinate dropped.
    The draw order per sample (n+1 normals, then one uniform) is shared with
    the trajectory kernels.
    """
    if size is None:
        g = rng.standard_normal(n + 1)
        r = eps * rng.random() ** (1.0 / (n + 1))
        return r * g[:n] / np.sqrt(np.dot(g, g))
    out = np.empty((size, n))
    for i in range(size):
        g = rng.standard_normal(n + 1)
        r = eps * rng.random() ** (1.0 / (n + 1))
        out[i] = r * g[:n] / np.sqrt(np.dot(g, g))
    return out


def sample_noise_batch(eps: float, n: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized sampler with the same law (different draw order)."""
    g = rng.standard_normal((size, n + 1))
    r = eps * rng.random(size) ** (1.0 / (n + 1))
    return (r / np.linalg.norm(g, axis=1))[:, None] * g[:, :n]


def cap_probability(eps: float, n: int, threshold: float, *, nodes: int = 4000) -> float:
    """Mass of ``{h : h . nu >= threshold}`` under the semicircular density.

    Only depends on ``h . nu``, whose marginal is the first coordinate of the
    uniform (n+1)-ball: density proportional to ``(eps^2 - t^2)^{n/2}``.
    Computed by Gauss-Legendre quadrature.
    """
    t, w = np.polynomial.legendre.leggauss(nodes)

    def integral(a, b):
        x = 0.5 * (b - a) * t + 0.5 * (b + a)
        return 0.5 * (b - a) * np.sum(w * np.maximum(eps * eps - x * x, 0.0) ** (n / 2))

    return float(integral(threshold, eps) / integral(-eps, eps))
