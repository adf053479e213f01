"""Inner loops: one application of the projected operator, and game trajectories.

Every kernel exists in two forms.  ``*_numba`` is compiled with numba (or is
the plain Python function when numba is disabled); ``*_numpy`` is a
vectorized numpy implementation used as the fallback and as a cross-check.
The trajectory kernels have no vectorized form: the fallback runs the same
code interpreted, which consumes the generator identically.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

# move codes
NOISE = 0
PLAYER_I = 1
PLAYER_II = 2

# selector codes (stencil index otherwise)
SEL_RANDOM = -1

# trajectory status
RUNNING = 0
TERMINATED = 1
FAULT = 2


@njit
def apply_operator_numba(vals, out, interior, flat, tilt, w, alpha, beta):
    """Write T(vals) into ``out`` at interior nodes.

    Returns ``(max |out - vals|, min(out - vals), max(out - vals))`` over the
    interior.  Strip/exterior entries of ``out`` are left untouched.
    """
    res = 0.0
    lo = np.inf
    hi = -np.inf
    half = 0.5 * alpha
    n_k = flat.size
    for i in range(interior.size):
        c = interior[i]
        acc = 0.0
        if alpha > 0.0:
            smax = -np.inf
            smin = np.inf
            for k in range(n_k):
                v = vals[c + flat[k]]
                a = v + tilt[k]
                if a > smax:
                    smax = a
                b = v - tilt[k]
                if b < smin:
                    smin = b
                acc += w[k] * v
            new = half * (smax + smin) + beta * acc
        else:
            for k in range(n_k):
                acc += w[k] * vals[c + flat[k]]
            new = beta * acc
        out[c] = new
        d = new - vals[c]
        if d < lo:
            lo = d
        if d > hi:
            hi = d
        if abs(d) > res:
            res = abs(d)
    return res, lo, hi


def apply_operator_numpy(vals, out, interior, flat, tilt, w, alpha, beta, chunk=4096):
    res = 0.0
    lo = np.inf
    hi = -np.inf
    for start in range(0, interior.size, chunk):
        c = interior[start:start + chunk]
        V = vals[c[:, None] + flat[None, :]]
        new = beta * (V * w).sum(axis=1)
        if alpha > 0.0:
            smax = (V + tilt).max(axis=1)
            smin = (V - tilt).min(axis=1)
            new = 0.5 * alpha * (smax + smin) + new
        d = new - vals[c]
        out[c] = new
        res = max(res, float(np.abs(d).max()))
        lo = min(lo, float(d.min()))
        hi = max(hi, float(d.max()))
    return res, lo, hi


apply_operator = apply_operator_numba if USE_NUMBA else apply_operator_numpy


@njit
def tilted_select_numba(vals, interior, flat, tilt, sign):
    """Stencil index of the tilted argmax (sign=+1) or argmin (sign=-1) per node.

    Ties go to the smallest stencil index, i.e. the smallest node id.
    """
    out = np.empty(interior.size, dtype=np.int64)
    for i in range(interior.size):
        c = interior[i]
        best = -np.inf
        arg = 0
        for k in range(flat.size):
            a = sign * vals[c + flat[k]] + tilt[k]
            if a > best:
                best = a
                arg = k
        out[i] = arg
    return out


def tilted_select_numpy(vals, interior, flat, tilt, sign, chunk=4096):
    out = np.empty(interior.size, dtype=np.int64)
    for start in range(0, interior.size, chunk):
        c = interior[start:start + chunk]
        V = sign * vals[c[:, None] + flat[None, :]] + tilt
        out[start:start + chunk] = np.argmax(V, axis=1)
    return out


tilted_select = tilted_select_numba if USE_NUMBA else tilted_select_numpy


@njit
def lattice_walk(rng, x, score, steps, limit, labels, flat, lattice, strides, tilt, cumw,
                 sel_i, sel_ii, alpha, beta, eps, h, snap, rec_x, rec_s, rec_m):
    """Advance one lattice-mode trajectory by at most ``limit`` steps.

    Per step the generator is consumed as: one uniform for the move type
    ([0, beta) noise, [beta, beta + alpha/2) player I, rest player II); then
    for a snapped noise step n+1 normals and one uniform (radius); for a
    kernel noise step one uniform; for a random strategic move one uniform.

    ``score`` accumulates tilt increments only (the caller adds s0).  When
    the record arrays are nonempty, the state after each step is stored.
    Returns ``(x, score, steps, status)``.
    """
    n = lattice.shape[1]
    n_k = flat.size
    g = np.empty(n + 1)
    m = np.empty(n, dtype=np.int64)
    p_one = beta + 0.5 * alpha
    eps2 = eps * eps * (1.0 + 1e-12)
    rec = rec_x.size > 0
    taken = 0
    while taken < limit:
        u = rng.random()
        if u < beta:
            if snap:
                for j in range(n + 1):
                    g[j] = rng.standard_normal()
                r = eps * rng.random() ** (1.0 / (n + 1))
                norm = 0.0
                for j in range(n + 1):
                    norm += g[j] * g[j]
                scale = r / math.sqrt(norm)
                r2 = 0.0
                for j in range(n):
                    m[j] = int(np.rint(scale * g[j] / h))
                    r2 += (m[j] * h) ** 2
                if r2 <= eps2:
                    jump = 0
                    for j in range(n):
                        jump += m[j] * strides[j]
                else:
                    # rounded past the rim: nearest offset of the closed ball
                    best = np.inf
                    kbest = 0
                    for k in range(n_k):
                        dd = 0.0
                        for j in range(n):
                            t = lattice[k, j] * h - scale * g[j]
                            dd += t * t
                        if dd < best:
                            best = dd
                            kbest = k
                    jump = flat[kbest]
            else:
                v = rng.random()
                k = np.searchsorted(cumw, v, side="right")
                if k >= n_k:
                    k = n_k - 1
                jump = flat[k]
            x = x + jump
            move = 0
        else:
            if u < p_one:
                k = sel_i[x]
                move = 1
            else:
                k = sel_ii[x]
                move = 2
            if k == -1:
                k = int(rng.random() * n_k)
                if k >= n_k:
                    k = n_k - 1
            elif k < 0 or k >= n_k:
                return x, score, steps, 2
            if move == 1:
                score += tilt[k]
            else:
                score -= tilt[k]
            x = x + flat[k]
        steps += 1
        if rec:
            rec_x[taken] = x
            rec_s[taken] = score
            rec_m[taken] = move
        taken += 1
        lab = labels[x]
        if lab != 0:
            if lab == 2:
                return x, score, steps, 2
            return x, score, steps, 1
    return x, score, steps, 0


@njit
def _inside(pos, kind, a, b):
    n = pos.size
    if kind == 0:
        for j in range(n):
            if not (pos[j] > a[j] and pos[j] < b[j]):
                return False
        return True
    r2 = 0.0
    for j in range(n):
        r2 += (pos[j] - a[j]) ** 2
    return r2 < b[0] * b[0]


@njit
def interpolate(vals, dims, strides, origin, h, pos):
    """Multilinear interpolation of node values at a physical point."""
    n = pos.size
    base = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    for j in range(n):
        t = (pos[j] - origin[j]) / h
        i0 = int(math.floor(t))
        if i0 < 0:
            i0 = 0
        if i0 > dims[j] - 2:
            i0 = dims[j] - 2
        base[j] = i0
        frac[j] = t - i0
    total = 0.0
    for corner in range(1 << n):
        wgt = 1.0
        idx = 0
        for j in range(n):
            if (corner >> j) & 1:
                wgt *= frac[j]
                idx += (base[j] + 1) * strides[j]
            else:
                wgt *= 1.0 - frac[j]
                idx += base[j] * strides[j]
        if wgt != 0.0:
            total += wgt * vals[idx]
    return total


@njit
def _tilted_search(vals, dims, strides, origin, h, pos, mesh, spacing, eps, sign, refine, out):
    """Mesh search for the tilted optimum, then ``refine`` pattern-search halvings."""
    n = pos.size
    eps2 = eps * eps
    cand = np.empty(n)
    best = -np.inf
    for k in range(mesh.shape[0]):
        d2 = 0.0
        for j in range(n):
            cand[j] = pos[j] + mesh[k, j]
            d2 += mesh[k, j] * mesh[k, j]
        val = sign * interpolate(vals, dims, strides, origin, h, cand) + math.sqrt(max(eps2 - d2, 0.0))
        if val > best:
            best = val
            for j in range(n):
                out[j] = mesh[k, j]
    step = 0.5 * spacing
    trial = np.empty(n)
    for _ in range(refine):
        for j in range(n):
            for sgn in (-1.0, 1.0):
                d2 = 0.0
                for q in range(n):
                    trial[q] = out[q]
                trial[j] += sgn * step
                for q in range(n):
                    d2 += trial[q] * trial[q]
                if d2 > eps2:
                    continue
                for q in range(n):
                    cand[q] = pos[q] + trial[q]
                val = sign * interpolate(vals, dims, strides, origin, h, cand) + math.sqrt(max(eps2 - d2, 0.0))
                if val > best:
                    best = val
                    for q in range(n):
                        out[q] = trial[q]
        step *= 0.5
    return best


@njit
def continuum_walk(rng, pos, score, steps, limit, kind, sa, sb, vals, dims, strides, origin, h,
                   mesh, spacing, eps, alpha, beta, mode_i, mode_ii, target_i, target_ii, refine_i, refine_ii,
                   rec_x, rec_s, rec_m):
    """Continuum-mode trajectory; positions are points, not nodes.

    Strategy modes: 0 greedy max, 1 greedy min, 2 random point of the closed
    ball (uniform over the mesh), 3 pull toward a target point.  The ``refine``
    arrays (one per player) hold pattern-search depths indexed by step count;
    the last entry is reused past the end.  Returns ``(score, steps, status)`` and
    updates ``pos`` in place.
    """
    n = pos.size
    g = np.empty(n + 1)
    d = np.empty(n)
    p_one = beta + 0.5 * alpha
    rec = rec_x.shape[0] > 0
    taken = 0
    while taken < limit:
        u = rng.random()
        if u < beta:
            for j in range(n + 1):
                g[j] = rng.standard_normal()
            r = eps * rng.random() ** (1.0 / (n + 1))
            norm = 0.0
            for j in range(n + 1):
                norm += g[j] * g[j]
            scale = r / math.sqrt(norm)
            for j in range(n):
                pos[j] += scale * g[j]
            move = 0
        else:
            if u < p_one:
                mode = mode_i
                target = target_i
                refine = refine_i
                move = 1
            else:
                mode = mode_ii
                target = target_ii
                refine = refine_ii
                move = 2
            depth = refine[min(steps, refine.size - 1)]
            if mode == 0:
                _tilted_search(vals, dims, strides, origin, h, pos, mesh, spacing, eps, 1.0, depth, d)
            elif mode == 1:
                _tilted_search(vals, dims, strides, origin, h, pos, mesh, spacing, eps, -1.0, depth, d)
            elif mode == 2:
                k = int(rng.random() * mesh.shape[0])
                if k >= mesh.shape[0]:
                    k = mesh.shape[0] - 1
                for j in range(n):
                    d[j] = mesh[k, j]
            else:
                dist = 0.0
                for j in range(n):
                    d[j] = target[j] - pos[j]
                    dist += d[j] * d[j]
                dist = math.sqrt(dist)
                if dist > eps:
                    for j in range(n):
                        d[j] *= eps / dist
            d2 = 0.0
            for j in range(n):
                d2 += d[j] * d[j]
            if d2 > eps * eps * (1.0 + 1e-12):
                return score, steps, 2
            t = math.sqrt(max(eps * eps - d2, 0.0))
            if move == 1:
                score += t
            else:
                score -= t
            for j in range(n):
                pos[j] += d[j]
        steps += 1
        if rec:
            for j in range(n):
                rec_x[taken, j] = pos[j]
            rec_s[taken] = score
            rec_m[taken] = move
        taken += 1
        if not _inside(pos, kind, sa, sb):
            return score, steps, 1
    return score, steps, 0
