import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from liftpde.geometry import (EXTERIOR, INTERIOR, STRIP, DomainShape, GridError, ball_stencil, build_grid,
                              lattice_ball)


def test_unit_interval_labels():
    g = build_grid(DomainShape.box([0], [1]), 0.025, 0.1)
    x = g.coords[:, 0]
    inner = g.labels == INTERIOR
    strip = g.labels == STRIP
    assert np.all((x[inner] > 0) & (x[inner] < 1))
    assert np.all(((x[strip] >= -0.1 - 1e-12) & (x[strip] <= 0)) | ((x[strip] >= 1) & (x[strip] <= 1.1 + 1e-12)))
    assert np.isclose(x[strip].min(), -0.1) and np.isclose(x[strip].max(), 1.1)
    assert inner.sum() == 39
    assert strip.sum() == 10


def test_disk_labels():
    g = build_grid(DomainShape.ball([0, 0], 1.0), 0.05, 0.2)
    assert g.labels[g.nearest_node([0.0, 0.0])] == INTERIOR
    assert g.labels[g.nearest_node([1.1, 0.0])] == STRIP
    assert g.labels[g.nearest_node([1.2, 0.0])] == STRIP
    assert g.labels[g.nearest_node([1.2, 0.05])] == EXTERIOR


def test_square_interior_count_matches_scan():
    g = build_grid(DomainShape.box([0, 0], [1, 1]), 0.05, 0.2)
    count = 0
    for i, j in itertools.product(range(-10, 31), repeat=2):
        x, y = 0.05 * i, 0.05 * j
        if 0 < x < 1 and 0 < y < 1 and not (np.isclose(x, 0) or np.isclose(x, 1) or np.isclose(y, 0) or np.isclose(y, 1)):
            count += 1
    assert g.interior_ids.size == count == 19 * 19


def test_rejects_coarse_and_tiny():
    with pytest.raises(GridError):
        build_grid(DomainShape.box([0], [1]), 0.05, 0.1)
    with pytest.raises(GridError):
        build_grid(DomainShape.box([0], [0.3]), 0.02, 0.2)
    with pytest.raises(GridError):
        DomainShape.box([1], [0])
    with pytest.raises(GridError):
        DomainShape.ball([0], -1)


def test_noninteger_ratio_allowed():
    g = build_grid(DomainShape.box([0], [1]), 0.1 / 5.5, 0.1)
    assert g.interior_ids.size > 0


def test_ball_stencil_1d():
    g = build_grid(DomainShape.box([0], [1]), 0.025, 0.1)
    c = g.nearest_node([0.5])
    nodes, offs = ball_stencil(g, c)
    assert np.allclose(g.coords[nodes, 0], 0.4 + 0.025 * np.arange(9))
    assert np.allclose(offs[:, 0], g.coords[nodes, 0] - 0.5)
    assert 0.0 in offs[:, 0]


def test_ball_stencil_2d_count():
    g = build_grid(DomainShape.box([0, 0], [1, 1]), 0.05, 0.2)
    nodes, offs = ball_stencil(g, g.nearest_node([0.5, 0.5]))
    brute = sum(1 for i in range(-4, 5) for j in range(-4, 5) if (0.05 * i) ** 2 + (0.05 * j) ** 2 <= 0.04 + 1e-12)
    assert nodes.size == brute == 49
    assert np.all(np.linalg.norm(offs, axis=1) <= 0.2 + 1e-12)
    assert np.all(np.diff(nodes) > 0)


def test_ball_stencil_rejects_strip():
    g = build_grid(DomainShape.box([0], [1]), 0.025, 0.1)
    with pytest.raises(GridError):
        ball_stencil(g, g.strip_ids[0])


def test_determinism():
    a = build_grid(DomainShape.ball([0.1, -0.2], 0.7), 0.03, 0.15)
    b = build_grid(DomainShape.ball([0.1, -0.2], 0.7), 0.03, 0.15)
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.coords.tobytes() == b.coords.tobytes()


@given(st.sampled_from(["box", "ball"]), st.integers(1, 2), st.floats(4.0, 7.0), st.floats(0.4, 1.5))
def test_label_invariants(kind, n, ratio, size):
    eps = 0.15
    shape = DomainShape.box([0] * n, [size] * n) if kind == "box" else DomainShape.ball([0.3] * n, size / 2 + 0.2)
    g = build_grid(shape, eps / ratio, eps)
    pts = g.coords
    inside = shape.contains(pts)
    dist = shape.distance(pts)
    tol = 1e-9 * g.h
    assert np.all(np.isin(g.labels, [INTERIOR, STRIP, EXTERIOR]))
    assert np.all(inside[g.labels == INTERIOR] | (shape.boundary_distance(pts[g.labels == INTERIOR]) < tol))
    assert np.all(dist[g.labels == STRIP] <= eps + tol)
    assert np.all(dist[g.labels == EXTERIOR] > eps - tol)
    # every interior ball stays on interior/strip nodes, and offsets are symmetric
    nbr = g.interior_ids[:, None] + g.stencil_flat[None, :]
    assert np.all(g.labels[nbr] != EXTERIOR)
    lat = g.stencil_lattice
    assert {tuple(v) for v in lat.tolist()} == {tuple(v) for v in (-lat).tolist()}


def test_lattice_ball_order_and_content():
    pts = lattice_ball(0.1, 0.025, 2)
    assert pts.shape == (49, 2)
    assert [tuple(p) for p in pts] == sorted(tuple(p) for p in pts)
