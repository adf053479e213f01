import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from liftpde import DomainShape, ProjectedGame, SchemeParams, Strategy, ValueField, build_grid
from liftpde.kernel import (ball_weights, cap_probability, derive_seed, quadrature_weights, rho, sample_noise,
                            sample_noise_batch, trajectory_rng, unit_ball_volume)


def test_unit_ball_volume():
    assert unit_ball_volume(2) == pytest.approx(math.pi, abs=1e-15)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3, abs=1e-15)
    assert unit_ball_volume(1) == pytest.approx(2.0, abs=1e-15)


def test_rho_examples():
    assert rho([0.0], 1.0) == pytest.approx(2 / math.pi, abs=1e-12)
    assert rho([0.6, 0.8], 1.0) == 0.0
    assert rho([0.3, 0.0], 0.5) == pytest.approx(2 * math.sqrt(0.25 - 0.09) / (0.5 ** 3 * 4 * math.pi / 3), rel=1e-14)
    with pytest.raises(ValueError):
        rho([0.2], 0.1)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_rho_integrates_to_one(n):
    eps = 0.7
    if n == 1:
        val = integrate.quad(lambda t: rho([t], eps), -eps, eps)[0]
    else:
        # radial integral with the (n-1)-sphere area
        area = n * unit_ball_volume(n)
        val = integrate.quad(lambda r: area * r ** (n - 1) * rho(np.r_[r, np.zeros(n - 1)], eps), 0, eps)[0]
    assert val == pytest.approx(1.0, abs=1e-9)


def test_weights_properties():
    g = build_grid(DomainShape.box([0, 0], [1, 1]), 0.025, 0.1)
    kw = quadrature_weights(g)
    assert kw.weights.sum() == pytest.approx(1.0, abs=1e-12)
    r = np.linalg.norm(kw.offsets, axis=1)
    rim = np.isclose(r, g.eps, rtol=0, atol=1e-12)
    assert np.all(kw.weights[rim] == 0) and rim.any()
    assert np.all(kw.weights[~rim] > 0)
    assert np.argmax(kw.weights) == np.flatnonzero(r == 0)[0]
    # radial symmetry: equal radius, equal weight
    for rad in np.unique(np.round(r, 12)):
        sel = np.isclose(r, rad, atol=1e-12)
        assert np.ptp(kw.weights[sel]) <= 1e-18


def test_raw_sum_1d_against_integral():
    eps = 0.1
    dens = lambda t: 2 * math.sqrt(max(eps * eps - t * t, 0)) / (math.pi * eps * eps)
    exact = integrate.quad(dens, -eps, eps, epsabs=1e-14)[0]
    errs = []
    for ratio in (4, 8, 16):
        kw = ball_weights(eps, eps / ratio, 1)
        errs.append(abs(kw.raw_sum - exact))
    assert exact == pytest.approx(1.0, abs=1e-12)
    assert errs[0] > errs[1] > errs[2]


def test_rejects_tiny_stencil():
    with pytest.raises(ValueError):
        ball_weights(0.1, 0.08, 2)


def test_weights_match_cell_integrals_1d():
    """Node-value quadrature vs exact cell masses: O(h) discrepancy that shrinks with h."""
    eps = 0.1
    gaps = []
    for ratio in (8, 16, 32):
        h = eps / ratio
        kw = ball_weights(eps, h, 1)
        cells = _cell_masses_1d(kw.offsets[:, 0], eps, h)
        gaps.append(np.abs(kw.weights - cells).max())
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 2e-3


def _cdf_1d(t, eps):
    t = np.clip(t, -eps, eps)
    return 0.5 + (t * np.sqrt(eps * eps - t * t) + eps * eps * np.arcsin(t / eps)) / (math.pi * eps * eps)


def _cell_masses_1d(d, eps, h):
    return _cdf_1d(d + h / 2, eps) - _cdf_1d(d - h / 2, eps)


def test_sampler_moments_and_cap(rng):
    eps, n = 0.2, 2
    x = sample_noise_batch(eps, n, rng, 100_000)
    assert np.all(np.linalg.norm(x, axis=1) < eps)
    se = x.std(axis=0) / math.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < 4 * se)
    nu = np.array([0.6, 0.8])
    frac = np.mean(x @ nu >= eps / 2)
    c = cap_probability(eps, n, eps / 2)
    assert abs(frac - c) < 4 * math.sqrt(c * (1 - c) / x.shape[0])


def test_cap_probability_closed_form_1d():
    # 1-D marginal is the semicircle law: mass of [eps/2, eps] = 1/3 - sqrt(3)/(4 pi)
    assert cap_probability(1.0, 1, 0.5) == pytest.approx(1 / 3 - math.sqrt(3) / (4 * math.pi), abs=1e-10)


def test_scalar_sampler_is_deterministic():
    a = sample_noise(0.1, 2, trajectory_rng(5), size=10)
    b = sample_noise(0.1, 2, trajectory_rng(5), size=10)
    assert a.tobytes() == b.tobytes()
    assert np.all(np.linalg.norm(a, axis=1) < 0.1)


def test_derive_seed_distinct():
    seeds = {derive_seed(42, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(42, 3) == derive_seed(42, 3)
    assert derive_seed(42, 3) != derive_seed(43, 3)


@given(st.integers(1, 3), st.floats(0.05, 2.0), st.integers(0, 2 ** 32 - 1))
def test_rho_radial_symmetry(n, eps, seed):
    r = np.random.default_rng(seed)
    h = r.uniform(-1, 1, n)
    h *= r.uniform(0, 0.999) * eps / np.linalg.norm(h)
    perm = r.permutation(n)
    flips = r.choice([-1.0, 1.0], n)
    assert rho(h, eps) == pytest.approx(rho(flips * h[perm], eps), rel=1e-14)
    assert rho(h, eps) > 0


def _noise_increments(noise, n_traj=6000):
    """Snapped / kernel noise steps collected from p=2 walks (every step is noise)."""
    shape = DomainShape.box([0.0], [1.0])
    g = build_grid(shape, 0.0125, 0.1)
    field = ValueField.from_boundary(g, lambda x: np.zeros(len(x)))
    params = SchemeParams.for_grid(2.0, g)
    kw = quadrature_weights(g)
    game = ProjectedGame(field, params, kw, noise=noise)
    s = Strategy.random_move()
    steps = []
    for i in range(n_traj):
        t = game.run_trajectory(0.5, 0.0, s, s, derive_seed(99, i))
        steps.append(np.diff(t.x))
    return g, kw, np.concatenate(steps)


def test_snapped_noise_matches_cell_masses():
    g, kw, d = _noise_increments("snap")
    m = d.size
    assert m > 400_000
    offs = np.rint(kw.offsets[:, 0] / g.h).astype(int)
    counts = np.array([(d == k).sum() for k in offs])
    assert counts.sum() == m
    expected = _cell_masses_1d(kw.offsets[:, 0], g.eps, g.h)
    expected /= expected.sum()
    se = np.sqrt(expected * (1 - expected) / m)
    ok = expected > 0
    assert np.all(np.abs(counts[ok] / m - expected[ok]) <= 5 * se[ok])


def test_kernel_noise_matches_weights():
    g, kw, d = _noise_increments("kernel")
    m = d.size
    offs = np.rint(kw.offsets[:, 0] / g.h).astype(int)
    counts = np.array([(d == k).sum() for k in offs])
    w = kw.weights
    se = np.sqrt(w * (1 - w) / m)
    assert counts.sum() == m
    assert np.all(counts[w == 0] == 0)
    assert np.all(np.abs(counts / m - w) <= 5 * se + 1e-15)
