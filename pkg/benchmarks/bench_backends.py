"""Compare the compiled and pure-numpy kernels.

    python benchmarks/bench_backends.py [--repeat 5]

Times one operator sweep on a 1-D and a 2-D grid for each backend, and a
batch of game trajectories with the compiled walk against its interpreted
original.  Results agree to roundoff; see tests/test_backends.py.
"""
import argparse
import time

import numpy as np

from liftpde import DomainShape, ProjectedGame, SchemeParams, Strategy, ValueField, build_grid, solve_fixed_point
from liftpde import _kernels as K
from liftpde.kernel import derive_seed, quadrature_weights, trajectory_rng
from liftpde.verify import harmonic_x2y2, linear_ramp


def best_of(fn, repeat):
    fn()  # warm-up (jit compile / caches)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_operator(repeat):
    cases = [
        ("1-D eps=0.1 h=eps/16", DomainShape.box([0], [1]), 0.1, 16, linear_ramp(DomainShape.box([0], [1])).boundary),
        ("2-D disk eps=0.1 h=eps/8", DomainShape.ball([0, 0], 1), 0.1, 8, harmonic_x2y2().boundary),
    ]
    for name, shape, eps, ratio, F in cases:
        g = build_grid(shape, eps / ratio, eps)
        kw = quadrature_weights(g)
        params = SchemeParams.for_grid(3.0, g)
        u = ValueField.from_boundary(g, F).values
        out = u.copy()
        args = (g.interior_ids, g.stencil_flat, g.stencil_tilt, kw.weights, params.alpha, params.beta)
        tn = best_of(lambda: K.apply_operator_numba(u, out, *args), repeat)
        tp = best_of(lambda: K.apply_operator_numpy(u, out, *args), repeat)
        work = g.interior_ids.size * g.stencil_flat.size
        print(f"operator  {name:<26} nodes*stencil={work:>10,d}  numba {1e3 * tn:8.2f} ms  "
              f"numpy {1e3 * tp:8.2f} ms  speedup {tp / tn:5.1f}x")


def bench_walk(n_traj):
    shape = DomainShape.box([0], [1])
    g = build_grid(shape, 0.0125, 0.1)
    kw = quadrature_weights(g)
    params = SchemeParams.for_grid(3.0, g)
    res = solve_fixed_point(ValueField.from_boundary(g, linear_ramp(shape).boundary), params, kw)
    game = ProjectedGame(res.field, params, kw)
    sI = game._compile(Strategy.greedy_max(res.field))
    sII = game._compile(Strategy.greedy_min(res.field))
    cumw = np.cumsum(kw.weights)
    x0 = g.nearest_node([0.3])
    empty = (np.empty(0, np.int64), np.empty(0), np.empty(0, np.int8))

    def run(fn, count):
        for i in range(count):
            fn(trajectory_rng(derive_seed(0, i)), x0, 0.0, 0, 10_000_000, g.labels, g.stencil_flat,
               g.stencil_lattice, g.strides, g.stencil_tilt, cumw, sI, sII, params.alpha, params.beta,
               g.eps, g.h, True, *empty)

    run(K.lattice_walk, 2)
    t0 = time.perf_counter()
    run(K.lattice_walk, n_traj)
    tn = time.perf_counter() - t0
    slow = max(1, n_traj // 20)
    t0 = time.perf_counter()
    run(K.lattice_walk.py_func, slow)
    tp = (time.perf_counter() - t0) * n_traj / slow
    print(f"game walk {n_traj} trajectories (1-D, p=3)      numba {tn:8.3f} s   "
          f"python {tp:8.3f} s (extrapolated)  speedup {tp / tn:5.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--trajectories", type=int, default=2000)
    args = ap.parse_args()
    bench_operator(args.repeat)
    bench_walk(args.trajectories)


if __name__ == "__main__":
    main()
