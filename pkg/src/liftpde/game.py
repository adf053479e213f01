"""Seeded simulation of the projected tug-of-war game.

State is ``(x, s)``: a position and the lifted score.  Each turn, with
probability beta the position moves by a semicircular noise sample; with
probability alpha/2 each, a player picks ``x~`` in the closed eps-ball and
the score moves by ``+/- sqrt(eps^2 - |x~ - x|^2)``.  The game stops when the
position first lands in the strip, paying ``F(x_tau) + s_tau``.

Two modes are available.  ``lattice`` keeps the position on grid nodes
(noise samples snapped to the nearest node of the closed ball, or drawn from
the quadrature weights with ``noise="kernel"``) so greedy players read the
solved field exactly.  ``continuum`` keeps exact positions and reads the field
by multilinear interpolation; greedy players then search a mesh of the ball.

Seeding: trajectory ``i`` of a run with master seed ``m`` uses
``Philox(derive_seed(m, i))``; see :func:`liftpde.kernel.derive_seed`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import _kernels as K
from ._accel import worker_count
from .dpp import SchemeParams, ValueField
from .geometry import INTERIOR, DomainShape
from .kernel import KernelWeights, cap_probability, derive_seed, trajectory_rng

DEFAULT_STEP_CAP = 10_000_000
MOVE_NAMES = ("noise", "player_I", "player_II")


class StrategyError(RuntimeError):
    """A strategy proposed a move outside the closed eps-ball."""


@dataclass(frozen=True)
class GameState:
    x: int | tuple
    s: float
    k: int
    terminated: bool


@dataclass(frozen=True, eq=False)
class Strategy:
    """How a player picks ``x~`` when winning the coin toss.

    ``greedy_max``/``greedy_min`` need ``value_ref`` and attain the discrete
    tilted optimum of it; ``pull_toward`` needs ``target``; ``custom`` takes a
    node-id ``selector`` array (lattice mode only) that is checked against
    the stencil.  ``eta`` is the slack scale of the continuum mesh search.
    """

    kind: str
    value_ref: ValueField | None = None
    target: tuple | None = None
    eta: float = 0.0
    selector: np.ndarray | None = None

    KINDS = ("greedy_max", "greedy_min", "random_move", "pull_toward", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind.startswith("greedy") and self.value_ref is None:
            raise ValueError(f"{self.kind} needs value_ref")
        if self.kind == "pull_toward" and self.target is None:
            raise ValueError("pull_toward needs a target")
        if self.kind == "custom" and self.selector is None:
            raise ValueError("custom strategy needs a selector array")

    @classmethod
    def greedy_max(cls, field: ValueField, eta: float = 0.0) -> "Strategy":
        return cls("greedy_max", value_ref=field, eta=eta)

    @classmethod
    def greedy_min(cls, field: ValueField, eta: float = 0.0) -> "Strategy":
        return cls("greedy_min", value_ref=field, eta=eta)

    @classmethod
    def random_move(cls) -> "Strategy":
        return cls("random_move")

    @classmethod
    def pull_toward(cls, target) -> "Strategy":
        return cls("pull_toward", target=tuple(float(v) for v in np.atleast_1d(target)))

    def eta_schedule(self, k: int) -> float:
        return self.eta * 2.0 ** (-k - 1)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.target is not None:
            d["target"] = list(self.target)
        if self.eta:
            d["eta"] = self.eta
        return d


@dataclass(eq=False)
class Trajectory:
    seed: int
    x: np.ndarray
    s: np.ndarray
    moves: np.ndarray
    tau: int | None
    payoff: float | None
    censored: bool

    @property
    def steps(self) -> int:
        return int(self.moves.size)

    @property
    def states(self) -> list[GameState]:
        last = self.moves.size
        out = []
        for k in range(last + 1):
            xk = int(self.x[k]) if self.x.ndim == 1 else tuple(self.x[k])
            out.append(GameState(xk, float(self.s[k]), k, (k == last and not self.censored)))
        return out

    def to_record(self, keep: int = 100) -> dict:
        """JSON-ready dict; states beyond the first/last ``keep`` are dropped."""

        def trim(a):
            a = a.tolist()
            if keep is None or len(a) <= 2 * keep:
                return a, False
            return a[:keep] + a[-keep:], True

        xs, cut = trim(self.x)
        ss, _ = trim(self.s)
        ms, _ = trim(self.moves)
        return {
            "seed": int(self.seed),
            "tau": self.tau,
            "payoff": self.payoff,
            "censored": self.censored,
            "steps": self.steps,
            "truncated": cut,
            "x": xs,
            "s": ss,
            "moves": ms,
        }


@dataclass(eq=False)
class MCEstimate:
    mean: float
    standard_error: float
    n_trajectories: int
    mean_tau: float
    max_tau: int
    n_censored: int
    payoffs: np.ndarray = field(repr=False)
    taus: np.ndarray = field(repr=False)
    censored: np.ndarray = field(repr=False)

    @property
    def censored_fraction(self) -> float:
        return self.n_censored / self.n_trajectories

    @property
    def valid(self) -> bool:
        return self.n_censored == 0

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "standard_error": self.standard_error,
            "n_trajectories": self.n_trajectories,
            "mean_tau": self.mean_tau,
            "max_tau": self.max_tau,
            "n_censored": self.n_censored,
            "censored_fraction": self.censored_fraction,
            "valid": self.valid,
        }


class ProjectedGame:
    """Game on the strip domain of ``field.grid`` with payoff data ``field.boundary``.

    ``boundary_fn`` evaluates F at arbitrary points; continuum mode needs it
    for the terminal payoff.
    """

    def __init__(self, field: ValueField, params: SchemeParams, weights: KernelWeights, *,
                 mode: str = "lattice", noise: str = "snap", boundary_fn: Callable | None = None,
                 mesh_factor: int = 1, max_refine: int = 6):
        if mode not in ("lattice", "continuum"):
            raise ValueError(f"unknown mode {mode!r}")
        if noise not in ("snap", "kernel"):
            raise ValueError(f"unknown lattice noise rule {noise!r}")
        if mode == "continuum" and boundary_fn is None:
            raise ValueError("continuum mode needs boundary_fn")
        self.field = field
        self.grid = field.grid
        self.params = params
        self.weights = weights
        self.mode = mode
        self.noise = noise
        self.boundary_fn = boundary_fn
        self.max_refine = int(max_refine)
        g = self.grid
        self._cumw = np.cumsum(weights.weights)
        self._cumw[-1] = max(self._cumw[-1], 1.0)
        self._compiled: dict[int, tuple] = {}
        if mode == "continuum":
            vals = field.values.copy()
            off = g.labels != INTERIOR
            vals[off] = np.asarray(boundary_fn(g.coords[off]), dtype=float)
            self._cvals = vals
            spacing = g.h / mesh_factor
            r = int(math.floor(g.eps / spacing * (1 + 1e-12)))
            axes = [np.arange(-r, r + 1)] * g.n
            m = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, g.n) * spacing
            self._mesh = m[np.sum(m * m, axis=1) <= g.eps ** 2 * (1 + 1e-12)]
            self._spacing = spacing
            shape = g.shape
            if shape.kind == "box":
                self._shape = (0, np.array(shape.lower), np.array(shape.upper))
            else:
                self._shape = (1, np.array(shape.center), np.array([shape.radius]))

    # -- strategies ---------------------------------------------------------

    def _lattice_selector(self, strat: Strategy) -> np.ndarray:
        g = self.grid
        sel = np.full(g.n_nodes, -3, dtype=np.int64)
        ids = g.interior_ids
        if strat.kind in ("greedy_max", "greedy_min"):
            ref = strat.value_ref
            if ref.grid is not g and ref.grid.describe() != g.describe():
                raise ValueError("strategy value_ref lives on a different grid")
            sign = 1.0 if strat.kind == "greedy_max" else -1.0
            sel[ids] = K.tilted_select(ref.values, ids, g.stencil_flat, g.stencil_tilt, sign)
        elif strat.kind == "random_move":
            sel[ids] = K.SEL_RANDOM
        elif strat.kind == "pull_toward":
            target = np.asarray(strat.target, dtype=float)
            offs = g.stencil_offsets
            for start in range(0, ids.size, 4096):
                c = ids[start:start + 4096]
                dist = np.sum((g.coords[c][:, None, :] + offs[None] - target) ** 2, axis=2)
                sel[c] = np.argmin(dist, axis=1)
        else:
            lookup = {tuple(v): k for k, v in enumerate(g.stencil_lattice.tolist())}
            chosen = np.asarray(strat.selector, dtype=np.int64)
            delta = g.lattice_coords(chosen[ids]) - g.lattice_coords(ids)
            for node, d in zip(ids, map(tuple, delta.tolist())):
                k = lookup.get(d)
                if k is None:
                    raise StrategyError(
                        f"custom strategy moves node {node} to {chosen[node]}, outside the closed eps-ball"
                    )
                sel[node] = k
        return sel

    def _compile(self, strat: Strategy):
        key = id(strat)
        hit = self._compiled.get(key)
        if hit is not None and hit[0] is strat:
            return hit[1]
        if self.mode == "lattice":
            out = self._lattice_selector(strat)
        else:
            if strat.kind == "custom":
                raise ValueError("custom selectors are lattice-only")
            code = {"greedy_max": 0, "greedy_min": 1, "random_move": 2, "pull_toward": 3}[strat.kind]
            target = np.asarray(strat.target if strat.target is not None else [0.0] * self.grid.n, dtype=float)
            out = (code, target, self._refine_schedule(strat))
        self._compiled[key] = (strat, out)
        return out

    def _refine_schedule(self, strat: Strategy, length: int = 64) -> np.ndarray:
        """Pattern-search depth per step so the search slack tracks eta 2^-(k+1)."""
        if strat.eta <= 0:
            return np.full(1, self.max_refine, dtype=np.int64)
        vals = strat.value_ref.values if strat.value_ref is not None else self.field.values
        g = self.grid
        lip = 1.0
        if g.interior_ids.size:
            lip += float(np.nanmax(np.abs(vals[g.interior_ids + g.strides[-1]] - vals[g.interior_ids]))) / g.h
        out = np.empty(length, dtype=np.int64)
        for k in range(length):
            need = math.log2(max(self._spacing * lip / strat.eta_schedule(k), 1.0))
            out[k] = min(self.max_refine, int(math.ceil(need)))
        return out

    # -- simulation ---------------------------------------------------------

    def _start(self, x0):
        g = self.grid
        if self.mode == "lattice":
            node = int(x0) if np.ndim(x0) == 0 and isinstance(x0, (int, np.integer)) else g.nearest_node(x0)
            if g.labels[node] != INTERIOR:
                raise ValueError(f"start node {node} is not interior")
            return node
        pos = np.array(np.atleast_1d(x0), dtype=float)
        if isinstance(x0, (int, np.integer)):
            pos = g.coords[int(x0)].copy()
        if not g.shape.contains(pos[None])[0]:
            raise ValueError(f"start point {pos} is not interior")
        return pos

    def _advance(self, rng, x, score, steps, limit, sI, sII, rec):
        p = self.params
        g = self.grid
        if self.mode == "lattice":
            rx, rs, rm = rec
            x, score, steps, status = K.lattice_walk(
                rng, x, score, steps, limit, g.labels, g.stencil_flat, g.stencil_lattice, g.strides,
                g.stencil_tilt, self._cumw, sI, sII, p.alpha, p.beta, g.eps, g.h, self.noise == "snap",
                rx, rs, rm)
        else:
            rx, rs, rm = rec
            kind, sa, sb = self._shape
            score, steps, status = K.continuum_walk(
                rng, x, score, steps, limit, kind, sa, sb, self._cvals, np.array(g.dims, dtype=np.int64),
                g.strides, g.origin, g.h, self._mesh, self._spacing, g.eps, p.alpha, p.beta,
                sI[0], sII[0], sI[1], sII[1], sI[2], sII[2],
                rx, rs, rm)
        if status == K.FAULT:
            raise StrategyError("a move left the closed eps-ball or landed off the strip domain")
        return x, score, steps, status

    def _empty_rec(self):
        if self.mode == "lattice":
            return np.empty(0, np.int64), np.empty(0), np.empty(0, np.int8)
        return np.empty((0, self.grid.n)), np.empty(0), np.empty(0, np.int8)

    def _payoff(self, x) -> float:
        if self.mode == "lattice":
            return float(self.field.values[x])
        return float(np.asarray(self.boundary_fn(np.asarray(x)[None]), dtype=float).reshape(-1)[0])

    def step(self, state: GameState, sI: Strategy, sII: Strategy, rng: np.random.Generator) -> GameState:
        """One transition; strip states are absorbing."""
        if state.terminated:
            return state
        x = state.x if self.mode == "lattice" else np.array(state.x, dtype=float)
        x, score, steps, status = self._advance(
            rng, x, 0.0, state.k, 1, self._compile(sI), self._compile(sII), self._empty_rec())
        xo = int(x) if self.mode == "lattice" else tuple(x.tolist())
        return GameState(xo, state.s + score, steps, status == K.TERMINATED)

    def run_trajectory(self, x0, s0: float, sI: Strategy, sII: Strategy, seed: int,
                       cap: int = DEFAULT_STEP_CAP) -> Trajectory:
        """Full recorded trajectory; a run reaching ``cap`` steps is censored."""
        rng = trajectory_rng(seed)
        cI, cII = self._compile(sI), self._compile(sII)
        x = self._start(x0)
        xs = [np.array([x]) if self.mode == "lattice" else x.copy()[None]]
        ss = [np.array([0.0])]
        ms = []
        score, steps, status = 0.0, 0, K.RUNNING
        chunk = 256
        while status == K.RUNNING and steps < cap:
            limit = min(chunk, cap - steps)
            if self.mode == "lattice":
                rec = (np.empty(limit, np.int64), np.empty(limit), np.empty(limit, np.int8))
            else:
                rec = (np.empty((limit, self.grid.n)), np.empty(limit), np.empty(limit, np.int8))
            before = steps
            x, score, steps, status = self._advance(rng, x, score, steps, limit, cI, cII, rec)
            took = steps - before
            xs.append(rec[0][:took])
            ss.append(rec[1][:took])
            ms.append(rec[2][:took])
            chunk = min(chunk * 2, 1 << 20)
        terminated = status == K.TERMINATED
        xa = np.concatenate(xs)
        sa = s0 + np.concatenate(ss)
        return Trajectory(
            seed=int(seed),
            x=xa,
            s=sa,
            moves=np.concatenate(ms) if ms else np.empty(0, np.int8),
            tau=steps if terminated else None,
            payoff=self._payoff(x) + s0 + score if terminated else None,
            censored=not terminated,
        )

    def _run_fast(self, x0, indices, master_seed, cI, cII, cap):
        out = np.empty((len(indices), 4))
        rec = self._empty_rec()
        for j, i in enumerate(indices):
            rng = trajectory_rng(derive_seed(master_seed, i))
            x = self._start(x0)
            x, score, steps, status = self._advance(rng, x, 0.0, 0, cap, cI, cII, rec)
            done = status == K.TERMINATED
            out[j] = (self._payoff(x) if done else np.nan, score, steps, done)
        return out

    def simulate(self, x0, s0: float, sI: Strategy, sII: Strategy, n_trajectories: int,
                 master_seed: int, cap: int = DEFAULT_STEP_CAP, workers: int | None = None) -> MCEstimate:
        """Monte Carlo estimate of the value at ``(x0, s0)``.

        Trajectories are independent; ``workers`` threads share them in
        contiguous blocks and results are gathered by index, so the output
        does not depend on the worker count.
        """
        if n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        cI, cII = self._compile(sI), self._compile(sII)
        self._start(x0)
        workers = worker_count() if workers is None else workers
        workers = max(1, min(workers, n_trajectories))
        blocks = np.array_split(np.arange(n_trajectories), workers)
        if workers == 1:
            parts = [self._run_fast(x0, blocks[0], master_seed, cI, cII, cap)]
        else:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda b: self._run_fast(x0, b, master_seed, cI, cII, cap), blocks))
        res = np.concatenate(parts)
        done = res[:, 3].astype(bool)
        payoffs = res[:, 0] + s0 + res[:, 1]
        taus = res[:, 2].astype(np.int64)
        good = payoffs[done]
        m = good.size
        mean = float(good.mean()) if m else float("nan")
        se = float(good.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
        return MCEstimate(
            mean=mean,
            standard_error=se,
            n_trajectories=n_trajectories,
            mean_tau=float(taus[done].mean()) if m else float("nan"),
            max_tau=int(taus.max()),
            n_censored=int((~done).sum()),
            payoffs=np.where(done, payoffs, np.nan),
            taus=taus,
            censored=~done,
        )


def run_trajectory(game: ProjectedGame, x0, s0, sI, sII, seed, cap=DEFAULT_STEP_CAP) -> Trajectory:
    return game.run_trajectory(x0, s0, sI, sII, seed, cap)


def estimate_value(game: ProjectedGame, x0, s0, sI, sII, n_trajectories, master_seed,
                   cap=DEFAULT_STEP_CAP, workers=None) -> MCEstimate:
    return game.simulate(x0, s0, sI, sII, n_trajectories, master_seed, cap, workers)


def score_from_moves(traj: Trajectory, eps: float, coords: np.ndarray | None = None) -> float:
    """Recompute ``s_tau`` from the position log and move types."""
    pos = coords[traj.x] if coords is not None else traj.x
    d = np.diff(pos, axis=0)
    tilt = np.sqrt(np.maximum(eps * eps - np.sum(d * d, axis=1), 0.0))
    signs = np.where(traj.moves == 1, 1.0, np.where(traj.moves == 2, -1.0, 0.0))
    total = float(traj.s[0])
    for sg, t in zip(signs, tilt):
        if sg:
            total += sg * t
    return total


def value_increments(trajs: list[Trajectory], field: ValueField) -> np.ndarray:
    """Per-step increments of ``v(x_k) + s_k`` pooled over lattice trajectories."""
    parts = []
    for t in trajs:
        w = field.values[t.x] + t.s
        parts.append(np.diff(w))
    return np.concatenate(parts) if parts else np.empty(0)


def block_length(shape: DomainShape, eps: float, direction=None) -> int:
    """Smallest N with ``N eps / 2`` exceeding the domain's width along ``direction``."""
    nu = np.eye(shape.n)[0] if direction is None else np.asarray(direction, dtype=float)
    width = shape.width(nu)
    return int(math.floor(2.0 * width / eps)) + 1


@dataclass
class ExitStats:
    block: int
    mean_tau: float
    max_tau: int
    histogram: np.ndarray
    bin_edges: np.ndarray
    tail: np.ndarray
    tail_lower: np.ndarray
    delta_hat: float
    delta_lower: float
    geometric_bound: np.ndarray
    slope: float
    n: int
    theory_delta: float | None = None

    @property
    def tail_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.tail) <= 0))

    @property
    def within_geometric_band(self) -> bool:
        return bool(np.all(self.tail_lower <= self.geometric_bound + 1e-15))

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "mean_tau": self.mean_tau,
            "max_tau": self.max_tau,
            "tail": self.tail.tolist(),
            "delta_hat": self.delta_hat,
            "geometric_bound": self.geometric_bound.tolist(),
            "log_tail_slope": self.slope,
            "tail_nonincreasing": self.tail_nonincreasing,
            "within_geometric_band": self.within_geometric_band,
        }


def exit_time_stats(taus, block: int, *, confidence: float = 0.999, bins: int = 50,
                    beta: float | None = None, eps: float | None = None, n: int | None = None) -> ExitStats:
    """Tail ``P(tau > mN)`` against the geometric bound ``(1 - delta_hat)^m``.

    ``delta_hat`` is the observed exit rate over the first block.  Both the
    tails and ``delta_hat`` get one-sided Clopper-Pearson bands at
    ``confidence``: the check is that the lower band of each tail does not
    exceed ``(1 - delta_lower)^m``.  Pass ``beta``, ``eps`` and ``n`` to also
    report the (very loose) analytic exit rate ``(beta c)^N``.
    """
    taus = np.asarray(taus, dtype=np.int64)
    if taus.size == 0:
        raise ValueError("need at least one terminated trajectory")
    total = taus.size
    m_max = int(taus.max() // block) + 1
    ms = np.arange(m_max + 1)
    counts = np.array([(taus > m * block).sum() for m in ms])
    tail = counts / total
    a = 1.0 - confidence
    lower = np.where(counts > 0, stats.beta.ppf(a, counts, total - counts + 1), 0.0)
    exits = total - counts[1]
    delta_hat = exits / total
    delta_lower = float(stats.beta.ppf(a, exits, total - exits + 1)) if exits > 0 else 0.0
    bound = (1.0 - delta_lower) ** ms
    pos = tail > 0
    slope = float(np.polyfit(ms[pos], np.log(tail[pos]), 1)[0]) if pos.sum() >= 2 else 0.0
    hist, edges = np.histogram(taus, bins=bins)
    theory = None
    if beta is not None and eps is not None and n is not None:
        theory = (beta * cap_probability(eps, n, eps / 2)) ** block
    return ExitStats(block=block, mean_tau=float(taus.mean()), max_tau=int(taus.max()), histogram=hist,
                     bin_edges=edges, tail=tail, tail_lower=lower, delta_hat=float(delta_hat),
                     delta_lower=delta_lower, geometric_bound=bound, slope=slope, n=total, theory_delta=theory)
