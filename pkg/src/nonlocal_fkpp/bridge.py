"""Brownian bridge and Brownian tube probabilities: closed forms and Monte Carlo.

Monte Carlo estimators monitor paths on a grid and multiply in, for every grid
interval, the probability that the Brownian bridge joining the two grid values
stays on the right side of a straight barrier:
``1 - exp(-2 d1 d2 / delta)`` for clearances ``d1, d2 >= 0`` over a step
``delta``.  This removes the discrete-monitoring bias.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

BLOCK_PATHS = 4096
MIN_HITS = 50


class InsufficientHits(RuntimeError):
    pass


@dataclass(frozen=True)
class BarrierLine:
    """Barrier ``-(s/t) y1 - ((t-s)/t) y2`` below a 0-to-0 bridge of length ``t``."""

    y1: float
    y2: float
    t: float

    def __post_init__(self):
        vals = (self.y1, self.y2, self.t)
        if not all(math.isfinite(v) for v in vals) or min(self.y1, self.y2) < 0 or self.t <= 0:
            raise ValueError(f"need y1, y2 >= 0 and t > 0 (finite), got {vals}")


@dataclass(frozen=True)
class TubeSpec:
    """``|B(s) - b s| <= R0`` for ``s <= t`` and ``|B(t) - b t| <= r``."""

    R0: float
    b: float
    t: float
    r: float | None = None

    def __post_init__(self):
        if not self.R0 > 0 or not self.t > 0:
            raise ValueError("R0 and t must be positive")
        if abs(self.b) > math.sqrt(2.0):
            raise ValueError(f"tilt |b|={abs(self.b)} exceeds sqrt(2)")
        r = self.window
        if not 0 < r <= self.R0:
            raise ValueError("terminal window r must lie in (0, R0]")

    @property
    def window(self) -> float:
        return self.R0 if self.r is None else self.r


@dataclass
class EstimateWithCI:
    mean: float
    standard_error: float
    n_paths: int
    n_steps: int
    hits: int = 0

    def z(self, exact: float) -> float:
        if self.standard_error == 0:
            return 0.0 if self.mean == exact else math.copysign(math.inf, self.mean - exact)
        return (self.mean - exact) / self.standard_error


def _blocks(seed, n_paths: int):
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    for b, start in enumerate(range(0, n_paths, BLOCK_PATHS)):
        size = min(BLOCK_PATHS, n_paths - start)
        yield np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(b,))), size


def _no_crossing(d1, d2, delta):
    """Probability a bridge over ``delta`` with end clearances d1, d2 >= 0 stays clear."""
    return -np.expm1(-2.0 * d1 * d2 / delta)


# -- bridge above a line ---------------------------------------------------------


def bridge_above_line_exact(barrier: BarrierLine) -> float:
    return -math.expm1(-2.0 * barrier.y1 * barrier.y2 / barrier.t)


def bridge_stay_mc(
    barrier: BarrierLine,
    n_paths: int = 100_000,
    n_steps: int = 64,
    seed=0,
    correct: bool = True,
) -> EstimateWithCI:
    if n_steps < 64:
        raise ValueError("n_steps must be at least 64")
    t = barrier.t
    delta = t / n_steps
    s = np.arange(n_steps + 1) * delta
    line = (s / t) * barrier.y1 + ((t - s) / t) * barrier.y2  # clearance of the zero path
    weights = np.empty(n_paths)
    start = 0
    for rng, size in _blocks(seed, n_paths):
        inc = rng.standard_normal((size, n_steps)) * math.sqrt(delta)
        walk = np.concatenate([np.zeros((size, 1)), np.cumsum(inc, axis=1)], axis=1)
        bridge = walk - (s / t) * walk[:, -1:]
        d = bridge + line
        w = np.all(d >= 0.0, axis=1).astype(float)
        if correct:
            dc = np.maximum(d, 0.0)
            w *= np.prod(_no_crossing(dc[:, :-1], dc[:, 1:], delta), axis=1)
        weights[start : start + size] = w
        start += size
    return EstimateWithCI(
        float(weights.mean()),
        float(weights.std(ddof=1) / math.sqrt(n_paths)),
        n_paths,
        n_steps,
        int(np.count_nonzero(weights)),
    )


# -- Gaussian tails --------------------------------------------------------------


class GaussianTail(NamedTuple):
    exact: float
    chernoff: float
    mills: float


def gaussian_tail(x: float) -> GaussianTail:
    """``P(Z > x)`` with the bounds ``exp(-x^2/2)`` and ``exp(-x^2/2) / (x sqrt(2 pi))``."""
    if not x > 0:
        raise ValueError(f"the Mills-ratio bound needs x > 0, got {x}")
    g = math.exp(-0.5 * x * x)
    return GaussianTail(float(ndtr(-x)), g, g / (x * math.sqrt(2.0 * math.pi)))


# -- Brownian tubes ----------------------------------------------------------------


def interval_survival_exact(t: float, tol: float = 1e-15) -> float:
    """``P(|B(s)| <= 1 for all s <= t)`` from the eigenfunction series."""
    if not t > 0.1:
        raise ValueError("series truncation is only guaranteed for t > 0.1")
    total, n = 0.0, 0
    while True:
        m = 2 * n + 1
        term = 4.0 / (m * math.pi) * math.exp(-(m * m) * math.pi**2 * t / 8.0)
        total += term if n % 2 == 0 else -term
        if term < tol:
            return total
        n += 1


def tube_rate_exact(b: float, R0: float) -> float:
    return 0.5 * b * b + math.pi**2 / (8.0 * R0 * R0)


def tube_probability_exact(spec: TubeSpec, n_terms: int = 200) -> float:
    """Tilted-tube probability from the Dirichlet heat kernel on ``[-R0, R0]``.

    By Girsanov the tilted event has probability
    ``E[exp(-b X_t - b^2 t / 2); |X| <= R0 on [0, t], |X_t| <= r]`` for a driftless X.
    """
    R0, b, t, r = spec.R0, spec.b, spec.t, spec.window
    width = 2.0 * R0
    total = 0.0
    for n in range(1, n_terms + 1):
        k = n * math.pi / width
        decay = math.exp(-0.5 * k * k * t)
        if decay < 1e-300:
            break
        phi0 = math.sin(k * R0)
        if phi0 == 0.0 or abs(phi0) < 1e-15:
            continue
        integral, _ = integrate.quad(
            lambda y: math.exp(-b * y) * math.sin(k * (y + R0)), -r, r, limit=200
        )
        total += (2.0 / width) * phi0 * integral * decay
    return math.exp(-0.5 * b * b * t) * total


def _tube_paths(spec_R0, b, r, t_marks, n_paths, seed, dt, correct):
    """Weights of the tube event at each time in ``t_marks`` (a multiple of dt)."""
    steps = [int(round(tm / dt)) for tm in t_marks]
    n_max = max(steps)
    at = {s: i for i, s in enumerate(steps)}
    out = np.zeros((len(t_marks), n_paths))
    sd = math.sqrt(dt)
    start = 0
    for rng, size in _blocks(seed, n_paths):
        x = np.zeros(size)  # B(s) - b s
        surv = np.ones(size)
        for j in range(1, n_max + 1):
            x_new = x + sd * rng.standard_normal(size) - b * dt
            inside = np.abs(x_new) <= spec_R0
            surv *= inside
            if correct:
                up0, up1 = spec_R0 - x, np.maximum(spec_R0 - x_new, 0.0)
                lo0, lo1 = spec_R0 + x, np.maximum(spec_R0 + x_new, 0.0)
                surv *= _no_crossing(up0, up1, dt) * _no_crossing(lo0, lo1, dt)
            x = x_new
            if j in at:
                w = surv * (np.abs(x) <= r)
                out[at[j], start : start + size] = w
        start += size
    return out


def tube_survival_mc(
    spec: TubeSpec,
    n_paths: int = 100_000,
    dt: float = 0.01,
    seed=0,
    correct: bool = True,
) -> EstimateWithCI:
    w = _tube_paths(spec.R0, spec.b, spec.window, [spec.t], n_paths, seed, dt, correct)[0]
    return EstimateWithCI(
        float(w.mean()),
        float(w.std(ddof=1) / math.sqrt(n_paths)),
        n_paths,
        int(round(spec.t / dt)),
        int(np.count_nonzero(w)),
    )


@dataclass
class RateFit:
    rate: float
    intercept: float
    times: np.ndarray
    probabilities: np.ndarray
    standard_errors: np.ndarray
    hits: np.ndarray


def tube_decay_rate_mc(
    spec: TubeSpec,
    t_grid: Sequence[float],
    n_paths: int = 100_000,
    seed=0,
    dt: float = 0.01,
) -> RateFit:
    """Fitted slope of ``-ln P(tube up to t)`` against ``t`` over ``t_grid``."""
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if t_grid[-1] < 10.0 * t_grid[0] * (1 - 1e-9):
        raise ValueError("t_grid must span at least a decade")
    w = _tube_paths(spec.R0, spec.b, spec.window, t_grid, n_paths, seed, dt, True)
    hits = np.count_nonzero(w, axis=1)
    if hits[-1] < MIN_HITS:
        raise InsufficientHits(
            f"only {int(hits[-1])} surviving paths at t={t_grid[-1]:g}; shrink the grid"
        )
    p = w.mean(axis=1)
    se = w.std(axis=1, ddof=1) / math.sqrt(n_paths)
    slope, icpt = np.polyfit(t_grid, -np.log(p), 1)
    return RateFit(float(slope), float(icpt), t_grid, p, se, hits)


# -- validation grid ---------------------------------------------------------------

DEFAULT_BRIDGE_GRID = (
    (1.0, 1.0, 2.0),
    (3.0, 2.0, 4.0),
    (0.5, 0.5, 1.0),
    (0.2, 1.0, 1.0),
    (1.0, 0.2, 1.0),
    (0.3, 0.3, 2.0),
    (1.0, 2.0, 1.0),
    (2.0, 2.0, 8.0),
    (0.1, 0.1, 0.1),
    (1.5, 0.5, 3.0),
    (0.7, 1.3, 5.0),
    (0.0, 1.0, 1.0),
)

BRIDGE_COLUMNS = ["y1", "y2", "t", "n_steps", "corrected", "exact", "mc_mean", "mc_se", "z"]


def bridge_validation(grid=DEFAULT_BRIDGE_GRID, n_paths=100_000, n_steps=64, seed=0,
                      correct=True) -> list[dict]:
    rows = []
    for i, (y1, y2, t) in enumerate(grid):
        bar = BarrierLine(y1, y2, t)
        exact = bridge_above_line_exact(bar)
        est = bridge_stay_mc(bar, n_paths, n_steps, (int(seed), i), correct)
        rows.append(dict(y1=y1, y2=y2, t=t, n_steps=n_steps, corrected=int(correct),
                         exact=exact, mc_mean=est.mean, mc_se=est.standard_error,
                         z=est.z(exact)))
    return rows


def write_table(path, rows: Sequence[dict], columns=None, header_lines=()) -> None:
    columns = list(columns or rows[0].keys())
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in columns})
