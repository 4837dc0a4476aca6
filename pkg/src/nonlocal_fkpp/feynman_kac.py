"""Monte Carlo evaluation of u through its Feynman-Kac representation.

For ``t' <= t``::

    u(t, x) = E_x[ exp(int_0^t' (1 - phi*u(t - s, B_s)) ds) u(t - t', B_t') ]

The potential ``phi*u`` and the terminal values come from stored snapshots
(linear in x, linear in t), so agreement with the grid solution measures the
joint consistency of the solver and this estimator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernels import SampledKernel
from .solver import Convolver, ScalarField

BLOCK_PATHS = 4096
MAX_EXIT_FRACTION = 1e-3


class CoverageError(ValueError):
    pass


@dataclass
class FieldOracle:
    """Snapshots of ``u`` and ``phi*u`` on a uniform grid ``x0 + i*dx``."""

    times: np.ndarray
    x0: float
    dx: float
    u: np.ndarray  # (n_times, n_x)
    conv: np.ndarray  # (n_times, n_x)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.conv = np.atleast_2d(np.asarray(self.conv, dtype=float))
        if self.u.shape != self.conv.shape or self.u.shape[0] != self.times.size:
            raise ValueError("oracle arrays do not match the snapshot times")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("oracle times must be increasing")

    @property
    def x_lo(self) -> float:
        return self.x0

    @property
    def x_hi(self) -> float:
        return self.x0 + (self.u.shape[1] - 1) * self.dx

    @classmethod
    def from_snapshots(
        cls,
        snapshots: Sequence[ScalarField],
        kernel: SampledKernel,
        x_range: tuple[float, float] | None = None,
    ) -> "FieldOracle":
        snaps = sorted(snapshots, key=lambda f: f.time)
        dom = snaps[0].domain
        conv = Convolver(kernel)
        xs = dom.x
        if x_range is None:
            sl = slice(None)
        else:
            i0 = max(int(math.floor(dom.index_of(x_range[0]))), 0)
            i1 = min(int(math.ceil(dom.index_of(x_range[1]))) + 1, dom.n)
            sl = slice(i0, i1)
        us, cs = [], []
        for f in snaps:
            us.append(f.values[sl])
            cs.append(conv(f.values)[sl])
        return cls(np.array([f.time for f in snaps]), float(xs[sl][0]), dom.dx,
                   np.array(us), np.array(cs))

    @classmethod
    def constant(cls, value: float, times=(0.0, 1e6), x_range=(-1e3, 1e3), dx=1.0):
        n = int(round((x_range[1] - x_range[0]) / dx)) + 1
        u = np.full((len(times), n), float(value))
        return cls(np.asarray(times, float), x_range[0], dx, u, u.copy())

    def covers(self, t_lo: float, t_hi: float) -> bool:
        return self.times[0] <= t_lo + 1e-9 and self.times[-1] >= t_hi - 1e-9

    def _time_weights(self, t: float):
        ts = self.times
        if ts.size == 1:
            return 0, 0, 0.0
        k = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2))
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return k, k + 1, float(min(max(w, 0.0), 1.0))

    def _lookup(self, table: np.ndarray, t: float, x: np.ndarray):
        """Bilinear interpolation; returns values and an out-of-range mask."""
        n = table.shape[1]
        pos = (x - self.x0) / self.dx
        out = (pos < 0) | (pos > n - 1)
        pos = np.clip(pos, 0.0, n - 1.0)
        i = np.minimum(pos.astype(np.int64), n - 2)
        f = pos - i
        k0, k1, w = self._time_weights(t)
        row0 = table[k0, i] * (1.0 - f) + table[k0, i + 1] * f
        if w == 0.0:
            return row0, out
        row1 = table[k1, i] * (1.0 - f) + table[k1, i + 1] * f
        return (1.0 - w) * row0 + w * row1, out

    def potential(self, t: float, x: np.ndarray):
        return self._lookup(self.conv, t, x)

    def field(self, t: float, x: np.ndarray):
        return self._lookup(self.u, t, x)


@dataclass(frozen=True)
class FKConfig:
    n_paths: int = 100_000
    path_dt: float = 0.01
    horizon: float = 5.0
    rng_seed: int | tuple = 0

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if not 0 < self.path_dt <= self.horizon:
            raise ValueError("need 0 < path_dt <= horizon")


@dataclass
class FKEstimate:
    mean: float
    standard_error: float
    n_paths: int
    exit_fraction: float = 0.0

    @property
    def flagged(self) -> bool:
        return self.exit_fraction > MAX_EXIT_FRACTION


def _streams(seed, n_paths: int):
    """One generator per block of paths, keyed by (seed, block index)."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    for b, start in enumerate(range(0, n_paths, BLOCK_PATHS)):
        size = min(BLOCK_PATHS, n_paths - start)
        ss = np.random.SeedSequence(entropy, spawn_key=(b,))
        yield np.random.default_rng(ss), size


def _simulate(x: float, t: float, horizon: float, potential, terminal, config: FKConfig):
    n_steps = int(round(horizon / config.path_dt))
    h = horizon / n_steps if n_steps else 0.0
    sd = math.sqrt(h)
    weights = np.empty(config.n_paths)
    exited = 0
    start = 0
    for rng, size in _streams(config.rng_seed, config.n_paths):
        b = np.full(size, float(x))
        gone = np.zeros(size, dtype=bool)
        if n_steps:
            k, o = potential(t, b)
            gone |= o
            acc = 0.5 * (1.0 - k)
            for j in range(1, n_steps + 1):
                b = b + sd * rng.standard_normal(size)
                k, o = potential(t - j * h, b)
                gone |= o
                acc += (0.5 if j == n_steps else 1.0) * (1.0 - k)
            expo = acc * h
        else:
            expo = np.zeros(size)
        term, o = terminal(b)
        gone |= o
        weights[start : start + size] = np.exp(expo) * term
        exited += int(gone.sum())
        start += size
    mean = float(weights.mean())
    se = float(weights.std(ddof=1) / math.sqrt(weights.size))
    return FKEstimate(mean, se, config.n_paths, exited / config.n_paths)


def _check_space(oracle: FieldOracle, x: float, horizon: float):
    margin = 6.0 * math.sqrt(horizon)
    if not (oracle.x_lo + margin <= x <= oracle.x_hi - margin):
        raise CoverageError(
            f"x={x:g} is within {margin:.3g} of the oracle range "
            f"[{oracle.x_lo:g}, {oracle.x_hi:g}]"
        )


def estimate_u(x: float, t: float, oracle: FieldOracle, config: FKConfig) -> FKEstimate:
    tp = config.horizon
    if tp > t + 1e-12:
        raise ValueError(f"look-back {tp} exceeds t={t}")
    if not oracle.covers(t - tp, t):
        raise CoverageError(
            f"oracle covers t in [{oracle.times[0]:g}, {oracle.times[-1]:g}], "
            f"need [{t - tp:g}, {t:g}]"
        )
    _check_space(oracle, x, tp)
    return _simulate(
        x, t, tp, oracle.potential, lambda b: oracle.field(t - tp, b), config
    )


def estimate_u_from_initial(
    x: float,
    t: float,
    u0: Callable[[np.ndarray], np.ndarray],
    oracle: FieldOracle,
    config: FKConfig,
) -> FKEstimate:
    """Full-horizon representation with terminal data ``u0(B_t)``."""
    if t == 0.0:
        v = float(np.asarray(u0(np.array([x])))[0])
        return FKEstimate(v, 0.0, config.n_paths)
    if not oracle.covers(0.0, t):
        raise CoverageError(f"oracle does not cover [0, {t:g}]")
    _check_space(oracle, x, t)
    cfg = FKConfig(config.n_paths, min(config.path_dt, t), t, config.rng_seed)

    def terminal(b):
        return np.asarray(u0(b), dtype=float), np.zeros(b.size, dtype=bool)

    return _simulate(x, t, t, oracle.potential, terminal, cfg)


def zscore(estimate: FKEstimate, grid_value: float) -> float:
    diff = estimate.mean - grid_value
    if estimate.standard_error > 0:
        return diff / estimate.standard_error
    if diff == 0:
        return 0.0
    raise ZeroDivisionError("zero standard error with mean != grid value")


PROBE_COLUMNS = ["x", "t", "grid_u", "fk_mean", "fk_se", "z", "n_paths", "flagged"]


def write_probe_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PROBE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in PROBE_COLUMNS})
