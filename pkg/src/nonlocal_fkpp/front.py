"""Front location, delay series and delay-model fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

SQRT2 = math.sqrt(2.0)
MIN_WINDOW_POINTS = 20
PREFERENCE_MARGIN = 0.2
# offsets min(d) - b profiled by fit_power, as multiples of the data span
POWER_OFFSET_RANGE = (1e-6, 10.0)
POWER_OFFSET_GRID = 241


class FrontError(ValueError):
    pass


class NoCrossing(FrontError):
    pass


def front_location(fld, level: float = 0.5, x=None) -> float:
    """Rightmost downward crossing of ``level`` by the piecewise-linear profile.

    ``fld`` is a ScalarField, or a plain array together with ``x``.
    """
    if x is None:
        u, x = fld.values, fld.x
    else:
        u = np.asarray(fld, dtype=float)
        x = np.asarray(x, dtype=float)
    above = np.flatnonzero(u >= level)
    if above.size == 0:
        raise NoCrossing(f"profile never reaches level {level}")
    i = int(above[-1])
    if i == u.size - 1:
        raise NoCrossing(f"profile stays above level {level} up to the right edge")
    u0, u1 = u[i], u[i + 1]
    return float(x[i] + (u0 - level) / (u0 - u1) * (x[i + 1] - x[i]))


@dataclass
class FrontTrace:
    level: float
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.times.shape != self.positions.shape:
            raise FrontError("times and positions differ in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise FrontError("trace times must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise FrontError("trace positions must be finite")

    def __len__(self):
        return self.times.size


@dataclass
class DelaySeries:
    times: np.ndarray
    delays: np.ndarray
    level: float | None = None

    def to_csv(self, path, log_time: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ln_t" if log_time else "t", "d"])
            tt = np.log(self.times) if log_time else self.times
            for t, d in zip(tt, self.delays):
                w.writerow([repr(float(t)), repr(float(d))])


def delay_series(trace: FrontTrace) -> DelaySeries:
    if len(trace) == 0:
        raise FrontError("empty trace")
    return DelaySeries(trace.times, SQRT2 * trace.times - trace.positions, trace.level)


def _window(times, values, window):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (times[-1] / 10.0, times[-1])
    lo, hi = window
    if not lo < hi:
        raise FrontError(f"fit window {window} is empty")
    sel = (times >= lo) & (times <= hi)
    if sel.sum() < MIN_WINDOW_POINTS:
        raise FrontError(
            f"fit window {window} holds {int(sel.sum())} samples; need {MIN_WINDOW_POINTS}"
        )
    return times[sel], values[sel], (float(lo), float(hi))


def _rms(r) -> float:
    return float(np.sqrt(np.mean(np.square(r))))


@dataclass
class LogFit:
    c: float
    b: float
    residual: float
    window: tuple
    n: int


@dataclass
class PowerFit:
    a: float
    beta: float
    b: float
    residual: float
    window: tuple
    n: int
    at_offset_bound: bool = False


def fit_log(series: DelaySeries, window=None) -> LogFit:
    """Least squares ``d ~ c ln t + b``."""
    t, d, win = _window(series.times, series.delays, window)
    A = np.column_stack([np.log(t), np.ones_like(t)])
    (c, b), *_ = np.linalg.lstsq(A, d, rcond=None)
    return LogFit(float(c), float(b), _rms(d - A @ (c, b)), win, int(t.size))


def _power_given_offset(lt, d, b):
    with np.errstate(divide="ignore"):  # offsets within rounding of min(d) score as non-finite
        y = np.log(d - b)
    A = np.column_stack([lt, np.ones_like(lt)])
    (beta, ln_a), *_ = np.linalg.lstsq(A, y, rcond=None)
    a = math.exp(ln_a)
    return a, float(beta), d - (a * np.exp(beta * lt) + b)


def fit_power(series: DelaySeries, window=None) -> PowerFit:
    """Least squares ``d ~ a t**beta + b``.

    The offset ``b`` is profiled: for each candidate, ``ln(d - b)`` is regressed
    on ``ln t``; the candidate with the smallest residual in ``d`` is then
    polished by a bounded scalar search between its grid neighbours.
    """
    t, d, win = _window(series.times, series.delays, window)
    lt = np.log(t)
    span = float(d.max() - d.min())
    if not span > 0:
        raise FrontError("delay is constant over the window; power model inapplicable")
    lo, hi = POWER_OFFSET_RANGE
    log_q = np.linspace(math.log(lo), math.log(hi), POWER_OFFSET_GRID)
    d_min = float(d.min())

    def sse(lq):
        _, _, r = _power_given_offset(lt, d, d_min - span * math.exp(lq))
        return float(np.dot(r, r))

    scores = np.array([sse(q) for q in log_q])
    if not np.isfinite(scores).any():
        raise FrontError("d - b is non-positive for every profiled offset")
    k = int(np.nanargmin(scores))
    a_lo = log_q[max(k - 1, 0)]
    a_hi = log_q[min(k + 1, log_q.size - 1)]
    best_q, best = log_q[k], scores[k]
    if a_hi > a_lo:
        res = minimize_scalar(sse, bounds=(a_lo, a_hi), method="bounded",
                              options={"xatol": 1e-14, "maxiter": 500})
        if res.fun < best:
            best_q, best = float(res.x), float(res.fun)
    b = d_min - span * math.exp(best_q)
    a, beta, r = _power_given_offset(lt, d, b)
    at_bound = k == log_q.size - 1 and best_q >= log_q[-1] - 1e-9
    return PowerFit(a, beta, float(b), _rms(r), win, int(t.size), bool(at_bound))


@dataclass
class FitReport:
    log: LogFit
    power: PowerFit
    preferred: str  # "log", "power" or "inconclusive"
    margin: float = PREFERENCE_MARGIN
    level: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def window(self):
        return self.log.window

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "window": list(self.window),
            "preferred": self.preferred,
            "margin": self.margin,
            "log": asdict(self.log) | {"window": list(self.log.window)},
            "power": asdict(self.power) | {"window": list(self.power.window)},
            **self.extra,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)


def prefer(log_residual: float, power_residual: float, margin: float = PREFERENCE_MARGIN) -> str:
    if log_residual <= (1.0 - margin) * power_residual:
        return "log"
    if power_residual <= (1.0 - margin) * log_residual:
        return "power"
    return "inconclusive"


def model_select(series: DelaySeries, window=None, margin: float = PREFERENCE_MARGIN) -> FitReport:
    lf = fit_log(series, window)
    pf = fit_power(series, window)
    return FitReport(lf, pf, prefer(lf.residual, pf.residual, margin), margin, series.level)


def speed_estimate(trace: FrontTrace, window=None) -> float:
    t, x, _ = _window(trace.times, trace.positions, window)
    slope, _ = np.polyfit(t, x, 1)
    return float(slope)


def ahead_of_front_probe(fld, L: float = 1.0) -> float:
    """``t * u(t, sqrt2 t + ln(t) / (2 sqrt2))``; bounded if u decays like 1/t there.

    ``L`` bounds the initial data (height and right edge of its support).
    """
    t = fld.time
    if t < max(L / (SQRT2 - 1.0), 1.0):
        raise FrontError(f"probe needs t >= max(L/(sqrt2-1), 1), got t={t:g}")
    x = SQRT2 * t + math.log(t) / (2.0 * SQRT2)
    dom = fld.domain
    if not dom.x_lo <= x <= dom.x_hi:
        raise FrontError(f"probe point x={x:g} lies outside the domain")
    return float(t * fld(x))
