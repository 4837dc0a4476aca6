"""Operator-splitting solver for u_t = u_xx/2 + u (1 - phi * u) on a 1-D grid.

One step is ``D(dt/2) R(dt) D(dt/2)``:

* ``D`` is the exact heat semigroup with diffusivity 1/2 restricted to the grid.
  The default ``"kernel"`` operator applies it as a direct sum against the
  sampled heat kernel (all weights positive, so tiny values ahead of the front
  keep full relative precision).  ``"discrete"`` is the exact semigroup of the
  3-point Laplacian, usable for any step.  ``"spectral"`` multiplies the padded
  spectrum by ``exp(-k**2 dt / 2)``; it agrees with ``"kernel"`` to roundoff on
  resolved data.
* ``R`` is the reaction flow with ``c = phi * u`` frozen at the midpoint of the
  step (exponential midpoint), so ``u <- u * exp((1 - c_mid) dt)`` exactly.

Outside the domain ``u`` is continued by its left edge value on the left and by
zero on the right, both for the convolution and the diffusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import fft as sfft
from scipy.special import ive

from .kernels import SampledKernel

# values below this are flushed to zero; keeps arithmetic out of subnormals
UNDERFLOW_FLOOR = 1e-300
CLAMP_TOLERANCE = 1e-10
DIRECT_CONVOLUTION_MAX_TAPS = 129
HEAT_KERNEL_WIDTH = 10.0  # heat kernel support, in standard deviations
MIN_KERNEL_TAU = 1.75  # in units of dx**2
DIFFUSION_METHODS = ("kernel", "discrete", "spectral")


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, time: float, location: float):
        super().__init__(f"non-finite solution at t={time:g}, x={location:g}")
        self.time = time
        self.location = location


class DomainExhausted(SolverError):
    pass


@dataclass(frozen=True)
class Domain:
    x_lo: float
    x_hi: float
    n: int

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("domain requires x_lo < x_hi")
        if self.n < 16:
            raise ValueError("domain requires at least 16 cells")

    @classmethod
    def from_spacing(cls, x_lo: float, x_hi: float, dx: float) -> "Domain":
        n = int(round((x_hi - x_lo) / dx))
        return cls(x_lo, x_lo + n * dx, n)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.n) + 0.5) * self.dx

    def index_of(self, x: float) -> float:
        """Fractional cell index of position ``x``."""
        return (x - self.x_lo) / self.dx - 0.5


@dataclass
class ScalarField:
    domain: Domain
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.domain.n,):
            raise ValueError(
                f"field has shape {self.values.shape}, domain expects ({self.domain.n},)"
            )

    @property
    def x(self) -> np.ndarray:
        return self.domain.x

    def __call__(self, x):
        """Linear interpolation; zero right of the domain, edge value left of it."""
        xs = self.domain.x
        return np.interp(x, xs, self.values, left=self.values[0], right=0.0)

    def shifted(self, cells: int) -> "ScalarField":
        v = np.zeros_like(self.values)
        if cells >= 0:
            v[cells:] = self.values[: self.domain.n - cells]
            v[:cells] = self.values[0]
        else:
            v[:cells] = self.values[-cells:]
        return ScalarField(self.domain, v, self.time)


# -- initial conditions -----------------------------------------------------


@dataclass(frozen=True)
class Indicator:
    a: float
    b: float
    amplitude: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), self.amplitude, 0.0)

    def sample(self, domain: Domain) -> np.ndarray:
        return self(domain.x)


@dataclass(frozen=True)
class HalfLine:
    b: float
    amplitude: float = 1.0

    def __call__(self, x):
        return np.where(np.asarray(x, dtype=float) <= self.b, self.amplitude, 0.0)

    def sample(self, domain: Domain) -> np.ndarray:
        return self(domain.x)


@dataclass(frozen=True)
class Custom:
    values: tuple

    def sample(self, domain: Domain) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (domain.n,):
            raise ValueError("custom initial condition does not match the domain")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("initial condition must be finite and non-negative")
        return v


InitialCondition = Union[Indicator, HalfLine, Custom]


def initial_field(domain: Domain, u0) -> ScalarField:
    return ScalarField(domain, u0.sample(domain), 0.0)


# -- operators ----------------------------------------------------------------


class Convolver:
    """``phi * u`` on prefixes of a fixed grid.

    Linear convolution, scaled by ``dx``; ``u`` is continued by ``u[0]`` to the
    left (up to the kernel radius) and by zero to the right.  Short kernels are
    summed directly, long ones through a real FFT whose kernel spectrum is
    cached per prefix length.
    """

    def __init__(self, kernel: SampledKernel):
        self.kernel = kernel
        self.dx = kernel.dx
        self.N = kernel.half_width_cells
        phi = np.asarray(kernel.values)
        # left-continuation weights: dx * sum_{k=i+1}^{N} phi_k
        right_half = phi[self.N :]
        tail = np.cumsum(right_half[::-1])[::-1] * self.dx
        self._edge_weights = np.append(tail[1:], 0.0)  # index i -> sum over k > i
        self._direct = phi.size <= DIRECT_CONVOLUTION_MAX_TAPS
        self._cache: dict[int, tuple[int, int, np.ndarray]] = {}

    def _plan(self, m: int):
        plan = self._cache.get(m)
        if plan is None:
            n_eff = min(self.N, m - 1)
            length = sfft.next_fast_len(m + n_eff + 1, real=True)
            phi = np.asarray(self.kernel.values)[self.N - n_eff : self.N + n_eff + 1]
            buf = np.zeros(length)
            buf[: phi.size] = phi * self.dx
            plan = (n_eff, length, sfft.rfft(buf))
            self._cache[m] = plan
        return plan

    def __call__(self, u: np.ndarray) -> np.ndarray:
        m = u.size
        if self._direct:
            out = np.convolve(u, self.kernel.values)[self.N : self.N + m] * self.dx
        else:
            n_eff, length, spec = self._plan(m)
            out = sfft.irfft(sfft.rfft(u, length) * spec, length)[n_eff : n_eff + m]
        edge = u[0]
        if edge != 0.0:
            k = min(m, self._edge_weights.size)
            out[:k] += edge * self._edge_weights[:k]
        return out


def convolve(kernel: SampledKernel, fld: ScalarField) -> ScalarField:
    if not math.isclose(kernel.dx, fld.domain.dx, rel_tol=1e-9):
        raise ValueError(f"kernel dx={kernel.dx} does not match grid dx={fld.domain.dx}")
    if kernel.radius > fld.domain.x_hi - fld.domain.x_lo + 1e-9:
        raise ValueError("kernel radius exceeds the domain length")
    return ScalarField(fld.domain, Convolver(kernel)(fld.values), fld.time)


def heat_kernel(tau: float, dx: float) -> np.ndarray:
    """Grid weights of the heat semigroup ``exp(tau * Laplacian / 2)``.

    Sampled Gaussian; matches the band-limited semigroup up to aliasing terms of
    size ``exp(-2 pi**2 tau / dx**2)``, so ``tau`` must not be small against ``dx**2``.
    """
    if tau < MIN_KERNEL_TAU * dx * dx:
        raise ValueError(
            f"heat kernel step tau={tau:g} is under-resolved for dx={dx:g}; "
            f"need tau >= {MIN_KERNEL_TAU} dx^2 (use diffusion='discrete' or 'spectral')"
        )
    p = int(math.ceil(HEAT_KERNEL_WIDTH * math.sqrt(tau) / dx))
    x = np.arange(-p, p + 1) * dx
    return dx * np.exp(-(x**2) / (2.0 * tau)) / math.sqrt(2.0 * math.pi * tau)


def discrete_heat_kernel(tau: float, dx: float) -> np.ndarray:
    """Exact semigroup of the 3-point Laplacian: weights ``exp(-s) I_j(s)``, ``s = tau/dx**2``."""
    s = tau / (dx * dx)
    p = int(math.ceil(HEAT_KERNEL_WIDTH * math.sqrt(s) + 10))
    w = ive(np.arange(p + 1), s)
    w = w[w > 1e-25 * w[0]]
    return np.concatenate([w[:0:-1], w])


class HeatFlow:
    """Diffusion over a fixed time ``tau`` (diffusivity 1/2).

    ``kernel`` and ``discrete`` apply positive weights by direct summation;
    ``spectral`` multiplies the padded spectrum.
    """

    def __init__(self, tau: float, dx: float, method: str = "kernel"):
        if method not in DIFFUSION_METHODS:
            raise ValueError(f"unknown diffusion method {method!r}")
        self.tau = tau
        self.dx = dx
        self.method = method
        if tau == 0.0:
            self.weights = np.ones(1)
        elif method == "discrete":
            self.weights = discrete_heat_kernel(tau, dx)
        elif method == "kernel":
            self.weights = heat_kernel(tau, dx)
        else:
            self.weights = heat_kernel(max(tau, MIN_KERNEL_TAU * dx * dx), dx)
        self.pad = (self.weights.size - 1) // 2
        self._spectra: dict[int, tuple[int, int, np.ndarray]] = {}

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.tau == 0.0:
            return u.copy()
        if self.method != "spectral":
            p = self.pad
            padded = np.concatenate([np.full(p, u[0]), u, np.zeros(p)])
            return np.convolve(padded, self.weights, mode="valid")
        return self._spectral(u)

    def _spectral(self, u: np.ndarray) -> np.ndarray:
        m = u.size
        plan = self._spectra.get(m)
        if plan is None:
            p = max(self.pad, 32)
            length = sfft.next_fast_len(m + 2 * p, real=True)
            k = 2.0 * np.pi * sfft.rfftfreq(length, self.dx)
            plan = (p, length, np.exp(-0.5 * k**2 * self.tau))
            self._spectra[m] = plan
        p, length, mult = plan
        buf = np.zeros(length)
        buf[:p] = u[0]
        buf[p : p + m] = u
        return sfft.irfft(sfft.rfft(buf) * mult, length)[p : p + m]


def _react(u: np.ndarray, conv: Convolver, dt: float) -> np.ndarray:
    c0 = conv(u)
    u_mid = u * np.exp((1.0 - c0) * (0.5 * dt))
    c_mid = conv(u_mid)
    return u * np.exp((1.0 - c_mid) * dt)


def _clamp(u: np.ndarray, time: float) -> float:
    neg = u < 0.0
    if not neg.any():
        return 0.0
    clamped = float(-u[neg].min())
    peak = float(u.max())
    if clamped > CLAMP_TOLERANCE * max(peak, 1e-300):
        raise SolverError(
            f"negative values of size {clamped:.3g} at t={time:g} exceed the clamp tolerance"
        )
    u[neg] = 0.0
    return clamped


def _check_finite(u: np.ndarray, domain: Domain, time: float) -> None:
    if not np.isfinite(u).all():
        i = int(np.flatnonzero(~np.isfinite(u))[0])
        raise BlowUpError(time, float(domain.x[i]))


def step(
    fld: ScalarField,
    kernel: SampledKernel,
    dt: float,
    *,
    clamp_negative: bool = True,
    diffusion: str = "kernel",
    reaction: bool = True,
    max_dt: float = 0.1,
) -> ScalarField:
    """One splitting step; returns a new field and leaves ``fld`` untouched."""
    if not 0 < dt <= max_dt:
        raise ValueError(f"dt={dt} outside (0, {max_dt}]")
    half = HeatFlow(0.5 * dt, fld.domain.dx, diffusion)
    u = half(fld.values)
    if reaction:
        u = _react(u, Convolver(kernel), dt)
    u = half(u)
    if clamp_negative:
        _clamp(u, fld.time + dt)
    _check_finite(u, fld.domain, fld.time + dt)
    return ScalarField(fld.domain, u, fld.time + dt)


# -- driver -------------------------------------------------------------------


@dataclass
class SolverConfig:
    dt: float
    T: float
    snapshot_times: Sequence[float] = ()
    clamp_negative: bool = True
    diffusion: str = "kernel"
    observe_every: int = 5  # steps between observer calls
    exhaustion_guard: float | None = None  # distance from x_hi that aborts the run

    def __post_init__(self):
        if not 0 < self.dt <= 0.1:
            raise ValueError(f"dt={self.dt} outside (0, 0.1]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        ts = list(self.snapshot_times)
        if ts != sorted(ts) or any(t < 0 or t > self.T + 1e-12 for t in ts):
            raise ValueError("snapshot_times must be sorted and inside [0, T]")
        if self.observe_every < 1:
            raise ValueError("observe_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class RunResult:
    snapshots: dict[float, ScalarField]
    observers: list
    final: ScalarField
    steps: int
    max_clamped: float
    aborted: bool = False
    abort_reason: str = ""
    running_max: float = 0.0
    extra: dict = field(default_factory=dict)


Observer = Callable[[ScalarField], None]


class Stepper:
    """Advances a field in place, computing only the populated prefix of the grid."""

    CHUNK = 4096

    def __init__(self, kernel: SampledKernel, domain: Domain, dt: float, diffusion="kernel",
                 clamp_negative=True):
        if not math.isclose(kernel.dx, domain.dx, rel_tol=1e-9):
            raise ValueError(f"kernel dx={kernel.dx} does not match grid dx={domain.dx}")
        self.domain = domain
        self.dt = dt
        self.conv = Convolver(kernel)
        self.full = HeatFlow(dt, domain.dx, diffusion)
        self.half = HeatFlow(0.5 * dt, domain.dx, diffusion)
        self.clamp_negative = clamp_negative
        self.guard = 2 * self.full.pad + 2
        self.max_clamped = 0.0

    def _active(self, u: np.ndarray) -> int:
        nz = np.flatnonzero(u)
        last = int(nz[-1]) if nz.size else 0
        m = ((last + 1 + 2 * self.guard) // self.CHUNK + 1) * self.CHUNK
        return min(m, u.size)

    def advance(self, u: np.ndarray, t: float, k: int) -> np.ndarray:
        """``k`` steps; adjacent half diffusions are merged into one full one."""
        n = u.size
        m = self._active(u)
        w = self.half(u[:m])
        for j in range(k):
            w = _react(w, self.conv, self.dt)
            last = j == k - 1
            w = (self.half if last else self.full)(w)
            if self.clamp_negative:
                self.max_clamped = max(self.max_clamped, _clamp(w, t + (j + 1) * self.dt))
            w[w < UNDERFLOW_FLOOR] = 0.0
            if m < n and w[m - self.guard :].any():
                m_new = min(m + self.CHUNK, n)
                w = np.concatenate([w, np.zeros(m_new - m)])
                m = m_new
        out = np.zeros(n)
        out[:m] = w
        _check_finite(out, self.domain, t + k * self.dt)
        return out


def run(
    config: SolverConfig,
    kernel: SampledKernel,
    domain: Domain,
    u0,
    observers: Sequence[Observer] = (),
    exhaustion_probe: Callable[[ScalarField], float] | None = None,
) -> RunResult:
    """Integrate from ``u0`` to ``config.T``.

    Observers are called with the current field every ``observe_every`` steps
    (and at t=0).  ``exhaustion_probe`` returns the position checked against
    ``x_hi - exhaustion_guard``; crossing it stops the run with
    ``aborted=True`` and keeps everything recorded so far.
    """
    dt = config.dt
    n_steps = config.n_steps
    stepper = Stepper(kernel, domain, dt, config.diffusion, config.clamp_negative)
    fld = u0 if isinstance(u0, ScalarField) else initial_field(domain, u0)
    u = fld.values.copy()
    snap_steps = {int(round(ts / dt)): ts for ts in config.snapshot_times}
    snapshots: dict[float, ScalarField] = {}
    stops = sorted(set(range(0, n_steps + 1, config.observe_every)) | set(snap_steps) | {n_steps})
    running_max = float(u.max())
    aborted, reason = False, ""
    done = 0
    for s in stops:
        if s > done:
            u = stepper.advance(u, done * dt, s - done)
            done = s
        cur = ScalarField(domain, u, done * dt)
        running_max = max(running_max, float(u.max()))
        if s in snap_steps:
            snapshots[snap_steps[s]] = ScalarField(domain, u.copy(), done * dt)
        if s % config.observe_every == 0 or s == n_steps:
            for obs in observers:
                obs(cur)
        if exhaustion_probe is not None and config.exhaustion_guard is not None:
            x = exhaustion_probe(cur)
            if x > domain.x_hi - config.exhaustion_guard:
                aborted = True
                reason = f"front at x={x:g} reached the right boundary layer at t={done * dt:g}"
                break
    return RunResult(
        snapshots=snapshots,
        observers=list(observers),
        final=ScalarField(domain, u, done * dt),
        steps=done,
        max_clamped=stepper.max_clamped,
        aborted=aborted,
        abort_reason=reason,
        running_max=running_max,
    )


# -- validation oracle --------------------------------------------------------


def reference_solve(
    kernel: SampledKernel,
    domain: Domain,
    u0,
    T: float,
    dt_ref: float | None = None,
    extrapolate: bool = False,
) -> ScalarField:
    """Explicit Euler, 3-point Laplacian, direct-sum convolution.

    Small instances only; independent of the splitting machinery above.  With
    ``extrapolate`` the result is ``2 u(dt_ref/2) - u(dt_ref)``, which removes the
    first-order Euler error.
    """
    dx = domain.dx
    if domain.n > 4096 or T > 10:
        raise ValueError("reference_solve is limited to n <= 4096 and T <= 10")
    if dt_ref is None:
        dt_ref = dx * dx / 4.0
    if dt_ref > dx * dx / 4.0 * (1 + 1e-12):
        raise ValueError(f"dt_ref={dt_ref} violates the stability bound dx^2/4={dx * dx / 4}")
    fld = u0 if isinstance(u0, ScalarField) else initial_field(domain, u0)
    if extrapolate:
        coarse = _euler(kernel, fld.values, dx, T, dt_ref)
        fine = _euler(kernel, fld.values, dx, T, 0.5 * dt_ref)
        return ScalarField(domain, 2.0 * fine - coarse, T)
    return ScalarField(domain, _euler(kernel, fld.values, dx, T, dt_ref), T)


def _euler(kernel: SampledKernel, u0: np.ndarray, dx: float, T: float, dt_ref: float):
    u = u0.copy()
    phi = np.asarray(kernel.values)
    N = kernel.half_width_cells
    n_steps = int(math.ceil(T / dt_ref - 1e-9))
    h = T / n_steps
    for _ in range(n_steps):
        padded = np.concatenate([np.full(N, u[0]), u, np.zeros(N)])
        c = np.convolve(padded, phi, mode="valid") * dx
        lap = np.empty_like(u)
        lap[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
        lap[0] = u[1] - u[0]  # ghost cell = u[0]
        lap[-1] = -2.0 * u[-1] + u[-2]  # ghost cell = 0
        u = u + h * (0.5 * lap / (dx * dx) + u * (1.0 - c))
    return u
