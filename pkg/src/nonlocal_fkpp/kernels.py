"""Interaction kernels for the non-local Fisher-KPP equation.

Three analytic families are provided, all symmetric with unit mass:

* ``Uniform``: flat density ``1/(2*half_width)`` on ``[-half_width, half_width]``.
* ``PowerTail``: flat core of height ``h`` on ``|x| <= core`` and a tail
  ``h * core**(1+alpha) * |x|**-(1+alpha)`` beyond it.  The tail integral is
  ``h * core**(1+alpha) * r**-alpha / alpha``.
* ``TruncGaussian``: normal density of scale ``s`` cut off at ``cutoff``.

Kernels are sampled at grid offsets ``k*dx`` and renormalised so that the
discrete mass ``sum(values) * dx`` is exactly one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import erf

MAX_DISCARDED_MASS = 0.01


class KernelError(ValueError):
    """Raised for invalid kernel parameters or unsafe truncation."""


@dataclass(frozen=True)
class Uniform:
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise KernelError(f"Uniform half_width must be positive, got {self.half_width}")

    @property
    def core(self) -> float:
        return self.half_width

    @property
    def height(self) -> float:
        return 1.0 / (2.0 * self.half_width)

    def density(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        out = np.where(ax < self.half_width, self.height, 0.0)
        # mean of the one-sided limits at the jump
        return np.where(ax == self.half_width, 0.5 * self.height, out)

    def tail_mass(self, r: float) -> float:
        r = abs(r)
        return max(self.half_width - r, 0.0) * self.height

    def window_mass(self, r: float, k: float) -> float:
        return self.tail_mass(r) - self.tail_mass(k * r)


@dataclass(frozen=True)
class PowerTail:
    alpha: float
    core_halfwidth: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise KernelError(f"PowerTail alpha must be positive, got {self.alpha}")
        if not self.core_halfwidth > 0:
            raise KernelError(
                f"PowerTail core_halfwidth must be positive, got {self.core_halfwidth}"
            )

    @property
    def core(self) -> float:
        return self.core_halfwidth

    @property
    def height(self) -> float:
        a, s = self.alpha, self.core_halfwidth
        return a / (2.0 * s * (1.0 + a))

    @property
    def tail_coefficient(self) -> float:
        """``C`` in ``tail_mass(r) = C * r**-alpha`` for ``r >= core``."""
        a, s = self.alpha, self.core_halfwidth
        return self.height * s ** (1.0 + a) / a

    def density(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        s, a, h = self.core_halfwidth, self.alpha, self.height
        with np.errstate(divide="ignore"):
            tail = h * (s / np.maximum(ax, s)) ** (1.0 + a)
        return np.where(ax <= s, h, tail)

    def tail_mass(self, r: float) -> float:
        r = abs(r)
        s = self.core_halfwidth
        if r >= s:
            return self.tail_coefficient * r ** (-self.alpha)
        return self.height * (s - r) + self.tail_coefficient * s ** (-self.alpha)

    def window_mass(self, r: float, k: float) -> float:
        return self.tail_mass(r) - self.tail_mass(k * r)


@dataclass(frozen=True)
class TruncGaussian:
    scale: float
    cutoff: float

    def __post_init__(self):
        if not self.scale > 0 or not self.cutoff > 0:
            raise KernelError("TruncGaussian scale and cutoff must be positive")

    @property
    def core(self) -> float:
        return min(self.scale, self.cutoff)

    @property
    def _norm(self) -> float:
        s = self.scale
        return s * math.sqrt(2.0 * math.pi) * math.erf(self.cutoff / (s * math.sqrt(2.0)))

    def density(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        g = np.exp(-0.5 * (ax / self.scale) ** 2) / self._norm
        out = np.where(ax < self.cutoff, g, 0.0)
        return np.where(ax == self.cutoff, 0.5 * g, out)

    def tail_mass(self, r: float) -> float:
        r = min(abs(r), self.cutoff)
        s = self.scale * math.sqrt(2.0)
        half = 0.5 * self.scale * math.sqrt(2.0 * math.pi)
        return half * (math.erf(self.cutoff / s) - math.erf(r / s)) / self._norm

    def window_mass(self, r: float, k: float) -> float:
        return self.tail_mass(r) - self.tail_mass(k * r)


KernelSpec = Union[Uniform, PowerTail, TruncGaussian]


def tail_mass(spec: KernelSpec, r: float) -> float:
    """One-sided tail integral of the kernel beyond ``r``."""
    return spec.tail_mass(r)


@dataclass(frozen=True)
class SampledKernel:
    """Kernel values at offsets ``k*dx`` for ``k = -half_width_cells..half_width_cells``."""

    dx: float
    half_width_cells: int
    values: np.ndarray = field(repr=False)
    discarded_mass: float = 0.0
    spec: KernelSpec | None = None

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def discrete_mass(self) -> float:
        return float(self.values.sum() * self.dx)

    @property
    def offsets(self) -> np.ndarray:
        n = self.half_width_cells
        return np.arange(-n, n + 1) * self.dx

    @property
    def radius(self) -> float:
        return self.half_width_cells * self.dx

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "phi"])
            for x, v in zip(self.offsets, self.values):
                w.writerow([repr(float(x)), repr(float(v))])


def build_kernel(spec: KernelSpec, dx: float, truncation_radius: float) -> SampledKernel:
    if not dx > 0:
        raise KernelError(f"dx must be positive, got {dx}")
    if not dx < spec.core:
        raise KernelError(f"dx={dx} does not resolve the kernel core half-width {spec.core}")
    if truncation_radius < spec.core:
        raise KernelError(
            f"truncation radius {truncation_radius} is inside the kernel core {spec.core}"
        )
    discarded = 2.0 * spec.tail_mass(truncation_radius)
    if discarded > MAX_DISCARDED_MASS:
        raise KernelError(
            f"truncation at radius {truncation_radius} discards kernel mass {discarded:.4g} "
            f"(limit {MAX_DISCARDED_MASS})"
        )

    n = int(math.floor(truncation_radius / dx + 1e-9))
    half = np.asarray(spec.density(np.arange(n + 1) * dx), dtype=float)
    nz = np.flatnonzero(half)
    n = int(nz[-1])  # drop zero cells beyond compact support
    half = half[: n + 1]
    values = np.concatenate([half[:0:-1], half])
    values /= values.sum() * dx
    # re-mirror so rounding in the division cannot break symmetry
    values = np.concatenate([values[n:][:0:-1], values[n:]])
    return SampledKernel(
        dx=dx, half_width_cells=n, values=values, discarded_mass=discarded, spec=spec
    )


@dataclass
class AuditReport:
    alpha_claim: float
    window_factor: float
    r: np.ndarray
    tail: np.ndarray
    window: np.ndarray
    upper_constant: float
    lower_constant: float
    upper_holds: bool
    lower_holds: bool
    eta: float
    sigma: float
    core_holds: bool

    def as_dict(self) -> dict:
        return {
            "alpha_claim": self.alpha_claim,
            "window_factor": self.window_factor,
            "upper_constant": self.upper_constant,
            "lower_constant": self.lower_constant,
            "upper_holds": self.upper_holds,
            "lower_holds": self.lower_holds,
            "eta": self.eta,
            "sigma": self.sigma,
            "core_holds": self.core_holds,
        }


def audit_conditions(
    spec: KernelSpec,
    alpha_claim: float,
    K: float = 2.0,
    r_max: float | None = None,
    n_r: int = 60,
    tol: float = 1e-6,
) -> AuditReport:
    """Check tail-decay hypotheses on a log-spaced grid of radii.

    The upper condition ``tail(r) <= c * r**-alpha`` holds when ``r**alpha * tail(r)``
    does not grow over the outer decade of the grid; the lower condition
    ``window(r) >= c' * r**-alpha`` holds when ``r**alpha * window(r)`` stays
    positive and does not decay there.  Constants are fitted as the sup / inf
    of those scaled quantities over the grid.
    """
    if not alpha_claim > 0:
        raise KernelError("alpha_claim must be positive")
    if not K > 1:
        raise KernelError("window factor K must exceed 1")
    r_min = 2.0 * spec.core
    if r_max is None:
        r_max = 1e4 * r_min
    r = np.geomspace(r_min, r_max, n_r)
    tail = np.array([spec.tail_mass(x) for x in r])
    window = np.array([spec.window_mass(x, K) for x in r])
    scaled_tail = r**alpha_claim * tail
    scaled_window = r**alpha_claim * window

    outer = r >= r_max / 10.0
    upper_c = float(scaled_tail.max())
    upper = bool(np.all(scaled_tail[outer] <= scaled_tail[outer][0] * (1.0 + tol)))
    lower_c = float(scaled_window.min())
    lower = bool(
        lower_c > 0 and np.all(scaled_window[outer] >= scaled_window[outer][0] * (1.0 - tol))
    )

    sigma = spec.core
    probe = np.linspace(-sigma, sigma, 2001)[1:-1]
    dens = spec.density(probe)
    eta = float(dens.min())
    return AuditReport(
        alpha_claim=alpha_claim,
        window_factor=K,
        r=r,
        tail=tail,
        window=window,
        upper_constant=upper_c,
        lower_constant=lower_c,
        upper_holds=upper,
        lower_holds=lower,
        eta=eta,
        sigma=sigma,
        core_holds=eta > 0,
    )


def read_kernel_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1)
    return data[:, 0], data[:, 1]
