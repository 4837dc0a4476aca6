"""INI experiment configuration: schema, defaults, validation and hashing.

Every field lives in a section of a ``key = value`` file.  ``SCHEMA`` lists
each one with its type, unit, default and meaning; ``describe_schema`` renders
it for the docs.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

from ..kernels import MAX_DISCARDED_MASS, KernelSpec, PowerTail, TruncGaussian, Uniform, tail_mass
from ..solver import DIFFUSION_METHODS, Indicator

SQRT2 = math.sqrt(2.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    section: str
    key: str
    kind: str  # "float", "int", "str", "floats"
    default: object
    unit: str
    doc: str


SCHEMA: tuple[Field, ...] = (
    Field("run", "name", "str", "run", "", "label used in output file names"),
    Field("run", "seed", "int", 0, "", "root seed for every Monte Carlo stream"),
    Field("kernel", "family", "str", "uniform", "", "uniform, powertail or truncgaussian"),
    Field("kernel", "half_width", "float", 0.5, "length", "uniform: support half-width"),
    Field("kernel", "alpha", "float", 1.0, "", "powertail: tail exponent, in (0, 2)"),
    Field("kernel", "core_halfwidth", "float", 1.0, "length", "powertail: flat-core half-width"),
    Field("kernel", "scale", "float", 1.0, "length", "truncgaussian: standard deviation"),
    Field("kernel", "cutoff", "float", 4.0, "length", "truncgaussian: support half-width"),
    Field("kernel", "truncation_radius", "float", 0.0, "length",
          "sampling radius; 0 means the domain length"),
    Field("domain", "x_lo", "float", -100.0, "length", "left edge of the grid"),
    Field("domain", "margin", "float", 100.0, "length",
          "right edge is sqrt(2) T + margin"),
    Field("numerics", "dx", "float", 0.05, "length", "grid spacing"),
    Field("numerics", "dt", "float", 0.02, "time", "time step, in (0, 0.1]"),
    Field("numerics", "T", "float", 3000.0, "time", "final time"),
    Field("numerics", "diffusion", "str", "kernel", "", "kernel, discrete or spectral"),
    Field("numerics", "observe_every", "int", 5, "steps", "steps between trace rows"),
    Field("numerics", "exhaustion_guard", "float", 0.0, "length",
          "abort when the lowest-level front is this close to the right edge; "
          "0 means 10 kernel core half-widths"),
    Field("initial", "a", "float", -20.0, "length", "left end of the initial plateau"),
    Field("initial", "b", "float", 0.0, "length", "right end of the initial plateau"),
    Field("initial", "amplitude", "float", 1.0, "", "plateau height"),
    Field("output", "levels", "floats", (0.5, 0.1), "", "front levels traced"),
    Field("output", "snapshot_times", "floats", (), "time", "extra snapshot times"),
    Field("output", "snapshot_every", "float", 0.0, "time",
          "regular snapshot cadence over the whole run; 0 disables"),
    Field("analysis", "fit_window", "floats", (300.0, 3000.0), "time", "delay-fit window"),
    Field("analysis", "speed_window", "floats", (500.0, 3000.0), "time",
          "window for the speed regression"),
    Field("analysis", "probe_L", "float", 0.0, "",
          "bound on the initial data for the ahead-of-front probe; 0 means "
          "max(amplitude, b, 1)"),
    Field("fk", "t", "float", 0.0, "time", "probe time; 0 disables the check"),
    Field("fk", "horizon", "float", 5.0, "time", "look-back t'"),
    Field("fk", "n_paths", "int", 100_000, "", "paths per probe"),
    Field("fk", "path_dt", "float", 0.01, "time", "Brownian path step"),
    Field("fk", "snapshot_cadence", "float", 0.1, "time",
          "snapshot spacing over [t - horizon, t]"),
    Field("fk", "offsets", "floats", (-6.0, -5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0),
          "length", "probe positions relative to the level-0.5 front at t"),
    Field("expect", "speed", "floats", (), "", "target, tolerance"),
    Field("expect", "log_c", "floats", (), "", "admissible range of the log slope"),
    Field("expect", "beta", "floats", (), "", "admissible range of the power exponent"),
    Field("expect", "preferred", "str", "", "", "model expected at every level"),
    Field("expect", "max_u", "float", 10.0, "", "bound on sup u over the run"),
    Field("expect", "probe_ratio", "float", 0.0, "",
          "max of the ahead-of-front probe over [probe_t0, T] relative to its value "
          "at probe_t0; 0 disables"),
    Field("expect", "probe_t0", "float", 200.0, "time", "start of the probe check"),
)

_FIELDS = {(f.section, f.key): f for f in SCHEMA}


def _parse(f: Field, raw: str):
    raw = raw.strip()
    try:
        if f.kind == "float":
            return float(raw)
        if f.kind == "int":
            return int(raw)
        if f.kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{f.section}] {f.key}: cannot parse {raw!r} as {f.kind}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    values: tuple  # ((section, key, value), ...) in schema order

    def __getitem__(self, item):
        section, key = item
        for s, k, v in self.values:
            if s == section and k == key:
                return v
        raise KeyError(item)

    def get(self, section: str, key: str):
        return self[section, key]

    def replace(self, **changes) -> "ExperimentConfig":
        """``replace(numerics__T=50.0)`` returns a validated copy."""
        d = {(s, k): v for s, k, v in self.values}
        for name, v in changes.items():
            s, k = name.split("__")
            if (s, k) not in _FIELDS:
                raise ConfigError(f"unknown field [{s}] {k}")
            d[s, k] = v
        return _build(d)

    # derived quantities

    @property
    def x_hi(self) -> float:
        return SQRT2 * self["numerics", "T"] + self["domain", "margin"]

    @property
    def kernel_spec(self) -> KernelSpec:
        fam = self["kernel", "family"]
        if fam == "uniform":
            return Uniform(self["kernel", "half_width"])
        if fam == "powertail":
            return PowerTail(self["kernel", "alpha"], self["kernel", "core_halfwidth"])
        return TruncGaussian(self["kernel", "scale"], self["kernel", "cutoff"])

    @property
    def truncation_radius(self) -> float:
        r = self["kernel", "truncation_radius"]
        return r if r > 0 else self.x_hi - self["domain", "x_lo"]

    @property
    def initial(self) -> Indicator:
        return Indicator(self["initial", "a"], self["initial", "b"], self["initial", "amplitude"])

    @property
    def exhaustion_guard(self) -> float:
        g = self["numerics", "exhaustion_guard"]
        return g if g > 0 else 10.0 * self.kernel_spec.core

    @property
    def probe_L(self) -> float:
        L = self["analysis", "probe_L"]
        if L > 0:
            return L
        return max(self["initial", "amplitude"], self["initial", "b"], 1.0)

    def snapshot_times(self) -> tuple[float, ...]:
        """All snapshot times on the time-step lattice, sorted and unique."""
        T, dt = self["numerics", "T"], self["numerics", "dt"]
        steps = {int(round(t / dt)) for t in self["output", "snapshot_times"]}
        every = self["output", "snapshot_every"]
        if every > 0:
            k = max(int(round(every / dt)), 1)
            steps.update(range(k, int(round(T / dt)) + 1, k))
        t_fk = self["fk", "t"]
        if t_fk > 0:
            k = max(int(round(self["fk", "snapshot_cadence"] / dt)), 1)
            lo, hi = int(round((t_fk - self["fk", "horizon"]) / dt)), int(round(t_fk / dt))
            steps.update(range(hi, lo - 1, -k))
            steps.update((lo, hi))
        return tuple(s * dt for s in sorted(steps))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s, k, v in self.values:
            if not cp.has_section(s):
                cp.add_section(s)
            cp.set(s, k, _format(v))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]


def _check(d: dict) -> None:
    def bad(msg):
        raise ConfigError(msg)

    dx, dt, T = d["numerics", "dx"], d["numerics", "dt"], d["numerics", "T"]
    if not 0 < dx <= 0.5:
        bad(f"[numerics] dx={dx} outside (0, 0.5]")
    if not 0 < dt <= 0.1:
        bad(f"[numerics] dt={dt} outside (0, 0.1]")
    if not T > 0:
        bad("[numerics] T must be positive")
    if abs(T / dt - round(T / dt)) > 1e-6:
        bad("[numerics] T must be a multiple of dt")
    if d["numerics", "diffusion"] not in DIFFUSION_METHODS:
        bad(f"[numerics] diffusion must be one of {DIFFUSION_METHODS}")
    if d["numerics", "observe_every"] < 1:
        bad("[numerics] observe_every must be >= 1")
    fam = d["kernel", "family"]
    if fam not in ("uniform", "powertail", "truncgaussian"):
        bad(f"[kernel] unknown family {fam!r}")
    if fam == "powertail" and not 0 < d["kernel", "alpha"] < 2:
        bad("[kernel] alpha must lie in (0, 2)")
    if d["domain", "margin"] <= 0:
        bad("[domain] margin must be positive")
    x_lo = d["domain", "x_lo"]
    if not x_lo < d["initial", "a"] < d["initial", "b"]:
        bad("[initial] need x_lo < a < b")
    if d["initial", "amplitude"] <= 0:
        bad("[initial] amplitude must be positive")
    levels = d["output", "levels"]
    if not levels or any(not 0 < lv < 1 for lv in levels):
        bad("[output] levels must lie in (0, 1)")
    for key in ("fit_window", "speed_window"):
        w = d["analysis", key]
        if len(w) != 2 or not 0 < w[0] < w[1]:
            bad(f"[analysis] {key} must be two increasing positive times")
    if any(t < 0 or t > T for t in d["output", "snapshot_times"]):
        bad("[output] snapshot_times must lie in [0, T]")
    t_fk, hz = d["fk", "t"], d["fk", "horizon"]
    if t_fk:
        if not 0 < hz <= t_fk <= T:
            bad("[fk] need 0 < horizon <= t <= T")
        if d["fk", "n_paths"] < 100:
            bad("[fk] n_paths must be >= 100")
        if not 0 < d["fk", "path_dt"] <= hz:
            bad("[fk] need 0 < path_dt <= horizon")
        if not d["fk", "offsets"]:
            bad("[fk] offsets must not be empty")
    for key in ("speed", "log_c", "beta"):
        if len(d["expect", key]) not in (0, 2):
            bad(f"[expect] {key} takes two numbers")
    if d["expect", "preferred"] not in ("", "log", "power"):
        bad("[expect] preferred must be log or power")


def _build(d: dict) -> ExperimentConfig:
    _check(d)
    cfg = ExperimentConfig(tuple((f.section, f.key, d[f.section, f.key]) for f in SCHEMA))
    spec = cfg.kernel_spec  # runs the kernel's own parameter checks
    if cfg.truncation_radius > cfg.x_hi - cfg["domain", "x_lo"] + 1e-9:
        raise ConfigError("[kernel] truncation radius exceeds the domain length")
    if spec.core >= cfg.x_hi - cfg["domain", "x_lo"]:
        raise ConfigError("domain shorter than the kernel core")
    lost = 2.0 * tail_mass(spec, cfg.truncation_radius)
    if lost > MAX_DISCARDED_MASS:
        raise ConfigError(
            f"[kernel] truncation at {cfg.truncation_radius:g} discards mass {lost:.3g}"
            f" (limit {MAX_DISCARDED_MASS})"
        )
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    d = {(f.section, f.key): f.default for f in SCHEMA}
    for section in cp.sections():
        for key, raw in cp.items(section):
            f = _FIELDS.get((section, key))
            if f is None:
                raise ConfigError(f"unknown field [{section}] {key}")
            d[section, key] = _parse(f, raw)
    try:
        return _build(d)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def describe_schema() -> str:
    lines = ["| section | key | type | unit | default | meaning |", "|---|---|---|---|---|---|"]
    for f in SCHEMA:
        default = _format(f.default) if f.default != () else "(empty)"
        lines.append(f"| {f.section} | {f.key} | {f.kind} | {f.unit} | {default} | {f.doc} |")
    return "\n".join(lines)
