"""Harness commands.  Each takes a run directory and writes only inside it."""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .. import bridge as bt
from ..feynman_kac import CoverageError, FieldOracle, FKConfig, estimate_u, zscore
from ..front import (
    FrontError,
    FrontTrace,
    NoCrossing,
    ahead_of_front_probe,
    delay_series,
    front_location,
    model_select,
    speed_estimate,
)
from ..kernels import build_kernel
from ..solver import Domain, DomainExhausted, SolverConfig, run
from .config import ExperimentConfig, load_config
from .store import MissingArtifacts, read_csv, read_snapshots, write_csv, write_snapshots

TRACE = "trace.csv"
MANIFEST = "manifest.json"
SNAPSHOTS = "snapshots.bin"
CONFIG = "config.ini"
FRONT_REPORT = "front_report.json"
FK_PROBES = "fk_probes.csv"
BRIDGE_DIR = "bridge"
Z_LIMIT = 3.0


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _stamp(cfg: ExperimentConfig) -> list[str]:
    return [f"config_hash={cfg.hash} seed={cfg['run', 'seed']}"]


def level_column(level: float) -> str:
    return f"X_level_{level:g}"


def build_domain(cfg: ExperimentConfig) -> Domain:
    return Domain.from_spacing(cfg["domain", "x_lo"], cfg.x_hi, cfg["numerics", "dx"])


def build_sampled_kernel(cfg: ExperimentConfig):
    return build_kernel(cfg.kernel_spec, cfg["numerics", "dx"], cfg.truncation_radius)


def load_run_config(run_dir) -> ExperimentConfig:
    path = Path(run_dir) / CONFIG
    if not path.exists():
        raise MissingArtifacts([str(path)])
    return load_config(path)


# -- simulate ------------------------------------------------------------------


class _Trace:
    def __init__(self, levels, L):
        self.levels = levels
        self.L = L
        self.t_probe = max(L / (math.sqrt(2.0) - 1.0), 1.0)
        self.rows = []

    def position(self, fld, level):
        try:
            return front_location(fld, level)
        except NoCrossing:
            return math.nan

    def __call__(self, fld):
        xs = [self.position(fld, lv) for lv in self.levels]
        probe = math.nan
        if fld.time >= self.t_probe:
            try:
                probe = ahead_of_front_probe(fld, self.L)
            except FrontError:
                pass
        self.rows.append([fld.time, *xs, float(fld.values.max()), probe])

    def lowest_front(self, fld):
        x = self.position(fld, min(self.levels))
        return -math.inf if math.isnan(x) else x


def cmd_simulate(cfg: ExperimentConfig, run_dir) -> dict:
    """Integrate the configured problem; returns the manifest.

    On domain exhaustion all outputs are still written, the manifest is
    flagged and ``DomainExhausted`` is raised.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    start, t0 = _now(), time.perf_counter()
    (run_dir / CONFIG).write_text(cfg.to_ini())
    domain = build_domain(cfg)
    kernel = build_sampled_kernel(cfg)
    kernel.to_csv(run_dir / "kernel.csv")
    levels = cfg["output", "levels"]
    trace = _Trace(levels, cfg.probe_L)
    scfg = SolverConfig(
        dt=cfg["numerics", "dt"],
        T=cfg["numerics", "T"],
        snapshot_times=cfg.snapshot_times(),
        diffusion=cfg["numerics", "diffusion"],
        observe_every=cfg["numerics", "observe_every"],
        exhaustion_guard=cfg.exhaustion_guard,
    )
    res = run(scfg, kernel, domain, cfg.initial, [trace], exhaustion_probe=trace.lowest_front)

    columns = ["t", *(level_column(lv) for lv in levels), "max_u", "probe_ahead"]
    write_csv(run_dir / TRACE, columns, trace.rows, _stamp(cfg))
    write_snapshots(run_dir / SNAPSHOTS, [res.snapshots[t] for t in sorted(res.snapshots)])
    manifest = {
        "config_hash": cfg.hash,
        "seed": cfg["run", "seed"],
        "name": cfg["run", "name"],
        "start_time": start,
        "end_time": _now(),
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "code_version": code_version(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "grid": {"x_lo": domain.x_lo, "x_hi": domain.x_hi, "n": domain.n, "dx": domain.dx},
        "kernel": {
            "half_width_cells": kernel.half_width_cells,
            "discarded_mass": kernel.discarded_mass,
        },
        "steps": res.steps,
        "t_end": res.final.time,
        "running_max": res.running_max,
        "max_clamped": res.max_clamped,
        "aborted": res.aborted,
        "abort_reason": res.abort_reason,
        "files": [TRACE, SNAPSHOTS, CONFIG, "kernel.csv"],
    }
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if res.aborted:
        raise DomainExhausted(f"{res.abort_reason}; partial outputs in {run_dir}")
    return manifest


# -- front -----------------------------------------------------------------------


def read_trace(path, levels) -> dict[float, FrontTrace]:
    _, data = read_csv(path)
    out = {}
    for lv in levels:
        t, x = data["t"], data[level_column(lv)]
        ok = np.isfinite(x) & (t > 0)
        out[lv] = FrontTrace(lv, t[ok], x[ok])
    return out


def analyse_fronts(cfg: ExperimentConfig, trace_path) -> dict:
    levels = cfg["output", "levels"]
    traces = read_trace(trace_path, levels)
    window = tuple(cfg["analysis", "fit_window"])
    swin = tuple(cfg["analysis", "speed_window"])
    per_level = {}
    for lv, tr in traces.items():
        entry = {"speed": speed_estimate(tr, swin)}
        try:
            entry |= model_select(delay_series(tr), window).as_dict()
        except FrontError as exc:
            # e.g. a constant delay, for which the power model is undefined
            entry |= {"preferred": "inapplicable", "error": str(exc)}
        per_level[f"{lv:g}"] = entry
    prefs = {v["preferred"] for v in per_level.values()}
    return {
        "config_hash": cfg.hash,
        "speed_window": list(swin),
        "speed": per_level[f"{levels[0]:g}"]["speed"],
        "levels": per_level,
        "levels_agree": len(prefs) == 1,
    }


def cmd_front(run_dir) -> dict:
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir)
    if not (run_dir / TRACE).exists():
        raise MissingArtifacts([str(run_dir / TRACE)])
    rep = analyse_fronts(cfg, run_dir / TRACE)
    (run_dir / FRONT_REPORT).write_text(json.dumps(rep, indent=2, sort_keys=True))
    for lv, tr in read_trace(run_dir / TRACE, cfg["output", "levels"]).items():
        ds = delay_series(tr)
        rows = zip(ds.times, np.log(ds.times), ds.delays)
        write_csv(run_dir / f"delay_{lv:g}.csv", ["t", "ln_t", "d"], rows, _stamp(cfg))
    return rep


# -- Feynman-Kac -------------------------------------------------------------------


def fk_probe_points(cfg: ExperimentConfig, fld) -> np.ndarray:
    x_front = front_location(fld, 0.5)
    dom = fld.domain
    want = x_front + np.asarray(cfg["fk", "offsets"])
    idx = np.clip(np.rint(dom.index_of(want)).astype(int), 0, dom.n - 1)
    return dom.x[idx]


def cmd_fk_validate(run_dir, threads: int = 1) -> list[dict]:
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir)
    t_fk, hz = cfg["fk", "t"], cfg["fk", "horizon"]
    if not t_fk > 0:
        raise ValueError("this configuration has no [fk] probe time")
    if not (run_dir / SNAPSHOTS).exists():
        raise MissingArtifacts([str(run_dir / SNAPSHOTS)])
    domain = build_domain(cfg)
    snaps = [
        f for f in read_snapshots(run_dir / SNAPSHOTS, domain)
        if t_fk - hz - 1e-9 <= f.time <= t_fk + 1e-9
    ]
    if not snaps:
        raise CoverageError(f"no snapshots in [{t_fk - hz:g}, {t_fk:g}]")
    now = max(snaps, key=lambda f: f.time)
    xs = fk_probe_points(cfg, now)
    reach = 10.0 * math.sqrt(hz)
    oracle = FieldOracle.from_snapshots(
        snaps, build_sampled_kernel(cfg), (xs.min() - reach, xs.max() + reach)
    )
    seed = cfg["run", "seed"]

    def one(i):
        fkc = FKConfig(cfg["fk", "n_paths"], cfg["fk", "path_dt"], hz, (seed, i))
        est = estimate_u(float(xs[i]), t_fk, oracle, fkc)
        g = float(now(xs[i]))
        return {
            "x": float(xs[i]), "t": t_fk, "grid_u": g, "fk_mean": est.mean,
            "fk_se": est.standard_error, "z": zscore(est, g), "n_paths": est.n_paths,
            "flagged": int(est.flagged),
        }

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        rows = list(ex.map(one, range(xs.size)))
    cols = ["x", "t", "grid_u", "fk_mean", "fk_se", "z", "n_paths", "flagged"]
    write_csv(run_dir / FK_PROBES, cols, ([r[c] for c in cols] for r in rows), _stamp(cfg))
    return rows


# -- bridge ------------------------------------------------------------------------

TUBE_PLAN = (
    # b, R0, t_grid, tolerance on the fitted rate
    (0.0, 1.0, (0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0), 0.05),
    (1.0, 1.0, (0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0), 0.07),
    (0.0, 2.0, (2.0, 4.0, 6.0, 8.0, 10.0, 14.0, 20.0), 0.02),
)


def cmd_bridge(out_dir, seed: int = 0, n_paths: int = 100_000, threads: int = 1,
               survival_paths: int = 1_000_000) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = [f"seed={seed}"]

    def validation(correct):
        return bt.bridge_validation(n_paths=n_paths, seed=seed, correct=correct)

    def tube(i):
        b, R0, grid, tol = TUBE_PLAN[i]
        fit = bt.tube_decay_rate_mc(bt.TubeSpec(R0, b, grid[-1]), grid, n_paths, (seed, 100 + i))
        exact = bt.tube_rate_exact(b, R0)
        return {"b": b, "R0": R0, "t_lo": grid[0], "t_hi": grid[-1], "exact_rate": exact,
                "mc_rate": fit.rate, "diff": fit.rate - exact, "tol": tol,
                "min_hits": int(fit.hits.min())}

    def survival():
        est = bt.tube_survival_mc(bt.TubeSpec(1.0, 0.0, 1.0), survival_paths, seed=(seed, 200))
        exact = bt.interval_survival_exact(1.0)
        return {"t": 1.0, "exact": exact, "mc_mean": est.mean, "mc_se": est.standard_error,
                "z": est.z(exact)}

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        f_cor = ex.submit(validation, True)
        f_unc = ex.submit(validation, False)
        f_tub = [ex.submit(tube, i) for i in range(len(TUBE_PLAN))]
        f_srv = ex.submit(survival)
        rows = f_cor.result() + f_unc.result()
        tubes = [f.result() for f in f_tub]
        surv = f_srv.result()

    bt.write_table(out / "bridge_validation.csv", rows, bt.BRIDGE_COLUMNS, stamp)
    bt.write_table(out / "tube_rates.csv", tubes, None, stamp)
    bt.write_table(out / "interval_survival.csv", [surv], None, stamp)
    xs = np.linspace(0.01, 10.0, 1000)
    tails = []
    for x in xs:
        g = bt.gaussian_tail(float(x))
        tails.append({"x": float(x), "exact": g.exact, "chernoff": g.chernoff, "mills": g.mills,
                      "ordered": int(g.exact <= g.chernoff and g.exact <= g.mills)})
    bt.write_table(out / "gaussian_tail.csv", tails, None, stamp)
    return summarise_bridge(out)


def summarise_bridge(out_dir) -> dict:
    out = Path(out_dir)
    _, v = read_csv(out / "bridge_validation.csv")
    _, tr = read_csv(out / "tube_rates.csv")
    _, sv = read_csv(out / "interval_survival.csv")
    _, gt = read_csv(out / "gaussian_tail.csv")
    cor = v["corrected"] == 1
    return {
        "bridge_cells": int(cor.sum()),
        "bridge_corrected_over_3se": int(np.sum(np.abs(v["z"][cor]) > Z_LIMIT)),
        "bridge_uncorrected_biased_high": int(np.sum(v["z"][~cor] > Z_LIMIT)),
        "tube_rates": [
            {"b": float(b), "R0": float(r), "mc_rate": float(m), "exact_rate": float(e),
             "ok": bool(abs(m - e) <= tol)}
            for b, r, m, e, tol in zip(tr["b"], tr["R0"], tr["mc_rate"], tr["exact_rate"],
                                       tr["tol"])
        ],
        "interval_survival_z": float(sv["z"][0]),
        "gaussian_tail_violations": int(np.sum(gt["ordered"] == 0)),
    }


# -- report --------------------------------------------------------------------------


def _check(name, ok, value, target):
    return {"check": name, "ok": bool(ok), "value": value, "target": target}


def probe_ratio(times, probe, t0):
    sel = np.isfinite(probe) & (times >= t0 - 1e-9)
    if not sel.any():
        return math.nan
    pp = probe[sel]
    return float(pp.max() / pp[0])


def cmd_report(run_dir) -> dict:
    """Consolidate a run directory.  Numbers are recomputed from the CSVs."""
    run_dir = Path(run_dir)
    required = [run_dir / CONFIG, run_dir / MANIFEST, run_dir / TRACE]
    missing = [str(p) for p in required if not p.exists()]
    if missing:
        raise MissingArtifacts(missing)
    cfg = load_config(run_dir / CONFIG)
    manifest = json.loads((run_dir / MANIFEST).read_text())
    meta, trace = read_csv(run_dir / TRACE)
    if meta.get("config_hash") != cfg.hash or manifest.get("config_hash") != cfg.hash:
        raise ValueError(f"config hash mismatch in {run_dir}: outputs from different runs")

    checks = []
    max_u = trace["max_u"]
    M = float(np.max(max_u))
    finite = bool(np.all(np.isfinite(max_u)))
    checks.append(_check("bound", finite and M <= cfg["expect", "max_u"] and
                         not manifest["aborted"], M, cfg["expect", "max_u"]))
    T = cfg["numerics", "T"]
    complete = math.isclose(float(trace["t"][-1]), T, rel_tol=1e-9)
    checks.append(_check("completed", complete, float(trace["t"][-1]), T))

    fronts = None
    if complete:
        fronts = analyse_fronts(cfg, run_dir / TRACE)
        sp = cfg["expect", "speed"]
        if sp:
            checks.append(_check("speed", abs(fronts["speed"] - sp[0]) <= sp[1],
                                 fronts["speed"], list(sp)))
        for lv, rep in fronts["levels"].items():
            if "error" in rep:
                checks.append(_check(f"fits@{lv}", False, rep["error"], "fits computable"))
                continue
            if cfg["expect", "log_c"]:
                lo, hi = cfg["expect", "log_c"]
                c = rep["log"]["c"]
                checks.append(_check(f"log_c@{lv}", lo <= c <= hi, c, [lo, hi]))
            if cfg["expect", "beta"]:
                lo, hi = cfg["expect", "beta"]
                b = rep["power"]["beta"]
                checks.append(_check(f"beta@{lv}", lo <= b <= hi, b, [lo, hi]))
            if cfg["expect", "preferred"]:
                want = cfg["expect", "preferred"]
                checks.append(_check(f"preferred@{lv}", rep["preferred"] == want,
                                     rep["preferred"], want))
        if cfg["expect", "probe_ratio"] > 0:
            r = probe_ratio(trace["t"], trace["probe_ahead"], cfg["expect", "probe_t0"])
            lim = cfg["expect", "probe_ratio"]
            checks.append(_check("probe_ratio", r <= lim, r, lim))

    fk = None
    if (run_dir / FK_PROBES).exists():
        _, p = read_csv(run_dir / FK_PROBES)
        n_bad = int(np.sum(np.abs(p["z"]) > Z_LIMIT))
        fk = {"probes": int(p["z"].size), "over_3se": n_bad, "max_abs_z": float(np.max(np.abs(p["z"])))}
        checks.append(_check("fk_consistency", n_bad <= 1, n_bad, "<= 1 probe with |z| > 3"))

    bridge = None
    if (run_dir / BRIDGE_DIR / "bridge_validation.csv").exists():
        bridge = summarise_bridge(run_dir / BRIDGE_DIR)
        checks.append(_check("bridge_exact", bridge["bridge_corrected_over_3se"] <= 1,
                             bridge["bridge_corrected_over_3se"], "<= 1"))
        checks.append(_check("bridge_bias_detected", bridge["bridge_uncorrected_biased_high"] >= 1,
                             bridge["bridge_uncorrected_biased_high"], ">= 1"))
        for tr in bridge["tube_rates"]:
            checks.append(_check(f"tube_rate(b={tr['b']:g},R0={tr['R0']:g})", tr["ok"],
                                 tr["mc_rate"], tr["exact_rate"]))
        checks.append(_check("interval_survival", abs(bridge["interval_survival_z"]) <= Z_LIMIT,
                             bridge["interval_survival_z"], "|z| <= 3"))
        checks.append(_check("gaussian_tail_order", bridge["gaussian_tail_violations"] == 0,
                             bridge["gaussian_tail_violations"], 0))

    report = {
        "config": cfg.to_ini(),
        "config_hash": cfg.hash,
        "seed": cfg["run", "seed"],
        "observed_bound": M,
        "fronts": fronts,
        "fk": fk,
        "bridge": bridge,
        "wall_clock_s": manifest.get("wall_clock_s"),
        "versions": manifest.get("versions"),
        "code_version": manifest.get("code_version"),
        "aborted": manifest.get("aborted"),
        "checks": checks,
        "failed": [c["check"] for c in checks if not c["ok"]],
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (run_dir / "summary.txt").write_text(render_summary(report))
    return report


def render_summary(report: dict) -> str:
    lines = [f"run {report['config_hash']} seed {report['seed']}",
             f"observed sup u: {report['observed_bound']:.6g}"]
    if report["fronts"]:
        lines.append(f"speed: {report['fronts']['speed']:.6f}")
        for lv, rep in report["fronts"]["levels"].items():
            if "error" in rep:
                lines.append(f"level {lv}: {rep['error']}")
                continue
            lines.append(
                f"level {lv}: log c={rep['log']['c']:.4f} rms={rep['log']['residual']:.3g}; "
                f"power beta={rep['power']['beta']:.4f} rms={rep['power']['residual']:.3g}; "
                f"preferred {rep['preferred']}"
            )
    for c in report["checks"]:
        lines.append(f"{'PASS' if c['ok'] else 'FAIL'} {c['check']}: {c['value']} (target {c['target']})")
    return "\n".join(lines) + "\n"
