"""Configuration-driven experiment runner.

Each subcommand reproduces one checkable claim end to end (dispersion tables,
critical sets, Green's-function decay, covariance transport and its limit,
Gibbs relaxation, the central limit gates, mixing decay) and writes
machine-readable reports.  Outputs are deterministic given seeds: floats are
printed with %.17g, JSON keys are sorted, and no timestamps appear anywhere,
so re-running a manifest reproduces every byte.

Exit codes: 0 success, 1 usage error, 2 structural condition failure
(a ConditionReport with verdict fail), 3 statistical acceptance-gate failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .covariance import (
    TestField,
    covariance_from_density,
    evolve_density,
    gibbs_density,
    limit_density,
    mixing_integral,
    quadratic_form,
)
from .dynamics import evolve_ensemble, green_function, truncated_green
from .fields import (
    density_from_covariance,
    density_from_jsonable,
    density_to_jsonable,
    gaussian_ensemble,
    nonlinear_transform_sample,
    triangular_density,
    white_noise_density,
)
from .kernel import (
    build_nn_kernel,
    check_E123,
    kernel_from_json,
    kernel_to_jsonable,
    random_finite_range_kernel,
)
from .spectral import (
    DELTA_CROSS,
    DELTA_HESS,
    DELTA_NULL,
    check_E4_E5,
    check_ES,
    critical_set_scan,
    dispersion_grid,
    write_dispersion_csv,
)
from .stats import (
    characteristic_functional,
    empirical_covariance,
    gaussianity_report,
    linear_functional_samples,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONDITION = 2
EXIT_GATE = 3


class UsageError(Exception):
    pass


class ConditionFailure(Exception):
    def __init__(self, reports):
        self.reports = reports
        failing = ", ".join(r.condition for r in reports if r.verdict == "fail")
        super().__init__(f"condition failure: {failing}")


class GateFailure(Exception):
    def __init__(self, name, payload):
        self.payload = payload
        super().__init__(f"acceptance gate failed: {name}")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract wants 1."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config

_TOP_KEYS = {"kernel", "L", "grid_L", "measure", "times", "ensemble", "seed",
             "thresholds", "output"}
_THRESHOLD_KEYS = {"delta_cross", "delta_hess", "delta_null", "eps"}
_KERNEL_KEYS = {
    "nn": {"type", "d", "n", "mass"},
    "random": {"type", "d", "n", "range", "seed"},
    "file": {"type", "path"},
}
_MEASURE_KEYS = {
    "triangular": {"type", "nu0", "T0", "T1"},
    "white": {"type", "T0", "T1"},
    "transformed": {"type", "base", "a0", "a1"},
    "file": {"type", "path"},
}


def _check_spec(spec, allowed_by_type, what):
    if not isinstance(spec, dict) or "type" not in spec:
        raise UsageError(f"{what} spec must be an object with a 'type' field")
    kind = spec["type"]
    if kind not in allowed_by_type:
        raise UsageError(f"unknown {what} type {kind!r}")
    unknown = set(spec) - allowed_by_type[kind]
    if unknown:
        raise UsageError(f"unknown {what} keys for type {kind!r}: {sorted(unknown)}")
    return spec


def _load_config(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if "thresholds" in doc:
        extra = set(doc["thresholds"]) - _THRESHOLD_KEYS
        if extra:
            raise UsageError(f"unknown threshold keys: {sorted(extra)}")
    if "kernel" in doc:
        _check_spec(doc["kernel"], _KERNEL_KEYS, "kernel")
    if "measure" in doc:
        spec = _check_spec(doc["measure"], _MEASURE_KEYS, "measure")
        if spec["type"] == "transformed":
            _check_spec(spec.get("base", {}), _MEASURE_KEYS, "measure")
    return doc


def _parse_kv(tokens, what, converters):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"--{what} expects key=value tokens, got {tok!r}")
        key, value = tok.split("=", 1)
        if key not in converters:
            raise UsageError(f"--{what} does not accept {key!r}")
        try:
            out[key] = converters[key](value)
        except ValueError:
            raise UsageError(f"--{what} {key}={value!r} is not a valid value")
    return out


def _mass_list(text: str):
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _effective_config(args, command: str) -> dict:
    """Merge flags > CRYSTALSTAT_SEED (seed only) > config file > defaults."""
    cfg = _load_config(args.config) if args.config else {}
    eff = {}

    if getattr(args, "nn", None) is not None:
        kv = _parse_kv(args.nn, "nn", {"d": int, "n": int, "m": _mass_list})
        eff["kernel"] = {"type": "nn", "d": kv.get("d", 1), "n": kv.get("n", 1),
                         "mass": kv.get("m", 1.0)}
    elif getattr(args, "random", None) is not None:
        kv = _parse_kv(args.random, "random",
                       {"d": int, "n": int, "range": int, "seed": int})
        eff["kernel"] = {"type": "random", "d": kv.get("d", 1), "n": kv.get("n", 1),
                         "range": kv.get("range", 2), "seed": kv.get("seed", 0)}
    elif getattr(args, "kernel_file", None):
        eff["kernel"] = {"type": "file", "path": args.kernel_file}
    elif "kernel" in cfg:
        eff["kernel"] = cfg["kernel"]
    else:
        raise UsageError("no kernel given (use --nn/--random/--kernel-file or config)")

    eff["L"] = args.L if args.L is not None else int(cfg.get("L", 256))
    eff["grid_L"] = (args.grid_L if args.grid_L is not None
                     else int(cfg.get("grid_L", eff["L"])))

    measure = None
    if getattr(args, "triangular", None) is not None:
        kv = _parse_kv(args.triangular, "triangular",
                       {"nu0": int, "T0": float, "T1": float})
        measure = {"type": "triangular", "nu0": kv.get("nu0", 2),
                   "T0": kv.get("T0", 1.0), "T1": kv.get("T1", 1.0)}
    elif getattr(args, "white", None) is not None:
        kv = _parse_kv(args.white, "white", {"T0": float, "T1": float})
        measure = {"type": "white", "T0": kv.get("T0", 1.0), "T1": kv.get("T1", 1.0)}
    elif getattr(args, "measure_file", None):
        measure = {"type": "file", "path": args.measure_file}
    elif "measure" in cfg:
        measure = cfg["measure"]
    if measure is not None and getattr(args, "transform", None) is not None:
        kv = _parse_kv(args.transform, "transform", {"a0": float, "a1": float})
        measure = {"type": "transformed", "base": measure,
                   "a0": kv.get("a0", 1.0), "a1": kv.get("a1", 1.0)}
    eff["measure"] = measure

    if getattr(args, "t", None) is not None:
        eff["times"] = [float(args.t)]
    elif getattr(args, "times", None):
        eff["times"] = [float(t) for t in args.times]
    elif "times" in cfg:
        eff["times"] = [float(t) for t in cfg["times"]]
    else:
        eff["times"] = None

    eff["ensemble"] = (args.ensemble if getattr(args, "ensemble", None) is not None
                       else int(cfg.get("ensemble", 10000)))

    if args.seed is not None:
        eff["seed"] = int(args.seed)
    elif os.environ.get("CRYSTALSTAT_SEED"):
        try:
            eff["seed"] = int(os.environ["CRYSTALSTAT_SEED"])
        except ValueError:
            raise UsageError("CRYSTALSTAT_SEED must be an integer")
    else:
        eff["seed"] = int(cfg.get("seed", 0))

    thr = dict(cfg.get("thresholds", {}))
    eff["thresholds"] = {
        "delta_cross": (args.delta_cross if args.delta_cross is not None
                        else float(thr.get("delta_cross", DELTA_CROSS))),
        "delta_hess": (args.delta_hess if args.delta_hess is not None
                       else float(thr.get("delta_hess", DELTA_HESS))),
        "delta_null": (args.delta_null if args.delta_null is not None
                       else float(thr.get("delta_null", DELTA_NULL))),
        "eps": (args.eps if getattr(args, "eps", None) is not None
                else float(thr.get("eps", 0.0))),
    }
    eff["output"] = args.output if args.output is not None else cfg.get("output", "out")
    eff["command"] = command
    return eff


def _build_kernel(spec: dict):
    _check_spec(spec, _KERNEL_KEYS, "kernel")
    if spec["type"] == "nn":
        return build_nn_kernel(int(spec.get("d", 1)), int(spec.get("n", 1)),
                               spec.get("mass", 1.0))
    if spec["type"] == "random":
        return random_finite_range_kernel(int(spec.get("d", 1)), int(spec.get("n", 1)),
                                          int(spec.get("range", 2)),
                                          int(spec.get("seed", 0)))
    try:
        text = Path(spec["path"]).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read kernel file: {exc}")
    return kernel_from_json(text)


def _build_measure(spec, kernel, L):
    """Returns (density, transform) where transform is None or (a0, a1)."""
    if spec is None:
        raise UsageError("this command needs an initial measure "
                         "(--triangular/--white/--measure-file or config)")
    _check_spec(spec, _MEASURE_KEYS, "measure")
    kind = spec["type"]
    if kind == "transformed":
        density, _ = _build_measure(spec["base"], kernel, L)
        return density, (float(spec.get("a0", 1.0)), float(spec.get("a1", 1.0)))
    if kind == "triangular":
        if kernel.n != 1:
            raise UsageError("triangular measure is scalar; kernel has n > 1")
        return triangular_density(int(spec.get("nu0", 2)), kernel.d,
                                  float(spec.get("T0", 1.0)),
                                  float(spec.get("T1", 1.0)), L), None
    if kind == "white":
        return white_noise_density(float(spec.get("T0", 1.0)),
                                   float(spec.get("T1", 1.0)),
                                   kernel.n, kernel.d, L), None
    try:
        doc = json.loads(Path(spec["path"]).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read measure file: {exc}")
    density = density_from_jsonable(doc)
    if density.L != L or density.d != kernel.d or density.n != kernel.n:
        raise UsageError("measure file does not match the lattice/kernel shape")
    return density, None


# ---------------------------------------------------------------- output

def _zkey(z) -> str:
    return ",".join(str(int(c)) for c in z)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _fmt(x) -> str:
    return "%.17g" % float(x)


def _write_manifest(outdir: Path, eff: dict) -> None:
    from . import __version__

    _write_json(outdir / "manifest.json", {
        "package": {"name": "crystalstat", "version": __version__},
        "config": {k: v for k, v in eff.items() if k != "command"},
        "command": eff["command"],
    })


def _build_grid(kernel, L, delta_cross):
    """Gate E1-E3 before the eigensolver so kernel defects exit with code 2."""
    reports = check_E123(kernel)
    if any(r.verdict == "fail" for r in reports):
        raise ConditionFailure(reports)
    return dispersion_grid(kernel, L, delta_cross)


def _condition_gate(kernel, grid=None, need_spectral=False,
                    allow_degenerate=False, extra_reports=()):
    reports = check_E123(kernel)
    if grid is not None:
        reports += check_E4_E5(grid)
    reports += list(extra_reports)
    hard = [r for r in reports if r.verdict == "fail" and r.condition in ("E1", "E2", "E3")]
    soft = [r for r in reports if r.verdict == "fail" and r.condition not in ("E1", "E2", "E3")]
    if hard or (need_spectral and soft and not allow_degenerate):
        raise ConditionFailure(reports)
    return reports


def _axis_offsets(d: int, radius: int = 2):
    return [(k,) + (0,) * (d - 1) for k in range(radius + 1)]


def _power_fit(times, values):
    """Least-squares fit of log|value| against log t; returns slope/intercept/r2."""
    pts = [(t, abs(v)) for t, v in zip(times, values) if t > 0 and abs(v) > 0]
    if len(pts) < 2:
        return {"slope": 0.0, "intercept": 0.0, "r2": 0.0, "points": len(pts)}
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2,
            "points": len(pts)}


# ---------------------------------------------------------------- subcommands

def _cmd_dispersion(args) -> int:
    eff = _effective_config(args, "dispersion")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    grid = _build_grid(kernel, eff["grid_L"], thr["delta_cross"])
    reports = _condition_gate(kernel, grid, need_spectral=False)
    scan = critical_set_scan(grid, thr["delta_cross"], thr["delta_hess"],
                             thr["delta_null"])
    with open(outdir / "dispersion.csv", "w") as fh:
        write_dispersion_csv(grid, scan, fh)
    _write_json(outdir / "conditions.json", [r.to_jsonable() for r in reports])
    _write_manifest(outdir, eff)
    print(f"dispersion: L={grid.L} branches={grid.n} "
          f"omega_max={grid.omega_max:.6g} -> {outdir}")
    return EXIT_OK


def _cmd_critical(args) -> int:
    eff = _effective_config(args, "critical")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    grid = _build_grid(kernel, eff["grid_L"], thr["delta_cross"])
    reports = _condition_gate(kernel, grid, need_spectral=False)
    scan = critical_set_scan(grid, thr["delta_cross"], thr["delta_hess"],
                             thr["delta_null"])
    _write_json(outdir / "critical.json", scan.to_jsonable())
    _write_json(outdir / "conditions.json", [r.to_jsonable() for r in reports])
    _write_manifest(outdir, eff)
    fr = scan.fractions()
    print(f"critical: combined fraction {fr['combined']:.6g} -> {outdir}")
    return EXIT_OK


def _cmd_green(args) -> int:
    eff = _effective_config(args, "green")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    _condition_gate(kernel)
    times = eff["times"] or [5.0, 10.0, 20.0, 40.0]
    thr = eff["thresholds"]
    L = eff["L"]
    radius = args.dump_radius
    if radius < 0 or 2 * radius + 1 > L:
        raise UsageError("--dump-radius must fit inside the lattice window")
    sups = []
    with open(outdir / "green.csv", "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x{a + 1}" for a in range(kernel.d)]
                        + ["row", "col", "value"])
        for t in times:
            if thr["eps"] > 0:
                G = truncated_green(kernel, t, L, thr["eps"],
                                    delta_cross=thr["delta_cross"],
                                    delta_hess=thr["delta_hess"],
                                    delta_null=thr["delta_null"])
            else:
                G = green_function(kernel, t, L)
            sups.append(float(np.max(np.abs(G))))
            for x in np.ndindex(*((2 * radius + 1,) * kernel.d)):
                off = tuple(int(c) - radius for c in x)
                idx = tuple(c % L for c in off)
                block = G[idx]
                for r in range(block.shape[0]):
                    for c in range(block.shape[1]):
                        writer.writerow([_fmt(t)] + [str(c2) for c2 in off]
                                        + [str(r), str(c), _fmt(block[r, c])])
    fit = _power_fit(times, sups)
    _write_json(outdir / "green_fit.json",
                {"times": times, "sup_abs": sups, "fit": fit,
                 "eps": thr["eps"]})
    _write_manifest(outdir, eff)
    print(f"green: sup|G| fit slope {fit['slope']:.4f} (r2 {fit['r2']:.4f}) -> {outdir}")
    return EXIT_OK


def _cmd_evolve(args) -> int:
    eff = _effective_config(args, "evolve")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    _condition_gate(kernel, grid, need_spectral=True,
                    allow_degenerate=args.allow_degenerate)
    q0, transform = _build_measure(eff["measure"], kernel, L)
    if transform is not None:
        raise UsageError("evolve transports densities; transformed measures "
                         "have no closed-form density")
    times = eff["times"] or [0.0, 10.0, 50.0]
    offsets = _axis_offsets(kernel.d)
    es = check_ES(grid, q0, thr["delta_null"])
    qinf = limit_density(q0, grid, es_report=es, delta_null=thr["delta_null"])
    tab_inf = covariance_from_density(qinf, offsets)
    n2 = 2 * kernel.n
    with open(outdir / "convergence.csv", "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"z{a + 1}" for a in range(kernel.d)]
                        + ["i", "j", "k", "l", "q_t", "q_inf", "abs_diff"])
        for t in times:
            qt = evolve_density(q0, grid, t)
            tab_t = covariance_from_density(qt, offsets)
            for z in offsets:
                Mt = tab_t.matrix(z)
                Mi = tab_inf.matrix(z)
                for a in range(n2):
                    for b in range(n2):
                        i, k = divmod(a, kernel.n)
                        j, l = divmod(b, kernel.n)
                        writer.writerow(
                            [_fmt(t)] + [str(c) for c in z]
                            + [str(i), str(j), str(k), str(l),
                               _fmt(Mt[a, b]), _fmt(Mi[a, b]),
                               _fmt(abs(Mt[a, b] - Mi[a, b]))])
    _write_json(outdir / "limit.json", {
        "excluded_fraction": qinf.excluded_fraction,
        "es": es.to_jsonable(),
    })
    _write_manifest(outdir, eff)
    print(f"evolve: wrote convergence table for t={times} -> {outdir}")
    return EXIT_OK


def _compare_to_theory(summary, theory_table, floor_scale):
    """3 sigma gates per offset entry; returns (rows, all_pass)."""
    rows = []
    ok = True
    for z in summary.offsets:
        emp = summary.mean[z]
        se = summary.se[z]
        th = theory_table.matrix(z)
        gap = np.abs(emp - th)
        bound = 3.0 * se + 1e-10 * floor_scale
        entry_ok = bool(np.all(gap <= bound))
        ok = ok and entry_ok
        rows.append({
            "z": _zkey(z),
            "empirical": emp,
            "se": se,
            "theory": th,
            "max_gap": float(gap.max()),
            "max_gap_over_bound": float(np.max(gap / np.maximum(bound, 1e-300))),
            "pass": entry_ok,
        })
    return rows, ok


def _cmd_ensemble(args) -> int:
    eff = _effective_config(args, "ensemble")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    _condition_gate(kernel, grid, need_spectral=False)
    q0, transform = _build_measure(eff["measure"], kernel, L)
    times = eff["times"] or [50.0]
    t = times[-1]
    states = gaussian_ensemble(q0, eff["ensemble"], eff["seed"])
    if transform is not None:
        states = [nonlinear_transform_sample(s, *transform) for s in states]
    evolved = evolve_ensemble(states, kernel, t, grid=grid)
    offsets = _axis_offsets(kernel.d)
    summary = empirical_covariance(evolved, offsets)
    report = {"t": t, "count": summary.count, "seed": eff["seed"]}
    if transform is None:
        qt = evolve_density(q0, grid, t)
        tab = covariance_from_density(qt, offsets)
        scale = 1.0 + max(float(np.max(np.abs(tab.matrix(z)))) for z in offsets)
        rows, ok = _compare_to_theory(summary, tab, scale)
        report["offsets"] = rows
        report["all_pass"] = ok
    else:
        report["offsets"] = [
            {"z": _zkey(z), "empirical": summary.mean[z], "se": summary.se[z]}
            for z in offsets
        ]
        report["all_pass"] = True
    _write_json(outdir / "ensemble.json", report)
    _write_manifest(outdir, eff)
    print(f"ensemble: {summary.count} samples at t={t}, "
          f"{'all 3-sigma gates pass' if report['all_pass'] else 'GATE FAILURE'} -> {outdir}")
    if not report["all_pass"]:
        raise GateFailure("ensemble vs transported density", report)
    return EXIT_OK


def _cmd_limit(args) -> int:
    eff = _effective_config(args, "limit")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    q0, transform = _build_measure(eff["measure"], kernel, L)
    if transform is not None:
        raise UsageError("limit needs a Gaussian measure with an explicit density")
    es = check_ES(grid, q0, thr["delta_null"])
    _condition_gate(kernel, grid, need_spectral=True,
                    allow_degenerate=args.allow_degenerate, extra_reports=[es])
    qinf = limit_density(q0, grid, es_report=es, delta_null=thr["delta_null"])
    offsets = _axis_offsets(kernel.d)
    tab = covariance_from_density(qinf, offsets)
    report = {
        "excluded_fraction": qinf.excluded_fraction,
        "es": es.to_jsonable(),
        "covariance": {_zkey(z): tab.matrix(z) for z in offsets},
    }
    _write_json(outdir / "limit.json", report)
    if args.dump_density:
        _write_json(outdir / "density.json", density_to_jsonable(qinf))
    _write_manifest(outdir, eff)
    print(f"limit: excluded fraction {qinf.excluded_fraction:.6g} -> {outdir}")
    return EXIT_OK


def _cmd_gibbs(args) -> int:
    eff = _effective_config(args, "gibbs")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    _condition_gate(kernel, grid, need_spectral=True,
                    allow_degenerate=args.allow_degenerate)
    T1 = args.T1
    q0 = white_noise_density(0.0, T1, kernel.n, kernel.d, L)
    times = eff["times"] or [50.0]
    t = times[-1]
    states = gaussian_ensemble(q0, eff["ensemble"], eff["seed"])
    evolved = evolve_ensemble(states, kernel, t, grid=grid)
    offsets = _axis_offsets(kernel.d)
    summary = empirical_covariance(evolved, offsets)
    qg = gibbs_density(T1, grid, thr["delta_null"])
    tab = covariance_from_density(qg, offsets)
    scale = 1.0 + max(float(np.max(np.abs(tab.matrix(z)))) for z in offsets)
    rows, ok = _compare_to_theory(summary, tab, scale)
    report = {"t": t, "T1": T1, "count": summary.count, "seed": eff["seed"],
              "offsets": rows, "all_pass": ok,
              "excluded_fraction": qg.excluded_fraction}
    _write_json(outdir / "gibbs.json", report)
    _write_manifest(outdir, eff)
    print(f"gibbs: {summary.count} samples at t={t} vs equilibrium, "
          f"{'all 3-sigma gates pass' if ok else 'GATE FAILURE'} -> {outdir}")
    if not ok:
        raise GateFailure("empirical covariance vs Gibbs density", report)
    return EXIT_OK


def _cmd_clt(args) -> int:
    eff = _effective_config(args, "clt")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    if kernel.n != 1:
        raise UsageError("the clt pipeline is scalar (n = 1)")
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    _condition_gate(kernel, grid, need_spectral=True,
                    allow_degenerate=args.allow_degenerate)

    measure = eff["measure"] or {
        "type": "transformed",
        "base": {"type": "triangular", "nu0": 2, "T0": 1.0, "T1": 1.0},
        "a0": 1.0, "a1": 1.0,
    }
    _check_spec(measure, _MEASURE_KEYS, "measure")
    base_spec = measure.get("base") if measure["type"] == "transformed" else None
    if not isinstance(base_spec, dict) or base_spec.get("type") != "triangular":
        raise UsageError("clt needs a transformed triangular measure")
    nu0 = int(base_spec.get("nu0", 2))
    base, transform = _build_measure(measure, kernel, L)
    times = eff["times"] or [50.0]
    t = times[-1]

    states = gaussian_ensemble(base, eff["ensemble"], eff["seed"])
    states = [nonlinear_transform_sample(s, *transform) for s in states]
    psi = TestField.delta(kernel.d, kernel.n, component=args.component)

    samples0 = linear_functional_samples(states, psi)
    gauss0 = gaussianity_report(samples0)
    platykurtic = (not gauss0["degenerate"]) and gauss0["z_kurtosis"] < -4.0

    # support of the transformed field is inside the base support
    offsets = [z for z in np.ndindex(*((2 * nu0 - 1,) * kernel.d))]
    offsets = [tuple(int(c) - (nu0 - 1) for c in z) for z in offsets]
    emp = empirical_covariance(states, offsets)
    q0 = density_from_covariance({z: emp.mean[z] for z in emp.offsets}, L,
                                 provenance="empirical")
    es = check_ES(grid, q0, thr["delta_null"])
    qinf = limit_density(q0, grid, es_report=es, delta_null=thr["delta_null"])

    evolved = evolve_ensemble(states, kernel, t, grid=grid)
    samples_t = linear_functional_samples(evolved, psi)
    gauss_t = gaussianity_report(samples_t)
    char = characteristic_functional(samples_t, qinf, psi)

    sweep_ok = all(row["gap"] <= 3.0 * row["se"] + 0.02 for row in char["sweep"])
    moments_ok = (not gauss_t["degenerate"]) and \
        abs(gauss_t["z_skewness"]) < 4.0 and abs(gauss_t["z_kurtosis"]) < 4.0
    report = {
        "t": t, "count": len(states), "seed": eff["seed"],
        "component": args.component,
        "initial_moments": gauss0,
        "initial_platykurtic": platykurtic,
        "evolved_moments": gauss_t,
        "characteristic": char,
        "gates": {"platykurtic_start": platykurtic,
                  "gaussian_moments_at_t": moments_ok,
                  "characteristic_sweep": sweep_ok},
        "all_pass": platykurtic and moments_ok and sweep_ok,
    }
    _write_json(outdir / "clt.json", report)
    _write_manifest(outdir, eff)
    print(f"clt: start kurtosis z={gauss0.get('z_kurtosis', 0.0):.2f}, "
          f"t={t} moments |z|<4: {moments_ok}, sweep: {sweep_ok} -> {outdir}")
    if not report["all_pass"]:
        raise GateFailure("central limit gates", report)
    return EXIT_OK


def _cmd_mixing(args) -> int:
    eff = _effective_config(args, "mixing")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    kernel = _build_kernel(eff["kernel"])
    thr = eff["thresholds"]
    L = eff["L"]
    grid = _build_grid(kernel, L, thr["delta_cross"])
    _condition_gate(kernel, grid, need_spectral=True,
                    allow_degenerate=args.allow_degenerate)
    measure = eff["measure"] or {"type": "white", "T0": 1.0, "T1": 1.0}
    q0, transform = _build_measure(measure, kernel, L)
    if transform is not None:
        raise UsageError("mixing needs a Gaussian measure with an explicit density")
    es = check_ES(grid, q0, thr["delta_null"])
    qinf = limit_density(q0, grid, es_report=es, delta_null=thr["delta_null"])
    psi = TestField.delta(kernel.d, kernel.n, component=args.component)
    times = eff["times"] or [0.0, 10.0, 40.0, 160.0]
    values = [mixing_integral(qinf, grid, psi, psi, t) for t in times]
    fit = _power_fit(times, values)
    _write_json(outdir / "mixing.json", {
        "times": times, "values": values, "fit": fit,
        "component": args.component,
        "value_at_0": quadratic_form(qinf, psi),
    })
    _write_manifest(outdir, eff)
    print(f"mixing: fit slope {fit['slope']:.4f} over t={times} -> {outdir}")
    return EXIT_OK


def _cmd_report(args) -> int:
    eff = _effective_config(args, "report")
    outdir = Path(eff["output"])
    outdir.mkdir(parents=True, exist_ok=True)
    stages = {}
    worst = EXIT_OK
    for name, fn in (("dispersion", _cmd_dispersion), ("critical", _cmd_critical),
                     ("limit", _cmd_limit), ("mixing", _cmd_mixing)):
        sub = argparse.Namespace(**vars(args))
        sub.output = str(outdir / name)
        sub.component = getattr(args, "component", 0)
        sub.dump_density = getattr(args, "dump_density", False)
        if (eff["measure"] is None and sub.triangular is None
                and sub.white is None and not sub.measure_file):
            sub.white = ["T0=1.0", "T1=1.0"]
        try:
            code = fn(sub)
        except ConditionFailure as exc:
            (outdir / name).mkdir(parents=True, exist_ok=True)
            _write_json(outdir / name / "conditions.json",
                        [r.to_jsonable() for r in exc.reports])
            code = EXIT_CONDITION
        except GateFailure:
            code = EXIT_GATE
        except UsageError as exc:
            print(f"{name}: usage error: {exc}", file=sys.stderr)
            code = EXIT_USAGE
        stages[name] = code
        worst = max(worst, code)
    _write_json(outdir / "summary.json", {"stages": stages, "exit": worst})
    _write_manifest(outdir, eff)
    print(f"report: stages {stages} -> {outdir}")
    return worst


# ---------------------------------------------------------------- wiring

def _add_common(p: _Parser, with_measure=True):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--nn", nargs="+", metavar="KEY=VAL",
                   help="nearest-neighbour kernel, keys d n m (m may be a comma list)")
    p.add_argument("--random", nargs="+", metavar="KEY=VAL",
                   help="random finite-range kernel, keys d n range seed")
    p.add_argument("--kernel-file", help="kernel JSON file")
    p.add_argument("--L", type=int, help="lattice resolution per axis")
    p.add_argument("--grid-L", type=int, dest="grid_L",
                   help="dispersion grid resolution (defaults to L)")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--ensemble", type=int, help="sample count")
    p.add_argument("--times", nargs="+", type=float, help="time stamps")
    p.add_argument("--t", type=float, help="single time stamp (shorthand)")
    p.add_argument("--delta-cross", type=float, dest="delta_cross")
    p.add_argument("--delta-hess", type=float, dest="delta_hess")
    p.add_argument("--delta-null", type=float, dest="delta_null")
    p.add_argument("--eps", type=float, help="critical-set cutoff width")
    p.add_argument("--output", help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads; results do not depend on this")
    p.add_argument("--allow-degenerate", action="store_true",
                   help="proceed despite failed E4/E5 reports")
    if with_measure:
        p.add_argument("--triangular", nargs="+", metavar="KEY=VAL",
                       help="triangular measure, keys nu0 T0 T1")
        p.add_argument("--white", nargs="+", metavar="KEY=VAL",
                       help="white-noise measure, keys T0 T1")
        p.add_argument("--measure-file", help="measure density JSON file")
        p.add_argument("--transform", nargs="+", metavar="KEY=VAL",
                       help="wrap the measure in a bounded transform, keys a0 a1")


def _build_parser() -> _Parser:
    parser = _Parser(prog="crystalstat",
                     description="harmonic-crystal convergence experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, measure in (
        ("dispersion", _cmd_dispersion, False),
        ("critical", _cmd_critical, False),
        ("green", _cmd_green, False),
        ("evolve", _cmd_evolve, True),
        ("ensemble", _cmd_ensemble, True),
        ("limit", _cmd_limit, True),
        ("gibbs", _cmd_gibbs, False),
        ("clt", _cmd_clt, True),
        ("mixing", _cmd_mixing, True),
        ("report", _cmd_report, True),
    ):
        p = sub.add_parser(name)
        _add_common(p, with_measure=measure)
        p.set_defaults(fn=fn)
        if name == "green":
            p.add_argument("--dump-radius", type=int, default=8, dest="dump_radius",
                           help="dump |x| up to this Chebyshev radius")
        if name == "gibbs":
            p.add_argument("--T1", type=float, default=1.0,
                           help="equilibrium temperature")
        if name in ("clt", "mixing"):
            p.add_argument("--component", type=int, default=0,
                           help="delta test-field component (0..2n-1)")
        if name == "limit":
            p.add_argument("--dump-density", action="store_true", dest="dump_density",
                           help="also serialize the full limit density")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConditionFailure as exc:
        print(json.dumps(_plain([r.to_jsonable() for r in exc.reports]),
                         sort_keys=True, indent=2))
        print(str(exc), file=sys.stderr)
        return EXIT_CONDITION
    except GateFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_GATE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
