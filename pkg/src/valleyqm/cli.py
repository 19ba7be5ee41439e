"""Scenario runner: ``valleyqm run <scenario> [options]``.

Each scenario writes CSV tables and a ``summary.json`` into ``<out>/<scenario>/``
and exits with status 0 only if every per-point tolerance is met.  Float
columns are printed at fixed precision and rows are sorted, so identical
configurations give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np

from . import __version__
from .errors import MissingArtifact, ValleyError
from .model import DEFAULT_PRECISION, ModelParams, as_fraction
from .series import DEFAULT_WINDOW, cached_series, extract_A, predicted_A, ratio_diagnostic

SCENARIOS = ("case_a", "case_b", "case_c", "case_d", "fig3", "fig4", "valley_profile", "custom")
PLOT_KINDS = ("fig3", "fig4", "sr_profile")

# non-integer probes added to the thinned case_a grid, where A = 0 at every integer eps > 0
CASE_A_PROBES = ("2/5", "13/5", "21/5", "29/5", "37/5", "49/5")

DEFAULT_TOLERANCES = {
    "A_rel": 0.005,
    "c_rel": 0.005,
    "fig4_last": 0.20,
    "valley_large_R": 1e-3,
    "valley_small_R": 0.05,
    "jacobian": 0.02,
    "tail": 0.01,
    "kink_action": 1e-4,
}


def _frange(start: Fraction, stop: Fraction, step: Fraction) -> list:
    out, x = [], start
    while x <= stop:
        out.append(x)
        x += step
    return out


@dataclass
class Scenario:
    name: str
    epsilons: list = field(default_factory=list)
    Ns: list = field(default_factory=lambda: [0])
    side: str = "minus"
    g2s: list = field(default_factory=list)
    M: int = 200
    window: tuple | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    out: str = "results"
    precision: int = DEFAULT_PRECISION
    full: bool = False
    workers: int = 1
    cache: str | None = None
    T: float = 40.0
    grid_size: int = 4001

    def fit_window(self) -> tuple:
        if self.window is not None:
            return tuple(self.window)
        lo, hi = DEFAULT_WINDOW
        if self.M >= hi:
            return (lo, hi)
        return (self.M - self.M // 4, self.M)


def scenario_grid(name: str, full: bool = False) -> dict:
    """Parameter grid of a named scenario; thinned 5x unless ``full``."""
    f = Fraction
    if name in ("case_a", "fig3"):
        if full:
            eps = _frange(f(0), f(10), f(1, 5))
        else:
            eps = sorted(set(_frange(f(0), f(10), f(1))) | {f(p) for p in CASE_A_PROBES})
        return {"epsilons": eps, "Ns": [0], "side": "minus"}
    if name == "case_b":
        eps = _frange(f(0), f(20), f(1, 5) if full else f(1))
        return {"epsilons": eps, "Ns": [0], "side": "plus",
                "tolerances": {"A_rel": 0.15}}
    if name == "case_c":
        eps = _frange(f(0), f(13, 2), f(1, 2) if full else f(5, 2))
        return {"epsilons": eps, "Ns": [3], "side": "plus"}
    if name == "case_d":
        return {"epsilons": [f(5, 2)], "Ns": [1, 2, 3, 4, 5, 6], "side": "minus"}
    if name == "fig4":
        g2s = [0.1, 0.08, 0.065, 0.05, 0.04, 0.03, 0.025, 0.02] if full else [0.08, 0.05, 0.03]
        return {"epsilons": [f(2)], "Ns": [0, 1], "side": "minus", "g2s": g2s}
    if name == "valley_profile":
        return {"epsilons": [f(0)], "Ns": [], "side": "plus"}
    if name == "custom":
        return {}
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"config file {path} not found")
    with path.open(encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def build_scenario(name: str | None, config: dict | None = None, **overrides) -> Scenario:
    """Scenario from defaults, then the config file, then command-line overrides."""
    config = dict(config or {})
    name = name or config.get("scenario")
    if name is None:
        raise ValueError("no scenario given")
    full = overrides.get("full") or config.get("full", False)
    sc = Scenario(name=name, full=bool(full))
    grid = scenario_grid(name, sc.full)
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(grid.pop("tolerances", {}))
    tol.update(config.get("tolerances", {}))
    for key, value in grid.items():
        setattr(sc, key, value)
    for key in ("epsilons", "Ns", "side", "g2s", "M", "window", "out", "precision", "workers",
                "cache", "T", "grid_size"):
        if key in config:
            setattr(sc, key, config[key])
    for key, value in overrides.items():
        if value is not None and key != "full":
            setattr(sc, key, value)
    sc.tolerances = tol
    sc.epsilons = [as_fraction(e) for e in sc.epsilons]
    sc.Ns = [int(n) for n in sc.Ns]
    sc.g2s = [float(g) for g in sc.g2s]
    if sc.window is not None:
        sc.window = tuple(int(w) for w in sc.window)
    if name == "custom" and not sc.epsilons and not sc.g2s:
        raise ValueError("custom scenario needs 'epsilons' (and optionally 'Ns', 'side', 'M')")
    return sc


# --- formatting --------------------------------------------------------------

def _num(x, digits: int = 12) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else x
    if mpmath.isnan(x):
        return "nan"
    if x == 0:
        return "0"
    return mpmath.nstr(x, digits, min_fixed=-4, max_fixed=6)


def _frac(e: Fraction) -> str:
    return str(e.numerator) if e.denominator == 1 else f"{e.numerator}/{e.denominator}"


def _write_csv(path: Path, header: list, rows: list, comment: str | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


# --- series scenarios ----------------------------------------------------------

def _series_point(job):
    eps, N, side, M, window, cache, tol = job
    s = cached_series(eps, N, side, M, cache_dir=cache)
    fit = ratio_diagnostic(s, window)
    est = extract_A(s, window, max_order=min(4, (window[1] - window[0]) // 3))
    pred = predicted_A(eps, N, side)
    row = {"epsilon": _frac(eps), "N": N, "side": side, "M": M,
           "A_fit": _num(est.value), "A_err": _num(est.error, 4), "A_theory": _num(pred),
           "digits": est.digits}
    ok = True
    if pred == 0:
        row["A_rel_err"] = ""
        row["A_check"] = "noise_floor"
        ok &= bool(est.below_noise_floor())
    else:
        rel = est.rel_error
        row["A_rel_err"] = _num(rel, 4)
        row["A_check"] = "relative"
        ok &= bool(rel <= tol["A_rel"])
    if fit.applicable:
        row["c_hat"] = _num(fit.c_hat, 10)
        row["c_expected"] = _num(fit.expected, 10)
        err = abs(fit.c_hat - fit.expected) / max(1.0, abs(fit.expected))
        row["c_rel_err"] = _num(err, 4)
        ok &= bool(err <= tol["c_rel"])
    else:
        row["c_hat"] = row["c_expected"] = row["c_rel_err"] = ""
    row["pass"] = "yes" if ok else "no"
    return row


SERIES_COLUMNS = ["epsilon", "N", "side", "M", "A_fit", "A_err", "A_theory", "A_rel_err",
                  "A_check", "digits", "c_hat", "c_expected", "c_rel_err", "pass"]


def _run_series(sc: Scenario, outdir: Path) -> tuple[bool, dict]:
    window = sc.fit_window()
    jobs = [(e, N, sc.side, sc.M, window, sc.cache, sc.tolerances) for e in sc.epsilons for N in sc.Ns]
    if sc.workers > 1:
        with ProcessPoolExecutor(max_workers=sc.workers) as pool:
            rows = list(pool.map(_series_point, jobs))
    else:
        rows = [_series_point(j) for j in jobs]
    rows.sort(key=lambda r: (Fraction(r["epsilon"]), r["N"]))
    _write_csv(outdir / "points.csv", SERIES_COLUMNS, [[r[c] for c in SERIES_COLUMNS] for r in rows])
    if sc.name == "fig3":
        _write_csv(outdir / "fig3.csv", ["epsilon", "A_extracted", "A_predicted", "rel_err", "A_err"],
                   [[r["epsilon"], r["A_fit"], r["A_theory"], r["A_rel_err"], r["A_err"]] for r in rows])
    failures = [r for r in rows if r["pass"] != "yes"]
    rels = [float(r["A_rel_err"]) for r in rows if r["A_rel_err"] not in ("", "nan")]
    crel = [float(r["c_rel_err"]) for r in rows if r["c_rel_err"]]
    summary = {
        "points": len(rows),
        "failures": len(failures),
        "max_A_rel_err": max(rels) if rels else None,
        "max_c_rel_err": max(crel) if crel else None,
        "window": list(window),
    }
    return not failures, {"summary": summary, "failed": failures}


# --- spectrum vs non-perturbative scenario ------------------------------------------

def _run_fig4(sc: Scenario, outdir: Path) -> tuple[bool, dict]:
    from .nonpert import np_level
    from .spectrum import eigenvalues_lowest

    eps = sc.epsilons[0]
    levels = sc.Ns
    rows = []
    ratios = {N: [] for N in levels}
    for g2 in sorted(sc.g2s, reverse=True):
        p = ModelParams.from_g2(g2, epsilon=eps, precision=sc.precision)
        res = eigenvalues_lowest(p, max(levels) + 2, 1e-12)
        for N in levels:
            zeroth = -float(eps) + N + 0.5
            d_num = res.eigenvalues[N] - zeroth
            d_val = float(mpmath.re(np_level(eps, N, "minus", p).shift))
            ratio = d_num / d_val
            ratios[N].append(ratio)
            rows.append([_num(g2, 6), N, _num(d_num), _num(d_val), _num(ratio, 8),
                         f"{max(res.convergence):.1e}"])
    _write_csv(outdir / "fig4.csv", ["g2", "level", "dE_num", "dE_valley", "ratio", "convergence"], rows)
    ok = True
    checks = {}
    for N, r in ratios.items():
        dev = [abs(x - 1) for x in r]
        monotone = all(b <= a for a, b in zip(dev, dev[1:]))
        last = dev[-1] <= sc.tolerances["fig4_last"]
        checks[f"level_{N}"] = {"monotone": monotone, "last_within_tol": last, "ratios": r}
        ok &= monotone and last and len(r) >= 3
    return ok, {"summary": checks, "failed": [k for k, v in checks.items()
                                              if not (v["monotone"] and v["last_within_tol"])]}


# --- valley scenario ---------------------------------------------------------------

def _run_valley(sc: Scenario, outdir: Path) -> tuple[bool, dict]:
    from .valley import (jacobian_endpoints, jacobian_profile, solve_valley_instanton,
                         tail_exponents, trace_valley, write_jacobian_csv, write_profile_csv)

    tol = sc.tolerances
    prof = trace_valley(T=sc.T, grid_size=sc.grid_size)
    jac = jacobian_profile(prof)
    write_profile_csv(prof, outdir / "sr_profile.csv")
    write_jacobian_csv(jac, outdir / "jacobian.csv")
    R, S = prof.R, prof.S
    big = (R >= 5) & (R <= 10)
    dev_large = float(np.max(np.abs(S[big] - (1 / 3 - 2 * np.exp(-R[big])))))
    dev_small = float(np.max(np.abs(S[:3] / (R[:3] ** 2 / 2) - 1)))
    f0, f1 = jacobian_endpoints(jac)
    kink = solve_valley_instanton(ModelParams(g=1.0), T=sc.T, grid_size=sc.grid_size)
    vi = solve_valley_instanton(ModelParams(g=0.1, epsilon=1), T=sc.T, grid_size=sc.grid_size)
    wl, wr = tail_exponents(vi)
    checks = {
        "S_large_R_max_dev": dev_large,
        "S_small_R_max_dev": dev_small,
        "f0": f0,
        "f_third": f1,
        "kink_action": kink.action,
        "tail_left": wl,
        "tail_right": wr,
        "lambda_monotone": prof.info["lambda_monotone"],
        "samples": len(prof.samples),
    }
    passed = {
        "S_large_R": dev_large <= tol["valley_large_R"],
        "S_small_R": dev_small <= tol["valley_small_R"],
        "f0": abs(f0 * 3 - 1) <= tol["jacobian"],
        "f_third": abs(f1 / np.sqrt(2 / 3) - 1) <= tol["jacobian"],
        "kink_action": abs(kink.action - 1 / 6) <= tol["kink_action"],
        "tail_left": abs(wl / 0.97 - 1) <= tol["tail"],
        "tail_right": abs(wr / 1.03 - 1) <= tol["tail"],
    }
    passed = {k: bool(v) for k, v in passed.items()}
    checks = {k: (round(v, 12) if isinstance(v, float) else v) for k, v in checks.items()}
    return all(passed.values()), {"summary": {"values": checks, "passed": passed},
                                  "failed": [k for k, v in passed.items() if not v]}


# --- entry points ----------------------------------------------------------------

def run(scenario: Scenario) -> int:
    """Execute a scenario and write its artifacts; returns the exit code."""
    outdir = Path(scenario.out) / scenario.name
    outdir.mkdir(parents=True, exist_ok=True)
    if scenario.name == "fig4":
        ok, report = _run_fig4(scenario, outdir)
    elif scenario.name == "valley_profile":
        ok, report = _run_valley(scenario, outdir)
    else:
        ok, report = _run_series(scenario, outdir)
    config = asdict(scenario)
    config["epsilons"] = [_frac(e) for e in scenario.epsilons]
    config.pop("out")
    config.pop("cache")
    config.pop("workers")
    _write_json(outdir / "summary.json", {"scenario": scenario.name, "version": __version__,
                                          "config": config, "passed": ok, **report})
    if not ok:
        print(f"{scenario.name}: FAILED", file=sys.stderr)
        for item in report["failed"]:
            if isinstance(item, dict):
                item = "  ".join(f"{k}={item[k]}" for k in
                                 ("epsilon", "N", "side", "A_rel_err", "A_check", "c_rel_err"))
            print(f"  {item}", file=sys.stderr)
    else:
        print(f"{scenario.name}: all tolerances met ({outdir})")
    return 0 if ok else 1


def emit_plotdata(artifact, kind: str, out=None) -> Path:
    """Plot-ready CSV from a scenario output directory (or its CSV artifact)."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}")
    artifact = Path(artifact)
    source = {"fig3": "fig3.csv", "fig4": "fig4.csv", "sr_profile": "sr_profile.csv"}[kind]
    path = artifact / source if artifact.is_dir() else artifact
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run the {kind} scenario first")
    out = Path(out) if out else path.with_name(f"{kind}_plot.csv")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if kind == "fig3":
        cols = ["epsilon", "A_fit", "A_theory"]
        data = [[r["epsilon"], r["A_extracted"], r["A_predicted"]] for r in rows]
        data.sort(key=lambda r: Fraction(r[0]))
    elif kind == "fig4":
        cols = ["g2", "level", "dE_num", "dE_valley"]
        data = [[r["g2"], r["level"], r["dE_num"], r["dE_valley"]] for r in rows]
        data.sort(key=lambda r: (int(r[1]), -float(r[0])))
    else:
        jpath = path.with_name("jacobian.csv")
        if not jpath.exists():
            raise MissingArtifact(f"{jpath} not found")
        with jpath.open(newline="", encoding="utf-8") as fh:
            jac = list(csv.DictReader(fh))
        jac_by_t = sorted(jac, key=lambda r: float(r["t"]))
        rows.sort(key=lambda r: float(r["R"]))
        cols = ["R", "S", "lambda", "t", "F", "f"]
        data = [[r["R"], r["S"], r["lambda"], j["t"], j["F"], j["f"]] for r, j in zip(rows, jac_by_t)]
    return _write_csv(out, cols, data, comment="columns: " + ", ".join(cols))


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="valleyqm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario", choices=SCENARIOS)
    r.add_argument("--config", help="JSON file with a 'scenario' key and overrides")
    r.add_argument("--full", action="store_true", help="full-resolution grids instead of thinned ones")
    r.add_argument("--out", help="output directory (default: results)")
    r.add_argument("--precision", type=int, help="working digits (default: $VALLEY_PRECISION or 50)")
    r.add_argument("--max-order", type=int, dest="M", help="highest perturbative order M")
    r.add_argument("--workers", type=int, help="worker processes for independent points")
    r.add_argument("--cache", help="directory caching exact series as CSV")
    p = sub.add_parser("plot", help="write plot-ready CSV from scenario output")
    p.add_argument("kind", choices=PLOT_KINDS)
    p.add_argument("artifact", help="scenario output directory or CSV file")
    p.add_argument("--out", help="destination CSV")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "plot":
            print(emit_plotdata(args.artifact, args.kind, args.out))
            return 0
        config = load_config(args.config) if args.config else {}
        if config.get("scenario") not in (None, args.scenario):
            raise ValueError(f"config is for scenario {config['scenario']!r}, not {args.scenario!r}")
        sc = build_scenario(args.scenario, config, full=args.full, out=args.out,
                            precision=args.precision, M=args.M, workers=args.workers,
                            cache=args.cache or os.environ.get("VALLEY_CACHE"))
        return run(sc)
    except (ValleyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
