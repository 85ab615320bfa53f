"""Command-line front end.

    pamlab COMMAND [-c CONFIG] [--set key=value ...] [--out DIR]

Commands: selftest, chaos, simulate, holder, bounds, report, acceptance.
Exit codes: 0 success, 1 invalid configuration or missing artifacts,
2 runtime failure, 3 selftest or acceptance threshold failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend, acceptance, chaos, config, holder, selftest, solver, store
from .chaos import ChaosEstimate, InitialCondition
from .errors import ConfigError, PamlabError, PersistenceError
from .noise import GridSpec, NoiseSpec

log = logging.getLogger("pamlab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3

CHAOS_COLUMNS = ("n", "t", "alpha0", "alpha", "variance", "stderr", "bound", "samples", "seed")
BOUNDS_COLUMNS = ("quantity", "spec", "n", "p", "t", "value")

SELFTEST_CSV = "selftest.csv"
CHAOS_CSV = "chaos.csv"
STATS_CSV = "stats.csv"
SIMULATE_JSON = "simulate_summary.json"
ENSEMBLE_DIR = "ensemble"
HOLDER_CSV = "holder_fit.csv"
HOLDER_JSON = "holder_summary.json"
BOUNDS_CSV = "bounds.csv"
ACCEPTANCE_CSV = "acceptance.csv"
REPORT_TXT = "report.txt"


def _out(cfg) -> Path:
    return store.ensure_dir(cfg["output"]["dir"])


def _spec_label(spec: NoiseSpec) -> str:
    ex = spec.exponents()
    return f"{ex.regime}:alpha0={ex.alpha0:g}:alpha={ex.alpha:g}"


def _sub_seed(master: int, *key) -> int:
    """Per-task integer seed derived from the master seed."""
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------- commands

def cmd_selftest(cfg) -> int:
    out = _out(cfg)
    results = selftest.run_all(quick=bool(cfg["selftest"]["quick"]))
    store.write_csv(out / SELFTEST_CSV, selftest.OracleResult.COLUMNS, [r.row() for r in results])
    print(format_selftest([r.row() for r in results]))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracles passed "
          f"({sum(r.seconds for r in results):.1f} s, backend {_backend.name()})")
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_chaos(cfg) -> int:
    out = _out(cfg)
    spec = NoiseSpec.from_dict(cfg["spec"])
    u0 = InitialCondition.from_dict(cfg["u0"])
    ch = cfg["chaos"]
    ests = []
    for j, t in enumerate(ch["times"]):
        for n in ch["levels"]:
            seed = _sub_seed(cfg["master_seed"], j, n)
            e = chaos.chaos_variance(n, t, spec, u0, ch["samples"], seed, ch["x"], ch["batch"],
                                     cfg["workers"])
            if e.n > 0 and e.rel_stderr > 0.1:
                log.warning("n=%d t=%g: relative stderr %.1f%% exceeds 10%%", n, t, 100 * e.rel_stderr)
            ests.append(e)
    c = chaos.fit_bound_constant(ests, spec) if ch["c"] == "fit" else float(ch["c"])
    if c > 0:
        for e in ests:
            e.bound_value = chaos._safe_bound(e.n, e.t, spec.exponents(), c)
    store.write_csv(out / CHAOS_CSV, CHAOS_COLUMNS, [_chaos_row(e) for e in ests])
    print(f"bound constant c = {c:.6g}")
    print(format_chaos([_chaos_row(e) for e in ests]))
    return EXIT_OK


def _chaos_row(e: ChaosEstimate):
    return (e.n, e.t, e.alpha0, e.alpha, e.variance, e.stderr, e.bound_value, e.samples, e.seed)


def cmd_simulate(cfg) -> int:
    out = _out(cfg)
    spec = NoiseSpec.from_dict(cfg["spec"])
    grid = GridSpec.from_dict(cfg["grid"])
    u0 = InitialCondition.from_dict(cfg["u0"])
    sim = cfg["simulate"]
    snaps = sim["snapshots"]
    if snaps == "holder":
        h = cfg["holder"]
        snaps = holder.lag_design(grid, h["k"], h["t_min"], h["h_min"], h["h_max"],
                                  tuple(h["diagonals"])).snapshot_times()
    t0 = time.perf_counter()
    ens = solver.run_ensemble(spec, grid, u0, sim["replicas"], cfg["master_seed"], snaps,
                              cfg["workers"], sim["batch"], out / ENSEMBLE_DIR, sim["scheme"])
    solver.write_stats_csv(ens, out / STATS_CSV)
    mc = solver.mean_check(ens)
    summary = {"replicas": ens.replicas, "snapshot_times": list(ens.snapshot_times),
               "scheme": ens.scheme, "mean_check_max_abs_z": mc.max_abs_z,
               "mean_check_max_abs_dev": mc.max_abs_dev, "mean_check_passed": mc.passed()}
    store.write_json(out / SIMULATE_JSON, summary)
    print(f"{ens.replicas} replicas, {len(ens.snapshot_times)} snapshots on N={grid.N} "
          f"({time.perf_counter() - t0:.1f} s); mean check max |z| = {mc.max_abs_z:.2f}")
    return EXIT_OK


def _holder_design(cfg, grid):
    h = cfg["holder"]
    return holder.lag_design(grid, h["k"], h["t_min"], h["h_min"], h["h_max"], tuple(h["diagonals"]))


def cmd_holder(cfg) -> int:
    out = _out(cfg)
    src = cfg["holder"]["ensemble"] or out / ENSEMBLE_DIR
    try:
        ens = solver.FieldEnsemble.load(src, mmap=True)
    except (OSError, PersistenceError) as exc:
        raise ConfigError(f"cannot load ensemble from {src}: {exc}", ["holder.ensemble"]) from exc
    design = _holder_design(cfg, ens.grid)
    missing = [t for t in design.snapshot_times()
               if not any(abs(t - s) <= 1e-9 * max(1.0, t) for s in ens.snapshot_times)]
    if missing:
        raise ConfigError(f"ensemble lacks snapshots {missing}; simulate with snapshots = \"holder\"",
                          ["holder.ensemble"])
    rep = holder.analyze(ens, design, cfg["holder"]["p"], cfg["workers"])
    for mode, tab in rep.tables.items():
        tab.to_csv(out / f"increments_{mode}.csv")
    holder.write_fits_csv([rep.fits[m] for m in holder.MODES], out / HOLDER_CSV)
    holder.write_gnuplot(rep, out / "gnuplot")
    s = rep.summary()
    s["design"] = design.to_dict()
    store.write_json(out / HOLDER_JSON, s)
    print(format_holder(s))
    for m in holder.MODES:
        f = rep.fits[m]
        if not f.reported:
            log.warning("%s fit has r2 %.4f <= %.2f and is not reported", m, f.r2, holder.R2_MIN)
    return EXIT_OK


def cmd_bounds(cfg) -> int:
    out = _out(cfg)
    b = cfg["bounds"]
    specs = [NoiseSpec.from_dict(s) for s in b["specs"]] if b["specs"] else [NoiseSpec.from_dict(cfg["spec"])]
    rows = []
    for spec in specs:
        lab = _spec_label(spec)
        ex = spec.exponents()
        B, _ = holder.predicted_region(spec)
        rows.append(("region_B", lab, "", "", "", B))
        for t in b["times"]:
            for n in b["levels"]:
                rows.append(("chaos_variance_bound", lab, n, "", t, chaos._safe_bound(n, t, ex, b["c"])))
            for p in b["p"]:
                try:
                    v = chaos.moment_bound(p, t, spec, b["C"], b["c"])
                except PamlabError:
                    v = float("nan")
                rows.append(("moment_bound", lab, "", p, t, v))
    store.write_csv(out / BOUNDS_CSV, BOUNDS_COLUMNS, rows)
    print(_table(BOUNDS_COLUMNS, rows))
    return EXIT_OK


def cmd_acceptance(cfg) -> int:
    out = _out(cfg)
    res = acceptance.run_all(cfg["acceptance"]["criteria"], echo=print)
    store.write_csv(out / ACCEPTANCE_CSV, acceptance.CriterionResult.COLUMNS, [r.row() for r in res])
    return EXIT_OK if all(r.passed for r in res) else EXIT_THRESHOLD


def cmd_report(cfg) -> int:
    out = Path(cfg["output"]["dir"])
    text = build_report(out)
    if text is None:
        raise ConfigError(f"no run artifacts found in {out}", ["output.dir"])
    (out / REPORT_TXT).write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"selftest": cmd_selftest, "chaos": cmd_chaos, "simulate": cmd_simulate,
            "holder": cmd_holder, "bounds": cmd_bounds, "report": cmd_report,
            "acceptance": cmd_acceptance}


# ---------------------------------------------------------------- formatting

def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def _table(columns, rows) -> str:
    cells = [[_cell(v) for v in r] for r in rows]
    width = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, width))]
    lines.append("  ".join("-" * w for w in width))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, width)) for r in cells]
    return "\n".join(lines)


def _f(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("nan")


def format_selftest(rows) -> str:
    rows = [(r[0], r[1], _f(r[2]), _f(r[3]), _f(r[4]), "ok" if str(r[5]) in ("1", "True") else "FAIL")
            for r in rows]
    return _table(("module", "oracle", "observed", "expected", "tolerance", "status"), rows)


def format_chaos(rows) -> str:
    out = []
    for r in rows:
        var, bound = _f(r[4]), _f(r[6])
        ratio = var / bound if bound > 0 else float("nan")
        rel = _f(r[5]) / var if var > 0 else float("nan")
        out.append((int(r[0]), _f(r[1]), var, _f(r[5]), rel, bound, ratio))
    return _table(("n", "t", "variance", "stderr", "rel_se", "bound", "var/bound"), out)


def format_holder(s: dict) -> str:
    def g(v):
        return "n/a" if v is None else f"{v:.4f}"
    lines = [f"abar0 = {g(s.get('abar0'))}, abar = {g(s.get('abar'))}, B = {g(s.get('B'))}, "
             f"2 abar0 + abar = {g(s.get('sum_rect'))} (rectangular fit)"]
    if s.get("B") is not None and s.get("sum_rect") is not None:
        lines.append(f"rectangular sum within 0.1 of B: {'yes' if abs(s['sum_rect'] - s['B']) <= 0.1 else 'no'}")
    return "\n".join(lines)


def build_report(out: Path) -> str | None:
    """Summary of whatever artifacts exist in ``out``; ``None`` if none do."""
    parts = []
    p = out / SELFTEST_CSV
    if p.exists():
        _, rows = store.read_csv(p)
        bad = sum(1 for r in rows if r[5] != "1")
        parts.append(f"== selftest: {len(rows) - bad}/{len(rows)} passed\n" + format_selftest(rows))
    p = out / CHAOS_CSV
    if p.exists():
        _, rows = store.read_csv(p)
        parts.append("== chaos variances vs bound\n" + format_chaos(rows))
    p = out / SIMULATE_JSON
    if p.exists():
        s = json.loads(p.read_text())
        parts.append(f"== simulate: {s['replicas']} replicas, scheme {s['scheme']}, mean check max |z| = "
                     f"{s['mean_check_max_abs_z']:.3f} ({'ok' if s['mean_check_passed'] else 'FAIL'})")
    p = out / HOLDER_JSON
    if p.exists():
        s = json.loads(p.read_text())
        body = format_holder(s)
        q = out / HOLDER_CSV
        if q.exists():
            fits = holder.read_fits_csv(q)
            body += "\n" + _table(("mode", "alpha0_hat", "alpha_hat", "r2", "reported"),
                                  [(f.mode, _f(f.alpha0_hat), _f(f.alpha_hat), f.r2, f.reported) for f in fits])
        parts.append("== holder\n" + body)
    p = out / BOUNDS_CSV
    if p.exists():
        _, rows = store.read_csv(p)
        parts.append(f"== bounds: {len(rows)} rows\n"
                     + _table(("spec", "B"), [(r[1], _f(r[5])) for r in rows if r[0] == "region_B"]))
    p = out / ACCEPTANCE_CSV
    if p.exists():
        _, rows = store.read_csv(p)
        lines = [f"[{'PASS' if r[2] == '1' else 'FAIL'}] {r[0]}. {r[1]}: {r[3]}" for r in rows]
        parts.append("== acceptance\n" + "\n".join(lines))
    if not parts:
        return None
    return "\n\n".join(parts) + "\n"


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pamlab", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("-c", "--config", help="JSON config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted-path override, value parsed as JSON (repeatable)")
    ap.add_argument("--out", help="output directory (same as --set output.dir=DIR)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, config_path=None, overrides=()) -> int:
    try:
        cfg = config.load(config_path, overrides)
        config.validate(cfg, command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if command != "report":
            store.write_json(_out(cfg) / f"config_{command}.json", cfg)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PamlabError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    return run(args.command, args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
