"""Exit-criteria runs.

Each ``criterion_k`` performs one experiment at its stated size and
tolerance and returns a ``CriterionResult``.  ``digest`` hashes the
statistics the run produced so that reruns can be compared byte for byte.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import chaos, holder, noise, solver, specfn
from .chaos import InitialCondition
from .noise import REGIME_II, GridSpec, NoiseSpec

SEEDS = {k: 1000 + k for k in range(1, 11)}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    seconds: float = 0.0
    digest: str = ""
    details: dict = field(default_factory=dict, repr=False)

    COLUMNS = ("criterion", "title", "passed", "summary", "digest")

    def row(self):
        return (self.number, self.title, self.passed, self.summary, self.digest)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.title}: {self.summary} ({self.seconds:.1f} s)"


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def _timed(fn):
    def run(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def criterion_1(samples: int = 1_000_000, cases: int = 50) -> CriterionResult:
    """Dirichlet identity vs stick-breaking Monte Carlo, randomized cases."""
    rng = np.random.default_rng(SEEDS[1])
    worst, fails, rows = 0.0, 0, []
    for i in range(cases):
        m = int(rng.integers(1, 5))
        p = specfn.SimplexParams(float(rng.uniform(0.1, 3.0)), tuple(rng.uniform(-0.9, 0.9, m)))
        est, se = specfn.simplex_integral_mc(p, samples, seed=SEEDS[1] * 100 + i)
        ex = specfn.simplex_integral_exact(p)
        z = abs(est - ex) / se
        worst = max(worst, z)
        fails += z > 3
        rows.append((est, se, ex))
    res = CriterionResult(1, "simplex exact vs Monte Carlo", fails == 0,
                          f"{cases} cases, max |z| = {worst:.2f} (limit 3), failures {fails}")
    res.details = {"rows": rows}
    res.digest = _digest(rows)
    return res


@_timed
def criterion_2() -> CriterionResult:
    """A single fitted C bounds the Mittag-Leffler-type series."""
    powers = (0.25, 0.5, 0.75, 1.0)
    C = specfn.fit_mittag_leffler_constant(powers, z_max=30.0)
    worst = -math.inf
    for a in powers:
        for z in np.linspace(0.0, 30.0, 601):
            worst = max(worst, specfn.log_mittag_leffler_sum(a, z) - math.log(C) - z ** (1.0 / a))
    res = CriterionResult(2, "Mittag-Leffler inequality", worst <= 0.0,
                          f"C = {C:.6g}, max log-violation {worst:.3e} (must be <= 0)")
    res.digest = _digest([C, worst])
    return res


CALIBRATION_GRID = GridSpec(1, 32.0, 128, 0.01, 1.0)


def calibration_specs():
    out = []
    for tm, a0 in (("white", None), ("riesz", 0.5)):
        out.append((f"{tm}, flat", NoiseSpec(time_mode=tm, alpha0=a0, alphas=(0.0,))))
        out.append((f"{tm}, |xi|^-1/2", NoiseSpec(time_mode=tm, alpha0=a0, alphas=(-0.5,))))
        out.append((f"{tm}, |xi|^1/2", NoiseSpec(time_mode=tm, alpha0=a0, space_mode=REGIME_II, alpha=0.5)))
    return out


@_timed
def criterion_3(replicas: int = 10_000, width: float = 1.0) -> CriterionResult:
    """Probe variances of synthesized noise vs the analytic inner product."""
    g = CALIBRATION_GRID
    probe = noise.gaussian_probe(g, width)
    parts, ok, stats = [], True, []
    for label, spec in calibration_specs():
        vals = np.array([noise.probe_values(noise.sample_noise_path(spec, g, SEEDS[3], r), [probe])[0]
                         for r in range(replicas)])
        est = noise.jackknife_covariance(vals[:, None])
        v, se = float(est.cov[0, 0]), float(est.stderr[0, 0])
        a = noise.analytic_test_variance(spec, g.T, width)
        good = abs(v - a) <= 3 * se + 0.02 * a
        ok &= good
        parts.append(f"{label}: {v:.4f}/{a:.4f}{'' if good else ' X'}")
        stats += [v, se]
    res = CriterionResult(3, "noise calibration", bool(ok), "; ".join(parts))
    res.digest = _digest(stats)
    return res


@_timed
def criterion_4(samples: int = 1_000_000) -> CriterionResult:
    """White-preset chaos variances vs the closed-form family."""
    spec = noise.white_preset(1)
    ok, parts, stats = True, [], []
    for t in (0.25, 1.0):
        for n in (1, 2, 3):
            e = chaos.chaos_variance(n, t, spec, InitialCondition(), samples, seed=SEEDS[4] * 10 + n + int(8 * t))
            o = chaos.white_chaos_oracle(n, t)
            good = abs(e.variance - o) <= max(3 * e.stderr, 0.02 * o)
            ok &= good
            parts.append(f"n={n} t={t}: {e.variance:.5f}/{o:.5f}{'' if good else ' X'}")
            stats += [e.variance, e.stderr]
    res = CriterionResult(4, "chaos variances", bool(ok), "; ".join(parts))
    res.digest = _digest(stats)
    return res


@_timed
def criterion_5(replicas: int = 2000) -> CriterionResult:
    """Solver second moment vs the closed-form series; mean field vs 1."""
    grid = GridSpec(1, 8.0, 512, 1e-3, 0.25)
    ens = solver.run_ensemble(noise.white_preset(1), grid, InitialCondition(), replicas, SEEDS[5],
                              snapshot_times=[0.25])
    m2, se2 = solver.spatial_moment(ens, 0.25, 2)
    target = chaos.white_second_moment(0.25)
    rel = m2 / target - 1.0
    mc = solver.mean_check(ens)
    ok = abs(rel) <= 0.05 and mc.max_abs_z <= 3.0
    res = CriterionResult(5, "series vs simulation", bool(ok),
                          f"E u^2 = {m2:.4f} +- {se2:.4f} vs {target:.4f} ({100 * rel:+.2f}%, limit 5%); "
                          f"mean max |z| = {mc.max_abs_z:.2f} (limit 3)")
    st = solver.ensemble_statistics(ens)
    res.details = {"m2": m2, "se2": se2, "max_z": mc.max_abs_z}
    res.digest = _digest(st["mean"], st["p2"], st["var"])
    return res


def regime_ii_quarter(amplitude: float = 1.0) -> NoiseSpec:
    return NoiseSpec(time_mode="white", space_mode=REGIME_II, alpha=0.25, amplitude=amplitude)


@_timed
def criterion_6(samples: int = 400_000, t: float = 1.0) -> CriterionResult:
    """One fitted c per noise makes the factorial bound dominate levels 1..5."""
    ok, parts, stats = True, [], []
    for label, spec in (("white", noise.white_preset(1)), ("regime ii a=1/4", regime_ii_quarter())):
        ests = [chaos.chaos_variance(n, t, spec, InitialCondition(), samples, seed=SEEDS[6] * 10 + n)
                for n in range(1, 6)]
        c = chaos.fit_bound_constant(ests, spec, z=0.0)
        ratios = [e.variance / chaos.chaos_variance_bound(e.n, t, spec, c) for e in ests]
        good = all(r <= 1.0 + 1e-12 for r in ratios)
        ok &= good
        parts.append(f"{label}: c = {c:.4f}, variance/bound = " + ", ".join(f"{r:.3f}" for r in ratios))
        stats += [c] + [e.variance for e in ests] + [e.stderr for e in ests]
    res = CriterionResult(6, "factorial decay", bool(ok), "; ".join(parts))
    res.digest = _digest(stats)
    return res


HOLDER_GRID = GridSpec(1, 16.0, 1024, 2.5e-4, 2.0)
HOLDER_SCHEME = solver.ACCELERATED


def holder_run(spec: NoiseSpec, replicas: int, seed: int):
    design = holder.lag_design(HOLDER_GRID)
    ens = solver.run_ensemble(spec, HOLDER_GRID, InitialCondition(), replicas, seed,
                              snapshot_times=design.snapshot_times(), scheme=HOLDER_SCHEME)
    return ens, holder.analyze(ens, design)


def _fits_digest(report):
    vals = []
    for m in holder.MODES:
        for r in report.tables[m].rows:
            vals += [r[3], r[4]]
    return _digest(vals)


@_timed
def criterion_7(replicas: int = 200) -> CriterionResult:
    """Hoelder exponents of the white-preset field."""
    _, rep = holder_run(noise.white_preset(1), replicas, SEEDS[7])
    tm, sm, rc = rep.fits[holder.TIME_MARGINAL], rep.fits[holder.SPACE_MARGINAL], rep.fits[holder.RECTANGULAR]
    s = rc.exponent_sum()
    ok_t = abs(tm.alpha0_hat - 0.25) <= 0.05 and tm.r2 > 0.98
    ok_x = abs(sm.alpha_hat - 0.50) <= 0.06 and sm.r2 > 0.98
    ok_r = abs(s - 0.5) <= 0.1
    res = CriterionResult(7, "Hoelder exponents (white)", bool(ok_t and ok_x and ok_r),
                          f"time {tm.alpha0_hat:.3f} (r2 {tm.r2:.4f}), space {sm.alpha_hat:.3f} (r2 {sm.r2:.4f}), "
                          f"rectangular 2a0+a = {s:.3f} (B = {rep.B:.3f})")
    res.details = {"report": rep}
    res.digest = _fits_digest(rep)
    return res


@_timed
def criterion_8(replicas: int = 200) -> CriterionResult:
    """Space exponent for rough noise mu = |xi|^(1/4) (white in time)."""
    _, rep = holder_run(regime_ii_quarter(1.0 / (2.0 * math.pi)), replicas, SEEDS[8])
    sm = rep.fits[holder.SPACE_MARGINAL]
    ok = abs(sm.alpha_hat - 0.375) <= 0.07 and sm.reported
    res = CriterionResult(8, "rough-noise space exponent", bool(ok),
                          f"space {sm.alpha_hat:.3f} (target 0.375 +- 0.07, r2 {sm.r2:.4f})")
    res.details = {"report": rep}
    res.digest = _fits_digest(rep)
    return res


SMOOTHING_CASES = ((-0.5, 0.0), (-0.5, 0.5), (0.0, 0.5), (0.0, 1.0), (-0.25, 1.5), (-0.75, 2.0))


@_timed
def criterion_9() -> CriterionResult:
    """Log-log slope of the smoothing integral in s."""
    s = np.logspace(-3, 0, 13)
    ok, parts, stats = True, [], []
    for a, b in SMOOTHING_CASES:
        spec = NoiseSpec(alphas=(a,))
        v = np.array([specfn.smoothing_integral(si, b, 0.0, spec) for si in s])
        X = np.log(s)
        slope, icpt = np.polyfit(X, np.log(v), 1)
        r2 = 1 - np.sum((np.log(v) - (slope * X + icpt)) ** 2) / np.sum((np.log(v) - np.log(v).mean()) ** 2)
        want = -(1 + a + b) / 2
        good = abs(slope - want) <= 1e-3 and r2 > 0.999
        ok &= good
        parts.append(f"(a={a}, b={b}): {slope:.4f}/{want:.4f}{'' if good else ' X'}")
        stats += [slope, r2]
    res = CriterionResult(9, "smoothing-integral scaling", bool(ok), "; ".join(parts))
    res.digest = _digest(stats)
    return res


RERUN = (3, 4, 5, 6, 7, 8)


@_timed
def criterion_10(first: dict | None = None) -> CriterionResult:
    """Rerun criteria 3-8 and compare the statistics digests."""
    first = dict(first or {})
    for k in RERUN:
        if k not in first:
            first[k] = CRITERIA[k]()
    second = {k: CRITERIA[k]() for k in RERUN}
    same = [k for k in RERUN if first[k].digest == second[k].digest]
    diff = [k for k in RERUN if k not in same]
    return CriterionResult(10, "determinism", not diff,
                           f"identical digests for {same}" + (f"; differing {diff}" if diff else ""))


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_all(which=None, echo=print) -> list:
    which = sorted(which or range(1, 11))
    done = {}
    out = []
    for k in which:
        res = criterion_10(done) if k == 10 else CRITERIA[k]()
        if k != 10:
            done[k] = res
        if echo:
            echo(res.line())
        out.append(res)
    return out
