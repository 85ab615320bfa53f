"""Closed-form oracles for specfn, noise and chaos, runnable as one suite.

Each oracle records the observed value, the expected value and the
tolerance it was held to.  Monte Carlo oracles use fixed seeds and the
tolerance ``3 * stderr`` (plus any stated bias allowance).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from . import chaos, noise, specfn
from .chaos import GAUSSIAN_BUMP, POINT_MASS, InitialCondition
from .noise import DIRAC, REGIME_I, REGIME_II, Exponents, GridSpec, NoiseSpec


@dataclass
class OracleResult:
    module: str
    name: str
    observed: float
    expected: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    # timings are printed, not written, so repeated runs give identical files
    COLUMNS = ("module", "name", "observed", "expected", "tolerance", "passed")

    def row(self):
        return (self.module, self.name, self.observed, self.expected, self.tolerance, self.passed)


def _check(module, name, observed, expected, tol):
    observed, expected, tol = float(observed), float(expected), float(tol)
    ok = bool(abs(observed - expected) <= tol) if math.isfinite(observed) else observed == expected
    return OracleResult(module, name, observed, expected, tol, ok)


def _flag(module, name, ok: bool, observed=float("nan")):
    """Boolean property; expected 1, tolerance 0."""
    return OracleResult(module, name, float(observed) if not isinstance(observed, bool) else float(ok),
                        1.0, 0.0, bool(ok))


# ---------------------------------------------------------------- specfn

def specfn_oracles(quick: bool = False):
    M = "specfn"
    n_mc = 200_000 if quick else 1_000_000
    out = [
        _check(M, "heat_kernel(1, 0, d=1)", specfn.heat_kernel(1.0, 0.0, 1), (2 * math.pi) ** -0.5, 1e-12),
        _check(M, "heat_kernel(2, 0, d=2)", specfn.heat_kernel(2.0, np.zeros(2), 2), 1 / (4 * math.pi), 1e-12),
    ]
    mass = integrate.quad(lambda x: specfn.heat_kernel(0.7, x, 1), -20 * math.sqrt(0.7), 20 * math.sqrt(0.7))[0]
    out.append(_check(M, "heat_kernel normalization", mass, 1.0, 1e-8))
    semi = integrate.quad(lambda y: specfn.heat_kernel(0.3, 0.4 - y, 1) * specfn.heat_kernel(0.5, y, 1),
                          -np.inf, np.inf, epsabs=1e-13)[0]
    out.append(_check(M, "heat_kernel semigroup", semi, specfn.heat_kernel(0.8, 0.4, 1), 1e-6))

    SP = specfn.SimplexParams
    out += [
        _check(M, "simplex exact (1,(0,0))", specfn.simplex_integral_exact(SP(1, (0, 0))), 0.5, 1e-14),
        _check(M, "simplex exact (2,(-1/2))", specfn.simplex_integral_exact(SP(2, (-0.5,))), 2 * math.sqrt(2), 1e-12),
        _check(M, "simplex exact (1,(-1/2,-1/2))", specfn.simplex_integral_exact(SP(1, (-0.5, -0.5))), math.pi, 1e-12),
        _check(M, "simplex bound (1,(0,0),c=1)", specfn.simplex_integral_bound(SP(1, (0, 0)), 1.0), 0.5, 1e-14),
        _check(M, "simplex bound (2,(-1/2),c=Gamma(1/2))",
               specfn.simplex_integral_bound(SP(2, (-0.5,)), math.sqrt(math.pi)), 2 * math.sqrt(2), 1e-12),
    ]
    p = SP(1.7, (0.3, -0.6, 0.2))
    out.append(_check(M, "simplex exact scaling t^(|a|+m)", specfn.simplex_integral_exact(p),
                      1.7 ** (p.total + p.m) * specfn.simplex_integral_exact(SP(1.0, p.alphas)), 1e-12))
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(1, 5))
        q = SP(float(rng.uniform(0.1, 3.0)), tuple(rng.uniform(-0.9, 0.9, m)))
        c = max(gamma_fn(a + 1) for a in q.alphas)
        worst = max(worst, specfn.simplex_integral_exact(q) / specfn.simplex_integral_bound(q, c))
    out.append(OracleResult(M, "simplex exact/bound ratio <= 1 (c = max Gamma(a+1))", worst, 1.0, 0.0,
                            worst <= 1.0 + 1e-12))
    for i, (t, al) in enumerate(((1.0, (0.0, 0.0)), (1.0, (-0.5, -0.5)), (0.5, (0.3, -0.2, 0.1)))):
        q = SP(t, al)
        est, se = specfn.simplex_integral_mc(q, n_mc, seed=100 + i)
        out.append(_check(M, f"simplex mc ({t},{al})", est, specfn.simplex_integral_exact(q), 3 * se))

    out += [
        _check(M, "mittag_leffler(1, 2)", specfn.mittag_leffler_sum(1.0, 2.0), math.exp(2.0), 1e-10),
        _check(M, "mittag_leffler(1/2, 1)", specfn.mittag_leffler_sum(0.5, 1.0),
               math.fsum(1.0 / math.sqrt(math.factorial(n)) for n in range(60)), 1e-10),
    ]
    C = specfn.fit_mittag_leffler_constant([0.25, 0.5, 0.75, 1.0])
    lhs = specfn.log_mittag_leffler_sum(0.5, 4.0)
    out.append(OracleResult(M, "mittag_leffler(1/2, 4) <= C exp(16)", lhs, math.log(C) + 16.0, 0.0,
                            lhs <= math.log(C) + 16.0))

    flat = NoiseSpec(alphas=(0.0,))
    out += [
        _check(M, "smoothing(s=1, b=0, flat)", specfn.smoothing_integral(1.0, 0.0, 0.0, flat),
               math.sqrt(math.pi / 2), 1e-8),
        _check(M, "smoothing(s=1, b=0, a=-1/2)",
               specfn.smoothing_integral(1.0, 0.0, 0.0, NoiseSpec(alphas=(-0.5,))),
               gamma_fn(0.25) / 2 ** 0.25, 1e-7),
        _check(M, "smoothing halving s scales by sqrt 2",
               specfn.smoothing_integral(0.5, 0.0, 0.0, flat) / specfn.smoothing_integral(1.0, 0.0, 0.0, flat),
               math.sqrt(2), 1e-9),
    ]
    return out


# ---------------------------------------------------------------- noise

def noise_oracles(quick: bool = False):
    M = "noise"
    reps = 2000 if quick else 10_000
    out = [
        _check(M, "mu flat at 3.7", noise.spectral_density(NoiseSpec(alphas=(0.0,)), 3.7), 1.0, 1e-15),
        _check(M, "mu |xi|^(1/2) at 4", noise.spectral_density(NoiseSpec(space_mode=REGIME_II, alpha=0.5), 4.0),
               2.0, 1e-15),
        _check(M, "mu |xi|^(-1/2) at 4", noise.spectral_density(NoiseSpec(alphas=(-0.5,)), 4.0), 0.5, 1e-15),
    ]
    rz = NoiseSpec(time_mode=noise.RIESZ, alpha0=0.5)
    out += [
        _check(M, "gamma0 riesz(1/2) at 4", noise.time_covariance(rz, 4.0), 0.5, 1e-15),
        _check(M, "gamma0 riesz(1/2) at -4", noise.time_covariance(rz, -4.0), 0.5, 1e-15),
        _flag(M, "gamma0 white: 0 off the diagonal, Dirac at 0",
              noise.time_covariance(noise.white_preset(1), 0.3) == 0.0
              and noise.time_covariance(noise.white_preset(1), 0.0) is DIRAC),
    ]
    flat = NoiseSpec(alphas=(0.0,))
    v1 = noise.analytic_test_variance(flat, 1.0, 1.0)
    out += [
        _check(M, "test variance white flat T=1", v1, math.sqrt(math.pi), 1e-12),
        _check(M, "test variance white T=2 / T=1", noise.analytic_test_variance(flat, 2.0, 1.0) / v1, 2.0, 1e-12),
        _check(M, "test variance riesz(1/2) flat", noise.analytic_test_variance(rz, 1.0, 1.0),
               8.0 / 3.0 * math.sqrt(math.pi), 1e-12),
    ]

    grid = GridSpec(1, 32.0, 128, 0.01, 1.0)
    probe = noise.gaussian_probe(grid, 1.0)
    far = [noise.gaussian_probe(grid, 0.05, c) for c in (-4.0, 4.0)]
    for spec, label in ((flat, "white flat"), (rz, "riesz(1/2) flat")):
        t0 = time.perf_counter()
        paths = [noise.sample_noise_path(spec, grid, 7, r) for r in range(reps)]
        est = noise.empirical_covariance(paths, [probe] + far)
        a = noise.analytic_test_variance(spec, 1.0, 1.0)
        r = _check(M, f"probe variance {label}", est.cov[0, 0], a, 3 * est.stderr[0, 0] + 0.02 * a)
        r.seconds = time.perf_counter() - t0
        out.append(r)
        if spec is flat:
            out.append(_check(M, "disjoint probes uncorrelated", est.cov[1, 2], 0.0, 3 * est.stderr[1, 2]))
            inc = np.array([p.increments[5, 64] for p in paths])
            out.append(_check(M, "pointwise mean 0", inc.mean(), 0.0, 3 * inc.std(ddof=1) / math.sqrt(reps)))
            a_, b_ = np.array([p.increments[3, 10] for p in paths]), np.array([p.increments[4, 10] for p in paths])
            rho = np.corrcoef(a_, b_)[0, 1]
            out.append(_check(M, "white lag-1 correlation 0", rho, 0.0, 3 / math.sqrt(reps)))
            doubled = [noise.sample_noise_path(flat.scaled(2.0), grid, 7, r) for r in range(50)]
            ratio = np.mean([noise.probe_values(q, [probe])[0] ** 2 for q in doubled]) / \
                np.mean([noise.probe_values(q, [probe])[0] ** 2 for q in paths[:50]])
            out.append(_check(M, "doubled amplitude doubles covariance", ratio, 2.0, 1e-9))
    w = noise.spectral_weights(NoiseSpec(alphas=(-0.5,)), grid)
    f = noise.synthesize_fields(NoiseSpec(alphas=(-0.5,)), grid, np.eye(grid.N))
    # unit impulses: row j is the response to e_j, so column sums of squares
    # are the per-point variance of the synthesized field
    out.append(_check(M, "Parseval: sum of weights = pointwise variance", w.sum(),
                      float(np.mean(np.sum(f * f, axis=0))), 1e-9 * w.sum()))
    a = noise.sample_noise_path(rz, grid, 3, 1).increments
    b = noise.sample_noise_path(rz, grid, 3, 1).increments
    out.append(_flag(M, "synthesis deterministic per seed", bool(np.array_equal(a, b))))
    return out


# ---------------------------------------------------------------- chaos

def chaos_oracles(quick: bool = False):
    M = "chaos"
    samples = 200_000 if quick else 1_000_000
    one = InitialCondition()
    white = noise.white_preset(1)
    out = [
        _check(M, "kernel n=1 at s->0", chaos.chaos_kernel_eval(1, [1e-12], [0.0], 1.0, 0.0, one),
               specfn.heat_kernel(1.0, 0.0), 1e-9),
        _check(M, "kernel n=2 (0.2, 0.7)", chaos.chaos_kernel_eval(2, [0.2, 0.7], [0.0, 0.0], 1.0, 0.0, one),
               0.5 * (0.6 * math.pi) ** -0.5 * math.pi ** -0.5, 1e-12),
    ]
    rng = np.random.default_rng(5)
    worst = 0.0
    bump = InitialCondition(GAUSSIAN_BUMP, 0.4)
    for _ in range(20):
        s = np.sort(rng.uniform(0, 1, 4))
        xs = rng.normal(size=4)
        perm = rng.permutation(4)
        v = chaos.chaos_kernel_eval(4, s, xs, 1.0, 0.3, bump)
        vp = chaos.chaos_kernel_eval(4, s[perm], xs[perm], 1.0, 0.3, bump)
        worst = max(worst, abs(v - vp) / abs(v))
    out.append(OracleResult(M, "kernel symmetric under permutation", worst, 0.0, 1e-12, worst <= 1e-12))
    for t in (0.25, 1.0):
        for n in (1, 2, 3):
            e = chaos.chaos_variance(n, t, white, one, samples, seed=10 * n + int(4 * t))
            out.append(_check(M, f"white variance n={n} t={t}", e.variance, chaos.white_chaos_oracle(n, t),
                              3 * e.stderr))
    ea = chaos.chaos_variance(2, 1.0, white, one, samples // 2, seed=1, x=0.0)
    eb = chaos.chaos_variance(2, 1.0, white, one, samples // 2, seed=2, x=1.7)
    out.append(_check(M, "variance invariant in x", ea.variance - eb.variance, 0.0,
                      3 * math.hypot(ea.stderr, eb.stderr)))
    ii = Exponents(REGIME_II, 1.0, 0.5)
    out += [
        _check(M, "variance bound regime ii n=2", chaos.chaos_variance_bound(2, 1.0, ii), 2 ** -0.25, 1e-12),
        _check(M, "variance bound regime i n=1 (alpha=0)", chaos.chaos_variance_bound(1, 1.0, Exponents(REGIME_I, 1.0, 0.0)),
               1.0, 1e-12),
    ]
    ratios = [math.exp(chaos.log_chaos_variance_bound(n + 1, 1.0, ii) - chaos.log_chaos_variance_bound(n, 1.0, ii))
              for n in (10, 100, 1000)]
    out.append(_flag(M, "bound ratio decreases to 0", ratios[0] > ratios[1] > ratios[2] and ratios[2] < 0.2,
                     ratios[-1]))
    out += [
        _check(M, "series closed form t=1", chaos.white_second_moment(1.0),
               math.fsum(chaos.white_chaos_oracle(n, 1.0) for n in range(80)), 1e-12),
        _check(M, "series closed form t=0.25", chaos.white_second_moment(0.25), 1.3587, 1e-4),
        _check(M, "series t->0", chaos.white_second_moment(1e-12), 1.0, 1e-5),
    ]
    val, _, _ = chaos.second_moment_series(0.25, white, one, N=3, samples=samples // 4, seed=3)
    partial = math.fsum(chaos.white_chaos_oracle(n, 0.25) for n in range(4))
    out.append(_check(M, "series partial sum N=3 t=0.25", val, partial, 0.01 * partial))
    out += [
        _check(M, "moment bound regime ii p=2", chaos.log_moment_bound(2, 1.0, ii), 32.0, 1e-12),
        _check(M, "moment bound regime i p=2", chaos.log_moment_bound(2, 1.0, Exponents(REGIME_I, 1.0, 0.0)),
               4.0, 1e-12),
    ]
    ps = [chaos.log_moment_bound(p, 0.7, ii) for p in (2, 3, 5)]
    ts = [chaos.log_moment_bound(3, t, Exponents(REGIME_I, 0.5, 0.5)) for t in (0.3, 1.0, 2.0)]
    out.append(_flag(M, "moment bound nondecreasing in p and t", ps == sorted(ps) and ts == sorted(ts)))
    rii = NoiseSpec(space_mode=REGIME_II, alpha=0.5)
    out += [
        _check(M, "beta u0=1", chaos.beta_fit(one, white)[0], 0.0, 1e-9),
        _check(M, "beta gaussian bump", chaos.beta_fit(InitialCondition(GAUSSIAN_BUMP, 1.0), white)[0], 0.0, 1e-3),
        _check(M, "beta point mass regime ii a=1/2", chaos.beta_fit(InitialCondition(POINT_MASS), rii)[0],
               0.625, 1e-3),
    ]
    return out


def run_all(quick: bool = False):
    """Run every oracle; returns a list of ``OracleResult``."""
    results = []
    for fn in (specfn_oracles, noise_oracles, chaos_oracles):
        t0 = time.perf_counter()
        rs = fn(quick)
        dt = time.perf_counter() - t0
        for r in rs:
            if r.seconds == 0.0:
                r.seconds = dt / len(rs)
        results += rs
    return results
