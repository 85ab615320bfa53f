"""Wiener chaos quantities for the parabolic Anderson model.

Chaos kernels, Monte Carlo quadrature of chaos variances in the Fourier
representation, the factorial-decay and moment bounds, the truncated
second-moment series and the initial-condition exponent fit.

Chaos variance at level n, written with the sorted-time chain kernel
``h`` and frequencies ``z = (xi_1..xi_n, zeta, zeta')`` per axis::

    n! |f_n|^2 = int_{T_n(t)} ds int_{[0,t]^n} ds' prod gamma_0(s_i - s'_i)
                 int mu(xi) Fh(s, xi) conj(Fh(s', xi)) d xi

with ``Fh(s, xi) = (2 pi)^-d int u0^(zeta) exp(i x.(zeta - eta_n) - E_s)``,
``E_s = (s_1 + eps)|zeta|^2/2 + sum_k Delta_k |eta_k - zeta|^2 / 2`` and
``eta_k`` the partial sums of the frequencies in time order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from . import _backend
from .errors import ConfigError, DegenerateInputError, DomainError
from .noise import REGIME_I, REGIME_II, Exponents, NoiseSpec, as_exponents
from .specfn import heat_kernel, sample_simplex

CONSTANT_ONE = "constant_one"
GAUSSIAN_BUMP = "gaussian_bump"
POINT_MASS = "point_mass"
MAX_LEVEL = 6


@dataclass(frozen=True)
class InitialCondition:
    """``constant_one``: u0 = 1; ``gaussian_bump``: u0 = p_width;
    ``point_mass``: u0 = delta_0."""

    kind: str = CONSTANT_ONE
    width: float | None = None

    def __post_init__(self):
        if self.kind not in (CONSTANT_ONE, GAUSSIAN_BUMP, POINT_MASS):
            raise ConfigError(f"unknown initial condition {self.kind!r}", ["u0.kind"])
        if self.kind == GAUSSIAN_BUMP and not (self.width is not None and self.width > 0):
            raise ConfigError("gaussian_bump needs width > 0", ["u0.width"])

    def fourier(self, xi, d=1):
        """``u0^(xi)`` for the integrable cases (constant_one is a point mass
        in frequency and is rejected)."""
        if self.kind == CONSTANT_ONE:
            raise DomainError("constant initial condition has no function Fourier transform")
        xi = np.asarray(xi, dtype=float)
        r2 = xi * xi if d == 1 else np.sum(xi * xi, axis=-1)
        if self.kind == POINT_MASS:
            return np.ones_like(r2)
        return np.exp(-0.5 * self.width * r2)

    def heat_evolved(self, t, x, d=1):
        """``(p_t * u0)(x)`` on the whole space."""
        if self.kind == CONSTANT_ONE:
            x = np.asarray(x, dtype=float)
            shape = x.shape if d == 1 else x.shape[:-1]
            out = np.ones(shape)
            return float(out) if out.ndim == 0 else out
        eps = 0.0 if self.kind == POINT_MASS else self.width
        return heat_kernel(t + eps, x, d)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data):
        extra = set(data) - {"kind", "width"}
        if extra:
            raise ConfigError(f"unknown u0 fields {sorted(extra)}", [f"u0.{k}" for k in sorted(extra)])
        return cls(**data)


@dataclass
class ChaosEstimate:
    n: int
    t: float
    x: float
    variance: float
    stderr: float
    bound_value: float
    samples: int
    seed: int
    alpha0: float = float("nan")
    alpha: float = float("nan")

    @property
    def rel_stderr(self) -> float:
        return self.stderr / self.variance if self.variance > 0 else float("inf")


def chaos_kernel_eval(n, times, points, t, x, u0: InitialCondition, d=1):
    """``f_n(s_1, x_1, ..., s_n, x_n; t, x)`` including the ``1/n!`` factor."""
    s = np.asarray(times, dtype=float).reshape(n)
    pts = np.asarray(points, dtype=float).reshape((n,) if d == 1 else (n, d))
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("times must lie in (0, t)")
    order = np.argsort(s, kind="stable")
    s, pts = s[order], pts[order]
    if n > 1 and np.any(np.diff(s) == 0):
        raise DegenerateInputError("coincident times")
    val = heat_kernel(t - s[-1], np.asarray(x, dtype=float) - pts[-1], d)
    for k in range(n - 1):
        val *= heat_kernel(s[k + 1] - s[k], pts[k + 1] - pts[k], d)
    val *= u0.heat_evolved(s[0], pts[0], d)
    return float(val) / math.factorial(n)


def _gap_exponent(ex: Exponents, d: int) -> float:
    # singular power of the time integrand as one interior gap closes
    if ex.regime == REGIME_I:
        return -ex.alpha / 2.0
    return -(d / 2.0 + ex.alpha)


def _xi_map(n, with_zeta):
    """Matrix ``T`` with ``xi = T y`` for ``y = (theta_1..theta_n[, zeta, zeta'])``,
    ``theta_k = eta_k - zeta`` (unit determinant)."""
    k = n + (2 if with_zeta else 0)
    T = np.zeros((n, k))
    for i in range(n):
        T[i, i] = 1.0
        if i > 0:
            T[i, i - 1] = -1.0
    if with_zeta:
        T[0, n] = 1.0
    return T


def _quadratic_form(gaps, gaps2, rank2, n, with_zeta):
    """``E_s + E_s'`` (per spatial axis) in the ``y`` variables as ``(B, k, k)``.

    The first chain has identity time order and is diagonal in ``y``; the
    second follows ``rank2`` (time position of each xi) and uses ``zeta'``.
    Building the form from exact integer rows avoids cancellation when a
    time gap is tiny.
    """
    B = gaps.shape[0]
    k = n + (2 if with_zeta else 0)
    T = _xi_map(n, with_zeta)
    A = np.zeros((B, k, k))
    idx = np.arange(n)
    A[:, idx, idx] = 0.5 * gaps[:, 1:]
    cum = (rank2[:, None, :] <= idx[None, :, None]).astype(float)
    rows = cum @ T
    if with_zeta:
        rows[:, :, n + 1] -= 1.0
        A[:, n, n] += 0.5 * gaps[:, 0]
        A[:, n + 1, n + 1] += 0.5 * gaps2[:, 0]
    A += 0.5 * np.einsum("bj,bjk,bjl->bkl", gaps2[:, 1:], rows, rows)
    return A, T


def _level_batch(n, t, x, spec: NoiseSpec, u0: InitialCondition, size, rng):
    d = spec.d
    ex = spec.exponents()
    with_zeta = u0.kind != CONSTANT_ONE
    k = n + (2 if with_zeta else 0)
    a = _gap_exponent(ex, d)
    eps = u0.width if u0.kind == GAUSSIAN_BUMP else 0.0
    log_w = np.zeros(size)
    if spec.white:
        log_g, log_q = sample_simplex([0.0] + [a] * n, t, size, rng)
        gaps = np.exp(log_g)
        gaps[:, 0] += eps
        gaps2 = gaps
        rank2 = np.broadcast_to(np.arange(n), (size, n))
        log_w -= log_q
    else:
        a0 = spec.alpha0
        log_g, log_q = sample_simplex([0.0] + [a / 2.0] * n, t, size, rng)
        gaps = np.exp(log_g)
        s = np.cumsum(gaps[:, :n], axis=1)
        r = t * rng.random((size, n)) ** (1.0 / (1.0 - a0))
        sign = np.where(rng.random((size, n)) < 0.5, -1.0, 1.0)
        s2 = s + sign * r
        inside = np.all((s2 > 0) & (s2 < t), axis=1)
        s2 = np.where(inside[:, None], s2, (np.arange(1, n + 1) / (n + 1)) * t)
        order = np.argsort(s2, axis=1)
        rank2 = np.argsort(order, axis=1)
        s2_sorted = np.take_along_axis(s2, order, axis=1)
        gaps2 = np.diff(np.concatenate([np.zeros((size, 1)), s2_sorted, np.full((size, 1), t)], axis=1), axis=1)
        gaps[:, 0] += eps
        gaps2[:, 0] += eps
        log_w -= log_q
        log_w += n * math.log(spec.time_scale * 2.0 * t ** (1.0 - a0) / (1.0 - a0))
        log_w = np.where(inside, log_w, -np.inf)
    if spec.amplitude == 0:
        return np.zeros(size)
    A, T = _quadratic_form(gaps, gaps2, rank2, n, with_zeta)
    # Jacobi scaling before the factorization
    scale = 1.0 / np.sqrt(np.diagonal(A, axis1=1, axis2=2))
    A *= scale[:, :, None] * scale[:, None, :]
    g = rng.standard_normal((size, k, d))
    y, logdet = _backend.kernels().chol_solve_batch(A, g)
    y *= (math.sqrt(0.5) * scale)[:, :, None]
    logdet -= 2.0 * np.sum(np.log(scale), axis=1)
    # Gaussian mass of exp(-y^T A y) on every axis
    log_w += d * (0.5 * k * math.log(math.pi) - 0.5 * logdet)
    log_w += n * math.log(spec.amplitude)
    xi = np.einsum("ik,bkd->bid", T, y)
    with np.errstate(divide="ignore"):
        for axis, p in enumerate(spec.mu_exponents):
            if p != 0.0:
                log_w += p * np.sum(np.log(np.abs(xi[:, :, axis])), axis=1)
    w = np.exp(log_w)
    if with_zeta:
        phase = np.asarray(x, dtype=float).reshape(-1)[:d]
        w *= np.cos((y[:, n, :] - y[:, n + 1, :]) @ phase) * (2.0 * math.pi) ** (-2 * d)
    w[~np.isfinite(w)] = 0.0
    return w


def _batch_moments(args):
    n, t, x, spec, u0, size, seed, b = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    w = _level_batch(n, t, x, spec, u0, size, rng)
    m = float(np.mean(w))
    return size, m, float(np.sum((w - m) ** 2))


def chaos_variance(n: int, t: float, spec: NoiseSpec, u0: InitialCondition | None = None,
                   samples: int = 1_000_000, seed: int = 0, x=0.0, batch: int = 1 << 15,
                   workers: int = 1, c: float = 1.0) -> ChaosEstimate:
    """Monte Carlo estimate of ``n! |f_n(., t, x)|^2`` with its standard error.

    Times come from power-law stick breaking on ``T_n(t)`` (riesz mode adds
    ``s' = s + delta`` with ``|delta|`` drawn from the ``|delta|^-alpha0``
    law), frequencies from the Gaussian with the exact exponential factor,
    so the remaining weight is the ``mu`` power times an importance ratio.
    Batches use seeds ``(seed, b)`` and are reduced in batch order.
    """
    u0 = u0 or InitialCondition()
    spec.check_hypotheses()
    ex = spec.exponents()
    if not 0 <= n <= MAX_LEVEL:
        raise ConfigError(f"chaos level must be in [0, {MAX_LEVEL}]", ["n"])
    if not t > 0:
        raise ConfigError("t must be positive", ["t"])
    if u0.kind == POINT_MASS:
        raise ConfigError("chaos variance supports constant_one and gaussian_bump", ["u0.kind"])
    if samples < 2:
        raise ConfigError("need at least two samples", ["mc.samples"])
    xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
    bound = _safe_bound(n, t, ex, c)
    if n == 0:
        v = float(u0.heat_evolved(t, x, spec.d)) ** 2
        return ChaosEstimate(0, t, xv, v, 0.0, bound, samples, seed, ex.alpha0, ex.alpha)
    sizes = [batch] * (samples // batch)
    if samples % batch:
        sizes.append(samples % batch)
    jobs = [(n, t, x, spec, u0, sz, seed, b) for b, sz in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(_batch_moments, jobs))
    else:
        parts = [_batch_moments(j) for j in jobs]
    # fixed-order pairwise combination of (count, mean, M2)
    cnt, mean, m2 = parts[0]
    for nb, mb, qb in parts[1:]:
        tot = cnt + nb
        delta = mb - mean
        mean += delta * nb / tot
        m2 += qb + delta * delta * cnt * nb / tot
        cnt = tot
    se = math.sqrt(m2 / (cnt - 1) / cnt)
    return ChaosEstimate(n, t, xv, mean, se, bound, samples, seed, ex.alpha0, ex.alpha)


def white_chaos_oracle(n: int, t: float) -> float:
    """Closed form ``t^(n/2) / (2^n Gamma(n/2 + 1))`` for the white preset
    in d = 1 with u0 = 1."""
    return math.exp(0.5 * n * math.log(t) - n * math.log(2.0) - math.lgamma(0.5 * n + 1.0))


def white_second_moment(t: float) -> float:
    """``E u(t,x)^2 = exp(t/4) (1 + erf(sqrt(t)/2))`` for the same setting."""
    return math.exp(t / 4.0) * (1.0 + math.erf(math.sqrt(t) / 2.0))


def log_chaos_variance_bound(n, t, spec, c=1.0, alpha_tilde2=0.0) -> float:
    ex = as_exponents(spec)
    if not t > 0 or not c > 0:
        raise DomainError("need t > 0 and c > 0")
    lf = math.lgamma(n + 1.0)
    if ex.regime == REGIME_II:
        if ex.alpha >= 1.0:
            raise DomainError("regime ii bound needs alpha < 1")
        fact = -0.5 * (1.0 - ex.alpha) * lf
        tpow = 0.5 * (3.0 - 2.0 * ex.alpha0 - ex.alpha) * n
    else:
        fact = (0.5 * ex.alpha - 1.0) * lf
        tpow = 0.5 * (4.0 - 2.0 * ex.alpha0 - ex.alpha) * n
    return n * math.log(c) + (alpha_tilde2 + tpow) * math.log(t) + fact


def chaos_variance_bound(n, t, spec, c=1.0, alpha_tilde2=0.0) -> float:
    """Factorial-decay bound on the level-n chaos variance.

    Regime ii: ``c^n t^a2 (n!)^(-(1-alpha)/2) t^((3 - 2 alpha0 - alpha) n / 2)``.
    Regime i: ``c^n t^a2 (n!)^(alpha/2 - 1) t^((4 - 2 alpha0 - alpha) n / 2)``.
    ``spec`` may be a ``NoiseSpec`` or raw ``Exponents``.
    """
    return math.exp(log_chaos_variance_bound(n, t, spec, c, alpha_tilde2))


def _safe_bound(n, t, ex, c):
    try:
        return chaos_variance_bound(n, t, ex, c)
    except DomainError:
        return float("nan")


def fit_bound_constant(estimates: Sequence[ChaosEstimate], spec, z: float = 0.0) -> float:
    """Smallest ``c`` with ``variance + z*stderr <= bound(n, c)`` for every
    estimate with ``n >= 1``."""
    best = 0.0
    for e in estimates:
        if e.n < 1:
            continue
        v = e.variance + z * e.stderr
        if v <= 0:
            continue
        best = max(best, math.exp((math.log(v) - log_chaos_variance_bound(e.n, e.t, spec, 1.0)) / e.n))
    return best


def second_moment_series(t, spec: NoiseSpec, u0: InitialCondition | None = None, N: int = 6,
                         samples: int = 200_000, seed: int = 0, c: float | None = None,
                         x=0.0, workers: int = 1):
    """``sum_{n<=N}`` chaos variances and the bound on the omitted tail.

    The tail is ``sum_{n>N} chaos_variance_bound(n, t, spec, c)``; when
    ``c`` is not given it is fitted on levels ``1..N`` (3 stderr margin).
    Returns ``(value, tail_bound, estimates)``.
    """
    u0 = u0 or InitialCondition()
    if not 0 <= N <= MAX_LEVEL:
        raise ConfigError(f"truncation must be in [0, {MAX_LEVEL}]", ["N"])
    ests = [chaos_variance(n, t, spec, u0, samples, seed + n, x, workers=workers) for n in range(N + 1)]
    value = float(sum(e.variance for e in ests))
    if c is None:
        if N < 1:
            raise ConfigError("fitting c needs N >= 1", ["N"])
        c = fit_bound_constant(ests, spec, z=3.0)
    tail = _bound_tail(N, t, spec, c)
    return value, tail, ests


def _bound_tail(N, t, spec, c, tol=1e-16):
    total = 0.0
    n = N + 1
    while True:
        term = chaos_variance_bound(n, t, spec, c)
        total += term
        if n > N + 10 and term < tol * max(total, 1e-300):
            return total
        n += 1
        if n > 10_000:
            return float("inf")


def log_moment_bound(p, t, spec, C=1.0, c=1.0) -> float:
    ex = as_exponents(spec)
    if p < 2:
        raise DomainError("moment order must be >= 2")
    if not t > 0:
        raise DomainError("t must be positive")
    if ex.regime == REGIME_II:
        if ex.alpha >= 1.0:
            raise DomainError("regime ii moment bound needs alpha < 1")
        pe = (3.0 - ex.alpha) / (1.0 - ex.alpha)
        te = (3.0 - 2.0 * ex.alpha0 - ex.alpha) / (1.0 - ex.alpha)
    else:
        if ex.alpha >= 2.0:
            raise DomainError("regime i moment bound needs alpha < 2")
        pe = (4.0 - ex.alpha) / (2.0 - ex.alpha)
        te = (4.0 - 2.0 * ex.alpha0 - ex.alpha) / (2.0 - ex.alpha)
    return math.log(C) + c * p ** pe * t ** te


def moment_bound(p, t, spec, C=1.0, c=1.0) -> float:
    """``C exp(c p^a t^b)`` with ``(a, b)`` from the regime: regime ii
    ``((3-alpha)/(1-alpha), (3-2alpha0-alpha)/(1-alpha))``, regime i
    ``((4-alpha)/(2-alpha), (4-2alpha0-alpha)/(2-alpha))``.  Overflows to inf."""
    lv = log_moment_bound(p, t, spec, C, c)
    return math.exp(lv) if lv < 709.7 else float("inf")


def _radial_integral(s, power, u0: InitialCondition, d):
    """``int |xi|^power exp(-s|xi|^2) |u0^(xi)| d xi`` over R^d by radial quadrature."""
    eps = u0.width if u0.kind == GAUSSIAN_BUMP else 0.0
    c = s + 0.5 * eps
    surface = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    # substitute r = u / sqrt(c) so the integrand lives on a unit scale
    e = power + d - 1.0
    val, _ = integrate.quad(lambda u: u ** e * math.exp(-u * u), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return surface * val * c ** (-(e + 1.0) / 2.0)


def beta_fit(u0: InitialCondition, spec, s_grid=None):
    """Fit ``beta`` in ``int [1 + |xi|^(alpha/2)] e^(-s|xi|^2) |u0^| <= C s^-beta``.

    The integral is evaluated on ``s_grid`` and ``beta`` is minus the
    least-squares slope of log-value against log-s over the lowest decade
    of the grid (the small-s asymptotics are what matter), taking the
    larger of the exponents of the two terms.  Returns
    ``(beta, admissible)`` with admissibility ``beta < 1 - alpha0/2``.
    """
    ex = as_exponents(spec)
    d = spec.d if isinstance(spec, NoiseSpec) else 1
    s = np.sort(np.asarray(np.logspace(-12, 0, 49) if s_grid is None else s_grid, dtype=float))
    if np.any(s <= 0) or s[-1] > 1.0 + 1e-12 or math.log10(s[-1] / s[0]) < 3.0 - 1e-9:
        raise DomainError("s_grid must be positive, <= 1 and span at least 3 decades")
    if u0.kind == CONSTANT_ONE:
        # point mass (2 pi)^d delta_0 in frequency: the integral is constant in s
        pieces = [np.full(s.shape, (2.0 * math.pi) ** d)]
    else:
        pieces = [np.array([_radial_integral(si, pw, u0, d) for si in s]) for pw in (0.0, ex.alpha / 2.0)]
    sel = s <= s[0] * 10.0 * (1 + 1e-9)
    if sel.sum() < 3:
        sel = np.arange(s.size) < 3
    # the two terms are separate power laws; the steeper one governs s -> 0
    beta = -math.inf
    for vals in pieces:
        if not np.all(np.isfinite(vals)):
            raise DomainError("initial-condition integral diverges")
        beta = max(beta, -float(np.polyfit(np.log(s[sel]), np.log(vals[sel]), 1)[0]))
    if abs(beta) < 1e-9:  # quadrature noise on a flat integral
        beta = 0.0
    return beta, beta < 1.0 - ex.alpha0 / 2.0
