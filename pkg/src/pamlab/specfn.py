"""Deterministic special functions and integral identities.

Heat kernel, Dirichlet-type simplex integrals (exact and Monte Carlo),
the factorial-power series ``sum z**n / (n!)**a`` and the Gaussian
smoothing integral against a power-law spectral density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .errors import DomainError

__all__ = [
    "heat_kernel",
    "SimplexParams",
    "simplex_integral_exact",
    "simplex_integral_mc",
    "simplex_integral_bound",
    "sample_simplex",
    "mittag_leffler_sum",
    "log_mittag_leffler_sum",
    "fit_mittag_leffler_constant",
    "smoothing_integral",
]


def heat_kernel(t, x, d=1):
    """Gaussian kernel of ``exp(t Delta / 2)``.

    ``p_t(x) = (2 pi t)^(-d/2) exp(-|x|^2 / (2t))``.  For ``d == 1`` every
    entry of ``x`` is a point; for ``d > 1`` the last axis holds coordinates.
    """
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    if d == 1:
        r2 = x * x
    else:
        if x.shape[-1] != d:
            raise DomainError(f"last axis of x must have length d={d}")
        r2 = np.sum(x * x, axis=-1)
    out = (2.0 * np.pi * t) ** (-d / 2.0) * np.exp(-r2 / (2.0 * t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SimplexParams:
    """Horizon ``t`` and gap exponents of ``J_m(t, alpha)``."""

    t: float
    alphas: tuple

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not self.t > 0:
            raise DomainError(f"simplex horizon must be positive, got {self.t}")
        if len(self.alphas) == 0:
            raise DomainError("need at least one exponent")
        for a in self.alphas:
            if a <= -1.0:
                raise DomainError(f"exponent {a} <= -1 makes the simplex integral diverge")
            if a >= 1.0:
                raise DomainError(f"exponent {a} outside (-1, 1)")

    @property
    def m(self) -> int:
        return len(self.alphas)

    @property
    def total(self) -> float:
        return float(sum(self.alphas))


def simplex_integral_exact(p: SimplexParams) -> float:
    """Dirichlet identity ``t^(|a|+m) prod Gamma(a_i+1) / Gamma(|a|+m+1)``."""
    a = np.asarray(p.alphas)
    s = p.total + p.m
    logv = s * math.log(p.t) + float(np.sum(gammaln(a + 1.0))) - float(gammaln(s + 1.0))
    return math.exp(logv)


def simplex_integral_bound(p: SimplexParams, c: float) -> float:
    """Upper bound ``c^m t^(|a|+m) / Gamma(|a|+m+1)``."""
    if not c > 0:
        raise DomainError("bound constant must be positive")
    s = p.total + p.m
    return math.exp(p.m * math.log(c) + s * math.log(p.t) - float(gammaln(s + 1.0)))


_MIN_POWER = 0.05


def sample_simplex(exponents, t, size, rng):
    """Sample gap vectors of the ordered simplex by stick breaking.

    ``exponents`` lists the expected singular power of the integrand in each
    of the ``m + 1`` gaps (the last gap is ``t - r_m``).  Every stick
    coordinate is drawn from an equal mixture of ``b v^(b-1)`` and
    ``b (1-v)^(b-1)`` whose powers follow the singularities at either end,
    which keeps importance weights bounded when the guesses are right.

    Returns ``(log_gaps, log_density)`` where the density is with respect to
    Lebesgue measure on the ordered points ``0 < r_1 < ... < r_m < t``.
    """
    ex = np.asarray(exponents, dtype=float)
    m = ex.size - 1
    if m < 1:
        raise DomainError("simplex needs at least one free coordinate")
    log_t = math.log(t)
    log_v = np.empty((size, m))
    log_w = np.empty((size, m))
    log_q = np.zeros(size)
    for k in range(m):
        tail = float(np.sum(1.0 + ex[k + 1:])) - 1.0
        b0 = min(1.0, max(_MIN_POWER, 1.0 + ex[k]))
        b1 = min(1.0, max(_MIN_POWER, 1.0 + tail))
        log_u = np.log(rng.random(size) * (1.0 - 1e-16) + 1e-300)
        upper = rng.random(size) < 0.5
        lv = np.where(upper, 0.0, log_u / b0)
        lw = np.where(upper, log_u / b1, 0.0)
        # complementary coordinate computed from whichever end was sampled
        with np.errstate(divide="ignore"):
            lw = np.where(upper, lw, np.log1p(-np.exp(lv)))
            lv = np.where(upper, np.log1p(-np.exp(lw)), lv)
        log_v[:, k] = lv
        log_w[:, k] = lw
        if b0 == 1.0 and b1 == 1.0:
            lq = np.zeros(size)
        else:
            lq = np.logaddexp(
                math.log(0.5 * b0) + (b0 - 1.0) * lv,
                math.log(0.5 * b1) + (b1 - 1.0) * lw,
            )
        log_q += lq - (m - 1 - k) * lw
    log_q -= m * log_t
    prefix = np.concatenate([np.zeros((size, 1)), np.cumsum(log_w, axis=1)], axis=1)
    log_gaps = np.empty((size, m + 1))
    log_gaps[:, :m] = log_t + log_v + prefix[:, :m]
    log_gaps[:, m] = log_t + prefix[:, m]
    return log_gaps, log_q


def simplex_integral_mc(p: SimplexParams, samples: int, seed: int, method: str = "stick",
                        batch: int = 1 << 17):
    """Monte Carlo estimate of ``J_m(t, alpha)`` with its standard error.

    ``method="stick"`` uses power-law importance sampling of the stick
    coordinates (finite variance for every exponent in (-1, 1));
    ``method="uniform"`` samples uniform order statistics, whose variance
    is infinite once some exponent is <= -1/2.
    """
    if samples < 1000:
        raise DomainError("need at least 1000 samples")
    if method not in ("stick", "uniform"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    a = np.asarray(p.alphas)
    m = p.m
    exps = np.concatenate([a, [0.0]])
    log_vol = m * math.log(p.t) - math.lgamma(m + 1)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        if method == "stick":
            log_g, log_q = sample_simplex(exps, p.t, n, rng)
            w = np.exp(log_g[:, :m] @ a - log_q)
        else:
            r = np.sort(rng.random((n, m)) * p.t, axis=1)
            gaps = np.diff(np.concatenate([np.zeros((n, 1)), r], axis=1), axis=1)
            w = np.exp(np.log(gaps) @ a + log_vol)
        total += float(np.sum(w))
        total_sq += float(np.sum(w * w))
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return mean, math.sqrt(var / samples)


def _log_ml_terms(a, log_z, n):
    return n * log_z - a * gammaln(n + 1.0)


def _log_ml_with_remainder(a, z, tol, chunk=1 << 16):
    if not 0 < a <= 1:
        raise DomainError(f"series power must lie in (0, 1], got {a}")
    if z < 0:
        raise DomainError("z must be nonnegative")
    if not tol > 0:
        raise DomainError("tol must be positive")
    if z == 0:
        return 0.0, -math.inf
    log_z = math.log(z)
    log_tol = math.log(tol)
    acc = -math.inf
    start = 0
    prev_below = np.zeros(2, dtype=bool)
    while True:
        n = np.arange(start, start + chunk, dtype=float)
        lt = _log_ml_terms(a, log_z, n)
        cum = np.logaddexp(acc, np.logaddexp.accumulate(lt))
        # ratio of consecutive terms: z / (n+1)^a, decreasing in n
        log_ratio = log_z - a * np.log(n + 1.0)
        ratio = np.exp(np.minimum(log_ratio, 0.0))
        with np.errstate(divide="ignore"):
            log_rem = lt + log_ratio - np.log1p(-ratio)
        log_rem = np.where(log_ratio < 0, log_rem, np.inf)
        thresh = log_tol + np.maximum(cum, 0.0)
        below = np.concatenate([prev_below, lt < thresh])
        three = below[2:] & below[1:-1] & below[:-2]
        hit = np.flatnonzero(three & (log_rem < thresh))
        if hit.size:
            i = int(hit[0])
            return float(cum[i]), float(log_rem[i])
        prev_below = below[-2:]
        acc = float(cum[-1])
        start += chunk


def log_mittag_leffler_sum(a: float, z: float, tol: float = 1e-15) -> float:
    """Natural log of ``sum_{n>=0} z^n / (n!)^a``; safe for huge values."""
    return _log_ml_with_remainder(a, z, tol)[0]


def mittag_leffler_sum(a: float, z: float, tol: float = 1e-12) -> float:
    """``sum_{n>=0} z^n / (n!)^a`` truncated once three consecutive terms and
    the geometric tail bound fall below ``tol`` (relative once the sum
    exceeds one).  Returns ``inf`` on float overflow; use
    :func:`log_mittag_leffler_sum` there.
    """
    lv = log_mittag_leffler_sum(a, z, tol)
    return math.exp(lv) if lv < 709.0 else math.inf


def fit_mittag_leffler_constant(powers: Sequence[float], z_max: float = 30.0,
                                n_grid: int = 121, margin: float = 1e-9) -> float:
    """Smallest ``C`` with ``sum z^n/(n!)^a <= C exp(z^(1/a))`` on ``[0, z_max]``.

    The supremum of ``log S(z) - z^(1/a)`` is located on a grid and refined
    with a bounded scalar search; ``margin`` absorbs rounding in the series.
    """
    best = -math.inf
    for a in powers:
        def g(z, a=a):
            return log_mittag_leffler_sum(a, z) - z ** (1.0 / a)
        zs = np.linspace(0.0, z_max, n_grid)
        vals = np.array([g(z) for z in zs])
        i = int(np.argmax(vals))
        lo, hi = zs[max(i - 1, 0)], zs[min(i + 1, n_grid - 1)]
        peak = float(vals[i])
        if hi > lo:
            res = optimize.minimize_scalar(lambda z: -g(z), bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10})
            peak = max(peak, -float(res.fun))
        best = max(best, peak)
    return math.exp(best) * (1.0 + margin)


def _ray_integral(s, beta, zeta, a, sign, radius):
    """Integral over r in [0, R] of exp(-2 s r^2) r^beta |zeta + sign*r|^a."""
    def f_plain(r):
        return math.exp(-2.0 * s * r * r)

    def f_beta(r):
        return math.exp(-2.0 * s * r * r) * r ** beta

    r_star = -sign * zeta  # where the ray crosses the origin of frequency space
    opts = dict(limit=200, epsabs=0.0, epsrel=1e-11)
    if r_star == 0.0:
        return integrate.quad(f_plain, 0.0, radius, weight="alg", wvar=(beta + a, 0.0), **opts)[0]
    if r_star < 0.0 or r_star >= radius:
        def f(r):
            return f_beta(r) * abs(zeta + sign * r) ** a
        return integrate.quad(f, 0.0, radius, **opts)[0]
    left = integrate.quad(f_plain, 0.0, r_star, weight="alg", wvar=(beta, a), **opts)[0]
    right = integrate.quad(f_beta, r_star, radius, weight="alg", wvar=(a, 0.0), **opts)[0]
    return left + right


def _line_integral(s, beta, zeta, a):
    radius = 10.0 / math.sqrt(s)
    return sum(_ray_integral(s, beta, zeta, a, sgn, radius) for sgn in (1.0, -1.0))


def _angular_factor(a1, a2):
    # integral of |cos|^a1 |sin|^a2 over the circle, singular ends in weights
    def f(th):
        c = math.cos(th) / (math.pi / 2 - th) if th < math.pi / 2 else 1.0
        sn = math.sin(th) / th if th > 0 else 1.0
        return c ** a1 * sn ** a2
    val = integrate.quad(f, 0.0, math.pi / 2, weight="alg", wvar=(a2, a1), epsrel=1e-12)[0]
    return 4.0 * val


def smoothing_integral(s: float, beta: float, zeta, spec) -> float:
    """``int exp(-2 s |xi - zeta|^2) |xi - zeta|^beta mu(xi) d xi``.

    ``spec`` supplies ``d``, ``amplitude`` and the per-axis spectral powers
    ``mu_exponents`` (``mu(xi) = amplitude * prod |xi_i|^a_i``).  The
    integration radius is ``10 / sqrt(s)`` around ``zeta``.
    """
    if not s > 0:
        raise DomainError(f"smoothing integral needs s > 0, got {s}")
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    d = spec.d
    exps = tuple(spec.mu_exponents)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (d,))
    amp = spec.amplitude
    if d == 1:
        return amp * _line_integral(s, beta, float(zeta[0]), exps[0])
    if d != 2:
        raise DomainError("smoothing integral implemented for d <= 2")
    if beta == 0.0:
        # Gaussian factor separates across axes
        return amp * _line_integral(s, 0.0, float(zeta[0]), exps[0]) * \
            _line_integral(s, 0.0, float(zeta[1]), exps[1])
    if not np.any(zeta):
        radial = integrate.quad(lambda r: math.exp(-2.0 * s * r * r), 0.0, 10.0 / math.sqrt(s),
                                weight="alg", wvar=(beta + exps[0] + exps[1] + 1.0, 0.0),
                                epsrel=1e-12)[0]
        return amp * radial * _angular_factor(exps[0], exps[1])
    radius = 10.0 / math.sqrt(s)
    z0, z1 = float(zeta[0]), float(zeta[1])

    def f(x1, x0):
        r2 = (x0 - z0) ** 2 + (x1 - z1) ** 2
        return math.exp(-2.0 * s * r2) * r2 ** (beta / 2) * abs(x0) ** exps[0] * abs(x1) ** exps[1]

    def pts(lo, hi, marks):
        return [p for p in marks if lo < p < hi] or None

    val = integrate.nquad(
        f,
        [[z1 - radius, z1 + radius], [z0 - radius, z0 + radius]],
        opts=[
            {"points": pts(z1 - radius, z1 + radius, [0.0, z1]), "limit": 100},
            {"points": pts(z0 - radius, z0 + radius, [0.0, z0]), "limit": 100},
        ],
    )[0]
    return amp * val
