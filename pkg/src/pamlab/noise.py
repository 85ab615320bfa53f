"""Noise covariance model, discrete synthesis on periodic grids, and
covariance estimation.

The noise has covariance ``gamma_0(t - s) * gamma(x - y)`` with
``gamma_0(t) = C |t|^(-alpha0)`` (or a Dirac mass when white in time) and
spatial spectral density ``mu(xi) = amplitude * prod |xi_i|^a_i``
(regime i) or ``amplitude * |xi|^alpha`` (regime ii, d = 1).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import CapacityError, ConfigError, SingularityError, StatisticsError

WHITE = "white"
RIESZ = "riesz"
REGIME_I = "regime_i"
REGIME_II = "regime_ii"

MAX_COLORED_STEPS = 4096


class _Dirac:
    """Marker returned by :func:`time_covariance` at lag zero for white noise."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DIRAC"


DIRAC = _Dirac()


@dataclass(frozen=True)
class Exponents:
    """Exponents entering the moment, chaos and Hölder bound formulas.

    ``alpha`` follows the covariance convention: in regime i it is
    ``d + sum(a_i)`` for ``mu = prod |xi_i|^a_i``, so flat (space-white)
    noise in one dimension has ``alpha = 1``; in regime ii it is the
    spectral power itself.
    """

    regime: str
    alpha0: float
    alpha: float

    def __post_init__(self):
        if self.regime not in (REGIME_I, REGIME_II):
            raise ConfigError(f"unknown regime {self.regime!r}", ["regime"])


@dataclass(frozen=True)
class NoiseSpec:
    time_mode: str = WHITE
    space_mode: str = REGIME_I
    alpha0: float | None = None
    alphas: tuple = (0.0,)
    alpha: float | None = None
    amplitude: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        problems = self._basic_problems()
        if problems:
            raise ConfigError("; ".join(m for _, m in problems), [f for f, _ in problems])

    def _basic_problems(self):
        out = []
        if self.time_mode == RIESZ:
            if self.alpha0 is None or not 0.0 < self.alpha0 < 1.0:
                out.append(("spec.alpha0", "riesz time mode needs alpha0 in (0, 1)"))
        elif self.time_mode != WHITE:
            out.append(("spec.time_mode", f"unknown time mode {self.time_mode!r}"))
        if self.space_mode == REGIME_I:
            if not 1 <= len(self.alphas) <= 2:
                out.append(("spec.alphas", "regime i supports d = 1 or 2"))
            for a in self.alphas:
                if not -1.0 < a <= 0.0:
                    out.append(("spec.alphas", f"regime i exponent {a} not in (-1, 0]"))
        elif self.space_mode == REGIME_II:
            if self.alpha is None or not 0.0 < self.alpha < 1.5:
                out.append(("spec.alpha", "regime ii needs alpha in (0, 3/2)"))
        else:
            out.append(("spec.space_mode", f"unknown space mode {self.space_mode!r}"))
        if not self.amplitude >= 0.0:
            out.append(("spec.amplitude", "amplitude must be nonnegative"))
        if not self.time_scale > 0.0:
            out.append(("spec.time_scale", "time_scale must be positive"))
        return out

    @property
    def white(self) -> bool:
        return self.time_mode == WHITE

    @property
    def d(self) -> int:
        return len(self.alphas) if self.space_mode == REGIME_I else 1

    @property
    def mu_exponents(self) -> tuple:
        if self.space_mode == REGIME_I:
            return self.alphas
        return (float(self.alpha),)

    @property
    def time_exponent(self) -> float:
        return 1.0 if self.white else float(self.alpha0)

    def exponents(self) -> Exponents:
        if self.space_mode == REGIME_I:
            return Exponents(REGIME_I, self.time_exponent, self.d + sum(self.alphas))
        return Exponents(REGIME_II, self.time_exponent, float(self.alpha))

    def hypothesis_problems(self):
        """Coupled conditions on the exponents required by the existence theory."""
        ex = self.exponents()
        out = []
        if ex.regime == REGIME_I and not 2 * ex.alpha0 + ex.alpha < 4:
            out.append(("spec", f"regime i requires 2*alpha0 + alpha < 4 (alpha = d + sum a_i = {ex.alpha:g})"))
        if ex.regime == REGIME_II and not ex.alpha + ex.alpha0 < 1.5:
            out.append(("spec", f"regime ii requires alpha + alpha0 < 3/2, got {ex.alpha + ex.alpha0:g}"))
        return out

    def check_hypotheses(self):
        problems = self.hypothesis_problems()
        if problems:
            raise ConfigError("; ".join(m for _, m in problems), [f for f, _ in problems])
        return self

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(**{**self.to_dict(), "amplitude": self.amplitude * factor})

    def to_dict(self) -> dict:
        out = {"time_mode": self.time_mode, "space_mode": self.space_mode,
               "amplitude": self.amplitude, "time_scale": self.time_scale}
        if self.time_mode == RIESZ:
            out["alpha0"] = self.alpha0
        if self.space_mode == REGIME_I:
            out["alphas"] = list(self.alphas)
        else:
            out["alpha"] = self.alpha
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        data = dict(data)
        preset = data.pop("preset", None)
        if preset is not None:
            if preset != "white":
                raise ConfigError(f"unknown preset {preset!r}", ["spec.preset"])
            return white_preset(int(data.pop("d", 1)))
        known = {"time_mode", "space_mode", "alpha0", "alphas", "alpha", "amplitude", "time_scale"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown spec fields {sorted(extra)}", [f"spec.{k}" for k in sorted(extra)])
        if "alphas" in data:
            data["alphas"] = tuple(data["alphas"])
        return cls(**data)


def white_preset(d: int = 1) -> NoiseSpec:
    """Space-time white noise: flat ``mu = (2 pi)^(-d)`` so the noise norm
    equals the space-time L2 norm under the un-normalized inner product."""
    return NoiseSpec(time_mode=WHITE, space_mode=REGIME_I, alphas=(0.0,) * d,
                     amplitude=(2.0 * math.pi) ** (-d))


def as_exponents(obj) -> Exponents:
    if isinstance(obj, Exponents):
        return obj
    if isinstance(obj, NoiseSpec):
        return obj.exponents()
    raise TypeError(f"expected NoiseSpec or Exponents, got {type(obj).__name__}")


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid ``[-L/2, L/2)^d`` with ``N`` points per axis and time
    stepping ``dt`` up to horizon ``T``."""

    d: int = 1
    L: float = 8.0
    N: int = 512
    dt: float = 1e-3
    T: float = 0.25

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(m for _, m in problems), [f for f, _ in problems])

    def problems(self):
        out = []
        if self.d not in (1, 2):
            out.append(("grid.d", "grid dimension must be 1 or 2"))
        n = self.N
        if not isinstance(n, (int, np.integer)) or n < 1 or (n & (n - 1)) != 0:
            out.append(("grid.N", f"N={n} must be a power of two"))
        elif n < 64:
            out.append(("grid.N", f"N={n} must be at least 64"))
        if not self.T > 0:
            out.append(("grid.T", "horizon T must be positive"))
        if not self.dt > 0:
            out.append(("grid.dt", "time step must be positive"))
        if self.T > 0 and not self.L > 8.0 * math.sqrt(self.T):
            out.append(("grid.L", f"L={self.L} must exceed 8*sqrt(T)={8 * math.sqrt(self.T):.4g}"))
        if self.T > 0 and self.dt > 0:
            if self.dt > self.T / 100.0 * (1 + 1e-12):
                out.append(("grid.dt", f"dt={self.dt} must be at most T/100"))
            steps = self.T / self.dt
            if abs(steps - round(steps)) > 1e-6 * steps:
                out.append(("grid.dt", "T must be an integer multiple of dt"))
        return out

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    def coords(self) -> np.ndarray:
        return -self.L / 2 + self.dx * np.arange(self.N)

    def points(self) -> np.ndarray:
        """Grid points; shape ``(N,)`` for d = 1, ``(N, N, 2)`` for d = 2."""
        x = self.coords()
        if self.d == 1:
            return x
        return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)

    def step_index(self, t: float) -> int:
        k = t / self.dt
        if abs(k - round(k)) > 1e-6 or round(k) < 0 or round(k) > self.n_steps:
            raise ConfigError(f"time {t} is not on the step lattice", ["snapshots"])
        return int(round(k))

    def to_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "N": self.N, "dt": self.dt, "T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        extra = set(data) - {"d", "L", "N", "dt", "T"}
        if extra:
            raise ConfigError(f"unknown grid fields {sorted(extra)}", [f"grid.{k}" for k in sorted(extra)])
        return cls(**data)


def spectral_density(spec: NoiseSpec, xi) -> np.ndarray | float:
    """``mu(xi)``; returns ``inf`` at a zero coordinate with negative power."""
    xi = np.asarray(xi, dtype=float)
    exps = spec.mu_exponents
    with np.errstate(divide="ignore"):
        if spec.d == 1:
            out = spec.amplitude * np.abs(xi) ** exps[0]
        else:
            out = spec.amplitude * np.prod(
                [np.abs(xi[..., i]) ** exps[i] for i in range(spec.d)], axis=0)
    return float(out) if np.ndim(out) == 0 else out


def time_covariance(spec: NoiseSpec, tau: float):
    """``gamma_0(tau)``; white noise gives 0 off the diagonal and ``DIRAC`` at 0."""
    if spec.white:
        return DIRAC if tau == 0 else 0.0
    if tau == 0:
        raise SingularityError("riesz time covariance is singular at lag 0")
    return spec.time_scale * abs(tau) ** (-spec.alpha0)


def _riesz_double_integral(spec: NoiseSpec, T: float) -> float:
    a0 = spec.alpha0
    return spec.time_scale * 2.0 * T ** (2.0 - a0) / ((1.0 - a0) * (2.0 - a0))


def analytic_test_variance(spec: NoiseSpec, T: float, width: float) -> float:
    """Variance of ``W(1_[0,T] (x) p_width)`` from the noise inner product.

    The spatial factor is ``int exp(-width |xi|^2) mu(xi) d xi`` in closed form.
    """
    if not T > 0:
        raise ConfigError("T must be positive", ["T"])
    if not width > 0:
        raise ConfigError("width must be positive", ["width"])
    time_part = T if spec.white else _riesz_double_integral(spec, T)
    space = spec.amplitude
    for a in spec.mu_exponents:
        space *= gamma_fn((a + 1.0) / 2.0) * width ** (-(a + 1.0) / 2.0)
    return float(time_part * space)


def _axis_weights(a: float, grid: GridSpec) -> np.ndarray:
    xi = grid.wavenumbers()
    with np.errstate(divide="ignore"):
        f = np.abs(xi) ** a
    if a != 0:
        # cell average of |xi|^a over (-pi/L, pi/L) replaces the point value
        f[0] = (math.pi / grid.L) ** a / (a + 1.0)
    return f


def spectral_weights(spec: NoiseSpec, grid: GridSpec) -> np.ndarray:
    """Per-mode variances ``mu(xi_k) (2 pi / L)^d`` on the FFT layout."""
    if spec.d != grid.d:
        raise ConfigError(f"spec dimension {spec.d} != grid dimension {grid.d}", ["grid.d"])
    exps = spec.mu_exponents
    w = _axis_weights(exps[0], grid)
    for a in exps[1:]:
        w = np.multiply.outer(w, _axis_weights(a, grid))
    return spec.amplitude * w * (2.0 * math.pi / grid.L) ** grid.d


@functools.lru_cache(maxsize=16)
def _synthesis_filter(spec: NoiseSpec, grid: GridSpec) -> np.ndarray:
    w = spectral_weights(spec, grid)
    half = w[..., : grid.N // 2 + 1]
    return np.sqrt(half * grid.N ** grid.d)


def temporal_covariance(spec: NoiseSpec, grid: GridSpec) -> np.ndarray:
    """Covariance of the time-cell integrals of ``gamma_0`` (riesz mode)."""
    n = grid.n_steps
    a0 = spec.alpha0
    m = np.arange(n, dtype=float)
    e = 2.0 - a0
    row = (np.abs(m + 1) ** e + np.abs(m - 1) ** e - 2 * m ** e)
    row *= spec.time_scale * grid.dt ** e / ((1.0 - a0) * (2.0 - a0))
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return row[idx]


@functools.lru_cache(maxsize=8)
def _temporal_root(spec: NoiseSpec, grid: GridSpec) -> np.ndarray:
    if grid.n_steps > MAX_COLORED_STEPS:
        raise CapacityError(
            f"colored-in-time synthesis limited to {MAX_COLORED_STEPS} steps, grid has {grid.n_steps}")
    lam, vec = np.linalg.eigh(temporal_covariance(spec, grid))
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def synthesize_fields(spec: NoiseSpec, grid: GridSpec, normals: np.ndarray) -> np.ndarray:
    """Map i.i.d. standard normals (trailing axes = grid) to fields with
    per-mode variances :func:`spectral_weights`."""
    axes = tuple(range(-grid.d, 0))
    hat = np.fft.rfftn(normals, axes=axes)
    hat *= _synthesis_filter(spec, grid)
    return np.fft.irfftn(hat, s=grid.shape, axes=axes)


def replica_seed(master_seed: int, replica: int | None = None) -> np.random.SeedSequence:
    if replica is None:
        return np.random.SeedSequence(master_seed)
    return np.random.SeedSequence(master_seed, spawn_key=(int(replica),))


@dataclass
class NoisePath:
    increments: np.ndarray  # [step, *space], noise integrated over each time cell
    seed: int
    spec: NoiseSpec
    grid: GridSpec
    replica: int | None = None

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def sample_noise_path(spec: NoiseSpec, grid: GridSpec, seed: int,
                      replica: int | None = None) -> NoisePath:
    """One realization of the noise increments on ``grid``.

    The stream is a pure function of ``(seed, replica)``.
    """
    if spec.d != grid.d:
        raise ConfigError(f"spec dimension {spec.d} != grid dimension {grid.d}", ["grid.d"])
    if not spec.white and grid.n_steps > MAX_COLORED_STEPS:
        raise CapacityError(
            f"colored-in-time synthesis limited to {MAX_COLORED_STEPS} steps, grid has {grid.n_steps}")
    rng = np.random.default_rng(replica_seed(seed, replica))
    normals = rng.standard_normal((grid.n_steps,) + grid.shape)
    fields = synthesize_fields(spec, grid, normals)
    if spec.white:
        fields *= math.sqrt(grid.dt)
    else:
        root = _temporal_root(spec, grid)
        fields = np.tensordot(root, fields, axes=(1, 0))
    return NoisePath(fields, seed, spec, grid, replica)


def white_increment_chunks(spec: NoiseSpec, grid: GridSpec, seed: int,
                           replica: int | None = None, chunk: int = 256):
    """Yield the increments of :func:`sample_noise_path` in consecutive
    blocks of at most ``chunk`` steps (white in time only).  The
    concatenated blocks equal the full path bit for bit."""
    if not spec.white:
        raise ConfigError("chunked sampling needs noise white in time", ["spec.time"])
    if spec.d != grid.d:
        raise ConfigError(f"spec dimension {spec.d} != grid dimension {grid.d}", ["grid.d"])
    rng = np.random.default_rng(replica_seed(seed, replica))
    sq = math.sqrt(grid.dt)
    done = 0
    while done < grid.n_steps:
        m = min(chunk, grid.n_steps - done)
        fields = synthesize_fields(spec, grid, rng.standard_normal((m,) + grid.shape))
        fields *= sq
        yield fields
        done += m


def sample_noise_paths(spec: NoiseSpec, grid: GridSpec, master_seed: int,
                       replicas: Sequence[int]) -> list:
    return [sample_noise_path(spec, grid, master_seed, r) for r in replicas]


def gaussian_probe(grid: GridSpec, width: float, center=0.0, t_range=None) -> np.ndarray:
    """Space-time test function ``1_[t0,t1](s) p_width(x - center)`` on the
    step/grid lattice; shape ``(n_steps, *grid.shape)``."""
    from .specfn import heat_kernel

    x = grid.points()
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    shifted = x - (c[0] if grid.d == 1 else c)
    spatial = heat_kernel(width, shifted, grid.d)
    t0, t1 = (0.0, grid.T) if t_range is None else t_range
    mid = (np.arange(grid.n_steps) + 0.5) * grid.dt
    mask = ((mid >= t0) & (mid <= t1)).astype(float)
    return mask.reshape((-1,) + (1,) * grid.d) * spatial


def probe_values(path: NoisePath, probes: Sequence[np.ndarray]) -> np.ndarray:
    """Discrete pairings ``W(phi) = sum phi(t_j, x) dW_j(x) dx^d``."""
    cell = path.grid.dx ** path.grid.d
    inc = path.increments
    return np.array([float(np.sum(np.broadcast_to(p, inc.shape) * inc)) * cell for p in probes])


def discrete_test_variance(spec: NoiseSpec, grid: GridSpec, probe: np.ndarray) -> float:
    """Exact variance of the discrete pairing of a separable probe
    ``time_mask (x) spatial`` with synthesized noise (no sampling error)."""
    time_mask = probe.reshape(grid.n_steps, -1).any(axis=1).astype(float)
    spatial = probe[int(np.argmax(time_mask))]
    if spec.white:
        t_part = grid.dt * float(np.sum(time_mask))
    else:
        t_part = float(time_mask @ temporal_covariance(spec, grid) @ time_mask)
    hat = np.fft.fftn(spatial) * grid.dx ** grid.d
    return t_part * float(np.sum(spectral_weights(spec, grid) * np.abs(hat) ** 2))


@dataclass
class CovarianceEstimate:
    cov: np.ndarray
    stderr: np.ndarray
    replicas: int
    values: np.ndarray = field(repr=False, default=None)


def jackknife_covariance(values: np.ndarray) -> CovarianceEstimate:
    """Sample covariance of the columns of ``values`` with delete-one
    jackknife standard errors."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 2:
        raise StatisticsError("need at least two replicas")
    mean = v.mean(axis=0)
    c = v - mean
    cov = c.T @ c / (n - 1)
    if n < 3:
        return CovarianceEstimate(cov, np.full_like(cov, np.nan), n, v)
    s = v.sum(axis=0)
    sp = v.T @ v
    loo_mean = (s[None, :] - v) / (n - 1)
    # leave-one-out covariance for every replica i and probe pair (a, b)
    prod = np.einsum("ia,ib->iab", v, v)
    loo = (sp[None] - prod - (n - 1) * np.einsum("ia,ib->iab", loo_mean, loo_mean)) / (n - 2)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return CovarianceEstimate(cov, se, n, v)


def empirical_covariance(paths: Sequence[NoisePath], probes: Sequence[np.ndarray]) -> CovarianceEstimate:
    """Covariance matrix of probe pairings across replicas (jackknife errors)."""
    if len(paths) < 2:
        raise StatisticsError("need at least two replicas")
    vals = np.array([probe_values(p, probes) for p in paths])
    return jackknife_covariance(vals)
