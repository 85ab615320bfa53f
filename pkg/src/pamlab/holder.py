"""Empirical Hoelder analysis of simulated fields.

Structure functions of three kinds are estimated from a ``FieldEnsemble``:

* ``time_marginal``   E|u(t, x) - u(t - dt, x)|^p
* ``space_marginal``  E|u(t, x + dx) - u(t, x)|^p
* ``rectangular``     E|u(t, x+dx) - u(t-dt, x+dx) - u(t, x) + u(t-dt, x)|^p

averaged over a central spatial window of width L/2 and over replicas,
with jackknife standard errors over replicas.  Exponents come from least
squares on the log moments; a slope ``s`` against ``log lag`` is reported
as the exponent ``s / p``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import _backend, store
from .errors import ConfigError, DomainError, RegressionError, StatisticsError
from .noise import REGIME_II, GridSpec, NoiseSpec, as_exponents

RECTANGULAR = "rectangular"
TIME_MARGINAL = "time_marginal"
SPACE_MARGINAL = "space_marginal"
MODES = (RECTANGULAR, TIME_MARGINAL, SPACE_MARGINAL)

R2_MIN = 0.98


@dataclass
class IncrementTable:
    mode: str
    rows: list  # (dt_lag, dx_lag, p, estimate, stderr)
    replicas: int = 0
    base_time: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown increment mode {self.mode!r}", ["mode"])
        self.rows = [tuple(float(v) if i != 2 else int(v) for i, v in enumerate(r)) for r in self.rows]
        for dtl, dxl, _, est, _ in self.rows:
            if est < 0:
                raise StatisticsError("increment moments must be nonnegative")
            if self.mode == RECTANGULAR and not (dtl > 0 and dxl > 0):
                raise ConfigError("rectangular rows need both lags positive", ["lags"])

    COLUMNS = ("mode", "dt_lag", "dx_lag", "moment_order", "estimate", "stderr")

    def array(self) -> np.ndarray:
        return np.array([r for r in self.rows], dtype=float).reshape(-1, 5)

    def to_csv(self, path, timestamp=None):
        return store.write_csv(path, self.COLUMNS, [(self.mode,) + r for r in self.rows], timestamp)

    @classmethod
    def from_csv(cls, path) -> "IncrementTable":
        cols, rows = store.read_csv(path)
        if tuple(cols) != cls.COLUMNS or not rows:
            raise ConfigError(f"{path} is not an increment table", ["input"])
        modes = {r[0] for r in rows}
        if len(modes) != 1:
            raise ConfigError(f"{path} mixes increment modes {sorted(modes)}", ["input"])
        return cls(modes.pop(), [(float(a), float(b), int(c), float(d), float(e)) for _, a, b, c, d, e in rows])


@dataclass
class HolderFit:
    mode: str
    alpha0_hat: float | None
    alpha_hat: float | None
    ci: tuple  # (time, space) half-widths at 95%
    r2: float
    lags_used: list
    moment_order: int = 2
    intercept: float = 0.0

    @property
    def reported(self) -> bool:
        return self.r2 > R2_MIN

    def exponent_sum(self) -> float | None:
        if self.alpha0_hat is None or self.alpha_hat is None:
            return None
        return 2.0 * self.alpha0_hat + self.alpha_hat

    COLUMNS = ("mode", "moment_order", "alpha0_hat", "alpha_hat", "ci_alpha0", "ci_alpha",
               "r2", "reported", "n_lags", "lags_used")

    def row(self):
        nan = float("nan")
        lags = ";".join(f"{a!r}:{b!r}" for a, b in self.lags_used)
        return (self.mode, self.moment_order,
                nan if self.alpha0_hat is None else self.alpha0_hat,
                nan if self.alpha_hat is None else self.alpha_hat,
                nan if self.alpha0_hat is None else self.ci[0],
                nan if self.alpha_hat is None else self.ci[1],
                self.r2, self.reported, len(self.lags_used), lags)


def write_fits_csv(fits: Sequence[HolderFit], path, timestamp=None):
    return store.write_csv(path, HolderFit.COLUMNS, [f.row() for f in fits], timestamp)


def read_fits_csv(path) -> list:
    cols, rows = store.read_csv(path)
    if tuple(cols) != HolderFit.COLUMNS:
        raise ConfigError(f"{path} is not a HolderFit table", ["input"])
    out = []
    for r in rows:
        a0 = None if r[2] == "nan" else float(r[2])
        a1 = None if r[3] == "nan" else float(r[3])
        lags = [tuple(float(v) for v in s.split(":")) for s in r[9].split(";") if s]
        out.append(HolderFit(r[0], a0, a1, (float(r[4]), float(r[5])), float(r[6]), lags, int(r[1])))
    return out


# ---------------------------------------------------------------- moments

def _window(grid: GridSpec):
    """Index range ``[lo, hi)`` of the central window of width L/2."""
    return grid.N // 4, grid.N // 4 + grid.N // 2


def _as_rows(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``[replica, *space]`` -> 2-D rows along the last axis; for d = 2 only
    the rows inside the central window are kept."""
    if grid.d == 1:
        return f
    lo, hi = _window(grid)
    return f[:, lo:hi, :].reshape(-1, grid.N)


def _lag_steps(grid: GridSpec, h: float) -> int:
    k = h / grid.dx
    if h < 0 or abs(k - round(k)) > 1e-6 * max(1.0, k):
        raise ConfigError(f"space lag {h} is not a multiple of dx={grid.dx}", ["lags"])
    return int(round(k))


def _snapshot(ens, t: float) -> int:
    for i, s in enumerate(ens.snapshot_times):
        if abs(s - t) <= 1e-9 * max(1.0, abs(t)):
            return i
    raise ConfigError(f"time {t:g} is not an ensemble snapshot", ["lags"])


def _jackknife_mean(v: np.ndarray):
    n = v.size
    if n < 2:
        raise StatisticsError("jackknife needs at least two replicas")
    loo = (v.sum() - v) / (n - 1)
    est = float(v.mean())
    se = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum()))
    return est, se


def increment_moments(ens, lags, mode: str = RECTANGULAR, p: int = 2,
                      base_time: float | None = None, workers: int = 1) -> IncrementTable:
    """Replica- and window-averaged ``p``-th absolute increment moments.

    ``lags`` is a sequence of ``(dt, dx)`` pairs; the time lag is taken
    backwards from ``base_time`` (default: last snapshot), which together
    with ``base_time - dt`` must be a snapshot.  Space lags must be
    multiples of the grid spacing and act along the last axis.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown increment mode {mode!r}", ["mode"])
    if p not in (2, 4):
        raise ConfigError(f"moment order must be 2 or 4, got {p}", ["p"])
    grid = ens.grid
    tb = ens.snapshot_times[-1] if base_time is None else base_time
    ib = _snapshot(ens, tb)
    lo, hi = _window(grid)
    kern = _backend.kernels()
    count = (hi - lo) * (1 if grid.d == 1 else grid.N // 2)
    R = ens.fields.shape[0]
    chunks = [slice(a, min(a + 8, R)) for a in range(0, R, 8)]
    rows = []
    for dtl, dxl in lags:
        dtl, dxl = float(dtl), float(dxl)
        if mode == RECTANGULAR and not (dtl > 0 and dxl > 0):
            raise ConfigError("rectangular increments need both lags positive", ["lags"])
        if mode == TIME_MARGINAL and not (dtl > 0 and dxl == 0):
            raise ConfigError("time-marginal lags must be (dt > 0, 0)", ["lags"])
        if mode == SPACE_MARGINAL and not (dtl == 0 and dxl > 0):
            raise ConfigError("space-marginal lags must be (0, dx > 0)", ["lags"])
        shift = _lag_steps(grid, dxl)
        if shift >= grid.N // 4:
            raise ConfigError(f"space lag {dxl} exceeds the periodicity guard L/4", ["lags"])
        ir = _snapshot(ens, tb - dtl) if dtl > 0 else None

        def job(sl, ir=ir, shift=shift):
            a = _as_rows(np.asarray(ens.fields[sl, ib]), grid)
            b = None if ir is None else _as_rows(np.asarray(ens.fields[sl, ir]), grid)
            s = kern.increment_power_sums(a, b, shift, float(p), lo, hi)
            return s.reshape(sl.stop - sl.start, -1).sum(axis=1)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(job, chunks))
        else:
            parts = [job(sl) for sl in chunks]
        per = np.concatenate(parts) / count
        est, se = _jackknife_mean(per)
        rows.append((dtl, dxl, p, est, se))
    return IncrementTable(mode, rows, R, tb)


# ---------------------------------------------------------------- regression

def _check_axis(lags: np.ndarray, name: str):
    u = np.unique(lags)
    if u.size < 4:
        raise RegressionError(f"need at least 4 distinct {name} lags, got {u.size}")
    if u[-1] / u[0] < 10.0 * (1 - 1e-9):
        raise RegressionError(f"{name} lags must span at least one decade ({u[0]:g}..{u[-1]:g})")


def fit_exponents(table: IncrementTable, level: float = 0.95) -> HolderFit:
    """Least squares of ``log moment`` on ``log dt`` and/or ``log dx``."""
    a = table.array()
    if a.shape[0] == 0:
        raise RegressionError("empty increment table")
    p = int(a[0, 2])
    if np.any(a[:, 2] != p):
        raise RegressionError("mixed moment orders in one table")
    if np.any(a[:, 3] <= 0):
        raise RegressionError("log regression needs positive moments")
    y = np.log(a[:, 3])
    cols = []
    if table.mode in (RECTANGULAR, TIME_MARGINAL):
        _check_axis(a[:, 0], "time")
        cols.append(np.log(a[:, 0]))
    if table.mode in (RECTANGULAR, SPACE_MARGINAL):
        _check_axis(a[:, 1], "space")
        cols.append(np.log(a[:, 1]))
    X = np.column_stack([np.ones_like(y)] + cols)
    n, k = X.shape
    if n <= k:
        raise RegressionError(f"{n} rows cannot determine {k} coefficients")
    Xc = X[:, 1:] - X[:, 1:].mean(axis=0)
    sv = np.linalg.svd(Xc, compute_uv=False)
    if sv[-1] <= 1e-8 * max(sv[0], 1.0):
        raise RegressionError("collinear lag design")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(res @ res) / sst if sst > 0 else 0.0
    s2 = float(res @ res) / (n - k)
    cov = s2 * np.linalg.inv(X.T @ X)
    q = stats.t.ppf(0.5 + level / 2, n - k)
    half = q * np.sqrt(np.diag(cov)[1:]) / p
    # floor at float resolution so that ci > 0 even for exact power laws
    half = np.maximum(half, 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(coef[1:] / p)))
    slopes = coef[1:] / p
    lags = [(float(r[0]), float(r[1])) for r in a]
    if table.mode == RECTANGULAR:
        return HolderFit(table.mode, float(slopes[0]), float(slopes[1]), (float(half[0]), float(half[1])),
                         r2, lags, p, float(coef[0]))
    if table.mode == TIME_MARGINAL:
        return HolderFit(table.mode, float(slopes[0]), None, (float(half[0]), float("nan")), r2, lags, p,
                         float(coef[0]))
    return HolderFit(table.mode, None, float(slopes[0]), (float("nan"), float(half[0])), r2, lags, p,
                     float(coef[0]))


# ---------------------------------------------------------------- theory

def region_bound(spec) -> float:
    """``B`` with admissible exponents ``2 abar0 + abar < B``."""
    ex = as_exponents(spec)
    if ex.regime == REGIME_II:
        return 0.5 * (3.0 - 2.0 * ex.alpha0 - ex.alpha)
    return 2.0 - ex.alpha0 - 0.5 * ex.alpha


def predicted_region(spec):
    """``(B, check)`` where ``check(abar0, abar)`` tests ``2 abar0 + abar < B``."""
    B = region_bound(spec)

    def check(abar0: float, abar: float) -> bool:
        return 2.0 * abar0 + abar < B

    return B, check


def chaos_increment_bound(n: int, t: float, r: float, x, y, spec, abar0: float, abar: float,
                          c: float = 1.0) -> float:
    """Second-moment bound on the rectangular increment of the level-``n``
    chaos:

        c^n (n!)^e |t - r|^(2 abar0) |x - y|^(2 abar) t^(k n / 2)

    with ``e = alpha/2 - 1``, ``k = 4 - 2 alpha0 - alpha`` (regime i) or
    ``e = (alpha - 1)/2``, ``k = 3 - 2 alpha0 - alpha`` (regime ii).
    """
    ex = as_exponents(spec)
    B, check = predicted_region(ex)
    if not (0.0 <= abar0 <= 1.0 and 0.0 <= abar <= 1.0) or not check(abar0, abar):
        raise DomainError(f"(abar0, abar) = ({abar0}, {abar}) is outside the admissible region "
                          f"2*abar0 + abar < {B:g}")
    if not t >= r >= 0:
        raise DomainError("need t >= r >= 0")
    if n < 0 or int(n) != n:
        raise DomainError("chaos level must be a nonnegative integer")
    dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    if t == r or dist == 0.0:
        return 0.0
    if ex.regime == REGIME_II:
        e, k = 0.5 * (ex.alpha - 1.0), 3.0 - 2.0 * ex.alpha0 - ex.alpha
    else:
        e, k = 0.5 * ex.alpha - 1.0, 4.0 - 2.0 * ex.alpha0 - ex.alpha
    lb = (n * math.log(c) + e * math.lgamma(n + 1.0) + 2 * abar0 * math.log(t - r)
          + 2 * abar * math.log(dist) + 0.5 * k * n * math.log(t))
    return math.exp(lb)


# ---------------------------------------------------------------- designs

@dataclass(frozen=True)
class LagDesign:
    """Lag sets for the three fits, snapped to the grid lattice."""
    time_lags: tuple
    space_lags: tuple
    rect_lags: tuple
    base_time: float

    def snapshot_times(self) -> tuple:
        ts = {round(self.base_time - dt, 12) for dt in self.time_lags}
        ts |= {round(self.base_time - dt, 12) for dt, _ in self.rect_lags}
        ts.add(self.base_time)
        return tuple(sorted(ts))

    def to_dict(self) -> dict:
        return {"time_lags": list(self.time_lags), "space_lags": list(self.space_lags),
                "rect_lags": [list(v) for v in self.rect_lags], "base_time": self.base_time}


def _geo_steps(lo: float, hi: float, unit: float, k: int) -> list:
    v = np.geomspace(lo / unit, hi / unit, k)
    return sorted({int(round(s)) for s in v})


def lag_design(grid: GridSpec, k: int = 6, t_min: float | None = None, h_min: float | None = None,
               h_max: float | None = None, diagonals=(1.0, 2.0)) -> LagDesign:
    """Geometric lag sets inside ``dt in [4 dt_step, T/8]`` and
    ``dx in [2 dx_grid, L/16]``.

    Defaults: time lags ``[T/400, T/8]``, space lags one decade from
    ``2 dx_grid``.  Space lags stay small because at larger separations the
    multiplicative amplitude of ``u`` decorrelates and bends the structure
    function down.  Rectangular lags lie on the parabolic diagonals
    ``dx = c sqrt(dt)`` so that both axes span a range."""
    T, dt, dx = grid.T, grid.dt, grid.dx
    t_lo = max(4 * dt, T / 400 if t_min is None else t_min)
    t_hi = T / 8
    h_lo = max(2 * dx, 2 * dx if h_min is None else h_min)
    h_hi = min(grid.L / 16, 10 * h_lo if h_max is None else h_max)
    bad = []
    if t_hi < 10 * t_lo * (1 - 1e-9):
        bad.append(("holder.t_min", f"time lags [{t_lo:g}, {t_hi:g}] span less than a decade; "
                                    f"need dt <= T/320 and t_min <= T/80"))
    if h_hi < 10 * h_lo * (1 - 1e-9):
        bad.append(("holder.h_max", f"space lags [{h_lo:g}, {h_hi:g}] span less than a decade; "
                                    f"need N >= 320 and h_max >= 10 h_min"))
    if bad:
        raise ConfigError("; ".join(m for _, m in bad), [f for f, _ in bad])
    tl =tuple(round(m * dt, 12) for m in _geo_steps(t_lo, t_hi, dt, k))
    hl = tuple(round(m * dx, 12) for m in _geo_steps(h_lo, h_hi, dx, k))
    rect = []
    for c in diagonals:
        for tau in tl:
            m = int(round(c * math.sqrt(tau) / dx))
            m = min(max(m, 2), int(grid.L / 16 / dx))
            rect.append((tau, round(m * dx, 12)))
    rx = [h for _, h in rect]
    if max(rx) < 10 * min(rx) * (1 - 1e-9):
        raise ConfigError(f"rectangular space lags [{min(rx):g}, {max(rx):g}] span less than a decade; "
                          "widen the time range or the diagonal spread", ["holder.diagonals"])
    return LagDesign(tl, hl, tuple(rect), T)


@dataclass
class HolderReport:
    fits: dict  # mode -> HolderFit
    tables: dict  # mode -> IncrementTable
    B: float | None = None

    def summary(self) -> dict:
        """``(abar0, abar, B, 2 abar0 + abar)`` as a dict: the marginal fits
        give the exponents, the rectangular fit gives the sum."""
        tm = self.fits.get(TIME_MARGINAL)
        sm = self.fits.get(SPACE_MARGINAL)
        rc = self.fits.get(RECTANGULAR)
        return {
            "abar0": None if tm is None else tm.alpha0_hat,
            "abar": None if sm is None else sm.alpha_hat,
            "B": self.B,
            "sum_rect": None if rc is None else rc.exponent_sum(),
            "sum_marginal": None if tm is None or sm is None else 2 * tm.alpha0_hat + sm.alpha_hat,
        }


def analyze(ens, design: LagDesign | None = None, p: int = 2, workers: int = 1,
            modes=MODES) -> HolderReport:
    design = design or lag_design(ens.grid)
    lags = {
        TIME_MARGINAL: [(t, 0.0) for t in design.time_lags],
        SPACE_MARGINAL: [(0.0, h) for h in design.space_lags],
        RECTANGULAR: list(design.rect_lags),
    }
    tables, fits = {}, {}
    for m in modes:
        tables[m] = increment_moments(ens, lags[m], m, p, design.base_time, workers)
        fits[m] = fit_exponents(tables[m])
    B = None
    if getattr(ens, "spec", None) is not None:
        B = region_bound(ens.spec)
    return HolderReport(fits, tables, B)


def write_gnuplot(report: HolderReport, directory) -> list:
    """Two-column ``lag moment`` files per axis.  For the rectangular table
    the other axis is divided out with its fitted slope."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for mode, tab in report.tables.items():
        a = tab.array()
        fit = report.fits.get(mode)
        p = a[0, 2] if a.size else 2
        for axis, name in ((0, "time"), (1, "space")):
            if mode == TIME_MARGINAL and axis == 1 or mode == SPACE_MARGINAL and axis == 0:
                continue
            y = a[:, 3].copy()
            if mode == RECTANGULAR and fit is not None:
                other = fit.alpha_hat if axis == 0 else fit.alpha0_hat
                y = y / a[:, 1 - axis] ** (p * other)
            path = d / f"{mode}_{name}.dat"
            lines = [f"# {mode} {name} lag vs moment (p={int(p)})"]
            lines += [f"{lag!r} {val!r}" for lag, val in sorted(zip(a[:, axis].tolist(), y.tolist()))]
            path.write_text("\n".join(lines) + "\n")
            out.append(path)
    return out


# ---------------------------------------------------------------- synthetic fields

def _fbm_cov(s: np.ndarray, H: float) -> np.ndarray:
    a = np.abs(s)[:, None] ** (2 * H)
    b = np.abs(s)[None, :] ** (2 * H)
    c = np.abs(s[:, None] - s[None, :]) ** (2 * H)
    return 0.5 * (a + b - c)


def fractional_sheet(H0: float, H1: float, grid: GridSpec, snapshot_times, replicas: int,
                     seed: int, x_offset: float = 1.0):
    """Exact samples of a fractional Brownian sheet with covariance
    ``R_H0(t, s) R_H1(x, y)`` on ``snapshot_times x grid`` (d = 1), packed
    as a ``FieldEnsemble``.  Space positions are ``x + L/2 + x_offset`` so
    the covariance is nondegenerate; rectangular increments then satisfy
    ``E|D|^2 = dt^(2 H0) dx^(2 H1)`` exactly."""
    from .solver import FieldEnsemble

    if grid.d != 1:
        raise ConfigError("fractional sheet synthesis is one-dimensional", ["grid.d"])
    if not (0 < H0 < 1 and 0 < H1 < 1):
        raise DomainError("Hurst indices must lie in (0, 1)")
    ts = np.asarray(snapshot_times, float)
    if np.any(ts <= 0):
        raise DomainError("sheet snapshot times must be positive")
    xs = grid.coords() + grid.L / 2 + x_offset
    At = np.linalg.cholesky(_fbm_cov(ts, H0))
    Ax = np.linalg.cholesky(_fbm_cov(xs, H1))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    Z = rng.standard_normal((replicas, ts.size, grid.N))
    fields = np.einsum("ij,rjk,lk->ril", At, Z, Ax, optimize=True)
    return FieldEnsemble(fields, tuple(ts), grid, None, None, seed)
