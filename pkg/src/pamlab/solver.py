"""Pseudospectral exponential-Euler solver for the parabolic Anderson model
driven by noise that is white in time.

One step on the periodic grid::

    u_{k+1} = F^-1[ exp(-|xi|^2 dt / 2) F[u_k (1 + dW_k)] ]

which is the Ito (here equal to Skorohod) Euler scheme with the heat
semigroup applied exactly.  ``scheme="accelerated"`` instead filters the
noise term of each step so that a frozen-coefficient step has the exact
per-mode variance ``(1 - exp(-|xi|^2 dt)) / |xi|^2``::

    u_{k+1} = F^-1[ exp(-|xi|^2 dt / 2) F[u_k]
                    + sqrt((1 - exp(-|xi|^2 dt)) / (|xi|^2 dt)) F[u_k dW_k] ]

The Euler step damps modes above ``1/sqrt(dt)`` within one step, which
truncates the roughness of the field at that scale; the filtered step
keeps it up to the grid cutoff.  Replica ``r`` uses the noise stream
``SeedSequence(master_seed, spawn_key=(r,))``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chaos import CONSTANT_ONE, GAUSSIAN_BUMP, POINT_MASS, InitialCondition
from .errors import BlowUpError, ConfigError, StatisticsError, UnsupportedRegimeError
from .noise import GridSpec, NoiseSpec, spectral_weights, white_increment_chunks
from .specfn import heat_kernel
from . import store


def initial_field(u0: InitialCondition, grid: GridSpec) -> np.ndarray:
    """``u0`` sampled on the grid; the bump is periodized over the images."""
    if u0.kind == CONSTANT_ONE:
        return np.ones(grid.shape)
    if u0.kind == POINT_MASS:
        out = np.zeros(grid.shape)
        out[(grid.N // 2,) * grid.d] = grid.dx ** (-grid.d)
        return out
    return periodic_heat_kernel(u0.width, grid)


def periodic_heat_kernel(t: float, grid: GridSpec, images: int = 3) -> np.ndarray:
    """``sum_m p_t(x + m L)`` on the grid."""
    x = grid.points()
    out = np.zeros(grid.shape)
    shifts = np.arange(-images, images + 1) * grid.L
    if grid.d == 1:
        for s in shifts:
            out += heat_kernel(t, x + s, 1)
    else:
        for s0 in shifts:
            for s1 in shifts:
                out += heat_kernel(t, x + np.array([s0, s1]), 2)
    return out


EULER = "euler"
ACCELERATED = "accelerated"
SCHEMES = (EULER, ACCELERATED)


def _k2(grid: GridSpec) -> np.ndarray:
    k = grid.wavenumbers()
    kh = k[: grid.N // 2 + 1]
    if grid.d == 1:
        return kh * kh
    return (k * k)[:, None] + (kh * kh)[None, :]


def _decay(grid: GridSpec) -> np.ndarray:
    return np.exp(-0.5 * _k2(grid) * grid.dt)


def _noise_filter(grid: GridSpec) -> np.ndarray:
    z = _k2(grid) * grid.dt
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = np.sqrt(-np.expm1(-z[nz]) / z[nz])
    return out


def _step(u, dW, decay, axes, shape, filt=None):
    if dW is None:
        return np.fft.irfftn(np.fft.rfftn(u, axes=axes) * decay, s=shape, axes=axes)
    if filt is None:
        return np.fft.irfftn(np.fft.rfftn(u * (1.0 + dW), axes=axes) * decay, s=shape, axes=axes)
    hat = np.fft.rfftn(u, axes=axes) * decay + np.fft.rfftn(u * dW, axes=axes) * filt
    return np.fft.irfftn(hat, s=shape, axes=axes)


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}", ["scheme"])


def _snapshot_steps(grid: GridSpec, snapshot_times) -> list:
    times = [grid.T] if snapshot_times is None else list(snapshot_times)
    if not times:
        raise ConfigError("need at least one snapshot time", ["snapshots"])
    return [grid.step_index(t) for t in times]


def _check_regime(spec: NoiseSpec, grid: GridSpec):
    if not spec.white:
        raise UnsupportedRegimeError("time stepping supports noise white in time only")
    spec.check_hypotheses()
    if spec.d != grid.d:
        raise ConfigError(f"spec dimension {spec.d} != grid dimension {grid.d}", ["grid.d"])


def _evolve_batch(spec, grid, u0_grid, master_seed, replicas, steps, scheme=EULER, chunk=128):
    """Fields ``[len(replicas), len(steps), *space]`` for a fixed replica batch.
    Noise is drawn ``chunk`` steps at a time from each replica's stream."""
    axes = tuple(range(-grid.d, 0))
    decay = _decay(grid)
    filt = _noise_filter(grid) if scheme == ACCELERATED else None
    B = len(replicas)
    u = np.broadcast_to(u0_grid, (B,) + grid.shape).copy()
    streams = None
    if spec.amplitude != 0:
        streams = [white_increment_chunks(spec, grid, master_seed, r, chunk) for r in replicas]
    out = np.empty((B, len(steps)) + grid.shape)
    wanted = {}
    for i, s in enumerate(steps):
        wanted.setdefault(s, []).append(i)
    for i in wanted.get(0, []):
        out[:, i] = u
    block = None
    for k in range(grid.n_steps):
        if streams is not None and k % chunk == 0:
            block = np.stack([next(s) for s in streams], axis=1)
        dW = None if block is None else block[k % chunk]
        u = _step(u, dW, decay, axes, grid.shape, filt)
        if not np.isfinite(u).all():
            raise BlowUpError(f"non-finite field after step {k + 1}", step=k + 1)
        for i in wanted.get(k + 1, []):
            out[:, i] = u
    return out


def second_moment_recursion(spec: NoiseSpec, grid: GridSpec, snapshot_times=None,
                            scheme: str = EULER) -> np.ndarray:
    """Exact ``E u_k(x)^2`` of the discrete scheme for ``u0 = 1``, no sampling.

    By translation invariance the covariance ``C_k(h) = E u_k(x) u_k(x + h)``
    obeys a closed linear recursion because ``dW_k`` is independent of
    ``u_k``; with ``q`` the grid covariance of the noise per unit time,
    ``C_{k+1} = S^2 [C_k (1 + dt q)]`` for Euler and
    ``C_{k+1} = S^2 C_k + G^2 [dt q C_k]`` for the filtered scheme.
    """
    _check_regime(spec, grid)
    _check_scheme(scheme)
    steps = _snapshot_steps(grid, snapshot_times)
    axes = tuple(range(-grid.d, 0))
    w = spectral_weights(spec, grid)
    q = np.real(np.fft.ifftn(w)) * grid.N ** grid.d
    d2 = _decay(grid) ** 2
    g2 = _noise_filter(grid) ** 2
    C = np.ones(grid.shape)
    origin = (0,) * grid.d
    out = np.empty(len(steps))
    for i, s in enumerate(steps):
        if s == 0:
            out[i] = 1.0
    for k in range(max(steps)):
        if scheme == EULER:
            hat = np.fft.rfftn(C * (1.0 + grid.dt * q), axes=axes) * d2
        else:
            hat = np.fft.rfftn(C, axes=axes) * d2 + np.fft.rfftn(C * grid.dt * q, axes=axes) * g2
        C = np.fft.irfftn(hat, s=grid.shape, axes=axes)
        for i, s in enumerate(steps):
            if s == k + 1:
                out[i] = C[origin]
    return out


def solve_one_path(spec: NoiseSpec, grid: GridSpec, u0: InitialCondition, seed: int,
                   snapshot_times=None, replica: int | None = None, scheme: str = EULER) -> np.ndarray:
    """Single trajectory ``[snapshot, *space]`` driven by the noise stream
    of ``(seed, replica)``."""
    _check_regime(spec, grid)
    _check_scheme(scheme)
    steps = _snapshot_steps(grid, snapshot_times)
    return _evolve_batch(spec, grid, initial_field(u0, grid), seed, [replica], steps, scheme)[0]


@dataclass
class FieldEnsemble:
    fields: np.ndarray  # [replica, snapshot, *space]
    snapshot_times: tuple
    grid: GridSpec
    spec: NoiseSpec | None  # None for synthetic fields
    u0: InitialCondition | None
    master_seed: int
    replica_ids: tuple = field(default=None)
    scheme: str = EULER

    def __post_init__(self):
        self.snapshot_times = tuple(float(t) for t in self.snapshot_times)
        if self.replica_ids is None:
            self.replica_ids = tuple(range(self.fields.shape[0]))

    @property
    def replicas(self) -> int:
        return self.fields.shape[0]

    def snapshot_index(self, t: float) -> int:
        for i, s in enumerate(self.snapshot_times):
            if abs(s - t) <= 1e-9 * max(1.0, abs(t)):
                return i
        raise ConfigError(f"time {t} is not a snapshot", ["snapshots"])

    def manifest(self) -> dict:
        return {
            "format": "pamlab-ensemble", "version": 1,
            "shape": list(self.fields.shape), "snapshot_times": list(self.snapshot_times),
            "grid": self.grid.to_dict(),
            "spec": None if self.spec is None else self.spec.to_dict(),
            "u0": None if self.u0 is None else self.u0.to_dict(),
            "master_seed": int(self.master_seed), "replica_ids": list(self.replica_ids),
            "replica_seed_rule": "SeedSequence(master_seed, spawn_key=(replica,))",
            "scheme": self.scheme,
        }

    def save(self, directory):
        w = store.FieldWriter(directory, self.manifest())
        w.append(self.fields)
        w.close()

    @classmethod
    def load(cls, directory, mmap: bool = False) -> "FieldEnsemble":
        m = store.read_manifest(directory)
        if not m.get("complete", False):
            raise store.PersistenceError(f"ensemble at {directory} is incomplete", m)
        fields = store.read_fields(directory, m, mmap=mmap)
        return cls(fields, tuple(m["snapshot_times"]), GridSpec.from_dict(m["grid"]),
                   None if m["spec"] is None else NoiseSpec.from_dict(m["spec"]),
                   None if m["u0"] is None else InitialCondition.from_dict(m["u0"]),
                   m["master_seed"], tuple(m["replica_ids"]), m.get("scheme", EULER))


def run_ensemble(spec: NoiseSpec, grid: GridSpec, u0: InitialCondition | None = None,
                 replicas: int = 100, master_seed: int = 0, snapshot_times=None,
                 workers: int = 1, batch: int = 16, out_dir=None, scheme: str = EULER) -> FieldEnsemble:
    """Simulate ``replicas`` independent trajectories.

    Replicas are processed in fixed blocks of ``batch`` and reassembled in
    order, so the result does not depend on ``workers``.  With ``out_dir``
    the fields are streamed to disk; a failure leaves a manifest with
    ``complete: false``.
    """
    u0 = u0 or InitialCondition()
    _check_regime(spec, grid)
    _check_scheme(scheme)
    if replicas < 2:
        raise ConfigError("need at least two replicas", ["replicas"])
    steps = _snapshot_steps(grid, snapshot_times)
    times = tuple(s * grid.dt for s in steps)
    u0_grid = initial_field(u0, grid)
    blocks = [list(range(b, min(b + batch, replicas))) for b in range(0, replicas, batch)]
    ens = FieldEnsemble(np.empty((replicas, len(steps)) + grid.shape), times, grid, spec, u0,
                        master_seed, scheme=scheme)
    writer = store.FieldWriter(out_dir, ens.manifest()) if out_dir is not None else None

    def job(block):
        return _evolve_batch(spec, grid, u0_grid, master_seed, block, steps, scheme)

    try:
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = pool.map(job, blocks)
                for block, res in zip(blocks, results):
                    ens.fields[block[0]: block[-1] + 1] = res
                    if writer:
                        writer.append(res)
        else:
            for block in blocks:
                res = job(block)
                ens.fields[block[0]: block[-1] + 1] = res
                if writer:
                    writer.append(res)
    except Exception as exc:
        if writer:
            writer.fail(f"{type(exc).__name__}: {exc}")
        raise
    if writer:
        writer.close()
    return ens


def _shifted_moments(x: np.ndarray):
    """Mean, unbiased variance and standard error along axis 0, computed
    about the first replica (exact when all replicas coincide)."""
    n = x.shape[0]
    if n < 2:
        raise StatisticsError("need at least two replicas")
    ref = x[0]
    dx = x - ref
    m = dx.mean(axis=0)
    var = ((dx - m) ** 2).sum(axis=0) / (n - 1)
    return ref + m, var, np.sqrt(var / n)


def ensemble_statistics(ens: FieldEnsemble) -> dict:
    """Per snapshot and grid point: mean, var, p2 = E u^2, p4 = E u^4 and
    the standard error of the mean (arrays ``[snapshot, *space]``)."""
    f = ens.fields
    mean, var, se = _shifted_moments(f)
    f2 = f * f
    return {"mean": mean, "var": var, "p2": f2.mean(axis=0), "p4": (f2 * f2).mean(axis=0), "stderr": se}


STATS_COLUMNS = ("t", "x_index", "mean", "var", "p2", "p4", "stderr")


def stats_rows(ens: FieldEnsemble):
    st = ensemble_statistics(ens)
    for i, t in enumerate(ens.snapshot_times):
        flat = {k: v[i].reshape(-1) for k, v in st.items()}
        for j in range(flat["mean"].size):
            yield (t, j, flat["mean"][j], flat["var"][j], flat["p2"][j], flat["p4"][j], flat["stderr"][j])


def write_stats_csv(ens: FieldEnsemble, path, timestamp=None):
    return store.write_csv(path, STATS_COLUMNS, stats_rows(ens), timestamp)


def spatial_moment(ens: FieldEnsemble, t: float, p: int = 2, window: float | None = None):
    """Space-averaged ``E u(t, .)^p`` with a replica-level standard error
    (valid under translation invariance, e.g. u0 = 1)."""
    i = ens.snapshot_index(t)
    f = ens.fields[:, i]
    if window is not None:
        x = ens.grid.coords()
        sel = np.abs(x) <= window / 2
        f = f[:, sel] if ens.grid.d == 1 else f[:, sel][:, :, sel]
    per = (f ** p).reshape(f.shape[0], -1).mean(axis=1)
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


def heat_reference(u0: InitialCondition, grid: GridSpec, times) -> np.ndarray:
    """Deterministic part of the scheme: the grid heat semigroup applied
    step by step to the sampled initial field (``[snapshot, *space]``)."""
    steps = [grid.step_index(t) for t in times]
    axes = tuple(range(-grid.d, 0))
    decay = _decay(grid)
    u = initial_field(u0, grid)[None]
    out = np.empty((len(steps),) + grid.shape)
    for i, s in enumerate(steps):
        if s == 0:
            out[i] = u[0]
    for k in range(max(steps)):
        u = _step(u, None, decay, axes, grid.shape)
        for i, s in enumerate(steps):
            if s == k + 1:
                out[i] = u[0]
    return out


@dataclass
class MeanCheck:
    max_abs_z: float
    max_abs_dev: float
    z: np.ndarray
    reference: np.ndarray
    replicas: int

    def passed(self, threshold: float = 4.0) -> bool:
        return self.max_abs_z < threshold


def mean_check(ens: FieldEnsemble) -> MeanCheck:
    """Standardized deviation of the ensemble mean from ``p_t * u0`` on the grid."""
    ref = heat_reference(ens.u0, ens.grid, ens.snapshot_times)
    mean, _, se = _shifted_moments(ens.fields)
    dev = mean - ref
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev == 0, 0.0, np.inf))
    return MeanCheck(float(np.max(np.abs(z))), float(np.max(np.abs(dev))), z, ref, ens.replicas)
