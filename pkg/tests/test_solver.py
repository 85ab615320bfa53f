import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pamlab import chaos, solver, specfn, store
from pamlab.chaos import GAUSSIAN_BUMP, InitialCondition
from pamlab.errors import BlowUpError, ConfigError, PersistenceError, UnsupportedRegimeError
from pamlab.noise import RIESZ, GridSpec, NoiseSpec, sample_noise_path, white_preset

WHITE = white_preset(1)
SMALL = GridSpec(1, 8.0, 128, 2.5e-3, 0.25)
SILENT = WHITE.scaled(0.0)


def naive_euler(spec, grid, seed, replica):
    """Reference loop: full noise path, one plain FFT step at a time."""
    dW = sample_noise_path(spec, grid, seed, replica).increments
    k = grid.wavenumbers()
    decay = np.exp(-0.5 * k * k * grid.dt)
    u = np.ones(grid.N)
    for j in range(grid.n_steps):
        u = np.real(np.fft.ifft(np.fft.fft(u * (1 + dW[j])) * decay))
    return u


def test_zero_noise_constant_stays_one():
    u = solver.solve_one_path(SILENT, SMALL, InitialCondition(), 0, [0.1, 0.25])
    assert np.max(np.abs(u - 1.0)) < 1e-13


def test_zero_noise_bump_is_heat_flow():
    eps, t = 0.5, 0.25
    u = solver.solve_one_path(SILENT, SMALL, InitialCondition(GAUSSIAN_BUMP, eps), 0, [t])[0]
    assert np.max(np.abs(u - solver.periodic_heat_kernel(t + eps, SMALL))) < 1e-12
    # on a wider domain the image mass is negligible and the whole-line kernel applies
    wide = GridSpec(1, 16.0, 256, 2.5e-3, 0.25)
    u = solver.solve_one_path(SILENT, wide, InitialCondition(GAUSSIAN_BUMP, eps), 0, [t])[0]
    assert np.max(np.abs(u - specfn.heat_kernel(t + eps, wide.coords()))) < 1e-8


def test_euler_matches_naive_loop():
    u = solver.solve_one_path(WHITE, SMALL, InitialCondition(), 9, replica=4)[0]
    assert np.allclose(u, naive_euler(WHITE, SMALL, 9, 4), rtol=1e-12, atol=1e-12)


def test_colored_time_unsupported():
    with pytest.raises(UnsupportedRegimeError):
        solver.solve_one_path(NoiseSpec(time_mode=RIESZ, alpha0=0.5), SMALL, InitialCondition(), 0)


def test_unknown_scheme():
    with pytest.raises(ConfigError):
        solver.solve_one_path(WHITE, SMALL, InitialCondition(), 0, scheme="rk4")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    with pytest.raises(BlowUpError) as e:
        solver.solve_one_path(WHITE.scaled(1e300), SMALL, InitialCondition(), 0)
    assert e.value.step is not None and e.value.step >= 1


def test_snapshot_off_lattice():
    with pytest.raises(ConfigError):
        solver.solve_one_path(WHITE, SMALL, InitialCondition(), 0, [0.1234])


@pytest.fixture(scope="module")
def ensemble():
    return solver.run_ensemble(WHITE, SMALL, replicas=300, master_seed=21, snapshot_times=[0.1, 0.25], batch=32)


def test_mean_check_constant(ensemble):
    mc = solver.mean_check(ensemble)
    assert mc.max_abs_z < 4.5
    m, se = solver.spatial_moment(ensemble, 0.25, 1)
    assert abs(m - 1.0) <= 3 * se


def test_mean_check_zero_noise_exact():
    ens = solver.run_ensemble(SILENT, SMALL, replicas=3, master_seed=0)
    mc = solver.mean_check(ens)
    assert mc.max_abs_dev == 0.0 and mc.max_abs_z == 0.0


def test_mean_check_bump():
    u0 = InitialCondition(GAUSSIAN_BUMP, 0.5)
    ens = solver.run_ensemble(WHITE, SMALL, u0, replicas=200, master_seed=5)
    mc = solver.mean_check(ens)
    ref = solver.periodic_heat_kernel(0.75, SMALL)
    assert np.max(np.abs(mc.reference[-1] - ref)) < 1e-8
    assert mc.max_abs_z < 4.5


def test_ensemble_second_moment_matches_recursion(ensemble):
    m, se = solver.spatial_moment(ensemble, 0.25, 2)
    exact = solver.second_moment_recursion(WHITE, SMALL, [0.25])[0]
    assert abs(m - exact) <= 3 * se


def test_recursion_consistent_with_closed_form():
    # discretization bias at desk scale stays inside the 5% allowance
    for scheme in solver.SCHEMES:
        v = solver.second_moment_recursion(WHITE, SMALL, [0.25], scheme)[0]
        assert abs(v / chaos.white_second_moment(0.25) - 1) < 0.05


def test_recursion_zero_noise():
    assert solver.second_moment_recursion(SILENT, SMALL)[0] == pytest.approx(1.0, abs=1e-13)


def test_dt_halving_below_monte_carlo_error():
    # stderr of the space-averaged E u^2 with 2000 replicas at L = 8, t = 0.25
    mc_stderr = 0.0137
    a = solver.second_moment_recursion(WHITE, GridSpec(1, 8.0, 256, 1.25e-3, 0.25))[0]
    b = solver.second_moment_recursion(WHITE, GridSpec(1, 8.0, 256, 6.25e-4, 0.25))[0]
    assert abs(a - b) < mc_stderr


def test_euler_weak_error_scales_like_sqrt_dt():
    exact = chaos.white_second_moment(0.25)
    errs = [exact - solver.second_moment_recursion(WHITE, GridSpec(1, 8.0, 512, dt, 0.25))[0]
            for dt in (2.5e-3, 6.25e-4)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


@pytest.mark.parametrize("t", [0.25, 0.5])
def test_resolution_doubling(t):
    a = solver.second_moment_recursion(WHITE, GridSpec(1, 8.0, 256, 1e-3, t))[0]
    b = solver.second_moment_recursion(WHITE, GridSpec(1, 8.0, 512, 1e-3, t))[0]
    assert abs(a / b - 1) < 0.01


def test_replica_doubling_shrinks_stderr():
    a = solver.run_ensemble(WHITE, SMALL, replicas=100, master_seed=2)
    b = solver.run_ensemble(WHITE, SMALL, replicas=400, master_seed=2)
    ra = solver.ensemble_statistics(a)["stderr"].mean()
    rb = solver.ensemble_statistics(b)["stderr"].mean()
    assert ra / rb == pytest.approx(2.0, rel=0.2)


def test_determinism_across_workers_and_batches():
    a = solver.run_ensemble(WHITE, SMALL, replicas=10, master_seed=3, batch=3)
    b = solver.run_ensemble(WHITE, SMALL, replicas=10, master_seed=3, batch=10, workers=2)
    assert np.array_equal(a.fields, b.fields)
    c = solver.run_ensemble(WHITE, SMALL, replicas=4, master_seed=3)
    assert np.array_equal(a.fields[:4], c.fields)


def test_replica_is_function_of_seed_and_index():
    ens = solver.run_ensemble(WHITE, SMALL, replicas=6, master_seed=8)
    one = solver.solve_one_path(WHITE, SMALL, InitialCondition(), 8, replica=5)
    assert np.array_equal(ens.fields[5], one)


def test_accelerated_matches_euler_without_noise():
    u0 = InitialCondition(GAUSSIAN_BUMP, 0.2)
    a = solver.solve_one_path(SILENT, SMALL, u0, 0)
    b = solver.solve_one_path(SILENT, SMALL, u0, 0, scheme=solver.ACCELERATED)
    assert np.array_equal(a, b)


def test_two_dimensional_run():
    g = GridSpec(2, 8.0, 64, 2.5e-3, 0.25)
    spec = NoiseSpec(alphas=(-0.5, -0.5), amplitude=0.05)
    ens = solver.run_ensemble(spec, g, replicas=40, master_seed=1)
    assert ens.fields.shape == (40, 1, 64, 64)
    m, se = solver.spatial_moment(ens, 0.25, 2)
    assert abs(m - solver.second_moment_recursion(spec, g)[0]) <= 3 * se


def test_save_load_round_trip(tmp_path):
    ens = solver.run_ensemble(WHITE, SMALL, replicas=5, master_seed=4, snapshot_times=[0.05, 0.25],
                              out_dir=tmp_path / "e", scheme=solver.ACCELERATED)
    back = solver.FieldEnsemble.load(tmp_path / "e")
    assert np.array_equal(back.fields, ens.fields)
    assert back.snapshot_times == ens.snapshot_times and back.scheme == solver.ACCELERATED
    assert back.spec == WHITE and back.grid == SMALL
    raw = np.fromfile(tmp_path / "e" / store.FIELDS_FILE, dtype="<f8")
    assert np.array_equal(raw.reshape(ens.fields.shape), ens.fields)


def test_incomplete_ensemble_rejected(tmp_path):
    ens = solver.run_ensemble(WHITE, SMALL, replicas=2, master_seed=4, out_dir=tmp_path / "e")
    m = json.loads((tmp_path / "e" / store.MANIFEST_FILE).read_text())
    m["complete"] = False
    (tmp_path / "e" / store.MANIFEST_FILE).write_text(json.dumps(m))
    with pytest.raises(PersistenceError):
        solver.FieldEnsemble.load(tmp_path / "e")


def test_stats_csv(tmp_path, ensemble):
    path = solver.write_stats_csv(ensemble, tmp_path / "s.csv", timestamp="T")
    cols, rows = store.read_csv(path)
    assert tuple(cols) == solver.STATS_COLUMNS
    assert len(rows) == 2 * SMALL.N
    again = solver.write_stats_csv(ensemble, tmp_path / "t.csv", timestamp="T")
    assert path.read_bytes() == again.read_bytes()


def test_too_few_replicas():
    with pytest.raises(ConfigError):
        solver.run_ensemble(WHITE, SMALL, replicas=1)


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 50))
def test_shifted_moments_exact_for_identical_replicas(seed, r):
    f = np.random.default_rng(seed).normal(size=(1, 3, 8))
    ens = solver.FieldEnsemble(np.repeat(f, 4, axis=0), (0.1, 0.2, 0.3), SMALL, WHITE, InitialCondition(), r)
    st_ = solver.ensemble_statistics(ens)
    assert np.array_equal(st_["mean"], f[0]) and np.all(st_["var"] == 0)
