import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamlab import _backend, holder, solver
from pamlab.errors import ConfigError, DomainError, RegressionError
from pamlab.holder import RECTANGULAR, SPACE_MARGINAL, TIME_MARGINAL, IncrementTable
from pamlab.noise import REGIME_I, REGIME_II, Exponents, GridSpec, NoiseSpec, white_preset

WHITE = white_preset(1)


def product_ensemble(grid, times, replicas=3):
    """Deterministic field ``u(t, x) = t x``: every rectangular increment is ``dt dx``."""
    x = grid.coords()
    f = np.stack([np.outer(times, x)] * replicas)
    return solver.FieldEnsemble(f, tuple(times), grid, None, None, 0)


def power_table(a0, a1, p=2, noise=None):
    rows = []
    for i, dt in enumerate(np.geomspace(1e-3, 1e-1, 5)):
        for j, dx in enumerate(np.geomspace(0.01, 0.2, 5)[(i % 2)::1]):
            v = dt ** (p * a0) * dx ** (p * a1)
            if noise is not None:
                v *= math.exp(noise[(5 * i + j) % len(noise)])
            rows.append((dt, dx, p, v, 0.0))
    return IncrementTable(RECTANGULAR, rows)


# ---------------------------------------------------------------- moments on exact fields

@pytest.mark.parametrize("p", [2, 4])
def test_product_field_rectangular_moment(p):
    grid = GridSpec(1, 10.0, 64, 0.01, 1.0)
    ens = product_ensemble(grid, [0.5, 0.75, 1.0])
    lags = [(0.25, grid.dx), (0.5, 3 * grid.dx), (0.25, 5 * grid.dx)]
    tab = holder.increment_moments(ens, lags, RECTANGULAR, p)
    for (dtl, dxl, q, est, se) in tab.rows:
        assert q == p
        assert est == pytest.approx((dtl * dxl) ** p, rel=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12 * est)


def test_product_field_marginals():
    grid = GridSpec(1, 10.0, 64, 0.01, 1.0)
    ens = product_ensemble(grid, [0.5, 1.0])
    lo, hi = grid.N // 4, grid.N // 4 + grid.N // 2
    x = grid.coords()[lo:hi]
    tm = holder.increment_moments(ens, [(0.5, 0.0)], TIME_MARGINAL)
    assert tm.rows[0][3] == pytest.approx(np.mean((0.5 * x) ** 2), rel=1e-12)
    sm = holder.increment_moments(ens, [(0.0, 2 * grid.dx)], SPACE_MARGINAL)
    assert sm.rows[0][3] == pytest.approx((2 * grid.dx) ** 2, rel=1e-12)


def test_two_dimensional_rows():
    grid = GridSpec(2, 10.0, 64, 0.01, 1.0)
    x = grid.coords()
    f = np.stack([np.stack([t * np.broadcast_to(x, (64, 64)) for t in (0.5, 1.0)])] * 2)
    ens = solver.FieldEnsemble(f, (0.5, 1.0), grid, None, None, 0)
    tab = holder.increment_moments(ens, [(0.5, grid.dx)], RECTANGULAR)
    assert tab.rows[0][3] == pytest.approx((0.5 * grid.dx) ** 2, rel=1e-12)


def test_fractional_sheet_moments_match_covariance():
    grid = GridSpec(1, 10.0, 128, 0.01, 1.0)
    times = [0.5, 0.75, 1.0]
    ens = holder.fractional_sheet(0.3, 0.6, grid, times, 400, seed=4)
    for dtl, m in ((0.25, 2), (0.5, 8)):
        tab = holder.increment_moments(ens, [(dtl, m * grid.dx)], RECTANGULAR)
        _, dxl, _, est, se = tab.rows[0]
        exact = dtl ** 0.6 * dxl ** 1.2
        assert abs(est - exact) < 4 * se


def test_fractional_sheet_exponent_recovery():
    grid = GridSpec(1, 16.0, 512, 1e-3, 1.0)
    design = holder.lag_design(grid)
    ens = holder.fractional_sheet(0.3, 0.6, grid, design.snapshot_times(), 60, seed=9)
    rep = holder.analyze(ens, design)
    rc = rep.fits[RECTANGULAR]
    assert rc.alpha0_hat == pytest.approx(0.3, abs=0.05)
    assert rc.alpha_hat == pytest.approx(0.6, abs=0.05)
    assert rep.fits[TIME_MARGINAL].alpha0_hat == pytest.approx(0.3, abs=0.05)
    assert rep.fits[SPACE_MARGINAL].alpha_hat == pytest.approx(0.6, abs=0.05)
    assert rep.B is None


def test_fractional_sheet_rejects_bad_input():
    grid = GridSpec(1, 10.0, 64, 0.01, 1.0)
    with pytest.raises(DomainError):
        holder.fractional_sheet(1.2, 0.5, grid, [0.5, 1.0], 2, seed=0)
    with pytest.raises(DomainError):
        holder.fractional_sheet(0.3, 0.5, grid, [0.0, 1.0], 2, seed=0)
    with pytest.raises(ConfigError):
        holder.fractional_sheet(0.3, 0.5, GridSpec(2, 10.0, 64, 0.01, 1.0), [0.5, 1.0], 2, seed=0)


def test_backends_agree_on_moments():
    if "cython" not in _backend.available():
        pytest.skip("compiled extension not built")
    grid = GridSpec(1, 10.0, 128, 0.01, 1.0)
    ens = holder.fractional_sheet(0.4, 0.5, grid, [0.5, 1.0], 20, seed=1)
    lags = [(0.5, k * grid.dx) for k in (1, 3, 7)]
    out = {}
    for b in ("python", "cython"):
        with _backend.use_backend(b):
            out[b] = holder.increment_moments(ens, lags, RECTANGULAR, 4).array()
    np.testing.assert_allclose(out["python"], out["cython"], rtol=1e-12)


def test_workers_do_not_change_moments():
    grid = GridSpec(1, 10.0, 128, 0.01, 1.0)
    ens = holder.fractional_sheet(0.4, 0.5, grid, [0.5, 1.0], 30, seed=2)
    lags = [(0.5, k * grid.dx) for k in (1, 3)]
    a = holder.increment_moments(ens, lags, RECTANGULAR, workers=1).array()
    b = holder.increment_moments(ens, lags, RECTANGULAR, workers=3).array()
    np.testing.assert_allclose(a, b, rtol=1e-13)


# ---------------------------------------------------------------- validation

def test_increment_validation():
    grid = GridSpec(1, 10.0, 64, 0.01, 1.0)
    ens = product_ensemble(grid, [0.5, 1.0])
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, 0.3 * grid.dx)], RECTANGULAR)  # off the lattice
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, grid.dx)], RECTANGULAR, p=3)
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.3, grid.dx)], RECTANGULAR)  # 0.7 is not a snapshot
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, 16 * grid.dx)], RECTANGULAR)  # periodicity guard
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.0, grid.dx)], RECTANGULAR)
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, grid.dx)], TIME_MARGINAL)
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, grid.dx)], SPACE_MARGINAL)
    with pytest.raises(ConfigError):
        holder.increment_moments(ens, [(0.5, grid.dx)], "diagonal")


def test_lag_design_properties():
    grid = GridSpec(1, 16.0, 512, 1e-3, 1.0)
    d = holder.lag_design(grid)
    for lags, unit in ((d.time_lags, grid.dt), (d.space_lags, grid.dx)):
        assert max(lags) >= 10 * min(lags) * (1 - 1e-9)
        assert all(abs(v / unit - round(v / unit)) < 1e-6 for v in lags)
        assert list(lags) == sorted(set(lags))
    rx = [h for _, h in d.rect_lags]
    assert max(rx) >= 10 * min(rx) * (1 - 1e-9)
    assert max(rx) <= grid.L / 16 + 1e-12
    assert d.base_time == grid.T
    assert d.snapshot_times()[-1] == grid.T
    assert set(round(grid.T - t, 12) for t in d.time_lags) <= set(d.snapshot_times())


@pytest.mark.parametrize("grid, field", [
    (GridSpec(1, 16.0, 512, 1e-2, 1.0), "holder.t_min"),
    (GridSpec(1, 16.0, 256, 1e-3, 1.0), "holder.h_max"),
])
def test_lag_design_span_errors(grid, field):
    with pytest.raises(ConfigError) as exc:
        holder.lag_design(grid)
    assert field in exc.value.fields


def test_lag_design_narrow_diagonals():
    grid = GridSpec(1, 16.0, 512, 1e-3, 1.0)
    with pytest.raises(ConfigError) as exc:
        holder.lag_design(grid, diagonals=(1.0,))
    assert "holder.diagonals" in exc.value.fields


# ---------------------------------------------------------------- regression

def test_exact_power_law_recovered():
    fit = holder.fit_exponents(power_table(0.25, 0.5))
    assert fit.alpha0_hat == pytest.approx(0.25, abs=1e-12)
    assert fit.alpha_hat == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.reported
    assert all(c > 0 for c in fit.ci)
    assert fit.exponent_sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_power_law_p4():
    fit = holder.fit_exponents(power_table(0.2, 0.7, p=4))
    assert (fit.alpha0_hat, fit.alpha_hat) == pytest.approx((0.2, 0.7), abs=1e-12)


@given(st.lists(st.floats(-0.01, 0.01), min_size=25, max_size=25),
       st.floats(0.05, 0.45), st.floats(0.05, 0.95))
def test_noisy_power_law_within_ci(noise, a0, a1):
    fit = holder.fit_exponents(power_table(a0, a1, noise=noise))
    # 1% multiplicative noise over two decades moves a slope by well under 0.01
    assert abs(fit.alpha0_hat - a0) < 0.01 + 1e-9
    assert abs(fit.alpha_hat - a1) < 0.01 + 1e-9
    assert abs(fit.alpha0_hat - a0) <= fit.ci[0] + 5e-3
    assert abs(fit.alpha_hat - a1) <= fit.ci[1] + 5e-3


def test_marginal_fits():
    rows = [(dt, 0.0, 2, dt ** 0.5, 0.0) for dt in np.geomspace(1e-3, 1e-1, 6)]
    fit = holder.fit_exponents(IncrementTable(TIME_MARGINAL, rows))
    assert fit.alpha0_hat == pytest.approx(0.25, abs=1e-12) and fit.alpha_hat is None
    assert fit.exponent_sum() is None
    rows = [(0.0, h, 2, h ** 1.0, 0.0) for h in np.geomspace(0.01, 0.2, 6)]
    fit = holder.fit_exponents(IncrementTable(SPACE_MARGINAL, rows))
    assert fit.alpha_hat == pytest.approx(0.5, abs=1e-12) and fit.alpha0_hat is None


def test_regression_errors():
    with pytest.raises(RegressionError):  # three lags
        holder.fit_exponents(IncrementTable(TIME_MARGINAL, [(t, 0.0, 2, t, 0.0) for t in (0.01, 0.03, 0.1)]))
    with pytest.raises(RegressionError):  # less than a decade
        holder.fit_exponents(IncrementTable(TIME_MARGINAL, [(t, 0.0, 2, t, 0.0)
                                                            for t in np.geomspace(0.01, 0.05, 6)]))
    diag = [(t, 2 * t, 2, t, 0.0) for t in np.geomspace(1e-3, 1e-1, 6)]
    with pytest.raises(RegressionError):  # dx proportional to dt
        holder.fit_exponents(IncrementTable(RECTANGULAR, diag))
    with pytest.raises(RegressionError):
        holder.fit_exponents(IncrementTable(TIME_MARGINAL, []))
    with pytest.raises(RegressionError):
        holder.fit_exponents(IncrementTable(TIME_MARGINAL, [(t, 0.0, 2, 0.0, 0.0)
                                                            for t in np.geomspace(1e-3, 1e-1, 5)]))


def test_poor_fit_not_reported():
    rows = [(t, 0.0, 2, v, 0.0) for t, v in zip(np.geomspace(1e-3, 1e-1, 6), [1, 5, 0.2, 3, 0.1, 2])]
    fit = holder.fit_exponents(IncrementTable(TIME_MARGINAL, rows))
    assert fit.r2 < holder.R2_MIN and not fit.reported


# ---------------------------------------------------------------- theory

def test_predicted_region_values():
    assert holder.predicted_region(WHITE)[0] == pytest.approx(0.5)
    assert holder.predicted_region(NoiseSpec(alpha0=1.0, space_mode=REGIME_II, alpha=0.25))[0] \
        == pytest.approx(0.375)
    B, check = holder.predicted_region(NoiseSpec(time_mode="riesz", alpha0=0.5, space_mode=REGIME_II,
                                                 alpha=0.5))
    assert B == pytest.approx(0.75)
    assert check(0.2, 0.3) and not check(0.3, 0.2)


def test_chaos_increment_bound_value():
    ex = Exponents(REGIME_I, 1.0, 0.0)
    assert holder.predicted_region(ex)[0] == pytest.approx(1.0)
    v = holder.chaos_increment_bound(1, 1.0, 0.5, 0.0, 0.1, ex, 0.2, 0.1)
    assert v == pytest.approx(0.5 ** 0.4 * 0.1 ** 0.2, rel=1e-12)
    assert v == pytest.approx(0.4781762, abs=1e-7)


def test_chaos_increment_bound_edges():
    flat = Exponents(REGIME_I, 1.0, 0.0)
    assert holder.chaos_increment_bound(3, 1.0, 1.0, 0.0, 0.1, flat, 0.2, 0.1) == 0.0
    assert holder.chaos_increment_bound(3, 1.0, 0.5, 0.2, 0.2, flat, 0.2, 0.1) == 0.0
    with pytest.raises(DomainError):
        holder.chaos_increment_bound(1, 1.0, 0.5, 0.0, 0.1, flat, 0.3, 0.5)
    with pytest.raises(DomainError):
        holder.chaos_increment_bound(1, 0.5, 1.0, 0.0, 0.1, flat, 0.2, 0.1)
    with pytest.raises(DomainError):
        holder.chaos_increment_bound(-1, 1.0, 0.5, 0.0, 0.1, flat, 0.2, 0.1)


def test_chaos_increment_bound_summable():
    spec = NoiseSpec(alpha0=1.0, space_mode=REGIME_II, alpha=0.5)
    b = [holder.chaos_increment_bound(n, 1.0, 0.5, 0.0, 0.3, spec, 0.05, 0.1) for n in range(400)]
    ratios = [b[n + 1] / b[n] for n in (50, 150, 350)]
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[-1] < 1
    assert math.isfinite(math.fsum(b))


# ---------------------------------------------------------------- files

def test_increment_table_csv_round_trip(tmp_path):
    tab = power_table(0.25, 0.5)
    tab.to_csv(tmp_path / "inc.csv")
    back = IncrementTable.from_csv(tmp_path / "inc.csv")
    assert back.mode == tab.mode
    np.testing.assert_array_equal(back.array(), tab.array())


def test_increment_table_rejects_bad_rows(tmp_path):
    from pamlab.errors import StatisticsError

    with pytest.raises(StatisticsError):
        IncrementTable(TIME_MARGINAL, [(0.1, 0.0, 2, -1.0, 0.0)])
    with pytest.raises(ConfigError):
        IncrementTable(RECTANGULAR, [(0.1, 0.0, 2, 1.0, 0.0)])
    (tmp_path / "x.csv").write_text("# t\na,b\n1,2\n")
    with pytest.raises(ConfigError):
        IncrementTable.from_csv(tmp_path / "x.csv")


def test_fits_csv_round_trip(tmp_path):
    fits = [holder.fit_exponents(power_table(0.25, 0.5)),
            holder.fit_exponents(IncrementTable(TIME_MARGINAL, [(t, 0.0, 2, t, 0.0)
                                                                for t in np.geomspace(1e-3, 1e-1, 5)]))]
    holder.write_fits_csv(fits, tmp_path / "fits.csv")
    back = holder.read_fits_csv(tmp_path / "fits.csv")
    assert [f.mode for f in back] == [RECTANGULAR, TIME_MARGINAL]
    assert back[0].alpha0_hat == fits[0].alpha0_hat and back[0].alpha_hat == fits[0].alpha_hat
    assert back[0].lags_used == fits[0].lags_used
    assert back[1].alpha_hat is None and back[1].alpha0_hat == fits[1].alpha0_hat


# ---------------------------------------------------------------- white ensemble

@pytest.fixture(scope="module")
def white_ensemble():
    grid = GridSpec(1, 16.0, 512, 1e-3, 1.0)
    design = holder.lag_design(grid)
    ens = solver.run_ensemble(WHITE, grid, replicas=40, master_seed=2024,
                              snapshot_times=design.snapshot_times(), scheme=solver.ACCELERATED)
    return ens, design


def test_white_rectangular_sum_near_bound(white_ensemble, tmp_path):
    ens, design = white_ensemble
    rep = holder.analyze(ens, design)
    s = rep.summary()
    assert s["B"] == pytest.approx(0.5)
    assert 0 < s["sum_rect"] <= s["B"] + 0.1
    assert rep.fits[RECTANGULAR].reported
    files = holder.write_gnuplot(rep, tmp_path / "gp")
    assert {f.name for f in files} == {"rectangular_time.dat", "rectangular_space.dat",
                                       "time_marginal_time.dat", "space_marginal_space.dat"}
    lines = files[0].read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 1 + len(rep.tables[files[0].stem.rsplit("_", 1)[0]].rows)


def test_white_moments_increase_with_lag(white_ensemble):
    ens, design = white_ensemble
    tab = holder.increment_moments(ens, [(0.0, h) for h in design.space_lags], SPACE_MARGINAL)
    a = tab.array()
    for i in range(len(a) - 1):
        assert a[i + 1, 3] >= a[i, 3] - 2 * math.hypot(a[i, 4], a[i + 1, 4])


def test_white_halves_agree(white_ensemble):
    """Shifting the window by a quarter period compares the left and right
    halves of the domain; translation invariance says they agree."""
    ens, design = white_ensemble
    N = ens.grid.N
    halves = [solver.FieldEnsemble(np.roll(ens.fields, s, axis=-1), ens.snapshot_times, ens.grid,
                                   ens.spec, ens.u0, ens.master_seed) for s in (N // 4, -N // 4)]
    for mode, lags in ((SPACE_MARGINAL, [(0.0, h) for h in design.space_lags[::2]]),
                       (TIME_MARGINAL, [(t, 0.0) for t in design.time_lags[::2]])):
        a, b = (holder.increment_moments(h, lags, mode).array() for h in halves)
        z = np.abs(a[:, 3] - b[:, 3]) / np.hypot(a[:, 4], b[:, 4])
        assert np.all(z < 3), z
