import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.special import gamma as G

from pamlab import chaos, specfn
from pamlab.chaos import GAUSSIAN_BUMP, POINT_MASS, InitialCondition
from pamlab.errors import ConfigError, DegenerateInputError, DomainError
from pamlab.noise import REGIME_I, REGIME_II, RIESZ, Exponents, NoiseSpec, white_preset

WHITE = white_preset(1)
ONE = InitialCondition()


# ------------------------------------------------------------------ kernels

def test_kernel_level_one():
    v = chaos.chaos_kernel_eval(1, [1e-12], [0.3], 1.0, 0.3, ONE)
    assert v == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-9)


def test_kernel_level_two():
    ref = 0.5 * specfn.heat_kernel(0.3, 0.0) * specfn.heat_kernel(0.5, 0.0)
    assert ref == pytest.approx(0.5 / (math.sqrt(0.6 * math.pi) * math.sqrt(math.pi)), rel=1e-14)
    assert ref == pytest.approx(0.2054681, abs=1e-7)
    assert chaos.chaos_kernel_eval(2, [0.2, 0.7], [0.0, 0.0], 1.0, 0.0, ONE) == pytest.approx(ref, rel=1e-14)


@given(st.integers(1, 5), st.integers(0, 10 ** 6), st.sampled_from(["one", "bump", "point"]))
def test_kernel_symmetric(n, seed, kind):
    rng = np.random.default_rng(seed)
    s = np.sort(rng.uniform(0.01, 0.99, n))
    x = rng.normal(size=n)
    u0 = {"one": ONE, "bump": InitialCondition(GAUSSIAN_BUMP, 0.5), "point": InitialCondition(POINT_MASS)}[kind]
    v = chaos.chaos_kernel_eval(n, s, x, 1.0, 0.2, u0)
    perm = rng.permutation(n)
    assert chaos.chaos_kernel_eval(n, s[perm], x[perm], 1.0, 0.2, u0) == v


def test_kernel_rejects_coincident_times():
    with pytest.raises(DegenerateInputError):
        chaos.chaos_kernel_eval(2, [0.3, 0.3], [0.0, 1.0], 1.0, 0.0, ONE)
    with pytest.raises(DomainError):
        chaos.chaos_kernel_eval(1, [1.2], [0.0], 1.0, 0.0, ONE)


def test_level_one_variance_by_quadrature():
    # n = 1, white preset: int_0^t int p_{t-s}(y)^2 dy ds = sqrt(t/pi)
    t = 0.7
    v, _ = integrate.quad(lambda s: 1 / math.sqrt(4 * math.pi * (t - s)), 0, t)
    assert v == pytest.approx(math.sqrt(t / math.pi), rel=1e-8)
    assert chaos.white_chaos_oracle(1, t) == pytest.approx(v, rel=1e-8)


def test_oracle_family_against_dirichlet_identity():
    # n! |f_n|^2 = (4 pi)^(-n/2) J_n(t, (-1/2, ..., -1/2)) for the white preset
    # (time reversed so the free gap next to s = 0 is the leftover one)
    for n in range(1, 7):
        for t in (0.25, 0.5, 1.0):
            J = specfn.simplex_integral_exact(specfn.SimplexParams(t, (-0.5,) * n))
            assert chaos.white_chaos_oracle(n, t) == pytest.approx((4 * math.pi) ** (-n / 2) * J, rel=1e-12)


def test_closed_form_values():
    assert chaos.white_chaos_oracle(1, 1.0) == pytest.approx(0.564190, abs=1e-6)
    assert chaos.white_chaos_oracle(2, 1.0) == pytest.approx(0.25, rel=1e-14)
    assert chaos.white_chaos_oracle(3, 1.0) == pytest.approx(1 / (6 * math.sqrt(math.pi)), rel=1e-13)
    assert 1 / (6 * math.sqrt(math.pi)) == pytest.approx(0.09403, abs=1e-5)


@pytest.mark.parametrize("t,ref", [(1.0, 1.9524), (0.25, 1.358642)])
def test_second_moment_closed_form(t, ref):
    series = math.fsum(chaos.white_chaos_oracle(n, t) for n in range(80))
    assert series == pytest.approx(chaos.white_second_moment(t), rel=1e-13)
    assert chaos.white_second_moment(t) == pytest.approx(ref, abs=5e-5 if t == 1.0 else 1e-6)


# ------------------------------------------------------------------ Monte Carlo variances

@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_white_variance_matches_oracle(n, t):
    e = chaos.chaos_variance(n, t, WHITE, ONE, samples=100_000, seed=100 * n + int(10 * t))
    assert abs(e.variance - chaos.white_chaos_oracle(n, t)) <= 3 * e.stderr
    assert e.variance >= 0 and e.stderr >= 0


def test_level_zero():
    e = chaos.chaos_variance(0, 1.0, WHITE, ONE, samples=10)
    assert (e.variance, e.stderr) == (1.0, 0.0)
    b = InitialCondition(GAUSSIAN_BUMP, 0.5)
    assert chaos.chaos_variance(0, 1.0, WHITE, b, samples=10).variance == pytest.approx(
        specfn.heat_kernel(1.5, 0.0) ** 2)


def test_translation_invariance():
    a = chaos.chaos_variance(2, 1.0, WHITE, ONE, samples=100_000, seed=1, x=0.0)
    b = chaos.chaos_variance(2, 1.0, WHITE, ONE, samples=100_000, seed=2, x=3.0)
    assert abs(a.variance - b.variance) <= 3 * math.hypot(a.stderr, b.stderr)


def test_variance_deterministic_and_worker_independent():
    spec = NoiseSpec(space_mode=REGIME_II, alpha=0.25, time_mode=RIESZ, alpha0=0.5)
    a = chaos.chaos_variance(2, 1.0, spec, ONE, samples=50_000, seed=4, batch=4096)
    b = chaos.chaos_variance(2, 1.0, spec, ONE, samples=50_000, seed=4, batch=4096, workers=3)
    assert (a.variance, a.stderr) == (b.variance, b.stderr)


def test_colored_level_one_by_quadrature():
    # regime i, mu = |xi|^a, riesz time, u0 = 1, n = 1:
    # int_0^t int_0^t |s - r|^-a0 int exp(-(2t - s - r)|xi|^2 / 2) |xi|^a dxi dr ds
    a0, a, t = 0.5, -0.5, 1.0
    spec = NoiseSpec(time_mode=RIESZ, alpha0=a0, alphas=(a,))
    c = G((a + 1) / 2) * 2 ** ((a + 1) / 2)

    def inner(u, v):  # u = t - s, v = t - r
        return abs(u - v) ** -a0 * c * (u + v) ** (-(a + 1) / 2)

    ref = 2 * integrate.dblquad(lambda v, u: inner(u, v), 0, t, 0, lambda u: u, epsabs=1e-10)[0]
    e = chaos.chaos_variance(1, t, spec, ONE, samples=400_000, seed=8)
    assert abs(e.variance - ref) <= 3 * e.stderr


def test_variance_preconditions():
    with pytest.raises(ConfigError):
        chaos.chaos_variance(7, 1.0, WHITE)
    with pytest.raises(ConfigError):
        chaos.chaos_variance(1, 1.0, WHITE, InitialCondition(POINT_MASS))
    with pytest.raises(ConfigError):
        chaos.chaos_variance(1, 0.0, WHITE)
    with pytest.raises(ConfigError):  # outside the hypotheses in regime ii
        chaos.chaos_variance(1, 1.0, NoiseSpec(space_mode=REGIME_II, alpha=1.2, time_mode=RIESZ, alpha0=0.5))


def test_fitted_constant_dominates():
    ests = [chaos.chaos_variance(n, 1.0, WHITE, ONE, samples=50_000, seed=n) for n in range(1, 6)]
    c = chaos.fit_bound_constant(ests, WHITE)
    for e in ests:
        assert math.log(e.variance) - chaos.log_chaos_variance_bound(e.n, 1.0, WHITE, c) <= 1e-12


# ------------------------------------------------------------------ bounds

def test_chaos_bound_examples():
    ii = Exponents(REGIME_II, 1.0, 0.5)
    assert chaos.chaos_variance_bound(2, 1.0, ii) == pytest.approx(2 ** -0.25, rel=1e-14)
    assert chaos.chaos_variance_bound(1, 1.0, Exponents(REGIME_I, 1.0, 0.0)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        chaos.chaos_variance_bound(2, 1.0, Exponents(REGIME_II, 1.0, 1.0))


@given(st.floats(0.0, 0.95), st.floats(0.05, 1.0))
def test_chaos_bound_factorial_decay(a, a0):
    ex = Exponents(REGIME_II, a0, a)
    r = [chaos.log_chaos_variance_bound(n + 1, 1.0, ex) - chaos.log_chaos_variance_bound(n, 1.0, ex)
         for n in (10, 100, 1000)]
    assert r[0] > r[1] > r[2]
    assert r[2] < 0


def test_moment_bound_examples():
    assert chaos.log_moment_bound(2, 1.0, Exponents(REGIME_II, 1.0, 0.5)) == pytest.approx(32.0)
    assert chaos.moment_bound(2, 1.0, Exponents(REGIME_I, 1.0, 0.0)) == pytest.approx(math.exp(4.0))
    with pytest.raises(DomainError):
        chaos.moment_bound(2, 1.0, Exponents(REGIME_II, 1.0, 1.0))
    assert chaos.moment_bound(200, 10.0, Exponents(REGIME_I, 1.0, 0.0)) == math.inf


exps = st.one_of(
    st.builds(lambda a0, a: Exponents(REGIME_I, a0, a), st.floats(0.05, 1.0), st.floats(0.0, 1.9)),
    st.builds(lambda a0, a: Exponents(REGIME_II, a0, a), st.floats(0.05, 1.0), st.floats(0.0, 0.9)),
)


@given(exps, st.floats(2, 20), st.floats(0.01, 5), st.floats(0, 3), st.floats(0, 3))
def test_moment_bound_monotone(ex, p, t, dp, dt):
    if 2 * ex.alpha0 + ex.alpha >= (4 if ex.regime == REGIME_I else 3):
        return
    base = chaos.log_moment_bound(p, t, ex)
    assert chaos.log_moment_bound(p + dp, t, ex) >= base - 1e-12
    assert chaos.log_moment_bound(p, t + dt, ex) >= base - 1e-12


# ------------------------------------------------------------------ second moment series

def test_second_moment_series_white():
    t = 0.25
    value, tail, ests = chaos.second_moment_series(t, WHITE, N=6, samples=100_000, seed=5)
    se = math.sqrt(sum(e.stderr ** 2 for e in ests))
    assert abs(value - chaos.white_second_moment(t)) <= 3 * se + tail
    assert value == pytest.approx(1.3587, abs=0.005)


def test_series_partial_sums_monotone():
    prev_v, prev_tail = -math.inf, math.inf
    for N in range(1, 6):
        v, tail, _ = chaos.second_moment_series(0.5, WHITE, N=N, samples=20_000, seed=3, c=1.0)
        assert v >= prev_v and tail <= prev_tail
        prev_v, prev_tail = v, tail


def test_series_small_time():
    v, tail, _ = chaos.second_moment_series(1e-8, WHITE, N=3, samples=5000, seed=1, c=1.0)
    assert v == pytest.approx(1.0, abs=1e-3)


# ------------------------------------------------------------------ initial condition decay

def test_beta_constant_one():
    beta, ok = chaos.beta_fit(ONE, WHITE)
    assert beta == 0.0 and ok


def test_beta_bump():
    beta, ok = chaos.beta_fit(InitialCondition(GAUSSIAN_BUMP, 1.0), NoiseSpec(space_mode=REGIME_II, alpha=0.5))
    assert beta == pytest.approx(0.0, abs=1e-9) and ok


def test_beta_point_mass():
    beta, ok = chaos.beta_fit(InitialCondition(POINT_MASS), NoiseSpec(space_mode=REGIME_II, alpha=0.5))
    assert beta == pytest.approx(0.5 + 0.5 / 4, abs=1e-6)
    assert not ok  # 0.625 >= 1 - alpha0 / 2 = 0.5 for white time


def test_beta_grid_must_span_three_decades():
    with pytest.raises(DomainError):
        chaos.beta_fit(ONE, WHITE, s_grid=np.logspace(-2, 0, 10))


def test_initial_condition_validation():
    with pytest.raises(ConfigError):
        InitialCondition("delta")
    with pytest.raises(ConfigError):
        InitialCondition(GAUSSIAN_BUMP)
    b = InitialCondition(GAUSSIAN_BUMP, 0.3)
    assert InitialCondition.from_dict(b.to_dict()) == b
