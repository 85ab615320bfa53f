import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from pamlab import _backend, _kernels_py

HAVE_EXT = "cython" in _backend.available()
needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled extension not built")


def spd_batch(seed, B, k, d):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((B, k, k))
    return m @ np.swapaxes(m, -1, -2) + 0.1 * np.eye(k), rng.standard_normal((B, k, d))


def test_python_chol_against_numpy_reference():
    A, g = spd_batch(0, 20, 4, 2)
    z, logdet = _kernels_py.chol_solve_batch(A, g)
    for b in range(20):
        L = np.linalg.cholesky(A[b])
        np.testing.assert_allclose(z[b], np.linalg.solve(L.T, g[b]), rtol=1e-10, atol=1e-12)
        assert logdet[b] == pytest.approx(np.linalg.slogdet(A[b])[1], rel=1e-12)


def test_python_chol_flags_indefinite():
    A, g = spd_batch(1, 3, 3, 1)
    A[1] = -np.eye(3)
    z, logdet = _kernels_py.chol_solve_batch(A, g)
    assert np.isnan(logdet[1]) and np.all(z[1] == 0)
    assert np.isfinite(logdet[[0, 2]]).all()


def test_python_increment_sums_against_loop():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((3, 40)), rng.standard_normal((3, 40))
    lo, hi, s = 10, 30, 4
    got = _kernels_py.increment_power_sums(a, b, s, 2.0, lo, hi)
    ref = [sum((a[r, x + s] - a[r, x] - b[r, x + s] + b[r, x]) ** 2 for x in range(lo, hi)) for r in range(3)]
    np.testing.assert_allclose(got, ref, rtol=1e-12)
    got = _kernels_py.increment_power_sums(a, None, s, 4.0, lo, hi)
    ref = [sum((a[r, x + s] - a[r, x]) ** 4 for x in range(lo, hi)) for r in range(3)]
    np.testing.assert_allclose(got, ref, rtol=1e-12)
    got = _kernels_py.increment_power_sums(a, b, 0, 2.0, lo, hi)
    np.testing.assert_allclose(got, ((a - b)[:, lo:hi] ** 2).sum(axis=1), rtol=1e-12)


@needs_ext
@given(st.integers(0, 10**6), st.integers(1, 50), st.integers(1, 6), st.integers(1, 3))
def test_chol_backends_agree(seed, B, k, d):
    A, g = spd_batch(seed, B, k, d)
    outs = {}
    for which in ("python", "cython"):
        with _backend.use_backend(which):
            outs[which] = _backend.kernels().chol_solve_batch(A, g)
    for x, y in zip(outs["python"], outs["cython"]):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)


@needs_ext
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(8, 200), st.integers(0, 7),
       st.sampled_from([2, 4]), st.booleans())
def test_increment_backends_agree(seed, rows, n, shift, p, single):
    assume(shift % n or not single)  # no increment is defined without a lag or a second field
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, n))
    b = None if single else rng.standard_normal((rows, n))
    lo, hi = n // 4, n // 4 + n // 2
    outs = {}
    for which in ("python", "cython"):
        with _backend.use_backend(which):
            outs[which] = _backend.kernels().increment_power_sums(a, b, shift % n, float(p), lo, hi)
    np.testing.assert_allclose(outs["python"], outs["cython"], rtol=1e-12, atol=1e-300)


def test_use_backend_switches_and_restores():
    before = _backend.name()
    with _backend.use_backend("python"):
        assert _backend.name() == "python" and _backend.kernels() is _kernels_py
    assert _backend.name() == before
    with pytest.raises(ValueError):
        with _backend.use_backend("fortran"):
            pass
    assert _backend.name() == before


@needs_ext
def test_extension_is_default_when_built():
    assert _backend.name() == "cython"
