"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def chol_solve_batch(A, g):
    """For each ``b``: ``A[b] = L L^T``, return ``z = L^{-T} g[b]`` and ``log det A[b]``.

    ``A`` has shape ``(B, k, k)``, ``g`` shape ``(B, k, d)``.  Matrices that
    are not numerically positive definite get ``logdet = nan`` and ``z = 0``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    try:
        L = np.linalg.cholesky(A)
        bad = None
    except np.linalg.LinAlgError:
        bad = np.linalg.eigvalsh(A)[:, 0] <= 0
        A = A.copy()
        A[bad] = np.eye(A.shape[1])
        L = np.linalg.cholesky(A)
    z = np.linalg.solve(np.swapaxes(L, -1, -2), g)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    if bad is not None:
        z[bad] = 0.0
        logdet[bad] = np.nan
    return z, logdet


def increment_power_sums(a, b, shift, p, lo, hi):
    """Per-row sums over ``x in [lo, hi)`` of ``|D(x)|^p`` where
    ``D(x) = a[x+shift] - a[x] - b[x+shift] + b[x]`` (periodic index).

    ``b`` may be ``None`` (single difference) and ``shift`` may be 0
    (then ``D = a[x] - b[x]``).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    idx = np.arange(lo, hi)
    if shift:
        sh = (idx + shift) % n
        d = a[:, sh] - a[:, idx]
        if b is not None:
            d -= np.asarray(b, dtype=float)[:, sh] - np.asarray(b, dtype=float)[:, idx]
    else:
        d = a[:, idx] - np.asarray(b, dtype=float)[:, idx]
    d = np.abs(d)
    if p == 2:
        return np.sum(d * d, axis=1)
    if p == 4:
        d2 = d * d
        return np.sum(d2 * d2, axis=1)
    return np.sum(d ** p, axis=1)
