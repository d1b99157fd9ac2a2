"""Power-constrained regularised solves shared by the MISO and MIMO precoders."""

from __future__ import annotations

import numpy as np


def bisect_shift(d, c2, power_scale, power, rel_tol=1e-12, max_iter=200):
    """Smallest shift ``x >= 0`` with ``power_scale * sum(c2 / (d + x)**2) <= power``.

    ``d`` are eigenvalues of a PSD system matrix, ``c2`` the squared norms of
    the right-hand side projected on its eigenvectors. The left side is
    strictly decreasing in ``x`` unless it is identically zero.
    """
    d = np.maximum(d, 0.0)
    active = c2 > 0

    def p_of(x):
        den = d[active] + x
        if np.any(den <= 0):
            return np.inf
        return power_scale * float(np.sum(c2[active] / den ** 2))

    if p_of(0.0) <= power:
        return 0.0
    hi = 1.0
    while p_of(hi) > power:
        hi *= 2.0
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if p_of(mid) > power:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    return hi


def power_limited_solve(a, b, power_scale, power):
    """Solve ``(A + x I) X = B`` with the smallest ``x >= 0`` meeting the budget.

    The budget is ``power_scale * ||X||_F^2 <= power``. Returns ``(x, X)``.
    """
    if power == 0 or not np.any(b):
        return 0.0, np.zeros_like(b)
    d, u = np.linalg.eigh(a)
    c = u.conj().T @ b
    c2 = np.sum(np.abs(c) ** 2, axis=1)
    x = bisect_shift(d, c2, power_scale, power)
    den = np.maximum(d, 0.0) + x
    coef = np.zeros_like(c)
    nz = c2 > 0
    coef[nz] = c[nz] / den[nz, None]
    return x, u @ coef
