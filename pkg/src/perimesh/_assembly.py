"""Compiled row kernel for dense diagonal ``K`` blocks of the Hamiltonian."""

import numba
import numpy as np


@numba.njit(cache=True)
def _add(out, a, fa, idx, col, i, j, k, val):
    b = idx[i, j, k]
    if b >= 0:
        out[a, b] += fa * col[i, j, k] * val


@numba.njit(cache=True)
def diagonal_block(ax, ay, az, w, dpot, idx, col, pi, pj, out):
    """Fill ``out`` with the symmetrized block.

    Each row ``a`` is the representative ``(i >= j, k)``; every full-grid
    column is folded onto its symmetrized index with weight ``col`` (the
    exchange partner of a column carries the exchange sign).
    """
    n = ax.shape[0]
    nz = az.shape[2]
    npair = pi.shape[0]
    for pair in range(npair):
        i = pi[pair]
        j = pj[pair]
        fa = 1.0 if i != j else np.sqrt(0.5)
        for k in range(nz):
            a = pair * nz + k
            _add(out, a, fa, idx, col, i, j, k, dpot[i, j, k])
            # xx, xy (x at row), xz (x at row)
            for p in range(n):
                axr = ax[p, i, j, k]
                if axr == 0.0:
                    continue
                wxx = w[0, 0, p, j, k] * axr
                for i2 in range(n):
                    _add(out, a, fa, idx, col, i2, j, k, wxx * ax[p, i2, j, k])
                wxy = w[0, 1, p, j, k] * axr
                for j2 in range(n):
                    _add(out, a, fa, idx, col, p, j2, k, wxy * ay[p, j, j2, k])
                wxz = w[0, 2, p, j, k] * axr
                for k2 in range(nz):
                    _add(out, a, fa, idx, col, p, j, k2, wxz * az[p, j, k, k2])
            # yy, yx, yz with y at row
            for q in range(n):
                ayr = ay[i, q, j, k]
                if ayr == 0.0:
                    continue
                wyy = w[1, 1, i, q, k] * ayr
                for j2 in range(n):
                    _add(out, a, fa, idx, col, i, j2, k, wyy * ay[i, q, j2, k])
                wyx = w[0, 1, i, q, k] * ayr
                for i2 in range(n):
                    _add(out, a, fa, idx, col, i2, q, k, wyx * ax[i, i2, q, k])
                wyz = w[1, 2, i, q, k] * ayr
                for k2 in range(nz):
                    _add(out, a, fa, idx, col, i, q, k2, wyz * az[i, q, k, k2])
            # zz, zx, zy with z at row
            for r in range(nz):
                azr = az[i, j, r, k]
                if azr == 0.0:
                    continue
                wzz = w[2, 2, i, j, r] * azr
                for k2 in range(nz):
                    _add(out, a, fa, idx, col, i, j, k2, wzz * az[i, j, r, k2])
                wzx = w[0, 2, i, j, r] * azr
                for i2 in range(n):
                    _add(out, a, fa, idx, col, i2, j, r, wzx * ax[i, i2, j, r])
                wzy = w[1, 2, i, j, r] * azr
                for j2 in range(n):
                    _add(out, a, fa, idx, col, i, j2, r, wzy * ay[i, j, j2, r])
