"""JIT-compiled hot loops for the structured stage solver.

The sweep kernel performs one block sweep over the horizon (Jacobi order,
forward, or backward), solving each stage system by Schur elimination onto
the input block with fixed-count Jacobi inner iterations. It only handles
the structured problem class (first-order-in-time field dynamics, diagonal
cost Hessians, input-only affine constraints, u-independent PDE
coefficients); everything else goes through the reference path in
``lower.py``. All data arrives as plain arrays so the kernel is free of
Python-object traffic.
"""

import numpy as np
from numba import njit

# coupling modes for the sweep
COUPLE_NONE = 0
COUPLE_FORWARD = 1   # subtract previous stage's dx from the state-equation rhs
COUPLE_BACKWARD = 2  # subtract next stage's dlam from the costate-equation rhs


@njit(cache=True)
def _gather_rows(idx, coef, v, out):
    n, k = idx.shape
    for j in range(n):
        acc = 0.0
        for t in range(k):
            acc += coef[j, t] * v[idx[j, t]]
        out[j] = acc


@njit(cache=True)
def _fx_solve(b, fx_diag, fgh_h, soff_idx, soff_coef, iters, v, tmp):
    """Jacobi sweeps for (h J - I) v = b from the diagonal-solve guess."""
    n = b.shape[0]
    for j in range(n):
        v[j] = b[j] / fx_diag[j]
    for _ in range(iters):
        _gather_rows(soff_idx, soff_coef, v, tmp)
        for j in range(n):
            v[j] = (b[j] - fgh_h[j] * tmp[j]) / fx_diag[j]


@njit(cache=True)
def _fxt_solve(b, fx_diag, fgh_h, sofft_idx, sofft_coef, iters, v, tmp, scaled):
    """Jacobi sweeps for (h J - I)^T v = b."""
    n = b.shape[0]
    for j in range(n):
        v[j] = b[j] / fx_diag[j]
    for _ in range(iters):
        for j in range(n):
            scaled[j] = fgh_h[j] * v[j]
        _gather_rows(sofft_idx, sofft_coef, scaled, tmp)
        for j in range(n):
            v[j] = (b[j] - tmp[j]) / fx_diag[j]


@njit(cache=True)
def _axx_apply(v, axx_diag, axx_w, soff_idx, soff_coef, sofft_idx, sofft_coef,
               out, tmp, scaled):
    n = v.shape[0]
    _gather_rows(soff_idx, soff_coef, v, tmp)
    for j in range(n):
        scaled[j] = axx_w[j] * v[j]
    _gather_rows(sofft_idx, sofft_coef, scaled, out)
    for j in range(n):
        out[j] += axx_diag[j] * v[j] + axx_w[j] * tmp[j]


@njit(cache=True)
def sweep_structured(out, rhs, mode, omega,
                     fx_diag, fgh_h, axx_diag, axx_w, auu_diag,
                     soff_idx, soff_coef, sofft_idx, sofft_coef,
                     su_idx, su_coef, sut_idx, sut_coef,
                     inner_iters, schur_iters,
                     i_start, i_stop):
    """One block sweep over stages [i_start, i_stop).

    rhs rows are stacked (state-eq, input, costate-eq); out rows are the
    stage directions (dx, du, dlam). mode selects the neighbor coupling and
    omega scales it (successive over-relaxation uses omega != 1).
    """
    N = rhs.shape[0]
    n_w = fx_diag.shape[1]
    n_u = auu_diag.shape[1]

    b1 = np.empty(n_w)
    b2 = np.empty(n_w)
    b3 = np.empty(n_u)
    v3 = np.empty(n_u)
    v4 = np.empty(n_w)
    v5 = np.empty(n_w)
    y1 = np.empty(n_w)
    r2 = np.empty(n_w)
    ax = np.empty(n_w)
    tmp = np.empty(n_w)
    scaled = np.empty(n_w)
    tu = np.empty(n_u)

    step = 1 if mode != COUPLE_BACKWARD else -1
    i = i_start
    while i != i_stop:
        for j in range(n_w):
            b1[j] = rhs[i, j]
        for k in range(n_u):
            b3[k] = rhs[i, n_w + k]
        for j in range(n_w):
            b2[j] = rhs[i, n_w + n_u + j]
        if mode == COUPLE_FORWARD and i > 0:
            for j in range(n_w):
                b1[j] -= omega * out[i - 1, j]
        elif mode == COUPLE_BACKWARD and i < N - 1:
            for j in range(n_w):
                b2[j] -= omega * out[i + 1, n_w + n_u + j]

        # Schur fixed point on the input block: A_uu v3 = b3 + [Fu' Aux] T^-1 ([Fu; Axu] v3 - [b1; b2])
        for k in range(n_u):
            v3[k] = b3[k] / auu_diag[i, k]
        for _ in range(schur_iters):
            _gather_rows(su_idx, su_coef, v3, y1)
            for j in range(n_w):
                y1[j] = fgh_h[i, j] * y1[j] - b1[j]
            _fx_solve(y1, fx_diag[i], fgh_h[i], soff_idx, soff_coef,
                      inner_iters, v5, tmp)
            _axx_apply(v5, axx_diag[i], axx_w[i], soff_idx, soff_coef,
                       sofft_idx, sofft_coef, ax, tmp, scaled)
            for j in range(n_w):
                r2[j] = -b2[j] - ax[j]
            _fxt_solve(r2, fx_diag[i], fgh_h[i], sofft_idx, sofft_coef,
                       inner_iters, v4, tmp, scaled)
            for j in range(n_w):
                scaled[j] = fgh_h[i, j] * v4[j]
            _gather_rows(sut_idx, sut_coef, scaled, tu)
            for k in range(n_u):
                v3[k] = (b3[k] + tu[k]) / auu_diag[i, k]

        # back substitution: T [v4; v5] = [b1; b2] - [Fu; Axu] v3
        _gather_rows(su_idx, su_coef, v3, y1)
        for j in range(n_w):
            y1[j] = b1[j] - fgh_h[i, j] * y1[j]
        _fx_solve(y1, fx_diag[i], fgh_h[i], soff_idx, soff_coef,
                  inner_iters, v5, tmp)
        _axx_apply(v5, axx_diag[i], axx_w[i], soff_idx, soff_coef,
                   sofft_idx, sofft_coef, ax, tmp, scaled)
        for j in range(n_w):
            r2[j] = b2[j] - ax[j]
        _fxt_solve(r2, fx_diag[i], fgh_h[i], sofft_idx, sofft_coef,
                   inner_iters, v4, tmp, scaled)

        for j in range(n_w):
            out[i, j] = v5[j]
        for k in range(n_u):
            out[i, n_w + k] = v3[k]
        for j in range(n_w):
            out[i, n_w + n_u + j] = v4[j]
        i += step


