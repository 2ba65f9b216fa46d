"""Structured stage solver: Schur elimination onto the input block.

Each stage system D ds = r is reordered to

    [ 0     F_x   F_u  ] [dlam]   [r_x  ]
    [ F_x'  A_xx  A_xu ] [dx  ] = [r_lam]
    [ F_u'  A_ux  A_uu ] [du  ]   [r_u  ]

with F_x = h df/dx - I. The input block du is obtained from a fixed-point
iteration that exploits the dominant (diagonal) A_uu, each pass costing one
saddle solve with the leading 2x2 block; that saddle solve reduces to one
F_x and one F_x' system, solved by a fixed number of Jacobi sweeps. For
second-order-in-time dynamics the F_x solve eliminates the field component
first and Jacobi-iterates on h dg/dwdot - I + h^2 dg/dw.

``mode="exact"`` replaces the whole stage solve by a dense LU factorization
of the original ordering; it is the correctness oracle and the fallback for
problem classes outside the structured fast path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import SingularStageError, ZeroDiagonalError
from .ocp import IterateData, StageBlock
from .pde import _gather

Array = np.ndarray


@dataclass
class StageSolveConfig:
    """Iteration counts for the structured solve; exact mode is the oracle."""

    inner_jacobi_iters: int = 2
    schur_iters: int = 2
    mode: str = "iterative"   # "iterative" or "exact"

    def __post_init__(self):
        if self.inner_jacobi_iters < 1 or self.schur_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.mode not in ("iterative", "exact"):
            raise ValueError(f"unknown stage-solve mode {self.mode!r}")


@dataclass
class StageWorkspace:
    """Preallocated scratch for one stage solve (reference path)."""

    n_x: int
    n_u: int

    def __post_init__(self):
        self.v1 = np.empty(self.n_x)
        self.v2 = np.empty(self.n_x)
        self.v3 = np.empty(self.n_u)
        self.b1 = np.empty(self.n_x)
        self.b2 = np.empty(self.n_x)
        self.b3 = np.empty(self.n_u)


def jacobi_linear_solve(diag: Array, off_diag_apply: Callable[[Array], Array],
                        b: Array, iters: int) -> Array:
    """Fixed-sweep Jacobi iteration v <- D^-1 (b - offdiag v), v0 = D^-1 b."""
    zero = np.nonzero(diag == 0.0)[0]
    if zero.size:
        raise ZeroDiagonalError(int(zero[0]), "Jacobi system")
    v = b / diag
    for _ in range(iters):
        v = (b - off_diag_apply(v)) / diag
    return v


# ---------------------------------------------------------------------------
# reference per-stage operations built on a StageBlock
# ---------------------------------------------------------------------------

class _StageOps:
    """Callable views of the reordered stage blocks (reference path)."""

    def __init__(self, block: StageBlock):
        self.block = block
        sys = block.prob.sys
        self.sys = sys
        self.h = block.h
        self.n_x, self.n_u = block.n_x, block.n_u
        u, x, pd = block.u, block.x, block.pd
        self._u, self._x, self._pd = u, x, pd
        self.st = getattr(sys, "stencil", None)

        if sys.time_order == 1:
            self.eq_diag = self.h * sys.diag_dfdx(u, x, pd=pd) - 1.0
        else:
            # h dg/dwdot - I + h^2 dg/dw, the eliminated second-order system
            self.eq_diag = self.h * pd.gwd_diag - 1.0 + self.h ** 2 * pd.jdiag

    # F_x and F_x^T solves -------------------------------------------------

    def fx_apply(self, v):
        return self.h * self.sys.apply_dfdx(self._u, self._x, v, pd=self._pd) - v

    def fxT_apply(self, v):
        return self.h * self.sys.apply_dfdx_T(self._u, self._x, v, pd=self._pd) - v

    def _check_diag(self):
        zero = np.nonzero(self.eq_diag == 0.0)[0]
        if zero.size:
            raise ZeroDiagonalError(int(zero[0]), "stage field system")

    def fx_solve(self, b, iters):
        self._check_diag()
        pd, st, h = self._pd, self.st, self.h
        if self.sys.time_order == 1:
            def off(v):
                return self.fx_apply(v) - self.eq_diag * v
            return jacobi_linear_solve(self.eq_diag, off, b, iters)
        # second order: unknowns (v6, v7) over (field, rate) blocks
        n_w = self.sys.n_w
        b6, b7 = b[:n_w], b[n_w:]

        def gw_apply(v):
            return pd.jdiag * v + pd.fgh * _gather(st.soff_idx, st.soff_coef, v)

        def off_full(v):
            # off-diagonal of h dg/dwdot - I + h^2 dg/dw (dg/dwdot is diagonal)
            return h ** 2 * (gw_apply(v) - pd.jdiag * v)

        rhs7 = b7 + h * gw_apply(b6)
        v7 = jacobi_linear_solve(self.eq_diag, off_full, rhs7, iters)
        v6 = h * v7 - b6
        return np.concatenate([v6, v7])

    def fxT_solve(self, b, iters):
        self._check_diag()
        pd, st, h = self._pd, self.st, self.h
        if self.sys.time_order == 1:
            def off(v):
                return self.fxT_apply(v) - self.eq_diag * v
            return jacobi_linear_solve(self.eq_diag, off, b, iters)
        n_w = self.sys.n_w
        b6, b7 = b[:n_w], b[n_w:]

        def gwT_apply(v):
            return pd.jdiag * v + _gather(st.sofft_idx, st.sofft_coef, pd.fgh * v)

        def off_full(v):
            return h ** 2 * (gwT_apply(v) - pd.jdiag * v)

        rhs7 = b7 + h * b6
        v7 = jacobi_linear_solve(self.eq_diag, off_full, rhs7, iters)
        v6 = h * gwT_apply(v7) - b6
        return np.concatenate([v6, v7])

    # Hamiltonian Hessian blocks and input coupling -------------------------

    def axx(self, v):
        return self.h * self.block._hess_apply("xx", v)

    def axu(self, vu):
        return self.h * self.block._hess_apply("xu", vu)

    def aux(self, vx):
        return self.h * self.block._hess_apply("ux", vx)

    def fu(self, vu):
        return self.h * self.sys.apply_dfdu(self._u, self._x, vu, pd=self._pd)

    def fuT(self, w):
        return self.h * self.sys.apply_dfdu_T(self._u, self._x, w, pd=self._pd)

    def auu_matrix(self):
        n_u = self.n_u
        A = np.empty((n_u, n_u))
        eye = np.eye(n_u)
        for k in range(n_u):
            A[:, k] = self.h * self.block._hess_apply("uu", eye[k]) \
                + self.block.gamma * eye[k]
        return A


def _inner_solve_ops(ops: _StageOps, b4: Array, b5: Array,
                     cfg: StageSolveConfig) -> tuple:
    v5 = ops.fx_solve(np.asarray(b4, float), cfg.inner_jacobi_iters)
    v4 = ops.fxT_solve(np.asarray(b5, float) - ops.axx(v5), cfg.inner_jacobi_iters)
    return v4, v5


def inner_solve(block: StageBlock, b4: Array, b5: Array,
                cfg: StageSolveConfig) -> tuple:
    """Solve the leading saddle block [[0, F_x], [F_x', A_xx]] [v4; v5] = [b4; b5]."""
    return _inner_solve_ops(_StageOps(block), b4, b5, cfg)


def solve_stage(block: StageBlock, rhs: Array, cfg: StageSolveConfig,
                ws: Optional[StageWorkspace] = None) -> Array:
    """Solve the stage system D ds = rhs; rhs stacked (state, input, costate)."""
    n_x, n_u = block.n_x, block.n_u
    rhs = np.asarray(rhs, dtype=float)
    if cfg.mode == "exact":
        D = block.dense()
        try:
            lu, piv = sla.lu_factor(D)
        except (ValueError, sla.LinAlgError) as exc:
            raise SingularStageError(block.i, str(exc)) from exc
        if not np.all(np.isfinite(lu)) or np.any(np.diag(lu) == 0.0):
            raise SingularStageError(block.i, "singular dense factorization")
        return sla.lu_solve((lu, piv), rhs)

    ops = _StageOps(block)
    b1 = rhs[:n_x]
    b3 = rhs[n_x:n_x + n_u]
    b2 = rhs[n_x + n_u:]

    auu = ops.auu_matrix()
    zero = np.nonzero(np.diag(auu) == 0.0)[0]
    if zero.size:
        raise ZeroDiagonalError(int(zero[0]), f"A_uu at stage {block.i}")
    diag_auu = np.all(auu == np.diag(np.diag(auu)))
    if diag_auu:
        auu_d = np.diag(auu)
        auu_solve = lambda b: b / auu_d
    else:
        auu_lu = sla.lu_factor(auu)
        auu_solve = lambda b: sla.lu_solve(auu_lu, b)

    if n_u:
        v3 = auu_solve(b3)
        for _ in range(cfg.schur_iters):
            y1 = ops.fu(v3) - b1
            y2 = ops.axu(v3) - b2
            v4, v5 = _inner_solve_ops(ops, y1, y2, cfg)
            z = ops.fuT(v4) + ops.aux(v5)
            v3 = auu_solve(b3 + z)
        c1 = b1 - ops.fu(v3)
        c2 = b2 - ops.axu(v3)
    else:
        v3 = np.zeros(0)
        c1, c2 = b1.copy(), b2.copy()
    v4, v5 = _inner_solve_ops(ops, c1, c2, cfg)
    return np.concatenate([v5, v3, v4])


# ---------------------------------------------------------------------------
# horizon sweeps (dispatch: JIT kernel on the structured path, else reference)
# ---------------------------------------------------------------------------

def sweep(itd: IterateData, rhs_mat: Array, couple: int, omega: float,
          cfg: StageSolveConfig, threads: int = 0) -> Array:
    """Apply one block sweep of stage solves over the horizon.

    couple: kernels.COUPLE_NONE for simultaneous (Jacobi) stage solves,
    COUPLE_FORWARD/COUPLE_BACKWARD for Gauss-Seidel-style sweeps. omega
    scales the coupling contribution.
    """
    prob = itd.prob
    N = prob.N
    out = np.zeros_like(rhs_mat)
    arrays = itd.solver_arrays() if cfg.mode == "iterative" else None
    if arrays is not None:
        fx_diag = arrays["fx_diag"]
        bad = np.abs(fx_diag).min()
        if bad == 0.0:
            stage, j = np.argwhere(fx_diag == 0.0)[0]
            raise ZeroDiagonalError(int(j), f"stage field system at stage {stage}")
        if np.abs(arrays["auu_diag"]).min() == 0.0:
            stage, k = np.argwhere(arrays["auu_diag"] == 0.0)[0]
            raise ZeroDiagonalError(int(k), f"A_uu at stage {stage}")
        st = prob.sys.stencil
        if couple == kernels.COUPLE_NONE and threads > 1:
            _parallel_jacobi_sweep(out, rhs_mat, arrays, st, cfg, threads)
            return out
        if couple == kernels.COUPLE_BACKWARD:
            i_start, i_stop = N - 1, -1
        else:
            i_start, i_stop = 0, N
        kernels.sweep_structured(
            out, rhs_mat, couple, omega,
            arrays["fx_diag"], arrays["fgh_h"], arrays["axx_diag"],
            arrays["axx_w"], arrays["auu_diag"],
            st.soff_idx, st.soff_coef, st.sofft_idx, st.sofft_coef,
            st.su_idx, st.su_coef, st.sut_idx, st.sut_coef,
            cfg.inner_jacobi_iters, cfg.schur_iters, i_start, i_stop,
        )
        return out

    # reference path
    n_x, n_u = prob.n_x, prob.n_u
    order = range(N - 1, -1, -1) if couple == kernels.COUPLE_BACKWARD else range(N)
    for i in order:
        r = rhs_mat[i].copy()
        if couple == kernels.COUPLE_FORWARD and i > 0:
            r[:n_x] -= omega * out[i - 1, :n_x]
        elif couple == kernels.COUPLE_BACKWARD and i < N - 1:
            r[n_x + n_u:] -= omega * out[i + 1, n_x + n_u:]
        if cfg.mode == "exact":
            out[i] = itd.lu_solve(i, r)
        else:
            out[i] = solve_stage(itd.block(i), r, cfg)
    return out


def _parallel_jacobi_sweep(out, rhs_mat, arrays, st, cfg, threads):
    """Chunked Jacobi sweep across a thread pool; stages are independent."""
    from concurrent.futures import ThreadPoolExecutor

    N = rhs_mat.shape[0]
    chunks = np.array_split(np.arange(N), threads)

    def run(chunk):
        if chunk.size == 0:
            return
        kernels.sweep_structured(
            out, rhs_mat, kernels.COUPLE_NONE, 1.0,
            arrays["fx_diag"], arrays["fgh_h"], arrays["axx_diag"],
            arrays["axx_w"], arrays["auu_diag"],
            st.soff_idx, st.soff_coef, st.sofft_idx, st.sofft_coef,
            st.su_idx, st.su_coef, st.sut_idx, st.sut_coef,
            cfg.inner_jacobi_iters, cfg.schur_iters,
            int(chunk[0]), int(chunk[-1]) + 1,
        )

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, chunks))
