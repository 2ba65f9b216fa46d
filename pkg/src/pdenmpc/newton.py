"""Exact Newton baseline on the block-tridiagonal first-order system.

The stage Jacobians couple through two constant blocks: the state equation
reads the previous stage's state (identity in the upper-left position) and
the costate equation reads the next stage's costate (identity in the
lower-right position). Block Gaussian elimination runs backward over the
stages, forming dense Schur-complement updates; spatial sparsity inside the
stage blocks is destroyed on purpose, which is exactly what makes this the
conventional-cost comparator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from .errors import BarrierDomainError, SingularStageError
from .ocp import (
    OcpProblem,
    Trajectory,
    evaluate_iterate,
)
from .upper import (
    DIVERGENCE_RATIO,
    SolveReport,
    _apply_step,
    _feasibility_margin,
    fraction_to_boundary,
)

Array = np.ndarray


@dataclass
class BlockTridiagonalKkt:
    """Dense per-stage Jacobians with the constant coupling placements."""

    blocks: List[Array]
    n_x: int
    n_u: int

    @property
    def N(self) -> int:
        return len(self.blocks)

    def coupling_ml(self) -> Array:
        m = 2 * self.n_x + self.n_u
        ml = np.zeros((m, m))
        ml[: self.n_x, : self.n_x] = np.eye(self.n_x)
        return ml

    def coupling_mu(self) -> Array:
        m = 2 * self.n_x + self.n_u
        mu = np.zeros((m, m))
        mu[self.n_x + self.n_u:, self.n_x + self.n_u:] = np.eye(self.n_x)
        return mu

    def matvec(self, V: Array) -> Array:
        """Apply the full block-tridiagonal matrix to stage-stacked rows."""
        N, n_x, n_u = self.N, self.n_x, self.n_u
        out = np.empty_like(V)
        for i in range(N):
            out[i] = self.blocks[i] @ V[i]
            if i > 0:
                out[i, :n_x] += V[i - 1, :n_x]
            if i < N - 1:
                out[i, n_x + n_u:] += V[i + 1, n_x + n_u:]
        return out


def assemble_kkt(prob: OcpProblem, traj: Trajectory,
                 itd=None) -> BlockTridiagonalKkt:
    itd = itd or evaluate_iterate(prob, traj)
    blocks = [itd.dense_stage(i) for i in range(prob.N)]
    return BlockTridiagonalKkt(blocks, prob.n_x, prob.n_u)


def solve_block_tridiagonal(kkt: BlockTridiagonalKkt, rhs: Array,
                            return_fill_stats: bool = False,
                            overwrite_blocks: bool = False):
    """Backward block elimination then forward substitution.

    rhs is (N, 2 n_x + n_u) row per stage; returns dS of the same shape.
    The Schur recursion is Dhat_i = D_i - M_U Dhat_{i+1}^{-1} M_L, performed
    from the last stage down, with only the state-column slice of each
    inverse ever formed. With overwrite_blocks the blocks in kkt are
    destroyed (factored in place).
    """
    N, n_x, n_u = kkt.N, kkt.n_x, kkt.n_u
    m = 2 * n_x + n_u
    lam0 = n_x + n_u
    lus = [None] * N
    rhat = rhs.copy()
    fill = []
    eye_xcols = np.eye(m, n_x)
    stacked = np.empty((m, n_x + 1))

    dhat_next_lu = None
    for i in range(N - 1, -1, -1):
        D = kkt.blocks[i] if overwrite_blocks else kkt.blocks[i].copy()
        if i < N - 1:
            # M_U Dhat_{i+1}^{-1} M_L: lam rows of the state-column slice
            stacked[:, :n_x] = eye_xcols
            stacked[:, n_x] = rhat[i + 1]
            sol = sla.lu_solve(dhat_next_lu, stacked, check_finite=False)
            D[lam0:, :n_x] -= sol[lam0:, :n_x]
            rhat[i, lam0:] -= sol[lam0:, n_x]
        if return_fill_stats:
            fill.append(float(np.mean(np.abs(D) > 1e-14)))
        try:
            lus[i] = sla.lu_factor(D, overwrite_a=overwrite_blocks,
                                   check_finite=False)
        except (ValueError, sla.LinAlgError) as exc:
            raise SingularStageError(i, str(exc)) from exc
        if np.any(np.diag(lus[i][0]) == 0.0) or not np.all(np.isfinite(lus[i][0])):
            raise SingularStageError(i, "singular eliminated stage block")
        dhat_next_lu = lus[i]

    dS = np.empty_like(rhs)
    for i in range(N):
        r = rhat[i].copy()
        if i > 0:
            r[:n_x] -= dS[i - 1, :n_x]
        dS[i] = sla.lu_solve(lus[i], r, check_finite=False)
    if return_fill_stats:
        return dS, fill
    return dS


def newton_step(prob: OcpProblem, traj: Trajectory):
    """Exact Newton direction and its fraction-to-the-boundary step size."""
    if prob.reg_mode == "current":
        prob.u_reg_ref[:] = traj.U
    itd = evaluate_iterate(prob, traj)
    kkt = assemble_kkt(prob, traj, itd=itd)
    dS = solve_block_tridiagonal(kkt, itd.resid.as_matrix(),
                                 overwrite_blocks=True)
    alpha = fraction_to_boundary(prob, traj, dS)
    return dS, alpha


def newton_solve(prob: OcpProblem, traj0: Trajectory, tol: float = 1.0,
                 max_iters: int = 50, track_feasibility: bool = False):
    """Damped exact Newton iteration; same loop contract as the upper layer."""
    traj = traj0.copy()
    rep = SolveReport()
    r_first: Optional[float] = None

    for k in range(max_iters + 1):
        if prob.reg_mode == "current":
            prob.u_reg_ref[:] = traj.U
        try:
            itd = evaluate_iterate(prob, traj)
        except BarrierDomainError:
            rep.termination = "domain_error"
            break
        r = itd.resid.inf_norm()
        rep.residual_history.append(r)
        if r_first is None:
            r_first = r
        if not np.isfinite(r) or (k > 0 and r > DIVERGENCE_RATIO * max(r_first, 1e-300)):
            rep.diverged = True
            rep.termination = "max_iters"
            break
        if r < tol:
            rep.termination = "converged"
            break
        if k == max_iters:
            rep.termination = "max_iters"
            break
        t0 = time.perf_counter()
        kkt = assemble_kkt(prob, traj, itd=itd)
        dS = solve_block_tridiagonal(kkt, itd.resid.as_matrix(),
                                     overwrite_blocks=True)
        alpha = fraction_to_boundary(prob, traj, dS)
        nxt = _apply_step(traj, dS, alpha, prob.n_x, prob.n_u)
        rep.iter_times.append(time.perf_counter() - t0)
        rep.step_sizes.append(alpha)
        if track_feasibility:
            rep.feasibility_margins.append(_feasibility_margin(prob, traj, nxt))
        traj = nxt
        rep.iterations += 1

    return traj, rep


def elimination_fill_fraction(prob: OcpProblem, traj: Trajectory) -> float:
    """Nonzero fraction of the block the backward recursion updates.

    The Schur update lands in the costate-row/state-column block of each
    eliminated stage; spatial sparsity there is destroyed outright (the
    update is a dense inverse slice). Returns the mean nonzero fraction of
    that block over the eliminated stages.
    """
    itd = evaluate_iterate(prob, traj)
    kkt = assemble_kkt(prob, traj, itd=itd)
    n_x, n_u = prob.n_x, prob.n_u
    lam0 = n_x + n_u
    m = 2 * n_x + n_u
    lus_fill = []
    import scipy.linalg as sla
    dhat_next_lu = None
    eye_xcols = np.eye(m, n_x)
    for i in range(prob.N - 1, -1, -1):
        D = kkt.blocks[i]
        if i < prob.N - 1:
            cols = sla.lu_solve(dhat_next_lu, eye_xcols, check_finite=False)
            D[lam0:, :n_x] -= cols[lam0:, :]
            lus_fill.append(float(np.mean(np.abs(D[lam0:, :n_x]) > 1e-14)))
        dhat_next_lu = sla.lu_factor(D, check_finite=False)
    return float(np.mean(lus_fill))
