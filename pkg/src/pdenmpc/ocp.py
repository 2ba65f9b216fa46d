"""Relaxed-regularized NMPC problem: residuals and stage Jacobians.

The discrete-time problem couples N stages through backward-Euler state
equations x_i = x_{i-1} + h f(u_i, x_i). Inequalities enter through a fixed
log barrier -tau sum log G, and a quadratic input regularizer
(gamma/2)||u_i - u_reg||^2 damps the input block of the Jacobian. The
first-order conditions are evaluated stagewise as a three-block residual
(state equation, input stationarity, costate equation) with x_0 fixed and
the costate beyond the horizon set to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .costs import ConstraintSet, StageCost, BoxInputConstraints
from .errors import PdenmpcError
from .pde import DiscretizedSystem, PointData, _gather

Array = np.ndarray


@dataclass
class OcpProblem:
    """One horizon instance of the relaxed-regularized control problem."""

    sys: DiscretizedSystem
    N: int
    T: float
    cost: StageCost
    constraints: ConstraintSet
    tau: float
    gamma: float
    x0: Array
    reg_mode: str = "current"        # "current" or "fixed"
    u_reg_ref: Array = None          # (N, n_u) buffer, owned by the problem

    def __post_init__(self):
        if self.N < 1:
            raise PdenmpcError("stage count N must be >= 1")
        if self.T <= 0:
            raise PdenmpcError("prediction horizon T must be positive")
        if self.tau <= 0:
            raise PdenmpcError("barrier parameter tau must be positive")
        if self.gamma < 0:
            raise PdenmpcError("regularization gamma must be nonnegative")
        if self.reg_mode not in ("current", "fixed"):
            raise PdenmpcError(f"unknown regularization mode {self.reg_mode!r}")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.u_reg_ref is None:
            self.u_reg_ref = np.zeros((self.N, self.sys.n_u))
        else:
            self.u_reg_ref = np.array(self.u_reg_ref, dtype=float).reshape(
                self.N, self.sys.n_u
            )

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def n_x(self) -> int:
        return self.sys.n_x

    @property
    def n_u(self) -> int:
        return self.sys.n_u

    @property
    def stage_dim(self) -> int:
        return 2 * self.sys.n_x + self.sys.n_u


@dataclass
class Trajectory:
    """Primal-dual iterate: states, inputs, costates for stages 1..N."""

    X: Array      # (N, n_x)
    U: Array      # (N, n_u)
    LAM: Array    # (N, n_x)

    def copy(self) -> "Trajectory":
        return Trajectory(self.X.copy(), self.U.copy(), self.LAM.copy())

    def stacked(self) -> Array:
        return np.concatenate(
            [np.concatenate([x, u, l]) for x, u, l in zip(self.X, self.U, self.LAM)]
        )

    def inf_norm_diff(self, other: "Trajectory") -> float:
        return max(
            float(np.max(np.abs(self.X - other.X), initial=0.0)),
            float(np.max(np.abs(self.U - other.U), initial=0.0)),
            float(np.max(np.abs(self.LAM - other.LAM), initial=0.0)),
        )


def default_initial_trajectory(prob: OcpProblem) -> Trajectory:
    """Cold start: replicated initial state, box-midpoint inputs, zero costates."""
    X = np.tile(prob.x0, (prob.N, 1))
    if isinstance(prob.constraints, BoxInputConstraints):
        mid = 0.5 * (prob.constraints.lb + prob.constraints.ub)
    else:
        mid = np.zeros(prob.n_u)
    U = np.tile(mid, (prob.N, 1))
    LAM = np.zeros((prob.N, prob.n_x))
    return Trajectory(X, U, LAM)


def shift_trajectory(traj: Trajectory) -> Trajectory:
    """Receding-horizon warm start: drop stage 1, duplicate the last stage."""
    X = np.vstack([traj.X[1:], traj.X[-1:]])
    U = np.vstack([traj.U[1:], traj.U[-1:]])
    LAM = np.vstack([traj.LAM[1:], traj.LAM[-1:]])
    return Trajectory(X, U, LAM)


@dataclass
class KktResidual:
    """Stagewise first-order residual blocks."""

    r_x: Array     # (N, n_x) state equations
    r_u: Array     # (N, n_u) input stationarity
    r_lam: Array   # (N, n_x) costate equations

    def inf_norm(self) -> float:
        return max(
            float(np.max(np.abs(self.r_x), initial=0.0)),
            float(np.max(np.abs(self.r_u), initial=0.0)),
            float(np.max(np.abs(self.r_lam), initial=0.0)),
        )

    def stage(self, i: int) -> Array:
        return np.concatenate([self.r_x[i], self.r_u[i], self.r_lam[i]])

    def as_matrix(self) -> Array:
        """(N, 2 n_x + n_u) row-per-stage layout."""
        return np.hstack([self.r_x, self.r_u, self.r_lam])


def hamiltonian(prob: OcpProblem, i: int, x: Array, u: Array, lam: Array) -> float:
    """Stage Hamiltonian: cost + barrier + lam' f."""
    lcost = prob.cost.value(i, u, x)
    phi = prob.constraints.barrier_value(u, x, prob.tau, stage=i)
    return lcost + phi + float(lam @ prob.sys.eval_f(u, x))


def _stage_grads(prob: OcpProblem, i: int, u, x, lam, pd: PointData):
    """Gradients of the Hamiltonian pieces (without the h scaling)."""
    gx_c, gu_c = prob.cost.grad(i, u, x)
    gx_b, gu_b = prob.constraints.barrier_grad(u, x, prob.tau, stage=i)
    gx = gx_c + gx_b + prob.sys.apply_dfdx_T(u, x, lam, pd=pd)
    gu = gu_c + gu_b + prob.sys.apply_dfdu_T(u, x, lam, pd=pd)
    return gx, gu


def kkt_stage_residual(prob: OcpProblem, i: int, x_prev: Array, x: Array,
                       u: Array, lam: Array, lam_next: Array,
                       u_reg: Optional[Array] = None,
                       pd: Optional[PointData] = None) -> Array:
    """One stage of the first-order system, stacked (state, input, costate)."""
    pd = pd or prob.sys.point_data(u, x)
    if u_reg is None:
        u_reg = prob.u_reg_ref[i]
    h = prob.h
    gx, gu = _stage_grads(prob, i, u, x, lam, pd)
    r_x = x_prev - x + h * pd.f
    r_u = h * gu + prob.gamma * (u - u_reg)
    r_lam = lam_next - lam + h * gx
    return np.concatenate([r_x, r_u, r_lam])


def kkt_residual(prob: OcpProblem, traj: Trajectory,
                 pds: Optional[List[PointData]] = None) -> KktResidual:
    """Full residual over the horizon; x_0 fixed, costate after N is zero."""
    N, n_x, n_u = prob.N, prob.n_x, prob.n_u
    r_x = np.empty((N, n_x))
    r_u = np.empty((N, n_u))
    r_lam = np.empty((N, n_x))
    h = prob.h
    for i in range(N):
        u, x, lam = traj.U[i], traj.X[i], traj.LAM[i]
        pd = pds[i] if pds is not None else prob.sys.point_data(u, x)
        x_prev = prob.x0 if i == 0 else traj.X[i - 1]
        lam_next = np.zeros(n_x) if i == N - 1 else traj.LAM[i + 1]
        gx, gu = _stage_grads(prob, i, u, x, lam, pd)
        r_x[i] = x_prev - x + h * pd.f
        r_u[i] = h * gu + prob.gamma * (u - prob.u_reg_ref[i])
        r_lam[i] = lam_next - lam + h * gx
    return KktResidual(r_x, r_u, r_lam)


# ---------------------------------------------------------------------------
# stage Jacobian blocks
# ---------------------------------------------------------------------------

class StageBlock:
    """Jacobian of one stage residual with respect to its own variables.

    Exposes a matrix-free application, dense materialization (oracle and
    Newton paths), and the split into the input-decoupled part plus h times
    the input-coupling part.
    """

    def __init__(self, prob: OcpProblem, i: int, u: Array, x: Array, lam: Array,
                 pd: Optional[PointData] = None):
        self.prob = prob
        self.i = i
        self.u = np.asarray(u, float)
        self.x = np.asarray(x, float)
        self.lam = np.asarray(lam, float)
        self.pd = pd or prob.sys.point_data(u, x)
        self.h = prob.h
        self.gamma = prob.gamma
        self.n_x = prob.n_x
        self.n_u = prob.n_u

    # Hamiltonian Hessian blocks (cost + barrier + dynamics contraction)
    def _hess_apply(self, block: str, v: Array) -> Array:
        prob, u, x, lam = self.prob, self.u, self.x, self.lam
        sys = prob.sys
        out = sys.apply_hess_lambda(u, x, lam, v, block, pd=self.pd)

        def add_blocks(hxx, huu, hxu):
            if block == "xx":
                return hxx @ v
            if block == "uu":
                return huu @ v
            if block == "xu":
                return hxu @ v
            return hxu.T @ v

        if prob.cost.diagonal_hessian:
            dxx, duu = prob.cost.hess_diag(self.i, u, x)
            if block == "xx":
                out = out + dxx * v
            elif block == "uu":
                out = out + duu * v
        else:
            out = out + add_blocks(*prob.cost.hess_dense(self.i, u, x))
        con = prob.constraints
        if con.input_only and con.affine:
            if block == "uu":
                out = out + con.barrier_hess_u_diag(u, x, prob.tau) * v
        else:
            bxx, buu, bxu = con.barrier_hess_dense(u, x, prob.tau)
            out = out + add_blocks(bxx, buu, bxu)
        return out

    def apply(self, v: Array) -> Array:
        """Matrix-free D @ v with v stacked (dx, du, dlam)."""
        n_x, n_u, h = self.n_x, self.n_u, self.h
        vx, vu, vl = v[:n_x], v[n_x:n_x + n_u], v[n_x + n_u:]
        sys = self.prob.sys
        u, x = self.u, self.x
        row_x = h * sys.apply_dfdx(u, x, vx, pd=self.pd) - vx \
            + h * sys.apply_dfdu(u, x, vu, pd=self.pd)
        row_u = h * self._hess_apply("ux", vx) \
            + h * self._hess_apply("uu", vu) + self.gamma * vu \
            + h * sys.apply_dfdu_T(u, x, vl, pd=self.pd)
        row_l = h * self._hess_apply("xx", vx) \
            + h * self._hess_apply("xu", vu) \
            + h * sys.apply_dfdx_T(u, x, vl, pd=self.pd) - vl
        return np.concatenate([row_x, row_u, row_l])

    def hess_blocks_dense(self):
        """Dense Hamiltonian Hessian blocks (Hxx, Hxu, Huu), no h or gamma."""
        prob, u, x, lam = self.prob, self.u, self.x, self.lam
        n_x, n_u = self.n_x, self.n_u
        hxx, hxu, huu = dense_hessian_lambda(prob.sys, u, x, lam, self.pd)
        if prob.cost.diagonal_hessian:
            dxx, duu = prob.cost.hess_diag(self.i, u, x)
            hxx = hxx + np.diag(dxx)
            huu = huu + np.diag(duu)
        else:
            cxx, cuu, cxu = prob.cost.hess_dense(self.i, u, x)
            hxx = hxx + cxx
            huu = huu + cuu
            hxu = hxu + cxu
        con = prob.constraints
        if con.input_only and con.affine:
            huu = huu + np.diag(con.barrier_hess_u_diag(u, x, prob.tau))
        else:
            bxx, buu, bxu = con.barrier_hess_dense(u, x, prob.tau)
            hxx = hxx + bxx
            huu = huu + buu
            hxu = hxu + bxu
        return hxx, hxu, huu

    def dense(self, include_input_coupling: bool = True,
              gamma: Optional[float] = None) -> Array:
        """Materialize the stage Jacobian in (x, u, lam) block ordering."""
        h = self.h
        gamma = self.gamma if gamma is None else gamma
        n_x, n_u = self.n_x, self.n_u
        sys = self.prob.sys
        J, B = dense_jacobians(sys, self.u, self.x, self.pd)
        hxx, hxu, huu = self.hess_blocks_dense()
        m = 2 * n_x + n_u
        D = np.zeros((m, m))
        D[:n_x, :n_x] = h * J - np.eye(n_x)
        D[n_x:n_x + n_u, :n_x] = h * hxu.T
        D[n_x:n_x + n_u, n_x:n_x + n_u] = h * huu + gamma * np.eye(n_u)
        D[n_x + n_u:, :n_x] = h * hxx
        D[n_x + n_u:, n_x:n_x + n_u] = h * hxu
        D[n_x + n_u:, n_x + n_u:] = h * J.T - np.eye(n_x)
        if include_input_coupling:
            D[:n_x, n_x:n_x + n_u] = h * B
            D[n_x:n_x + n_u, n_x + n_u:] = h * B.T
        return D

    def bar_tilde_split(self):
        """Split D = Dbar + h * Dtilde, Dtilde holding the input-coupling blocks."""
        D = self.dense(include_input_coupling=True)
        Dbar = self.dense(include_input_coupling=False)
        Dtilde = (D - Dbar) / self.h
        return Dbar, Dtilde


def stage_jacobian(prob: OcpProblem, i: int, u: Array, x: Array, lam: Array,
                   pd: Optional[PointData] = None) -> StageBlock:
    prob.constraints.check_interior(u, x, stage=i)
    return StageBlock(prob, i, u, x, lam, pd=pd)


def _scatter_rows(out, idx, values):
    """out[j, idx[j, k]] += values[j, k]; (j, idx) pairs are unique by build,
    but padding entries all hit column 0, so accumulate via a dense column add."""
    n, width = idx.shape
    rows = np.repeat(np.arange(n), width)
    # padded entries carry zero coefficients; direct fancy assignment would
    # race them against real column-0 entries, so split padding out
    flat_idx = idx.ravel()
    flat_val = values.ravel()
    live = flat_val != 0.0
    out[rows[live], flat_idx[live]] += flat_val[live]
    return out


def dense_jacobians(sys: DiscretizedSystem, u, x, pd: Optional[PointData] = None):
    """Dense (df/dx, df/du); scatter of the padded stencil arrays."""
    if hasattr(sys, "dense_jacobians"):
        return sys.dense_jacobians(u, x)
    pd = pd or sys.point_data(u, x)
    st = sys.stencil
    n_w, n_u = sys.n_w, sys.n_u
    Jf = np.zeros((n_w, n_w))
    Jf[np.arange(n_w), np.arange(n_w)] = pd.jdiag
    _scatter_rows(Jf, st.soff_idx, pd.fgh[:, None] * st.soff_coef)
    Bf = np.zeros((n_w, max(n_u, 1)))
    if n_u:
        _scatter_rows(Bf, st.su_idx, pd.fgh[:, None] * st.su_coef)
        if pd.psi_u is not None:
            Bf = Bf + pd.psi_u
    Bf = Bf[:, :n_u]
    if sys.time_order == 1:
        return Jf, Bf
    n_x = sys.n_x
    J = np.zeros((n_x, n_x))
    J[:n_w, n_w:] = np.eye(n_w)
    J[n_w:, :n_w] = Jf
    J[n_w:, n_w:] = np.diag(pd.gwd_diag)
    B = np.zeros((n_x, n_u))
    B[n_w:] = Bf
    return J, B


def dense_hessian_lambda(sys: DiscretizedSystem, u, x, lam,
                         pd: Optional[PointData] = None):
    """Dense (Hxx, Hxu, Huu) of the contraction lam' f."""
    if hasattr(sys, "dense_hessian_lambda"):
        return sys.dense_hessian_lambda(u, x, lam)
    pd = pd or sys.point_data(u, x)
    st = sys.stencil
    n_w, n_u, n_x = sys.n_w, sys.n_u, sys.n_x
    lam = np.asarray(lam, float)
    mu = lam if sys.time_order == 1 else lam[n_w:]

    def scatter_soff(weights):
        A = np.zeros((n_w, n_w))
        _scatter_rows(A, st.soff_idx, weights[:, None] * st.soff_coef)
        return A

    hw = mu * pd.psi_wg
    Bmat = np.diag(hw * st.s_diag) + scatter_soff(hw)
    Hww = np.diag(mu * pd.psi_ww) + Bmat + Bmat.T

    Su = np.zeros((n_w, max(n_u, 1)))
    if n_u:
        _scatter_rows(Su, st.su_idx, st.su_coef)
    Su = Su[:, :n_u]
    Shat = np.diag(st.s_diag) + scatter_soff(np.ones(n_w))

    Hwu = hw[:, None] * Su
    if pd.psi_uw is not None:
        Hwu = Hwu + mu[:, None] * pd.psi_uw + Shat.T @ (mu[:, None] * pd.psi_ug)
    Huu = np.zeros((n_u, n_u))
    if pd.psi_uu is not None and n_u:
        Huu = np.einsum("j,jpq->pq", mu, pd.psi_uu)
        Huu = Huu + pd.psi_ug.T @ (mu[:, None] * Su) + Su.T @ (mu[:, None] * pd.psi_ug)

    if sys.time_order == 1:
        return Hww, Hwu, Huu

    Hxx = np.zeros((n_x, n_x))
    Hxx[:n_w, :n_w] = Hww
    q = np.diag(mu * pd.q_wwd)
    Hxx[:n_w, n_w:] = q
    Hxx[n_w:, :n_w] = q
    Hxu = np.zeros((n_x, n_u))
    Hxu[:n_w] = Hwu
    if pd.q_uwd is not None:
        Hxu[n_w:] = mu[:, None] * pd.q_uwd
    return Hxx, Hxu, Huu


# ---------------------------------------------------------------------------
# per-iterate evaluation shared by the solvers
# ---------------------------------------------------------------------------

@dataclass
class IterateData:
    """Everything evaluated at one iterate: point data, residual, blocks."""

    prob: OcpProblem
    traj: Trajectory
    pds: List[PointData]
    resid: KktResidual
    fast: Optional[dict] = None
    _blocks: List[Optional[StageBlock]] = field(default_factory=list)
    _lus: List = field(default_factory=list)

    def block(self, i: int) -> StageBlock:
        if not self._blocks:
            self._blocks = [None] * self.prob.N
        if self._blocks[i] is None:
            self._blocks[i] = StageBlock(
                self.prob, i, self.traj.U[i], self.traj.X[i], self.traj.LAM[i],
                pd=self.pds[i],
            )
        return self._blocks[i]

    def solver_arrays(self) -> Optional[dict]:
        """Batched kernel arrays; None when outside the structured class."""
        return self.fast

    def dense_stage(self, i: int, include_input_coupling: bool = True,
                    gamma: Optional[float] = None) -> Array:
        """Materialized stage Jacobian; structured scatter when available."""
        if self.fast is None:
            return self.block(i).dense(include_input_coupling, gamma=gamma)
        prob = self.prob
        st = prob.sys.stencil
        n_x, n_u = prob.n_x, prob.n_u
        m = 2 * n_x + n_u
        f = self.fast
        D = np.zeros((m, m))
        rng_x = np.arange(n_x)

        def scatter(row0, col0, idx, vals):
            rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1]) + row0
            cols = idx.ravel() + col0
            v = vals.ravel()
            live = v != 0.0
            D[rows[live], cols[live]] += v[live]

        D[rng_x, rng_x] = f["fx_diag"][i]
        scatter(0, 0, st.soff_idx, f["fgh_h"][i][:, None] * st.soff_coef)

        lam0 = n_x + n_u
        D[lam0 + rng_x, lam0 + rng_x] = f["fx_diag"][i]
        scatter(lam0, lam0, st.sofft_idx, f["fgh_h"][i][st.sofft_idx] * st.sofft_coef)

        D[lam0 + rng_x, rng_x] = f["axx_diag"][i]
        scatter(lam0, 0, st.soff_idx, f["axx_w"][i][:, None] * st.soff_coef)
        scatter(lam0, 0, st.sofft_idx, f["axx_w"][i][st.sofft_idx] * st.sofft_coef)

        gdiag = f["auu_diag"][i]
        if gamma is not None:
            gdiag = gdiag - prob.gamma + gamma
        rng_u = np.arange(n_u)
        D[n_x + rng_u, n_x + rng_u] = gdiag

        if include_input_coupling and n_u:
            scatter(0, n_x, st.su_idx, f["fgh_h"][i][:, None] * st.su_coef)
            scatter(n_x, lam0, st.sut_idx, f["fgh_h"][i][st.sut_idx] * st.sut_coef)
        return D

    def lu_solve(self, i: int, rhs: Array) -> Array:
        import scipy.linalg as sla
        from .errors import SingularStageError

        if not self._lus:
            self._lus = [None] * self.prob.N
        if self._lus[i] is None:
            D = self.dense_stage(i)
            try:
                self._lus[i] = sla.lu_factor(D, check_finite=False)
            except (ValueError, sla.LinAlgError) as exc:
                raise SingularStageError(i, str(exc)) from exc
            if np.any(np.diag(self._lus[i][0]) == 0.0):
                raise SingularStageError(i, "singular dense factorization")
        return sla.lu_solve(self._lus[i], rhs, check_finite=False)


def _fast_capable(prob: OcpProblem) -> bool:
    from .costs import QuadraticTrackingCost, BoxInputConstraints, NoConstraints

    return (prob.sys.time_order == 1
            and not prob.sys.u_dependent
            and isinstance(prob.cost, QuadraticTrackingCost)
            and isinstance(prob.constraints, (BoxInputConstraints, NoConstraints)))


def _evaluate_iterate_fast(prob: OcpProblem, traj: Trajectory) -> IterateData:
    """Vectorized evaluation for the structured problem class.

    Point data for all stages is computed in one batched pass (the PDE
    coefficients do not depend on u, so the chain-rule arrays broadcast over
    stages), and the residual plus the kernel arrays come out of a handful
    of whole-horizon array operations.
    """
    from .costs import BoxInputConstraints
    from .errors import BarrierDomainError

    sys = prob.sys
    st = sys.stencil
    N, n_w, n_u = prob.N, sys.n_w, sys.n_u
    h, gamma = prob.h, prob.gamma
    W = traj.X
    U = traj.U
    LAM = traj.LAM
    u0 = U[0]

    m = sys.model
    ev = m.boundary_e.value(u0, W) if sys.has_e else None
    g = st.s_diag * W + _gather(st.soff_idx, st.soff_coef, W)
    if n_u:
        g = g + _gather(st.su_idx, st.su_coef, U)
    if sys.has_e:
        g = g + st.e_coef * ev

    cv = m.coeff_c.value(u0, W)
    dv = m.coeff_d.value(u0, W)
    den = m.coeff_b.value(u0, W)
    num = cv * g + dv
    f = num / den

    def dw(coeff, name):
        out = getattr(coeff, name)(u0, W)
        return np.zeros_like(W) if out is None else out

    c_w = dw(m.coeff_c, "d_w"); d_w = dw(m.coeff_d, "d_w")
    den_w = dw(m.coeff_b, "d_w"); den_ww = dw(m.coeff_b, "d_ww")
    c_ww = dw(m.coeff_c, "d_ww"); d_ww = dw(m.coeff_d, "d_ww")

    G_g = cv / den
    num_w = c_w * g + d_w
    num_ww = c_ww * g + d_ww
    G_w = num_w / den - num * den_w / den ** 2
    G_gw = c_w / den - cv * den_w / den ** 2
    G_ww = (num_ww / den - 2 * num_w * den_w / den ** 2
            - num * den_ww / den ** 2 + 2 * num * den_w ** 2 / den ** 3)
    if sys.has_e:
        e_w = dw(m.boundary_e, "d_w"); e_ww = dw(m.boundary_e, "d_ww")
        psi_w = G_w + G_g * st.e_coef * e_w
        psi_ww = G_ww + 2 * G_gw * st.e_coef * e_w + G_g * st.e_coef * e_ww
    else:
        psi_w, psi_ww = G_w, G_ww
    psi_wg = G_gw
    jdiag = psi_w + G_g * st.s_diag

    # residual blocks
    x_prev = np.vstack([prob.x0[None, :], W[:-1]])
    lam_next = np.vstack([LAM[1:], np.zeros((1, n_w))])
    scaled_lam = G_g * LAM
    dfdxT_lam = jdiag * LAM + _gather(st.sofft_idx, st.sofft_coef, scaled_lam)
    dfduT_lam = _gather(st.sut_idx, st.sut_coef, scaled_lam) if n_u else np.zeros((N, 0))

    cost = prob.cost

    def ref_rows(ref, n):
        if ref.shape[0] == 1:
            return np.broadcast_to(ref, (N, n))
        if ref.shape[0] >= N:
            return ref[:N]
        rows = np.minimum(np.arange(N), ref.shape[0] - 1)
        return ref[rows]

    xr = ref_rows(cost.x_ref, n_w)
    ur = ref_rows(cost.u_ref, n_u)
    gx_cost = cost.q_diag * (W - xr)
    gu_cost = cost.r_diag * (U - ur)

    if isinstance(prob.constraints, BoxInputConstraints) and n_u:
        con = prob.constraints
        g1 = U - con.lb
        g2 = con.ub - U
        if np.min(g1) <= 0.0 or np.min(g2) <= 0.0:
            gg = np.hstack([g1, g2])
            stage, idx = np.argwhere(gg <= 0.0)[0]
            raise BarrierDomainError(int(stage), int(idx), float(gg[stage, idx]))
        gu_bar = -prob.tau * (1.0 / g1 - 1.0 / g2)
        buu = prob.tau * (1.0 / g1 ** 2 + 1.0 / g2 ** 2)
    else:
        gu_bar = np.zeros((N, n_u))
        buu = np.zeros((N, n_u))

    r_x = x_prev - W + h * f
    r_u = h * (gu_cost + gu_bar + dfduT_lam) + gamma * (U - prob.u_reg_ref)
    r_lam = lam_next - LAM + h * (gx_cost + dfdxT_lam)
    resid = KktResidual(r_x, r_u, r_lam)

    axx_w = h * (LAM * psi_wg)
    fast = {
        "fx_diag": h * jdiag - 1.0,
        "fgh_h": h * G_g,
        "axx_w": axx_w,
        "axx_diag": h * (cost.q_diag + LAM * psi_ww) + 2.0 * axx_w * st.s_diag,
        "auu_diag": h * (cost.r_diag + buu) + gamma,
    }

    pds = [
        PointData(f=f[i], g=g[i], jdiag=jdiag[i], fgh=G_g[i],
                  psi_ww=psi_ww[i], psi_wg=psi_wg[i])
        for i in range(N)
    ]
    return IterateData(prob, traj, pds, resid, fast=fast)


def evaluate_iterate(prob: OcpProblem, traj: Trajectory) -> IterateData:
    """Interiority check, point data, and residual at the current iterate.

    In current-iterate regularization mode the caller must refresh
    prob.u_reg_ref before calling; the solvers do this at the top of every
    iteration.
    """
    if _fast_capable(prob):
        return _evaluate_iterate_fast(prob, traj)
    pds = []
    for i in range(prob.N):
        prob.constraints.check_interior(traj.U[i], traj.X[i], stage=i)
        pds.append(prob.sys.point_data(traj.U[i], traj.X[i]))
    resid = kkt_residual(prob, traj, pds=pds)
    return IterateData(prob, traj, pds, resid)
