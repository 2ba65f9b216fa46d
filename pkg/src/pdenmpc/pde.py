"""Finite-difference discretization of second-order PDEs on box grids.

The PDE class handled here is

    a(u,w) w_tt + b(u,w) w_t = c(u,w) lap(w) + d(u,w)

on a 1-D interval or 2-D square, with Neumann data dw/dn = e(u,w) imposed
through mirrored fictitious points: the ghost value outside a low boundary is
w[+1] - 2*dp*e, outside a high boundary w[-1] + 2*dp*e, which folds into the
central stencil as a doubled inner-neighbor coefficient plus a -/+ 2/dp flux
term. Grid points listed in the actuator mask carry no equation; their values
are read from the input vector wherever a stencil touches them.

Everything downstream is matrix-free: the stencil is stored as padded index
and coefficient arrays (including explicit transposes), and all Jacobian and
Hessian-contraction operators are evaluated from per-point chain-rule arrays
without ever forming a sparse matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import Coefficient, ConstantCoefficient, ZERO
from .errors import PdenmpcError

Array = np.ndarray


@dataclass(frozen=True)
class PdeModel:
    """Coefficient bundle defining one PDE instance."""

    dim: int
    coeff_a: Coefficient
    coeff_b: Coefficient
    coeff_c: Coefficient
    coeff_d: Coefficient
    boundary_e: Coefficient = ZERO
    side: float = 1.0

    @property
    def time_order(self) -> int:
        return 1 if self.coeff_a.is_zero else 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise PdenmpcError(f"spatial dimension must be 1 or 2, got {self.dim}")
        if self.side <= 0:
            raise PdenmpcError("domain side length must be positive")


@dataclass
class SpatialGrid:
    """Uniform grid with an actuator mask.

    ``actuator_indices`` are flat row-major grid indices whose values are
    control inputs rather than states. ``grid_to_state`` maps flat grid index
    to state position (-1 for actuators); ``grid_to_input`` the reverse role.
    """

    dim: int
    points_per_axis: int
    side: float = 1.0
    actuator_indices: tuple = ()

    n_grid: int = field(init=False)
    step: float = field(init=False)
    grid_to_state: Array = field(init=False, repr=False)
    grid_to_input: Array = field(init=False, repr=False)
    state_to_grid: Array = field(init=False, repr=False)
    input_to_grid: Array = field(init=False, repr=False)

    def __post_init__(self):
        if self.points_per_axis < 3:
            raise PdenmpcError(
                f"need at least 3 points per axis, got {self.points_per_axis}"
            )
        if self.dim not in (1, 2):
            raise PdenmpcError(f"grid dimension must be 1 or 2, got {self.dim}")
        self.n_grid = self.points_per_axis ** self.dim
        self.step = self.side / (self.points_per_axis - 1)

        acts = list(self.actuator_indices)
        if len(set(acts)) != len(acts):
            raise PdenmpcError("actuator mask contains duplicate indices")
        for a in acts:
            if not (0 <= a < self.n_grid):
                raise PdenmpcError(f"actuator index {a} out of range [0, {self.n_grid})")
        self.actuator_indices = tuple(sorted(acts))

        self.grid_to_state = np.full(self.n_grid, -1, dtype=np.int64)
        self.grid_to_input = np.full(self.n_grid, -1, dtype=np.int64)
        self.input_to_grid = np.array(self.actuator_indices, dtype=np.int64)
        for k, a in enumerate(self.actuator_indices):
            self.grid_to_input[a] = k
        mask = self.grid_to_input < 0
        self.state_to_grid = np.nonzero(mask)[0].astype(np.int64)
        self.grid_to_state[self.state_to_grid] = np.arange(
            len(self.state_to_grid), dtype=np.int64
        )

    @property
    def n_points(self) -> int:
        """Number of grid points that are states (scalar field values)."""
        return len(self.state_to_grid)

    @property
    def n_inputs(self) -> int:
        return len(self.input_to_grid)

    def multi_index(self, flat: int):
        if self.dim == 1:
            return (flat,)
        return divmod(flat, self.points_per_axis)


def _pad_rows(rows_idx, rows_coef, n_rows):
    """Pack per-row (index, coefficient) lists into rectangular arrays.

    Padding entries carry index 0 and coefficient 0.0 so gathers are no-ops.
    """
    width = max((len(r) for r in rows_idx), default=0)
    width = max(width, 1)
    idx = np.zeros((n_rows, width), dtype=np.int64)
    coef = np.zeros((n_rows, width), dtype=np.float64)
    for j in range(n_rows):
        k = len(rows_idx[j])
        if k:
            idx[j, :k] = rows_idx[j]
            coef[j, :k] = rows_coef[j]
    return idx, coef


@dataclass
class StencilData:
    """Padded-array form of the eliminated-boundary Laplacian."""

    s_diag: Array           # (n_w,) diagonal coefficients
    soff_idx: Array         # (n_w, K) state -> state off-diagonal
    soff_coef: Array
    sofft_idx: Array        # transpose of the off-diagonal part
    sofft_coef: Array
    su_idx: Array           # (n_w, Ku) state row <- input column
    su_coef: Array
    sut_idx: Array          # (n_u, KuT) transpose
    sut_coef: Array
    e_coef: Array           # (n_w,) net boundary-flux coefficient
    quad_weights: Array     # (n_w,) trapezoid weights (boundary 1/2 per axis)


def _build_stencil(grid: SpatialGrid) -> StencilData:
    p = grid.points_per_axis
    dp = grid.step
    inv2 = 1.0 / dp ** 2
    n_w = grid.n_points
    n_u = grid.n_inputs

    s_rows = [dict() for _ in range(n_w)]
    u_rows = [dict() for _ in range(n_w)]
    s_diag = np.zeros(n_w)
    e_coef = np.zeros(n_w)
    quad = np.ones(n_w)

    if grid.dim == 1:
        axes_strides = [(1, p)]
    else:
        axes_strides = [(p, p), (1, p)]  # (stride, extent) per axis, row-major

    for j in range(n_w):
        g = int(grid.state_to_grid[j])
        coords = grid.multi_index(g)
        for axis, (stride, extent) in enumerate(axes_strides):
            c = coords[axis]
            s_diag[j] -= 2.0 * inv2
            for s in (-1, +1):
                cn = c + s
                if 0 <= cn < extent:
                    target = g + s * stride
                    w = 1.0
                else:
                    # fictitious point: mirror partner inside, plus flux term
                    target = g - s * stride
                    w = 1.0
                    e_coef[j] += (2.0 / dp) * s  # -2/dp low side, +2/dp high side
                m = int(grid.grid_to_state[target])
                if m >= 0:
                    if m == j:
                        s_diag[j] += w * inv2
                    else:
                        s_rows[j][m] = s_rows[j].get(m, 0.0) + w * inv2
                else:
                    k = int(grid.grid_to_input[target])
                    u_rows[j][k] = u_rows[j].get(k, 0.0) + w * inv2
            if c == 0 or c == extent - 1:
                quad[j] *= 0.5

    soff_idx, soff_coef = _pad_rows(
        [list(r.keys()) for r in s_rows], [list(r.values()) for r in s_rows], n_w
    )
    su_idx, su_coef = _pad_rows(
        [list(r.keys()) for r in u_rows], [list(r.values()) for r in u_rows], n_w
    )

    # transposes
    st_rows = [dict() for _ in range(n_w)]
    for j in range(n_w):
        for m, c in s_rows[j].items():
            st_rows[m][j] = st_rows[m].get(j, 0.0) + c
    sofft_idx, sofft_coef = _pad_rows(
        [list(r.keys()) for r in st_rows], [list(r.values()) for r in st_rows], n_w
    )
    ut_rows = [dict() for _ in range(max(n_u, 1))]
    for j in range(n_w):
        for k, c in u_rows[j].items():
            ut_rows[k][j] = ut_rows[k].get(j, 0.0) + c
    sut_idx, sut_coef = _pad_rows(
        [list(r.keys()) for r in ut_rows[:n_u]] or [[]],
        [list(r.values()) for r in ut_rows[:n_u]] or [[]],
        max(n_u, 1),
    )
    if n_u == 0:
        sut_idx = np.zeros((0, 1), dtype=np.int64)
        sut_coef = np.zeros((0, 1))

    return StencilData(
        s_diag=s_diag,
        soff_idx=soff_idx, soff_coef=soff_coef,
        sofft_idx=sofft_idx, sofft_coef=sofft_coef,
        su_idx=su_idx, su_coef=su_coef,
        sut_idx=sut_idx, sut_coef=sut_coef,
        e_coef=e_coef,
        quad_weights=quad,
    )


def _gather(idx: Array, coef: Array, v: Array) -> Array:
    """Apply a padded-row operator: out[..., j] = sum_k coef[j,k] v[..., idx[j,k]]."""
    return np.einsum("...jk,jk->...j", v[..., idx], coef)


@dataclass
class PointData:
    """Chain-rule arrays at one evaluation point (u, x).

    ``f`` is the full state derivative. The Jacobian of the field equation is
    diag(jdiag) + diag(fgh) @ Soff; second-derivative arrays follow the same
    per-point pattern. u-dependent entries are None when every coefficient is
    independent of u (the common case).
    """

    f: Array
    g: Array                 # eliminated-boundary Laplacian values
    jdiag: Array             # (n_w,)
    fgh: Array               # (n_w,)  c/denominator, scales the stencil
    psi_ww: Array
    psi_wg: Array
    gwd_diag: Optional[Array] = None     # order 2: diag of d g/d wdot
    q_wwd: Optional[Array] = None        # order 2: d2 g/dw dwdot (diagonal)
    psi_u: Optional[Array] = None        # (n_w, n_u)
    psi_uw: Optional[Array] = None
    psi_ug: Optional[Array] = None
    psi_uu: Optional[Array] = None       # (n_w, n_u, n_u)
    q_uwd: Optional[Array] = None        # order 2: d2 g/du dwdot


def _zero_if_none(arr, like):
    return np.zeros_like(like) if arr is None else arr


class DiscretizedSystem:
    """Finite-dimensional dynamics xdot = f(u, x) with matrix-free operators.

    For first-order-in-time models x is the masked field vector; for
    second-order models x = (W, Wdot) and f = (Wdot, g). Instances are
    immutable after construction; operator calls write no internal state.
    """

    def __init__(self, model: PdeModel, grid: SpatialGrid):
        if model.dim != grid.dim:
            raise PdenmpcError(
                f"model dimension {model.dim} != grid dimension {grid.dim}"
            )
        self.model = model
        self.grid = grid
        self.stencil = _build_stencil(grid)
        self.n_w = grid.n_points
        self.n_u = grid.n_inputs
        self.time_order = model.time_order
        self.n_x = self.n_w * self.time_order
        self.has_e = not model.boundary_e.is_zero
        self.u_dependent = any(
            c.depends_on_u
            for c in (model.coeff_a, model.coeff_b, model.coeff_c,
                      model.coeff_d, model.boundary_e)
        )
        self._validate_denominator()

    def _validate_denominator(self):
        # standing assumption: the time-derivative coefficient never vanishes
        probe_w = np.array([0.0, 1.0, -1.0])
        probe_u = np.zeros(self.n_u)
        denom = self.model.coeff_a if self.time_order == 2 else self.model.coeff_b
        vals = denom.value(probe_u, probe_w)
        if np.any(vals == 0.0):
            which = "a" if self.time_order == 2 else "b"
            raise PdenmpcError(
                f"coefficient {which}(u, w) vanishes at a probe point; "
                "the time-derivative term must not degenerate"
            )

    # -- coefficient evaluation -------------------------------------------

    def _laplacian(self, u: Array, w: Array, e_val: Optional[Array]) -> Array:
        st = self.stencil
        g = st.s_diag * w + _gather(st.soff_idx, st.soff_coef, w)
        if self.n_u:
            g = g + _gather(st.su_idx, st.su_coef, u)
        if self.has_e and e_val is not None:
            g = g + st.e_coef * e_val
        return g

    def point_data(self, u: Array, x: Array, second_order: bool = True) -> PointData:
        """Evaluate f and every chain-rule array at one point."""
        u = np.asarray(u, dtype=float)
        x = np.asarray(x, dtype=float)
        m = self.model
        st = self.stencil
        if self.time_order == 1:
            w, wd = x, None
        else:
            w, wd = x[: self.n_w], x[self.n_w:]

        ev = m.boundary_e.value(u, w) if self.has_e else None
        g = self._laplacian(u, w, ev)

        cv = m.coeff_c.value(u, w)
        dv = m.coeff_d.value(u, w)
        if self.time_order == 1:
            den = m.coeff_b.value(u, w)
            num = cv * g + dv
        else:
            bv = m.coeff_b.value(u, w)
            den = m.coeff_a.value(u, w)
            num = cv * g + dv - bv * wd
        if np.any(den == 0.0):
            raise PdenmpcError("time-derivative coefficient vanished at evaluation point")
        fw = num / den

        def d(coeff, name):
            out = getattr(coeff, name)(u, w)
            return out

        c_w = d(m.coeff_c, "d_w"); d_w = d(m.coeff_d, "d_w")
        den_coeff = m.coeff_b if self.time_order == 1 else m.coeff_a
        den_w = d(den_coeff, "d_w"); den_ww = d(den_coeff, "d_ww")
        c_ww = d(m.coeff_c, "d_ww"); d_ww = d(m.coeff_d, "d_ww")
        if self.time_order == 2:
            b_w = d(m.coeff_b, "d_w"); b_ww = d(m.coeff_b, "d_ww")
        e_w = d(m.boundary_e, "d_w") if self.has_e else None
        e_ww = d(m.boundary_e, "d_ww") if self.has_e else None

        z = np.zeros_like(w)
        c_w = _zero_if_none(c_w, z); d_w = _zero_if_none(d_w, z)
        den_w = _zero_if_none(den_w, z); den_ww = _zero_if_none(den_ww, z)
        c_ww = _zero_if_none(c_ww, z); d_ww = _zero_if_none(d_ww, z)

        G_g = cv / den
        num_w = c_w * g + d_w
        num_ww = c_ww * g + d_ww
        if self.time_order == 2:
            b_w = _zero_if_none(b_w, z); b_ww = _zero_if_none(b_ww, z)
            num_w = num_w - b_w * wd
            num_ww = num_ww - b_ww * wd
        G_w = num_w / den - num * den_w / den ** 2
        G_gw = c_w / den - cv * den_w / den ** 2
        G_ww = (num_ww / den - 2 * num_w * den_w / den ** 2
                - num * den_ww / den ** 2 + 2 * num * den_w ** 2 / den ** 3)

        kap = st.e_coef
        if self.has_e:
            e_w = _zero_if_none(e_w, z); e_ww = _zero_if_none(e_ww, z)
            psi_w = G_w + G_g * kap * e_w
            psi_ww = G_ww + 2 * G_gw * kap * e_w + G_g * kap * e_ww
        else:
            psi_w = G_w
            psi_ww = G_ww
        psi_wg = G_gw

        jdiag_field = psi_w + G_g * st.s_diag

        f_full = fw if self.time_order == 1 else np.concatenate([wd, fw])
        pd = PointData(
            f=f_full, g=g, jdiag=jdiag_field, fgh=G_g,
            psi_ww=psi_ww, psi_wg=psi_wg,
        )
        if self.time_order == 2:
            bv = m.coeff_b.value(u, w)
            pd.gwd_diag = -bv / den
            # d2 g / dw dwdot = -(b_w a - b a_w)/a^2
            pd.q_wwd = -(b_w / den) + bv * den_w / den ** 2

        if self.u_dependent:
            self._attach_u_derivatives(pd, u, w, wd, g, num, num_w, den, den_w,
                                       cv, c_w, G_g, G_gw, kap)
        return pd

    def _attach_u_derivatives(self, pd, u, w, wd, g, num, num_w, den, den_w,
                              cv, c_w, G_g, G_gw, kap):
        m = self.model
        n_u = self.n_u
        zu = np.zeros((len(w), n_u))

        def du(coeff, name):
            out = getattr(coeff, name)(u, w)
            return zu if out is None else out

        def duu(coeff):
            out = coeff.d_uu(u, w)
            return np.zeros((len(w), n_u, n_u)) if out is None else out

        den_coeff = m.coeff_b if self.time_order == 1 else m.coeff_a
        c_u = du(m.coeff_c, "d_u"); d_u = du(m.coeff_d, "d_u")
        den_u = du(den_coeff, "d_u")
        c_uw = du(m.coeff_c, "d_uw"); d_uw = du(m.coeff_d, "d_uw")
        den_uw = du(den_coeff, "d_uw")

        num_u = c_u * g[:, None] + d_u
        num_uw = c_uw * g[:, None] + d_uw
        if self.time_order == 2:
            b_u = du(m.coeff_b, "d_u"); b_uw = du(m.coeff_b, "d_uw")
            num_u = num_u - b_u * wd[:, None]
            num_uw = num_uw - b_uw * wd[:, None]
        G_u = num_u / den[:, None] - (num / den ** 2)[:, None] * den_u
        G_gu = c_u / den[:, None] - (cv / den ** 2)[:, None] * den_u
        G_uw = (num_uw / den[:, None]
                - num_u * (den_w / den ** 2)[:, None]
                - num_w[:, None] / den[:, None] ** 2 * den_u
                - (num / den ** 2)[:, None] * den_uw
                + 2 * (num * den_w / den ** 3)[:, None] * den_u)

        num_uu = duu(m.coeff_c) * g[:, None, None] + duu(m.coeff_d)
        if self.time_order == 2:
            num_uu = num_uu - duu(m.coeff_b) * wd[:, None, None]
        sym_u = np.einsum("jp,jq->jpq", num_u, den_u) + np.einsum(
            "jp,jq->jpq", den_u, num_u
        )
        G_uu = (num_uu / den[:, None, None]
                - sym_u / den[:, None, None] ** 2
                - duu(den_coeff) * (num / den ** 2)[:, None, None]
                + 2 * (num / den ** 3)[:, None, None]
                * np.einsum("jp,jq->jpq", den_u, den_u))

        if self.has_e:
            e_u = du(m.boundary_e, "d_u")
            e_uw = du(m.boundary_e, "d_uw")
            e_uu = duu(m.boundary_e)
            e_w = m.boundary_e.d_w(u, w)
            e_w = np.zeros_like(w) if e_w is None else e_w
            psi_u = G_u + (G_g * kap)[:, None] * e_u
            psi_uw = (G_uw + G_gw[:, None] * kap[:, None] * e_u
                      + G_gu * (kap * e_w)[:, None]
                      + (G_g * kap)[:, None] * e_uw)
            sym_ge = np.einsum("jp,jq->jpq", G_gu, e_u) + np.einsum(
                "jp,jq->jpq", e_u, G_gu
            )
            psi_uu = G_uu + kap[:, None, None] * sym_ge + (G_g * kap)[:, None, None] * e_uu
        else:
            psi_u, psi_uw, psi_uu = G_u, G_uw, G_uu

        pd.psi_u = psi_u
        pd.psi_uw = psi_uw
        pd.psi_ug = G_gu
        pd.psi_uu = psi_uu
        if self.time_order == 2:
            bv = m.coeff_b.value(u, w)
            pd.q_uwd = -b_u / den[:, None] + (bv / den ** 2)[:, None] * den_u

    # -- public operators --------------------------------------------------

    def eval_f(self, u: Array, x: Array) -> Array:
        return self.point_data(u, x).f

    def _split(self, v):
        return v[: self.n_w], v[self.n_w:]

    def apply_dfdx(self, u, x, v, pd: Optional[PointData] = None) -> Array:
        pd = pd or self.point_data(u, x)
        st = self.stencil
        if self.time_order == 1:
            return pd.jdiag * v + pd.fgh * _gather(st.soff_idx, st.soff_coef, v)
        vW, vWd = self._split(np.asarray(v))
        gW = pd.jdiag * vW + pd.fgh * _gather(st.soff_idx, st.soff_coef, vW)
        return np.concatenate([vWd, gW + pd.gwd_diag * vWd])

    def apply_dfdx_T(self, u, x, v, pd: Optional[PointData] = None) -> Array:
        pd = pd or self.point_data(u, x)
        st = self.stencil
        if self.time_order == 1:
            return pd.jdiag * v + _gather(st.sofft_idx, st.sofft_coef, pd.fgh * v)
        vW, vWd = self._split(np.asarray(v))
        outW = pd.jdiag * vWd + _gather(st.sofft_idx, st.sofft_coef, pd.fgh * vWd)
        outWd = vW + pd.gwd_diag * vWd
        return np.concatenate([outW, outWd])

    def apply_dfdu(self, u, x, v, pd: Optional[PointData] = None) -> Array:
        pd = pd or self.point_data(u, x)
        st = self.stencil
        fieldpart = pd.fgh * _gather(st.su_idx, st.su_coef, v)
        if pd.psi_u is not None:
            fieldpart = fieldpart + pd.psi_u @ v
        if self.time_order == 1:
            return fieldpart
        return np.concatenate([np.zeros(self.n_w), fieldpart])

    def apply_dfdu_T(self, u, x, v, pd: Optional[PointData] = None) -> Array:
        pd = pd or self.point_data(u, x)
        st = self.stencil
        vf = v if self.time_order == 1 else np.asarray(v)[self.n_w:]
        out = _gather(st.sut_idx, st.sut_coef, pd.fgh * vf)
        if pd.psi_u is not None:
            out = out + pd.psi_u.T @ vf
        return out

    def diag_dfdx(self, u, x, pd: Optional[PointData] = None) -> Array:
        pd = pd or self.point_data(u, x)
        if self.time_order == 1:
            return pd.jdiag.copy()
        return np.concatenate([np.zeros(self.n_w), pd.gwd_diag])

    def apply_hess_lambda(self, u, x, lam, v, block: str,
                          pd: Optional[PointData] = None) -> Array:
        """Contraction of the second derivative of lam' f with a vector.

        block selects d2(lam' f)/d(row)d(col) in {xx, xu, ux, uu}; v lives in
        the column space and the result in the row space.
        """
        pd = pd or self.point_data(u, x)
        st = self.stencil
        lam = np.asarray(lam, dtype=float)
        mu = lam if self.time_order == 1 else lam[self.n_w:]

        def shat(z):       # full stencil (diag + off) applied to z
            return st.s_diag * z + _gather(st.soff_idx, st.soff_coef, z)

        def shat_T(z):
            return st.s_diag * z + _gather(st.sofft_idx, st.sofft_coef, z)

        hw = mu * pd.psi_wg
        if block == "xx":
            if self.time_order == 1:
                vW = v
            else:
                vW, vWd = self._split(np.asarray(v))
            outW = (mu * pd.psi_ww + 2.0 * hw * st.s_diag) * vW
            outW = outW + hw * _gather(st.soff_idx, st.soff_coef, vW)
            outW = outW + _gather(st.sofft_idx, st.sofft_coef, hw * vW)
            if self.time_order == 1:
                return outW
            q = mu * pd.q_wwd
            return np.concatenate([outW + q * vWd, q * vW])

        if block == "xu":
            out = hw * _gather(st.su_idx, st.su_coef, v)
            if pd.psi_uw is not None:
                out = out + mu * (pd.psi_uw @ v)
                out = out + shat_T(mu * (pd.psi_ug @ v))
            if self.time_order == 1:
                return out
            outWd = np.zeros(self.n_w)
            if pd.q_uwd is not None:
                outWd = mu * (pd.q_uwd @ v)
            return np.concatenate([out, outWd])

        if block == "ux":
            if self.time_order == 1:
                vW = v
            else:
                vW, vWd = self._split(np.asarray(v))
            out = _gather(st.sut_idx, st.sut_coef, hw * vW)
            if pd.psi_uw is not None:
                out = out + pd.psi_uw.T @ (mu * vW)
                out = out + pd.psi_ug.T @ (mu * shat(vW))
            if self.time_order == 2 and pd.q_uwd is not None:
                out = out + pd.q_uwd.T @ (mu * vWd)
            return out

        if block == "uu":
            out = np.zeros(self.n_u)
            if pd.psi_uu is not None:
                out = out + np.einsum("j,jpq,q->p", mu, pd.psi_uu, v)
                out = out + pd.psi_ug.T @ (mu * _gather(st.su_idx, st.su_coef, v))
                out = out + _gather(st.sut_idx, st.sut_coef, mu * (pd.psi_ug @ v))
            return out

        raise ValueError(f"unknown hessian block {block!r}")


def discretize(model: PdeModel, grid: SpatialGrid) -> DiscretizedSystem:
    """Build the matrix-free discretized system for a PDE model on a grid."""
    return DiscretizedSystem(model, grid)


def finite_difference_check(sys: DiscretizedSystem, u, x, lam,
                            rng: Optional[np.random.Generator] = None,
                            n_dirs: int = 3) -> dict:
    """Compare every operator against central differences of eval_f.

    Returns a dict of max relative discrepancies per operator family plus an
    ``ok`` flag (True when everything is below 1e-5). Steps are 1e-6 scaled
    by the magnitude of the perturbed variable.
    """
    rng = rng or np.random.default_rng(0)
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))

    report = {}

    def dirstep(v, base):
        nv = np.linalg.norm(v)
        scale = 1.0 + float(np.max(np.abs(base)))
        return 1e-6 * scale / nv if nv > 0 else 1e-6

    errs = {k: 0.0 for k in
            ("dfdx", "dfdx_T", "dfdu", "dfdu_T", "hess_xx", "hess_xu",
             "hess_ux", "hess_uu")}
    for _ in range(n_dirs):
        vx = rng.standard_normal(sys.n_x)
        vu = rng.standard_normal(sys.n_u) if sys.n_u else np.zeros(0)

        dx = dirstep(vx, x)
        fd = (sys.eval_f(u, x + dx * vx) - sys.eval_f(u, x - dx * vx)) / (2 * dx)
        errs["dfdx"] = max(errs["dfdx"], rel(sys.apply_dfdx(u, x, vx), fd))

        wx = rng.standard_normal(sys.n_x)
        jt = sys.apply_dfdx_T(u, x, wx)
        # transpose checked through the adjoint identity against the FD Jacobian
        errs["dfdx_T"] = max(errs["dfdx_T"],
                             abs(float(wx @ sys.apply_dfdx(u, x, vx) - jt @ vx))
                             / (1.0 + abs(float(jt @ vx))))

        if sys.n_u:
            du_ = dirstep(vu, u)
            fdu = (sys.eval_f(u + du_ * vu, x) - sys.eval_f(u - du_ * vu, x)) / (2 * du_)
            errs["dfdu"] = max(errs["dfdu"], rel(sys.apply_dfdu(u, x, vu), fdu))
            wu = rng.standard_normal(sys.n_u)
            errs["dfdu_T"] = max(
                errs["dfdu_T"],
                abs(float(wx @ sys.apply_dfdu(u, x, vu)
                          - sys.apply_dfdu_T(u, x, wx) @ vu))
                / (1.0 + abs(float(wx @ sys.apply_dfdu(u, x, vu)))),
            )

        def grad_x(uu, xx):
            return sys.apply_dfdx_T(uu, xx, lam)

        def grad_u(uu, xx):
            return sys.apply_dfdu_T(uu, xx, lam)

        dx2 = dirstep(vx, x)
        fdh = (grad_x(u, x + dx2 * vx) - grad_x(u, x - dx2 * vx)) / (2 * dx2)
        errs["hess_xx"] = max(errs["hess_xx"],
                              rel(sys.apply_hess_lambda(u, x, lam, vx, "xx"), fdh))
        if sys.n_u:
            du2 = dirstep(vu, u)
            fdh = (grad_x(u + du2 * vu, x) - grad_x(u - du2 * vu, x)) / (2 * du2)
            errs["hess_xu"] = max(errs["hess_xu"],
                                  rel(sys.apply_hess_lambda(u, x, lam, vu, "xu"), fdh))
            fdh = (grad_u(u, x + dx2 * vx) - grad_u(u, x - dx2 * vx)) / (2 * dx2)
            errs["hess_ux"] = max(errs["hess_ux"],
                                  rel(sys.apply_hess_lambda(u, x, lam, vx, "ux"), fdh))
            fdh = (grad_u(u + du2 * vu, x) - grad_u(u - du2 * vu, x)) / (2 * du2)
            errs["hess_uu"] = max(errs["hess_uu"],
                                  rel(sys.apply_hess_lambda(u, x, lam, vu, "uu"), fdh))

    report.update(errs)
    report["ok"] = all(v <= 1e-5 for v in errs.values())
    return report
