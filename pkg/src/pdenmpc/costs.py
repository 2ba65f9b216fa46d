"""Stage costs, inequality constraints, and log-barrier terms.

Two tiers exist on purpose. The quadratic tracking cost and the input box
constraints cover the benchmark problem class and expose the diagonal
structure the fast stage solver relies on. The callable variants accept
arbitrary twice-differentiable functions and are meant for small oracle
problems solved in exact (dense) mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BarrierDomainError

Array = np.ndarray


# ---------------------------------------------------------------------------
# stage costs
# ---------------------------------------------------------------------------

class StageCost:
    """Per-stage cost l_i(u, x) with gradients and Hessian structure."""

    diagonal_hessian = False

    def value(self, i: int, u: Array, x: Array) -> float:
        raise NotImplementedError

    def grad(self, i: int, u: Array, x: Array):
        """Returns (dl/dx, dl/du)."""
        raise NotImplementedError

    def hess_diag(self, i: int, u: Array, x: Array):
        """Returns (diag d2l/dx2, diag d2l/du2) when diagonal_hessian."""
        raise NotImplementedError

    def hess_dense(self, i: int, u: Array, x: Array):
        """Returns dense (Hxx, Huu, Hxu); default expands the diagonal."""
        dx, du = self.hess_diag(i, u, x)
        return np.diag(dx), np.diag(du), np.zeros((len(x), len(u)))


class QuadraticTrackingCost(StageCost):
    """0.5 ||x - x_ref||_Q^2 + 0.5 ||u - u_ref||_R^2 with diagonal Q, R.

    References may be a single vector (shared by all stages) or one row per
    stage.
    """

    diagonal_hessian = True

    def __init__(self, q_diag: Array, r_diag: Array, x_ref: Array, u_ref: Array):
        self.q_diag = np.asarray(q_diag, dtype=float)
        self.r_diag = np.asarray(r_diag, dtype=float)
        self.x_ref = np.atleast_2d(np.asarray(x_ref, dtype=float))
        self.u_ref = np.atleast_2d(np.asarray(u_ref, dtype=float))

    def _refs(self, i):
        xr = self.x_ref[min(i, self.x_ref.shape[0] - 1)]
        ur = self.u_ref[min(i, self.u_ref.shape[0] - 1)]
        return xr, ur

    def value(self, i, u, x):
        xr, ur = self._refs(i)
        return 0.5 * float(self.q_diag @ (x - xr) ** 2 + self.r_diag @ (u - ur) ** 2)

    def grad(self, i, u, x):
        xr, ur = self._refs(i)
        return self.q_diag * (x - xr), self.r_diag * (u - ur)

    def hess_diag(self, i, u, x):
        return self.q_diag, self.r_diag


class CallableCost(StageCost):
    """Arbitrary stage cost from callables (dense Hessians, oracle paths)."""

    diagonal_hessian = False

    def __init__(self, value: Callable, grad_x: Callable, grad_u: Callable,
                 hess_xx: Callable, hess_uu: Callable,
                 hess_xu: Optional[Callable] = None):
        self._value = value
        self._grad_x = grad_x
        self._grad_u = grad_u
        self._hess_xx = hess_xx
        self._hess_uu = hess_uu
        self._hess_xu = hess_xu

    def value(self, i, u, x):
        return float(self._value(u, x))

    def grad(self, i, u, x):
        return np.asarray(self._grad_x(u, x), float), np.asarray(self._grad_u(u, x), float)

    def hess_dense(self, i, u, x):
        hxx = np.asarray(self._hess_xx(u, x), float)
        huu = np.asarray(self._hess_uu(u, x), float)
        hxu = (np.zeros((len(x), len(u))) if self._hess_xu is None
               else np.asarray(self._hess_xu(u, x), float))
        return hxx, huu, hxu

    def hess_diag(self, i, u, x):
        hxx, huu, _ = self.hess_dense(i, u, x)
        return np.diag(hxx).copy(), np.diag(huu).copy()


# ---------------------------------------------------------------------------
# inequality constraints G(u, x) >= 0 and their log barrier
# ---------------------------------------------------------------------------

class ConstraintSet:
    """Vector inequality G(u, x) >= 0 with everything the barrier needs."""

    n_g = 0
    input_only = True
    affine = False

    def eval_g(self, u: Array, x: Array) -> Array:
        raise NotImplementedError

    def check_interior(self, u, x, stage: int = -1) -> Array:
        g = self.eval_g(u, x)
        bad = np.nonzero(g <= 0.0)[0]
        if bad.size:
            j = int(bad[0])
            raise BarrierDomainError(stage, j, float(g[j]))
        return g

    def barrier_value(self, u, x, tau: float, stage: int = -1) -> float:
        g = self.check_interior(u, x, stage)
        return -tau * float(np.log(g).sum())

    def barrier_grad(self, u, x, tau: float, stage: int = -1):
        """Returns (d/dx, d/du) of -tau sum log G."""
        raise NotImplementedError

    def barrier_hess_u_diag(self, u, x, tau: float) -> Array:
        """Diagonal of the u-u barrier Hessian (structured constraints only)."""
        raise NotImplementedError

    def barrier_hess_dense(self, u, x, tau: float):
        """Dense (Bxx, Buu, Bxu) barrier Hessian blocks."""
        raise NotImplementedError


class NoConstraints(ConstraintSet):
    n_g = 0
    affine = True

    def eval_g(self, u, x):
        return np.zeros(0)

    def check_interior(self, u, x, stage=-1):
        return np.zeros(0)

    def barrier_value(self, u, x, tau, stage=-1):
        return 0.0

    def barrier_grad(self, u, x, tau, stage=-1):
        return np.zeros_like(x), np.zeros_like(u)

    def barrier_hess_u_diag(self, u, x, tau):
        return np.zeros_like(u)

    def barrier_hess_dense(self, u, x, tau):
        nx, nu = len(x), len(u)
        return np.zeros((nx, nx)), np.zeros((nu, nu)), np.zeros((nx, nu))


class BoxInputConstraints(ConstraintSet):
    """lb <= u <= ub, stacked as G = [u - lb; ub - u] >= 0."""

    input_only = True
    affine = True

    def __init__(self, lb, ub):
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)
        if np.any(self.ub <= self.lb):
            raise ValueError("box bounds must satisfy lb < ub componentwise")
        self.n_g = 2 * len(self.lb)

    def eval_g(self, u, x=None):
        return np.concatenate([u - self.lb, self.ub - u])

    def barrier_grad(self, u, x, tau, stage=-1):
        g = self.check_interior(u, x, stage)
        n = len(self.lb)
        gu = -tau * (1.0 / g[:n] - 1.0 / g[n:])
        return np.zeros_like(x) if x is not None else None, gu

    def barrier_hess_u_diag(self, u, x, tau):
        g = self.eval_g(u)
        n = len(self.lb)
        return tau * (1.0 / g[:n] ** 2 + 1.0 / g[n:] ** 2)

    def barrier_hess_dense(self, u, x, tau):
        nx = len(x) if x is not None else 0
        nu = len(u)
        buu = np.diag(self.barrier_hess_u_diag(u, x, tau))
        return np.zeros((nx, nx)), buu, np.zeros((nx, nu))

    def max_step_ratio(self, u: Array, du: Array) -> float:
        """Largest alpha with G(u - alpha du) >= 0.005 G(u), exact for the box."""
        g = self.eval_g(u)
        d = np.concatenate([du, -du])
        pos = d > 0.0
        if not np.any(pos):
            return 1.0
        return float(min(1.0, np.min(0.995 * g[pos] / d[pos])))


class CallableConstraints(ConstraintSet):
    """General G(u, x) >= 0 from callables; barrier pieces built densely.

    jac_u/jac_x return (n_g, n_u)/(n_g, n_x); hess_contract(u, x, w) returns
    the (xx, uu, xu) blocks of sum_j w_j * hess G_j and may be omitted for
    affine G.
    """

    input_only = False
    affine = False

    def __init__(self, n_g: int, g: Callable, jac_u: Callable,
                 jac_x: Optional[Callable] = None,
                 hess_contract: Optional[Callable] = None):
        self.n_g = n_g
        self._g = g
        self._jac_u = jac_u
        self._jac_x = jac_x
        self._hess = hess_contract

    def eval_g(self, u, x=None):
        return np.asarray(self._g(u, x), dtype=float)

    def _jacs(self, u, x):
        ju = np.asarray(self._jac_u(u, x), dtype=float)
        if self._jac_x is None:
            jx = np.zeros((self.n_g, len(x) if x is not None else 0))
        else:
            jx = np.asarray(self._jac_x(u, x), dtype=float)
        return jx, ju

    def barrier_grad(self, u, x, tau, stage=-1):
        g = self.check_interior(u, x, stage)
        jx, ju = self._jacs(u, x)
        w = tau / g
        return -(jx.T @ w), -(ju.T @ w)

    def barrier_hess_dense(self, u, x, tau):
        g = self.eval_g(u, x)
        jx, ju = self._jacs(u, x)
        w2 = tau / g ** 2
        bxx = jx.T @ (w2[:, None] * jx)
        buu = ju.T @ (w2[:, None] * ju)
        bxu = jx.T @ (w2[:, None] * ju)
        if self._hess is not None:
            cxx, cuu, cxu = self._hess(u, x, -tau / g)
            bxx = bxx + cxx
            buu = buu + cuu
            bxu = bxu + cxu
        return bxx, buu, bxu

    def barrier_hess_u_diag(self, u, x, tau):
        return np.diag(self.barrier_hess_dense(u, x, tau)[1]).copy()
