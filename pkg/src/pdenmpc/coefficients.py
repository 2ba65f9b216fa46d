"""Pointwise coefficient functions c(u, w) with analytic derivatives.

Every PDE coefficient (and the Neumann boundary function) is a scalar
function of the full input vector u and the local field value w. The solver
evaluates them over batches of grid values, so all methods take a 1-D array
w and return arrays of matching leading shape. A derivative method returning
None means "identically zero"; the assembly layer skips the corresponding
terms entirely, which is what keeps the heat-plate hot path cheap.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

Array = np.ndarray


class Coefficient:
    """Base interface: value plus first/second derivatives in (u, w)."""

    def value(self, u: Array, w: Array) -> Array:
        raise NotImplementedError

    def d_w(self, u: Array, w: Array) -> Optional[Array]:
        return None

    def d_ww(self, u: Array, w: Array) -> Optional[Array]:
        return None

    def d_u(self, u: Array, w: Array) -> Optional[Array]:
        """Gradient in u, shape (len(w), len(u))."""
        return None

    def d_uw(self, u: Array, w: Array) -> Optional[Array]:
        """Mixed derivative, shape (len(w), len(u))."""
        return None

    def d_uu(self, u: Array, w: Array) -> Optional[Array]:
        """Hessian in u, shape (len(w), len(u), len(u))."""
        return None

    @property
    def depends_on_u(self) -> bool:
        return True

    @property
    def is_zero(self) -> bool:
        return False


class ConstantCoefficient(Coefficient):
    def __init__(self, c: float):
        self.c = float(c)

    def value(self, u, w):
        return np.full_like(w, self.c, dtype=float)

    @property
    def depends_on_u(self):
        return False

    @property
    def is_zero(self):
        return self.c == 0.0


#: shorthand for a coefficient that is identically zero
ZERO = ConstantCoefficient(0.0)


class WCoefficient(Coefficient):
    """Coefficient depending on the field value only: c(w)."""

    def __init__(
        self,
        value: Callable[[Array], Array],
        d_w: Optional[Callable[[Array], Array]] = None,
        d_ww: Optional[Callable[[Array], Array]] = None,
    ):
        self._value = value
        self._d_w = d_w
        self._d_ww = d_ww

    def value(self, u, w):
        return np.asarray(self._value(w), dtype=float)

    def d_w(self, u, w):
        return None if self._d_w is None else np.asarray(self._d_w(w), dtype=float)

    def d_ww(self, u, w):
        return None if self._d_ww is None else np.asarray(self._d_ww(w), dtype=float)

    @property
    def depends_on_u(self):
        return False


class GeneralCoefficient(Coefficient):
    """Coefficient from user callables; unsupplied derivatives are zero.

    Callables take (u, w) with w a 1-D array. d_u/d_uw must return
    (len(w), len(u)) arrays, d_uu a (len(w), len(u), len(u)) array.
    """

    def __init__(self, value, d_w=None, d_ww=None, d_u=None, d_uw=None, d_uu=None):
        self._fns = dict(value=value, d_w=d_w, d_ww=d_ww, d_u=d_u, d_uw=d_uw, d_uu=d_uu)

    def _call(self, name, u, w):
        fn = self._fns[name]
        if fn is None:
            return None
        return np.asarray(fn(u, w), dtype=float)

    def value(self, u, w):
        return self._call("value", u, w)

    def d_w(self, u, w):
        return self._call("d_w", u, w)

    def d_ww(self, u, w):
        return self._call("d_ww", u, w)

    def d_u(self, u, w):
        return self._call("d_u", u, w)

    def d_uw(self, u, w):
        return self._call("d_uw", u, w)

    def d_uu(self, u, w):
        return self._call("d_uu", u, w)

    @property
    def depends_on_u(self):
        return any(self._fns[k] is not None for k in ("d_u", "d_uw", "d_uu"))
