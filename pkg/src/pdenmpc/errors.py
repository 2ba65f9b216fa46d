"""Exception types shared across the solver stack."""


class PdenmpcError(Exception):
    """Base class for all library errors."""


class ConfigError(PdenmpcError):
    """Invalid run configuration (schema violation, bad value, unknown key)."""


class BarrierDomainError(PdenmpcError):
    """A log-barrier argument G_j(u, x) <= 0 was encountered.

    Carries the stage (0-based, -1 if not stagewise) and the offending
    constraint index so callers can report exactly which inequality left
    the interior.
    """

    def __init__(self, stage: int, index: int, value: float):
        self.stage = stage
        self.index = index
        self.value = value
        super().__init__(
            f"barrier domain violation at stage {stage}: "
            f"G[{index}] = {value:.6g} <= 0"
        )


class SingularStageError(PdenmpcError):
    """A stage linear solve hit a singular matrix or zero diagonal entry."""

    def __init__(self, stage: int, detail: str = ""):
        self.stage = stage
        msg = f"singular stage system at stage {stage}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ZeroDiagonalError(PdenmpcError):
    """Zero diagonal entry in a Jacobi-style solve."""

    def __init__(self, index: int, where: str = ""):
        self.index = index
        where = where or "matrix"
        super().__init__(f"zero diagonal in {where} at index {index}")


class SolverDiverged(PdenmpcError):
    """Closed-loop controller failed to reach its tolerance."""
