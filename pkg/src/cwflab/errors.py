"""Exception types shared across the package."""


class CwflabError(Exception):
    """Base class for package errors."""


class GridMismatchError(CwflabError):
    """Two objects live on different grids."""


class NormalizationError(CwflabError):
    """A state tagged as normalized is not."""


class OffGridError(CwflabError):
    """A coordinate falls outside the grid domain (or off the lattice
    where exact membership is required)."""


class NodeError(CwflabError):
    """The configuration sits on (or too close to) a node of |psi|^2.

    Carries the offending density and the floor it was tested against.
    """

    def __init__(self, density: float, floor: float, where=None):
        self.density = float(density)
        self.floor = float(floor)
        self.where = where
        msg = f"|psi|^2 = {density:.3e} below node floor {floor:.3e}"
        if where is not None:
            msg += f" at {where}"
        super().__init__(msg)


class GridExitError(CwflabError):
    """A trajectory step would leave the grid domain."""


class IncompleteBasisError(CwflabError):
    """An eigenbasis does not span the numerically relevant subspace.

    Carries the relative completeness residual.
    """

    def __init__(self, residual: float):
        self.residual = float(residual)
        super().__init__(
            f"eigenbasis completeness residual {residual:.3e} exceeds tolerance"
        )


class PostSelectionError(CwflabError):
    """Post-selection overlap below the numerical floor (near-orthogonal)."""


class ValidationError(CwflabError):
    """Bad configuration or arguments supplied by the caller."""
