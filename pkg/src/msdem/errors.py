"""Exception hierarchy shared by all msdem modules."""


class MsdemError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(MsdemError):
    """Invalid configuration: bad grid, schedule, cell sizes, unknown scenario..."""


class OutOfDomainError(MsdemError):
    pass


class DegenerateContactError(MsdemError):
    """Two floes are engulfed (d <= |r_l - r_j|) or concentric."""

    def __init__(self, message, l=None, j=None):
        super().__init__(message)
        self.l = l
        self.j = j


class DegenerateCellError(MsdemError):
    pass


class StabilityError(MsdemError):
    """A continuum step would violate the CFL bound."""


class DivergenceError(MsdemError):
    """Non-finite state detected after a step.

    ``floe`` is the offending floe index (within the array that was stepped),
    ``cell`` and ``coarse_step`` are filled in by the coupling driver when known.
    """

    def __init__(self, message, floe=None, cell=None, coarse_step=None):
        super().__init__(message)
        self.floe = floe
        self.cell = cell
        self.coarse_step = coarse_step

    def __str__(self):
        base = super().__str__()
        ctx = []
        if self.coarse_step is not None:
            ctx.append(f"coarse step {self.coarse_step}")
        if self.cell is not None:
            ctx.append(f"cell {self.cell}")
        if self.floe is not None:
            ctx.append(f"floe {self.floe}")
        return f"{base} ({', '.join(ctx)})" if ctx else base
