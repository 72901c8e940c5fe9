"""Exception hierarchy. All derive from :class:`CurvelabError`."""


class CurvelabError(Exception):
    """Base class for every error raised by curvelab."""


class InvalidTripleError(CurvelabError, ValueError):
    """Malformed state space, measure or edge weights."""


class InvalidFieldError(CurvelabError, ValueError):
    """A field does not match the state space it is applied to."""


class InvalidParameterError(CurvelabError, ValueError):
    pass


class InvalidMeasureError(CurvelabError, ValueError):
    """Negative masses or total mass different from one."""


class InvalidGridError(CurvelabError, ValueError):
    pass


class CatalogError(CurvelabError, KeyError):
    """Unknown entry requested from a fixed catalog (eta, beta, kernel...)."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericalError(CurvelabError, RuntimeError):
    """A numerical routine failed (eigensolver, LP, iteration cap)."""


class InvalidKernelError(InvalidParameterError):
    """Mollifier kernel not normalized or badly supported."""


class DegenerateMetricError(InvalidParameterError):
    """A distance table has zero distance between distinct states."""
