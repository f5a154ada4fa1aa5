"""Exception hierarchy shared by all modules."""


class AtobsError(Exception):
    """Base class for every error raised by this package."""


class SpectraOverlap(AtobsError):
    """Sylvester equation has no unique solution (spectra too close)."""


class NotStabilizable(AtobsError):
    pass


class ZeroMatrix(AtobsError):
    pass


class AssumptionViolated(AtobsError):
    pass


class TrivialCase(AtobsError):
    """rank of the decoupled output map equals n; x follows from y algebraically."""


class ZeroUnknownInput(AtobsError):
    pass


class NotObservable(AtobsError):
    pass


class StackSingular(AtobsError):
    pass


class PlacementFailed(AtobsError):
    pass


class EigenvalueClash(SpectraOverlap):
    pass


class TauInadmissible(AtobsError):
    """Reconstruction matrix is (numerically) singular at the requested tau.

    ``suggestions`` lists nearby tau values that clear the conditioning
    margin; it may be empty (e.g. ``tau == 0``).
    """

    def __init__(self, tau, rcond, suggestions=()):
        self.tau = float(tau)
        self.rcond = float(rcond)
        self.suggestions = tuple(float(s) for s in suggestions)
        msg = f"tau={self.tau:g} is inadmissible (reciprocal condition {self.rcond:.3e})"
        if self.suggestions:
            msg += "; try tau in " + ", ".join(f"{s:.6g}" for s in self.suggestions)
        super().__init__(msg)


class ConfigError(AtobsError):
    pass


class Divergence(AtobsError):
    pass


class ConfigParseError(ConfigError):
    """Malformed configuration text; ``line`` and ``column`` are 1-based (0 if unknown)."""

    def __init__(self, message, line=0, column=0, path=None):
        self.line = int(line)
        self.column = int(column)
        self.path = path
        where = f"{path or '<config>'}:{self.line}:{self.column}: " if self.line else ""
        super().__init__(where + message)
