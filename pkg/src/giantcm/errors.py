"""Exception hierarchy shared by all modules."""


class GiantCMError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(GiantCMError, ValueError):
    pass


class InvalidLayoutError(GiantCMError, ValueError):
    pass


class InadmissibleMomentsError(GiantCMError, ValueError):
    pass


class CutoffTooSmallError(GiantCMError, ValueError):
    pass


class InvalidStateError(GiantCMError, ValueError):
    pass


class NonVacuumLeadingError(GiantCMError, ValueError):
    """Bin state has no expansion around the vacuum (squeezed or thermal input)."""


class ScenarioError(GiantCMError, ValueError):
    """Scenario file failed validation; ``problems`` lists every offending key."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class NumericalError(GiantCMError, RuntimeError):
    """A positivity or probability guard tripped during a run."""
