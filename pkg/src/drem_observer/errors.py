"""Exception hierarchy shared by the library and the CLI."""


class DremError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DremError, ValueError):
    """Bad scenario, gains, flags or config file. The CLI maps this to exit code 3."""


class IntegrationFault(DremError, RuntimeError):
    """A non-finite value showed up while integrating."""

    def __init__(self, message, t=None, stage=None, field=None):
        super().__init__(message)
        self.t = t
        self.stage = stage
        self.field = field


class IntegrityError(DremError, RuntimeError):
    """An invariant that the dynamics guarantee analytically was broken numerically."""


class InsufficientDataError(DremError, ValueError):
    pass
