"""Exception hierarchy and CLI exit codes."""


class PeerfxError(Exception):
    """Base class for all errors raised by peerfx."""

    exit_code = 1


class ConfigError(PeerfxError):
    exit_code = 2


class InputFileError(PeerfxError):
    exit_code = 3


class DimensionError(PeerfxError, ValueError):
    exit_code = 4


class DegenerateNetworkError(PeerfxError, ValueError):
    exit_code = 5


class NonContractionError(PeerfxError, ValueError):
    """Raised when |beta1| >= 1 and the outcome system has no unique solution."""

    exit_code = 6


class NonexistenceError(PeerfxError):
    """The fixed-effect MLE does not exist (some node has boundary degree)."""

    exit_code = 7

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(int(i) for i in nodes)


class CollinearityError(PeerfxError):
    exit_code = 8


class OverparameterizationError(PeerfxError, ValueError):
    exit_code = 9


class IdentificationError(PeerfxError):
    """Moment matrices are rank deficient, so beta is not identified."""

    exit_code = 10

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class RankError(IdentificationError):
    """Singular Z'Z or projected first-stage design in 2SLS."""

    exit_code = 11


class PreconditionError(PeerfxError):
    exit_code = 12


class McAbortError(PeerfxError):
    """Too many Monte Carlo replications failed."""

    exit_code = 13

    def __init__(self, message, causes=None):
        super().__init__(message)
        self.causes = dict(causes or {})


EXIT_CODES = {
    "ok": 0,
    "unexpected": 1,
    **{
        cls.__name__: cls.exit_code
        for cls in (
            ConfigError,
            InputFileError,
            DimensionError,
            DegenerateNetworkError,
            NonContractionError,
            NonexistenceError,
            CollinearityError,
            OverparameterizationError,
            IdentificationError,
            RankError,
            PreconditionError,
            McAbortError,
        )
    },
}
