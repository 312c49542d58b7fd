"""Exception hierarchy.

Every data-level failure derives from :class:`DataError` so the command line
can map it to exit status 2; configuration mistakes raise :class:`ConfigError`
(exit status 1).
"""


class RiskRankError(Exception):
    """Base class for all package errors."""


class ConfigError(RiskRankError):
    """Malformed or unknown configuration."""


class DataError(RiskRankError):
    """Input data cannot be processed."""


class InputShapeError(DataError, ValueError):
    pass


class InsufficientObservations(DataError, ValueError):
    pass


class SingularDesign(DataError, ValueError):
    pass


class DegenerateDistribution(DataError, ValueError):
    pass


class DegenerateDownside(DataError, ValueError):
    pass


class EmptyCorpus(DataError, ValueError):
    pass


class EmptyDocument(DataError, ValueError):
    pass


class InternalInvariantViolation(RiskRankError, RuntimeError):
    pass


class MissingTrace(RiskRankError, RuntimeError):
    pass


class NonFiniteGradient(DataError, FloatingPointError):
    pass


class NoValidPairs(DataError, ValueError):
    pass


class NoValidTriplets(DataError, ValueError):
    pass


class MissingRiskGroup(DataError, ValueError):
    pass


class DegenerateRanking(DataError, ValueError):
    pass


class DegenerateDifferences(DataError, ValueError):
    pass


class PairingError(DataError, ValueError):
    pass


class NotFound(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class IoError(DataError, OSError):
    pass


class EmptyOutput(DataError, ValueError):
    pass


class CheckpointError(DataError, ValueError):
    pass
