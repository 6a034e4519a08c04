"""Exception hierarchy shared by every fedpois module."""


class FedPoisError(Exception):
    """Base class for all errors raised by fedpois."""


class DimensionMismatch(FedPoisError, ValueError):
    pass


# data
class MagicMismatch(FedPoisError, ValueError):
    pass


class CountMismatch(FedPoisError, ValueError):
    pass


class TruncatedFile(FedPoisError, ValueError):
    pass


class ExhaustedRetries(FedPoisError, RuntimeError):
    pass


class EmptyShard(FedPoisError, ValueError):
    pass


# model / attacks
class EmptyTrainSplit(FedPoisError, ValueError):
    pass


class TrojanTrainingFailed(FedPoisError, RuntimeError):
    pass


# defense
class EmptyRound(FedPoisError, ValueError):
    pass


class OvertrimmedRound(FedPoisError, ValueError):
    pass


# theory
class ZeroMaliciousDirection(FedPoisError, ValueError):
    pass


class DegenerateOracle(FedPoisError, RuntimeError):
    pass


class NoCompromisedParticipation(FedPoisError, ValueError):
    pass


class EmptyDetectedSet(FedPoisError, ValueError):
    pass


# metrics
class EmptyTestSplit(FedPoisError, ValueError):
    pass


class TooFewClients(FedPoisError, ValueError):
    pass


class EmptyCluster(FedPoisError, ValueError):
    pass


class InsufficientSamples(FedPoisError, ValueError):
    pass


# config
class ConfigInvalid(FedPoisError, ValueError):
    """Raised with one message per offending field."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(ConfigInvalid):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class UnknownKey(ConfigInvalid):
    pass


class CrossFieldViolation(ConfigInvalid):
    pass
