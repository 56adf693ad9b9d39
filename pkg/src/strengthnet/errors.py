"""Exception hierarchy shared by every stage of the toolkit."""


class StrengthNetError(Exception):
    """Base class for all toolkit errors."""


# audio
class NotWav(StrengthNetError):
    pass


class UnsupportedFormat(StrengthNetError):
    pass


class TooShort(StrengthNetError):
    pass


class EmptyCorpus(StrengthNetError):
    pass


class TooFewFrames(StrengthNetError):
    pass


# ranking
class InsufficientData(StrengthNetError):
    pass


class DegenerateFeatures(StrengthNetError):
    pass


class DimensionMismatch(StrengthNetError):
    pass


class DimensionTooLarge(StrengthNetError):
    pass


class DidNotConverge(UserWarning):
    """Issued (not raised) when the ranker solver hits its iteration cap."""


# differentiable core / model
class ShapeMismatch(StrengthNetError):
    pass


class NonFiniteValue(StrengthNetError):
    pass


class NotScalarLoss(StrengthNetError):
    pass


class CorruptCheckpoint(StrengthNetError):
    pass


class VersionMismatch(StrengthNetError):
    pass


# pipeline
class MissingRanker(StrengthNetError):
    pass


class EmptyManifest(StrengthNetError):
    pass


class MissingFeature(StrengthNetError):
    pass


class NonFiniteLoss(StrengthNetError):
    def __init__(self, message, utterance_ids=(), dump_path=None):
        super().__init__(message)
        self.utterance_ids = list(utterance_ids)
        self.dump_path = dump_path


class ConfigError(StrengthNetError):
    pass


# evaluation
class LengthMismatch(StrengthNetError):
    pass


class Empty(StrengthNetError):
    pass


class OutOfRange(StrengthNetError):
    pass


class ZeroVariance(StrengthNetError):
    pass
