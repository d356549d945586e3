"""Exception hierarchy shared by all modules."""


class HarnessError(Exception):
    """Base class for every error raised by harness_lab."""


# kernel / geometry
class NonStochastic(HarnessError):
    pass


class RangeViolation(HarnessError):
    pass


class EmptySupport(HarnessError):
    pass


class RegionError(HarnessError):
    """Region invariants violated (pinned outside carrier, gamma in free mode, ...)."""


class MissingBoundary(HarnessError):
    pass


class ZeroInteriorMass(HarnessError):
    pass


# engine
class InvalidWindow(HarnessError):
    pass


class InitialMismatch(HarnessError):
    pass


class OriginOutsideCarrier(HarnessError):
    pass


class UnsupportedRegion(HarnessError):
    pass


# dual
class AnchorOutsideCarrier(HarnessError):
    pass


class WindowMismatch(HarnessError):
    pass


class StreamMismatch(HarnessError):
    pass


# d-walk
class TruncationTooSmall(HarnessError):
    pass


# gibbs
class AsymmetricKernel(HarnessError):
    pass


class SelfLoopKernel(HarnessError):
    pass


class NoEscape(HarnessError):
    pass


class DimensionMismatch(HarnessError):
    pass


class NonNestedBoxes(HarnessError):
    pass


class NegativeRadicand(HarnessError):
    pass


class NonGaussianNoise(UserWarning):
    """Reversibility is only claimed for Gaussian noise; statistics are still computed."""


# statistics / runner
class TooFewSamples(HarnessError):
    pass


class NonPositiveData(HarnessError):
    pass


class TooFewPoints(HarnessError):
    pass


class UnknownExperiment(HarnessError):
    pass


class SchemaError(HarnessError):
    pass
