"""Exception hierarchy shared across the package."""


class OccamNASError(Exception):
    """Base class for every error raised by occamnas."""


class SpatiallyInfeasible(OccamNASError, ValueError):
    """Too many cells for the input side: a pooling layer would act on side < 2."""


class UnknownPreset(OccamNASError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InfeasibleStart(OccamNASError):
    """The initial search point (k0, 0) violates the hardware target."""


class EvaluationFailed(OccamNASError, RuntimeError):
    """Training diverged or the evaluator could not produce a fitness value."""


class MissingOracleEntry(EvaluationFailed, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class Exhausted(OccamNASError):
    """Halving the kernel count would drop below one kernel."""


class ShapeMismatch(OccamNASError, ValueError):
    pass


class NonFiniteActivation(EvaluationFailed):
    pass


class NonFiniteGradient(EvaluationFailed):
    pass


class WeightFormatError(OccamNASError, ValueError):
    """Weight blob is truncated, malformed or does not match the architecture."""


class DatasetError(OccamNASError, ValueError):
    pass


class BadMagic(DatasetError):
    pass


class TruncatedFile(DatasetError):
    pass


class CountMismatch(DatasetError):
    pass


class EmptyClassDir(DatasetError):
    pass


class EmptyDataset(DatasetError):
    pass


class ClassTooSmall(DatasetError):
    pass
