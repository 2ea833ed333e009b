"""Exception hierarchy shared by all pickrank modules."""


class PickrankError(Exception):
    """Base class for every error raised by this package."""


# geometry
class DegenerateInput(PickrankError, ValueError):
    pass


class NoConvergence(PickrankError, RuntimeError):
    pass


class InvalidShrink(PickrankError, ValueError):
    pass


# eoat
class NoFeasibleCup(PickrankError):
    """No cup of the layout fits inside the (shrunk) ellipse."""


class EmptySegment(PickrankError):
    """A segment produced no lookup pick."""


class SamplingExhausted(PickrankError):
    pass


class InvalidNormal(PickrankError, ValueError):
    pass


# scene
class PlacementExhausted(PickrankError):
    pass


class UnknownSegment(PickrankError, KeyError):
    pass


# ranking
class MissingModel(PickrankError):
    pass


# gbdt
class EmptyDataset(PickrankError, ValueError):
    pass


class DegenerateLabels(PickrankError, ValueError):
    pass


class FeatureMismatch(PickrankError, ValueError):
    pass


class EmptyEnsemble(PickrankError, ValueError):
    pass


class NoSplits(PickrankError):
    pass


# harness
class InvalidCounts(PickrankError, ValueError):
    pass
