"""Exception hierarchy shared by all modules."""


class KitRecoverError(Exception):
    """Base class for package errors."""


class InvalidInput(KitRecoverError, ValueError):
    pass


class NoOverlap(KitRecoverError, ValueError):
    """Streams passed to ``align`` share no common time span."""


class FitError(KitRecoverError, RuntimeError):
    pass


class NumericalError(KitRecoverError, FloatingPointError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class MissingPolicy(KitRecoverError, LookupError):
    """No re-enactment policy exists for a (node, anomaly class) pair."""


class AlreadyRegistered(KitRecoverError, KeyError):
    pass


class GraphError(KitRecoverError, RuntimeError):
    pass
