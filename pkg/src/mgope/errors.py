"""Exception hierarchy for the toolkit.

Every error raised by the library derives from :class:`MgopeError` so callers
(and the CLI) can distinguish library failures from programming errors.
"""


class MgopeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MgopeError):
    """Malformed configuration document (unknown key, bad value, missing file)."""


# --- game validation -------------------------------------------------------


class GameValidationError(MgopeError):
    """Base class for game-specification violations."""


class NonStochasticRow(GameValidationError):
    def __init__(self, location, total):
        self.location = location
        self.total = total
        super().__init__(f"probability row {location} sums to {total!r}, not 1")


class NegativeProbability(GameValidationError):
    def __init__(self, location, value):
        self.location = location
        self.value = value
        super().__init__(f"negative probability {value!r} at {location}")


class RewardBoundViolated(GameValidationError):
    def __init__(self, location, value, bound):
        self.location = location
        super().__init__(f"|reward| {abs(value)!r} at {location} exceeds bound {bound!r}")


class HorizonMismatch(MgopeError):
    """Policy or profile horizon/shape does not match the game."""


class DanglingStateReference(MgopeError):
    """Transition graph references a state that does not exist."""


class InvalidCell(MgopeError):
    """Grid cell index outside the board."""


class AlphaOutOfRange(MgopeError):
    """Mixing weight outside [0, 1]."""


# --- numerics --------------------------------------------------------------


class NumericalFailure(MgopeError):
    """An internal numerical routine (matrix-game solve) did not converge."""


class OverlapViolated(MgopeError):
    """Target policy puts mass where the behavior policy has none (infinite ratio)."""


# --- data ------------------------------------------------------------------


class IoError(MgopeError):
    """File could not be read or written."""


class SchemaMismatch(MgopeError):
    """Dataset file does not follow the declared schema (truncated, bad header)."""


class FingerprintMismatch(MgopeError):
    """Dataset was produced by a different game than the one supplied."""


class TooManyFolds(MgopeError):
    """Requested more folds than trajectories."""


# --- nuisances / estimators ------------------------------------------------


class ZeroBehaviorDensity(MgopeError):
    """A realized action has (estimated) behavior probability zero."""


class WeightShapeMismatch(MgopeError):
    """Weight tables do not match the dataset shape."""


class MissingNuisance(MgopeError):
    """Estimator asked for a nuisance object that was not fitted."""


class FoldMismatch(MgopeError):
    """Weight tables / nuisances were fitted for a different fold structure."""


class ObjectiveFailure(MgopeError):
    """Objective function raised during policy optimization."""


class BudgetExceeded(MgopeError):
    """Experiment would exceed the configured sample budget."""
