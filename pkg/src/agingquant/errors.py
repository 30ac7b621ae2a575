"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class ModelError(ValueError):
    """The delay model is not valid at the requested aging level."""


class SimulationError(RuntimeError):
    """The timing simulator failed to settle."""


class SelectionError(ValueError):
    """Compression selection was asked to choose from nothing."""


class TrainingError(RuntimeError):
    """Training diverged."""
