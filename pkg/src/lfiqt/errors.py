"""Exception hierarchy shared by every stage of the toolkit.

Each class carries the CLI exit code it maps to.
"""


class IqtError(Exception):
    exit_code = 2


class FormatError(IqtError):
    """File is not a readable NIfTI-1 image or checkpoint."""


class UnsupportedError(IqtError):
    """Valid file, but a datatype the toolkit does not handle."""


class ShapeError(IqtError):
    pass


class DataError(IqtError):
    pass


class ParameterError(IqtError):
    pass


class GeometryError(IqtError):
    pass


class SpecError(IqtError):
    """Invalid phantom specification."""


class CollapseError(IqtError):
    """A mixture component shrank to zero variance."""

    exit_code = 3

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class NumericError(IqtError):
    exit_code = 3

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingError(IqtError):
    exit_code = 3

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class SimulationError(IqtError):
    """Failure inside the low-field simulation, tagged with the step (1-5)."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)


class VolumeIOError(IqtError):
    pass
