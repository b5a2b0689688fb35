"""
Error types raised across the DCDNN pipeline
"""


class DcdnnError(RuntimeError):
    """Base class for every error the pipeline raises on purpose"""


class ConfigurationError(DcdnnError):
    """Invalid dimensions, schedules, tilings or config files"""


class ShapeError(DcdnnError, ValueError):
    """Vector or matrix lengths do not match what the model expects"""


class UsageError(DcdnnError, ValueError):
    """An operation was called outside its preconditions"""


class DataError(DcdnnError):
    """Non-finite values or data that cannot be interpreted"""


class FormatError(DcdnnError):
    """A model, bank, dataset or image file is malformed"""


class TrainingAborted(DcdnnError):
    """Training stopped because gradients or parameters went non-finite"""
