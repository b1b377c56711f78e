"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class SkelError(Exception):
    exit_code = 1
    code = "error"


class VolumeError(SkelError):
    exit_code = 3
    code = "volume"


class MissingFileError(VolumeError):
    code = "missing_file"


class SizeMismatchError(VolumeError):
    code = "size_mismatch"


class SpacingError(VolumeError):
    code = "bad_spacing"


class HeaderError(VolumeError):
    code = "bad_header"


class ModelError(SkelError):
    exit_code = 4
    code = "model"


class ModelFormatError(ModelError):
    code = "malformed_model"


class ModelVersionError(ModelError):
    code = "model_version"


class ModelMissingError(ModelError):
    code = "missing_model"


class DataError(SkelError):
    """Invalid inputs to a numeric stage (empty bones, bad shapes, ...)."""

    exit_code = 5
    code = "data"


class FrameError(DataError):
    code = "frame_undeterminable"


class TrainingError(DataError):
    code = "training"


class PhantomError(SkelError):
    exit_code = 6
    code = "phantom"


class ConfigError(SkelError):
    exit_code = 7
    code = "config"


class EvalError(SkelError):
    exit_code = 8
    code = "eval"


class StageError(SkelError):
    """Wraps an error raised inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        self.code = getattr(cause, "code", "error")
