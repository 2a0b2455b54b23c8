"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(PipelineError, FileNotFoundError):
    pass


class HeaderMismatch(PipelineError):
    pass


class HuRangeViolation(PipelineError):
    pass


class DimMismatch(PipelineError):
    pass


class EmptyMask(PipelineError):
    """Raised when a combined organ mask has no set voxel; the study is excluded."""


class BoxOutOfRange(PipelineError):
    pass


class EmptyInput(PipelineError):
    pass


class ShapeMismatch(PipelineError, ValueError):
    pass


class LabelOutOfRange(PipelineError, ValueError):
    pass


class OutOfEncodableRange(PipelineError, ValueError):
    pass


class NoPresentLandmarks(PipelineError):
    pass


class ConfigInvalid(PipelineError, ValueError):
    pass


class MissingPrerequisite(PipelineError):
    pass


class DegenerateValidationSet(PipelineError, ValueError):
    pass


class LengthMismatch(PipelineError, ValueError):
    pass
