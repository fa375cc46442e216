"""Exception hierarchy shared across the package."""


class CryoflowError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CryoflowError):
    """Tensor or grid shapes are incompatible for the requested operation."""


class InputError(CryoflowError):
    """An argument value is invalid (NaN coordinates, empty sets, bad ranges)."""


class ParseError(CryoflowError):
    """A text record could not be parsed; message names the offending line."""


class EmptyStructureError(CryoflowError):
    """A structure source yielded zero atoms."""


class FormatOverflowError(CryoflowError):
    """A value cannot be represented in the fixed-column output format."""


class StructureCompletenessError(CryoflowError):
    """A residue is missing atoms required by the requested operation."""


class UnsupportedFormatError(CryoflowError):
    """A file uses a mode or layout outside the supported subset."""


class EmptyRenderError(CryoflowError):
    """No atom contributes any density to the target grid."""


class DegenerateInputError(CryoflowError):
    """Too little data for a well-posed result (e.g. alignment of < 3 atoms)."""


class DegenerateMetricError(CryoflowError):
    """A metric's voxel selection is empty; message names the metric."""


class TapeConsumedError(CryoflowError):
    """backward() was called twice on the same tape."""


class TrainingDivergenceError(CryoflowError):
    """Loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ConfigError(CryoflowError):
    """Configuration validation failure; carries the field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
