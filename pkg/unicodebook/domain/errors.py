"""Error hierarchy. Every failure carries the process exit code the CLI reports."""


class UnicodebookError(Exception):
    """Base class for all expected failures."""

    exit_code: int = 1


class UsageError(UnicodebookError):
    """Invalid flags, configuration values or call arguments."""

    exit_code = 2


class ShapeMismatchError(UsageError, ValueError):
    """Operands whose shapes do not conform to the requested operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")
        self.op = op
        self.shapes = shapes


class EmptyMaskError(UsageError):
    """A loss was requested over a sequence with no supervised positions."""


class MissingArtifactError(UnicodebookError):
    """A required dataset, checkpoint or run directory does not exist."""

    exit_code = 3


class CheckpointError(UnicodebookError):
    """A checkpoint or dataset container could not be decoded."""

    exit_code = 3


class ChecksumMismatchError(CheckpointError):
    def __init__(self, segment: str) -> None:
        super().__init__(f"Checksum mismatch in segment '{segment}'")
        self.segment = segment


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ConfigDigestMismatchError(CheckpointError):
    def __init__(self, expected: str, found: str) -> None:
        super().__init__(
            f"Config digest mismatch: loading config is {expected}, file was written with {found}"
        )
        self.expected = expected
        self.found = found


class CorpusMismatchError(UsageError):
    """Runs being compared were trained on different corpora or seeds."""


class MissingSampleKindError(UsageError):
    """An instruction corpus lacks a sample kind the stage requires."""


class NumericalError(UnicodebookError):
    """NaN or Inf encountered in a loss or gradient."""

    exit_code = 4

    def __init__(self, message: str, step: int | None = None) -> None:
        suffix = f" (step {step})" if step is not None else ""
        super().__init__(f"{message}{suffix}")
        self.step = step
