"""Shared exception types (the CLI maps these onto distinct exit codes)."""


class CorpusError(ValueError):
    """Malformed or invariant-violating corpus input."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


class ArtifactFormatError(RuntimeError):
    """Binary artifact has an unknown magic or an unsupported version."""
