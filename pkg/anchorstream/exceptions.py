"""
Exception hierarchy for anchorstream.

Every error raised on purpose by the package derives from AnchorStreamError so
the CLI can map it to an exit code.
"""

from typing import Optional


class AnchorStreamError(Exception):
    """Base class for all anchorstream errors."""

    exit_code: int = 1


class ShapeError(AnchorStreamError, ValueError):
    """Array shapes or vector lengths disagree."""


class DomainError(AnchorStreamError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(AnchorStreamError, ValueError):
    """Invalid configuration, unknown preset or unknown config key."""

    exit_code = 2


class InfeasibleAlignmentError(AnchorStreamError, ValueError):
    """The label sequence cannot be aligned to the number of frames."""

    def __init__(self, frames: int, required: int):
        self.frames = frames
        self.required = required
        super().__init__(
            f"CTC alignment infeasible: {frames} frames but at least {required} required"
        )


class UndefinedRateError(AnchorStreamError, ValueError):
    """Error rate requested over a corpus with zero reference tokens."""


class ConvergenceError(AnchorStreamError, RuntimeError):
    """Base model pretraining did not reach the configured WER threshold."""

    exit_code = 3

    def __init__(self, final_wer: float, threshold: float, epochs: int):
        self.final_wer = final_wer
        self.threshold = threshold
        self.epochs = epochs
        super().__init__(
            f"pretraining stopped after {epochs} epochs at general-dev WER "
            f"{final_wer:.2f}% (threshold {threshold:.2f}%)"
        )


class GradientExplosionError(AnchorStreamError, RuntimeError):
    """Non-finite or runaway gradient encountered during an update."""

    exit_code = 4

    def __init__(self, norm: float, step: Optional[int] = None):
        self.norm = norm
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"gradient explosion{where}: norm={norm!r}")


class CheckpointError(AnchorStreamError, FileNotFoundError):
    """A checkpoint, dataset or state file is missing or malformed."""
