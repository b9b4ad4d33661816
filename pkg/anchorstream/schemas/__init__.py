"""
Data models and schemas for anchorstream.
"""

from anchorstream.schemas.config import (
    ExperimentConfig,
    LMConfig,
    ModelConfig,
    StreamConfig,
    TrainConfig,
)
from anchorstream.schemas.reports import (
    BaselineReport,
    EditOps,
    ExperimentResult,
    LMCheckRow,
    ParetoRow,
    SegmentReport,
)

__all__ = [
    "BaselineReport",
    "EditOps",
    "ExperimentConfig",
    "ExperimentResult",
    "LMCheckRow",
    "LMConfig",
    "ModelConfig",
    "ParetoRow",
    "SegmentReport",
    "StreamConfig",
    "TrainConfig",
]
