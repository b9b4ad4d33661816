"""
Pydantic models for evaluation results and experiment reports.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class EditOps(BaseModel):
    """Minimal Levenshtein operation counts between a reference and a hypothesis."""

    substitutions: int = Field(..., ge=0)
    deletions: int = Field(..., ge=0)
    insertions: int = Field(..., ge=0)
    ref_length: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_counts(self) -> "EditOps":
        if self.substitutions + self.deletions > self.ref_length:
            raise ValueError("substitutions + deletions cannot exceed the reference length")
        return self

    @property
    def cost(self) -> int:
        return self.substitutions + self.deletions + self.insertions


class BaselineReport(BaseModel):
    """Pre-adaptation evaluation of the pretrained base model."""

    target_wer: float
    target_cer: float
    general_wer: float
    general_cer: float


class SegmentReport(BaseModel):
    """Evaluation and training statistics after one adapted segment."""

    segment: int = Field(..., ge=1)
    target_wer: float = Field(..., ge=0)
    target_cer: float = Field(..., ge=0)
    general_wer: float = Field(..., ge=0)
    general_cer: float = Field(..., ge=0)
    forgetting: float
    mean_train_loss: float
    max_grad_norm: float = Field(..., ge=0)
    wall_time: float = Field(0.0, ge=0)
    grad_norms: List[float] = Field(default_factory=list)


class ExperimentResult(BaseModel):
    """Baseline plus the per-segment trajectory of one paradigm run."""

    preset: str
    seed: int
    baseline: BaselineReport
    reports: List[SegmentReport]
    base_fingerprint: str
    config: Optional[Dict] = None


class ParetoRow(BaseModel):
    """One paradigm row of the stability/plasticity comparison table."""

    paradigm: str
    final_target_wer: float
    relative_improvement: float
    final_general_wer: float
    forgetting: float


class LMCheckRow(BaseModel):
    """One row of the LM spot check: a model decoded with or without the LM."""

    model: str
    decoder: str
    wer: float
    cer: float
