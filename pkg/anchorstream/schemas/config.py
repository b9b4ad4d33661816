"""
Pydantic configuration models.

Every model forbids unknown keys, so a typo in a JSON config file fails loudly
instead of silently falling back to a default.
"""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

AdapterTarget = Literal["q", "k", "v", "o"]
Mode = Literal["naive", "er", "ewc", "hybrid"]


class ModelConfig(BaseModel):
    """Architecture and LoRA settings of the toy sequence encoder."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d_model: int = Field(32, ge=1)
    n_layers: int = Field(2, ge=1)
    n_heads: int = Field(2, ge=1)
    d_ff: int = Field(64, ge=1)
    feat_dim: int = Field(16, ge=1)
    vocab_size: int = Field(16, ge=1, description="Number of labels, blank excluded")
    lora_rank: int = Field(16, ge=1)
    lora_alpha: float = Field(32.0, gt=0)
    lora_targets: Tuple[AdapterTarget, ...] = ("q", "v")
    lora_init_std: float = Field(0.02, ge=0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.lora_rank > self.d_model:
            raise ValueError(f"lora_rank ({self.lora_rank}) must be <= d_model ({self.d_model})")
        if not self.lora_targets or len(set(self.lora_targets)) != len(self.lora_targets):
            raise ValueError(f"lora_targets must be a non-empty set, got {self.lora_targets}")
        return self

    @property
    def scaling(self) -> float:
        """LoRA scale factor alpha / r."""
        return self.lora_alpha / self.lora_rank

    @property
    def n_outputs(self) -> int:
        """Logit width: labels plus the blank in the last column."""
        return self.vocab_size + 1


class TrainConfig(BaseModel):
    """Optimizer, paradigm and stability-machinery settings."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    mode: Mode = "naive"
    lr: float = Field(3e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    warmup_steps: int = Field(10, ge=0)
    epochs_per_segment: int = Field(3, ge=1)
    batch_size: int = Field(64, ge=1)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)

    gamma: float = Field(0.5, ge=0, le=1, description="Share of each batch drawn from the stream")
    lambda_: float = Field(0.0, ge=0, alias="lambda")
    cap_general: int = Field(0, ge=0)
    cap_target: int = Field(0, ge=0)
    hard_fraction: float = Field(0.6, ge=0, le=1)
    tau: float = Field(1.0, ge=0)

    importance: Literal["absolute", "squared"] = "absolute"
    fisher_source: Literal["mixed", "stream"] = "mixed"
    grad_clip: Optional[float] = Field(None, gt=0)
    explosion_threshold: Optional[float] = Field(None, gt=0)

    pretrain_lr: float = Field(3e-3, gt=0)
    pretrain_batch_size: int = Field(32, ge=1)
    pretrain_max_epochs: int = Field(40, ge=1)
    pretrain_target_wer: float = Field(15.0, ge=0)
    pretrain_warmup_steps: int = Field(50, ge=0)

    eval_beam_width: int = Field(1, ge=1, description="1 evaluates with greedy decoding")
    record_wall_time: bool = False

    @property
    def uses_replay(self) -> bool:
        return self.mode in ("er", "hybrid")

    @property
    def uses_ewc(self) -> bool:
        return self.mode in ("ewc", "hybrid")


class StreamConfig(BaseModel):
    """Shape and difficulty of the synthetic dual-domain stream."""

    model_config = ConfigDict(extra="forbid")

    k_segments: int = Field(8, ge=1)
    per_segment: int = Field(200, ge=1)
    general_train: int = Field(2000, ge=2)
    dev_size: int = Field(300, ge=1)
    min_tokens: int = Field(3, ge=1)
    max_tokens: int = Field(8, ge=1)
    min_frames_per_token: int = Field(2, ge=1)
    max_frames_per_token: int = Field(4, ge=1)
    embed_scale: float = Field(2.0, gt=0)
    general_noise_std: float = Field(0.15, ge=0)
    target_noise_std: float = Field(0.35, ge=0)
    target_condition: float = Field(20.0, ge=10.0)
    target_skew_tokens: int = Field(8, ge=1)
    target_skew_weight: float = Field(3.0, ge=1.0)
    target_markov_strength: float = Field(0.7, ge=0, le=1)
    jitter_std: float = Field(0.05, ge=0)
    balance_mix: float = Field(0.5, ge=0, le=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "StreamConfig":
        if self.min_tokens > self.max_tokens:
            raise ValueError("min_tokens must be <= max_tokens")
        if self.min_frames_per_token > self.max_frames_per_token:
            raise ValueError("min_frames_per_token must be <= max_frames_per_token")
        return self


class LMConfig(BaseModel):
    """Character n-gram LM and decoder fusion settings for the LM spot check."""

    model_config = ConfigDict(extra="forbid")

    order: int = Field(3, ge=1)
    smoothing: float = Field(0.1, gt=0)
    lm_weight: float = Field(0.5, ge=0)
    word_bonus: float = 0.0
    beam_width: int = Field(8, ge=1)


class ExperimentConfig(BaseModel):
    """Fully resolved experiment: preset expansion plus overrides."""

    model_config = ConfigDict(extra="forbid")

    preset: str
    seed: int = Field(7, ge=0, lt=2**64)
    out_dir: str = "runs"
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    stream: StreamConfig = Field(default_factory=StreamConfig)
    lm: LMConfig = Field(default_factory=LMConfig)
