"""
AdamW with decoupled weight decay and a linear warmup, over flat parameter vectors.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from anchorstream.core.tensor import Tensor
from anchorstream.exceptions import GradientExplosionError, ShapeError
from anchorstream.schemas.config import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First/second moments aligned to the trainable vector, the step counter and the norm history."""

    m: Tensor
    v: Tensor
    t: int = 0
    grad_norms: List[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, size: int) -> "OptimizerState":
        return cls(m=np.zeros(size), v=np.zeros(size))


def warmup_factor(t: int, warmup_steps: int) -> float:
    """min(1, t / warmup_steps); 1 when warmup is disabled."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, t / warmup_steps)


def adamw_step(opt: OptimizerState, theta: Tensor, grad: Tensor, cfg: TrainConfig) -> Tuple[OptimizerState, Tensor]:
    """
    One bias-corrected AdamW update.

    theta' = theta - lr_eff * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta),
    with lr_eff = lr * min(1, t / warmup_steps) and t counted after the increment.

    Raises:
        ShapeError: If theta, grad and the moments differ in length.
        GradientExplosionError: If the gradient is non-finite or its norm exceeds
            `cfg.explosion_threshold`.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not theta.shape == grad.shape == opt.m.shape == opt.v.shape:
        raise ShapeError(
            f"adamw_step length mismatch: theta {theta.shape}, grad {grad.shape}, moments {opt.m.shape}"
        )

    t = opt.t + 1
    norm = float(np.linalg.norm(grad))
    if not np.isfinite(norm):
        raise GradientExplosionError(norm, step=t)
    if cfg.explosion_threshold is not None and norm > cfg.explosion_threshold:
        raise GradientExplosionError(norm, step=t)
    if cfg.grad_clip is not None and norm > cfg.grad_clip:
        grad = grad * (cfg.grad_clip / norm)

    beta1, beta2 = cfg.adam_beta1, cfg.adam_beta2
    m = beta1 * opt.m + (1.0 - beta1) * grad
    v = beta2 * opt.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)

    lr_eff = cfg.lr * warmup_factor(t, cfg.warmup_steps)
    theta_new = theta - lr_eff * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * theta)
    logger.debug("adamw step %d: |g|=%.4e lr_eff=%.3e", t, norm, lr_eff)
    return OptimizerState(m=m, v=v, t=t, grad_norms=[*opt.grad_norms, norm]), theta_new
