"""
Parameter importance and the elastic consolidation penalty.

Importance is the mean absolute per-utterance gradient (the squared form is
kept as a comparison variant). Segment estimates are folded into a running
mean and paired with a detached copy of the parameters they were measured at.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from anchorstream.core.checkpoint import atomic_write_text
from anchorstream.core.model import GradientSet, flatten_gradients
from anchorstream.core.tensor import Tensor
from anchorstream.exceptions import CheckpointError, DomainError, ShapeError

logger = logging.getLogger(__name__)

Importance = Literal["absolute", "squared"]

FISHER_VERSION = 1


@dataclass
class FisherState:
    """
    Consolidated importance and anchor.

    Attributes:
        F: Importance per trainable parameter, entrywise >= 0.
        anchor: Parameters the importance was last consolidated at.
        k: Segments consolidated so far; k == 0 disables the penalty.
        lambda_: Penalty strength.
    """

    F: Tensor
    anchor: Tensor
    k: int = 0
    lambda_: float = 0.0

    @classmethod
    def empty(cls, size: int, lambda_: float = 0.0) -> "FisherState":
        return cls(F=np.zeros(size), anchor=np.zeros(size), k=0, lambda_=lambda_)

    def __len__(self) -> int:
        return int(self.F.size)

    def to_json(self) -> Dict:
        return {
            "version": FISHER_VERSION,
            "k": self.k,
            "lambda": self.lambda_,
            "F": [float(x) for x in self.F],
            "anchor": [float(x) for x in self.anchor],
        }

    @classmethod
    def from_json(cls, payload: Dict) -> "FisherState":
        if payload.get("version") != FISHER_VERSION:
            raise CheckpointError(f"unsupported fisher state version {payload.get('version')}")
        return cls(
            F=np.asarray(payload["F"], dtype=np.float64),
            anchor=np.asarray(payload["anchor"], dtype=np.float64),
            k=int(payload["k"]),
            lambda_=float(payload["lambda"]),
        )

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, json.dumps(self.to_json()))


def _stack(grads_per_sample: Sequence[GradientSet], names: Optional[Sequence[str]]) -> Tensor:
    if not grads_per_sample:
        raise DomainError("importance needs at least one per-sample gradient")
    names = list(names) if names is not None else list(grads_per_sample[0])
    rows = [flatten_gradients(g, names) for g in grads_per_sample]
    if len({row.size for row in rows}) != 1:
        raise ShapeError("per-sample gradients have different sizes")
    return np.stack(rows)


def abs_fisher(grads_per_sample: Sequence[GradientSet], names: Optional[Sequence[str]] = None) -> Tensor:
    """
    F[i] = (1/N) sum_j |g_j[i]| over N per-utterance gradients.

    Args:
        grads_per_sample: One GradientSet per utterance.
        names: Flattening order; defaults to the key order of the first set,
            which is the trainable order when the sets come from `backward`.

    Raises:
        DomainError: On an empty list.
    """
    return np.mean(np.abs(_stack(grads_per_sample, names)), axis=0)


def squared_fisher(grads_per_sample: Sequence[GradientSet], names: Optional[Sequence[str]] = None) -> Tensor:
    """Empirical Fisher diagonal F[i] = (1/N) sum_j g_j[i]^2."""
    return np.mean(np.square(_stack(grads_per_sample, names)), axis=0)


def importance(
    grads_per_sample: Sequence[GradientSet],
    kind: Importance = "absolute",
    names: Optional[Sequence[str]] = None,
) -> Tensor:
    if kind == "absolute":
        return abs_fisher(grads_per_sample, names)
    if kind == "squared":
        return squared_fisher(grads_per_sample, names)
    raise DomainError(f"unknown importance kind {kind!r}")


def consolidate(fs: FisherState, F_new: Tensor, theta_now: Tensor) -> FisherState:
    """
    Fold a segment estimate into the running mean and re-anchor.

    k is incremented first, then F <- (F * (k - 1) + F_new) / k. The anchor is
    a copy of `theta_now`, so later in-place updates to the live parameters
    never reach it.

    Raises:
        ShapeError: On length mismatch.
    """
    F_new = np.asarray(F_new, dtype=np.float64)
    theta_now = np.asarray(theta_now, dtype=np.float64)
    if F_new.shape != fs.F.shape or theta_now.shape != fs.anchor.shape:
        raise ShapeError(
            f"consolidate expects length {fs.F.size}, got F_new {F_new.shape} and theta {theta_now.shape}"
        )
    k = fs.k + 1
    F = (fs.F * (k - 1) + F_new) / k
    logger.debug("consolidated importance k=%d mean=%.3e max=%.3e", k, float(F.mean()), float(F.max(initial=0.0)))
    return FisherState(F=F, anchor=theta_now.copy(), k=k, lambda_=fs.lambda_)


def ewc_penalty(fs: FisherState, theta: Tensor) -> Tuple[float, Tensor]:
    """
    Quadratic anchor penalty (lambda / 2) * sum_i F_i (theta_i - anchor_i)^2.

    Returns:
        (loss, grad) with grad = lambda * F * (theta - anchor); (0, zeros)
        before the first consolidation.

    Raises:
        ShapeError: On length mismatch.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != fs.anchor.shape:
        raise ShapeError(f"ewc_penalty expects length {fs.anchor.size}, got {theta.shape}")
    if fs.k == 0:
        return 0.0, np.zeros_like(theta)
    diff = theta - fs.anchor
    weighted = fs.F * diff
    return 0.5 * fs.lambda_ * float(np.dot(weighted, diff)), fs.lambda_ * weighted
