"""
Per-utterance CTC objectives and their composition with the EWC penalty.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np

from anchorstream.core.ctc import ctc_loss
from anchorstream.core.model import GradientSet, ModelState, Subset, backward, flatten_gradients, forward_with_cache
from anchorstream.core.tensor import Tensor, log_softmax_rows
from anchorstream.exceptions import DomainError
from anchorstream.memory.fisher import FisherState, ewc_penalty
from anchorstream.memory.utterance import Utterance
from anchorstream.schemas.config import Mode

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Map `fn` over `items` on a thread pool; results keep input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def utterance_loss(model: ModelState, utt: Utterance) -> float:
    """Instance CTC loss of one utterance (no gradient)."""
    logits, _ = forward_with_cache(model, utt.feats)
    loss, _ = ctc_loss(log_softmax_rows(logits), utt.ref)
    return loss


def utterance_gradient(model: ModelState, utt: Utterance, subset: Subset = "lora") -> Tuple[float, GradientSet]:
    """Instance CTC loss and its gradient over `subset`."""
    logits, cache = forward_with_cache(model, utt.feats)
    loss, dlogits = ctc_loss(log_softmax_rows(logits), utt.ref)
    return loss, backward(model, utt.feats, dlogits, subset=subset, cache=cache)


def batch_objective(
    model: ModelState,
    batch: Sequence[Utterance],
    subset: Subset = "lora",
    workers: int = 1,
) -> Tuple[float, Tensor, List[float]]:
    """
    Mean CTC loss over a batch and its flat gradient in `subset` order.

    Returns:
        (mean loss, flat mean gradient, per-utterance losses)
    """
    if not batch:
        raise DomainError("batch_objective needs at least one utterance")
    names = model.parameter_names(subset)
    results = ordered_map(lambda utt: utterance_gradient(model, utt, subset), batch, workers)
    losses = [loss for loss, _ in results]
    grad = np.zeros(sum(model.get(n).size for n in names))
    for _, grads in results:
        grad += flatten_gradients(grads, names)
    return float(np.mean(losses)), grad / len(batch), losses


def total_objective(
    batch_ctc_loss: float,
    batch_ctc_grad: Tensor,
    fs: FisherState,
    theta: Tensor,
    mode: Mode,
) -> Tuple[float, Tensor]:
    """
    Add the EWC penalty for the ewc/hybrid paradigms.

    naive and er use the CTC term alone; er differs from naive only in how the
    batch was composed.
    """
    if mode in ("naive", "er"):
        return batch_ctc_loss, batch_ctc_grad
    penalty, penalty_grad = ewc_penalty(fs, theta)
    logger.debug("ctc %.6f + ewc penalty %.6f", batch_ctc_loss, penalty)
    return batch_ctc_loss + penalty, batch_ctc_grad + penalty_grad
