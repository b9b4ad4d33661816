"""
CTC loss, greedy decoding and prefix beam search.

All dynamic programming runs in log space. The blank is always the last column
of the log-probability matrix.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from anchorstream.core.lm import CharNgramLM
from anchorstream.core.tensor import Tensor
from anchorstream.exceptions import DomainError, InfeasibleAlignmentError, ShapeError

LabelSeq = Tuple[int, ...]

NEG_INF = -np.inf


def required_frames(labels: Sequence[int]) -> int:
    """Minimum number of frames that can emit `labels` (repeats need a blank between)."""
    repeats = sum(1 for i in range(1, len(labels)) if labels[i] == labels[i - 1])
    return len(labels) + repeats


def _validate(log_probs: Tensor, labels: Sequence[int]) -> Tuple[Tensor, int]:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] < 1 or log_probs.shape[1] < 2:
        raise ShapeError(f"log_probs must be [T >= 1, V + 1 >= 2], got {log_probs.shape}")
    blank = log_probs.shape[1] - 1
    for tok in labels:
        if not 0 <= tok < blank:
            raise DomainError(f"label {tok} outside [0, {blank})")
    return log_probs, blank


def ctc_loss(log_probs: Tensor, labels: Sequence[int]) -> Tuple[float, Tensor]:
    """
    Negative log-likelihood of `labels` summed over all CTC alignments.

    Args:
        log_probs: Per-frame log-softmax outputs [T, V + 1].
        labels: Target labels in [0, V), blank excluded.

    Returns:
        (loss, grad) where grad is d(loss)/d(logits) for logits whose
        log-softmax is `log_probs`; every row of grad sums to zero.

    Raises:
        InfeasibleAlignmentError: If T is shorter than the label sequence
            needs (repeated labels need a separating blank).
    """
    log_probs, blank = _validate(log_probs, labels)
    n_frames = log_probs.shape[0]
    needed = required_frames(labels)
    if n_frames < needed:
        raise InfeasibleAlignmentError(n_frames, needed)

    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    n_states = ext.size
    skip = np.zeros(n_states, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]
    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay_or_step = np.logaddexp(prev, np.concatenate(([NEG_INF], prev[:-1])))
        jump = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))[:n_states], NEG_INF)
        alpha[t] = np.logaddexp(stay_or_step, jump) + emit[t]

    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if n_states > 1:
        beta[-1, -2] = emit[-1, -2]
    skip_from = np.concatenate((skip[2:], [False, False]))[:n_states]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        stay_or_step = np.logaddexp(nxt, np.concatenate((nxt[1:], [NEG_INF])))
        jump = np.where(skip_from, np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:n_states], NEG_INF)
        beta[t] = np.logaddexp(stay_or_step, jump) + emit[t]

    if n_states > 1:
        log_likelihood = float(np.logaddexp(alpha[-1, -1], alpha[-1, -2]))
    else:
        log_likelihood = float(alpha[-1, -1])

    posterior = np.exp(alpha + beta - emit - log_likelihood)
    occupancy = np.zeros_like(log_probs)
    for s in range(n_states):
        occupancy[:, ext[s]] += posterior[:, s]
    grad = np.exp(log_probs) - occupancy
    return -log_likelihood, grad


def collapse(path: Sequence[int], blank: int) -> LabelSeq:
    """Merge repeated symbols, then drop blanks."""
    out: List[int] = []
    prev = None
    for sym in path:
        sym = int(sym)
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return tuple(out)


def greedy_decode(log_probs: Tensor) -> LabelSeq:
    """Best-path decoding: frame-wise argmax (lowest index on ties), collapsed."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    return collapse(np.argmax(log_probs, axis=1), log_probs.shape[1] - 1)


def _fused_score(acoustic: float, prefix: LabelSeq, lm_part: float, lm_weight: float, word_bonus: float) -> float:
    return acoustic + lm_weight * lm_part + word_bonus * len(prefix)


def beam_decode(
    log_probs: Tensor,
    beam_width: int = 8,
    lm: Optional[CharNgramLM] = None,
    lm_weight: float = 0.5,
    word_bonus: float = 0.0,
) -> LabelSeq:
    """
    CTC prefix beam search with optional n-gram shallow fusion.

    Prefixes are ranked by acoustic log P(prefix | x) + lm_weight * log P_LM(prefix)
    + word_bonus * len(prefix); the final ranking adds the LM end-of-sentence
    term. Exact ties go to the lexicographically smallest prefix.

    Args:
        log_probs: Per-frame log-softmax outputs [T, V + 1].
        beam_width: Number of prefixes kept after every frame.
        lm: Optional character n-gram LM.
        lm_weight: LM weight; 0 disables fusion.
        word_bonus: Per-token insertion bonus.

    Raises:
        DomainError: If beam_width < 1.
    """
    if beam_width < 1:
        raise DomainError(f"beam_width must be >= 1, got {beam_width}")
    log_probs, blank = _validate(log_probs, ())
    use_lm = lm is not None and lm_weight != 0.0
    lm_cache: Dict[LabelSeq, float] = {(): 0.0}

    def lm_prefix(prefix: LabelSeq) -> float:
        if not use_lm:
            return 0.0
        if prefix not in lm_cache:
            lm_cache[prefix] = lm_prefix(prefix[:-1]) + lm.logprob(prefix[-1], prefix[:-1])
        return lm_cache[prefix]

    beams: Dict[LabelSeq, Tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(log_probs.shape[0]):
        row = log_probs[t]
        nxt: Dict[LabelSeq, List[float]] = {}
        for prefix, (p_blank, p_label) in beams.items():
            total = np.logaddexp(p_blank, p_label)
            entry = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[0] = np.logaddexp(entry[0], total + row[blank])
            if prefix:
                entry[1] = np.logaddexp(entry[1], p_label + row[prefix[-1]])
            for sym in range(blank):
                extended = prefix + (sym,)
                source = p_blank if prefix and sym == prefix[-1] else total
                ext_entry = nxt.setdefault(extended, [NEG_INF, NEG_INF])
                ext_entry[1] = np.logaddexp(ext_entry[1], source + row[sym])

        ranked = sorted(
            nxt.items(),
            key=lambda item: (
                -_fused_score(np.logaddexp(*item[1]), item[0], lm_prefix(item[0]), lm_weight, word_bonus),
                item[0],
            ),
        )
        beams = {prefix: (pb, pl) for prefix, (pb, pl) in ranked[:beam_width]}

    def final_score(prefix: LabelSeq) -> float:
        acoustic = float(np.logaddexp(*beams[prefix]))
        lm_part = lm_prefix(prefix) + lm.end_logprob(prefix) if use_lm else 0.0
        return _fused_score(acoustic, prefix, lm_part, lm_weight, word_bonus)

    return min(beams, key=lambda prefix: (-final_score(prefix), prefix))
