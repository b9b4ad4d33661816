"""
Error rates, forgetting and the stability/plasticity summary.
"""

from typing import Dict, Hashable, Iterable, List, Literal, Mapping, Sequence, Tuple

import numpy as np

from anchorstream.exceptions import DomainError, UndefinedRateError
from anchorstream.schemas.reports import EditOps, ExperimentResult, ParetoRow
from anchorstream.services.streamlab import token_characters

Level = Literal["word", "character"]


def edit_ops(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> EditOps:
    """
    Minimal unit-cost Levenshtein alignment of `hyp` against `ref`.

    The backtrace prefers substitution (or match), then deletion, then
    insertion whenever several moves reach the same cost.
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(diag, dist[i - 1, j] + 1, dist[i, j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(substitutions=subs, deletions=dels, insertions=ins, ref_length=n)


def corpus_rate(pairs: Iterable[Tuple[Sequence[int], Sequence[int]]], level: Level = "word") -> float:
    """
    Pooled error rate 100 * sum(S + D + I) / sum(N) over (ref, hyp) label pairs.

    At the character level every label expands into its two-symbol form first.

    Raises:
        UndefinedRateError: If the references hold no symbols at all.
    """
    errors = total = 0
    for ref, hyp in pairs:
        if level == "character":
            ref, hyp = token_characters(ref), token_characters(hyp)
        ops = edit_ops(ref, hyp)
        errors += ops.cost
        total += ops.ref_length
    if total == 0:
        raise UndefinedRateError("error rate is undefined for an empty reference corpus")
    return 100.0 * errors / total


def forgetting(baseline_general_wer: float, current_general_wer: float) -> float:
    """Absolute increase in general-domain WER (percentage points)."""
    return current_general_wer - baseline_general_wer


def relative_improvement(baseline: float, final: float) -> float:
    if baseline == 0:
        return 0.0
    return 100.0 * (baseline - final) / baseline


def pareto_summary(results: Mapping[str, ExperimentResult]) -> List[ParetoRow]:
    """One row per paradigm from its final segment, in mapping order."""
    rows = []
    for paradigm, result in results.items():
        if not result.reports:
            raise DomainError(f"paradigm {paradigm} has no segment reports")
        final = result.reports[-1]
        rows.append(
            ParetoRow(
                paradigm=paradigm,
                final_target_wer=final.target_wer,
                relative_improvement=relative_improvement(result.baseline.target_wer, final.target_wer),
                final_general_wer=final.general_wer,
                forgetting=final.forgetting,
            )
        )
    return rows


def rates(pairs: Sequence[Tuple[Sequence[int], Sequence[int]]]) -> Dict[str, float]:
    """WER and CER of one decoded set."""
    return {"wer": corpus_rate(pairs, "word"), "cer": corpus_rate(pairs, "character")}
