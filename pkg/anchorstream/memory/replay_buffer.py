"""
Multi-domain replay buffer with prioritized hard-example mining.

The buffer keeps two pools: a balanced sample of general-domain anchors and a
sliding window of target-domain utterances, most of them "hard" (instance loss
above tau times the segment mean).
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from anchorstream.core.checkpoint import atomic_write_text
from anchorstream.core.tensor import RngState
from anchorstream.exceptions import DomainError
from anchorstream.memory.utterance import Utterance

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class ReplayBuffer:
    """Store of general anchors and target history for experience replay."""

    def __init__(
        self,
        cap_general: int = 0,
        cap_target: int = 0,
        hard_fraction: float = 0.6,
        tau: float = 1.0,
        general: Optional[List[Utterance]] = None,
        target: Optional[List[Utterance]] = None,
    ):
        """Initialize an (optionally pre-populated) buffer."""
        if cap_general < 0 or cap_target < 0:
            raise DomainError("buffer capacities must be >= 0")
        if not 0.0 <= hard_fraction <= 1.0:
            raise DomainError(f"hard_fraction must be in [0, 1], got {hard_fraction}")
        self.cap_general = cap_general
        self.cap_target = cap_target
        self.hard_fraction = hard_fraction
        self.tau = tau
        self.general: List[Utterance] = list(general or [])
        self.target: List[Utterance] = list(target or [])
        # ids chosen by the most recent update, keyed by selection reason
        self.last_selection: Dict[str, List[str]] = {"hard": [], "backfill": [], "random": []}

    @classmethod
    def from_config(cls, train) -> "ReplayBuffer":
        """Build an empty buffer from a TrainConfig; capacities are zero when replay is off."""
        if not train.uses_replay:
            return cls(0, 0, train.hard_fraction, train.tau)
        return cls(train.cap_general, train.cap_target, train.hard_fraction, train.tau)

    def contents(self) -> List[Utterance]:
        """Union of both pools, general first."""
        return self.general + self.target

    def is_empty(self) -> bool:
        return not self.general and not self.target

    def __len__(self) -> int:
        return len(self.general) + len(self.target)

    def copy(self) -> "ReplayBuffer":
        clone = ReplayBuffer(
            self.cap_general, self.cap_target, self.hard_fraction, self.tau,
            self.general, self.target,
        )
        clone.last_selection = {k: list(v) for k, v in self.last_selection.items()}
        return clone

    def prefill_general(self, general_pool: Sequence[Utterance], rng: RngState) -> None:
        """Fill the general pool with a balanced sample before the first segment."""
        self.general = sample_balanced(general_pool, self.cap_general, rng)
        logger.info("prefilled general replay pool with %d anchors", len(self.general))

    def snapshot(self) -> Dict:
        """Audit record: ids, domains and losses of everything held."""

        def describe(utt: Utterance) -> Dict:
            return {
                "id": utt.id,
                "domain": utt.domain,
                "balance_attr": utt.balance_attr,
                "last_loss": utt.last_loss,
            }

        return {
            "version": SNAPSHOT_VERSION,
            "cap_general": self.cap_general,
            "cap_target": self.cap_target,
            "hard_fraction": self.hard_fraction,
            "tau": self.tau,
            "general": [describe(u) for u in self.general],
            "target": [describe(u) for u in self.target],
            "last_selection": self.last_selection,
        }

    def save_snapshot(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, json.dumps(self.snapshot(), indent=1))


def sample_balanced(pool: Sequence[Utterance], cap: int, rng: RngState) -> List[Utterance]:
    """
    Uniform sample of at most `cap` general utterances whose A/B balance
    attribute counts differ by at most one. Output keeps pool order.
    """
    if any(utt.domain != "general" for utt in pool):
        raise DomainError("general replay pool received a non-general utterance")
    if cap == 0 or not pool:
        return []
    group_a = [i for i, utt in enumerate(pool) if utt.balance_attr == "A"]
    group_b = [i for i, utt in enumerate(pool) if utt.balance_attr == "B"]
    n_b = min(cap // 2, len(group_b), len(group_a) + 1)
    n_a = min(cap - n_b, len(group_a), n_b + 1)
    n_b = min(n_b, n_a + 1)

    gen = rng.generator
    picked_a = gen.choice(len(group_a), size=n_a, replace=False) if n_a else []
    picked_b = gen.choice(len(group_b), size=n_b, replace=False) if n_b else []
    chosen = sorted([group_a[i] for i in picked_a] + [group_b[i] for i in picked_b])
    return [pool[i] for i in chosen]


def mixed_batch(
    stream: Sequence[Utterance],
    buf: ReplayBuffer,
    batch_size: int,
    gamma: float,
    rng: RngState,
) -> List[Utterance]:
    """
    Compose one training batch from new data and replayed data.

    round(gamma * batch_size) utterances come from `stream` (all of it when the
    chunk is that small already); the rest are drawn uniformly without
    replacement from the union of the buffer pools. An empty buffer means the
    whole batch comes from the stream.

    Raises:
        DomainError: On an empty stream or out-of-range gamma / batch_size.
    """
    if not stream:
        raise DomainError("mixed_batch needs a non-empty stream")
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must be in [0, 1], got {gamma}")

    gen = rng.generator
    pool = buf.contents()
    n_stream = batch_size if not pool else round_half_up(gamma * batch_size)
    if len(stream) <= n_stream:
        stream_part = list(stream)
    else:
        stream_part = [stream[i] for i in sorted(gen.choice(len(stream), size=n_stream, replace=False))]

    n_replay = min(batch_size - n_stream, len(pool))
    replay_part = [pool[i] for i in gen.choice(len(pool), size=n_replay, replace=False)] if n_replay > 0 else []
    return stream_part + replay_part


def update_buffer(
    buf: ReplayBuffer,
    segment: Sequence[Utterance],
    general_pool: Sequence[Utterance],
    rng: RngState,
) -> ReplayBuffer:
    """
    Refresh both pools after a segment.

    Target pool: a quota of min(cap_target, |segment|) new picks, hard_fraction
    of them mined from S_hard = {x : last_loss > tau * mean(last_loss)} in
    descending-loss order (index breaks ties), the rest uniform from the
    remaining segment utterances. New picks are placed ahead of the previous
    window, which is then truncated to cap_target. A non-empty S_hard smaller
    than the hard quota is backfilled from the loss-sorted remainder; an empty
    S_hard makes the whole quota random.

    General pool: resampled balanced to cap_general from `general_pool`.

    Returns:
        A new ReplayBuffer; `buf` is not modified.

    Raises:
        DomainError: If a segment utterance has no last_loss or is not target-domain.
    """
    if any(utt.last_loss is None for utt in segment):
        raise DomainError("update_buffer needs last_loss on every segment utterance")
    if any(utt.domain != "target" for utt in segment):
        raise DomainError("target replay pool received a non-target utterance")

    updated = buf.copy()
    updated.general = sample_balanced(general_pool, buf.cap_general, rng.derive("general"))
    updated.last_selection = {"hard": [], "backfill": [], "random": []}

    quota = min(buf.cap_target, len(segment))
    if quota == 0:
        updated.target = buf.target[: buf.cap_target]
        return updated

    losses = [float(utt.last_loss) for utt in segment]
    threshold = buf.tau * (sum(losses) / len(losses))
    by_loss = sorted(range(len(segment)), key=lambda i: (-losses[i], i))
    hard = [i for i in by_loss if losses[i] > threshold]

    # an empty S_hard (e.g. all losses equal) leaves the whole quota to random sampling
    n_hard = min(round_half_up(buf.hard_fraction * quota), quota) if hard else 0
    picks = hard[:n_hard]
    updated.last_selection["hard"] = [segment[i].id for i in picks]
    if len(picks) < n_hard:
        taken = set(picks)
        backfill = [i for i in by_loss if i not in taken][: n_hard - len(picks)]
        logger.warning(
            "only %d hard examples above %.4f for %d hard slots; backfilling %d by loss",
            len(picks), threshold, n_hard, len(backfill),
        )
        picks = picks + backfill
        updated.last_selection["backfill"] = [segment[i].id for i in backfill]

    taken = set(picks)
    remainder = [i for i in range(len(segment)) if i not in taken]
    n_random = quota - len(picks)
    drawn = rng.derive("target").generator.choice(len(remainder), size=n_random, replace=False) if n_random else []
    randoms = [remainder[j] for j in sorted(drawn)]
    updated.last_selection["random"] = [segment[i].id for i in randoms]

    fresh = [segment[i] for i in picks + randoms]
    updated.target = (fresh + buf.target)[: buf.cap_target]
    logger.info(
        "replay buffer: %d general, %d target (%d hard, %d backfill, %d random new)",
        len(updated.general), len(updated.target), len(updated.last_selection["hard"]),
        len(updated.last_selection["backfill"]), len(randoms),
    )
    return updated
