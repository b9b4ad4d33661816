"""
The Utterance record shared by the stream generator, the replay buffer and
the trainer.
"""

from dataclasses import dataclass, replace
from typing import Literal, Optional, Tuple

import numpy as np

from anchorstream.core.tensor import Tensor

Domain = Literal["general", "target"]
BalanceAttr = Literal["A", "B"]


@dataclass(frozen=True, eq=False)
class Utterance:
    """
    Feature frames with their reference labels.

    Attributes:
        id: Unique utterance id.
        feats: Frames [T, feat_dim].
        ref: Reference label sequence.
        domain: "general" or "target"; fixed at creation.
        balance_attr: Speaker-group attribute used to balance the general pool.
        last_loss: Instance CTC loss from the most recent segment, if recorded.
    """

    id: str
    feats: Tensor
    ref: Tuple[int, ...]
    domain: Domain
    balance_attr: BalanceAttr
    last_loss: Optional[float] = None

    @property
    def n_frames(self) -> int:
        return int(np.shape(self.feats)[0])

    def with_loss(self, loss: float) -> "Utterance":
        return replace(self, last_loss=float(loss))
