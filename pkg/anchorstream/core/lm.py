"""
Character n-gram language model with additive smoothing.

Symbols are the label ids 0..V-1 plus an end-of-sentence symbol (predicted,
never used as context) and a begin-of-sentence pad (context only).
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from anchorstream.core.checkpoint import atomic_write_text
from anchorstream.exceptions import DomainError

logger = logging.getLogger(__name__)

BOS = -1
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
FORMAT_VERSION = 1

Context = Tuple[int, ...]


class CharNgramLM:
    """
    Conditional log-probability table P(symbol | previous n-1 symbols).

    Contexts never seen in training fall back to the uniform distribution,
    which is exactly what additive smoothing gives for a zero-count context.
    """

    def __init__(self, order: int, smoothing: float, vocab_size: int, table: Dict[Context, np.ndarray]):
        self.order = order
        self.smoothing = smoothing
        self.vocab_size = vocab_size
        self.table = table
        self._uniform = np.full(vocab_size + 1, -np.log(vocab_size + 1))

    @property
    def eos(self) -> int:
        return self.vocab_size

    def context_of(self, history: Sequence[int]) -> Context:
        """Last n-1 symbols of `history`, left-padded with BOS."""
        n = self.order - 1
        if n == 0:
            return ()
        padded = (BOS,) * n + tuple(int(s) for s in history)
        return padded[-n:]

    def row(self, context: Context) -> np.ndarray:
        """Log-probabilities of every next symbol (labels then EOS)."""
        return self.table.get(tuple(context), self._uniform)

    def logprob(self, token: int, history: Sequence[int]) -> float:
        return float(self.row(self.context_of(history))[token])

    def end_logprob(self, history: Sequence[int]) -> float:
        return float(self.row(self.context_of(history))[self.eos])

    def sequence_logprob(self, seq: Sequence[int], include_eos: bool = True) -> float:
        total = 0.0
        for i, tok in enumerate(seq):
            total += self.logprob(tok, seq[:i])
        if include_eos:
            total += self.end_logprob(seq)
        return total

    def perplexity(self, corpus: Iterable[Sequence[int]]) -> float:
        """Per-symbol perplexity, counting the end-of-sentence event."""
        total, count = 0.0, 0
        for seq in corpus:
            total += self.sequence_logprob(seq)
            count += len(seq) + 1
        if count == 0:
            raise DomainError("perplexity of an empty corpus")
        return float(np.exp(-total / count))

    def to_json(self) -> Dict:
        """Inspection format: {context-string: {token: log-prob}}."""

        def sym(s: int) -> str:
            if s == BOS:
                return BOS_TOKEN
            if s == self.eos:
                return EOS_TOKEN
            return str(s)

        table = {}
        for context in sorted(self.table):
            row = self.table[context]
            table[" ".join(sym(s) for s in context)] = {
                sym(tok): float(row[tok]) for tok in range(self.vocab_size + 1)
            }
        return {
            "version": FORMAT_VERSION,
            "order": self.order,
            "smoothing": self.smoothing,
            "vocab_size": self.vocab_size,
            "table": table,
        }

    @classmethod
    def from_json(cls, payload: Dict) -> "CharNgramLM":
        vocab_size = int(payload["vocab_size"])

        def parse(s: str) -> int:
            if s == BOS_TOKEN:
                return BOS
            if s == EOS_TOKEN:
                return vocab_size
            return int(s)

        table = {}
        for ctx_str, row in payload["table"].items():
            context = tuple(parse(s) for s in ctx_str.split()) if ctx_str else ()
            values = np.empty(vocab_size + 1)
            for tok_str, logp in row.items():
                values[parse(tok_str)] = float(logp)
            table[context] = values
        return cls(int(payload["order"]), float(payload["smoothing"]), vocab_size, table)

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CharNgramLM":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_lm(
    corpus: Sequence[Sequence[int]],
    order: int = 3,
    smoothing: float = 0.1,
    vocab_size: Optional[int] = None,
) -> CharNgramLM:
    """
    Count n-grams over `corpus` and build an additive-smoothed table.

    Args:
        corpus: Label sequences.
        order: n of the n-gram, >= 1.
        smoothing: Additive pseudo-count, > 0.
        vocab_size: Number of labels; inferred from the corpus when omitted.

    Raises:
        DomainError: On an empty corpus or invalid order/smoothing.
    """
    if not corpus:
        raise DomainError("cannot train an LM on an empty corpus")
    if order < 1:
        raise DomainError(f"LM order must be >= 1, got {order}")
    if smoothing <= 0:
        raise DomainError(f"LM smoothing must be > 0, got {smoothing}")
    if vocab_size is None:
        vocab_size = 1 + max((max(seq) for seq in corpus if len(seq)), default=0)

    n_symbols = vocab_size + 1
    counts: Dict[Context, np.ndarray] = {}
    lm = CharNgramLM(order, smoothing, vocab_size, {})
    for seq in corpus:
        seq = [int(s) for s in seq]
        if any(not 0 <= tok < vocab_size for tok in seq):
            raise DomainError(f"sequence {seq} has tokens outside the LM vocabulary of size {vocab_size}")
        for i, tok in enumerate(seq + [lm.eos]):
            context = lm.context_of(seq[:i])
            counts.setdefault(context, np.zeros(n_symbols))[tok] += 1.0

    for context, row in counts.items():
        lm.table[context] = np.log(row + smoothing) - np.log(row.sum() + smoothing * n_symbols)
    logger.debug("trained %d-gram LM over %d sequences, %d contexts", order, len(corpus), len(counts))
    return lm
