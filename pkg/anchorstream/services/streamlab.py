"""
Synthetic dual-domain stream.

A clean "general" domain (identity channel, low noise, uniform labels) and a
distorted "target" domain (ill-conditioned channel, heavier noise, skewed
Markov label statistics) share one set of label embeddings, so the domain shift
lives entirely in the channel, the noise and the label statistics. The target
training data is cut into sequential segments, each with a slightly jittered
channel.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from anchorstream.core.checkpoint import atomic_write_text
from anchorstream.core.tensor import RngState, Tensor, gaussian
from anchorstream.exceptions import CheckpointError, DomainError
from anchorstream.memory.utterance import BalanceAttr, Domain, Utterance
from anchorstream.schemas.config import ModelConfig, StreamConfig

logger = logging.getLogger(__name__)

STREAM_FORMAT = "anchorstream-stream"
STREAM_VERSION = 1


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """
    Generative description of one acoustic domain.

    Attributes:
        name: "general" or "target".
        embeddings: Label embeddings [V, feat_dim], shared across domains.
        channel: Mixing matrix [feat_dim, feat_dim]; frames are emb @ channel.T.
        noise_std: Additive gaussian noise per feature.
        token_prior: Distribution of the first label (and of every label when
            `transitions` is None).
        transitions: Optional first-order Markov matrix [V, V] with a zero
            diagonal.
        frames_per_token: Inclusive range of frames emitted per label.
        tokens_per_utterance: Inclusive range of utterance lengths.
        balance_mix: Probability of balance attribute "A".
    """

    name: Domain
    embeddings: Tensor
    channel: Tensor
    noise_std: float
    token_prior: Tensor
    transitions: Optional[Tensor] = None
    frames_per_token: Tuple[int, int] = (2, 4)
    tokens_per_utterance: Tuple[int, int] = (3, 8)
    balance_mix: float = 0.5

    def with_channel(self, channel: Tensor) -> "DomainSpec":
        return DomainSpec(
            name=self.name, embeddings=self.embeddings, channel=channel,
            noise_std=self.noise_std, token_prior=self.token_prior,
            transitions=self.transitions, frames_per_token=self.frames_per_token,
            tokens_per_utterance=self.tokens_per_utterance, balance_mix=self.balance_mix,
        )

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.channel))


@dataclass
class StreamDataset:
    """General train/dev pools, target dev set and the sequential target segments."""

    general_train: List[Utterance]
    general_dev: List[Utterance]
    target_segments: List[List[Utterance]]
    target_dev: List[Utterance]
    seed: int
    metadata: Dict = field(default_factory=dict)

    def all_utterances(self) -> Iterator[Utterance]:
        yield from self.general_train
        yield from self.general_dev
        for segment in self.target_segments:
            yield from segment
        yield from self.target_dev

    def target_text(self) -> List[Tuple[int, ...]]:
        """Reference label sequences of the target training stream."""
        return [utt.ref for segment in self.target_segments for utt in segment]


def token_characters(ref: Tuple[int, ...]) -> Tuple[int, ...]:
    """Finer symbol decomposition for CER: label t becomes (t // 4, t % 4)."""
    out: List[int] = []
    for tok in ref:
        out.extend((tok // 4, tok % 4))
    return tuple(out)


def token_embeddings(vocab_size: int, feat_dim: int, scale: float, rng: RngState) -> Tensor:
    """Gaussian label embeddings normalised to norm `scale`."""
    emb = gaussian(rng, (vocab_size, feat_dim))
    return scale * emb / np.linalg.norm(emb, axis=1, keepdims=True)


def _random_orthogonal(dim: int, rng: RngState) -> Tensor:
    q, r = np.linalg.qr(gaussian(rng, (dim, dim)))
    return q * np.sign(np.diag(r))


def general_spec(stream: StreamConfig, embeddings: Tensor) -> DomainSpec:
    vocab_size, feat_dim = embeddings.shape
    return DomainSpec(
        name="general",
        embeddings=embeddings,
        channel=np.eye(feat_dim),
        noise_std=stream.general_noise_std,
        token_prior=np.full(vocab_size, 1.0 / vocab_size),
        frames_per_token=(stream.min_frames_per_token, stream.max_frames_per_token),
        tokens_per_utterance=(stream.min_tokens, stream.max_tokens),
        balance_mix=stream.balance_mix,
    )


def target_spec(stream: StreamConfig, embeddings: Tensor, rng: RngState) -> DomainSpec:
    """
    Distorted domain: channel U diag(s) V^T with singular values spanning
    `target_condition`, a prior skewed toward a label subset, and a Markov chain
    concentrating each label's successors on three favoured labels.
    """
    vocab_size, feat_dim = embeddings.shape
    singular = np.geomspace(1.0, 1.0 / stream.target_condition, feat_dim)
    channel = _random_orthogonal(feat_dim, rng.derive("u")) @ np.diag(singular) @ _random_orthogonal(
        feat_dim, rng.derive("v")
    ).T

    gen = rng.derive("lexicon").generator
    prior = np.ones(vocab_size)
    favoured = gen.permutation(vocab_size)[: min(stream.target_skew_tokens, vocab_size)]
    prior[favoured] *= stream.target_skew_weight
    prior /= prior.sum()

    transitions = np.zeros((vocab_size, vocab_size))
    for tok in range(vocab_size):
        others = np.array([o for o in range(vocab_size) if o != tok])
        row = np.zeros(vocab_size)
        if others.size:
            row[others] = prior[others] / prior[others].sum()
            successors = gen.choice(others, size=min(3, others.size), replace=False)
            bump = np.zeros(vocab_size)
            bump[successors] = 1.0 / successors.size
            row = (1.0 - stream.target_markov_strength) * row + stream.target_markov_strength * bump
        transitions[tok] = row

    return DomainSpec(
        name="target",
        embeddings=embeddings,
        channel=channel,
        noise_std=stream.target_noise_std,
        token_prior=prior,
        transitions=transitions,
        frames_per_token=(stream.min_frames_per_token, stream.max_frames_per_token),
        tokens_per_utterance=(stream.min_tokens, stream.max_tokens),
        balance_mix=stream.balance_mix,
    )


def _sample_labels(spec: DomainSpec, gen: np.random.Generator) -> Tuple[int, ...]:
    lo, hi = spec.tokens_per_utterance
    length = int(gen.integers(lo, hi + 1))
    vocab_size = spec.token_prior.size
    labels = [int(gen.choice(vocab_size, p=spec.token_prior))]
    while len(labels) < length:
        prev = labels[-1]
        if spec.transitions is not None:
            probs = spec.transitions[prev]
        else:
            probs = spec.token_prior.copy()
            if vocab_size > 1:
                probs[prev] = 0.0
            probs = probs / probs.sum()
        labels.append(int(gen.choice(vocab_size, p=probs)))
    return tuple(labels)


def synth_utterance(
    spec: DomainSpec,
    rng: RngState,
    uid: str = "utt",
    balance_attr: Optional[BalanceAttr] = None,
) -> Utterance:
    """
    Sample one utterance from `spec`.

    Every label emits a run of frames equal to (embedding @ channel.T) plus
    N(0, noise_std) noise. With more than one label in the vocabulary no label
    follows itself, so frame runs always mark label boundaries.
    """
    gen = rng.generator
    labels = _sample_labels(spec, gen)
    lo, hi = spec.frames_per_token
    runs = [int(gen.integers(lo, hi + 1)) for _ in labels]
    clean = np.repeat(spec.embeddings[list(labels)] @ spec.channel.T, runs, axis=0)
    feats = clean + gaussian(rng, clean.shape, 0.0, spec.noise_std)
    if balance_attr is None:
        balance_attr = "A" if gen.random() < spec.balance_mix else "B"
    return Utterance(id=uid, feats=feats, ref=labels, domain=spec.name, balance_attr=balance_attr)


def _balanced_attrs(n: int, rng: RngState) -> List[BalanceAttr]:
    attrs: List[BalanceAttr] = ["A"] * ((n + 1) // 2) + ["B"] * (n // 2)
    order = rng.generator.permutation(n)
    return [attrs[i] for i in order]


def _pool(spec: DomainSpec, n: int, prefix: str, rng: RngState, balanced: bool) -> List[Utterance]:
    attrs = _balanced_attrs(n, rng.derive("attrs")) if balanced else [None] * n
    return [
        synth_utterance(spec, rng.derive(i), f"{prefix}-{i:05d}", attrs[i])
        for i in range(n)
    ]


def build_stream(
    k_segments: int = 8,
    per_segment: int = 200,
    rng: Optional[RngState] = None,
    config: Optional[StreamConfig] = None,
    model_config: Optional[ModelConfig] = None,
) -> StreamDataset:
    """
    Generate the full deterministic dataset.

    Args:
        k_segments: Number of sequential target segments, >= 1.
        per_segment: Utterances per segment.
        rng: Root random stream; every split and utterance derives its own child.
        config: Stream difficulty settings (segment counts here take precedence).
        model_config: Supplies `feat_dim` and `vocab_size`.

    Raises:
        DomainError: If k_segments < 1.
    """
    if k_segments < 1:
        raise DomainError(f"k_segments must be >= 1, got {k_segments}")
    config = config or StreamConfig()
    model_config = model_config or ModelConfig()
    rng = rng or RngState(0)

    embeddings = token_embeddings(
        model_config.vocab_size, model_config.feat_dim, config.embed_scale, rng.derive("embeddings")
    )
    general = general_spec(config, embeddings)
    target = target_spec(config, embeddings, rng.derive("target_spec"))

    segments: List[List[Utterance]] = []
    for k in range(k_segments):
        jitter = gaussian(rng.derive("jitter", k), target.channel.shape, 0.0, config.jitter_std)
        seg_spec = target.with_channel(target.channel + jitter)
        seg_rng = rng.derive("segment", k)
        segments.append(
            [synth_utterance(seg_spec, seg_rng.derive(i), f"tgt-s{k + 1:02d}-{i:05d}") for i in range(per_segment)]
        )

    dataset = StreamDataset(
        general_train=_pool(general, config.general_train, "gen-train", rng.derive("general_train"), True),
        general_dev=_pool(general, config.dev_size, "gen-dev", rng.derive("general_dev"), True),
        target_segments=segments,
        target_dev=_pool(target, config.dev_size, "tgt-dev", rng.derive("target_dev"), False),
        seed=rng.seed,
        metadata={
            "k_segments": k_segments,
            "per_segment": per_segment,
            "target_condition_number": target.condition_number(),
        },
    )
    logger.info(
        "built stream: %d general train, %d segments x %d, dev %d/%d (target cond %.1f)",
        len(dataset.general_train), k_segments, per_segment,
        len(dataset.general_dev), len(dataset.target_dev), target.condition_number(),
    )
    return dataset


def _utterance_record(utt: Utterance, split: str, segment: Optional[int]) -> Dict:
    return {
        "split": split,
        "segment": segment,
        "id": utt.id,
        "domain": utt.domain,
        "balance_attr": utt.balance_attr,
        "ref": list(utt.ref),
        "shape": list(utt.feats.shape),
        "feats": [float(x) for x in utt.feats.reshape(-1)],
    }


def export_stream(dataset: StreamDataset, path: Union[str, Path]) -> None:
    """Write the dataset as versioned JSON lines (header line first)."""
    lines = [json.dumps({"format": STREAM_FORMAT, "version": STREAM_VERSION, "seed": dataset.seed,
                         "metadata": dataset.metadata})]
    lines += [json.dumps(_utterance_record(u, "general_train", None)) for u in dataset.general_train]
    lines += [json.dumps(_utterance_record(u, "general_dev", None)) for u in dataset.general_dev]
    for k, segment in enumerate(dataset.target_segments, start=1):
        lines += [json.dumps(_utterance_record(u, "segment", k)) for u in segment]
    lines += [json.dumps(_utterance_record(u, "target_dev", None)) for u in dataset.target_dev]
    atomic_write_text(path, "\n".join(lines) + "\n")


def import_stream(path: Union[str, Path]) -> StreamDataset:
    """Read a dataset written by `export_stream`."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"stream file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        header = json.loads(handle.readline())
        if header.get("format") != STREAM_FORMAT or header.get("version") != STREAM_VERSION:
            raise CheckpointError(f"{path} is not an {STREAM_FORMAT} v{STREAM_VERSION} file")
        splits: Dict[str, List[Utterance]] = {"general_train": [], "general_dev": [], "target_dev": []}
        segments: Dict[int, List[Utterance]] = {}
        for line in handle:
            if not line.strip():
                continue
            rec = json.loads(line)
            utt = Utterance(
                id=rec["id"],
                feats=np.asarray(rec["feats"], dtype=np.float64).reshape(rec["shape"]),
                ref=tuple(rec["ref"]),
                domain=rec["domain"],
                balance_attr=rec["balance_attr"],
            )
            if rec["split"] == "segment":
                segments.setdefault(int(rec["segment"]), []).append(utt)
            else:
                splits[rec["split"]].append(utt)
    return StreamDataset(
        general_train=splits["general_train"],
        general_dev=splits["general_dev"],
        target_segments=[segments[k] for k in sorted(segments)],
        target_dev=splits["target_dev"],
        seed=int(header["seed"]),
        metadata=header.get("metadata", {}),
    )
