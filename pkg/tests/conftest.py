import hypothesis
import numpy as np
import pytest

from anchorstream.config.presets import resolve_config
from anchorstream.core.model import init_model
from anchorstream.core.tensor import RngState
from anchorstream.memory.utterance import Utterance
from anchorstream.schemas.config import ModelConfig
from anchorstream.services.streamlab import build_stream

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile("fast")

TINY_MODEL = {
    "d_model": 8,
    "n_layers": 1,
    "n_heads": 2,
    "d_ff": 16,
    "feat_dim": 4,
    "vocab_size": 4,
    "lora_rank": 2,
    "lora_alpha": 4.0,
}

TINY_STREAM = {
    "k_segments": 2,
    "per_segment": 10,
    "general_train": 24,
    "dev_size": 8,
    "min_tokens": 2,
    "max_tokens": 3,
    "target_skew_tokens": 2,
}

TINY_TRAIN = {
    "batch_size": 8,
    "epochs_per_segment": 1,
    "pretrain_batch_size": 8,
    "pretrain_max_epochs": 1,
    "pretrain_target_wer": 1000.0,
}


def tiny_config(preset: str = "V1.1", **train):
    """A preset resolved at a scale that trains in well under a second."""
    train_overrides = dict(TINY_TRAIN)
    if preset in ("V2.1", "V3.1", "V5.1"):
        train_overrides.update(cap_target=6, cap_general=6 if preset != "V2.1" else 0)
    train_overrides.update(train)
    return resolve_config(
        preset,
        {"seed": 3, "model": TINY_MODEL, "stream": TINY_STREAM, "train": train_overrides},
    )


@pytest.fixture
def tiny_model_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_model_config):
    return init_model(tiny_model_config, RngState(11))


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = tiny_config()
    return build_stream(
        cfg.stream.k_segments, cfg.stream.per_segment, RngState(cfg.seed).derive("data"), cfg.stream, cfg.model
    )


def make_utterance(uid, loss=None, domain="target", attr="A", ref=(0, 1), n_frames=4, feat_dim=4):
    return Utterance(
        id=uid,
        feats=np.zeros((n_frames, feat_dim)),
        ref=tuple(ref),
        domain=domain,
        balance_attr=attr,
        last_loss=loss,
    )
