"""
Pretraining and the sequential segment adaptation loop.

A run pretrains (or reuses) the base model, evaluates the pre-adaptation
baseline and then adapts the LoRA parameters segment by segment. Each segment
trains on paradigm-dependent batches, records instance losses, consolidates
importance when the penalty is active and refreshes the replay buffer when
replay is active, then evaluates both dev sets.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from anchorstream.core.ctc import beam_decode, greedy_decode
from anchorstream.core.lm import CharNgramLM, train_lm
from anchorstream.core.model import (
    ModelState,
    base_fingerprint,
    flatten_params,
    flatten_trainable,
    forward,
    init_model,
    trainable_size,
    unflatten_params,
    unflatten_trainable,
    with_fresh_adapters,
)
from anchorstream.core.tensor import RngState, log_softmax_rows
from anchorstream.exceptions import AnchorStreamError, ConvergenceError, DomainError
from anchorstream.memory.fisher import FisherState, consolidate, importance
from anchorstream.memory.objective import (
    batch_objective,
    ordered_map,
    total_objective,
    utterance_gradient,
    utterance_loss,
)
from anchorstream.memory.replay_buffer import ReplayBuffer, mixed_batch, round_half_up, update_buffer
from anchorstream.memory.utterance import Utterance
from anchorstream.schemas.config import ExperimentConfig, LMConfig
from anchorstream.schemas.reports import BaselineReport, ExperimentResult, LMCheckRow, SegmentReport
from anchorstream.services import metrics
from anchorstream.services.optimizer import OptimizerState, adamw_step
from anchorstream.services.results import RunWriter
from anchorstream.services.streamlab import StreamDataset

logger = logging.getLogger(__name__)


def decode_set(
    model: ModelState,
    utterances: Sequence[Utterance],
    beam_width: int = 1,
    lm: Optional[CharNgramLM] = None,
    lm_weight: float = 0.0,
    word_bonus: float = 0.0,
    workers: int = 1,
) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """(ref, hyp) pairs; greedy decoding unless a beam or an LM is requested."""

    def decode(utt: Utterance):
        log_probs = log_softmax_rows(forward(model, utt.feats))
        if beam_width <= 1 and lm is None:
            return utt.ref, greedy_decode(log_probs)
        return utt.ref, beam_decode(log_probs, max(beam_width, 1), lm, lm_weight, word_bonus)

    return ordered_map(decode, utterances, workers)


def evaluate(model: ModelState, utterances: Sequence[Utterance], beam_width: int = 1, workers: int = 1) -> Dict[str, float]:
    """Pooled WER and CER of `model` on a dev set."""
    return metrics.rates(decode_set(model, utterances, beam_width, workers=workers))


def pretrain_base(
    general_train: Sequence[Utterance],
    cfg: ExperimentConfig,
    rng: RngState,
    general_dev: Optional[Sequence[Utterance]] = None,
    workers: int = 1,
) -> ModelState:
    """
    Full-parameter training of the base model on the general domain.

    Trains until general-dev WER reaches `train.pretrain_target_wer`, then
    returns the model with frozen base weights and freshly initialized adapters.

    Raises:
        DomainError: On an empty corpus.
        ConvergenceError: If the threshold is not met within
            `train.pretrain_max_epochs`; carries the final WER.
    """
    if not general_train:
        raise DomainError("pretraining needs a non-empty general corpus")
    general_dev = general_dev if general_dev else general_train
    train = cfg.train
    opt_cfg = train.model_copy(update={"lr": train.pretrain_lr, "warmup_steps": train.pretrain_warmup_steps})

    model = init_model(cfg.model, rng)
    theta = flatten_params(model, "base")
    opt = OptimizerState.zeros(theta.size)
    wer = float("inf")
    for epoch in range(1, train.pretrain_max_epochs + 1):
        order = rng.derive("pretrain", epoch).generator.permutation(len(general_train))
        losses = []
        for start in range(0, len(order), train.pretrain_batch_size):
            batch = [general_train[i] for i in order[start:start + train.pretrain_batch_size]]
            loss, grad, _ = batch_objective(model, batch, "base", workers)
            opt, theta = adamw_step(opt, theta, grad, opt_cfg)
            model = unflatten_params(model, theta, "base")
            losses.append(loss)
        wer = evaluate(model, general_dev, workers=workers)["wer"]
        logger.info("pretrain epoch %d: loss %.4f, general dev WER %.2f", epoch, float(np.mean(losses)), wer)
        if wer <= train.pretrain_target_wer:
            break
    else:
        raise ConvergenceError(wer, train.pretrain_target_wer, train.pretrain_max_epochs)
    return with_fresh_adapters(model, rng.derive("lora"))


@dataclass
class SegmentContext:
    """Everything a segment needs besides the evolving model/buffer/Fisher state."""

    index: int
    rng: RngState
    general_pool: Sequence[Utterance]
    general_dev: Sequence[Utterance]
    target_dev: Sequence[Utterance]
    baseline_general_wer: float
    workers: int = 1


def run_segment(
    model: ModelState,
    segment: Sequence[Utterance],
    buf: ReplayBuffer,
    fs: FisherState,
    cfg: ExperimentConfig,
    ctx: SegmentContext,
) -> Tuple[ModelState, ReplayBuffer, FisherState, SegmentReport]:
    """
    Adapt the LoRA parameters on one segment.

    The optimizer starts fresh, so warmup restarts at every segment. Under the
    naive and ewc paradigms the buffer stays empty and untouched; under naive
    and er the Fisher state is never consolidated.

    Raises:
        DomainError: On an empty segment.
        GradientExplosionError: Propagated from the optimizer.
    """
    if not segment:
        raise DomainError(f"segment {ctx.index} is empty")
    train = cfg.train
    started = time.perf_counter()

    theta = flatten_trainable(model)
    opt = OptimizerState.zeros(theta.size)
    batch_rng = ctx.rng.derive("batches")
    chunk = train.batch_size if buf.is_empty() else max(1, round_half_up(train.gamma * train.batch_size))

    step_losses: List[float] = []
    for epoch in range(train.epochs_per_segment):
        order = batch_rng.derive("order", epoch).generator.permutation(len(segment))
        for start in range(0, len(order), chunk):
            stream = [segment[i] for i in order[start:start + chunk]]
            batch = mixed_batch(stream, buf, train.batch_size, train.gamma, batch_rng.derive("mix", epoch, start))
            ctc, ctc_grad, _ = batch_objective(model, batch, "lora", ctx.workers)
            loss, grad = total_objective(ctc, ctc_grad, fs, theta, train.mode)
            opt, theta = adamw_step(opt, theta, grad, train)
            model = unflatten_trainable(model, theta)
            step_losses.append(loss)
            logger.debug("segment %d epoch %d step %d: loss %.4f", ctx.index, epoch, opt.t, loss)

    losses = ordered_map(lambda utt: utterance_loss(model, utt), segment, ctx.workers)
    scored = [utt.with_loss(loss) for utt, loss in zip(segment, losses)]

    if train.uses_ewc:
        fisher_data = scored if train.fisher_source == "stream" else scored + buf.contents()
        grads = [g for _, g in ordered_map(lambda utt: utterance_gradient(model, utt), fisher_data, ctx.workers)]
        fs = consolidate(fs, importance(grads, train.importance, model.trainable_names()), theta)

    if train.uses_replay:
        buf = update_buffer(buf, scored, ctx.general_pool, ctx.rng.derive("buffer"))

    target = evaluate(model, ctx.target_dev, train.eval_beam_width, ctx.workers)
    general = evaluate(model, ctx.general_dev, train.eval_beam_width, ctx.workers)
    report = SegmentReport(
        segment=ctx.index,
        target_wer=target["wer"],
        target_cer=target["cer"],
        general_wer=general["wer"],
        general_cer=general["cer"],
        forgetting=metrics.forgetting(ctx.baseline_general_wer, general["wer"]),
        mean_train_loss=float(np.mean(step_losses)),
        max_grad_norm=max(opt.grad_norms),
        wall_time=time.perf_counter() - started if train.record_wall_time else 0.0,
        grad_norms=opt.grad_norms,
    )
    logger.info(
        "segment %d [%s]: target WER %.2f, general WER %.2f (forgetting %+.2f), max |g| %.3e",
        ctx.index, train.mode, report.target_wer, report.general_wer, report.forgetting, report.max_grad_norm,
    )
    return model, buf, fs, report


def evaluate_baseline(model: ModelState, data: StreamDataset, beam_width: int = 1, workers: int = 1) -> BaselineReport:
    target = evaluate(model, data.target_dev, beam_width, workers)
    general = evaluate(model, data.general_dev, beam_width, workers)
    return BaselineReport(
        target_wer=target["wer"], target_cer=target["cer"],
        general_wer=general["wer"], general_cer=general["cer"],
    )


@dataclass
class ExperimentRun:
    """Final states of a run, kept for follow-up checks such as the LM spot check."""

    result: ExperimentResult
    base_model: ModelState
    model: ModelState
    buffer: ReplayBuffer
    fisher: FisherState
    artifacts: Dict[str, Path] = field(default_factory=dict)


def run_experiment(
    cfg: ExperimentConfig,
    data: StreamDataset,
    base_model: Optional[ModelState] = None,
    out_dir: Optional[Union[str, Path]] = None,
    workers: int = 1,
) -> ExperimentRun:
    """
    Pretrain (or reuse `base_model`), evaluate the baseline, then adapt over
    every target segment.

    When `out_dir` is given, per-segment artifacts (adapter checkpoint, Fisher
    state, buffer snapshot and the growing segments.csv) are written as the
    run progresses.
    """
    rng = RngState(cfg.seed)
    if base_model is None:
        base_model = pretrain_base(data.general_train, cfg, rng, data.general_dev, workers)
    model = with_fresh_adapters(base_model, rng.derive("lora"), cfg.model)
    fingerprint = base_fingerprint(model)

    baseline = evaluate_baseline(model, data, cfg.train.eval_beam_width, workers)
    logger.info(
        "baseline [%s]: target WER %.2f, general WER %.2f", cfg.preset, baseline.target_wer, baseline.general_wer
    )

    buf = ReplayBuffer.from_config(cfg.train)
    if cfg.train.uses_replay:
        buf.prefill_general(data.general_train, rng.derive("buffer", "prefill"))
    fs = FisherState.empty(trainable_size(cfg.model), cfg.train.lambda_)

    writer = RunWriter(out_dir, cfg) if out_dir is not None else None
    if writer:
        writer.write_base(model)

    reports: List[SegmentReport] = []
    for k, segment in enumerate(data.target_segments, start=1):
        ctx = SegmentContext(
            index=k,
            rng=rng.derive("segment", k),
            general_pool=data.general_train,
            general_dev=data.general_dev,
            target_dev=data.target_dev,
            baseline_general_wer=baseline.general_wer,
            workers=workers,
        )
        model, buf, fs, report = run_segment(model, segment, buf, fs, cfg, ctx)
        reports.append(report)
        if writer:
            writer.write_segment(k, model, buf, fs, reports)

    if base_fingerprint(model) != fingerprint:
        raise AnchorStreamError("base weights changed during adaptation")

    result = ExperimentResult(
        preset=cfg.preset,
        seed=cfg.seed,
        baseline=baseline,
        reports=reports,
        base_fingerprint=fingerprint,
        config=cfg.model_dump(mode="json", by_alias=True),
    )
    artifacts = writer.write_summary(result) if writer else {}
    return ExperimentRun(result=result, base_model=base_model, model=model, buffer=buf, fisher=fs, artifacts=artifacts)


def lm_spot_check(
    base_model: ModelState,
    adapted_model: ModelState,
    data: StreamDataset,
    lm_cfg: LMConfig,
    workers: int = 1,
) -> Tuple[List[LMCheckRow], CharNgramLM]:
    """
    Decode the target dev set with each model, greedily and with the
    character n-gram LM trained on the target training text.
    """
    lm = train_lm(data.target_text(), lm_cfg.order, lm_cfg.smoothing, base_model.config.vocab_size)
    rows = []
    for name, model in (("baseline", base_model), ("adapted", adapted_model)):
        for decoder, kwargs in (
            ("greedy", {}),
            ("beam+lm", {"beam_width": lm_cfg.beam_width, "lm": lm, "lm_weight": lm_cfg.lm_weight,
                         "word_bonus": lm_cfg.word_bonus}),
        ):
            pairs = decode_set(model, data.target_dev, workers=workers, **kwargs)
            scores = metrics.rates(pairs)
            rows.append(LMCheckRow(model=name, decoder=decoder, wer=scores["wer"], cer=scores["cer"]))
            logger.info("lm-check %s/%s: WER %.2f CER %.2f", name, decoder, scores["wer"], scores["cer"])
    return rows, lm
