"""
Main command-line application module.

Subcommands: gen-data, pretrain, adapt, compare, lm-check, validate.
Exit codes: 0 ok, 1 other errors, 2 config error, 3 convergence error,
4 gradient-explosion abort.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from anchorstream import __version__
from anchorstream.config.presets import PRESETS, load_config_file, resolve_config
from anchorstream.config.settings import Settings
from anchorstream.config.settings import settings as process_settings
from anchorstream.core.checkpoint import load_model, save_model
from anchorstream.core.model import ModelState
from anchorstream.core.tensor import RngState
from anchorstream.exceptions import AnchorStreamError, ConfigError
from anchorstream.schemas.config import ExperimentConfig
from anchorstream.schemas.reports import ExperimentResult
from anchorstream.services.metrics import pareto_summary
from anchorstream.services.results import write_lm_check, write_pareto
from anchorstream.services.streamlab import StreamDataset, build_stream, export_stream, import_stream
from anchorstream.services.trainer import lm_spot_check, pretrain_base, run_experiment
from anchorstream.verification import OracleVerifier

logger = logging.getLogger(__name__)

DEFAULT_PRESET = "V1.1"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchorstream",
        description="Continual LoRA adaptation with multi-domain replay and absolute-Fisher consolidation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of config overrides")
    common.add_argument("--seed", type=int, help="experiment seed (falls back to ANCHORSTREAM_SEED)")
    common.add_argument("--out", type=Path, help="output directory (falls back to ANCHORSTREAM_OUT_DIR)")
    common.add_argument("--segments", type=int, help="number of target segments")
    common.add_argument("--data", type=Path, help="reuse a stream exported by gen-data")
    common.add_argument("--checkpoint", type=Path, help="reuse a pretrained base model")
    common.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. train.lambda=100 (repeatable)")
    common.add_argument("--workers", type=int, help="threads for evaluation and per-sample gradients")
    common.add_argument("--log-level", help="logging level (falls back to ANCHORSTREAM_LOG_LEVEL)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="build and export the synthetic stream")
    sub.add_parser("pretrain", parents=[common], help="pretrain the base model on the general domain")

    adapt = sub.add_parser("adapt", parents=[common], help="run one paradigm over the stream")
    adapt.add_argument("--preset", default=DEFAULT_PRESET)

    compare = sub.add_parser("compare", parents=[common], help="paired-seed runs and a pareto table")
    compare.add_argument("--presets", default="V1.1,V3.1")
    compare.add_argument("--lambdas", help="comma-separated lambda values to sweep")
    compare.add_argument("--warmups", help="comma-separated warmup step counts to sweep")

    lm_check = sub.add_parser("lm-check", parents=[common], help="decode with and without the n-gram LM")
    lm_check.add_argument("--preset", default="V3.1")

    validate = sub.add_parser("validate", parents=[common], help="run the oracle suites")
    validate.add_argument("--edit-max-len", type=int, default=6)
    return parser


def _split(text: Optional[str], cast) -> List:
    if not text:
        return []
    try:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}: {exc}") from exc


def resolve_from_args(args: argparse.Namespace, settings: Settings, preset: str, extra: Sequence[str] = ()) -> ExperimentConfig:
    """Preset + config file + --set + the dedicated flags, in that order of precedence."""
    overrides: Dict = load_config_file(args.config) if args.config else {}
    assignments = list(args.assignments) + list(extra)
    seed = args.seed if args.seed is not None else overrides.get("seed", settings.SEED)
    if seed is not None:
        assignments.append(f"seed={seed}")
    assignments.append(f"out_dir={json.dumps(str(args.out or overrides.get('out_dir', settings.OUT_DIR)))}")
    if args.segments is not None:
        assignments.append(f"stream.k_segments={args.segments}")
    return resolve_config(preset, overrides, assignments)


def load_or_build_stream(args: argparse.Namespace, cfg: ExperimentConfig) -> StreamDataset:
    if args.data:
        data = import_stream(args.data)
        print(f"✅ Loaded stream from {args.data} ({len(data.target_segments)} segments)")
        return data
    return build_stream(
        cfg.stream.k_segments, cfg.stream.per_segment, RngState(cfg.seed).derive("data"), cfg.stream, cfg.model
    )


def load_checkpoint(args: argparse.Namespace) -> Optional[ModelState]:
    if not args.checkpoint:
        return None
    model = load_model(args.checkpoint)
    print(f"✅ Loaded base model from {args.checkpoint}")
    return model


def load_or_pretrain(base: Optional[ModelState], cfg: ExperimentConfig, data: StreamDataset, workers: int) -> ModelState:
    if base is not None:
        return base
    return pretrain_base(data.general_train, cfg, RngState(cfg.seed), data.general_dev, workers)


def _print_run(result: ExperimentResult) -> None:
    final = result.reports[-1]
    print(
        f"✅ {result.preset}: target WER {result.baseline.target_wer:.2f} -> {final.target_wer:.2f}, "
        f"general WER {result.baseline.general_wer:.2f} -> {final.general_wer:.2f} "
        f"(forgetting {final.forgetting:+.2f})"
    )


def cmd_gen_data(args, settings, workers) -> int:
    cfg = resolve_from_args(args, settings, DEFAULT_PRESET)
    data = load_or_build_stream(args, cfg)
    path = Path(cfg.out_dir) / "stream.jsonl"
    export_stream(data, path)
    print(f"✅ Wrote {path}")
    return 0


def cmd_pretrain(args, settings, workers) -> int:
    cfg = resolve_from_args(args, settings, DEFAULT_PRESET)
    data = load_or_build_stream(args, cfg)
    model = pretrain_base(data.general_train, cfg, RngState(cfg.seed), data.general_dev, workers)
    path = Path(cfg.out_dir) / "base_model.json"
    save_model(model, path)
    print(f"✅ Wrote {path}")
    return 0


def cmd_adapt(args, settings, workers) -> int:
    cfg = resolve_from_args(args, settings, args.preset)
    base = load_checkpoint(args)
    data = load_or_build_stream(args, cfg)
    base = load_or_pretrain(base, cfg, data, workers)
    run = run_experiment(cfg, data, base, Path(cfg.out_dir) / cfg.preset, workers)
    _print_run(run.result)
    print(f"✅ Results in {Path(cfg.out_dir) / cfg.preset}")
    return 0


def _variants(args, settings) -> List[Tuple[str, ExperimentConfig]]:
    variants = []
    lambdas = _split(args.lambdas, float)
    warmups = _split(args.warmups, int)
    for preset in _split(args.presets, str):
        if lambdas:
            variants += [
                (f"{preset}[lambda={value:g}]", resolve_from_args(args, settings, preset, [f"train.lambda={value}"]))
                for value in lambdas
            ]
        elif warmups:
            variants += [
                (f"{preset}[warmup={value}]", resolve_from_args(args, settings, preset, [f"train.warmup_steps={value}"]))
                for value in warmups
            ]
        else:
            variants.append((preset, resolve_from_args(args, settings, preset)))
    if not variants:
        raise ConfigError(f"no presets given; valid presets: {', '.join(PRESETS)}")
    return variants


def cmd_compare(args, settings, workers) -> int:
    variants = _variants(args, settings)
    first = variants[0][1]
    base = load_checkpoint(args)
    data = load_or_build_stream(args, first)
    base = load_or_pretrain(base, first, data, workers)
    results: Dict[str, ExperimentResult] = {}
    for name, cfg in variants:
        run = run_experiment(cfg, data, base, Path(cfg.out_dir) / name, workers)
        results[name] = run.result
        _print_run(run.result)
    path = write_pareto(pareto_summary(results), Path(first.out_dir) / "pareto.csv")
    print(f"✅ Wrote {path}")
    return 0


def cmd_lm_check(args, settings, workers) -> int:
    cfg = resolve_from_args(args, settings, args.preset)
    base = load_checkpoint(args)
    data = load_or_build_stream(args, cfg)
    base = load_or_pretrain(base, cfg, data, workers)
    run = run_experiment(cfg, data, base, Path(cfg.out_dir) / cfg.preset, workers)
    rows, lm = lm_spot_check(run.base_model, run.model, data, cfg.lm, workers)
    out = Path(cfg.out_dir)
    lm.save(out / "char_lm.json")
    path = write_lm_check(rows, out / "lm_check.csv")
    for row in rows:
        print(f"   {row.model:<9} {row.decoder:<8} WER {row.wer:6.2f}  CER {row.cer:6.2f}")
    print(f"✅ Wrote {path}")
    return 0


def cmd_validate(args, settings, workers) -> int:
    seed = args.seed if args.seed is not None else (settings.SEED or 0)
    results = OracleVerifier(seed=seed, edit_max_len=args.edit_max_len).verify_all()
    for result in results:
        mark = "✅" if result.is_verified else "❌"
        print(f"{mark} {result.verification_method}: {result.cases_checked} cases, max error {result.max_error:.3e}")
    return 0 if all(r.is_verified for r in results) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "compare": cmd_compare,
    "lm-check": cmd_lm_check,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None, settings: Optional[Settings] = None) -> int:
    """Run one command; `settings` defaults to the ones loaded at import."""
    args = build_parser().parse_args(argv)
    settings = settings or process_settings
    logging.basicConfig(
        level=(args.log_level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    workers = args.workers or settings.WORKERS
    logger.debug("anchorstream %s: %s with %d worker(s)", __version__, args.command, workers)
    try:
        return COMMANDS[args.command](args, settings, workers)
    except AnchorStreamError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"❌ I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
