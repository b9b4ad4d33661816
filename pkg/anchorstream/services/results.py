"""
Result files: per-segment CSV, summary JSON, comparison tables and the
checkpoint directory written while a run progresses.

Every file is written to a temp file and renamed into place, so a reader never
sees a half-written table.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from anchorstream.core.checkpoint import atomic_write_text, save_model
from anchorstream.core.model import ModelState
from anchorstream.exceptions import DomainError
from anchorstream.memory.fisher import FisherState
from anchorstream.memory.replay_buffer import ReplayBuffer
from anchorstream.schemas.config import ExperimentConfig
from anchorstream.schemas.reports import ExperimentResult, LMCheckRow, ParetoRow, SegmentReport

logger = logging.getLogger(__name__)

SEGMENT_HEADER = [
    "segment", "target_wer", "target_cer", "general_wer", "general_cer",
    "forgetting", "mean_loss", "max_grad_norm", "wall_time_s",
]
PARETO_HEADER = ["paradigm", "final_target_wer", "relative_improvement", "final_general_wer", "forgetting"]
LM_CHECK_HEADER = ["model", "decoder", "wer", "cer"]


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def segments_csv(reports: Sequence[SegmentReport]) -> str:
    """segments.csv body: one row per segment, fixed-precision floats."""
    return _csv_text(
        SEGMENT_HEADER,
        (
            [
                r.segment,
                f"{r.target_wer:.4f}",
                f"{r.target_cer:.4f}",
                f"{r.general_wer:.4f}",
                f"{r.general_cer:.4f}",
                f"{r.forgetting:.4f}",
                f"{r.mean_train_loss:.6f}",
                f"{r.max_grad_norm:.6f}",
                f"{r.wall_time:.3f}",
            ]
            for r in reports
        ),
    )


def summary_document(result: ExperimentResult, config: ExperimentConfig) -> Dict:
    final = result.reports[-1]
    return {
        "preset": result.preset,
        "seed": result.seed,
        "config": config.model_dump(mode="json", by_alias=True),
        "baseline": result.baseline.model_dump(),
        "final": {
            "target_wer": final.target_wer,
            "target_cer": final.target_cer,
            "general_wer": final.general_wer,
            "general_cer": final.general_cer,
            "forgetting": final.forgetting,
            "max_grad_norm": max(r.max_grad_norm for r in result.reports),
        },
        "base_fingerprint": result.base_fingerprint,
        "segments": [r.model_dump() for r in result.reports],
    }


def emit_results(result: ExperimentResult, config: ExperimentConfig, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write segments.csv and summary.json for one run.

    Raises:
        DomainError: If the run has no segment reports.
        OSError: If the directory cannot be written.
    """
    if not result.reports:
        raise DomainError("cannot emit results without segment reports")
    out_dir = Path(out_dir)
    paths = {"segments": out_dir / "segments.csv", "summary": out_dir / "summary.json"}
    atomic_write_text(paths["segments"], segments_csv(result.reports))
    atomic_write_text(paths["summary"], json.dumps(summary_document(result, config), indent=2, sort_keys=True))
    logger.info("wrote %s and %s", paths["segments"], paths["summary"])
    return paths


def write_pareto(rows: Sequence[ParetoRow], path: Union[str, Path]) -> Path:
    text = _csv_text(
        PARETO_HEADER,
        (
            [r.paradigm, f"{r.final_target_wer:.4f}", f"{r.relative_improvement:.4f}",
             f"{r.final_general_wer:.4f}", f"{r.forgetting:.4f}"]
            for r in rows
        ),
    )
    atomic_write_text(path, text)
    return Path(path)


def write_lm_check(rows: Sequence[LMCheckRow], path: Union[str, Path]) -> Path:
    atomic_write_text(path, _csv_text(LM_CHECK_HEADER, ([r.model, r.decoder, f"{r.wer:.4f}", f"{r.cer:.4f}"] for r in rows)))
    return Path(path)


class RunWriter:
    """Checkpoint directory of one run, updated after every segment."""

    def __init__(self, out_dir: Union[str, Path], config: ExperimentConfig):
        """Create the directory and record the resolved config."""
        self.out_dir = Path(out_dir)
        self.config = config
        (self.out_dir / "adapters").mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.out_dir / "config.json", config.model_dump_json(indent=2, by_alias=True))

    def write_base(self, model: ModelState) -> Path:
        path = self.out_dir / "base_model.json"
        save_model(model, path)
        return path

    def write_segment(
        self,
        index: int,
        model: ModelState,
        buf: ReplayBuffer,
        fs: FisherState,
        reports: List[SegmentReport],
    ) -> None:
        save_model(model, self.out_dir / "adapters" / f"segment_{index:02d}.json", include_base=False)
        if self.config.train.uses_ewc:
            fs.save(self.out_dir / "fisher_state.json")
        if self.config.train.uses_replay:
            buf.save_snapshot(self.out_dir / "buffer_snapshot.json")
        atomic_write_text(self.out_dir / "segments.csv", segments_csv(reports))

    def write_summary(self, result: ExperimentResult) -> Dict[str, Path]:
        return emit_results(result, self.config, self.out_dir)
