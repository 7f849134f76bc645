"""Batch evaluation over QA sets: accuracy, frame usage, and breakdowns.

Sessions run with item-level parallelism behind a bounded worker pool;
aggregation and all file writes happen single-threaded afterwards, in input
order, so two runs over the same inputs produce byte-identical transcripts
and reports.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .agent import AgentConfig, AgentSession, VideoAgent
from .errors import DataFormatError
from .gateway import ModelGateway
from .graph import VideoGraph
from .parsing import Lexicon
from .store import QAItem, VideoBundle, load_bundle, load_qa, save_transcript, transcript_record

logger = logging.getLogger(__name__)

GatewayFactory = Callable[[QAItem], ModelGateway]


@dataclass
class EvalReport:
    """Aggregate metrics for one eval run."""

    n_items: int
    answered: int
    accuracy: float
    mean_frames_used: float
    mean_rounds: float
    per_category: dict[str, float]
    per_bucket: dict[str, float]
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_items": self.n_items,
            "answered": self.answered,
            "accuracy": self.accuracy,
            "mean_frames_used": self.mean_frames_used,
            "mean_rounds": self.mean_rounds,
            "per_category": self.per_category,
            "per_bucket": self.per_bucket,
            "failures": self.failures,
        }

    def render_text(self) -> str:
        lines = [
            f"items:            {self.n_items}",
            f"answered:         {self.answered}",
            f"failures:         {len(self.failures)}",
            f"accuracy:         {self.accuracy:.4f}",
            f"mean frames used: {self.mean_frames_used:.2f}",
            f"mean rounds:      {self.mean_rounds:.2f}",
        ]
        if self.per_category:
            lines.append("accuracy by category:")
            for name in sorted(self.per_category):
                lines.append(f"  {name:<12} {self.per_category[name]:.4f}")
        if self.per_bucket:
            lines.append("accuracy by entity-count bucket:")
            for name in sorted(self.per_bucket):
                lines.append(f"  {name:<12} {self.per_bucket[name]:.4f}")
        for failure in self.failures:
            lines.append(f"  FAILED {failure['item_id']}: {failure['error']}")
        return "\n".join(lines)


def bucket_by_entity_count(node_count: int, dataset_bucket: Optional[str] = None) -> str:
    """Entity-count bucket from the final graph; a dataset-provided bucket wins."""
    if dataset_bucket is not None:
        return dataset_bucket
    if node_count <= 3:
        return "Few"
    if node_count <= 6:
        return "Mid"
    return "Many"


@dataclass
class _ItemResult:
    item: QAItem
    item_id: str
    session: Optional[AgentSession] = None
    graph: Optional[VideoGraph] = None
    error: Optional[str] = None


def _run_item(index: int, item: QAItem, bundle: VideoBundle,
              gateway_factory: GatewayFactory, cfg: AgentConfig,
              lexicon: Optional[Lexicon]) -> _ItemResult:
    item_id = f"{item.video_id}#{index}"
    result = _ItemResult(item=item, item_id=item_id)
    try:
        agent = VideoAgent(bundle, gateway_factory(item), cfg, lexicon)
        result.session, result.graph = agent.run(item.question, item.options)
    except Exception as exc:  # noqa: BLE001 - any per-item failure is reportable
        logger.error("item %s failed: %s", item_id, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def run_eval(qa_path: Union[str, Path], bundle_root: Union[str, Path],
             cfg: AgentConfig, gateway_factory: GatewayFactory,
             out_dir: Union[str, Path], parallel: int = 1,
             lexicon: Optional[Lexicon] = None) -> EvalReport:
    """Run every QA item, write transcripts and a report, return the report.

    Items whose sessions raise are counted as failures: included in n_items,
    excluded from accuracy. The QA file and every referenced bundle must be
    resolvable up front, otherwise nothing runs.
    """
    items = load_qa(qa_path)
    bundle_root = Path(bundle_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bundles: dict[str, VideoBundle] = {}
    for item in items:
        if item.video_id not in bundles:
            bundle_dir = bundle_root / item.video_id
            if not bundle_dir.is_dir():
                raise DataFormatError(
                    f"bundle directory for video {item.video_id!r} not found under {bundle_root}"
                )
            bundles[item.video_id] = load_bundle(bundle_dir)

    def runner(pair):
        index, item = pair
        return _run_item(index, item, bundles[item.video_id], gateway_factory, cfg, lexicon)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(runner, enumerate(items)))
    else:
        results = [runner(pair) for pair in enumerate(items)]

    transcript_path = out_dir / "transcripts.jsonl"
    transcript_path.unlink(missing_ok=True)
    for result in results:
        if result.session is not None:
            save_transcript(result.session, transcript_path)

    report = _aggregate(results)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return report


def _accuracy(pairs: Sequence[tuple[bool, str]], key: Optional[str] = None) -> float:
    relevant = [correct for correct, k in pairs if key is None or k == key]
    return sum(relevant) / len(relevant) if relevant else 0.0


def _aggregate(results: Sequence[_ItemResult]) -> EvalReport:
    completed = [r for r in results if r.session is not None]
    failures = [
        {"item_id": r.item_id, "error": r.error} for r in results if r.error is not None
    ]

    scored: list[tuple[bool, str, str]] = []  # (correct, category, bucket)
    for r in completed:
        if r.item.answer_index is None:
            continue
        correct = r.session.final_answer == r.item.answer_index
        bucket = bucket_by_entity_count(
            len(r.graph.nodes) if r.graph is not None else 0,
            r.item.entity_count_bucket,
        )
        scored.append((correct, r.item.category or "", bucket))

    categories = sorted({c for _, c, _ in scored if c})
    buckets = sorted({b for _, _, b in scored})
    frame_counts = [len(r.session.selected_frames) for r in completed]
    round_counts = [len(r.session.rounds) for r in completed]

    return EvalReport(
        n_items=len(results),
        answered=len(completed),
        accuracy=_accuracy([(c, "") for c, _, _ in scored]),
        mean_frames_used=sum(frame_counts) / len(frame_counts) if frame_counts else 0.0,
        mean_rounds=sum(round_counts) / len(round_counts) if round_counts else 0.0,
        per_category={
            c: _accuracy([(ok, cat) for ok, cat, _ in scored], c) for c in categories
        },
        per_bucket={
            b: _accuracy([(ok, bucket) for ok, _, bucket in scored], b) for b in buckets
        },
        failures=failures,
    )


def replay_report(transcripts_path: Union[str, Path], qa_path: Union[str, Path]) -> dict:
    """Recompute headline numbers from stored transcripts (no sessions run)."""
    from .store import load_transcripts

    records = load_transcripts(transcripts_path)
    items = load_qa(qa_path)
    by_key = {(r["video_id"], r["question"]): r for r in records}
    scored = []
    frames = []
    for item in items:
        record = by_key.get((item.video_id, item.question))
        if record is None:
            continue
        frames.append(record["frames_used"])
        if item.answer_index is not None:
            scored.append(record["final_answer"] == item.answer_index)
    return {
        "n_transcripts": len(records),
        "accuracy": sum(scored) / len(scored) if scored else 0.0,
        "mean_frames_used": sum(frames) / len(frames) if frames else 0.0,
    }
