"""Bundle loading and persistence for graphs and session transcripts.

On-disk bundle layout (one directory per video, all files UTF-8):

    manifest     JSON document: {"video_id", "total_frames", "fps",
                 "embedding_dim"} (fps and embedding_dim may be null)
    captions     one `frame_index<TAB>caption` per line (optional file)
    embeddings   one `frame_index<TAB>space-separated floats` per line
                 (optional file)
    qa           one JSON record per line: {"video_id", "question",
                 "options", "answer_index"?, "category"?,
                 "entity_count_bucket"?} (optional file)

Graphs serialize to a single JSON document with an explicit schema_version.
Floats survive exactly: JSON rendering uses repr, which round-trips every
finite double. Transcripts append one JSON record per session, retrievable
by (video_id, sha256(question)).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import DataFormatError, DimensionError, SchemaVersionError
from .graph import EntityNode, GraphConfig, RelationEdge, VideoGraph
from .parsing import EntityType, RelationCategory

GRAPH_SCHEMA_VERSION = 1
TRANSCRIPT_SCHEMA_VERSION = 1

CATEGORIES = ("Causal", "Temporal", "Descriptive")
BUCKETS = ("Few", "Mid", "Many")


@dataclass
class VideoBundle:
    """A video's precomputed inputs: captions and embeddings by frame."""

    video_id: str
    total_frames: int
    captions: dict[int, str] = field(default_factory=dict)
    embeddings: dict[int, list[float]] = field(default_factory=dict)
    fps: Optional[float] = None
    embedding_dim: Optional[int] = None

    def validate(self) -> "VideoBundle":
        if self.total_frames < 1:
            raise DataFormatError(f"total_frames must be >= 1, got {self.total_frames}")
        for frame in self.captions:
            if not 0 <= frame < self.total_frames:
                raise DataFormatError(
                    f"caption frame {frame} outside [0, {self.total_frames})"
                )
        dim = self.embedding_dim
        reference_frame = None
        for frame, vector in sorted(self.embeddings.items()):
            if not 0 <= frame < self.total_frames:
                raise DataFormatError(
                    f"embedding frame {frame} outside [0, {self.total_frames})"
                )
            if dim is None:
                dim, reference_frame = len(vector), frame
            elif len(vector) != dim:
                origin = (
                    f"frame {reference_frame}" if reference_frame is not None else "manifest"
                )
                raise DimensionError(
                    f"embedding dim mismatch: frame {frame} has {len(vector)}, "
                    f"{origin} has {dim}"
                )
        if self.embeddings and self.embedding_dim is None:
            self.embedding_dim = dim
        return self


@dataclass
class QAItem:
    """One multiple-choice question tied to a video bundle."""

    video_id: str
    question: str
    options: list[str]
    answer_index: Optional[int] = None
    category: Optional[str] = None
    entity_count_bucket: Optional[str] = None

    def validate(self) -> "QAItem":
        if not self.question:
            raise DataFormatError("question must be nonempty")
        if not 2 <= len(self.options) <= 5:
            raise DataFormatError(
                f"expected 2..5 options, got {len(self.options)} for {self.question!r}"
            )
        if self.answer_index is not None and not 0 <= self.answer_index < len(self.options):
            raise DataFormatError(
                f"answer_index {self.answer_index} out of range for {len(self.options)} options"
            )
        if self.category is not None and self.category not in CATEGORIES:
            raise DataFormatError(f"unknown category {self.category!r}")
        if self.entity_count_bucket is not None and self.entity_count_bucket not in BUCKETS:
            raise DataFormatError(f"unknown entity_count_bucket {self.entity_count_bucket!r}")
        return self


# ---------------------------------------------------------------------------
# Bundle I/O
# ---------------------------------------------------------------------------

def load_bundle(directory: Union[str, Path]) -> VideoBundle:
    """Load and validate a bundle directory. Errors name file and line."""
    directory = Path(directory)
    manifest_path = directory / "manifest"
    if not manifest_path.is_file():
        raise DataFormatError(f"missing manifest file in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    for key in ("video_id", "total_frames"):
        if key not in manifest:
            raise DataFormatError(f"{manifest_path}: missing required field {key!r}")

    bundle = VideoBundle(
        video_id=str(manifest["video_id"]),
        total_frames=int(manifest["total_frames"]),
        fps=float(manifest["fps"]) if manifest.get("fps") is not None else None,
        embedding_dim=(
            int(manifest["embedding_dim"]) if manifest.get("embedding_dim") is not None else None
        ),
    )

    captions_path = directory / "captions"
    if captions_path.is_file():
        for line_no, line in _data_lines(captions_path):
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0].strip().isdigit():
                raise DataFormatError(
                    f"{captions_path}:{line_no}: expected frame_index<TAB>caption"
                )
            frame = int(parts[0])
            if frame >= bundle.total_frames:
                raise DataFormatError(
                    f"{captions_path}:{line_no}: frame {frame} >= total_frames {bundle.total_frames}"
                )
            bundle.captions[frame] = parts[1]

    embeddings_path = directory / "embeddings"
    if embeddings_path.is_file():
        for line_no, line in _data_lines(embeddings_path):
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0].strip().isdigit():
                raise DataFormatError(
                    f"{embeddings_path}:{line_no}: expected frame_index<TAB>floats"
                )
            frame = int(parts[0])
            try:
                vector = [float(x) for x in parts[1].split()]
            except ValueError as exc:
                raise DataFormatError(
                    f"{embeddings_path}:{line_no}: bad float: {exc}"
                ) from exc
            if not vector:
                raise DataFormatError(f"{embeddings_path}:{line_no}: empty vector")
            bundle.embeddings[frame] = vector

    return bundle.validate()


def save_bundle(bundle: VideoBundle, directory: Union[str, Path]) -> Path:
    """Write a bundle directory in the documented layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "video_id": bundle.video_id,
        "total_frames": bundle.total_frames,
        "fps": bundle.fps,
        "embedding_dim": bundle.embedding_dim,
    }
    (directory / "manifest").write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    if bundle.captions:
        for frame, text in bundle.captions.items():
            if "\n" in text or "\r" in text:
                raise DataFormatError(
                    f"caption for frame {frame} contains a newline; captions are one-line records"
                )
        lines = [f"{frame}\t{text}" for frame, text in sorted(bundle.captions.items())]
        (directory / "captions").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if bundle.embeddings:
        lines = [
            f"{frame}\t" + " ".join(repr(x) for x in vector)
            for frame, vector in sorted(bundle.embeddings.items())
        ]
        (directory / "embeddings").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def _data_lines(path: Path):
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        yield line_no, raw


def load_qa(path: Union[str, Path]) -> list[QAItem]:
    """Read QA items (one JSON record per line)."""
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"QA file not found: {path}")
    items = []
    for line_no, line in _data_lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        try:
            item = QAItem(
                video_id=str(obj["video_id"]),
                question=str(obj["question"]),
                options=[str(o) for o in obj["options"]],
                answer_index=obj.get("answer_index"),
                category=obj.get("category"),
                entity_count_bucket=obj.get("entity_count_bucket"),
            ).validate()
        except KeyError as exc:
            raise DataFormatError(f"{path}:{line_no}: missing field {exc}") from exc
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
        items.append(item)
    return items


def save_qa(items: Sequence[QAItem], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for item in items:
        record = {
            "video_id": item.video_id,
            "question": item.question,
            "options": item.options,
        }
        if item.answer_index is not None:
            record["answer_index"] = item.answer_index
        if item.category is not None:
            record["category"] = item.category
        if item.entity_count_bucket is not None:
            record["entity_count_bucket"] = item.entity_count_bucket
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Graph serialization
# ---------------------------------------------------------------------------

def save_graph(graph: VideoGraph) -> bytes:
    """Serialize a graph to a UTF-8 JSON document (exact float round-trip)."""
    payload = {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "config": {
            "coherence_alpha": graph.config.coherence_alpha,
            "window": graph.config.window,
            "merge_similarity": graph.config.merge_similarity,
        },
        "version": graph.version,
        "processed_frames": list(graph.processed_frames),
        "nodes": [
            {
                "id": node.id,
                "canonical_lemma": node.canonical_lemma,
                "entity_type": node.entity_type.value,
                "frame_indices": list(node.frame_indices),
                "feature": node.feature,
                "feature_count": node.feature_count,
                "caption_snippets": [[frame, text] for frame, text in node.caption_snippets],
                "state_history": [[frame, label] for frame, label in node.state_history],
                "aliases": list(node.aliases),
            }
            for node in sorted(graph.nodes.values(), key=lambda n: n.id)
        ],
        "edges": [
            {
                "id": edge.id,
                "src": edge.src,
                "dst": edge.dst,
                "category": edge.category.value,
                "predicate": edge.predicate,
                "frame_indices": list(edge.frame_indices),
            }
            for edge in sorted(graph.edges.values(), key=lambda e: e.id)
        ],
    }
    return (json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def load_graph(blob: bytes) -> VideoGraph:
    """Parse bytes produced by save_graph back into a structurally equal graph."""
    try:
        payload = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable graph payload: {exc}") from exc
    if not isinstance(payload, dict) or "schema_version" not in payload:
        raise DataFormatError("graph payload missing schema_version")
    if payload["schema_version"] != GRAPH_SCHEMA_VERSION:
        raise SchemaVersionError(payload["schema_version"], GRAPH_SCHEMA_VERSION)
    try:
        config = GraphConfig(
            coherence_alpha=payload["config"]["coherence_alpha"],
            window=payload["config"]["window"],
            merge_similarity=payload["config"]["merge_similarity"],
        )
        nodes = {}
        for obj in payload["nodes"]:
            node = EntityNode(
                id=obj["id"],
                canonical_lemma=obj["canonical_lemma"],
                entity_type=EntityType(obj["entity_type"]),
                frame_indices=list(obj["frame_indices"]),
                feature=obj["feature"],
                feature_count=obj["feature_count"],
                caption_snippets=[(frame, text) for frame, text in obj["caption_snippets"]],
                state_history=[(frame, label) for frame, label in obj["state_history"]],
                aliases=list(obj["aliases"]),
            )
            nodes[node.id] = node
        edges = {}
        for obj in payload["edges"]:
            edge = RelationEdge(
                id=obj["id"],
                src=obj["src"],
                dst=obj["dst"],
                category=RelationCategory(obj["category"]),
                predicate=obj["predicate"],
                frame_indices=list(obj["frame_indices"]),
            )
            edges[edge.id] = edge
        return VideoGraph(
            config=config,
            nodes=nodes,
            edges=edges,
            processed_frames=list(payload["processed_frames"]),
            version=payload["version"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed graph payload: {exc!r}") from exc


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------

def question_digest(question: str) -> str:
    return hashlib.sha256(question.encode("utf-8")).hexdigest()


def transcript_record(session) -> dict:
    """Build the JSON record for a terminated session."""
    if session.terminated_by is None:
        raise ValueError("cannot persist a session that has not terminated")
    return {
        "schema_version": TRANSCRIPT_SCHEMA_VERSION,
        "video_id": session.video_id,
        "question": session.question,
        "question_sha256": question_digest(session.question),
        "options": list(session.options),
        "selected_frames": list(session.selected_frames),
        "frames_used": len(session.selected_frames),
        "rounds": [
            {
                "round": r.round,
                "frames_added": list(r.frames_added),
                "prediction": r.prediction,
                "confidence": r.confidence,
                "missing_info": r.missing_info,
                "prompt_digest": r.prompt_digest,
            }
            for r in session.rounds
        ],
        "final_answer": session.final_answer,
        "terminated_by": session.terminated_by.value,
        "final_graph_version": session.final_graph_version,
    }


def save_transcript(session, path: Union[str, Path]) -> Path:
    """Append one session record to a transcript file (JSON lines)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(transcript_record(session), sort_keys=True, ensure_ascii=False)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(line + "\n")
    return path


def load_transcripts(path: Union[str, Path]) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"transcript file not found: {path}")
    records = []
    for line_no, line in _data_lines(path):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        if record.get("schema_version") != TRANSCRIPT_SCHEMA_VERSION:
            raise SchemaVersionError(record.get("schema_version"), TRANSCRIPT_SCHEMA_VERSION)
        records.append(record)
    return records


def find_transcript(path: Union[str, Path], video_id: str, question: str) -> Optional[dict]:
    """Latest stored record for (video_id, question), or None."""
    digest = question_digest(question)
    match = None
    for record in load_transcripts(path):
        if record["video_id"] == video_id and record["question_sha256"] == digest:
            match = record
    return match
