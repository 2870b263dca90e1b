"""Embedding corpus storage.

A corpus holds the teacher embeddings of every (query, positive) pair of one
task. Matrices are little-endian float32, row-major; files carry a
length-prefixed JSON header and end with an FNV-1a checksum, so round-trips
are bit-exact. Example index i refers to the same pair in every downstream
stage of a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binfile import BinReader, BinWriter
from .errors import FormatError, ValidationError

FORMAT_VERSION = 1

TASK_CATEGORIES = ("retrieval", "classification", "vqa", "grounding", "other")


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm, preserving direction and dtype.

    Zero rows are a hard error: they have no direction and poison cosine
    similarity downstream.
    """
    mat = np.asarray(matrix)
    if mat.ndim != 2:
        raise ValidationError("normalize_rows expects a 2-D matrix")
    norms = np.linalg.norm(mat.astype(np.float64, copy=False), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"zero-vector row {zero[0]} cannot be normalized")
    out = mat.astype(np.float64, copy=False) / norms[:, None]
    return out.astype(mat.dtype, copy=False)


@dataclass(frozen=True)
class EmbeddingCorpus:
    """Per-task query/positive embedding matrices plus metadata.

    Immutable after construction; the underlying arrays are marked read-only
    so a corpus can be shared across concurrent readers.
    """

    task_id: str
    queries: np.ndarray
    positives: np.ndarray
    task_category: str = "retrieval"
    labels: tuple[str, ...] | None = None
    prompt_metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        q = np.ascontiguousarray(self.queries, dtype=np.float32)
        p = np.ascontiguousarray(self.positives, dtype=np.float32)
        if q.ndim != 2 or p.ndim != 2:
            raise ValidationError("queries and positives must be 2-D matrices")
        if q.shape != p.shape:
            raise ValidationError(
                f"dimension mismatch: queries {q.shape} vs positives {p.shape}"
            )
        if q.shape[0] < 2 or q.shape[1] < 1:
            raise ValidationError(f"corpus needs n >= 2 and d >= 1, got {q.shape}")
        if self.task_category not in TASK_CATEGORIES:
            raise ValidationError(f"unknown task_category {self.task_category!r}")
        for name, mat in (("queries", q), ("positives", p)):
            zero = np.flatnonzero(~np.any(mat != 0.0, axis=1))
            if zero.size:
                raise ValidationError(f"zero-vector row {zero[0]} in {name}")
        if self.task_category == "classification":
            if self.labels is None or len(self.labels) != q.shape[0]:
                raise ValidationError("classification corpus requires one label per example")
        elif self.labels is not None:
            raise ValidationError("labels are only allowed for classification tasks")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "positives", p)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    @property
    def d(self) -> int:
        return self.queries.shape[1]


def save_corpus(corpus: EmbeddingCorpus, path: str | Path) -> int:
    """Write a corpus file and return its checksum."""
    header = {
        "format_version": FORMAT_VERSION,
        "task_id": corpus.task_id,
        "n": corpus.n,
        "d": corpus.d,
        "task_category": corpus.task_category,
        "has_labels": corpus.labels is not None,
    }
    if corpus.prompt_metadata:
        header["prompt_metadata"] = dict(corpus.prompt_metadata)
    w = BinWriter(header)
    w.add_array(corpus.queries, "<f4")
    w.add_array(corpus.positives, "<f4")
    if corpus.labels is not None:
        chunks = []
        for label in corpus.labels:
            enc = label.encode("utf-8")
            chunks.append(np.uint32(len(enc)).tobytes())
            chunks.append(enc)
        w.add_bytes(b"".join(chunks))
    return w.write(path)


def load_corpus(path: str | Path) -> EmbeddingCorpus:
    """Load and validate a corpus file written by save_corpus."""
    r = BinReader(path)
    if r.field("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {r.header['format_version']}")
    n = int(r.field("n"))
    d = int(r.field("d"))
    if n < 2 or d < 1:
        raise FormatError(f"{path}: invalid dimensions n={n}, d={d}")
    queries = r.read_array(n * d, "<f4", "queries matrix (n*d f32)").reshape(n, d)
    positives = r.read_array(n * d, "<f4", "positives matrix (n*d f32)").reshape(n, d)
    labels = None
    if r.field("has_labels"):
        labels = []
        for i in range(n):
            ln = int(r.read_array(1, "<u4", f"label {i} length")[0])
            raw = r.read_array(ln, "u1", f"label {i} text")
            labels.append(bytes(raw).decode("utf-8"))
    r.done()
    return EmbeddingCorpus(
        task_id=str(r.field("task_id")),
        queries=queries,
        positives=positives,
        task_category=str(r.field("task_category")),
        labels=tuple(labels) if labels is not None else None,
        prompt_metadata=dict(r.header.get("prompt_metadata", {})),
    )


@dataclass(frozen=True)
class ManifestEntry:
    task_id: str
    path: str
    n: int
    d: int
    checksum: int


@dataclass(frozen=True)
class CorpusManifest:
    """Index of corpus files, one tab-separated record per task."""

    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        ids = [e.task_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate task_id in corpus manifest")

    def save(self, path: str | Path) -> None:
        lines = [f"#corpus-manifest\tformat_version={FORMAT_VERSION}"]
        for e in self.entries:
            lines.append(f"{e.task_id}\t{e.path}\t{e.n}\t{e.d}\t{e.checksum:016x}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "CorpusManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#corpus-manifest"):
            raise FormatError(f"{path}: missing corpus-manifest header line")
        entries = []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            parts = ln.split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}: bad manifest record: {ln!r}")
            entries.append(
                ManifestEntry(parts[0], parts[1], int(parts[2]), int(parts[3]), int(parts[4], 16))
            )
        return CorpusManifest(tuple(entries))

    def verify(self, base_dir: str | Path) -> None:
        """Re-read every listed file and check checksums and shapes."""
        for e in self.entries:
            p = Path(base_dir) / e.path
            r = BinReader(p)
            r.read_array(r.remaining(), "u1", "payload")
            actual = r.done()
            if actual != e.checksum:
                raise ValidationError(f"manifest checksum mismatch for task {e.task_id}")
            if int(r.field("n")) != e.n or int(r.field("d")) != e.d:
                raise ValidationError(f"manifest shape mismatch for task {e.task_id}")
