"""Embedding corpus: ingestion, exact cosine top-k retrieval, record lookup.

Corpus file format (line-delimited UTF-8):

    modelcrafter-corpus v1 dim=<d>
    <id>\t<uri>\t<f1,f2,...,fd>\t<attr1;attr2|~|empty>\t<k1=v1;k2=v2>

The attributes field is optional mock ground truth: empty means "unknown",
``~`` means "known empty set". Embeddings are L2-normalized at ingest; the
manifest checksum is the SHA-256 of the canonicalized record lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    FormatError,
    NotFoundError,
    PreconditionError,
)
from .gateway import EmbeddingVector
from .textnorm import sha256_hex

HEADER_PREFIX = "modelcrafter-corpus v1 dim="
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ImageRecord:
    id: str
    uri: str
    embedding: EmbeddingVector | None
    mock_attributes: frozenset[str] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise PreconditionError("record id must be non-empty")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding.as_array()))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise PreconditionError(f"record {self.id} embedding norm {norm} is not unit")


@dataclass(frozen=True)
class CorpusManifest:
    name: str
    dim: int
    record_count: int
    source_path: str
    checksum: str


def _format_floats(values: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def _record_line(record: ImageRecord) -> str:
    assert record.embedding is not None
    if record.mock_attributes is None:
        attrs = ""
    elif not record.mock_attributes:
        attrs = "~"
    else:
        attrs = ";".join(sorted(record.mock_attributes))
    meta = ";".join(f"{k}={v}" for k, v in sorted(record.metadata.items()))
    return "\t".join([record.id, record.uri, _format_floats(record.embedding.values), attrs, meta])


def _parse_record_line(line: str, dim: int, lineno: int) -> ImageRecord:
    parts = line.split("\t")
    if len(parts) != 5:
        raise FormatError(f"expected 5 tab-separated fields, got {len(parts)}", line=lineno)
    rec_id, uri, floats, attrs_field, meta_field = parts
    if not rec_id:
        raise FormatError("empty record id", line=lineno)
    try:
        values = [float(v) for v in floats.split(",")] if floats else []
    except ValueError as exc:
        raise FormatError(f"bad embedding value: {exc}", line=lineno) from exc
    if len(values) != dim:
        raise DimensionMismatchError(
            f"line {lineno}: embedding has {len(values)} values, corpus dim {dim}", line=lineno
        )
    try:
        embedding = EmbeddingVector.from_values(values)
    except PreconditionError as exc:
        raise FormatError(f"embedding not normalizable: {exc}", line=lineno) from exc
    if attrs_field == "":
        attrs = None
    elif attrs_field == "~":
        attrs = frozenset()
    else:
        attrs = frozenset(a for a in attrs_field.split(";") if a)
    metadata: dict[str, str] = {}
    if meta_field:
        for pair in meta_field.split(";"):
            key, sep, value = pair.partition("=")
            if not sep:
                raise FormatError(f"bad metadata pair {pair!r}", line=lineno)
            metadata[key] = value
    return ImageRecord(id=rec_id, uri=uri, embedding=embedding, mock_attributes=attrs, metadata=metadata)


def load_corpus_file(path: str | Path) -> tuple[int, list[ImageRecord]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"corpus file {path} does not exist")
    records: list[ImageRecord] = []
    seen: set[str] = set()
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if lineno == 1:
                if not line.startswith(HEADER_PREFIX):
                    raise FormatError(f"bad header {line!r}", line=1)
                try:
                    dim = int(line[len(HEADER_PREFIX):])
                except ValueError as exc:
                    raise FormatError(f"bad dim in header: {line!r}", line=1) from exc
                if dim < 1:
                    raise FormatError("dim must be >= 1", line=1)
                continue
            if not line:
                continue
            assert dim is not None
            record = _parse_record_line(line, dim, lineno)
            if record.id in seen:
                raise DuplicateIdError(f"line {lineno}: duplicate id {record.id!r}", line=lineno)
            seen.add(record.id)
            records.append(record)
    if dim is None:
        raise FormatError("empty corpus file", line=0)
    return dim, records


def write_corpus_file(path: str | Path, dim: int, records: Sequence[ImageRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{HEADER_PREFIX}{dim}\n")
        for record in records:
            fh.write(_record_line(record) + "\n")


def dedup_union(sets: Iterable[Iterable[str]]) -> list[str]:
    """Union preserving first-seen order."""
    seen: set[str] = set()
    out: list[str] = []
    for group in sets:
        for item in group:
            if item not in seen:
                seen.add(item)
                out.append(item)
    return out


class CorpusIndex:
    """Exact brute-force cosine retrieval over an immutable record set."""

    def __init__(self, dim: int, records: Sequence[ImageRecord], name: str = "corpus"):
        self.dim = dim
        self.name = name
        self._records: dict[str, ImageRecord] = {}
        rows = []
        for record in records:
            if record.embedding is None:
                raise PreconditionError(f"record {record.id} has no embedding")
            if record.embedding.dim != dim:
                raise DimensionMismatchError(
                    f"record {record.id} dim {record.embedding.dim} != corpus dim {dim}"
                )
            if record.id in self._records:
                raise DuplicateIdError(f"duplicate id {record.id!r}")
            self._records[record.id] = record
            rows.append(record.embedding.as_array())
        self._ids = list(self._records)
        self._matrix = np.vstack(rows) if rows else np.zeros((0, dim))

    @classmethod
    def ingest(cls, path: str | Path, name: str | None = None) -> tuple["CorpusIndex", CorpusManifest]:
        """Validate, normalize and index a corpus file."""
        path = Path(path)
        dim, records = load_corpus_file(path)
        index = cls(dim, records, name=name or path.stem)
        manifest = CorpusManifest(
            name=index.name,
            dim=dim,
            record_count=len(records),
            source_path=str(path),
            checksum=index.checksum(),
        )
        return index, manifest

    def canonical_body(self) -> str:
        return "".join(_record_line(r) + "\n" for r in self._records.values())

    def checksum(self) -> str:
        return sha256_hex(self.canonical_body())

    def save(self, path: str | Path) -> None:
        write_corpus_file(path, self.dim, list(self._records.values()))

    def __len__(self) -> int:
        return len(self._records)

    def ids(self) -> list[str]:
        return list(self._ids)

    def records(self) -> list[ImageRecord]:
        return list(self._records.values())

    def get(self, record_id: str) -> ImageRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise NotFoundError(f"no record with id {record_id!r}") from None

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def top_k(self, query: EmbeddingVector, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine, descending; ties broken by ascending id."""
        if k < 1:
            raise PreconditionError("k must be positive")
        if query.dim != self.dim:
            raise DimensionMismatchError(f"query dim {query.dim} != corpus dim {self.dim}")
        q = query.as_array()
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise PreconditionError("query vector is zero")
        scores = self._matrix @ (q / norm)
        order = sorted(range(len(self._ids)), key=lambda i: (-scores[i], self._ids[i]))
        return [(self._ids[i], float(scores[i])) for i in order[: min(k, len(order))]]

    def embeddings_matrix(self) -> np.ndarray:
        """(N, dim) array in ids() order; rows are unit vectors."""
        return self._matrix.copy()
