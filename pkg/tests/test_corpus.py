from __future__ import annotations

import numpy as np
import pytest

from oracles import naive_top_k
from modelcrafter.corpus import (
    CorpusIndex,
    ImageRecord,
    dedup_union,
    load_corpus_file,
    write_corpus_file,
)
from modelcrafter.errors import (
    DimensionMismatchError,
    DuplicateIdError,
    FormatError,
    NotFoundError,
    PreconditionError,
)
from modelcrafter.gateway import EmbeddingVector


def _record(record_id: str, values: list[float]) -> ImageRecord:
    return ImageRecord(
        id=record_id,
        uri=f"test://{record_id}",
        embedding=EmbeddingVector.from_values(values),
    )


def _write(tmp_path, name: str, dim: int, rows: list[str]):
    path = tmp_path / name
    path.write_text(f"modelcrafter-corpus v1 dim={dim}\n" + "".join(r + "\n" for r in rows))
    return path


class TestIngest:
    def test_three_records(self, tmp_path):
        rows = [
            "a\turi-a\t1,0,0,0\t\t",
            "b\turi-b\t0,1,0,0\tx;y\t",
            "c\turi-c\t0,0,1,0\t~\tk=v",
        ]
        index, manifest = CorpusIndex.ingest(_write(tmp_path, "c.corpus", 4, rows))
        assert manifest.record_count == 3
        assert manifest.dim == 4
        assert index.get("b").mock_attributes == frozenset({"x", "y"})
        assert index.get("c").mock_attributes == frozenset()
        assert index.get("a").mock_attributes is None
        assert index.get("c").metadata == {"k": "v"}

    def test_dimension_mismatch_reports_line(self, tmp_path):
        rows = ["a\tu\t1,0,0,0\t\t", "b\tu\t1,0,0,0,0\t\t"]
        with pytest.raises(DimensionMismatchError) as err:
            CorpusIndex.ingest(_write(tmp_path, "c.corpus", 4, rows))
        assert err.value.details["line"] == 3

    def test_duplicate_id(self, tmp_path):
        rows = ["a\tu\t1,0\t\t", "a\tu\t0,1\t\t"]
        with pytest.raises(DuplicateIdError):
            CorpusIndex.ingest(_write(tmp_path, "c.corpus", 2, rows))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.corpus"
        path.write_text("not a header\n")
        with pytest.raises(FormatError):
            load_corpus_file(path)

    def test_embeddings_normalized_on_ingest(self, tmp_path):
        rows = ["a\tu\t3,4\t\t"]
        index, _ = CorpusIndex.ingest(_write(tmp_path, "c.corpus", 2, rows))
        assert np.isclose(np.linalg.norm(index.get("a").embedding.as_array()), 1.0)

    def test_ingest_idempotent(self, tmp_path):
        rows = ["a\tu\t1,2,2,0\t\t", "b\tu\t0,1,0,0\tp\t"]
        path = _write(tmp_path, "c.corpus", 4, rows)
        _, first = CorpusIndex.ingest(path)
        _, second = CorpusIndex.ingest(path)
        assert first == second

    def test_roundtrip_through_canonical_file(self, tmp_path):
        records = [_record("a", [1, 2, 3]), _record("b", [0, 1, 0])]
        path = tmp_path / "w.corpus"
        write_corpus_file(path, 3, records)
        index, manifest = CorpusIndex.ingest(path)
        out = tmp_path / "again.corpus"
        index.save(out)
        index2, manifest2 = CorpusIndex.ingest(out)
        assert manifest.checksum == manifest2.checksum


class TestTopK:
    def test_self_similarity_first(self):
        index = CorpusIndex(3, [_record("a", [1, 0, 0]), _record("b", [0, 1, 0])])
        hits = index.top_k(EmbeddingVector.from_values([1, 0, 0]), 1)
        assert hits[0][0] == "a"
        assert hits[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_scores_zero(self):
        index = CorpusIndex(3, [_record("a", [1, 0, 0]), _record("b", [0, 1, 0])])
        hits = index.top_k(EmbeddingVector.from_values([0, 0, 1]), 2)
        assert all(score == pytest.approx(0.0, abs=1e-6) for _, score in hits)

    def test_five_fixed_vectors_match_brute_force(self):
        vectors = [
            [0.9, 0.1, 0.0],
            [0.5, 0.5, 0.0],
            [0.0, 1.0, 0.0],
            [0.3, 0.3, 0.9],
            [-0.5, 0.2, 0.1],
        ]
        ids = ["v0", "v1", "v2", "v3", "v4"]
        records = [_record(i, v) for i, v in zip(ids, vectors)]
        index = CorpusIndex(3, records)
        query = np.array([0.7, 0.3, 0.1])
        expected = naive_top_k(
            ids, np.vstack([r.embedding.as_array() for r in records]), query, 3
        )
        actual = index.top_k(EmbeddingVector.from_values(query), 3)
        assert [i for i, _ in actual] == [i for i, _ in expected]
        for (_, a), (_, e) in zip(actual, expected):
            assert a == pytest.approx(e, abs=1e-12)

    def test_exactness_against_naive_sort_on_random_corpora(self):
        rng = np.random.Generator(np.random.PCG64(42))
        for trial in range(1000):
            n = int(rng.integers(1, 201))
            dim = int(rng.integers(2, 9))
            raw = rng.standard_normal((n, dim))
            ids = [f"r{trial}_{i:03d}" for i in range(n)]
            records = [_record(ids[i], raw[i]) for i in range(n)]
            index = CorpusIndex(dim, records)
            query = rng.standard_normal(dim)
            k = int(rng.integers(1, n + 2))
            expected = naive_top_k(
                ids, np.vstack([r.embedding.as_array() for r in records]), query, k
            )
            actual = index.top_k(EmbeddingVector.from_values(query), k)
            assert [i for i, _ in actual] == [i for i, _ in expected]

    def test_ranking_invariant_under_query_scaling(self):
        rng = np.random.Generator(np.random.PCG64(7))
        records = [_record(f"r{i}", rng.standard_normal(5)) for i in range(50)]
        index = CorpusIndex(5, records)
        base = rng.standard_normal(5)
        ranking = [i for i, _ in index.top_k(EmbeddingVector.from_values(base), 50)]
        for scale in (0.25, 3.0, 1e6):
            scaled = [i for i, _ in index.top_k(EmbeddingVector.from_values(base * scale), 50)]
            assert scaled == ranking

    def test_ties_break_by_ascending_id(self):
        records = [_record("zz", [1, 0]), _record("aa", [1, 0]), _record("mm", [0, 1])]
        index = CorpusIndex(2, records)
        hits = index.top_k(EmbeddingVector.from_values([1, 0]), 3)
        assert [i for i, _ in hits[:2]] == ["aa", "zz"]

    def test_k_larger_than_corpus_returns_all(self):
        index = CorpusIndex(2, [_record("a", [1, 0])])
        assert len(index.top_k(EmbeddingVector.from_values([1, 1]), 10)) == 1

    def test_query_dim_checked(self):
        index = CorpusIndex(2, [_record("a", [1, 0])])
        with pytest.raises(DimensionMismatchError):
            index.top_k(EmbeddingVector.from_values([1, 0, 0]), 1)

    def test_missing_record_lookup(self):
        index = CorpusIndex(2, [_record("a", [1, 0])])
        with pytest.raises(NotFoundError):
            index.get("nope")


class TestDedupUnion:
    def test_first_seen_order(self):
        assert dedup_union([["a", "b"], ["b", "c"]]) == ["a", "b", "c"]

    def test_empty(self):
        assert dedup_union([]) == []

    def test_repeats(self):
        assert dedup_union([["a"], ["a"], ["a"]]) == ["a"]


class TestRecordInvariants:
    def test_non_unit_embedding_rejected(self):
        vec = EmbeddingVector(values=(0.5, 0.5), dim=2)  # norm ~0.707
        with pytest.raises(PreconditionError):
            ImageRecord(id="a", uri="u", embedding=vec)

    def test_empty_id_rejected(self):
        with pytest.raises(PreconditionError):
            ImageRecord(id="", uri="u", embedding=None)
