"""Tests for the HNSW index.

Covers: parameter validation, insert/search basics, tie-breaking, the
brute-force oracle, exhaustive-beam equivalence, determinism of construction
and persistence, save/load round-trips with manifest checking, and a recall
floor on random data.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from memcost.errors import DuplicateRecordError, InvalidInputError
from memcost.vector_index import HnswIndex, HnswParams, SearchHit, cosine_similarity

SMALL_PARAMS = HnswParams(m=4, ef_construction=16, ef_search=16)


def random_vectors(n: int, dim: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, dim))


def build_index(vectors: np.ndarray, params: HnswParams = SMALL_PARAMS) -> HnswIndex:
    index = HnswIndex(dim=vectors.shape[1], params=params)
    for i, vec in enumerate(vectors):
        index.insert(f"v{i:04d}", vec)
    return index


# ---------------------------------------------------------------------------
# Parameters and validation
# ---------------------------------------------------------------------------


class TestHnswParams:
    """Constructor validation."""

    def test_defaults(self) -> None:
        params = HnswParams()
        assert (params.m, params.ef_construction, params.ef_search) == (16, 64, 64)
        assert params.metric == "cosine"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"m": 1},
            {"m": 8, "ef_construction": 7},
            {"ef_search": 0},
            {"metric": "euclidean"},
        ],
    )
    def test_invalid(self, kwargs: dict) -> None:
        with pytest.raises(InvalidInputError):
            HnswParams(**kwargs)


class TestInsertValidation:
    """Inserting vectors."""

    def test_duplicate_id(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        index.insert("a", [1.0, 0.0, 0.0])
        with pytest.raises(DuplicateRecordError):
            index.insert("a", [0.0, 1.0, 0.0])

    def test_empty_id(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.insert("", [1.0, 0.0, 0.0])

    def test_wrong_shape(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.insert("a", [1.0, 0.0])

    def test_non_finite(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.insert("a", [1.0, float("nan"), 0.0])

    def test_zero_norm(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.insert("a", [0.0, 0.0, 0.0])

    def test_norm_vanishing_in_float32(self) -> None:
        """A vector that only underflows to zero after float32 canonicalization."""
        index = HnswIndex(dim=2, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.insert("a", [1e-46, 0.0])

    def test_remove_reserved(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        index.insert("a", [1.0, 0.0, 0.0])
        with pytest.raises(NotImplementedError):
            index.remove("a")

    def test_membership_and_len(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        assert len(index) == 0
        index.insert("a", [1.0, 0.0, 0.0])
        assert len(index) == 1
        assert "a" in index
        assert "b" not in index
        assert index.record_ids() == ("a",)


# ---------------------------------------------------------------------------
# Search behavior
# ---------------------------------------------------------------------------


class TestSearch:
    """Approximate and exact top-k."""

    def test_empty_index_returns_nothing(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        assert index.search([1.0, 0.0, 0.0], k=5) == []
        assert index.exact_search([1.0, 0.0, 0.0], k=5) == []

    def test_k_must_be_positive(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        with pytest.raises(InvalidInputError):
            index.search([1.0, 0.0, 0.0], k=0)
        with pytest.raises(InvalidInputError):
            index.exact_search([1.0, 0.0, 0.0], k=0)

    def test_query_validation(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        index.insert("a", [1.0, 0.0, 0.0])
        with pytest.raises(InvalidInputError):
            index.search([1.0, 0.0], k=1)
        with pytest.raises(InvalidInputError):
            index.search([0.0, 0.0, 0.0], k=1)

    def test_nearest_of_orthogonal_basis(self) -> None:
        index = HnswIndex(dim=3, params=SMALL_PARAMS)
        index.insert("x", [1.0, 0.0, 0.0])
        index.insert("y", [0.0, 1.0, 0.0])
        index.insert("z", [0.0, 0.0, 1.0])
        hits = index.search([0.9, 0.1, 0.0], k=2)
        assert [h.record_id for h in hits] == ["x", "y"]
        assert hits[0].similarity == pytest.approx(0.9938837)

    def test_scale_invariance(self) -> None:
        """Cosine ranking ignores vector magnitude."""
        index = HnswIndex(dim=2, params=SMALL_PARAMS)
        index.insert("big", [1000.0, 0.0])
        index.insert("small", [0.001, 0.001])
        hits = index.search([1.0, 0.0001], k=2)
        assert hits[0].record_id == "big"
        assert hits[0].similarity == pytest.approx(1.0, abs=1e-4)

    def test_ties_break_on_record_id(self) -> None:
        """Identical vectors rank by ascending record id."""
        index = HnswIndex(dim=2, params=SMALL_PARAMS)
        for name in ("carrot", "apple", "banana"):
            index.insert(name, [1.0, 0.0])
        approx = [h.record_id for h in index.search([1.0, 0.0], k=3)]
        exact = [h.record_id for h in index.exact_search([1.0, 0.0], k=3)]
        assert approx == exact == ["apple", "banana", "carrot"]

    def test_k_larger_than_index(self) -> None:
        vectors = random_vectors(5, 8)
        index = build_index(vectors)
        assert len(index.search(vectors[0], k=50)) == 5

    def test_exact_search_is_true_ranking(self) -> None:
        vectors = random_vectors(64, 16, seed=3)
        index = build_index(vectors)
        query = random_vectors(1, 16, seed=99)[0]
        hits = index.exact_search(query, k=64)
        sims = [h.similarity for h in hits]
        assert sims == sorted(sims, reverse=True)
        # float32 canonicalization happens on insert, so compare against that.
        stored = vectors.astype(np.float32).astype(np.float64)
        best = max(range(64), key=lambda i: cosine_similarity(stored[i], query))
        assert hits[0].record_id == f"v{best:04d}"

    def test_exhaustive_beam_matches_oracle(self) -> None:
        """With ef_search >= n the approximate search equals the oracle."""
        vectors = random_vectors(120, 12, seed=5)
        index = build_index(vectors)
        queries = random_vectors(10, 12, seed=17)
        for query in queries:
            approx = index.search(query, k=10, ef_search=len(index))
            exact = index.exact_search(query, k=10)
            assert [h.record_id for h in approx] == [h.record_id for h in exact]

    def test_recall_floor_on_random_data(self) -> None:
        """Default parameters recover at least 90% of true neighbors here."""
        vectors = random_vectors(400, 24, seed=11)
        index = build_index(vectors, HnswParams())
        queries = random_vectors(40, 24, seed=23)
        total = hit = 0
        for query in queries:
            exact_ids = {h.record_id for h in index.exact_search(query, k=10)}
            approx_ids = {h.record_id for h in index.search(query, k=10)}
            total += len(exact_ids)
            hit += len(exact_ids & approx_ids)
        assert hit / total >= 0.90

    def test_search_hit_shape(self) -> None:
        index = HnswIndex(dim=2, params=SMALL_PARAMS)
        index.insert("a", [1.0, 0.0])
        (hit,) = index.search([1.0, 0.0], k=1)
        assert isinstance(hit, SearchHit)
        assert hit.similarity == pytest.approx(1.0)


class TestCosineSimilarity:
    """Standalone similarity helper."""

    def test_known_values(self) -> None:
        assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)
        assert cosine_similarity([1, 1], [1, 1]) == pytest.approx(1.0)
        assert cosine_similarity([1, 0], [-1, 0]) == pytest.approx(-1.0)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(InvalidInputError):
            cosine_similarity([1, 0], [1, 0, 0])


# ---------------------------------------------------------------------------
# Determinism
# ---------------------------------------------------------------------------


class TestDeterminism:
    """Identical builds answer identically."""

    def test_same_build_same_results(self) -> None:
        vectors = random_vectors(100, 10, seed=2)
        queries = random_vectors(5, 10, seed=42)
        a = build_index(vectors)
        b = build_index(vectors)
        for query in queries:
            assert a.search(query, k=7) == b.search(query, k=7)

    def test_seed_changes_graph_but_not_contract(self) -> None:
        vectors = random_vectors(60, 8, seed=4)
        a = build_index(vectors, HnswParams(m=4, ef_construction=16, ef_search=60, rng_seed=0))
        b = build_index(vectors, HnswParams(m=4, ef_construction=16, ef_search=60, rng_seed=7))
        query = random_vectors(1, 8, seed=50)[0]
        # Exhaustive beams agree regardless of the level-draw seed.
        assert a.search(query, k=5, ef_search=60) == b.search(query, k=5, ef_search=60)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class TestPersistence:
    """Binary save/load with a JSON manifest."""

    def test_round_trip_preserves_answers(self, tmp_path: Path) -> None:
        vectors = random_vectors(80, 8, seed=6)
        index = build_index(vectors)
        path = tmp_path / "vectors.idx"
        index.save(path)
        loaded = HnswIndex.load(path)
        assert len(loaded) == len(index)
        assert loaded.params == index.params
        for query in random_vectors(10, 8, seed=60):
            assert loaded.search(query, k=5) == index.search(query, k=5)

    def test_save_is_byte_deterministic(self, tmp_path: Path) -> None:
        vectors = random_vectors(50, 6, seed=8)
        a_path, b_path = tmp_path / "a.idx", tmp_path / "b.idx"
        build_index(vectors).save(a_path)
        build_index(vectors).save(b_path)
        assert a_path.read_bytes() == b_path.read_bytes()
        assert (
            (tmp_path / "a.idx.manifest.json").read_text(encoding="utf-8")
            == (tmp_path / "b.idx.manifest.json").read_text(encoding="utf-8")
        )

    def test_save_load_save_identical(self, tmp_path: Path) -> None:
        vectors = random_vectors(30, 5, seed=9)
        first = tmp_path / "first.idx"
        second = tmp_path / "second.idx"
        build_index(vectors).save(first)
        HnswIndex.load(first).save(second)
        assert first.read_bytes() == second.read_bytes()

    def test_manifest_contents(self, tmp_path: Path) -> None:
        import hashlib
        import json

        vectors = random_vectors(10, 4, seed=10)
        path = tmp_path / "small.idx"
        build_index(vectors).save(path)
        manifest = json.loads((tmp_path / "small.idx.manifest.json").read_text(encoding="utf-8"))
        assert manifest["count"] == 10
        assert manifest["dim"] == 4
        assert manifest["metric"] == "cosine"
        assert manifest["sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()

    def test_inserts_after_load_continue_the_sequence(self, tmp_path: Path) -> None:
        """Saving mid-build then continuing gives the same graph as one straight build."""
        vectors = random_vectors(40, 6, seed=12)
        straight = build_index(vectors)

        resumed = HnswIndex(dim=6, params=SMALL_PARAMS)
        for i, vec in enumerate(vectors[:20]):
            resumed.insert(f"v{i:04d}", vec)
        path = tmp_path / "half.idx"
        resumed.save(path)
        resumed = HnswIndex.load(path)
        for i, vec in enumerate(vectors[20:], start=20):
            resumed.insert(f"v{i:04d}", vec)

        final_straight = tmp_path / "straight.idx"
        final_resumed = tmp_path / "resumed.idx"
        straight.save(final_straight)
        resumed.save(final_resumed)
        assert final_straight.read_bytes() == final_resumed.read_bytes()

    def test_empty_index_round_trip(self, tmp_path: Path) -> None:
        path = tmp_path / "empty.idx"
        HnswIndex(dim=3, params=SMALL_PARAMS).save(path)
        loaded = HnswIndex.load(path)
        assert len(loaded) == 0
        assert loaded.search([1.0, 0.0, 0.0], k=3) == []

    def test_bad_magic_rejected(self, tmp_path: Path) -> None:
        path = tmp_path / "bogus.idx"
        path.write_bytes(b"NOTANIDX" + b"\x00" * 50)
        with pytest.raises(InvalidInputError):
            HnswIndex.load(path)

    def test_truncated_rejected(self, tmp_path: Path) -> None:
        path = tmp_path / "short.idx"
        path.write_bytes(b"\x01\x02")
        with pytest.raises(InvalidInputError):
            HnswIndex.load(path)

    def test_trailing_garbage_rejected(self, tmp_path: Path) -> None:
        vectors = random_vectors(5, 4, seed=13)
        path = tmp_path / "padded.idx"
        build_index(vectors).save(path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(InvalidInputError):
            HnswIndex.load(path)

    def test_unsupported_version_rejected(self, tmp_path: Path) -> None:
        vectors = random_vectors(3, 4, seed=14)
        path = tmp_path / "future.idx"
        build_index(vectors).save(path)
        blob = bytearray(path.read_bytes())
        blob[8:10] = (99).to_bytes(2, "little")  # version field follows the magic
        path.write_bytes(bytes(blob))
        with pytest.raises(InvalidInputError):
            HnswIndex.load(path)
