"""In-process approximate nearest-neighbor index.

A navigable small-world graph over cosine similarity with a brute-force oracle
next to it. Construction is deterministic for a fixed (rng_seed, insertion
order): layer assignment comes from a seeded generator and every tie in the
search frontier breaks on insertion index.

Vectors are canonicalized to float32 on insert (that is what persistence
stores), then normalized in float64 for similarity arithmetic, so a saved and
reloaded index answers queries identically to the live one.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateRecordError, InvalidInputError

__all__ = [
    "DEFAULT_DIM",
    "HnswParams",
    "SearchHit",
    "HnswIndex",
    "cosine_similarity",
]

DEFAULT_DIM = 1536

_MAGIC = b"MEMCHNSW"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHIIIIqQqi")  # magic, version, dim, m, efc, efs, seed, count, entry, max_level


@dataclass(frozen=True)
class HnswParams:
    """Graph construction/search knobs. The only supported metric is cosine."""

    m: int = 16
    ef_construction: int = 64
    ef_search: int = 64
    metric: str = "cosine"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 2:
            raise InvalidInputError("m must be at least 2")
        if self.ef_construction < self.m:
            raise InvalidInputError("ef_construction must be at least m")
        if self.ef_search < 1:
            raise InvalidInputError("ef_search must be at least 1")
        if self.metric != "cosine":
            raise InvalidInputError(f"unsupported metric {self.metric!r}")


@dataclass(frozen=True)
class SearchHit:
    record_id: str
    similarity: float


def _as_query(vector: object, dim: int) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.shape != (dim,):
        raise InvalidInputError(f"vector has shape {arr.shape}, index needs ({dim},)")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("vector components must be finite")
    norm = float(np.linalg.norm(arr))
    if norm <= 0.0:
        raise InvalidInputError("vector must have positive norm")
    return arr / norm


def cosine_similarity(a: object, b: object) -> float:
    """Cosine similarity of two equal-length vectors with positive norm."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise InvalidInputError("cosine_similarity needs two equal-length 1-d vectors")
    return float(np.dot(_as_query(x, x.shape[0]), _as_query(y, y.shape[0])))


class HnswIndex:
    """Cosine-similarity HNSW graph with insert, search, oracle, and persistence.

    Layer 0 allows 2*m links per node and upper layers m, following the usual
    construction. Deletion is out of scope; `remove` is reserved and always
    raises until a tombstone design lands.
    """

    def __init__(self, dim: int = DEFAULT_DIM, params: HnswParams | None = None):
        if dim < 1:
            raise InvalidInputError("dim must be at least 1")
        self._dim = dim
        self._params = params or HnswParams()
        self._rng = random.Random(self._params.rng_seed)
        self._level_mult = 1.0 / math.log(self._params.m)
        self._ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self._raw = np.empty((0, dim), dtype=np.float32)
        self._unit = np.empty((0, dim), dtype=np.float64)
        self._levels: list[int] = []
        self._links: list[list[list[int]]] = []  # node -> layer -> neighbor indices
        self._entry = -1
        self._max_level = -1

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def params(self) -> HnswParams:
        return self._params

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._id_to_idx

    def record_ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    def _grow(self, unit: np.ndarray, raw: np.ndarray) -> int:
        idx = len(self._ids)
        if idx == self._raw.shape[0]:
            cap = max(16, self._raw.shape[0] * 2)
            self._raw = np.resize(self._raw, (cap, self._dim))
            self._unit = np.resize(self._unit, (cap, self._dim))
        self._raw[idx] = raw
        self._unit[idx] = unit
        return idx

    def _draw_level(self) -> int:
        # random() lives in [0, 1); flip to (0, 1] so log never sees zero.
        u = 1.0 - self._rng.random()
        return int(-math.log(u) * self._level_mult)

    def _distances(self, q_unit: np.ndarray, idxs: list[int]) -> np.ndarray:
        return -(self._unit[idxs] @ q_unit)

    def _search_layer(self, q_unit: np.ndarray, entry_points: list[int], layer: int, ef: int) -> list[tuple[float, int]]:
        """Beam search one layer; returns up to ef (distance, idx) pairs, closest first."""
        dists = self._distances(q_unit, entry_points)
        visited = set(entry_points)
        candidates = [(float(d), i) for d, i in zip(dists, entry_points)]
        heapq.heapify(candidates)
        best = [(-d, i) for d, i in candidates]  # max-heap on distance
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)
        while candidates:
            dist, idx = heapq.heappop(candidates)
            if dist > -best[0][0] and len(best) >= ef:
                break
            fresh = [nb for nb in self._links[idx][layer] if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for nb_dist, nb in zip(self._distances(q_unit, fresh), fresh):
                nb_dist = float(nb_dist)
                if len(best) < ef or nb_dist < -best[0][0]:
                    heapq.heappush(candidates, (nb_dist, nb))
                    heapq.heappush(best, (-nb_dist, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-negd, i) for negd, i in best)

    def _select_neighbors(self, base_unit: np.ndarray, candidates: list[tuple[float, int]], limit: int) -> list[int]:
        """Diversity-aware neighbor selection.

        Keeps a candidate only if it sits closer to the base point than to any
        already-selected neighbor, then backfills with the nearest rejects.
        """
        if len(candidates) <= limit:
            return [idx for _, idx in candidates]
        selected: list[int] = []
        rejected: list[tuple[float, int]] = []
        for dist, idx in candidates:
            if len(selected) == limit:
                break
            if selected:
                to_selected = float(np.max(self._unit[selected] @ self._unit[idx]))
                if -to_selected <= dist:  # an existing neighbor is closer than the base
                    rejected.append((dist, idx))
                    continue
            selected.append(idx)
        for dist, idx in rejected:
            if len(selected) == limit:
                break
            selected.append(idx)
        return selected

    def _shrink_links(self, node: int, layer: int, cap: int) -> None:
        # Overflow trim keeps the nearest cap links (simple selection); the
        # diversity pass is reserved for the new node's own neighbor choice.
        links = self._links[node][layer]
        if len(links) <= cap:
            return
        dists = self._distances(self._unit[node], links)
        ranked = sorted((float(d), i) for d, i in zip(dists, links))
        self._links[node][layer] = [i for _, i in ranked[:cap]]

    def insert(self, record_id: str, vector: object) -> None:
        """Insert one vector under a unique id."""
        if not record_id:
            raise InvalidInputError("record_id must be non-empty")
        if record_id in self._id_to_idx:
            raise DuplicateRecordError(f"record id {record_id!r} is already indexed")
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self._dim,):
            raise InvalidInputError(f"vector has shape {arr.shape}, index needs ({self._dim},)")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("vector components must be finite")
        raw = arr.astype(np.float32)
        unit = raw.astype(np.float64)
        norm = float(np.linalg.norm(unit))
        if norm <= 0.0:
            raise InvalidInputError("vector must have positive norm (after float32 canonicalization)")
        unit /= norm

        level = self._draw_level()
        idx = self._grow(unit, raw)
        self._ids.append(record_id)
        self._id_to_idx[record_id] = idx
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])

        if self._entry < 0:
            self._entry = idx
            self._max_level = level
            return

        entry_points = [self._entry]
        for layer in range(self._max_level, level, -1):
            entry_points = [self._search_layer(unit, entry_points, layer, 1)[0][1]]

        m = self._params.m
        for layer in range(min(level, self._max_level), -1, -1):
            # Layer 0 carries a wider degree budget than the upper layers; the
            # new node links up to the full budget so recall at the default
            # beam width holds even on near-orthogonal high-dimensional data.
            cap = m * 4 if layer == 0 else m
            candidates = self._search_layer(unit, entry_points, layer, self._params.ef_construction)
            neighbors = self._select_neighbors(unit, candidates, cap)
            self._links[idx][layer] = list(neighbors)
            for nb in neighbors:
                self._links[nb][layer].append(idx)
                self._shrink_links(nb, layer, cap)
            entry_points = [i for _, i in candidates]

        if level > self._max_level:
            self._entry = idx
            self._max_level = level

    def remove(self, record_id: str) -> None:
        """Reserved for a future tombstone design; deletion is not supported."""
        raise NotImplementedError("deletion is out of scope for this index")

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def _to_hits(self, scored: list[tuple[float, int]], k: int) -> list[SearchHit]:
        ranked = sorted(((-dist, self._ids[idx]) for dist, idx in scored), key=lambda t: (-t[0], t[1]))
        return [SearchHit(record_id, similarity) for similarity, record_id in ranked[:k]]

    def search(self, query: object, k: int = 20, ef_search: int | None = None) -> list[SearchHit]:
        """Approximate top-k by cosine similarity (ties break on record id).

        With ef_search at least the index size the beam is exhaustive over the
        reachable graph and matches exact_search.
        """
        if k < 1:
            raise InvalidInputError("k must be at least 1")
        if ef_search is not None and ef_search < 1:
            raise InvalidInputError("ef_search must be at least 1")
        if not self._ids:
            return []
        q_unit = _as_query(query, self._dim)
        ef = max(ef_search if ef_search is not None else self._params.ef_search, k)
        entry_points = [self._entry]
        for layer in range(self._max_level, 0, -1):
            entry_points = [self._search_layer(q_unit, entry_points, layer, 1)[0][1]]
        found = self._search_layer(q_unit, entry_points, 0, ef)
        return self._to_hits(found, k)

    def exact_search(self, query: object, k: int = 20) -> list[SearchHit]:
        """Brute-force oracle: scans every stored vector."""
        if k < 1:
            raise InvalidInputError("k must be at least 1")
        if not self._ids:
            return []
        q_unit = _as_query(query, self._dim)
        n = len(self._ids)
        sims = self._unit[:n] @ q_unit
        ranked = sorted(zip(sims, self._ids), key=lambda t: (-t[0], t[1]))
        return [SearchHit(record_id, float(sim)) for sim, record_id in ranked[:k]]

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the index plus a JSON manifest sidecar (``<path>.manifest.json``).

        Output bytes are a pure function of (params, insertion sequence), so two
        identical builds produce identical files.
        """
        path = Path(path)
        p = self._params
        parts = [
            _HEADER.pack(
                _MAGIC,
                _FORMAT_VERSION,
                self._dim,
                p.m,
                p.ef_construction,
                p.ef_search,
                p.rng_seed,
                len(self._ids),
                self._entry,
                self._max_level,
            )
        ]
        for idx, record_id in enumerate(self._ids):
            id_bytes = record_id.encode("utf-8")
            parts.append(struct.pack("<Hi", len(id_bytes), self._levels[idx]))
            parts.append(id_bytes)
            parts.append(self._raw[idx].tobytes())
            for layer_links in self._links[idx]:
                parts.append(struct.pack("<I", len(layer_links)))
                parts.append(struct.pack(f"<{len(layer_links)}I", *layer_links))
        blob = b"".join(parts)
        path.write_bytes(blob)
        manifest = {
            "format": "memcost-hnsw",
            "version": _FORMAT_VERSION,
            "metric": p.metric,
            "dim": self._dim,
            "count": len(self._ids),
            "params": {"m": p.m, "ef_construction": p.ef_construction, "ef_search": p.ef_search, "rng_seed": p.rng_seed},
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        manifest_path = path.with_name(path.name + ".manifest.json")
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "HnswIndex":
        """Reload a saved index; searches behave exactly as before the save."""
        blob = Path(path).read_bytes()
        if len(blob) < _HEADER.size:
            raise InvalidInputError(f"{path}: truncated index file")
        magic, version, dim, m, efc, efs, seed, count, entry, max_level = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC:
            raise InvalidInputError(f"{path}: not an index file (bad magic)")
        if version != _FORMAT_VERSION:
            raise InvalidInputError(f"{path}: unsupported format version {version}")
        index = cls(dim=dim, params=HnswParams(m=m, ef_construction=efc, ef_search=efs, rng_seed=seed))
        offset = _HEADER.size
        vec_bytes = dim * 4
        for _ in range(count):
            id_len, level = struct.unpack_from("<Hi", blob, offset)
            offset += 6
            record_id = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            raw = np.frombuffer(blob, dtype=np.float32, count=dim, offset=offset).copy()
            offset += vec_bytes
            links: list[list[int]] = []
            for _layer in range(level + 1):
                (n_links,) = struct.unpack_from("<I", blob, offset)
                offset += 4
                links.append(list(struct.unpack_from(f"<{n_links}I", blob, offset)))
                offset += 4 * n_links
            idx = index._grow(_unit_from_raw(raw), raw)
            index._ids.append(record_id)
            index._id_to_idx[record_id] = idx
            index._levels.append(level)
            index._links.append(links)
        if offset != len(blob):
            raise InvalidInputError(f"{path}: trailing bytes after index payload")
        index._entry = entry
        index._max_level = max_level
        # Replay the level generator (one draw per insert) so future inserts
        # continue the same deterministic sequence.
        for _ in range(count):
            index._rng.random()
        return index


def _unit_from_raw(raw: np.ndarray) -> np.ndarray:
    unit = raw.astype(np.float64)
    norm = float(np.linalg.norm(unit))
    if norm <= 0.0:
        raise InvalidInputError("stored vector has zero norm")
    return unit / norm
