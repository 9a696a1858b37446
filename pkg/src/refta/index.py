"""Semantic retrieval index: dense ANN search plus a lemma-overlap filter.

The index stores L2-normalized float32 embeddings in a contiguous matrix,
a navigable small-world graph over them for approximate candidate
discovery, and an exact sidecar (the matrix itself) that answers full-pool
queries by exhaustive scan. Query semantics: over-retrieve
``candidate_pool`` candidates by cosine similarity, drop candidates whose
lemma Jaccard against the query falls below the threshold, return at most
``k`` survivors ordered by descending similarity with ties broken by
ascending segment id. No backfill below the threshold.

On-disk layout (``save_index``/``load_index``):

- ``manifest.json``: format version, dimension, embedding model id, count,
  graph parameters, SHA-256 checksums of the data files.
- ``vectors.bin``: little-endian float32, row-major.
- ``meta.jsonl``: one row per entry with ``id``, ``text``, ``lemmas``.
- ``graph.npz``: adjacency arrays per layer.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from refta import kernels
from refta.corpus import ParallelPair, SourceSegment, lemmatize
from refta.errors import IndexError_

FORMAT_VERSION = 1


def cosine_similarity(a, b) -> float:
    """Exact cosine similarity of two equal-dimension nonzero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(a @ b) / (na * nb)


def jaccard(a: frozenset, b: frozenset) -> float:
    """Set overlap |a n b| / |a u b|; 0.0 when both sets are empty."""
    if not a and not b:
        return 0.0
    inter = len(a & b)
    union = len(a) + len(b) - inter
    return inter / union


@dataclass(frozen=True)
class IndexEntry:
    segment_id: str
    embedding: np.ndarray
    lemma_set: frozenset
    text: str


@dataclass(frozen=True)
class RetrievalResult:
    entry: IndexEntry
    cosine_similarity: float
    jaccard: float


@dataclass(frozen=True)
class ExclusionList:
    """Segments barred from the index, matched by id or exact normalized text."""

    exact_texts: frozenset
    ids: frozenset

    @classmethod
    def empty(cls) -> "ExclusionList":
        return cls(exact_texts=frozenset(), ids=frozenset())

    @classmethod
    def from_pairs(cls, pairs: Iterable[ParallelPair]) -> "ExclusionList":
        texts, ids = set(), set()
        for p in pairs:
            texts.add(p.source.text)
            ids.add(p.source.id)
        return cls(exact_texts=frozenset(texts), ids=frozenset(ids))

    @classmethod
    def from_segments(cls, segments: Iterable[SourceSegment]) -> "ExclusionList":
        texts, ids = set(), set()
        for s in segments:
            texts.add(s.text)
            ids.add(s.id)
        return cls(exact_texts=frozenset(texts), ids=frozenset(ids))

    def matches(self, segment_id: str, text: str) -> bool:
        return segment_id in self.ids or text in self.exact_texts


@dataclass(frozen=True)
class HnswParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    seed: int = 0


@dataclass
class BuildReport:
    indexed: int = 0
    excluded_exact: int = 0
    excluded_near_dup: int = 0
    rows_seen: int = 0


def default_candidate_pool(k: int) -> int:
    return max(50, 10 * k)


def _normalize_vector(v, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float32).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"vector dimension {arr.shape[0]} does not match index dimension {dim}")
    arr64 = arr.astype(np.float64)
    norm = math.sqrt(float(arr64 @ arr64))
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError("zero or non-finite vector rejected")
    # divide in float64, round once to float32
    return (arr64 / norm).astype(np.float32)


class _Layer:
    """Fixed-capacity adjacency for one graph level."""

    __slots__ = ("neigh", "counts")

    def __init__(self, n: int, cap: int):
        self.neigh = np.zeros((n, cap), dtype=np.int32)
        self.counts = np.zeros(n, dtype=np.int32)

    def neighbors_of(self, node: int) -> np.ndarray:
        return self.neigh[node, : self.counts[node]]

    def set_neighbors(self, node: int, ids: Sequence[int]) -> None:
        k = len(ids)
        self.neigh[node, :k] = ids
        self.counts[node] = k

    def add_neighbor(self, node: int, other: int) -> None:
        c = self.counts[node]
        self.neigh[node, c] = other
        self.counts[node] = c + 1


class VectorIndex:
    """Immutable-after-build vector index with ANN graph and exact sidecar."""

    def __init__(
        self,
        ids: list[str],
        texts: list[str],
        lemma_sets: list[frozenset],
        vectors: np.ndarray,
        model_id: str,
        params: HnswParams,
    ):
        self._ids = ids
        self._texts = texts
        self._lemmas = lemma_sets
        self._vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.model_id = model_id
        self.params = params
        self._id_to_row = {sid: i for i, sid in enumerate(ids)}
        if len(self._id_to_row) != len(ids):
            raise IndexError_("duplicate segment ids in index")
        self._layers: list[_Layer] = []
        self._node_levels = np.zeros(len(ids), dtype=np.int32)
        self._entry_point = -1

    # -- construction -------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        ids: Sequence[str],
        texts: Sequence[str],
        lemma_sets: Sequence[frozenset],
        vectors: np.ndarray,
        model_id: str = "unknown",
        params: HnswParams | None = None,
        normalize: bool = True,
    ) -> "VectorIndex":
        params = params or HnswParams()
        n = len(ids)
        if not (len(texts) == len(lemma_sets) == n):
            raise ValueError("ids, texts, lemma_sets must have equal lengths")
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != n:
            raise ValueError("vectors must be a (n, dim) matrix")
        if normalize:
            rows = [_normalize_vector(vectors[i]) for i in range(n)]
            vectors = np.stack(rows) if rows else vectors.reshape(0, vectors.shape[1])
        idx = cls(list(ids), list(texts), list(lemma_sets), vectors, model_id, params)
        idx._build_graph()
        return idx

    @property
    def dim(self) -> int:
        return int(self._vectors.shape[1]) if self._vectors.ndim == 2 else 0

    def __len__(self) -> int:
        return len(self._ids)

    def entry(self, row: int) -> IndexEntry:
        return IndexEntry(
            segment_id=self._ids[row],
            embedding=self._vectors[row],
            lemma_set=self._lemmas[row],
            text=self._texts[row],
        )

    def _sims(self, rows: np.ndarray, query: np.ndarray) -> np.ndarray:
        # Canonical similarity used for all ranking decisions: float32 BLAS
        # dot of normalized vectors. Backend-independent.
        return self._vectors[rows] @ query

    def _assign_levels(self) -> None:
        n = len(self._ids)
        if n == 0:
            return
        rng = np.random.Generator(np.random.PCG64(self.params.seed))
        u = rng.random(n)
        ml = 1.0 / math.log(2.0)
        self._node_levels = np.minimum(
            (-np.log(u) * ml).astype(np.int32), 32
        )

    def _build_graph(self) -> None:
        n = len(self._ids)
        self._assign_levels()
        if n == 0:
            self._layers = []
            self._entry_point = -1
            return
        max_level = int(self._node_levels.max())
        m = self.params.m
        caps = [2 * m if lvl == 0 else m for lvl in range(max_level + 1)]
        # one slot of slack: bidirectional insert may briefly exceed cap
        self._layers = [_Layer(n, caps[lvl] + 1) for lvl in range(max_level + 1)]
        self._entry_point = 0
        self._max_built_level = int(self._node_levels[0])
        for i in range(1, n):
            self._insert_node(i)

    def _insert_node(self, i: int) -> None:
        q = self._vectors[i]
        level = int(self._node_levels[i])
        curr = np.array([self._entry_point], dtype=np.int64)
        top = self._max_built_level
        for lc in range(top, level, -1):
            found = self._layer_search(lc, curr, q, ef=1)
            if found.size:
                sims = self._sims(found, q)
                curr = found[np.argmax(sims)].reshape(1)
        for lc in range(min(level, top), -1, -1):
            layer = self._layers[lc]
            found = self._layer_search(lc, curr, q, ef=self.params.ef_construction)
            if found.size == 0:
                curr = np.array([self._entry_point], dtype=np.int64)
                continue
            max_conn = 2 * self.params.m if lc == 0 else self.params.m
            chosen = self._top_rows(found, q, max_conn)
            for nb in chosen:
                layer.add_neighbor(i, int(nb))
                layer.add_neighbor(int(nb), i)
                if layer.counts[nb] > max_conn:
                    self._prune(layer, int(nb), max_conn)
            curr = np.asarray(chosen, dtype=np.int64)
        if level > top:
            self._entry_point = i
            self._max_built_level = level

    def _top_rows(self, rows: np.ndarray, q: np.ndarray, limit: int) -> list[int]:
        sims = self._sims(rows, q)
        order = sorted(range(rows.size), key=lambda j: (-sims[j], rows[j]))
        return [int(rows[j]) for j in order[:limit]]

    def _prune(self, layer: _Layer, node: int, max_conn: int) -> None:
        nbrs = layer.neighbors_of(node).astype(np.int64)
        keep = self._top_rows(nbrs, self._vectors[node], max_conn)
        layer.set_neighbors(node, keep)

    def _layer_search(self, level: int, entries: np.ndarray, q: np.ndarray, ef: int) -> np.ndarray:
        layer = self._layers[level]
        return kernels.search_layer(self._vectors, layer.neigh, layer.counts, entries, q, ef)

    # -- querying -----------------------------------------------------------

    def _candidate_rows(self, qnorm: np.ndarray, pool: int) -> np.ndarray:
        n = len(self._ids)
        if pool >= n or self._entry_point < 0:
            return np.arange(n, dtype=np.int64)
        curr = np.array([self._entry_point], dtype=np.int64)
        for lc in range(self._max_built_level, 0, -1):
            found = self._layer_search(lc, curr, qnorm, ef=1)
            if found.size:
                sims = self._sims(found, qnorm)
                curr = found[np.argmax(sims)].reshape(1)
        ef = max(self.params.ef_search, pool)
        found = self._layer_search(0, curr, qnorm, ef=ef)
        if found.size <= pool:
            return found
        sims = self._sims(found, qnorm)
        order = sorted(range(found.size), key=lambda j: (-sims[j], self._ids[found[j]]))
        return found[[order[j] for j in range(pool)]]

    def query(
        self,
        query_vector,
        query_lemmas: frozenset,
        k: int,
        jaccard_threshold: float,
        candidate_pool: int | None = None,
        skip_texts: frozenset = frozenset(),
    ) -> list[RetrievalResult]:
        """Top-k filtered retrieval; see the module docstring for semantics."""
        if k < 1:
            raise ValueError("k must be >= 1")
        pool = candidate_pool if candidate_pool is not None else default_candidate_pool(k)
        if pool < k:
            raise ValueError(f"candidate_pool {pool} must be >= k {k}")
        if len(self._ids) == 0:
            return []
        qnorm = _normalize_vector(query_vector, dim=self.dim)
        rows = self._candidate_rows(qnorm, pool)
        if rows.size == 0:
            return []
        sims = np.clip(self._sims(rows, qnorm), -1.0, 1.0)
        order = sorted(range(rows.size), key=lambda j: (-sims[j], self._ids[rows[j]]))
        out: list[RetrievalResult] = []
        for j in order:
            row = int(rows[j])
            if self._texts[row] in skip_texts:
                continue
            jac = jaccard(query_lemmas, self._lemmas[row])
            if jac >= jaccard_threshold:
                out.append(RetrievalResult(
                    entry=self.entry(row),
                    cosine_similarity=float(sims[j]),
                    jaccard=jac,
                ))
                if len(out) == k:
                    break
        return out

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_index(self, path)


def build_index(
    segments: Iterable[SourceSegment],
    embedder,
    exclusions: ExclusionList | None = None,
    *,
    model_id: str | None = None,
    params: HnswParams | None = None,
    lemmatizer=None,
    near_dup_threshold: float = 0.9,
    batch_size: int | None = None,
    max_in_flight: int = 4,
) -> tuple[VectorIndex, BuildReport]:
    """Embed, lemmatize and index every non-excluded segment.

    ``embedder`` must expose ``embed(texts) -> list of vectors`` and a
    ``cfg.model_id`` (the backends client does). Embedding requests are
    issued with at most ``max_in_flight`` batches in flight. Exact-text and
    id matches against ``exclusions`` are dropped, as are near-duplicates
    whose lemma Jaccard against any excluded text reaches
    ``near_dup_threshold``.
    """
    exclusions = exclusions or ExclusionList.empty()
    params = params or HnswParams()
    report = BuildReport()

    excl_lemmas = [lemmatize(t, lemmatizer) for t in sorted(exclusions.exact_texts)]

    kept: list[SourceSegment] = []
    kept_lemmas: list[frozenset] = []
    for seg in segments:
        report.rows_seen += 1
        if exclusions.matches(seg.id, seg.text):
            report.excluded_exact += 1
            continue
        lem = lemmatize(seg.text, lemmatizer)
        if any(jaccard(lem, el) >= near_dup_threshold for el in excl_lemmas):
            report.excluded_near_dup += 1
            continue
        kept.append(seg)
        kept_lemmas.append(lem)

    resolved_model = model_id or getattr(getattr(embedder, "cfg", None), "model_id", "unknown")
    if not kept:
        empty = VectorIndex([], [], [], np.zeros((0, 0), dtype=np.float32), resolved_model, params)
        return empty, report

    if batch_size is None:
        batch_size = getattr(getattr(embedder, "cfg", None), "max_batch", 64)
    batches = [kept[i:i + batch_size] for i in range(0, len(kept), batch_size)]

    def embed_batch(batch_no: int) -> list[np.ndarray]:
        texts = [s.text for s in batches[batch_no]]
        try:
            return embedder.embed(texts)
        except Exception as exc:
            raise IndexError_(f"embedding batch {batch_no} failed: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(embed_batch, range(len(batches))))

    vectors: list[np.ndarray] = []
    dim = None
    for batch_no, vecs in enumerate(results):
        for v in vecs:
            arr = np.asarray(v, dtype=np.float32).reshape(-1)
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise IndexError_(
                    f"dimension drift in batch {batch_no}: got {arr.shape[0]}, expected {dim}"
                )
            vectors.append(arr)

    matrix = np.stack(vectors)
    index = VectorIndex.from_arrays(
        [s.id for s in kept],
        [s.text for s in kept],
        kept_lemmas,
        matrix,
        model_id=resolved_model,
        params=params,
    )
    report.indexed = len(kept)
    return index, report


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_index(index: VectorIndex, path: str | Path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    vec_path = out / "vectors.bin"
    vec_path.write_bytes(index._vectors.astype("<f4").tobytes(order="C"))

    meta_path = out / "meta.jsonl"
    with meta_path.open("w", encoding="utf-8", newline="\n") as fh:
        for i, sid in enumerate(index._ids):
            fh.write(json.dumps(
                {"id": sid, "text": index._texts[i], "lemmas": sorted(index._lemmas[i])},
                ensure_ascii=False,
            ))
            fh.write("\n")

    graph_path = out / "graph.npz"
    arrays = {"node_levels": index._node_levels}
    for lvl, layer in enumerate(index._layers):
        arrays[f"neigh_{lvl}"] = layer.neigh
        arrays[f"counts_{lvl}"] = layer.counts
    np.savez(graph_path, **arrays)

    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": index.dim,
        "model_id": index.model_id,
        "count": len(index),
        "hnsw": {
            "m": index.params.m,
            "ef_construction": index.params.ef_construction,
            "ef_search": index.params.ef_search,
            "seed": index.params.seed,
            "entry_point": int(index._entry_point),
            "max_level": int(getattr(index, "_max_built_level", -1)),
            "n_layers": len(index._layers),
        },
        "checksums": {
            "vectors.bin": _sha256_file(vec_path),
            "meta.jsonl": _sha256_file(meta_path),
            "graph.npz": _sha256_file(graph_path),
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_index(path: str | Path) -> VectorIndex:
    src = Path(path)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise IndexError_(f"no manifest.json under {src}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise IndexError_(
            f"refusing to load index format version {version!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )

    for name, expected in manifest["checksums"].items():
        actual = _sha256_file(src / name)
        if actual != expected:
            raise IndexError_(f"checksum mismatch for {name}: file is corrupt or truncated")

    count = manifest["count"]
    dim = manifest["dim"]
    raw = np.frombuffer((src / "vectors.bin").read_bytes(), dtype="<f4")
    if raw.size != count * dim:
        raise IndexError_(
            f"vectors.bin holds {raw.size} floats, expected {count * dim}"
        )
    vectors = raw.reshape(count, dim).copy() if count else np.zeros((0, dim), dtype=np.float32)

    ids, texts, lemmas = [], [], []
    with (src / "meta.jsonl").open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            ids.append(row["id"])
            texts.append(row["text"])
            lemmas.append(frozenset(row["lemmas"]))
    if len(ids) != count:
        raise IndexError_(f"meta.jsonl holds {len(ids)} rows, expected {count}")

    h = manifest["hnsw"]
    params = HnswParams(
        m=h["m"], ef_construction=h["ef_construction"],
        ef_search=h["ef_search"], seed=h["seed"],
    )
    index = VectorIndex(ids, texts, lemmas, vectors, manifest["model_id"], params)

    graph = np.load(src / "graph.npz")
    index._node_levels = graph["node_levels"]
    index._layers = []
    for lvl in range(h["n_layers"]):
        layer = _Layer.__new__(_Layer)
        layer.neigh = np.ascontiguousarray(graph[f"neigh_{lvl}"], dtype=np.int32)
        layer.counts = np.ascontiguousarray(graph[f"counts_{lvl}"], dtype=np.int32)
        index._layers.append(layer)
    index._entry_point = h["entry_point"]
    index._max_built_level = h["max_level"]
    return index
