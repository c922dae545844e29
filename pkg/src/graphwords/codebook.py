"""Visual dictionaries: two-pass agglomerative clustering with median words,
and the k-means baseline over raw descriptors."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .cdk import CdkParams, pairwise_dissimilarities
from .features import DatasetManifest
from .graphs import GraphFeature

log = logging.getLogger(__name__)

DEFAULT_MEMORY_CAP = 4 * 1024 ** 3


@dataclass
class DissimilarityMatrix:
    values: np.ndarray  # float32, symmetric, zero diagonal

    @property
    def n(self) -> int:
        return self.values.shape[0]


def compute_dissimilarity_matrix(items: Sequence[GraphFeature], params: CdkParams = CdkParams(),
                                 workers: int = 1, memory_cap: int = DEFAULT_MEMORY_CAP) -> DissimilarityMatrix:
    n = len(items)
    if n == 0:
        raise ValueError("cannot build a dissimilarity matrix over zero items")
    # float64 fill buffer, float32 result, float64 working copy while clustering
    need = n * n * (8 + 4 + 8)
    if need > memory_cap:
        raise MemoryError(
            f"{n} items need ~{need / 2**20:.0f} MiB (cap {memory_cap / 2**20:.0f} MiB); "
            "lower subsample_cap to subsample features"
        )
    vals = pairwise_dissimilarities(items, params, workers).astype(np.float32)
    return DissimilarityMatrix(vals)


@dataclass
class ClusterResult:
    clusters: list[list[int]]
    linkage: list[float]  # linkage value of every merge, in merge order
    merges: list[tuple[int, int]] = field(default_factory=list)


def agglomerate(dm: DissimilarityMatrix, target_k: int) -> ClusterResult:
    """Average-linkage agglomeration down to ``target_k`` clusters.

    A cluster is named by its smallest member index and always lives in that
    row of the working matrix, so the first minimum in row-major order is the
    tie-break winner: smallest (min-member, other min-member) pair. Each row
    caches its minimum; only rows whose cached partner was merged are rescanned.
    """
    n = dm.n
    if not 1 <= target_k <= n:
        raise ValueError(f"target_k must lie in [1, {n}], got {target_k}")
    w = dm.values.astype(np.float64)
    np.fill_diagonal(w, np.inf)
    size = np.ones(n)
    members = [[i] for i in range(n)]
    alive = np.ones(n, dtype=bool)
    rmin = w.min(axis=1) if n > 1 else np.full(1, np.inf)
    rarg = w.argmin(axis=1) if n > 1 else np.zeros(1, dtype=np.int64)
    linkage, merges = [], []

    for _ in range(n - target_k):
        a = int(np.argmin(rmin))
        b = int(rarg[a])
        assert a < b and alive[b]
        linkage.append(float(rmin[a]))
        merges.append((a, b))
        row = (size[a] * w[a] + size[b] * w[b]) / (size[a] + size[b])
        row[a] = row[b] = np.inf
        w[a, :] = row
        w[:, a] = row
        w[b, :] = np.inf
        w[:, b] = np.inf
        size[a] += size[b]
        members[a].extend(members[b])
        members[b] = []
        alive[b] = False
        rmin[b], rarg[b] = np.inf, 0

        stale = alive & ((rarg == a) | (rarg == b))
        stale[a] = True
        fresh = alive & ~stale
        better = fresh & ((row < rmin) | ((row == rmin) & (a < rarg)))
        rmin[better] = row[better]
        rarg[better] = a
        idx = np.flatnonzero(stale)
        sub = w[idx]
        rmin[idx] = sub.min(axis=1)
        rarg[idx] = sub.argmin(axis=1)

    clusters = [sorted(members[i]) for i in range(n) if alive[i]]
    return ClusterResult(clusters, linkage, merges)


def agglomerative_cluster(dm: DissimilarityMatrix, target_k: int) -> list[list[int]]:
    return agglomerate(dm, target_k).clusters


def cluster_median(members: Sequence[int], dm: DissimilarityMatrix) -> int:
    """Member minimising the summed dissimilarity to the other members."""
    if len(members) == 0:
        raise ValueError("empty cluster has no median")
    idx = np.array(sorted(members), dtype=np.int64)
    sums = dm.values[np.ix_(idx, idx)].astype(np.float64).sum(axis=1)
    return int(idx[int(np.argmin(sums))])


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Dictionary:
    layer: int
    words: list[GraphFeature]
    params_hash: str
    tag: str = ""
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.words)

    def to_json(self) -> dict:
        return {
            "tag": self.tag,
            "layer": self.layer,
            "params_hash": self.params_hash,
            "metadata": self.metadata,
            "words": [dict(g.to_json(), image_id=g.source_image_id) for g in self.words],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dictionary":
        layer = int(doc["layer"])
        words = [GraphFeature.from_json(w, layer, w.get("image_id", "")) for w in doc["words"]]
        return cls(layer, words, doc["params_hash"], doc.get("tag", ""), doc.get("metadata", {}))


def stride_subsample(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return (np.arange(cap) * n) // cap


@dataclass
class FirstPass:
    """Per-category medians, pooled in (category, cluster index) order."""
    medians: list[GraphFeature]
    origin: list[tuple[str, int]]
    counts: dict


def first_pass(features: Mapping[str, Sequence[GraphFeature]], manifest: DatasetManifest, layer: int,
               first_pass_k: int = 500, params: CdkParams = CdkParams(), subsample_cap: int = 5000,
               workers: int = 1, memory_cap: int = DEFAULT_MEMORY_CAP) -> FirstPass:
    pools: dict[str, list[GraphFeature]] = {}
    for entry in manifest.images:
        if entry.role != "train":
            continue
        gs = [g for g in features.get(entry.image_id, ()) if g.layer == layer]
        pools.setdefault(entry.category, []).extend(gs)
    medians, origin, counts = [], [], {}
    for category in sorted(pools):
        pool = pools[category]
        if not pool:
            continue
        keep = stride_subsample(len(pool), subsample_cap)
        pool = [pool[i] for i in keep]
        dm = compute_dissimilarity_matrix(pool, params, workers, memory_cap)
        clusters = agglomerative_cluster(dm, min(first_pass_k, len(pool)))
        for ci, members in enumerate(clusters):
            medians.append(pool[cluster_median(members, dm)])
            origin.append((category, ci))
        counts[category] = {"features": len(pools[category]), "used": len(pool), "clusters": len(clusters)}
    if not medians:
        raise ValueError(f"no train features at layer {layer}")
    return FirstPass(medians, origin, counts)


class SecondPass:
    """Global clustering of first-pass medians; the matrix is reused across sizes."""

    def __init__(self, fp: FirstPass, params: CdkParams = CdkParams(), workers: int = 1,
                 memory_cap: int = DEFAULT_MEMORY_CAP):
        self.fp = fp
        self.dm = compute_dissimilarity_matrix(fp.medians, params, workers, memory_cap)

    def words(self, final_size: int) -> list[int]:
        n = len(self.fp.medians)
        if final_size >= n:
            if final_size > n:
                log.warning("dictionary size %d exceeds the %d available medians; keeping all", final_size, n)
            return list(range(n))
        clusters = agglomerative_cluster(self.dm, final_size)
        return sorted(cluster_median(c, self.dm) for c in clusters)


def build_dictionary_two_pass(features: Mapping[str, Sequence[GraphFeature]], manifest: DatasetManifest,
                              layer: int, first_pass_k: int = 500, final_size: int = 1000,
                              params: CdkParams = CdkParams(), *, tag: Optional[str] = None,
                              subsample_cap: int = 5000, workers: int = 1,
                              memory_cap: int = DEFAULT_MEMORY_CAP,
                              params_hash: Optional[str] = None) -> Dictionary:
    """Per-category clustering of train features, then global clustering of the medians.

    Words are ordered by (category of origin, first-pass cluster index).
    """
    if first_pass_k <= 0 or final_size <= 0:
        raise ValueError("first_pass_k and final_size must be positive")
    fp = first_pass(features, manifest, layer, first_pass_k, params, subsample_cap, workers, memory_cap)
    chosen = SecondPass(fp, params, workers, memory_cap).words(final_size)
    return assemble_dictionary(fp, chosen, layer, tag, first_pass_k, final_size, params, subsample_cap, params_hash)


def assemble_dictionary(fp: FirstPass, chosen, layer, tag, first_pass_k, final_size, params, subsample_cap, params_hash):
    build = {"layer": layer, "tag": tag or f"L{layer}", "first_pass_k": first_pass_k,
             "final_size": final_size, "alpha": params.alpha, "beta": params.beta,
             "iterations": params.iterations, "subsample_cap": subsample_cap}
    meta = {"build": build, "first_pass": fp.counts, "n_medians": len(fp.medians),
            "n_words": len(chosen), "origin": [list(fp.origin[i]) for i in chosen]}
    return Dictionary(layer, [fp.medians[i] for i in chosen], params_hash or config_hash(build),
                      tag or f"L{layer}", meta)


# ---------------------------------------------------------------------------
# k-means baseline


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = np.einsum("ij,ij->i", x, x)[:, None] + np.einsum("ij,ij->i", c, c)[None, :] - 2.0 * (x @ c.T)
    return np.maximum(d, 0.0)


def nearest_centroid(x: np.ndarray, centroids: np.ndarray, chunk: int = 8192) -> np.ndarray:
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = _sq_dists(x[s:s + chunk], centroids).argmin(axis=1)
    return out


def kmeans_baseline_dictionary(descriptors, k: int, rng_seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; empty clusters restart at the
    point farthest from its centroid."""
    x = np.asarray(descriptors, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(rng_seed)

    centres = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centres[0] = x[first]
    closest = _sq_dists(x, centres[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        else:
            pick = int(rng.integers(n))
        centres[j] = x[pick]
        closest = np.minimum(closest, _sq_dists(x, centres[j:j + 1])[:, 0])

    assign = None
    for _ in range(max_iters):
        new = nearest_centroid(x, centres)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centres)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centres[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            far = np.einsum("ij,ij->i", x - centres[assign], x - centres[assign])
            for j in empty:
                p = int(np.argmax(far))
                centres[j] = x[p]
                far[p] = -1.0
    return centres


@dataclass
class CentroidDictionary:
    tag: str
    centroids: np.ndarray
    params_hash: str
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.centroids)

    def to_json(self) -> dict:
        return {"tag": self.tag, "layer": 0, "params_hash": self.params_hash,
                "metadata": self.metadata, "centroids": self.centroids.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "CentroidDictionary":
        return cls(doc["tag"], np.asarray(doc["centroids"], dtype=np.float64),
                   doc["params_hash"], doc.get("metadata", {}))
