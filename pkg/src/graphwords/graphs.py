"""Nested local Delaunay graphs built around high-response seed keypoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .delaunay import delaunay_triangulate
from .features import ImageFeatures, Keypoint

LAYERS = (0, 3, 6, 9)


class InsufficientPoints(Exception):
    """Too few keypoints to collect the requested neighbourhood."""


@dataclass(eq=False)
class GraphFeature:
    layer: int
    seed: int
    nodes: np.ndarray  # (layer + 1, D); seed first, then neighbours by distance
    edges: tuple[tuple[int, int], ...]
    source_image_id: str = ""
    indices: tuple[int, ...] = ()  # keypoint index of every node
    _key: Optional[bytes] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def sort_key(self) -> bytes:
        """Total order over graphs by content (descriptors, then edges)."""
        if self._key is None:
            edge_bytes = np.asarray(self.edges, dtype=np.int64).tobytes()
            self._key = np.ascontiguousarray(self.nodes).tobytes() + b"|" + edge_bytes
        return self._key

    def adjacency(self) -> np.ndarray:
        t = np.zeros((self.n_nodes, self.n_nodes))
        for a, b in self.edges:
            t[a, b] = t[b, a] = 1.0
        return t

    def to_json(self) -> dict:
        return {
            "seed": int(self.seed),
            "indices": [int(i) for i in self.indices],
            "nodes": self.nodes.tolist(),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_json(cls, doc: dict, layer: int, source_image_id: str = "") -> "GraphFeature":
        nodes = np.asarray(doc["nodes"], dtype=np.float64).reshape(len(doc["nodes"]), -1)
        edges = tuple(sorted((int(a), int(b)) for a, b in doc["edges"]))
        if nodes.shape[0] != layer + 1:
            raise ValueError(f"layer {layer} graph must have {layer + 1} nodes, got {nodes.shape[0]}")
        return cls(layer, int(doc["seed"]), nodes, edges, source_image_id,
                   tuple(int(i) for i in doc.get("indices", ())))


def select_seeds(keypoints: Sequence[Keypoint], n_seeds: int) -> list[int]:
    """Indices of the ``n_seeds`` highest-response keypoints, ties to lower index."""
    if len(keypoints) == 0:
        raise ValueError("image has no features")
    if n_seeds <= 0:
        raise ValueError("n_seeds must be positive")
    resp = np.array([k.response for k in keypoints], dtype=np.float64)
    order = np.lexsort((np.arange(len(resp)), -resp))
    return order[:n_seeds].tolist()


def _neighbour_order(pos: np.ndarray, seed: int, candidates: np.ndarray) -> np.ndarray:
    d = pos[candidates] - pos[seed]
    dist = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
    return candidates[np.lexsort((candidates, dist))]


def find_neighbors(keypoints: Sequence[Keypoint], seed_index: int, k: int) -> list[int]:
    """The ``k`` keypoints spatially closest to the seed, by (distance, index)."""
    if len(keypoints) < k + 1:
        raise InsufficientPoints(f"need {k + 1} keypoints, image has {len(keypoints)}")
    pos = np.array([(p.x, p.y) for p in keypoints], dtype=np.float64)
    cand = np.array([i for i in range(len(keypoints)) if i != seed_index], dtype=np.int64)
    return _neighbour_order(pos, seed_index, cand)[:k].tolist()


@dataclass
class BuildLog:
    image_id: str
    n_keypoints: int
    n_duplicates_collapsed: int
    n_seeds: int
    skipped: dict[int, int]
    produced: dict[int, int]

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "n_keypoints": self.n_keypoints,
            "n_duplicates_collapsed": self.n_duplicates_collapsed,
            "n_seeds": self.n_seeds,
            "skipped": {str(k): v for k, v in self.skipped.items()},
            "produced": {str(k): v for k, v in self.produced.items()},
        }


def build_graph_layers(
    image: ImageFeatures, n_seeds: int = 300, layers: Sequence[int] = LAYERS
) -> tuple[dict[int, list[GraphFeature]], BuildLog]:
    """Build the nested graph features of one image.

    Keypoints sharing a position are collapsed onto the lowest index first.
    A seed without enough neighbours for a layer produces no graph there.
    """
    layers = sorted(set(layers))
    if any(l < 0 for l in layers):
        raise ValueError(f"invalid layer set {layers}")
    kps = image.keypoints
    if not kps:
        raise ValueError(f"image {image.image_id!r} has no features")
    pos, _, desc = image.arrays()

    keep = []
    seen = set()
    for i in range(len(kps)):
        p = (pos[i, 0], pos[i, 1])
        if p not in seen:
            seen.add(p)
            keep.append(i)
    keep_arr = np.array(keep, dtype=np.int64)
    seeds = [keep[i] for i in select_seeds([kps[i] for i in keep], n_seeds)]

    kmax = max(layers)
    out: dict[int, list[GraphFeature]] = {l: [] for l in layers}
    skipped = {l: 0 for l in layers}
    for s in seeds:
        ranked = _neighbour_order(pos, s, keep_arr[keep_arr != s])[:kmax]
        for l in layers:
            if len(ranked) < l:
                skipped[l] += 1
                continue
            node_idx = [s] + ranked[:l].tolist()
            if l == 0:
                edges: tuple = ()
            else:
                edges = tuple(sorted(delaunay_triangulate(pos[node_idx])))
            out[l].append(GraphFeature(l, s, desc[node_idx], edges, image.image_id, tuple(node_idx)))
    log = BuildLog(image.image_id, len(kps), len(kps) - len(keep), len(seeds), skipped,
                   {l: len(v) for l, v in out.items()})
    return out, log


def write_graph_file(path, image_id: str, graphs: dict[int, list[GraphFeature]], extra: Optional[dict] = None) -> None:
    doc = {"image_id": image_id}
    if extra:
        doc.update(extra)
    doc["layers"] = {str(l): [g.to_json() for g in gs] for l, gs in sorted(graphs.items())}
    Path(path).write_text(json.dumps(doc))


def read_graph_file(path) -> tuple[str, dict[int, list[GraphFeature]], dict]:
    doc = json.loads(Path(path).read_text())
    image_id = doc["image_id"]
    graphs = {int(l): [GraphFeature.from_json(g, int(l), image_id) for g in gs]
              for l, gs in doc["layers"].items()}
    meta = {k: v for k, v in doc.items() if k not in ("layers", "image_id")}
    return image_id, graphs, meta


def selected_from_graphs(graphs: Sequence[GraphFeature]) -> list[GraphFeature]:
    """Single-node features for every keypoint used by ``graphs``, in index order."""
    found: dict[int, tuple[np.ndarray, str]] = {}
    for g in graphs:
        for row, i in enumerate(g.indices):
            if i not in found:
                found[i] = (g.nodes[row:row + 1], g.source_image_id)
    return [GraphFeature(0, i, found[i][0], (), found[i][1], (i,)) for i in sorted(found)]
