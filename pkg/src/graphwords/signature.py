"""Bag-of-graph-words signatures, early fusion and L1 comparison."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cdk import CdkParams, cross_dissimilarities
from .codebook import CentroidDictionary, Dictionary, nearest_centroid
from .graphs import GraphFeature


@dataclass
class Signature:
    image_id: str
    blocks: list[tuple[str, np.ndarray]]

    @property
    def tags(self) -> list[str]:
        return [t for t, _ in self.blocks]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([v for _, v in self.blocks])

    def structure(self) -> list[tuple[str, int]]:
        return [(t, len(v)) for t, v in self.blocks]

    def select(self, tags: Sequence[str]) -> "Signature":
        by_tag = dict(self.blocks)
        missing = [t for t in tags if t not in by_tag]
        if missing:
            raise KeyError(f"signature {self.image_id!r} has no blocks {missing}")
        return fuse_signatures([(t, by_tag[t]) for t in tags], self.image_id)

    def to_json(self) -> dict:
        return {"image_id": self.image_id,
                "blocks": [{"tag": t, "values": v.tolist()} for t, v in self.blocks]}

    @classmethod
    def from_json(cls, doc: dict) -> "Signature":
        return cls(doc["image_id"], [(b["tag"], np.asarray(b["values"], dtype=np.float64))
                                     for b in doc["blocks"]])


def _check_layer(features: Sequence[GraphFeature], dictionary: Dictionary) -> None:
    bad = {f.layer for f in features} - {dictionary.layer}
    if bad:
        raise ValueError(f"feature layers {sorted(bad)} do not match dictionary layer {dictionary.layer}")


def assign_words(features: Sequence[GraphFeature], dictionary: Dictionary,
                 params: CdkParams = CdkParams(), workers: int = 1) -> np.ndarray:
    """Nearest word of every feature; ties go to the smaller word index."""
    _check_layer(features, dictionary)
    rho = cross_dissimilarities(features, dictionary.words, params, workers)
    return rho.argmin(axis=1)


def assign_word(feature: GraphFeature, dictionary: Dictionary, params: CdkParams = CdkParams()) -> int:
    return int(assign_words([feature], dictionary, params)[0])


def histogram(assignments: np.ndarray, n_words: int) -> np.ndarray:
    if len(assignments) == 0:
        raise ValueError("no features at layer: image unencodable at this layer")
    return np.bincount(assignments, minlength=n_words).astype(np.float64) / len(assignments)


def encode_layer_signature(features: Sequence[GraphFeature], dictionary: Dictionary,
                           params: CdkParams = CdkParams(), workers: int = 1) -> np.ndarray:
    if len(features) == 0:
        raise ValueError(f"no features at layer {dictionary.layer}: image unencodable at this layer")
    return histogram(assign_words(features, dictionary, params, workers), len(dictionary))


def encode_bow_signature(descriptors: np.ndarray, dictionary: CentroidDictionary) -> np.ndarray:
    """Classical BoW histogram with squared-L2 assignment to centroids."""
    return histogram(nearest_centroid(np.asarray(descriptors, dtype=np.float64), dictionary.centroids),
                     len(dictionary))


def fuse_signatures(blocks: Sequence[tuple[str, np.ndarray]], image_id: str = "") -> Signature:
    """Concatenate blocks in the given order; blocks keep their own unit mass."""
    if not blocks:
        raise ValueError("fusion needs at least one block")
    tags = [t for t, _ in blocks]
    if len(set(tags)) != len(tags):
        raise ValueError(f"duplicate block tags: {tags}")
    return Signature(image_id, [(t, np.asarray(v, dtype=np.float64)) for t, v in blocks])


def l1_distance(a: Signature, b: Signature) -> float:
    if a.structure() != b.structure():
        raise ValueError(f"signature structure mismatch: {a.structure()} vs {b.structure()}")
    return float(np.abs(a.vector - b.vector).sum())
