"""Retrieval evaluation: L1 ranking, average precision and per-category MAP."""

from __future__ import annotations

import csv
import logging
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .features import DatasetManifest
from .signature import Signature

log = logging.getLogger(__name__)

SWEEP_HEADER = ["method", "layer_set", "dict_size", "category", "map", "dataset_map"]


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]]

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]


def rank_database(query: Signature, database: Sequence[Signature]) -> RankedList:
    """Database images by ascending L1 distance to the query, ties by image id."""
    if not database:
        return RankedList(query.image_id, [])
    shape = query.structure()
    for s in database:
        if s.structure() != shape:
            raise ValueError(f"signature structure mismatch for {s.image_id!r}")
    q = query.vector
    mat = np.stack([s.vector for s in database])
    dist = np.abs(mat - q[None, :]).sum(axis=1)
    entries = sorted(zip((s.image_id for s in database), dist.tolist()), key=lambda e: (e[1], e[0]))
    return RankedList(query.image_id, entries)


def average_precision(ranked: RankedList, relevant: Iterable[str]) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("average precision needs at least one relevant item")
    missing = relevant - set(ranked.ids)
    if missing:
        raise ValueError(f"relevant items absent from ranking: {sorted(missing)[:5]}")
    # exact rational accumulation, rounded once
    hits, total = 0, Fraction(0)
    for rank, image_id in enumerate(ranked.ids, start=1):
        if image_id in relevant:
            hits += 1
            total += Fraction(hits, rank)
    return float(total / len(relevant))


def exact_mean(values: Sequence[float]) -> float:
    """Correctly rounded arithmetic mean."""
    return float(sum(map(Fraction, values), Fraction(0)) / len(values))


def chance_average_precision(n_database: int, n_relevant: int) -> float:
    """Expected AP of a uniformly random ranking."""
    if not 1 <= n_relevant <= n_database:
        raise ValueError("need 1 <= n_relevant <= n_database")
    n, r = n_database, n_relevant
    h = sum(1.0 / i for i in range(1, n + 1))
    if n == 1:
        return 1.0
    return h / n + (r - 1) * (n - h) / (n * (n - 1))


@dataclass
class EvalReport:
    per_query_ap: dict[str, float]
    per_category_map: dict[str, float]
    dataset_map: float
    config: dict = field(default_factory=dict)
    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def to_json(self, with_rankings: bool = False) -> dict:
        doc = {
            "per_query_ap": dict(sorted(self.per_query_ap.items())),
            "per_category_map": dict(sorted(self.per_category_map.items())),
            "dataset_map": self.dataset_map,
            "config": self.config,
        }
        if with_rankings:
            doc["rankings"] = {q: [[i, d] for i, d in r] for q, r in sorted(self.rankings.items())}
        return doc


def evaluate_map(test_sigs: Sequence[Signature], train_sigs: Sequence[Signature],
                 manifest: DatasetManifest, config: Optional[Mapping] = None) -> EvalReport:
    """Per-category MAP over test queries and their unweighted mean."""
    category = manifest.category_of()
    by_cat: dict[str, list[str]] = {}
    for s in train_sigs:
        by_cat.setdefault(category[s.image_id], []).append(s.image_id)

    aps: dict[str, float] = {}
    rankings = {}
    per_cat: dict[str, list[float]] = {}
    for q in sorted(test_sigs, key=lambda s: s.image_id):
        ranked = rank_database(q, train_sigs)
        cat = category[q.image_id]
        relevant = by_cat.get(cat, [])
        ap = average_precision(ranked, relevant) if relevant else 0.0
        aps[q.image_id] = ap
        rankings[q.image_id] = ranked.entries
        per_cat.setdefault(cat, []).append(ap)

    maps = {c: exact_mean(v) for c, v in sorted(per_cat.items())}
    for c in manifest.categories():
        if c not in maps:
            log.warning("category %r has no test queries; excluded from the dataset mean", c)
    dataset_map = exact_mean(list(maps.values())) if maps else float("nan")
    return EvalReport(aps, maps, dataset_map, dict(config or {}), rankings)


def sweep_rows(method: str, layer_set: str, dict_size: int, report: EvalReport) -> list[list]:
    rows = [[method, layer_set, dict_size, c, m, report.dataset_map]
            for c, m in sorted(report.per_category_map.items())]
    rows.append([method, layer_set, dict_size, "ALL", report.dataset_map, report.dataset_map])
    return rows


def write_sweep_csv(rows: Iterable[Sequence], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
