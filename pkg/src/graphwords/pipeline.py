"""Workspace-backed pipeline stages shared by the CLI and the end-to-end tests.

Layout under the workspace root::

    features/  manifest.json + normalised keypoint files
    graphs/    <image>.json graph files and <image>.log.json build logs
    dicts/     <tag>.json dictionaries
    sigs/      <image>.json signatures
    reports/   report.json, sweep.csv
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .codebook import (CentroidDictionary, Dictionary, FirstPass, SecondPass, assemble_dictionary,
                       first_pass, kmeans_baseline_dictionary)
from .config import PipelineConfig, dicts_hash, graphs_hash
from .evaluation import EvalReport, evaluate_map, rank_database, sweep_rows, write_sweep_csv
from .features import (DatasetManifest, ImageEntry, SyntheticSpec, generate_synthetic_dataset,
                       load_image, load_manifest, write_keypoints, write_manifest)
from .graphs import (GraphFeature, build_graph_layers, read_graph_file, selected_from_graphs,
                     write_graph_file)
from .signature import (Signature, encode_bow_signature, encode_layer_signature, fuse_signatures)

log = logging.getLogger(__name__)


class StaleArtifactError(RuntimeError):
    """Staged artifacts were produced under a different configuration."""


class PipelineError(RuntimeError):
    pass


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc) + "\n")


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def features(self) -> Path:
        return self.root / "features"

    @property
    def graphs(self) -> Path:
        return self.root / "graphs"

    @property
    def dicts(self) -> Path:
        return self.root / "dicts"

    @property
    def sigs(self) -> Path:
        return self.root / "sigs"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def manifest_path(self) -> Path:
        return self.features / "manifest.json"

    def ensure(self) -> None:
        for d in (self.features, self.graphs, self.dicts, self.sigs, self.reports):
            d.mkdir(parents=True, exist_ok=True)

    def manifest(self) -> DatasetManifest:
        if not self.manifest_path.is_file():
            raise PipelineError(f"no features in workspace {self.root} (run ingest or synth first)")
        return load_manifest(self.manifest_path)

    def features_digest(self) -> str:
        return hashlib.sha256(self.manifest_path.read_bytes()).hexdigest()[:16]

    def graph_path(self, image_id: str) -> Path:
        return self.graphs / f"{_safe(image_id)}.json"

    def sig_path(self, image_id: str) -> Path:
        return self.sigs / f"{_safe(image_id)}.json"

    def dict_path(self, tag: str) -> Path:
        return self.dicts / f"{_safe(tag)}.json"


# ---------------------------------------------------------------------------
# methods and block tags


def needs_bow(cfg: PipelineConfig) -> bool:
    return cfg.baseline or cfg.fusion == "kmeans-baseline"


def block_tags(cfg: PipelineConfig) -> list[str]:
    tags = [f"L{l}" for l in cfg.layers]
    tags += [f"SURF{l}NN" for l in cfg.layers if l > 0]
    if needs_bow(cfg):
        tags.append("BOW")
    return tags


def tag_layer(tag: str) -> int:
    return int(tag[1:]) if tag.startswith("L") else 0


def methods(cfg: PipelineConfig) -> list[tuple[str, str, list[str]]]:
    """(name, layer_set, block tags) of every evaluated configuration."""
    out = [(f"L{l}", str(l), [f"L{l}"]) for l in cfg.layers]
    out += [(f"SURF{l}NN", "0", [f"SURF{l}NN"]) for l in cfg.layers if l > 0]
    if needs_bow(cfg):
        out.append(("BOW", "0", ["BOW"]))
    glayers = [l for l in cfg.layers if l > 0]
    for i in range(1, len(glayers) + 1):
        used = glayers[:i]
        tags = [f"L{l}" for l in used]
        if 0 in cfg.layers:
            tags = [f"SURF{used[-1]}NN" if cfg.fusion == "selected-surf" else "BOW"] + tags
            used = [0] + used
        elif i < 2:
            continue
        ls = "+".join(str(l) for l in used)
        out.append((f"FUSED_{ls}", ls, tags))
    return out


def default_method(cfg: PipelineConfig) -> str:
    return methods(cfg)[-1][0]


def tag_features(tag: str, graphs: dict[int, list[GraphFeature]]) -> list[GraphFeature]:
    if tag.startswith("SURF"):
        return selected_from_graphs(graphs.get(int(tag[4:-2]), []))
    return graphs.get(tag_layer(tag), [])


# ---------------------------------------------------------------------------
# stages


def stage_ingest(ws: Workspace, manifest_path, cfg: PipelineConfig) -> DatasetManifest:
    """Validate an external manifest and copy normalised, bbox-filtered features in."""
    ws.ensure()
    src = load_manifest(manifest_path)
    entries = []
    for e in src.images:
        img = load_image(e, src.descriptor_dim)
        dest = ws.features / f"{_safe(e.image_id)}.jsonl"
        write_keypoints(img.keypoints, dest)
        entries.append(ImageEntry(e.image_id, e.category, e.role, dest, e.bbox))
    manifest = DatasetManifest(src.descriptor_dim, entries)
    write_manifest(manifest, ws.manifest_path)
    log.info("ingested %d images", len(entries))
    return manifest


def stage_synth(ws: Workspace, spec: SyntheticSpec, rng_seed: int) -> DatasetManifest:
    ws.ensure()
    return generate_synthetic_dataset(spec, rng_seed, ws.features)


def _graph_job(args):
    entry, dim, n_seeds, layers, path, extra = args
    img = load_image(entry, dim)
    graphs, blog = build_graph_layers(img, n_seeds, layers)
    write_graph_file(path, entry.image_id, graphs, extra)
    doc = blog.to_json()
    doc["config_hash"] = extra["config_hash"]
    _dump(Path(str(path)[: -len(".json")] + ".log.json"), doc)
    return blog.skipped


def stage_graphs(ws: Workspace, cfg: PipelineConfig) -> dict:
    ws.ensure()
    manifest = ws.manifest()
    h = graphs_hash(cfg, ws.features_digest())
    extra = {"config_hash": h, "config": cfg.echo()}
    jobs = [(e, manifest.descriptor_dim, cfg.n_seeds, cfg.layers, ws.graph_path(e.image_id), extra)
            for e in manifest.images]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_graph_job, jobs))
    else:
        results = [_graph_job(j) for j in jobs]
    totals = {str(l): sum(r[l] for r in results) for l in cfg.layers}
    log.info("built graphs for %d images; skipped seeds per layer: %s", len(jobs), totals)
    return totals


def _load_graphs(ws: Workspace, cfg: PipelineConfig, entries: Sequence[ImageEntry]) -> dict[str, dict]:
    expected = graphs_hash(cfg, ws.features_digest())
    out = {}
    for e in entries:
        path = ws.graph_path(e.image_id)
        if not path.is_file():
            raise PipelineError(f"missing graph file {path} (run graphs first)")
        _, graphs, meta = read_graph_file(path)
        if meta.get("config_hash") != expected:
            raise StaleArtifactError(
                f"{path} was built under config {meta.get('config_hash')}, current is {expected}; rerun graphs"
            )
        out[e.image_id] = graphs
    return out


class DictionaryBuilder:
    """Builds every block dictionary; first passes and median matrices are cached across sizes."""

    def __init__(self, ws: Workspace, cfg: PipelineConfig):
        self.ws, self.cfg = ws, cfg
        self.manifest = ws.manifest()
        self.graphs = _load_graphs(ws, cfg, self.manifest.by_role("train"))
        self.ghash = graphs_hash(cfg, ws.features_digest())
        self._second: dict[str, SecondPass] = {}
        self._bow_x: Optional[np.ndarray] = None

    def _second_pass(self, tag: str) -> SecondPass:
        if tag not in self._second:
            cfg = self.cfg
            feats = {iid: tag_features(tag, g) for iid, g in self.graphs.items()}
            fp: FirstPass = first_pass(feats, self.manifest, tag_layer(tag), cfg.first_pass_k, cfg.cdk,
                                       cfg.subsample_cap, cfg.workers, cfg.memory_cap)
            self._second[tag] = SecondPass(fp, cfg.cdk, cfg.workers, cfg.memory_cap)
        return self._second[tag]

    def _bow_descriptors(self) -> np.ndarray:
        if self._bow_x is None:
            parts = [load_image(e, self.manifest.descriptor_dim).arrays()[2]
                     for e in self.manifest.by_role("train")]
            self._bow_x = np.vstack([p for p in parts if p.size])
        return self._bow_x

    def build(self, tag: str, size: int, params_hash: str):
        cfg = self.cfg
        if tag == "BOW":
            x = self._bow_descriptors()
            k = min(size, len(x))
            if k < size:
                log.warning("BOW size %d exceeds %d train descriptors; using %d", size, len(x), k)
            cents = kmeans_baseline_dictionary(x, k, cfg.rng_seed, cfg.kmeans_max_iters)
            meta = {"build": {"k": k, "requested": size, "rng_seed": cfg.rng_seed,
                              "max_iters": cfg.kmeans_max_iters}, "n_descriptors": len(x)}
            return CentroidDictionary("BOW", cents, params_hash, meta)
        sp = self._second_pass(tag)
        chosen = sp.words(size)
        return assemble_dictionary(sp.fp, chosen, tag_layer(tag), tag, cfg.first_pass_k, size, cfg.cdk,
                         cfg.subsample_cap, params_hash)


def stage_dicts(ws: Workspace, cfg: PipelineConfig) -> dict:
    ws.ensure()
    builder = DictionaryBuilder(ws, cfg)
    h = dicts_hash(cfg, builder.ghash)
    sizes = {}
    for tag in block_tags(cfg):
        d = builder.build(tag, cfg.size_for(tag), h)
        doc = d.to_json()
        doc["config_hash"] = h
        doc["config"] = cfg.echo()
        _dump(ws.dict_path(tag), doc)
        sizes[tag] = len(d)
        log.info("dictionary %s: %d words", tag, len(d))
    return sizes


def _load_dicts(ws: Workspace, cfg: PipelineConfig) -> dict:
    expected = dicts_hash(cfg, graphs_hash(cfg, ws.features_digest()))
    out = {}
    for tag in block_tags(cfg):
        path = ws.dict_path(tag)
        if not path.is_file():
            raise PipelineError(f"missing dictionary {path} (run dict first)")
        doc = json.loads(path.read_text())
        if doc.get("config_hash") != expected:
            raise StaleArtifactError(
                f"{path} was built under config {doc.get('config_hash')}, current is {expected}; rerun dict"
            )
        out[tag] = CentroidDictionary.from_json(doc) if tag == "BOW" else Dictionary.from_json(doc)
    return out


def encode_image(graphs: dict[int, list[GraphFeature]], entry: ImageEntry, dim: int, dicts: dict,
                 cfg: PipelineConfig) -> Signature:
    blocks = []
    for tag, d in dicts.items():
        if tag == "BOW":
            desc = load_image(entry, dim).arrays()[2]
            if len(desc) == 0:
                raise ValueError(f"image {entry.image_id!r} has no features: unencodable for BOW")
            blocks.append((tag, encode_bow_signature(desc, d)))
        else:
            feats = tag_features(tag, graphs)
            if not feats:
                raise ValueError(f"image {entry.image_id!r}: no features at {tag}, image unencodable at this layer")
            blocks.append((tag, encode_layer_signature(feats, d, cfg.cdk, cfg.workers)))
    return fuse_signatures(blocks, entry.image_id)


def encode_all(ws: Workspace, cfg: PipelineConfig, dicts: dict, graphs: dict[str, dict],
               manifest: DatasetManifest) -> dict[str, Signature]:
    sigs, failed = {}, []
    for e in manifest.images:
        try:
            sigs[e.image_id] = encode_image(graphs[e.image_id], e, manifest.descriptor_dim, dicts, cfg)
        except ValueError as exc:
            if cfg.on_unencodable == "error":
                raise PipelineError(str(exc)) from exc
            log.warning("skipping %s", exc)
            failed.append(e.image_id)
    return sigs


def stage_encode(ws: Workspace, cfg: PipelineConfig) -> int:
    ws.ensure()
    manifest = ws.manifest()
    dicts = _load_dicts(ws, cfg)
    graphs = _load_graphs(ws, cfg, manifest.images)
    h = dicts_hash(cfg, graphs_hash(cfg, ws.features_digest()))
    sigs = encode_all(ws, cfg, dicts, graphs, manifest)
    for iid, s in sigs.items():
        doc = s.to_json()
        doc["config_hash"] = h
        _dump(ws.sig_path(iid), doc)
    return len(sigs)


def _load_sigs(ws: Workspace, cfg: PipelineConfig, manifest: DatasetManifest) -> dict[str, Signature]:
    expected = dicts_hash(cfg, graphs_hash(cfg, ws.features_digest()))
    out = {}
    for e in manifest.images:
        path = ws.sig_path(e.image_id)
        if not path.is_file():
            if cfg.on_unencodable == "skip":
                continue
            raise PipelineError(f"missing signature {path} (run encode first)")
        doc = json.loads(path.read_text())
        if doc.get("config_hash") != expected:
            raise StaleArtifactError(f"{path} was encoded under config {doc.get('config_hash')}, current is {expected}")
        out[e.image_id] = Signature.from_json(doc)
    return out


def evaluate_methods(sigs: dict[str, Signature], manifest: DatasetManifest, cfg: PipelineConfig,
                     ) -> dict[str, tuple[str, EvalReport]]:
    train = [sigs[e.image_id] for e in manifest.by_role("train") if e.image_id in sigs]
    test = [sigs[e.image_id] for e in manifest.by_role("test") if e.image_id in sigs]
    out = {}
    for name, layer_set, tags in methods(cfg):
        rep = evaluate_map([s.select(tags) for s in test], [s.select(tags) for s in train], manifest,
                           {"method": name, "blocks": tags})
        out[name] = (layer_set, rep)
    return out


def _report_doc(results, cfg: PipelineConfig, h: str, dict_size: int) -> dict:
    return {
        "config_hash": h,
        "config": cfg.echo(),
        "dict_size": dict_size,
        "methods": {name: dict(rep.to_json(), layer_set=ls) for name, (ls, rep) in results.items()},
    }


def stage_eval(ws: Workspace, cfg: PipelineConfig) -> dict[str, float]:
    ws.ensure()
    manifest = ws.manifest()
    sigs = _load_sigs(ws, cfg, manifest)
    h = dicts_hash(cfg, graphs_hash(cfg, ws.features_digest()))
    results = evaluate_methods(sigs, manifest, cfg)
    _dump(ws.reports / "report.json", _report_doc(results, cfg, h, cfg.dict_size))
    rows = []
    for name, (ls, rep) in results.items():
        rows += sweep_rows(name, ls, cfg.dict_size, rep)
    write_sweep_csv(rows, ws.reports / "sweep.csv")
    return {name: rep.dataset_map for name, (_, rep) in results.items()}


def run_sweep(ws: Workspace, cfg: PipelineConfig, sizes: Optional[Sequence[int]] = None) -> list[list]:
    """Rebuild dictionaries, re-encode and re-evaluate for every dictionary size."""
    ws.ensure()
    sizes = list(sizes or cfg.sweep_sizes)
    builder = DictionaryBuilder(ws, cfg)
    manifest = builder.manifest
    graphs = _load_graphs(ws, cfg, manifest.images)
    rows = []
    for size in sizes:
        h = dicts_hash(cfg, builder.ghash) + f"@{size}"
        dicts = {tag: builder.build(tag, size, h) for tag in block_tags(cfg)}
        sigs = encode_all(ws, cfg, dicts, graphs, manifest)
        results = evaluate_methods(sigs, manifest, cfg)
        _dump(ws.reports / f"sweep_report_{size}.json", _report_doc(results, cfg, h, size))
        for name, (ls, rep) in results.items():
            rows += sweep_rows(name, ls, size, rep)
        log.info("sweep size %d: %s", size, {n: round(r.dataset_map, 4) for n, (_, r) in results.items()})
    write_sweep_csv(rows, ws.reports / "sweep.csv")
    return rows


def query(ws: Workspace, cfg: PipelineConfig, image_id: str, topk: int = 10,
          method: Optional[str] = None) -> list[tuple[int, str, float]]:
    manifest = ws.manifest()
    if image_id not in manifest.category_of():
        raise PipelineError(f"unknown image id {image_id!r}")
    sigs = _load_sigs(ws, cfg, manifest)
    table = {name: tags for name, _, tags in methods(cfg)}
    method = method or default_method(cfg)
    if method not in table:
        raise PipelineError(f"unknown method {method!r}; choose from {sorted(table)}")
    tags = table[method]
    if image_id not in sigs:
        raise PipelineError(f"no signature for {image_id!r}")
    db = [sigs[e.image_id].select(tags) for e in manifest.by_role("train")
          if e.image_id in sigs and e.image_id != image_id]
    ranked = rank_database(sigs[image_id].select(tags), db)
    return [(r, iid, d) for r, (iid, d) in enumerate(ranked.entries[:topk], start=1)]
