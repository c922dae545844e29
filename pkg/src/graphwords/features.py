"""Keypoint data model, feature-file IO and the synthetic dataset generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

ROLES = ("train", "test")

# Descriptors whose norm is already this close to 1 are kept bitwise, so that
# load -> write -> load is idempotent.
_UNIT_NORM_SLACK = 1e-12


class FeatureFormatError(ValueError):
    """A manifest or keypoint file could not be parsed."""


class ValidationError(ValueError):
    """Parsed input violates a dataset invariant."""


@dataclass
class Keypoint:
    x: float
    y: float
    response: float
    descriptor: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Keypoint):
            return NotImplemented
        return (
            self.x == other.x
            and self.y == other.y
            and self.response == other.response
            and np.array_equal(self.descriptor, other.descriptor)
        )


@dataclass
class ImageEntry:
    image_id: str
    category: str
    role: str
    features: Path
    bbox: Optional[tuple[float, float, float, float]] = None


@dataclass
class DatasetManifest:
    descriptor_dim: int
    images: list[ImageEntry]

    def by_role(self, role: str) -> list[ImageEntry]:
        return [e for e in self.images if e.role == role]

    def categories(self) -> list[str]:
        return sorted({e.category for e in self.images})

    def category_of(self) -> dict[str, str]:
        return {e.image_id: e.category for e in self.images}


@dataclass
class ImageFeatures:
    image_id: str
    category: str
    role: str
    keypoints: list[Keypoint]
    bbox: Optional[tuple[float, float, float, float]] = None
    _arrays: Optional[tuple] = field(default=None, repr=False, compare=False)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (positions (n, 2), responses (n,), descriptors (n, D))."""
        if self._arrays is None:
            kps = self.keypoints
            pos = np.array([(k.x, k.y) for k in kps], dtype=np.float64).reshape(-1, 2)
            resp = np.array([k.response for k in kps], dtype=np.float64)
            if kps:
                desc = np.stack([k.descriptor for k in kps])
            else:
                desc = np.zeros((0, 0))
            self._arrays = (pos, resp, desc)
        return self._arrays


def _parse_bbox(raw, where: str):
    if raw is None:
        return None
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValidationError(f"{where}: bbox must be [xmin, ymin, xmax, ymax]")
    try:
        box = tuple(float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bbox values must be numbers") from exc
    if not all(math.isfinite(v) for v in box) or box[0] > box[2] or box[1] > box[3]:
        raise ValidationError(f"{where}: invalid bbox {list(box)}")
    return box


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a dataset manifest.

    Relative feature paths are resolved against the manifest's directory.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise FeatureFormatError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}: {line.strip()!r}"
        ) from exc
    if not isinstance(doc, dict) or "descriptor_dim" not in doc or "images" not in doc:
        raise FeatureFormatError(f"{path}: manifest needs 'descriptor_dim' and 'images'")
    dim = doc["descriptor_dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim <= 0:
        raise ValidationError(f"{path}: descriptor_dim must be a positive integer")
    if not isinstance(doc["images"], list):
        raise FeatureFormatError(f"{path}: 'images' must be an array")

    base = path.parent
    seen: set[str] = set()
    entries = []
    for i, raw in enumerate(doc["images"]):
        where = f"{path}: images[{i}]"
        if not isinstance(raw, dict):
            raise FeatureFormatError(f"{where}: expected an object")
        for key in ("id", "category", "role", "features"):
            if key not in raw:
                raise FeatureFormatError(f"{where}: missing key {key!r}")
        image_id = str(raw["id"])
        if image_id in seen:
            raise ValidationError(f"{where}: duplicate image id {image_id!r}")
        seen.add(image_id)
        role = raw["role"]
        if role not in ROLES:
            raise ValidationError(f"{where}: unknown role {role!r}")
        feat = Path(raw["features"])
        if not feat.is_absolute():
            feat = base / feat
        if check_files and not feat.is_file():
            raise ValidationError(f"{where}: feature file not found: {feat}")
        entries.append(
            ImageEntry(image_id, str(raw["category"]), role, feat, _parse_bbox(raw.get("bbox"), where))
        )

    train_cats = {e.category for e in entries if e.role == "train"}
    missing = sorted({e.category for e in entries} - train_cats)
    if missing:
        raise ValidationError(f"{path}: categories without train images: {missing}")
    return DatasetManifest(dim, entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    images = []
    for e in manifest.images:
        feat = Path(e.features)
        try:
            feat = feat.relative_to(path.parent)
        except ValueError:
            pass
        rec = {"id": e.image_id, "category": e.category, "role": e.role, "features": feat.as_posix()}
        if e.bbox is not None:
            rec["bbox"] = list(e.bbox)
        images.append(rec)
    doc = {"descriptor_dim": manifest.descriptor_dim, "images": images}
    path.write_text(json.dumps(doc, indent=1) + "\n")


def _in_bbox(x: float, y: float, bbox) -> bool:
    return bbox[0] <= x <= bbox[2] and bbox[1] <= y <= bbox[3]


def load_keypoints(path, bbox=None, descriptor_dim: int = 64) -> list[Keypoint]:
    """Read a JSON Lines keypoint file.

    Every record is validated; records outside ``bbox`` are then dropped and
    the survivors' descriptors rescaled to unit L2 norm. File order is kept.
    """
    out = []
    with open(path) as fh:
        for index, line in enumerate(fh):
            where = f"{path}: record {index} (line {index + 1})"
            try:
                rec = json.loads(line)
                x, y, resp = float(rec["x"]), float(rec["y"]), float(rec["response"])
                desc = np.asarray(rec["desc"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FeatureFormatError(f"{where}: {exc}") from exc
            if desc.ndim != 1 or desc.shape[0] != descriptor_dim:
                raise ValidationError(
                    f"{where}: descriptor length {desc.size} != descriptor_dim {descriptor_dim}"
                )
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(resp)):
                raise ValidationError(f"{where}: non-finite position or response")
            if not np.all(np.isfinite(desc)):
                raise ValidationError(f"{where}: non-finite descriptor value")
            if resp < 0:
                raise ValidationError(f"{where}: negative response {resp}")
            norm = float(np.linalg.norm(desc))
            if norm == 0.0:
                raise ValidationError(f"{where}: zero-norm descriptor")
            if bbox is not None and not _in_bbox(x, y, bbox):
                continue
            out.append(Keypoint(x, y, resp, normalize_descriptor(desc, norm)))
    return out


def normalize_descriptor(desc: np.ndarray, norm: Optional[float] = None) -> np.ndarray:
    if norm is None:
        norm = float(np.linalg.norm(desc))
    if not norm > 0 or not np.isfinite(norm):
        raise ValidationError(f"descriptor norm {norm} cannot be normalised")
    if abs(norm - 1.0) <= _UNIT_NORM_SLACK:
        return desc
    return desc / norm


def write_keypoints(keypoints: Iterable[Keypoint], path) -> None:
    # json floats use repr, which round-trips exactly
    with open(path, "w") as fh:
        for k in keypoints:
            rec = {"x": float(k.x), "y": float(k.y), "response": float(k.response),
                   "desc": [float(v) for v in k.descriptor]}
            fh.write(json.dumps(rec) + "\n")


def load_image(entry: ImageEntry, descriptor_dim: int) -> ImageFeatures:
    kps = load_keypoints(entry.features, entry.bbox, descriptor_dim)
    return ImageFeatures(entry.image_id, entry.category, entry.role, kps, entry.bbox)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    n_categories: int = 3
    images_per_category: int = 15
    keypoints_per_image: int = 60
    descriptor_dim: int = 64
    cluster_separation: float = 1.0
    # Random train/test split helper: this many train images per category,
    # the rest are test. None marks every image as train.
    train_per_category: Optional[int] = 10
    n_clusters: int = 8
    descriptor_noise: float = 0.5
    position_jitter: float = 1.0


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def generate_synthetic_dataset(spec: SyntheticSpec, rng_seed: int, out_dir) -> DatasetManifest:
    """Write a synthetic dataset (manifest.json + one .jsonl per image) to ``out_dir``.

    Each category owns a planar layout of anchor points; every anchor carries a
    label into the category's mixture of descriptor clusters. Cluster centres
    interpolate between globally shared directions (separation 0) and
    category-specific ones (separation 1). Labels are balanced so that at
    separation 0 every category has the same descriptor distribution.
    """
    s = spec
    if min(s.n_categories, s.images_per_category, s.keypoints_per_image, s.descriptor_dim, s.n_clusters) <= 0:
        raise ValueError("synthetic dataset counts must be positive")
    if s.keypoints_per_image < 10:
        raise ValueError("keypoints_per_image must be >= 10 (top layer needs a seed and 9 neighbours)")
    if not 0.0 <= s.cluster_separation <= 1.0:
        raise ValueError("cluster_separation must lie in [0, 1]")
    if s.train_per_category is not None and not 1 <= s.train_per_category <= s.images_per_category:
        raise ValueError("train_per_category must lie in [1, images_per_category]")

    rng = np.random.default_rng(rng_seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n, dim = s.keypoints_per_image, s.descriptor_dim
    shared = _unit_rows(rng.standard_normal((s.n_clusters, dim)))
    entries = []
    for c in range(s.n_categories):
        category = f"cat{c:02d}"
        own = _unit_rows(rng.standard_normal((s.n_clusters, dim)))
        centres = _unit_rows((1.0 - s.cluster_separation) * shared + s.cluster_separation * own)
        anchors = rng.uniform(0.0, 100.0, size=(n, 2))
        labels = rng.permutation(np.arange(n) % s.n_clusters)
        base_resp = rng.uniform(0.1, 1.0, size=n)
        if s.train_per_category is None:
            train = set(range(s.images_per_category))
        else:
            train = set(rng.permutation(s.images_per_category)[: s.train_per_category].tolist())
        for i in range(s.images_per_category):
            theta = rng.uniform(0.0, 2.0 * np.pi)
            scale = rng.uniform(0.8, 1.25)
            shift = rng.uniform(-50.0, 50.0, size=2)
            rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            pts = anchors + rng.normal(0.0, s.position_jitter, size=(n, 2))
            pts = scale * pts @ rot.T + shift
            desc = centres[labels] + rng.normal(0.0, s.descriptor_noise / np.sqrt(dim), size=(n, dim))
            desc = _unit_rows(desc)
            resp = base_resp * np.exp(rng.normal(0.0, 0.1, size=n))
            order = rng.permutation(n)
            image_id = f"{category}_{i:03d}"
            fpath = out_dir / f"{image_id}.jsonl"
            write_keypoints(
                (Keypoint(float(pts[j, 0]), float(pts[j, 1]), float(resp[j]), desc[j]) for j in order),
                fpath,
            )
            entries.append(ImageEntry(image_id, category, "train" if i in train else "test", fpath))
    manifest = DatasetManifest(dim, entries)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest


def bbox_filter(keypoints: Sequence[Keypoint], bbox) -> list[Keypoint]:
    return [k for k in keypoints if _in_bbox(k.x, k.y, bbox)]
