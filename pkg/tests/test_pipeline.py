import numpy as np
import pytest

from graphwords import pipeline
from graphwords.config import load_config
from graphwords.evaluation import chance_average_precision
from graphwords.features import SyntheticSpec


def _layer0_maps(root, separation, seed):
    ws = pipeline.Workspace(root)
    cfg = load_config(None, ["layers=0", "dict_size=30", "first_pass_k=100"])
    pipeline.stage_synth(ws, SyntheticSpec(cluster_separation=separation, keypoints_per_image=30), seed)
    pipeline.stage_graphs(ws, cfg)
    pipeline.stage_dicts(ws, cfg)
    pipeline.stage_encode(ws, cfg)
    return pipeline.stage_eval(ws, cfg)


def test_shared_descriptors_give_chance_level(tmp_path):
    chance = chance_average_precision(30, 10)
    runs = [_layer0_maps(tmp_path / str(s), 0.0, s) for s in range(3)]
    for method in ("L0", "BOW"):
        mean = np.mean([r[method] for r in runs])
        assert abs(mean - chance) < 0.1, (method, mean, chance)


def test_separated_descriptors_beat_chance(tmp_path):
    maps = _layer0_maps(tmp_path, 1.0, 0)
    assert maps["L0"] > 0.9 and maps["BOW"] > 0.9


def test_methods_table():
    cfg = load_config(None, [])
    names = [m for m, _, _ in pipeline.methods(cfg)]
    assert names[-3:] == ["FUSED_0+3", "FUSED_0+3+6", "FUSED_0+3+6+9"]
    table = {m: tags for m, _, tags in pipeline.methods(cfg)}
    assert table["FUSED_0+3+6"] == ["SURF6NN", "L3", "L6"]
    base = load_config(None, ["fusion=kmeans-baseline"])
    assert {m: t for m, _, t in pipeline.methods(base)}["FUSED_0+3+6+9"] == ["BOW", "L3", "L6", "L9"]
    assert pipeline.default_method(cfg) == "FUSED_0+3+6+9"
    assert "BOW" not in pipeline.block_tags(load_config(None, ["baseline=false"]))


def test_unencodable_image(tmp_path):
    ws = pipeline.Workspace(tmp_path)
    cfg = load_config(None, ["layers=0,3", "dict_size=4", "first_pass_k=8", "n_seeds=5"])
    spec = SyntheticSpec(n_categories=2, images_per_category=3, keypoints_per_image=12, descriptor_dim=8,
                         train_per_category=2)
    manifest = pipeline.stage_synth(ws, spec, 1)
    # shrink one test image to three keypoints: no layer-3 graph is possible
    victim = manifest.by_role("test")[0]
    lines = victim.features.read_text().splitlines()[:3]
    victim.features.write_text("\n".join(lines) + "\n")
    pipeline.stage_graphs(ws, cfg)
    pipeline.stage_dicts(ws, cfg)
    with pytest.raises(pipeline.PipelineError, match="unencodable"):
        pipeline.stage_encode(ws, cfg)
    skip = load_config(None, ["layers=0,3", "dict_size=4", "first_pass_k=8", "n_seeds=5", "on_unencodable=skip"])
    assert pipeline.stage_encode(ws, skip) == 5
    maps = pipeline.stage_eval(ws, skip)
    assert set(maps) >= {"L0", "L3", "FUSED_0+3"}
