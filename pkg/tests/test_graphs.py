import numpy as np
import pytest

from graphwords.features import ImageFeatures, Keypoint
from graphwords.graphs import (GraphFeature, InsufficientPoints, build_graph_layers, find_neighbors,
                               read_graph_file, select_seeds, selected_from_graphs, write_graph_file)


def image(n=30, seed=0, dim=4):
    rng = np.random.default_rng(seed)
    kps = []
    for _ in range(n):
        d = rng.standard_normal(dim)
        kps.append(Keypoint(*rng.uniform(0, 50, 2), rng.uniform(0, 1), d / np.linalg.norm(d)))
    return ImageFeatures("img", "c", "train", kps)


def _kp(x, y, r):
    return Keypoint(float(x), float(y), float(r), np.array([1.0, 0.0]))


def test_seed_ties_break_on_index():
    kps = [_kp(i, 0, r) for i, r in enumerate([0.5, 0.9, 0.9, 0.1, 0.9])]
    assert select_seeds(kps, 3) == [1, 2, 4]
    assert select_seeds(kps, 10) == [1, 2, 4, 0, 3]


def test_neighbour_ties_break_on_index():
    kps = [_kp(0, 0, 1), _kp(1, 0, 1), _kp(-1, 0, 1), _kp(0, 1, 1), _kp(2, 0, 1)]
    assert find_neighbors(kps, 0, 3) == [1, 2, 3]
    with pytest.raises(InsufficientPoints):
        find_neighbors(kps, 0, 5)


def test_layer_node_counts_and_edge_bounds():
    graphs, log = build_graph_layers(image(), n_seeds=10)
    for layer, gs in graphs.items():
        assert len(gs) == 10
        for g in gs:
            assert g.n_nodes == layer + 1
            assert g.indices[0] == g.seed
            if layer >= 3:
                assert layer <= len(g.edges) <= 3 * (layer + 1) - 6
    assert log.produced == {0: 10, 3: 10, 6: 10, 9: 10}


def test_graphs_are_connected():
    graphs, _ = build_graph_layers(image(seed=4), n_seeds=20)
    for layer in (3, 6, 9):
        for g in graphs[layer]:
            seen, todo = {0}, [0]
            adj = g.adjacency()
            while todo:
                v = todo.pop()
                for w in np.flatnonzero(adj[v]):
                    if w not in seen:
                        seen.add(int(w))
                        todo.append(int(w))
            assert seen == set(range(g.n_nodes))


def test_nesting():
    graphs, _ = build_graph_layers(image(seed=2), n_seeds=30)
    by_seed = {l: {g.seed: set(g.indices) for g in gs} for l, gs in graphs.items()}
    for s in by_seed[9]:
        assert {s} == by_seed[0][s]
        assert by_seed[0][s] < by_seed[3][s] < by_seed[6][s] < by_seed[9][s]


def test_too_small_image_skips_high_layers():
    graphs, log = build_graph_layers(image(n=5), n_seeds=300)
    assert len(graphs[3]) == 5
    assert graphs[6] == [] and graphs[9] == []
    assert log.skipped == {0: 0, 3: 0, 6: 5, 9: 5}


def test_duplicate_positions_collapse():
    base = image(n=12, seed=7)
    kps = list(base.keypoints)
    dup = Keypoint(kps[3].x, kps[3].y, 10.0, kps[5].descriptor)
    img = ImageFeatures("img", "c", "train", kps + [dup])
    graphs, log = build_graph_layers(img, n_seeds=300)
    assert log.n_duplicates_collapsed == 1
    assert all(12 not in g.indices for gs in graphs.values() for g in gs)


def test_graph_file_round_trip(tmp_path):
    graphs, _ = build_graph_layers(image(), n_seeds=5)
    write_graph_file(tmp_path / "g.json", "img", graphs, {"config_hash": "abc"})
    iid, back, meta = read_graph_file(tmp_path / "g.json")
    assert iid == "img" and meta == {"config_hash": "abc"}
    for l in graphs:
        for g, h in zip(graphs[l], back[l]):
            assert g.sort_key() == h.sort_key()
            assert g.indices == h.indices


def test_selected_from_graphs_covers_every_node():
    graphs, _ = build_graph_layers(image(), n_seeds=4)
    sel = selected_from_graphs(graphs[6])
    assert [g.seed for g in sel] == sorted({i for g in graphs[6] for i in g.indices})
    assert all(g.layer == 0 and g.n_nodes == 1 for g in sel)


def test_wrong_node_count_rejected():
    with pytest.raises(ValueError):
        GraphFeature.from_json({"seed": 0, "nodes": [[1.0, 0.0]] * 3, "edges": []}, layer=3)
