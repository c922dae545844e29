import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwords.cdk import CdkParams, graph_dissimilarity
from graphwords.codebook import (Dictionary, DissimilarityMatrix, agglomerate, agglomerative_cluster,
                                 build_dictionary_two_pass, cluster_median, compute_dissimilarity_matrix,
                                 kmeans_baseline_dictionary, stride_subsample)
from graphwords.features import DatasetManifest, ImageEntry
from oracles import exhaustive_median, naive_average_linkage, random_graph


def random_dm(rng, n):
    x = rng.standard_normal((n, 3))
    d = ((x[:, None] - x[None]) ** 2).sum(-1).astype(np.float32)
    np.fill_diagonal(d, 0)
    return DissimilarityMatrix(d)


@pytest.mark.parametrize("seed", range(8))
def test_agglomerative_matches_naive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    dm = random_dm(rng, n)
    for k in {1, max(1, n // 3), n}:
        assert agglomerative_cluster(dm, k) == naive_average_linkage(dm.values, k)


def test_all_ties_merge_in_index_order():
    dm = DissimilarityMatrix(np.ones((5, 5), dtype=np.float32) - np.eye(5, dtype=np.float32))
    res = agglomerate(dm, 1)
    assert res.merges == [(0, 1), (0, 2), (0, 3), (0, 4)]
    assert agglomerative_cluster(dm, 3) == naive_average_linkage(dm.values, 3) == [[0, 1, 2], [3], [4]]


def test_linkage_monotone():
    rng = np.random.default_rng(1)
    res = agglomerate(random_dm(rng, 40), 1)
    assert all(a <= b + 1e-12 for a, b in zip(res.linkage, res.linkage[1:]))


def test_target_k_checked():
    dm = DissimilarityMatrix(np.zeros((3, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        agglomerative_cluster(dm, 0)
    with pytest.raises(ValueError):
        agglomerative_cluster(dm, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30))
def test_median_matches_exhaustive(seed, size):
    rng = np.random.default_rng(seed)
    dm = random_dm(rng, 40)
    members = sorted(rng.choice(40, size=min(size, 40), replace=False).tolist())
    assert cluster_median(members, dm) == exhaustive_median(members, dm.values)


def test_median_tie_goes_to_smallest_index():
    dm = DissimilarityMatrix(np.ones((4, 4), dtype=np.float32) - np.eye(4, dtype=np.float32))
    assert cluster_median([3, 1, 2], dm) == 1
    with pytest.raises(ValueError):
        cluster_median([], dm)


def test_dissimilarity_matrix_agrees_with_scalar_rho():
    rng = np.random.default_rng(2)
    items = [random_graph(rng, 4, 6) for _ in range(10)]
    dm = compute_dissimilarity_matrix(items, workers=2)
    assert dm.values.dtype == np.float32
    for i in range(10):
        for j in range(10):
            want = np.float32(graph_dissimilarity(items[i], items[j])) if i != j else 0.0
            assert dm.values[i, j] == pytest.approx(want, rel=1e-6, abs=1e-9)


def test_memory_cap_enforced():
    rng = np.random.default_rng(0)
    items = [random_graph(rng, 4, 4) for _ in range(20)]
    with pytest.raises(MemoryError, match="subsample_cap"):
        compute_dissimilarity_matrix(items, memory_cap=100)


def test_stride_subsample():
    assert stride_subsample(5, 10).tolist() == [0, 1, 2, 3, 4]
    assert stride_subsample(10, 4).tolist() == [0, 2, 5, 7]


def _toy_dataset(n_cat=2, per_image=6, images=3):
    rng = np.random.default_rng(9)
    feats, entries = {}, []
    for c in range(n_cat):
        for i in range(images):
            iid = f"c{c}_{i}"
            entries.append(ImageEntry(iid, f"c{c}", "train", None))
            feats[iid] = [random_graph(rng, 4, 5) for _ in range(per_image)]
    entries.append(ImageEntry("q", "c0", "test", None))
    feats["q"] = [random_graph(rng, 4, 5)]
    return feats, DatasetManifest(5, entries)


def test_two_pass_dictionary():
    feats, manifest = _toy_dataset()
    d = build_dictionary_two_pass(feats, manifest, layer=3, first_pass_k=5, final_size=4)
    assert len(d) == 4
    assert d.metadata["n_medians"] == 10
    pool = [g for iid, gs in feats.items() if iid != "q" for g in gs]
    assert all(any(w is g for g in pool) for w in d.words)
    again = Dictionary.from_json(d.to_json())
    assert [w.sort_key() for w in again.words] == [w.sort_key() for w in d.words]
    assert [w.source_image_id for w in again.words] == [w.source_image_id for w in d.words]


def test_two_pass_oversized_keeps_all_medians(caplog):
    feats, manifest = _toy_dataset()
    d = build_dictionary_two_pass(feats, manifest, layer=3, first_pass_k=3, final_size=100)
    assert len(d) == 6
    assert "exceeds" in caplog.text


def test_two_pass_is_deterministic():
    feats, manifest = _toy_dataset()
    a = build_dictionary_two_pass(feats, manifest, 3, 5, 4, CdkParams(), workers=1)
    b = build_dictionary_two_pass(feats, manifest, 3, 5, 4, CdkParams(), workers=3)
    assert a.to_json() == b.to_json()


def test_kmeans_recovers_blobs():
    rng = np.random.default_rng(0)
    centres = np.array([[0, 0], [10, 0], [0, 10]], dtype=float)
    x = np.vstack([c + rng.normal(0, 0.3, (50, 2)) for c in centres])
    got = kmeans_baseline_dictionary(x, 3, rng_seed=1)
    for c in centres:
        assert np.min(np.linalg.norm(got - c, axis=1)) < 0.2
    assert np.array_equal(got, kmeans_baseline_dictionary(x, 3, rng_seed=1))


def test_kmeans_with_duplicate_points():
    x = np.repeat(np.eye(3), 4, axis=0)
    got = kmeans_baseline_dictionary(x, 3, rng_seed=0)
    assert sorted(map(tuple, got)) == sorted(map(tuple, np.eye(3)))
    with pytest.raises(ValueError):
        kmeans_baseline_dictionary(x, 13)
