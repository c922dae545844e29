import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwords.cdk import graph_dissimilarity
from graphwords.codebook import CentroidDictionary, Dictionary
from graphwords.graphs import GraphFeature
from graphwords.signature import (Signature, assign_word, assign_words, encode_bow_signature,
                                  encode_layer_signature, fuse_signatures, histogram, l1_distance)
from oracles import random_graph


def dictionary(rng, k=5, n=4):
    return Dictionary(n - 1, [random_graph(rng, n, 6) for _ in range(k)], "h")


def test_assignment_matches_scalar_argmin():
    rng = np.random.default_rng(0)
    d = dictionary(rng)
    feats = [random_graph(rng, 4, 6) for _ in range(12)]
    got = assign_words(feats, d, workers=2)
    for f, w in zip(feats, got):
        rho = [graph_dissimilarity(f, word) for word in d.words]
        assert rho[w] == pytest.approx(min(rho), abs=1e-12)


def test_word_maps_to_itself():
    rng = np.random.default_rng(1)
    d = dictionary(rng)
    for i, w in enumerate(d.words):
        assert assign_word(GraphFeature(w.layer, 0, w.nodes.copy(), w.edges), d) == i


def test_tie_goes_to_smaller_word():
    rng = np.random.default_rng(2)
    w = random_graph(rng, 4, 6)
    d = Dictionary(3, [w, GraphFeature(3, 1, w.nodes.copy(), w.edges)], "h")
    assert assign_word(w, d) == 0


def test_layer_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        assign_words([random_graph(rng, 7, 6)], dictionary(rng))


def test_histogram_and_encoding():
    assert histogram(np.array([0, 2, 2, 3]), 4).tolist() == [0.25, 0.0, 0.5, 0.25]
    with pytest.raises(ValueError):
        histogram(np.array([], dtype=int), 3)
    rng = np.random.default_rng(4)
    d = dictionary(rng)
    h = encode_layer_signature([random_graph(rng, 4, 6) for _ in range(7)], d)
    assert h.shape == (5,) and h.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        encode_layer_signature([], d)


def test_bow_encoding():
    c = CentroidDictionary("BOW", np.array([[1.0, 0.0], [0.0, 1.0]]), "h")
    assert encode_bow_signature(np.array([[0.9, 0.1], [0.2, 0.8], [1.0, 0.0]]), c).tolist() == [2 / 3, 1 / 3]


def test_fusion_and_l1():
    a = fuse_signatures([("L0", np.array([0.5, 0.5])), ("L3", np.array([1.0, 0.0, 0.0]))], "a")
    b = fuse_signatures([("L0", np.array([1.0, 0.0])), ("L3", np.array([0.0, 0.0, 1.0]))], "b")
    assert a.vector.sum() == 2.0
    assert l1_distance(a, b) == 3.0
    assert l1_distance(a, b) == l1_distance(a.select(["L0"]), b.select(["L0"])) + 2.0
    with pytest.raises(ValueError):
        l1_distance(a, b.select(["L3", "L0"]))
    with pytest.raises(ValueError):
        fuse_signatures([("L0", np.ones(1)), ("L0", np.ones(1))])
    with pytest.raises(ValueError):
        fuse_signatures([])
    assert Signature.from_json(a.to_json()).structure() == a.structure()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.lists(st.floats(0, 1), min_size=6, max_size=6),
       st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_l1_is_a_metric(x, y, z):
    s = [fuse_signatures([("L0", np.array(v[:2])), ("L3", np.array(v[2:]))], str(i)) for i, v in enumerate((x, y, z))]
    a, b, c = s
    assert l1_distance(a, a) == 0
    assert l1_distance(a, b) == l1_distance(b, a)
    assert l1_distance(a, c) <= l1_distance(a, b) + l1_distance(b, c) + 1e-12
