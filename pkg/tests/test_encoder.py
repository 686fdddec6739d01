import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tagalign.encoder import (GmTrainConfig, SageModel, build_bow_features, embed_all, link_prediction_loss,
                              pretrain_gm, sage_forward)
from tagalign.graph import SyntheticTagConfig, TextAttributedGraph, generate_synthetic_tag


def test_bow_row_is_normalized_count():
    g = TextAttributedGraph(2, [(0, 1)], ["cars cars fishing", "fishing"])
    f = build_bow_features(g, 8)
    assert f.vocab == ["cars", "fishing"]
    np.testing.assert_allclose(f.values[0], [2 / 3, 1 / 3])


def test_identical_texts_identical_rows():
    g = TextAttributedGraph(3, [], ["soup bread", "soup bread", "stars"])
    f = build_bow_features(g, 8)
    np.testing.assert_array_equal(f.values[0], f.values[1])


def test_single_dimension_vocab():
    g = TextAttributedGraph(3, [], ["cars cars wheels", "cars", "wheels"])
    f = build_bow_features(g, 1)
    assert f.vocab == ["cars"]
    np.testing.assert_array_equal(f.values[:, 0], [1.0, 1.0, 0.0])


def test_hand_computed_two_node_layer():
    g = TextAttributedGraph(2, [(0, 1)], ["v", "u"])
    model = SageModel([2, 2], [8], activation="identity").double()
    with torch.no_grad():
        model.layers[0].weight.copy_(torch.tensor([[1.0, 0, 1, 0], [0, 1, 0, 1]]))
    x = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    h = sage_forward(model, g, x, [0], np.random.default_rng(0))
    assert h[0].tolist() == [1.0, 1.0]


def small_graph(seed=0, n=30):
    return generate_synthetic_tag(SyntheticTagConfig.from_library(n, 3, 0.2, 0.02, seed=seed))


def test_zero_weights_give_zero_output():
    g = small_graph()
    model = SageModel([5, 4, 3], [3, 3])
    for layer in model.layers:
        torch.nn.init.zeros_(layer.weight)
    out = sage_forward(model, g, torch.randn(30, 5), None, np.random.default_rng(0))
    assert torch.count_nonzero(out) == 0


def test_forward_is_deterministic_for_fixed_seed():
    g = small_graph()
    torch.manual_seed(0)
    model = SageModel([5, 4, 3], [3, 3])
    x = torch.randn(30, 5)
    a = sage_forward(model, g, x, None, np.random.default_rng(9))
    b = sage_forward(model, g, x, None, np.random.default_rng(9))
    assert torch.equal(a, b)


def hop_distances(graph, source):
    dist = {source: 0}
    frontier = [source]
    while frontier:
        nxt = []
        for v in frontier:
            for u in graph.neighbors[v].tolist():
                if u not in dist:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_locality_beyond_k_hops(seed):
    g = generate_synthetic_tag(SyntheticTagConfig.from_library(25, 3, 0.15, 0.01, seed=seed))
    torch.manual_seed(seed)
    model = SageModel([4, 3, 3], [None, None])
    x = torch.randn(25, 4)
    dist = hop_distances(g, 0)
    far = [u for u in range(25) if dist.get(u, 99) > 2]
    if not far:
        return
    y = x.clone()
    y[far] += torch.randn(len(far), 4)
    a = sage_forward(model, g, x, [0], None)
    b = sage_forward(model, g, y, [0], None)
    assert torch.allclose(a, b, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    g = small_graph(seed % 50, 20)
    perm = np.random.default_rng(seed).permutation(20)
    inv = np.argsort(perm)
    relabeled = TextAttributedGraph(20, [(int(inv[u]), int(inv[v])) for u, v in g.edges],
                                    [g.text_attrs[p] for p in perm])
    torch.manual_seed(seed)
    model = SageModel([4, 3, 2], [None, None]).double()
    x = torch.randn(20, 4, dtype=torch.float64)
    a = sage_forward(model, g, x, None, None)
    b = sage_forward(model, relabeled, x[perm], None, None)
    assert torch.allclose(a[perm], b, atol=1e-10)


def test_link_loss_at_zero_logit_is_ln2():
    z = torch.zeros(4, 3, dtype=torch.float64)
    for label in (0.0, 1.0):
        assert abs(link_prediction_loss(z, z, label).item() - math.log(2)) <= 1e-9


def test_link_loss_vanishes_for_confident_positive():
    u = torch.full((1, 2), 30.0)
    assert link_prediction_loss(u, u, 1.0).item() < 1e-12


def test_link_loss_rejects_nan():
    with pytest.raises(ValueError):
        link_prediction_loss(torch.tensor([[float("nan")]]), torch.tensor([[1.0]]), 1.0)


def test_zero_epochs_equals_initial_forward():
    g = small_graph()
    f = build_bow_features(g, 64)
    cfg = GmTrainConfig(hidden_dims=(8, 4), epochs=0, seed=3, embed_seed=5)
    a = pretrain_gm(g, f, cfg)
    b = pretrain_gm(g, f, cfg)
    np.testing.assert_array_equal(a.embeddings, b.embeddings)
    torch.manual_seed(3)
    fresh = SageModel([f.dim, 8, 4], [10, 10])
    np.testing.assert_array_equal(embed_all(fresh, g, f.values, 5), a.embeddings)


def test_pretraining_beats_coin_flip_by_five_sigma():
    g = generate_synthetic_tag(SyntheticTagConfig.from_library(500, 5, 0.1, 0.005, seed=0))
    f = build_bow_features(g, 512)
    res = pretrain_gm(g, f, GmTrainConfig(epochs=20, seed=0, embed_seed=0))
    sigma = math.sqrt(0.25 / res.num_val_pairs)
    assert res.val_accuracy > 0.5 + 5 * sigma
    assert np.all(np.isfinite(res.embeddings)) and res.embeddings.shape == (500, 64)
    assert not any(p.requires_grad for p in res.model.parameters())
