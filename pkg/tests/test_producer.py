import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mock_chat import MockChatServer
from tagalign import lexicon
from tagalign.graph import NodeSplit, SyntheticTagConfig, generate_synthetic_tag, split_nodes
from tagalign.producer import (API_KEY_ENV, NODE_PROMPT, AlignmentPair, BackendError, ChatClient, SummarizerBackend,
                               build_alignment_dataset, describe_node, extract_phrases, infer_commonality,
                               read_alignment_pairs, summarize_neighbors, summarize_node)

TEMPLATE = SummarizerBackend("template")


def test_node_summary_template():
    assert summarize_node("cars wheels cars", TEMPLATE) == "This node is mainly about: cars, wheels."
    assert summarize_node("cars wheels cars", TEMPLATE) == summarize_node("cars wheels cars", TEMPLATE)


def test_neighbor_summary_frequency_rank():
    assert summarize_neighbors(["cars", "cars", "boats"], TEMPLATE) == "Its neighbors are mainly about: cars, boats."


def test_single_neighbor():
    assert summarize_neighbors(["soups"], TEMPLATE) == "Its neighbors are mainly about: soups."


def test_neighbor_ties_are_lexicographic():
    assert summarize_neighbors(["wheels", "boats"], TEMPLATE) == "Its neighbors are mainly about: boats, wheels."


def test_commonality_examples():
    t_s = summarize_node("cars wheels", TEMPLATE)
    t_nb = summarize_neighbors(["cars", "boats"], TEMPLATE)
    assert infer_commonality(t_s, t_nb, TEMPLATE) == "Common themes: cars."
    assert infer_commonality(t_s, summarize_neighbors(["boats"], TEMPLATE), TEMPLATE) == "Common themes: none."


def test_commonality_of_identical_texts_is_the_union():
    t = summarize_node("cars wheels", TEMPLATE)
    assert set(extract_phrases(infer_commonality(t, t, TEMPLATE))) == set(extract_phrases(t))


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        summarize_node("  ", TEMPLATE)
    with pytest.raises(ValueError):
        summarize_neighbors([], TEMPLATE)
    with pytest.raises(ValueError):
        infer_commonality("x", "", TEMPLATE)


def test_commonality_soundness_on_generated_pairs():
    words = [w for lex in lexicon.topic_lexicons(10) for w in lex]
    rng = random.Random(0)
    for _ in range(1000):
        s_v = " ".join(rng.choices(words, k=rng.randint(1, 8)))
        nbrs = [" ".join(rng.choices(words, k=rng.randint(1, 6))) for _ in range(rng.randint(1, 10))]
        pair = describe_node(0, s_v, nbrs, TEMPLATE)
        common = set(extract_phrases(pair.t_c))
        assert common <= set(extract_phrases(pair.t_s)) & set(extract_phrases(pair.t_nb))


@pytest.fixture(scope="module")
def graph_and_split():
    g = generate_synthetic_tag(SyntheticTagConfig.from_library(100, 5, 0.2, 0.02, seed=2))
    return g, split_nodes(g, 0.8, 0.2, seed=2)


def test_dataset_size_header_and_byte_identity(tmp_path, graph_and_split):
    g, split = graph_and_split
    emb = np.random.default_rng(0).normal(size=(100, 4)).astype(np.float32)
    n = build_alignment_dataset(g, split, emb, 10, TEMPLATE, tmp_path / "a.jsonl", seed=5)
    build_alignment_dataset(g, split, emb, 10, TEMPLATE, tmp_path / "b.jsonl", seed=5)
    assert n == 80
    header, pairs = read_alignment_pairs(tmp_path / "a.jsonl")
    assert header["seed"] == 5 and len(pairs) == 80
    assert [p.node_id for p in pairs] == sorted(split.producer_nodes)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_missing_embedding_rejected(tmp_path, graph_and_split):
    g, split = graph_and_split
    emb = np.zeros((50, 4), dtype=np.float32)
    with pytest.raises(KeyError):
        build_alignment_dataset(g, split, emb, 10, TEMPLATE, tmp_path / "a.jsonl")


def test_t_full_has_three_headed_parts():
    pair = AlignmentPair(1, 1, "a\nb", "c", "d")
    assert pair.t_full.split("\n") == ["[NODE] a b", "[NEIGHBORS] c", "[COMMON] d"]


def remote(url, **kw):
    opts = dict(kind="remote", endpoint=url, timeout=2.0, max_retries=2, backoff=0.0)
    opts.update(kw)
    return SummarizerBackend(**opts)


def test_server_errors_exhaust_retries():
    with MockChatServer(lambda i, p: (500, "", 0)) as srv:
        with pytest.raises(BackendError) as err:
            summarize_node("cars", remote(srv.url))
        assert len(srv.calls) == 3
        assert err.value.status == 500


def test_retry_then_success():
    with MockChatServer(lambda i, p: (503, "", 0) if i < 2 else (200, "about cars", 0)) as srv:
        assert summarize_node("cars", remote(srv.url)) == "about cars"
        assert len(srv.calls) == 3


def test_client_error_is_not_retried():
    with MockChatServer(lambda i, p: (400, "", 0)) as srv:
        with pytest.raises(BackendError):
            summarize_node("cars", remote(srv.url))
        assert len(srv.calls) == 1


def test_timeout_surfaces_as_backend_error():
    with MockChatServer(lambda i, p: (200, "late", 1.0)) as srv:
        with pytest.raises(BackendError, match="timed out"):
            summarize_node("cars", remote(srv.url, timeout=0.2, max_retries=1))
        assert len(srv.calls) == 2


def test_api_key_sent_as_bearer(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sekrit")
    with MockChatServer(lambda i, p: (200, "ok", 0)) as srv:
        summarize_node("cars", remote(srv.url))
    assert srv.headers[0]["Authorization"] == "Bearer sekrit"


def _echo(i, prompt):
    # Random latency makes completions finish out of submission order.
    return 200, "echo " + str(abs(hash(prompt)) % 10_000), random.Random(i).uniform(0.0, 0.03)


def test_remote_dataset_keeps_node_order_and_bounds_concurrency(tmp_path, graph_and_split):
    g, _ = graph_and_split
    split = NodeSplit(tuple(range(0, 40, 2)), tuple(range(1, 40, 2)))
    emb = np.zeros((100, 4), dtype=np.float32)
    with MockChatServer(_echo) as srv:
        n = build_alignment_dataset(g, split, emb, 5, remote(srv.url, max_concurrent=3), tmp_path / "r.jsonl")
    assert n == 20
    _, pairs = read_alignment_pairs(tmp_path / "r.jsonl")
    assert [p.node_id for p in pairs] == list(range(0, 40, 2))
    assert 1 <= srv.max_active <= 3
    assert len(srv.calls) == 60
    # Each node's summary request carries that node's own text.
    node_prompts = sorted(c for c in srv.calls if c.startswith("Node text:"))
    assert node_prompts == sorted(NODE_PROMPT.format(text=g.text_attrs[v]) for v in range(0, 40, 2))


def test_remote_failures_skip_nodes(tmp_path, graph_and_split, caplog):
    g, _ = graph_and_split
    split = NodeSplit((0, 1, 2, 3), ())
    bad = g.text_attrs[1]
    emb = np.zeros((100, 4), dtype=np.float32)

    def behavior(i, prompt):
        return (500, "", 0) if bad in prompt else (200, "fine", 0)

    with MockChatServer(behavior) as srv:
        n = build_alignment_dataset(g, split, emb, 3, remote(srv.url, max_retries=0), tmp_path / "r.jsonl")
    _, pairs = read_alignment_pairs(tmp_path / "r.jsonl")
    assert 1 not in [p.node_id for p in pairs] and n == len(pairs) <= 3
    assert "skipped" in caplog.text
