"""Text-attributed graphs: data model, synthetic generator, neighbor sampling, splits, file IO."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lexicon


class GraphFormatError(ValueError):
    """Raised when a graph file cannot be parsed."""


class ConfigError(ValueError):
    """Raised for invalid generator or split parameters."""


@dataclass
class TextAttributedGraph:
    num_nodes: int
    edges: list[tuple[int, int]]
    text_attrs: list[str]
    labels: list[int] | None = None
    topic_names: list[str] | None = None

    def __post_init__(self) -> None:
        if self.num_nodes < 1:
            raise ValueError("a graph needs at least one node")
        if len(self.text_attrs) != self.num_nodes:
            raise ValueError(f"expected {self.num_nodes} text attributes, got {len(self.text_attrs)}")
        for i, text in enumerate(self.text_attrs):
            if not text or not text.strip():
                raise ValueError(f"node {i} has an empty text attribute")
        normalized: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u}, {v}) references a node outside 0..{self.num_nodes - 1}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            normalized.append(key)
        self.edges = normalized
        if self.labels is not None:
            if len(self.labels) != self.num_nodes:
                raise ValueError("labels must cover every node")
            if self.topic_names is None:
                raise ValueError("labels require topic_names")
            for i, y in enumerate(self.labels):
                if not 0 <= y < len(self.topic_names):
                    raise ValueError(f"node {i} label {y} does not index topic_names")

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """Sorted neighbor ids per node."""
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return [np.array(sorted(a), dtype=np.int64) for a in adj]

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, indices) view of the symmetric adjacency."""
        degrees = np.array([len(n) for n in self.neighbors], dtype=np.int64)
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        indices = np.concatenate(self.neighbors) if self.edges else np.zeros(0, dtype=np.int64)
        return offsets, indices

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])


@dataclass
class SyntheticTagConfig:
    num_nodes: int
    num_topics: int
    intra_topic_edge_prob: float
    inter_topic_edge_prob: float
    phrases_per_node: tuple[int, int] = (3, 6)
    topic_lexicons: list[list[str]] = field(default_factory=list)
    seed: int = 0
    topic_names: list[str] | None = None
    # Fraction of a node's phrases drawn from some other topic's lexicon.
    off_topic_rate: float = 0.0

    @classmethod
    def from_library(cls, num_nodes: int, num_topics: int, p_in: float, p_out: float,
                     seed: int = 0, **kwargs) -> "SyntheticTagConfig":
        return cls(num_nodes=num_nodes, num_topics=num_topics, intra_topic_edge_prob=p_in,
                   inter_topic_edge_prob=p_out, topic_lexicons=lexicon.topic_lexicons(num_topics),
                   topic_names=lexicon.topic_names(num_topics), seed=seed, **kwargs)

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise ConfigError("num_nodes must be positive")
        if self.num_topics < 1:
            raise ConfigError("num_topics must be positive")
        p_in, p_out = self.intra_topic_edge_prob, self.inter_topic_edge_prob
        if not (0.0 <= p_out < p_in <= 1.0):
            raise ConfigError(f"need 0 <= p_out < p_in <= 1 (homophily), got p_in={p_in}, p_out={p_out}")
        lo, hi = self.phrases_per_node
        if not (1 <= lo <= hi):
            raise ConfigError(f"phrases_per_node must satisfy 1 <= lo <= hi, got {self.phrases_per_node}")
        if len(self.topic_lexicons) != self.num_topics:
            raise ConfigError(f"need {self.num_topics} topic lexicons, got {len(self.topic_lexicons)}")
        seen: dict[str, int] = {}
        for t, lex in enumerate(self.topic_lexicons):
            if len(set(lex)) < 4:
                raise ConfigError(f"topic {t} lexicon needs at least 4 distinct phrases")
            for phrase in lex:
                if not phrase.strip():
                    raise ConfigError(f"topic {t} lexicon contains an empty phrase")
                if seen.get(phrase, t) != t:
                    raise ConfigError(f"phrase {phrase!r} appears in topics {seen[phrase]} and {t}")
                seen[phrase] = t
        if self.topic_names is not None and len(self.topic_names) != self.num_topics:
            raise ConfigError("topic_names must have one entry per topic")
        if not 0.0 <= self.off_topic_rate < 1.0:
            raise ConfigError("off_topic_rate must be in [0, 1)")
        if self.off_topic_rate > 0 and self.num_topics < 2:
            raise ConfigError("off_topic_rate needs at least two topics")


def generate_synthetic_tag(config: SyntheticTagConfig) -> TextAttributedGraph:
    """Planted-partition graph whose node texts are sampled from per-topic lexicons."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, k = config.num_nodes, config.num_topics
    topics = rng.integers(0, k, size=n)

    lo, hi = config.phrases_per_node
    texts: list[str] = []
    for v in range(n):
        count = int(rng.integers(lo, hi + 1))
        words: list[str] = []
        for j in range(count):
            source = int(topics[v])
            if config.off_topic_rate > 0 and rng.random() < config.off_topic_rate:
                source = int((source + rng.integers(1, k)) % k)
            lex = config.topic_lexicons[source]
            if j > 0 and rng.random() < 0.3:
                words.append(lexicon.CONNECTORS[int(rng.integers(len(lexicon.CONNECTORS)))])
            words.append(lex[int(rng.integers(len(lex)))])
        texts.append(" ".join(words))

    draws = rng.random((n, n))
    same = topics[:, None] == topics[None, :]
    prob = np.where(same, config.intra_topic_edge_prob, config.inter_topic_edge_prob)
    upper = np.triu(draws < prob, k=1)
    us, vs = np.nonzero(upper)
    edges = [(int(u), int(v)) for u, v in zip(us, vs)]

    names = config.topic_names or [f"topic{t}" for t in range(k)]
    return TextAttributedGraph(num_nodes=n, edges=edges, text_attrs=texts,
                               labels=[int(t) for t in topics], topic_names=list(names))


def sample_neighbors(graph: TextAttributedGraph, v: int, fanout: int,
                     rng: np.random.Generator) -> list[int]:
    """Draw ``fanout`` neighbors of ``v`` uniformly with replacement; isolated nodes sample themselves."""
    if not 0 <= v < graph.num_nodes:
        raise IndexError(f"node {v} is not in 0..{graph.num_nodes - 1}")
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    nbrs = graph.neighbors[v]
    if len(nbrs) == 0:
        return [int(v)] * fanout
    picks = rng.integers(0, len(nbrs), size=fanout)
    return [int(u) for u in nbrs[picks]]


def sample_neighbor_matrix(graph: TextAttributedGraph, fanout: int, rng: np.random.Generator,
                           nodes: Sequence[int] | None = None) -> np.ndarray:
    """Vectorized ``sample_neighbors`` for many nodes; returns an int array of shape (len(nodes), fanout)."""
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    nodes_arr = np.arange(graph.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    offsets, indices = graph.csr
    deg = offsets[nodes_arr + 1] - offsets[nodes_arr]
    u = rng.random((len(nodes_arr), fanout))
    if len(indices) == 0:
        return np.repeat(nodes_arr[:, None], fanout, axis=1)
    pick = np.floor(u * np.maximum(deg, 1)[:, None]).astype(np.int64)
    flat = np.clip(offsets[nodes_arr][:, None] + pick, 0, len(indices) - 1)
    return np.where(deg[:, None] > 0, indices[flat], nodes_arr[:, None]).astype(np.int64)


@dataclass(frozen=True)
class NodeSplit:
    producer_nodes: tuple[int, ...]
    test_nodes: tuple[int, ...]
    valid_nodes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        p, t, va = set(self.producer_nodes), set(self.test_nodes), set(self.valid_nodes)
        if p & t or p & va or t & va:
            raise ValueError("split assignments must be disjoint")

    def to_dict(self) -> dict:
        return {"producer": list(self.producer_nodes), "test": list(self.test_nodes),
                "valid": list(self.valid_nodes)}

    @classmethod
    def from_dict(cls, d: dict) -> "NodeSplit":
        return cls(tuple(d["producer"]), tuple(d["test"]), tuple(d.get("valid", ())))


def split_nodes(graph: TextAttributedGraph, producer_fraction: float, eval_fraction: float,
                seed: int) -> NodeSplit:
    """Seeded disjoint split into producer (alignment) nodes, test nodes, and the remainder."""
    for name, frac in (("producer", producer_fraction), ("eval", eval_fraction)):
        if not 0.0 <= frac <= 1.0:
            raise ConfigError(f"{name} fraction must be in [0, 1], got {frac}")
    if producer_fraction + eval_fraction > 1.0 + 1e-9:
        raise ConfigError("fractions must sum to at most 1")
    n = graph.num_nodes
    n_prod = int(round(producer_fraction * n))
    n_eval = min(int(round(eval_fraction * n)), n - n_prod)
    if n_eval == 0:
        warnings.warn("evaluation split is empty", stacklevel=2)
    perm = np.random.default_rng(seed).permutation(n)
    prod = sorted(int(v) for v in perm[:n_prod])
    test = sorted(int(v) for v in perm[n_prod:n_prod + n_eval])
    rest = sorted(int(v) for v in perm[n_prod + n_eval:])
    return NodeSplit(tuple(prod), tuple(test), tuple(rest))


GRAPH_FORMAT = "tag-v1"


def save_graph(graph: TextAttributedGraph, path: str | Path) -> None:
    lines = [json.dumps({"format": GRAPH_FORMAT, "num_nodes": graph.num_nodes,
                         "topics": graph.topic_names})]
    for i, text in enumerate(graph.text_attrs):
        label = None if graph.labels is None else graph.labels[i]
        lines.append(json.dumps({"type": "node", "id": i, "text": text, "label": label}))
    for u, v in graph.edges:
        lines.append(json.dumps({"type": "edge", "u": u, "v": v}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> TextAttributedGraph:
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    if not raw or not raw[0].strip():
        raise GraphFormatError(f"{path}: line 1: empty file, expected a {GRAPH_FORMAT} header")

    def fail(lineno: int, msg: str) -> GraphFormatError:
        return GraphFormatError(f"{path}: line {lineno}: {msg}")

    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as exc:
        raise fail(1, f"invalid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != GRAPH_FORMAT:
        raise fail(1, f"header must declare format {GRAPH_FORMAT!r}")
    n = header.get("num_nodes")
    if not isinstance(n, int) or n < 1:
        raise fail(1, "num_nodes must be a positive integer")
    topics = header.get("topics")

    texts: list[str | None] = [None] * n
    labels: list[int | None] = [None] * n
    edges: list[tuple[int, int]] = []
    seen_edges: set[tuple[int, int]] = set()
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise fail(lineno, f"invalid JSON ({exc.msg})") from None
        kind = rec.get("type") if isinstance(rec, dict) else None
        if kind == "node":
            i = rec.get("id")
            if not isinstance(i, int) or not 0 <= i < n:
                raise fail(lineno, f"node id {i!r} outside 0..{n - 1}")
            if texts[i] is not None:
                raise fail(lineno, f"duplicate node {i}")
            text = rec.get("text")
            if not isinstance(text, str) or not text.strip():
                raise fail(lineno, f"node {i} has no text")
            texts[i] = text
            labels[i] = rec.get("label")
        elif kind == "edge":
            u, v = rec.get("u"), rec.get("v")
            if not (isinstance(u, int) and isinstance(v, int)):
                raise fail(lineno, "edge endpoints must be integers")
            if not (0 <= u < v < n):
                raise fail(lineno, f"edge ({u}, {v}) must satisfy 0 <= u < v < {n}")
            if (u, v) in seen_edges:
                raise fail(lineno, f"duplicate edge ({u}, {v})")
            seen_edges.add((u, v))
            edges.append((u, v))
        else:
            raise fail(lineno, f"unknown record type {kind!r}")

    missing = [i for i, t in enumerate(texts) if t is None]
    if missing:
        raise GraphFormatError(f"{path}: nodes missing from file: {missing[:10]}")
    has_labels = [lab is not None for lab in labels]
    if any(has_labels) and not all(has_labels):
        raise GraphFormatError(f"{path}: labels must be given for all nodes or none")
    try:
        return TextAttributedGraph(num_nodes=n, edges=edges, text_attrs=texts,  # type: ignore[arg-type]
                                   labels=labels if all(has_labels) else None,  # type: ignore[arg-type]
                                   topic_names=topics)
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None


def save_split(split: NodeSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_dict()) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> NodeSplit:
    return NodeSplit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
