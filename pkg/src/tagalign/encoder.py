"""GraphSAGE node encoder: bag-of-words features, mean-aggregator forward pass, link-prediction pretraining."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graph import TextAttributedGraph, sample_neighbor_matrix
from .utils import TrainingDivergedError, seeded

log = logging.getLogger(__name__)


@dataclass
class FeatureMatrix:
    vocab: list[str]
    values: np.ndarray  # (num_nodes, len(vocab)), rows sum to 1 unless no token is in vocab

    @property
    def dim(self) -> int:
        return len(self.vocab)


def build_bow_features(graph: TextAttributedGraph, max_vocab: int) -> FeatureMatrix:
    """Row-normalized token counts over the ``max_vocab`` most frequent lowercase whitespace tokens."""
    if max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    docs = [text.lower().split() for text in graph.text_attrs]
    counts: Counter[str] = Counter(tok for doc in docs for tok in doc)
    vocab = [tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_vocab]]
    index = {tok: i for i, tok in enumerate(vocab)}
    values = np.zeros((graph.num_nodes, len(vocab)), dtype=np.float64)
    for row, doc in enumerate(docs):
        for tok in doc:
            j = index.get(tok)
            if j is not None:
                values[row, j] += 1.0
    sums = values.sum(axis=1, keepdims=True)
    np.divide(values, sums, out=values, where=sums > 0)
    return FeatureMatrix(vocab=vocab, values=values)


class SageModel(nn.Module):
    """Stack of mean-aggregator GraphSAGE layers; ``W^k`` maps concat(self, neighbor mean) to the next width."""

    def __init__(self, dims: Sequence[int], fanouts: Sequence[int | None], activation: str = "relu"):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("dims needs an input width and at least one layer width")
        if len(fanouts) != len(dims) - 1:
            raise ValueError("need one fanout per layer")
        self.dims = list(dims)
        self.fanouts = list(fanouts)
        self.activation = activation
        self.layers = nn.ModuleList(
            nn.Linear(2 * d_in, d_out, bias=False) for d_in, d_out in zip(dims[:-1], dims[1:])
        )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def _act(self, h: torch.Tensor) -> torch.Tensor:
        if self.activation == "relu":
            return F.relu(h)
        if self.activation == "identity":
            return h
        raise ValueError(f"unknown activation {self.activation!r}")


def _neighbor_mean(graph: TextAttributedGraph, h: torch.Tensor, fanout: int | None,
                   rng: np.random.Generator) -> torch.Tensor:
    if fanout is None:
        # Exact mean over the full neighborhood (deterministic); isolated nodes fall back to themselves.
        out = torch.empty_like(h)
        for v, nbrs in enumerate(graph.neighbors):
            out[v] = h[torch.from_numpy(nbrs)].mean(0) if len(nbrs) else h[v]
        return out
    idx = torch.from_numpy(sample_neighbor_matrix(graph, fanout, rng))
    return h[idx].mean(1)


def sage_forward(model: SageModel, graph: TextAttributedGraph, features: torch.Tensor | np.ndarray,
                 batch: Sequence[int] | None, rng: np.random.Generator) -> torch.Tensor:
    """Layer-K embeddings for ``batch`` (all nodes when None), resampling neighborhoods per layer."""
    h = torch.as_tensor(features)
    if h.dtype != model.layers[0].weight.dtype:
        h = h.to(model.layers[0].weight.dtype)
    if h.shape != (graph.num_nodes, model.dims[0]):
        raise ValueError(f"features have shape {tuple(h.shape)}, expected ({graph.num_nodes}, {model.dims[0]})")
    for k, (layer, fanout) in enumerate(zip(model.layers, model.fanouts)):
        agg = _neighbor_mean(graph, h, fanout, rng)
        h = layer(torch.cat([h, agg], dim=1))
        if k < model.num_layers - 1:
            h = model._act(h)
    if batch is None:
        return h
    return h[torch.as_tensor(list(batch), dtype=torch.long)]


def link_prediction_loss(emb_u: torch.Tensor, emb_v: torch.Tensor, labels: torch.Tensor | float) -> torch.Tensor:
    """Mean binary cross-entropy of sigmoid(<u, v>) against 1 (edge) / 0 (non-edge)."""
    if emb_u.shape != emb_v.shape:
        raise ValueError(f"embedding shapes differ: {tuple(emb_u.shape)} vs {tuple(emb_v.shape)}")
    if torch.isnan(emb_u).any() or torch.isnan(emb_v).any():
        raise ValueError("NaN in link-prediction inputs")
    logits = (emb_u * emb_v).sum(-1)
    target = torch.as_tensor(labels, dtype=logits.dtype).expand_as(logits)
    return F.binary_cross_entropy_with_logits(logits, target)


def sample_non_edges(graph: TextAttributedGraph, count: int, rng: np.random.Generator,
                     exclude: set[tuple[int, int]] | None = None) -> np.ndarray:
    """Uniform node pairs (u < v) that are not edges of ``graph`` nor in ``exclude``."""
    edge_set = set(graph.edges) | (exclude or set())
    n = graph.num_nodes
    if n * (n - 1) // 2 - len(edge_set) < count:
        raise ValueError("graph too dense to draw the requested negatives")
    out: list[tuple[int, int]] = []
    while len(out) < count:
        cand = rng.integers(0, n, size=(2 * (count - len(out)) + 8, 2))
        for u, v in cand:
            if u == v:
                continue
            key = (int(min(u, v)), int(max(u, v)))
            if key not in edge_set:
                out.append(key)
                if len(out) == count:
                    break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass
class GmTrainConfig:
    hidden_dims: tuple[int, ...] = (64, 64)
    fanout: int = 10
    epochs: int = 30
    lr: float = 0.01
    weight_decay: float = 0.0
    batch_edges: int = 512
    val_fraction: float = 0.1
    seed: int = 0
    embed_seed: int = 0
    max_vocab: int = 512


@dataclass
class GmTrainResult:
    model: SageModel
    embeddings: np.ndarray
    history: list[dict] = field(default_factory=list)
    val_accuracy: float = float("nan")
    num_val_pairs: int = 0


def pretrain_gm(graph: TextAttributedGraph, features: FeatureMatrix, config: GmTrainConfig) -> GmTrainResult:
    """Link-prediction pretraining; returns the frozen model and its materialized embedding table."""
    rng = np.random.default_rng(config.seed)
    x = torch.as_tensor(features.values, dtype=torch.float32)
    dims = [features.dim, *config.hidden_dims]
    with seeded(config.seed):
        model = SageModel(dims, [config.fanout] * len(config.hidden_dims))

    edges = np.array(graph.edges, dtype=np.int64).reshape(-1, 2)
    perm = rng.permutation(len(edges))
    n_val = int(round(config.val_fraction * len(edges)))
    val_pos, train_pos = edges[perm[:n_val]], edges[perm[n_val:]]
    train_graph = TextAttributedGraph(graph.num_nodes, [tuple(e) for e in train_pos.tolist()],
                                      graph.text_attrs)
    val_neg = sample_non_edges(graph, n_val, rng) if n_val else np.zeros((0, 2), dtype=np.int64)
    val_pairs = np.concatenate([val_pos, val_neg])
    val_labels = np.concatenate([np.ones(len(val_pos)), np.zeros(len(val_neg))])
    held_out = {tuple(e) for e in val_pos.tolist()}

    opt = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    history: list[dict] = []
    val_acc = float("nan")
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(train_pos))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_edges):
            pos = train_pos[order[start:start + config.batch_edges]]
            neg = sample_non_edges(graph, len(pos), rng, exclude=held_out)
            pairs = np.concatenate([pos, neg])
            labels = torch.cat([torch.ones(len(pos)), torch.zeros(len(neg))])
            h = sage_forward(model, train_graph, x, None, rng)
            pairs_t = torch.from_numpy(pairs)
            loss = link_prediction_loss(h[pairs_t[:, 0]], h[pairs_t[:, 1]], labels)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"link-prediction loss became {loss.item()} at epoch {epoch}; "
                                            f"try a smaller lr (currently {config.lr})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        val_acc = _link_accuracy(model, train_graph, x, val_pairs, val_labels, rng)
        history.append({"epoch": epoch, "loss": total / max(batches, 1), "val_accuracy": val_acc})
        log.info("gm epoch %d loss %.4f val_acc %.4f", epoch, history[-1]["loss"], val_acc)

    if config.epochs == 0 and len(val_pairs):
        val_acc = _link_accuracy(model, train_graph, x, val_pairs, val_labels, rng)
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    table = embed_all(model, graph, x, config.embed_seed)
    return GmTrainResult(model=model, embeddings=table, history=history, val_accuracy=val_acc,
                         num_val_pairs=len(val_pairs))


def _link_accuracy(model: SageModel, graph: TextAttributedGraph, x: torch.Tensor, pairs: np.ndarray,
                   labels: np.ndarray, rng: np.random.Generator) -> float:
    if len(pairs) == 0:
        return float("nan")
    with torch.no_grad():
        h = sage_forward(model, graph, x, None, rng)
        scores = (h[pairs[:, 0]] * h[pairs[:, 1]]).sum(-1).numpy()
    return float(np.mean((scores > 0) == (labels > 0.5)))


def embed_all(model: SageModel, graph: TextAttributedGraph, features: torch.Tensor | np.ndarray,
              seed: int) -> np.ndarray:
    """Materialize the embedding table with one fixed sampling seed."""
    with torch.no_grad():
        h = sage_forward(model, graph, torch.as_tensor(features, dtype=torch.float32), None,
                         np.random.default_rng(seed))
    table = h.numpy().astype(np.float32)
    if not np.all(np.isfinite(table)):
        raise TrainingDivergedError("embedding table contains non-finite values")
    return table
