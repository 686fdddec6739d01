"""Query-token translator between frozen node embeddings and a frozen language model.

The model keeps ``M`` learnable query tokens and one transformer stack that is
shared by the query branch and the text branch. Queries read the node
embedding through cross-attention on every second block; queries and text
tokens meet only in self-attention, under one of three mask regimes.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .tensorio import load_tensors, save_tensors
from .text import CLS_ID, DEC_ID, EOS_ID, PAD_ID, TokenSequence, Vocabulary, encode
from .utils import TrainingDivergedError, seeded

if TYPE_CHECKING:
    from .lm import FrozenLm
    from .producer import AlignmentPair

log = logging.getLogger(__name__)


class AttentionRegime(str, enum.Enum):
    UNIMODAL = "unimodal"
    BIDIRECTIONAL = "bidirectional"
    MULTIMODAL_CAUSAL = "multimodal-causal"


@dataclass
class TranslatorConfig:
    vocab_size: int
    graph_dim: int = 64
    num_queries: int = 8
    width: int = 64
    num_layers: int = 4
    num_heads: int = 4
    lm_dim: int = 128
    max_len: int = 64
    ffn_mult: int = 4
    cross_attention_every: int = 2
    temperature_init: float = 0.07
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.num_queries < 1:
            raise ValueError("need at least one query token")
        if self.width % self.num_heads:
            raise ValueError(f"width {self.width} is not divisible by {self.num_heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def paper_shape(cls, vocab_size: int, graph_dim: int = 1024) -> "TranslatorConfig":
        return cls(vocab_size=vocab_size, graph_dim=graph_dim, num_queries=32, width=768, num_layers=12,
                   num_heads=12, lm_dim=4096, max_len=512)


class Attention(nn.Module):
    def __init__(self, width: int, num_heads: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = kv_dim or width
        self.num_heads = num_heads
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(kv_dim, width)
        self.v = nn.Linear(kv_dim, width)
        self.o = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, kv: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, sq, d = x.shape
        sk = kv.shape[1]
        h = self.num_heads
        q = self.q(x).view(b, sq, h, d // h).transpose(1, 2)
        k = self.k(kv).view(b, sk, h, d // h).transpose(1, 2)
        v = self.v(kv).view(b, sk, h, d // h).transpose(1, 2)
        attn_mask = None if mask is None else mask[:, None]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        return self.o(out.transpose(1, 2).reshape(b, sq, d))


def _ffn(width: int, mult: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(nn.Linear(width, mult * width), nn.GELU(), nn.Linear(mult * width, width),
                         nn.Dropout(dropout))


class TranslatorBlock(nn.Module):
    def __init__(self, cfg: TranslatorConfig, cross: bool):
        super().__init__()
        d = cfg.width
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = Attention(d, cfg.num_heads)
        self.has_cross = cross
        if cross:
            self.ln_cross = nn.LayerNorm(d)
            self.cross_attn = Attention(d, cfg.num_heads, kv_dim=cfg.graph_dim)
        # Queries and text share attention weights but keep separate feed-forward paths.
        self.ln_query = nn.LayerNorm(d)
        self.ffn_query = _ffn(d, cfg.ffn_mult, cfg.dropout)
        self.ln_text = nn.LayerNorm(d)
        self.ffn_text = _ffn(d, cfg.ffn_mult, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, n_q: int, mask: torch.Tensor, z: torch.Tensor | None) -> torch.Tensor:
        y = self.ln_self(x)
        x = x + self.drop(self.self_attn(y, y, mask))
        q, t = x[:, :n_q], x[:, n_q:]
        if self.has_cross and n_q > 0 and z is not None:
            q = q + self.drop(self.cross_attn(self.ln_cross(q), z[:, None, :]))
        if n_q > 0:
            q = q + self.ffn_query(self.ln_query(q))
        if t.shape[1] > 0:
            t = t + self.ffn_text(self.ln_text(t))
        return torch.cat([q, t], dim=1)


class TranslatorModel(nn.Module):
    def __init__(self, cfg: TranslatorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.width
        self.query_tokens = nn.Parameter(torch.randn(cfg.num_queries, d) * 0.02)
        self.tok_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.max_len, d)
        self.emb_ln = nn.LayerNorm(d)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.graph_ln = nn.LayerNorm(cfg.graph_dim)
        self.blocks = nn.ModuleList(
            TranslatorBlock(cfg, cross=(i + 1) % cfg.cross_attention_every == 0) for i in range(cfg.num_layers)
        )
        self.final_ln = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, cfg.vocab_size)
        self.itm_head = nn.Linear(2 * d, 2)
        self.proj = nn.Linear(d, cfg.lm_dim)
        self.temp = nn.Parameter(torch.tensor(cfg.temperature_init))

    @property
    def cross_attention_blocks(self) -> list[int]:
        """1-based indices of blocks carrying cross-attention."""
        return [i + 1 for i, b in enumerate(self.blocks) if b.has_cross]

    def temperature(self) -> torch.Tensor:
        return self.temp.clamp(0.001, 0.5)

    def _embed_text(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"text length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        pos = torch.arange(ids.shape[1])
        return self.emb_drop(self.emb_ln(self.tok_emb(ids) + self.pos_emb(pos)))

    def run(self, z: torch.Tensor | None, ids: torch.Tensor | None, mask: torch.Tensor | None,
            regime: AttentionRegime | None) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        parts = []
        batch = z.shape[0] if z is not None else ids.shape[0]  # type: ignore[union-attr]
        n_q = 0
        if z is not None:
            if z.dim() != 2 or z.shape[1] != self.cfg.graph_dim:
                raise ValueError(f"node embeddings must have shape (B, {self.cfg.graph_dim}), got {tuple(z.shape)}")
            z = self.graph_ln(z.to(self.query_tokens.dtype))
            n_q = self.cfg.num_queries
            parts.append(self.query_tokens.unsqueeze(0).expand(batch, -1, -1))
        if ids is not None:
            if mask is None:
                mask = (ids != PAD_ID).long()
            parts.append(self._embed_text(ids))
        x = torch.cat(parts, dim=1)
        attn_mask = attention_mask(regime, n_q, mask, batch)
        for block in self.blocks:
            x = block(x, n_q, attn_mask, z)
        x = self.final_ln(x)
        return (x[:, :n_q] if n_q else None), (x[:, n_q:] if ids is not None else None)


def attention_mask(regime: AttentionRegime | str | None, n_q: int, text_mask: torch.Tensor | None,
                   batch: int) -> torch.Tensor:
    """Boolean (B, S, S) mask over [queries ; text], True where attention is allowed."""
    t = 0 if text_mask is None else text_mask.shape[1]
    s = n_q + t
    allowed = torch.zeros(batch, s, s, dtype=torch.bool)
    allowed[:, :n_q, :n_q] = True
    if t:
        keys = text_mask.bool()[:, None, :].expand(batch, t, t)
        allowed[:, n_q:, n_q:] = keys
    if n_q and t:
        if regime is None:
            raise ValueError("an attention regime is required when queries and text are combined")
        regime = AttentionRegime(regime)
        if regime is AttentionRegime.BIDIRECTIONAL:
            allowed[:, :n_q, n_q:] = text_mask.bool()[:, None, :]
            allowed[:, n_q:, :n_q] = True
        elif regime is AttentionRegime.MULTIMODAL_CAUSAL:
            allowed[:, n_q:, :n_q] = True
            causal = torch.tril(torch.ones(t, t, dtype=torch.bool))
            allowed[:, n_q:, n_q:] &= causal
    return allowed


@dataclass
class TextEncoding:
    features: torch.Tensor  # (B, T, d)

    @property
    def cls(self) -> torch.Tensor:
        return self.features[:, 0]


def as_batch(tokens: TokenSequence | Sequence[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
    seqs = [tokens] if isinstance(tokens, TokenSequence) else list(tokens)
    ids = torch.tensor([s.ids for s in seqs], dtype=torch.long)
    mask = torch.tensor([s.mask for s in seqs], dtype=torch.long)
    return ids, mask


def encode_text(model: TranslatorModel, ids: torch.Tensor, mask: torch.Tensor | None = None) -> TextEncoding:
    if ids.dim() != 2:
        raise ValueError("token ids must be (B, T)")
    if not torch.isin(ids[:, 0], torch.tensor([CLS_ID, DEC_ID])).all():
        raise ValueError("text must start with [CLS] or [DEC]")
    _, feats = model.run(None, ids, mask, None)
    return TextEncoding(feats)  # type: ignore[arg-type]


def encode_queries(model: TranslatorModel, z: torch.Tensor, ids: torch.Tensor | None = None,
                   mask: torch.Tensor | None = None, regime: AttentionRegime | str | None = None
                   ) -> tuple[torch.Tensor, TextEncoding | None]:
    """Query outputs ``H`` of shape (B, M, d), plus the text encoding when text is supplied."""
    if ids is not None and regime is None:
        raise ValueError("an attention regime is required when text is supplied")
    h, feats = model.run(z, ids, mask, AttentionRegime(regime) if regime is not None else None)
    return h, (TextEncoding(feats) if feats is not None else None)  # type: ignore[return-value]


def max_cosine_similarity(h: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """S[v, w] = max_i cos(h[v, i], t[w]) for h (B, M, d) and t (B', d)."""
    hn = F.normalize(h, dim=-1)
    tn = F.normalize(t, dim=-1)
    return torch.einsum("bmd,cd->bcm", hn, tn).max(dim=-1).values


def contrastive_loss(h: torch.Tensor, t_cls: torch.Tensor, temperature: torch.Tensor | float) -> torch.Tensor:
    """Symmetric InfoNCE over max-over-queries cosine similarities with diagonal positives."""
    b = h.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    sim = max_cosine_similarity(h, t_cls) / temperature
    target = torch.arange(b)
    return 0.5 * (F.cross_entropy(sim, target) + F.cross_entropy(sim.t(), target))


def _check_caption(ids: torch.Tensor, mask: torch.Tensor) -> None:
    if ids.shape[1] < 2 or (mask.sum(1) < 2).any():
        raise ValueError("captions need at least 2 tokens ([DEC] plus one target)")
    if not (ids[:, 0] == DEC_ID).all():
        raise ValueError("captions must start with [DEC]")


def generative_loss(model: TranslatorModel, z: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Token cross-entropy of the caption given the queries, under the multimodal-causal mask."""
    _check_caption(ids, mask)
    _, text = encode_queries(model, z, ids, mask, AttentionRegime.MULTIMODAL_CAUSAL)
    logits = model.lm_head(text.features[:, :-1])  # type: ignore[union-attr]
    target = ids[:, 1:]
    weight = mask[:, 1:].to(logits.dtype)
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1), reduction="none")
    return (nll * weight.reshape(-1)).sum() / weight.sum()


def average_query_logits(per_query: torch.Tensor) -> torch.Tensor:
    """Collapse (B, M, 2) per-query logits to (B, 2) by averaging over queries."""
    return per_query.mean(dim=1)


def matching_logits(model: TranslatorModel, z: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    h, text = encode_queries(model, z, ids, mask, AttentionRegime.BIDIRECTIONAL)
    t_cls = text.cls[:, None, :].expand(-1, h.shape[1], -1)  # type: ignore[union-attr]
    return average_query_logits(model.itm_head(torch.cat([h, t_cls], dim=-1)))


def matching_loss(model: TranslatorModel, z: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor,
                  shift: int | None = None, generator: torch.Generator | None = None) -> torch.Tensor:
    """Binary match / no-match cross-entropy; negatives pair each node with another in-batch text."""
    b = z.shape[0]
    if b < 2:
        raise ValueError("matching loss needs a batch of at least 2")
    if shift is None:
        shift = int(torch.randint(1, b, (1,), generator=generator))
    if not 1 <= shift < b:
        raise ValueError("negative shift must be in 1..B-1")
    neg = (torch.arange(b) + shift) % b
    z_all = torch.cat([z, z])
    ids_all = torch.cat([ids, ids[neg]])
    mask_all = torch.cat([mask, mask[neg]])
    labels = torch.cat([torch.ones(b, dtype=torch.long), torch.zeros(b, dtype=torch.long)])
    return F.cross_entropy(matching_logits(model, z_all, ids_all, mask_all), labels)


def stage1_losses(model: TranslatorModel, z: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor,
                  generator: torch.Generator | None = None) -> dict[str, torch.Tensor]:
    """The three alignment objectives for one batch; ``ids`` start with [CLS]."""
    h, text = encode_queries(model, z, ids, mask, AttentionRegime.UNIMODAL)
    dec_ids = ids.clone()
    dec_ids[:, 0] = DEC_ID
    return {
        "contrastive": contrastive_loss(h, text.cls, model.temperature()),  # type: ignore[union-attr]
        "generative": generative_loss(model, z, dec_ids, mask),
        "matching": matching_loss(model, z, ids, mask, generator=generator),
    }


def stage1_step(model: TranslatorModel, optimizer: torch.optim.Optimizer,
                microbatches: Sequence[tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
                generator: torch.Generator | None = None) -> dict[str, float]:
    """One optimizer update from accumulated microbatch gradients (summed, divided by their count)."""
    optimizer.zero_grad(set_to_none=True)
    totals = {"contrastive": 0.0, "generative": 0.0, "matching": 0.0}
    n = len(microbatches)
    for z, ids, mask in microbatches:
        losses = stage1_losses(model, z.detach(), ids, mask, generator)
        for name, value in losses.items():
            if not torch.isfinite(value):
                raise TrainingDivergedError(f"stage-1 {name} loss is non-finite ({value.item()})")
            totals[name] += value.item() / n
        (sum(losses.values()) / n).backward()
    optimizer.step()
    return totals


def project_to_lm(model: TranslatorModel, h: torch.Tensor) -> torch.Tensor:
    """Soft prompt: every query output row mapped by the shared linear projection."""
    return model.proj(h)


def soft_prompt(model: TranslatorModel, z: torch.Tensor) -> torch.Tensor:
    h, _ = encode_queries(model, z)
    return project_to_lm(model, h)


def stage2_loss(model: TranslatorModel, lm: "FrozenLm", z: torch.Tensor, instruction_ids: torch.Tensor,
                target_ids: torch.Tensor, target_mask: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of target tokens after [soft prompt ; instruction] through the frozen LM."""
    from .lm import lm_forward

    b = z.shape[0]
    if instruction_ids.dim() == 1:
        instruction_ids = instruction_ids.unsqueeze(0).expand(b, -1)
    soft = soft_prompt(model, z)
    rows = torch.cat([soft, lm.embed_tokens(instruction_ids).to(soft.dtype),
                      lm.embed_tokens(target_ids).to(soft.dtype)], dim=1)
    logits = lm_forward(lm, rows)
    start = soft.shape[1] + instruction_ids.shape[1]
    pred = logits[:, start - 1:-1]
    weight = target_mask.to(pred.dtype)
    nll = F.cross_entropy(pred.reshape(-1, pred.shape[-1]), target_ids.reshape(-1), reduction="none")
    loss = (nll * weight.reshape(-1)).sum() / weight.sum()
    return loss


# --- training loops -------------------------------------------------------------------------


@dataclass
class StageTrainConfig:
    epochs: int = 10
    batch_size: int = 16
    accumulation: int = 1
    lr: float = 1e-3
    weight_decay: float = 0.05
    seed: int = 0


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)

    def last(self) -> dict:
        return self.steps[-1] if self.steps else {}


def caption_tokens(vocab: Vocabulary, pairs: Sequence["AlignmentPair"], max_len: int
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    return as_batch([encode(vocab, p.t_full, max_len, prepend="[CLS]") for p in pairs])


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # Contrastive and matching losses need in-batch negatives.
    return [b for b in batches if len(b) >= 2]


def train_stage1(model: TranslatorModel, pairs: Sequence["AlignmentPair"], embeddings: np.ndarray,
                 vocab: Vocabulary, cfg: StageTrainConfig) -> TrainHistory:
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    ids, mask = caption_tokens(vocab, pairs, model.cfg.max_len)
    z_all = torch.from_numpy(np.stack([embeddings[p.embedding_ref] for p in pairs])).float()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = TrainHistory()
    model.train()
    for epoch in range(cfg.epochs):
        batches = _epoch_batches(len(pairs), cfg.batch_size, rng)
        for start in range(0, len(batches), cfg.accumulation):
            group = batches[start:start + cfg.accumulation]
            micro = [(z_all[b], _trim(ids[b], mask[b])[0], _trim(ids[b], mask[b])[1]) for b in group]
            losses = stage1_step(model, opt, micro, gen)
            history.steps.append({"epoch": epoch, **losses})
        log.info("stage1 epoch %d %s", epoch, history.last())
    model.eval()
    return history


def _trim(ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Drop trailing all-pad columns (saves compute; outputs are unchanged by masking)."""
    keep = int(mask.sum(1).max())
    return ids[:, :keep], mask[:, :keep]


def stage2_targets(vocab: Vocabulary, pairs: Sequence["AlignmentPair"], max_len: int
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    seqs = []
    for p in pairs:
        ids = vocab.ids(p.t_full)[: max_len - 1] + [EOS_ID]
        seqs.append(TokenSequence(tuple(ids) + (PAD_ID,) * (max_len - len(ids)),
                                  (1,) * len(ids) + (0,) * (max_len - len(ids))))
    return as_batch(seqs)


def train_stage2(model: TranslatorModel, lm: "FrozenLm", pairs: Sequence["AlignmentPair"],
                 embeddings: np.ndarray, vocab: Vocabulary, instruction: str, cfg: StageTrainConfig,
                 target_len: int = 64) -> TrainHistory:
    rng = np.random.default_rng(cfg.seed)
    tgt_ids, tgt_mask = stage2_targets(vocab, pairs, target_len)
    instr = torch.tensor(vocab.ids(instruction), dtype=torch.long)
    z_all = torch.from_numpy(np.stack([embeddings[p.embedding_ref] for p in pairs])).float()
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = TrainHistory()
    model.train()
    for epoch in range(cfg.epochs):
        batches = [b for b in np.array_split(rng.permutation(len(pairs)),
                                             max(1, math.ceil(len(pairs) / cfg.batch_size)))]
        for start in range(0, len(batches), cfg.accumulation):
            group = batches[start:start + cfg.accumulation]
            opt.zero_grad(set_to_none=True)
            total = 0.0
            for b in group:
                ids, mask = _trim(tgt_ids[b], tgt_mask[b])
                loss = stage2_loss(model, lm, z_all[b], instr, ids, mask)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"stage-2 loss is non-finite ({loss.item()})")
                (loss / len(group)).backward()
                total += loss.item() / len(group)
            opt.step()
            history.steps.append({"epoch": epoch, "stage2": total})
        log.info("stage2 epoch %d %s", epoch, history.last())
    model.eval()
    return history


def retrieval_recall_at_1(model: TranslatorModel, pairs: Sequence["AlignmentPair"], embeddings: np.ndarray,
                          vocab: Vocabulary, batch_size: int = 16) -> float:
    """Node-to-text recall@1 within consecutive batches, using max-over-queries cosine similarity."""
    ids, mask = caption_tokens(vocab, pairs, model.cfg.max_len)
    z_all = torch.from_numpy(np.stack([embeddings[p.embedding_ref] for p in pairs])).float()
    hits, total = 0, 0
    with torch.no_grad():
        for start in range(0, len(pairs) - batch_size + 1, batch_size):
            sl = slice(start, start + batch_size)
            h, text = encode_queries(model, z_all[sl], ids[sl], mask[sl], AttentionRegime.UNIMODAL)
            sim = max_cosine_similarity(h, text.cls)  # type: ignore[union-attr]
            hits += int((sim.argmax(dim=1) == torch.arange(batch_size)).sum())
            total += batch_size
    if total == 0:
        raise ValueError(f"need at least {batch_size} pairs for retrieval")
    return hits / total


# --- checkpoints ----------------------------------------------------------------------------

_GROUPS = {
    "queries": ("query_tokens",),
    "projection": ("proj.",),
    "heads": ("lm_head.", "itm_head.", "temp"),
}


def _group_of(name: str) -> str:
    for group, prefixes in _GROUPS.items():
        if any(name == p or name.startswith(p) for p in prefixes):
            return group
    return "stack"


def save_checkpoint(model: TranslatorModel, path: str | Path, stage: int, vocab: Vocabulary,
                    extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    groups: dict[str, dict[str, torch.Tensor]] = {}
    for name, tensor in model.state_dict().items():
        groups.setdefault(_group_of(name), {})[name] = tensor
    for group, tensors in sorted(groups.items()):
        save_tensors(tensors, path / f"{group}.bin")
    manifest = {"format": "ckpt-v1", "stage": stage, "config": asdict(model.cfg), "vocab_hash": vocab.digest,
                "groups": sorted(groups), **(extra or {})}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None) -> tuple[TranslatorModel, dict]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no translator checkpoint at {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "ckpt-v1":
        raise ValueError(f"{path}: not a ckpt-v1 checkpoint")
    if vocab is not None and manifest["vocab_hash"] != vocab.digest:
        raise ValueError(f"{path}: checkpoint was trained with a different vocabulary")
    with seeded(0):
        model = TranslatorModel(TranslatorConfig(**manifest["config"]))
    state: dict[str, torch.Tensor] = {}
    for group in manifest["groups"]:
        state.update(load_tensors(path / f"{group}.bin"))
    model.load_state_dict(state)
    model.eval()
    return model, manifest
