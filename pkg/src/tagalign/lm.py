"""Tiny decoder-only language model that stands in for the frozen LLM.

It is pretrained once on a synthetic corpus mixing topical sentences,
bracket-answer questions and summary-style completions, then frozen. Inputs
are rows of width ``d_llm`` so projected soft-prompt rows and embedded tokens
are interchangeable.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import lexicon, prompts
from .producer import SummarizerBackend, describe_node
from .tensorio import load_tensors, save_tensors
from .text import EOS_ID, PAD_ID, Vocabulary
from .utils import TrainingDivergedError, params_checksum, seeded

log = logging.getLogger(__name__)


class FrozenModelError(RuntimeError):
    """Raised on any attempt to modify a frozen model."""


@dataclass
class LmConfig:
    vocab_size: int
    width: int = 128
    num_layers: int = 4
    num_heads: int = 4
    max_positions: int = 160
    ffn_mult: int = 4

    def __post_init__(self) -> None:
        if self.width % self.num_heads:
            raise ValueError("width must be divisible by num_heads")

    @classmethod
    def paper_shape(cls, vocab_size: int = 65024) -> "LmConfig":
        # Recorded for reference only; far beyond desk scale.
        return cls(vocab_size=vocab_size, width=4096, num_layers=28, num_heads=32, max_positions=32768,
                   ffn_mult=4)


class CausalBlock(nn.Module):
    def __init__(self, width: int, num_heads: int, ffn_mult: int):
        super().__init__()
        self.num_heads = num_heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.ffn = nn.Sequential(nn.Linear(width, ffn_mult * width), nn.GELU(), nn.Linear(ffn_mult * width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        h = self.num_heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q, k, v = (t.view(b, s, h, d // h).transpose(1, 2) for t in (q, k, v))
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.out(attn.transpose(1, 2).reshape(b, s, d))
        return x + self.ffn(self.ln2(x))


class FrozenLm(nn.Module):
    def __init__(self, cfg: LmConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.width)
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        self.pos_emb = nn.Embedding(cfg.max_positions, cfg.width)
        nn.init.normal_(self.pos_emb.weight, std=0.02)
        self.blocks = nn.ModuleList(CausalBlock(cfg.width, cfg.num_heads, cfg.ffn_mult)
                                    for _ in range(cfg.num_layers))
        self.final_ln = nn.LayerNorm(cfg.width)
        # Output head is tied to tok_emb; only a bias is separate.
        self.out_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "FrozenLm":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self._frozen = True
        return self

    def requires_grad_(self, requires_grad: bool = True) -> "FrozenLm":
        if self._frozen and requires_grad:
            raise FrozenModelError("the language model is frozen")
        return super().requires_grad_(requires_grad)

    def load_state_dict(self, state_dict, strict: bool = True, assign: bool = False):
        if self._frozen:
            raise FrozenModelError("cannot load parameters into a frozen language model")
        return super().load_state_dict(state_dict, strict=strict, assign=assign)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_emb(ids)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if rows.shape[-1] != self.cfg.width:
            raise ValueError(f"input rows have width {rows.shape[-1]}, the LM expects {self.cfg.width}")
        if rows.shape[1] > self.cfg.max_positions:
            raise ValueError(f"sequence of {rows.shape[1]} rows exceeds {self.cfg.max_positions} positions")
        x = rows + self.pos_emb(torch.arange(rows.shape[1])).to(rows.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.final_ln(x)
        return x @ self.tok_emb.weight.t().to(x.dtype) + self.out_bias.to(x.dtype)

    def checksum(self) -> str:
        return params_checksum(self)


def lm_forward(lm: FrozenLm, rows: torch.Tensor) -> torch.Tensor:
    """Per-position vocabulary logits for (B, S, d_llm) or (S, d_llm) input rows under a causal mask."""
    squeeze = rows.dim() == 2
    logits = lm(rows.unsqueeze(0) if squeeze else rows)
    return logits[0] if squeeze else logits


@torch.no_grad()
def generate(lm: FrozenLm, prefix_rows: torch.Tensor, max_new_tokens: int, decode: str = "greedy",
             top_k: int = 5, seed: int = 0) -> list[int]:
    """Autoregressive continuation of ``prefix_rows``; stops after [EOS] or ``max_new_tokens`` tokens."""
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    if decode not in ("greedy", "top-k"):
        raise ValueError(f"unknown decoding {decode!r}")
    rows = prefix_rows if prefix_rows.dim() == 2 else prefix_rows[0]
    gen = torch.Generator().manual_seed(seed)
    out: list[int] = []
    for _ in range(max_new_tokens):
        if rows.shape[0] >= lm.cfg.max_positions:
            break
        logits = lm_forward(lm, rows)[-1]
        if decode == "greedy":
            tok = int(torch.argmax(logits))  # first maximum, i.e. the lowest id on ties
        else:
            vals, idx = torch.topk(logits, min(top_k, logits.shape[0]))
            tok = int(idx[torch.multinomial(F.softmax(vals.double(), -1), 1, generator=gen)])
        out.append(tok)
        if tok == EOS_ID:
            break
        rows = torch.cat([rows, lm.embed_tokens(torch.tensor([tok])).to(rows.dtype)])
    return out


# --- corpus -----------------------------------------------------------------------------------


@dataclass
class LmCorpusConfig:
    topic_lexicons: list[list[str]]
    topic_names: list[str]
    num_lines: int = 6000
    seed: int = 0
    phrases_per_description: tuple[int, int] = (3, 8)
    off_topic_rate: float = 0.15
    # Mixture over line kinds: plain topical sentence, bracket-answer question, summary completion.
    mix: tuple[float, float, float] = (0.2, 0.4, 0.4)
    neighbor_count: int = 10

    def validate(self) -> None:
        if len(self.topic_lexicons) != len(self.topic_names):
            raise ValueError("one topic name per lexicon is required")
        if self.num_lines < len(self.topic_names):
            raise ValueError("num_lines must allow every topic to appear in an answer")
        if abs(sum(self.mix) - 1.0) > 1e-9 or min(self.mix) < 0 or self.mix[1] == 0:
            raise ValueError("mix must be a probability vector with a positive question share")


def _description(rng: np.random.Generator, cfg: LmCorpusConfig, topic: int) -> str:
    lo, hi = cfg.phrases_per_description
    k = len(cfg.topic_lexicons)
    words: list[str] = []
    for j in range(int(rng.integers(lo, hi + 1))):
        src = topic
        if k > 1 and rng.random() < cfg.off_topic_rate:
            src = int((topic + rng.integers(1, k)) % k)
        if j > 0 and rng.random() < 0.3:
            words.append(lexicon.CONNECTORS[int(rng.integers(len(lexicon.CONNECTORS)))])
        lex = cfg.topic_lexicons[src]
        words.append(lex[int(rng.integers(len(lex)))])
    return " ".join(words)


def generate_lm_corpus(cfg: LmCorpusConfig) -> list[str]:
    """Seeded synthetic corpus; every topic id is the answer of at least one question line."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    k = len(cfg.topic_names)
    question = prompts.render_zeroshot_prompt(cfg.topic_names)
    template = SummarizerBackend("template")
    kinds = rng.choice(3, size=cfg.num_lines, p=list(cfg.mix))
    # Force the first k question slots to cycle through all topics.
    q_slots = np.flatnonzero(kinds == 1)
    if len(q_slots) < k:
        kinds[:k] = 1
        q_slots = np.flatnonzero(kinds == 1)
    lines: list[str] = []
    q_seen = 0
    for kind in kinds:
        if kind == 1 and q_seen < k:
            topic = q_seen
        else:
            topic = int(rng.integers(k))
        desc = _description(rng, cfg, topic)
        if kind == 0:
            lines.append(desc)
        elif kind == 1:
            q_seen += 1
            lines.append(f"{desc} {question} {prompts.answer_token(topic)}")
        else:
            nbr_topics = [topic if rng.random() < 0.8 else int(rng.integers(k)) for _ in range(cfg.neighbor_count)]
            nbr_texts = [_description(rng, cfg, t) for t in nbr_topics]
            pair = describe_node(0, desc, nbr_texts, template)
            lines.append(f"{desc} {prompts.STAGE2_INSTRUCTION} {pair.t_full}")
    return lines


def vocabulary_corpus(topic_lexicons: Sequence[Sequence[str]], topic_names: Sequence[str]) -> list[str]:
    """Strings guaranteeing that every token the pipeline emits is in the shared vocabulary."""
    words = [w for lex in topic_lexicons for w in lex]
    template = SummarizerBackend("template")
    pair = describe_node(0, " ".join(words), [" ".join(words)], template)
    return [
        " ".join(words),
        " ".join(lexicon.CONNECTORS),
        prompts.STAGE2_INSTRUCTION,
        prompts.render_zeroshot_prompt(list(topic_names)),
        " ".join(prompts.answer_token(i) for i in range(len(topic_names))),
        pair.t_full,
        "Common themes: none.",
    ]


# --- pretraining ------------------------------------------------------------------------------


@dataclass
class LmTrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 0.01
    warmup: int = 100
    seed: int = 0
    held_out_fraction: float = 0.05


@dataclass
class LmTrainResult:
    lm: FrozenLm
    train_loss: float
    held_out_loss: float
    history: list[dict] = field(default_factory=list)

    @property
    def perplexity(self) -> float:
        return math.exp(self.train_loss)


def _pack(vocab: Vocabulary, lines: Sequence[str], max_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    seqs = [(vocab.ids(line) + [EOS_ID])[:max_len] for line in lines]
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s)
        mask[i, : len(s)] = 1
    return ids, mask


def next_token_loss(lm: FrozenLm, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    logits = lm_forward(lm, lm.embed_tokens(ids))[:, :-1]
    weight = mask[:, 1:].to(logits.dtype)
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), ids[:, 1:].reshape(-1), reduction="none")
    return (nll * weight.reshape(-1)).sum() / weight.sum()


def evaluate_lm(lm: FrozenLm, vocab: Vocabulary, lines: Sequence[str], batch_size: int = 64) -> float:
    total, count = 0.0, 0.0
    with torch.no_grad():
        for start in range(0, len(lines), batch_size):
            ids, mask = _pack(vocab, lines[start:start + batch_size], lm.cfg.max_positions)
            n = float(mask[:, 1:].sum())
            total += next_token_loss(lm, ids, mask).item() * n
            count += n
    return total / count


def pretrain_lm(corpus: Sequence[str], vocab: Vocabulary, lm_cfg: LmConfig, train_cfg: LmTrainConfig) -> LmTrainResult:
    """Next-token pretraining on ``corpus``; the returned model is frozen."""
    rng = np.random.default_rng(train_cfg.seed)
    order = rng.permutation(len(corpus))
    n_held = max(1, int(round(train_cfg.held_out_fraction * len(corpus))))
    held = [corpus[i] for i in order[:n_held]]
    train = [corpus[i] for i in order[n_held:]]
    with seeded(train_cfg.seed):
        lm = FrozenLm(lm_cfg)
    opt = torch.optim.AdamW(lm.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)

    def lr_at(step: int) -> float:
        if step < train_cfg.warmup:
            return (step + 1) / train_cfg.warmup
        frac = (step - train_cfg.warmup) / max(1, train_cfg.steps - train_cfg.warmup)
        return 0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac))

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_at)
    history: list[dict] = []
    running = float("nan")
    lm.train()
    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(train), size=train_cfg.batch_size)
        ids, mask = _pack(vocab, [train[i] for i in idx], lm_cfg.max_positions)
        loss = next_token_loss(lm, ids, mask)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"LM loss became {loss.item()} at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(lm.parameters(), 1.0)
        opt.step()
        sched.step()
        running = loss.item() if step == 0 else 0.98 * running + 0.02 * loss.item()
        if step % 100 == 0 or step == train_cfg.steps - 1:
            history.append({"step": step, "loss": running})
            log.info("lm step %d loss %.4f", step, running)
    lm.freeze()
    held_loss = evaluate_lm(lm, vocab, held)
    train_loss = evaluate_lm(lm, vocab, train[:500])
    log.info("lm pretraining done: train perplexity %.3f, held-out loss %.4f", math.exp(train_loss), held_loss)
    return LmTrainResult(lm=lm, train_loss=train_loss, held_out_loss=held_loss, history=history)


def save_lm(lm: FrozenLm, path: str | Path, vocab: Vocabulary, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_tensors(lm.state_dict(), path / "lm.bin")
    manifest = {"format": "ckpt-v1", "kind": "lm-v1", "config": asdict(lm.cfg), "vocab_hash": vocab.digest,
                "frozen": lm.frozen, **(extra or {})}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_lm(path: str | Path, vocab: Vocabulary | None = None) -> FrozenLm:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no language model checkpoint at {path}")
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("kind") != "lm-v1":
        raise ValueError(f"{path}: not an lm-v1 checkpoint")
    if vocab is not None and manifest["vocab_hash"] != vocab.digest:
        raise ValueError(f"{path}: LM was trained with a different vocabulary")
    with seeded(0):
        lm = FrozenLm(LmConfig(**manifest["config"]))
    lm.load_state_dict(load_tensors(path / "lm.bin"))
    return lm.freeze()
