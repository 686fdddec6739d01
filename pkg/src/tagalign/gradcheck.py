"""Finite-difference verification of the analytic gradients of every training loss.

Each check builds a tiny double-precision model, flattens its trainable
parameters into one vector and compares autograd directional derivatives with
central differences along random directions and a few single coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .encoder import SageModel, link_prediction_loss, sage_forward
from .graph import SyntheticTagConfig, generate_synthetic_tag
from .lm import FrozenLm, LmConfig
from .text import CLS_ID, DEC_ID, EOS_ID
from .translator import (AttentionRegime, TranslatorConfig, TranslatorModel, contrastive_loss, encode_queries,
                         generative_loss, matching_loss, stage2_loss)
from .utils import seeded

LOSSES = ("link-pred", "contrastive", "generative", "matching", "stage-2")
VOCAB = 24


@dataclass
class LossProblem:
    """A scalar loss of a list of float64 leaf tensors."""

    params: list[torch.Tensor]
    fn: Callable[[], torch.Tensor]


@dataclass
class GradCheckResult:
    loss: str
    seed: int
    max_rel_error: float
    num_probes: int


@dataclass
class GradCheckReport:
    results: list[GradCheckResult] = field(default_factory=list)
    tolerance: float = 1e-4
    seconds: float = 0.0

    @property
    def worst(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.results:
            out[r.loss] = max(out.get(r.loss, 0.0), r.max_rel_error)
        return out

    @property
    def passed(self) -> bool:
        return all(r.max_rel_error <= self.tolerance for r in self.results)

    def lines(self) -> list[str]:
        counts: dict[str, int] = {}
        for r in self.results:
            counts[r.loss] = counts.get(r.loss, 0) + 1
        return [f"{name:12s} seeds={counts[name]:3d} max_rel_err={err:.3e} "
                f"{'ok' if err <= self.tolerance else 'FAIL'}" for name, err in self.worst.items()]


def _tiny_translator(vocab: int = VOCAB) -> TranslatorModel:
    cfg = TranslatorConfig(vocab_size=vocab, graph_dim=6, num_queries=3, width=8, num_layers=2, num_heads=2,
                           lm_dim=8, max_len=8, ffn_mult=2, dropout=0.0)
    return TranslatorModel(cfg).double()


def _caption(rng: np.random.Generator, b: int, length: int, first: int) -> tuple[torch.Tensor, torch.Tensor]:
    ids = torch.as_tensor(rng.integers(6, VOCAB, size=(b, length)))
    ids[:, 0] = first
    mask = torch.ones(b, length, dtype=torch.bool)
    for row in range(b):
        keep = int(rng.integers(3, length + 1))
        mask[row, keep:] = False
        ids[row, keep:] = 0
    return ids, mask


def _trainable(model: torch.nn.Module) -> list[torch.Tensor]:
    return [p for p in model.parameters() if p.requires_grad]


def _link_pred(seed: int) -> LossProblem:
    rng = np.random.default_rng(seed)
    graph = generate_synthetic_tag(SyntheticTagConfig.from_library(12, 2, 0.5, 0.1, seed=seed))
    x = torch.as_tensor(rng.normal(size=(12, 5)))
    model = SageModel([5, 4, 3], [None, None]).double()
    u = torch.as_tensor(rng.integers(0, 12, size=8))
    v = torch.as_tensor(rng.integers(0, 12, size=8))
    labels = torch.as_tensor(rng.integers(0, 2, size=8)).double()

    def fn() -> torch.Tensor:
        emb = sage_forward(model, graph, x, None, None)
        return link_prediction_loss(emb[u], emb[v], labels)

    return LossProblem(_trainable(model), fn)


def _contrastive(seed: int) -> LossProblem:
    rng = np.random.default_rng(seed)
    model = _tiny_translator()
    z = torch.as_tensor(rng.normal(size=(3, 6)))
    ids, mask = _caption(rng, 3, 6, CLS_ID)

    def fn() -> torch.Tensor:
        h, text = encode_queries(model, z, ids, mask, AttentionRegime.UNIMODAL)
        return contrastive_loss(h, text.cls, model.temperature())

    return LossProblem(_trainable(model), fn)


def _generative(seed: int) -> LossProblem:
    rng = np.random.default_rng(seed)
    model = _tiny_translator()
    z = torch.as_tensor(rng.normal(size=(2, 6)))
    ids, mask = _caption(rng, 2, 6, DEC_ID)
    return LossProblem(_trainable(model), lambda: generative_loss(model, z, ids, mask))


def _matching(seed: int) -> LossProblem:
    rng = np.random.default_rng(seed)
    model = _tiny_translator()
    z = torch.as_tensor(rng.normal(size=(3, 6)))
    ids, mask = _caption(rng, 3, 6, CLS_ID)
    shift = int(rng.integers(1, 3))
    return LossProblem(_trainable(model), lambda: matching_loss(model, z, ids, mask, shift=shift))


def _stage2(seed: int) -> LossProblem:
    rng = np.random.default_rng(seed)
    model = _tiny_translator()
    lm = FrozenLm(LmConfig(vocab_size=VOCAB, width=8, num_layers=1, num_heads=2, max_positions=24,
                           ffn_mult=2)).double().freeze()
    z = torch.as_tensor(rng.normal(size=(2, 6)))
    instruction = torch.as_tensor(rng.integers(6, VOCAB, size=4))
    target, mask = _caption(rng, 2, 5, int(rng.integers(6, VOCAB)))
    for row, n in enumerate(mask.sum(1).tolist()):
        target[row, n - 1] = EOS_ID
    return LossProblem(_trainable(model), lambda: stage2_loss(model, lm, z, instruction, target, mask))


BUILDERS: dict[str, Callable[[int], LossProblem]] = {
    "link-pred": _link_pred,
    "contrastive": _contrastive,
    "generative": _generative,
    "matching": _matching,
    "stage-2": _stage2,
}


def _flat(tensors: list[torch.Tensor]) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for t in tensors])


def _assign(params: list[torch.Tensor], flat: torch.Tensor) -> None:
    offset = 0
    with torch.no_grad():
        for p in params:
            n = p.numel()
            p.copy_(flat[offset:offset + n].view_as(p))
            offset += n


def check_problem(problem: LossProblem, seed: int, eps: float = 1e-6, directions: int = 4, coordinates: int = 4,
                  grad_override: Callable[[torch.Tensor], torch.Tensor] | None = None) -> tuple[float, int]:
    """Max relative error between analytic and central-difference directional derivatives.

    ``grad_override`` replaces the analytic gradient (flat vector) before comparison; it exists so that
    tests can confirm a wrong gradient is reported.
    """
    params = problem.params
    for p in params:
        p.grad = None
    loss = problem.fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grad = _flat([g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)]).detach()
    if grad_override is not None:
        grad = grad_override(grad)
    base = _flat([p.detach() for p in params]).clone()

    gen = torch.Generator().manual_seed(seed)
    probes = [torch.randn(base.numel(), generator=gen, dtype=torch.float64) for _ in range(directions)]
    # Coordinates with a vanishing gradient would only measure difference noise.
    live = torch.nonzero(grad.abs() > 1e-3 * grad.abs().max().clamp_min(1e-12)).flatten()
    for idx in live[torch.randperm(live.numel(), generator=gen)[:coordinates]]:
        e = torch.zeros_like(base)
        e[idx] = 1.0
        probes.append(e)

    worst = 0.0
    try:
        for d in probes:
            with torch.no_grad():
                _assign(params, base + eps * d)
                up = problem.fn().item()
                _assign(params, base - eps * d)
                down = problem.fn().item()
            numeric = (up - down) / (2 * eps)
            analytic = float(grad @ d)
            scale = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / scale)
    finally:
        _assign(params, base)
    return worst, len(probes)


def run_gradcheck(losses: tuple[str, ...] | list[str] = LOSSES, seeds: int = 10, tolerance: float = 1e-4,
                  grad_override: dict[str, Callable[[torch.Tensor], torch.Tensor]] | None = None) -> GradCheckReport:
    unknown = set(losses) - set(BUILDERS)
    if unknown:
        raise ValueError(f"unknown losses: {sorted(unknown)}")
    report = GradCheckReport(tolerance=tolerance)
    start = time.perf_counter()
    for name in losses:
        for seed in range(seeds):
            with seeded(seed):
                problem = BUILDERS[name](seed)
            err, n = check_problem(problem, seed, grad_override=(grad_override or {}).get(name))
            report.results.append(GradCheckResult(name, seed, err, n))
    report.seconds = time.perf_counter() - start
    return report
