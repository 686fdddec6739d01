"""Zero-shot node classification protocol, metrics, stage ablation and the multi-turn chat loop."""

from __future__ import annotations

import json
import logging
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
import torch

from . import prompts
from .lm import FrozenLm, generate, lm_forward
from .text import EOS_ID, Vocabulary
from .translator import TranslatorModel, soft_prompt

log = logging.getLogger(__name__)

_BRACKET_RE = re.compile(r"\[\s*(\d+)\s*\]")


@dataclass
class PredictionRecord:
    node: int
    response: str
    pred: int | None
    gold: int
    ranked: list[int]

    def to_json(self) -> dict:
        return {"node": self.node, "response": self.response, "pred": self.pred, "gold": self.gold,
                "ranked": self.ranked}


@dataclass
class MetricsReport:
    legality_rate: float
    accuracy: float
    recall: float
    macro_f1: float
    topk: dict[int, float]
    n_total: int
    n_legal: int
    recall_mode: str = "multiclass"
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.n_legal > self.n_total:
            raise ValueError("n_legal cannot exceed n_total")
        ks = sorted(self.topk)
        for a, b in zip(ks, ks[1:]):
            if self.topk[a] > self.topk[b] + 1e-12:
                raise ValueError("top-k accuracy must be non-decreasing in k")

    @property
    def top1(self) -> float:
        return self.topk.get(1, self.accuracy)

    def to_json(self) -> dict:
        d = asdict(self)
        d["topk"] = {str(k): v for k, v in sorted(self.topk.items())}
        return d


def extract_label(response: str, num_labels: int) -> int | None:
    """0-based label from the first bracketed integer of ``response``; None when absent or out of range."""
    if num_labels < 2:
        raise ValueError("need at least two labels")
    m = _BRACKET_RE.search(response)
    if m is None:
        return None
    k = int(m.group(1))
    return k - 1 if 1 <= k <= num_labels else None


def legality_rate(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise ValueError("no prediction records")
    return sum(r.pred is not None for r in records) / len(records)


def classification_metrics(records: Sequence[PredictionRecord], num_labels: int, mode: str = "multiclass",
                           positive_label: int = 1) -> tuple[float, float, float, list[str]]:
    """Accuracy, recall and macro-F1 with illegal responses counted as a separate wrong prediction.

    ``mode`` selects the recall definition: positive-class recall ("binary") or
    macro-recall over gold classes ("multiclass").
    """
    if mode not in ("binary", "multiclass"):
        raise ValueError(f"unknown recall mode {mode!r}")
    if not records:
        raise ValueError("no prediction records")
    warnings: list[str] = []
    if all(r.pred is None for r in records):
        warnings.append("no legal predictions")
    illegal = num_labels
    gold = np.array([r.gold for r in records])
    pred = np.array([illegal if r.pred is None else r.pred for r in records])
    conf = np.zeros((num_labels, num_labels + 1), dtype=np.int64)
    np.add.at(conf, (gold, pred), 1)
    tp = np.diag(conf[:, :num_labels]).astype(float)
    predicted = conf[:, :num_labels].sum(0).astype(float)
    actual = conf.sum(1).astype(float)
    accuracy = float(tp.sum() / len(records))
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    rec = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + rec
    f1 = np.divide(2 * precision * rec, denom, out=np.zeros_like(tp), where=denom > 0)
    present = actual > 0
    macro_f1 = float(f1[present].mean())
    if mode == "binary":
        recall = float(rec[positive_label]) if present[positive_label] else 0.0
    else:
        recall = float(rec[present].mean())
    return accuracy, recall, macro_f1, warnings


def topk_accuracy(records: Sequence[PredictionRecord], ks: Iterable[int]) -> dict[int, float]:
    if not records:
        raise ValueError("no prediction records")
    out = {}
    for k in ks:
        if k < 1:
            raise ValueError("k must be >= 1")
        hits = sum(r.gold in r.ranked[: min(k, len(r.ranked))] for r in records)
        out[k] = hits / len(records)
    return out


def metrics_report(records: Sequence[PredictionRecord], num_labels: int, ks: Sequence[int] = (1, 3, 5),
                   mode: str = "multiclass") -> MetricsReport:
    acc, recall, f1, warns = classification_metrics(records, num_labels, mode)
    legal = sum(r.pred is not None for r in records)
    return MetricsReport(legality_rate=legality_rate(records), accuracy=acc, recall=recall, macro_f1=f1,
                         topk=topk_accuracy(records, ks), n_total=len(records), n_legal=legal,
                         recall_mode=mode, warnings=warns)


# --- pipeline-level evaluation --------------------------------------------------------------


@dataclass
class ZeroShotPipeline:
    """Frozen pieces needed to answer questions about a node."""

    translator: TranslatorModel
    lm: FrozenLm
    vocab: Vocabulary
    embeddings: np.ndarray

    def soft_prompt(self, node: int) -> torch.Tensor:
        if not 0 <= node < len(self.embeddings):
            raise KeyError(f"unknown node id {node}")
        z = torch.from_numpy(np.asarray(self.embeddings[node : node + 1], dtype=np.float32))
        with torch.no_grad():
            return soft_prompt(self.translator, z)[0]

    def embed(self, ids: Sequence[int]) -> torch.Tensor:
        with torch.no_grad():
            return self.lm.embed_tokens(torch.tensor(list(ids), dtype=torch.long))


def build_zeroshot_prompt(vocab: Vocabulary, labels: Sequence[str],
                          template: str = prompts.QUESTION_TEMPLATE) -> list[int]:
    return vocab.ids(prompts.render_zeroshot_prompt(labels, template))


def rank_labels(pipeline: ZeroShotPipeline | None, node: int, labels: Sequence[str],
                prefix_rows: torch.Tensor | None = None) -> list[int]:
    """Label ids sorted by mean log-likelihood of the completion ``[k]`` after [soft prompt ; question]."""
    if pipeline is None:
        raise ValueError("a loaded stage-2 pipeline is required for ranking")
    if prefix_rows is None:
        # The prompt lists labels in canonical id order, independent of how ``labels`` is iterated.
        prompt_ids = build_zeroshot_prompt(pipeline.vocab, list(labels))
        prefix_rows = torch.cat([pipeline.soft_prompt(node), pipeline.embed(prompt_ids)])
    scores = label_scores(pipeline.lm, pipeline.vocab, prefix_rows, len(labels))
    return sorted(range(len(labels)), key=lambda k: (-scores[k], k))


def label_scores(lm: FrozenLm, vocab: Vocabulary, prefix_rows: torch.Tensor, num_labels: int) -> list[float]:
    completions = [vocab.ids(prompts.answer_token(k)) for k in range(num_labels)]
    scores: list[float] = []
    with torch.no_grad():
        base = torch.log_softmax(lm_forward(lm, prefix_rows)[-1].double(), -1)
        for comp in completions:
            if len(comp) == 1:
                scores.append(float(base[comp[0]]))
                continue
            rows = torch.cat([prefix_rows, lm.embed_tokens(torch.tensor(comp[:-1]))])
            logp = torch.log_softmax(lm_forward(lm, rows)[prefix_rows.shape[0] - 1:].double(), -1)
            scores.append(float(np.mean([float(logp[i, t]) for i, t in enumerate(comp)])))
    return scores


@dataclass
class TaskConfig:
    labels: list[str]
    ks: tuple[int, ...] = (1, 3, 5)
    recall_mode: str = "multiclass"
    max_new_tokens: int = 4
    template: str = prompts.QUESTION_TEMPLATE


def run_zeroshot_eval(pipeline: ZeroShotPipeline, nodes: Sequence[int], gold: Sequence[int], task: TaskConfig,
                      producer_nodes: Iterable[int] = (), records_path: str | Path | None = None
                      ) -> tuple[MetricsReport, list[PredictionRecord]]:
    """Greedy answer + likelihood ranking for every node; illegal answers count as wrong."""
    overlap = set(nodes) & set(producer_nodes)
    if overlap:
        raise ValueError(f"evaluation nodes overlap the alignment training nodes: {sorted(overlap)[:5]}")
    if pipeline.lm is None or pipeline.translator is None:
        raise ValueError("pipeline is missing a component")
    prompt_ids = build_zeroshot_prompt(pipeline.vocab, task.labels, task.template)
    prompt_rows = pipeline.embed(prompt_ids)
    records: list[PredictionRecord] = []
    for node, g in zip(nodes, gold):
        prefix = torch.cat([pipeline.soft_prompt(node), prompt_rows])
        out = generate(pipeline.lm, prefix, task.max_new_tokens)
        response = pipeline.vocab.decode([t for t in out if t != EOS_ID])
        ranked = rank_labels(pipeline, node, task.labels, prefix_rows=prefix)
        records.append(PredictionRecord(int(node), response, extract_label(response, len(task.labels)),
                                        int(g), ranked))
    report = metrics_report(records, len(task.labels), task.ks, task.recall_mode)
    if records_path is not None:
        write_records(records, records_path)
    return report, records


def write_records(records: Sequence[PredictionRecord], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(r.to_json()) + "\n" for r in records), encoding="utf-8")


def read_records(path: str | Path) -> list[PredictionRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(PredictionRecord(d["node"], d["response"], d["pred"], d["gold"], d["ranked"]))
    return out


def check_label_hygiene(texts: Iterable[str], labels: Sequence[str]) -> list[tuple[int, str]]:
    """(text index, label) for every label string that occurs as a word in a training text."""
    patterns = [(lab, re.compile(rf"(?<![\w]){re.escape(lab.lower())}(?![\w])")) for lab in labels]
    hits = []
    for i, text in enumerate(texts):
        low = text.lower()
        hits.extend((i, lab) for lab, pat in patterns if pat.search(low))
    return hits


# --- ablation ---------------------------------------------------------------------------------

VARIANTS = ("stage1-only", "stage2-only", "full")


@dataclass
class VariantResult:
    variant: str
    report: MetricsReport
    budget: dict  # {"stage1_epochs": int, "stage2_epochs": int, "seeds": {...}}


def run_ablation(results: Sequence[VariantResult]) -> dict:
    """Compare variants trained under matching budgets; returns the comparative report."""
    by_name = {r.variant: r for r in results}
    if sorted(by_name) != sorted(VARIANTS):
        raise ValueError(f"ablation needs exactly the variants {VARIANTS}")
    full = by_name["full"].budget
    s1, s2 = by_name["stage1-only"].budget, by_name["stage2-only"].budget
    problems = []
    if s1.get("stage1_epochs") != full.get("stage1_epochs"):
        problems.append("stage-1 budget differs between full and stage1-only")
    if s2.get("stage2_epochs") != full.get("stage2_epochs"):
        problems.append("stage-2 budget differs between full and stage2-only")
    if not (s1.get("seeds") == s2.get("seeds") == full.get("seeds")):
        problems.append("variants were trained with different seeds")
    if problems:
        raise ValueError("refusing to compare: " + "; ".join(problems))
    ordering = sorted(VARIANTS, key=lambda v: (-by_name[v].report.top1, VARIANTS.index(v)))
    return {"variants": {v: by_name[v].report.to_json() for v in VARIANTS},
            "budgets": {v: by_name[v].budget for v in VARIANTS},
            "top1_ordering": ordering}


# --- multi-turn chat --------------------------------------------------------------------------


@dataclass
class ChatTurn:
    node: int
    question: str
    answer: str


class ChatSession:
    """Multi-turn dialogue about one node; the soft prompt precedes only the first question."""

    def __init__(self, pipeline: ZeroShotPipeline, node: int, max_new_tokens: int = 48):
        if not 0 <= node < len(pipeline.embeddings):
            raise KeyError(f"unknown node id {node}")
        self.pipeline = pipeline
        self.node = node
        self.max_new_tokens = max_new_tokens
        self.history_ids: list[int] = []
        self.turns: list[ChatTurn] = []

    def assemble_context(self, question: str) -> tuple[torch.Tensor, list[str]]:
        """Input rows for the next turn and a parallel list of row sources ("soft" or "token")."""
        ids = self.history_ids + self.pipeline.vocab.ids(question)
        soft = self.pipeline.soft_prompt(self.node)
        rows = torch.cat([soft, self.pipeline.embed(ids)]) if ids else soft
        return rows, ["soft"] * soft.shape[0] + ["token"] * len(ids)

    def ask(self, question: str) -> str | None:
        if not question.strip():
            return None
        rows, _ = self.assemble_context(question)
        out = generate(self.pipeline.lm, rows, self.max_new_tokens)
        answer_ids = [t for t in out if t != EOS_ID]
        answer = self.pipeline.vocab.decode(answer_ids)
        self.history_ids += self.pipeline.vocab.ids(question) + answer_ids
        self.turns.append(ChatTurn(self.node, question, answer))
        return answer


def save_transcript(turns: Sequence[ChatTurn], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(asdict(t)) + "\n" for t in turns), encoding="utf-8")


def load_transcript(path: str | Path) -> list[ChatTurn]:
    return [ChatTurn(**json.loads(line)) for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()]


def chat_repl(pipeline: ZeroShotPipeline, node: int, transcript_path: str | Path | None = None,
              stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> list[ChatTurn]:
    """Terminal loop. ``:node <id>`` switches node (new session), ``:quit`` ends."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    session = ChatSession(pipeline, node)
    turns: list[ChatTurn] = []
    stdout.write(f"chatting about node {node}; :node <id> to switch, :quit to exit\n")
    for line in stdin:
        text = line.strip()
        if text == ":quit":
            break
        if text.startswith(":node"):
            parts = text.split()
            try:
                new_node = int(parts[1])
                session = ChatSession(pipeline, new_node)
            except (IndexError, ValueError, KeyError) as exc:
                stdout.write(f"error: {exc}\n")
                continue
            stdout.write(f"switched to node {new_node}\n")
            continue
        answer = session.ask(text)
        if answer is None:
            continue
        turns.append(session.turns[-1])
        stdout.write(f"> {answer}\n")
        stdout.flush()
    if transcript_path is not None:
        save_transcript(turns, transcript_path)
    return turns
