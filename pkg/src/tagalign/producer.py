"""Alignment-data producer: node, neighbor and commonality descriptions for (embedding, text) pairs.

Two backends share one interface. The template backend is deterministic and
needs no network; the remote backend asks a chat-completion service, one
request per description step.
"""

from __future__ import annotations

import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .graph import NodeSplit, TextAttributedGraph, sample_neighbors
from .lexicon import STOP_WORDS

log = logging.getLogger(__name__)

SEPARATOR = "\n"
NODE_HEADER, NEIGHBOR_HEADER, COMMON_HEADER = "[NODE]", "[NEIGHBORS]", "[COMMON]"
MAX_NEIGHBOR_PHRASES = 5
API_KEY_ENV = "PRODUCER_API_KEY"

NODE_PROMPT = ("Node text: {text}. Please summarize the characteristics of this node "
               "and list the main topics it is about.")
NEIGHBOR_PROMPT = ("Texts of the sampled neighbors: {texts}. Please summarize the topics "
                   "that most of these neighbors share.")
COMMON_PROMPT = ("Node summary: {node}\nNeighbor summary: {neighbors}\nPlease infer what the "
                 "node and its neighbors have in common.")


class BackendError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class SummarizerBackend:
    kind: str = "template"
    endpoint: str | None = None
    model: str = "chat-model"
    timeout: float = 30.0
    max_retries: int = 2
    max_concurrent: int = 4
    backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("template", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint URL")


@dataclass(frozen=True)
class AlignmentPair:
    node_id: int
    embedding_ref: int
    t_s: str
    t_nb: str
    t_c: str

    def __post_init__(self) -> None:
        for name in ("t_s", "t_nb", "t_c"):
            if not getattr(self, name).strip():
                raise ValueError(f"alignment pair for node {self.node_id} has an empty {name}")

    @property
    def t_full(self) -> str:
        return SEPARATOR.join([f"{NODE_HEADER} {_flat(self.t_s)}", f"{NEIGHBOR_HEADER} {_flat(self.t_nb)}",
                               f"{COMMON_HEADER} {_flat(self.t_c)}"])

    def to_record(self) -> dict:
        return {"node": self.node_id, "t_s": self.t_s, "t_nb": self.t_nb, "t_c": self.t_c}


def _flat(text: str) -> str:
    return " ".join(text.split())


def extract_phrases(text: str) -> list[str]:
    """Content words of ``text`` in order of appearance (stop words and punctuation removed)."""
    out = []
    for raw in text.lower().split():
        word = raw.strip(".,:;!?()\"'")
        if word and word not in STOP_WORDS:
            out.append(word)
    return out


def _ranked(counts: Counter[str]) -> list[str]:
    return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


class ChatClient:
    """Minimal chat-completion client with retries and a shared connection pool."""

    RETRYABLE = {408, 409, 425, 429, 500, 502, 503, 504}

    def __init__(self, backend: SummarizerBackend):
        self.backend = backend
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=backend.timeout, headers=headers,
                                  limits=httpx.Limits(max_connections=backend.max_concurrent))

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, prompt: str) -> str:
        payload = {"model": self.backend.model, "messages": [{"role": "user", "content": prompt}]}
        attempts = self.backend.max_retries + 1
        status: int | None = None
        detail = ""
        for attempt in range(attempts):
            try:
                resp = self._http.post(self.backend.endpoint, json=payload)  # type: ignore[arg-type]
            except httpx.TimeoutException:
                status, detail = None, "request timed out"
            except httpx.TransportError as exc:
                status, detail = None, f"transport error: {exc}"
            else:
                status = resp.status_code
                if status == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        raise BackendError("malformed chat-completion response", status) from None
                    if not isinstance(content, str) or not content.strip():
                        raise BackendError("empty chat-completion content", status)
                    return content
                detail = f"HTTP {status}"
                if status not in self.RETRYABLE:
                    break
            if attempt + 1 < attempts and self.backend.backoff > 0:
                time.sleep(self.backend.backoff * 2 ** attempt)
        raise BackendError(f"chat completion failed after {attempts} attempt(s): {detail}", status)


def _client_for(backend: SummarizerBackend, client: ChatClient | None) -> ChatClient:
    if backend.kind != "remote":
        raise ValueError("a chat client is only used by the remote backend")
    return client if client is not None else ChatClient(backend)


def summarize_node(s_v: str, backend: SummarizerBackend, client: ChatClient | None = None) -> str:
    if not s_v.strip():
        raise ValueError("node text is empty")
    if backend.kind == "template":
        phrases = _ranked(Counter(extract_phrases(s_v)))
        return f"This node is mainly about: {', '.join(phrases) if phrases else 'none'}."
    return _client_for(backend, client).complete(NODE_PROMPT.format(text=s_v))


def summarize_neighbors(neighbor_texts: Sequence[str], backend: SummarizerBackend,
                        client: ChatClient | None = None) -> str:
    if not neighbor_texts:
        raise ValueError("no neighbor texts to summarize")
    if backend.kind == "template":
        counts: Counter[str] = Counter()
        for text in neighbor_texts:
            counts.update(extract_phrases(text))
        phrases = _ranked(counts)[:MAX_NEIGHBOR_PHRASES]
        return f"Its neighbors are mainly about: {', '.join(phrases) if phrases else 'none'}."
    return _client_for(backend, client).complete(NEIGHBOR_PROMPT.format(texts=" | ".join(neighbor_texts)))


def infer_commonality(t_s: str, t_nb: str, backend: SummarizerBackend, client: ChatClient | None = None) -> str:
    if not t_s.strip() or not t_nb.strip():
        raise ValueError("both summaries must be non-empty")
    if backend.kind == "template":
        shared = sorted(set(extract_phrases(t_s)) & set(extract_phrases(t_nb)))
        return f"Common themes: {', '.join(shared) if shared else 'none'}."
    return _client_for(backend, client).complete(COMMON_PROMPT.format(node=t_s, neighbors=t_nb))


def describe_node(node_id: int, s_v: str, neighbor_texts: Sequence[str], backend: SummarizerBackend,
                  client: ChatClient | None = None) -> AlignmentPair:
    """Run the three description steps in order for one node."""
    t_s = summarize_node(s_v, backend, client)
    t_nb = summarize_neighbors(neighbor_texts, backend, client)
    t_c = infer_commonality(t_s, t_nb, backend, client)
    return AlignmentPair(node_id=node_id, embedding_ref=node_id, t_s=t_s, t_nb=t_nb, t_c=t_c)


PAIRS_FORMAT = "pairs-v1"


def build_alignment_dataset(graph: TextAttributedGraph, split: NodeSplit, embeddings: np.ndarray,
                            fanout: int, backend: SummarizerBackend, out_path: str | Path,
                            seed: int = 0, nodes: Sequence[int] | None = None) -> int:
    """Write one alignment pair per producer node (JSONL, node-id order); returns the number written.

    ``nodes`` overrides the producer split, e.g. to describe held-out nodes for evaluation.
    """
    targets = sorted(split.producer_nodes if nodes is None else nodes)
    for v in targets:
        if v >= len(embeddings) or not np.all(np.isfinite(embeddings[v])):
            raise KeyError(f"no usable embedding for node {v}")
    rng = np.random.default_rng(seed)
    sampled = {v: sample_neighbors(graph, v, fanout, rng) for v in targets}

    def job(v: int, client: ChatClient | None) -> AlignmentPair:
        return describe_node(v, graph.text_attrs[v], [graph.text_attrs[u] for u in sampled[v]], backend, client)

    pairs: dict[int, AlignmentPair] = {}
    failures: dict[int, str] = {}
    if backend.kind == "template":
        for v in targets:
            pairs[v] = job(v, None)
    else:
        with ChatClient(backend) as client, ThreadPoolExecutor(max_workers=backend.max_concurrent) as pool:
            futures = {v: pool.submit(job, v, client) for v in targets}
            for v in targets:
                try:
                    pairs[v] = futures[v].result()
                except (BackendError, ValueError) as exc:
                    failures[v] = str(exc)
    if failures:
        log.warning("producer skipped %d of %d nodes after backend failures (first: node %d: %s)",
                    len(failures), len(targets), min(failures), failures[min(failures)])

    lines = [json.dumps({"format": PAIRS_FORMAT, "seed": seed, "fanout": fanout})]
    lines += [json.dumps(pairs[v].to_record()) for v in targets if v in pairs]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(pairs)


def read_alignment_pairs(path: str | Path) -> tuple[dict, list[AlignmentPair]]:
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    if not raw:
        raise ValueError(f"{path}: empty alignment file")
    header = json.loads(raw[0])
    if header.get("format") != PAIRS_FORMAT:
        raise ValueError(f"{path}: line 1: expected format {PAIRS_FORMAT!r}")
    pairs = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pairs.append(AlignmentPair(rec["node"], rec["node"], rec["t_s"], rec["t_nb"], rec["t_c"]))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return header, pairs
