"""Stage commands over a run directory: artifacts, manifest checksums, resume checks and the lock."""

from __future__ import annotations

import json
import logging
import shutil
import time
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator

import numpy as np
import torch
from filelock import FileLock, Timeout

from . import lexicon, prompts
from .config import VARIANTS, RunConfig, save_config
from .encoder import GmTrainConfig, build_bow_features, pretrain_gm
from .evaluation import (MetricsReport, TaskConfig, VariantResult, ZeroShotPipeline, chat_repl, check_label_hygiene,
                         run_ablation, run_zeroshot_eval, write_records)
from .graph import (SyntheticTagConfig, generate_synthetic_tag, load_graph, load_split, save_graph, save_split,
                    split_nodes)
from .lm import (LmConfig, LmCorpusConfig, LmTrainConfig, generate_lm_corpus, load_lm, pretrain_lm, save_lm,
                 vocabulary_corpus)
from .producer import SummarizerBackend, build_alignment_dataset, read_alignment_pairs
from .tensorio import load_embedding_table, save_embedding_table, save_tensors
from .text import Vocabulary, build_vocab
from .translator import (StageTrainConfig, TranslatorConfig, TranslatorModel, load_checkpoint,
                         retrieval_recall_at_1, save_checkpoint, train_stage1, train_stage2)
from .utils import file_sha256, seeded, stable_hash

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"

# stage directory -> the command that produces it
PRODUCERS = {
    "graph": "generate",
    "gm": "pretrain-gm",
    "lm": "pretrain-lm",
    "produce": "produce",
    "stage1": "train-stage1",
    "stage2": "train-stage2",
    "stage2-only": "train-stage2 --variant stage2-only",
    "eval": "evaluate",
    "eval-stage1-only": "evaluate --variant stage1-only",
    "eval-stage2-only": "evaluate --variant stage2-only",
}

# config sections each stage depends on (its own and everything upstream)
STAGE_SECTIONS = {
    "graph": ("graph",),
    "gm": ("graph", "encoder"),
    "lm": ("graph", "lm"),
    "produce": ("graph", "encoder", "producer"),
    "stage1": ("graph", "encoder", "producer", "lm", "translator", "stage1"),
    "stage2": ("graph", "encoder", "producer", "lm", "translator", "stage1", "stage2"),
    "stage2-only": ("graph", "encoder", "producer", "lm", "translator", "stage2"),
}


class PipelineError(RuntimeError):
    """A command cannot run; the message says what to do about it."""


class MissingArtifactError(PipelineError):
    pass


class ConfigMismatchError(PipelineError):
    pass


class RunDirBusyError(PipelineError):
    pass


def stage2_dir(variant: str) -> str:
    return "stage2-only" if variant == "stage2-only" else "stage2"


def eval_dir(variant: str) -> str:
    return "eval" if variant == "full" else f"eval-{variant}"


class RunDir:
    """A run directory with one subdirectory per stage and a manifest of checksums."""

    def __init__(self, root: str | Path, config: RunConfig, force: bool = False):
        self.root = Path(root)
        self.config = config
        self.force = force

    # -- manifest -------------------------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {"run_id": self.config.digest(), "config_hash": self.config.digest(), "stages": {}}

    def _write_manifest(self, manifest: dict) -> None:
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def stage(self, name: str) -> Path:
        return self.root / name

    def stage_hash(self, name: str) -> str:
        # Evaluation and ablation outputs depend on everything upstream plus the eval section.
        downstream = name not in STAGE_SECTIONS
        sections = STAGE_SECTIONS["stage2"] if downstream else STAGE_SECTIONS[name]
        extra = {"eval": self.config.eval.model_dump(mode="json")} if downstream else {}
        return stable_hash({"sections": self.config.stage_digest(*sections), "seeds": self._seeds_for(name),
                            **extra})

    def _seeds_for(self, name: str) -> dict:
        s = self.config.seeds
        upstream = {"graph": [s.graph, s.split], "gm": [s.graph, s.gm], "lm": [s.lm],
                    "produce": [s.graph, s.split, s.gm, s.producer]}
        if name in upstream:
            return {name: upstream[name]}
        return {"all": [s.graph, s.split, s.gm, s.producer, s.lm, s.translator, s.eval]}

    @contextmanager
    def open(self) -> Iterator["RunDir"]:
        """Lock the directory and check that it belongs to this configuration."""
        self.root.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(self.root / ".lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RunDirBusyError(f"{self.root} is in use by another command") from None
        try:
            manifest = self.manifest()
            if manifest["config_hash"] != self.config.digest():
                if not self.force:
                    raise ConfigMismatchError(
                        f"{self.root} was created with a different configuration "
                        f"({manifest['config_hash']} vs {self.config.digest()}); rerun with --force to overwrite")
                manifest["config_hash"] = self.config.digest()
            save_config(self.config, self.root / "config.json")
            self._write_manifest(manifest)
            yield self
        finally:
            lock.release()

    def record(self, name: str, seconds: float) -> None:
        """Checksum every file of stage ``name`` into the manifest."""
        d = self.stage(name)
        files = {str(p.relative_to(self.root)): file_sha256(p) for p in sorted(d.rglob("*")) if p.is_file()}
        manifest = self.manifest()
        manifest["stages"][name] = {"files": files, "seconds": round(seconds, 3), "stage_hash": self.stage_hash(name)}
        self._write_manifest(manifest)

    def require(self, name: str) -> Path:
        """Upstream stage directory, verified against the manifest."""
        entry = self.manifest()["stages"].get(name)
        hint = f"run `{PRODUCERS.get(name, name)}` first"
        if entry is None:
            raise MissingArtifactError(f"missing upstream artifacts for stage '{name}' in {self.root}: {hint}")
        for rel, digest in entry["files"].items():
            path = self.root / rel
            if not path.exists():
                raise MissingArtifactError(f"{path} is missing: {hint}")
            if file_sha256(path) != digest:
                raise MissingArtifactError(f"{path} does not match its manifest checksum: {hint}")
        if entry["stage_hash"] != self.stage_hash(name):
            raise ConfigMismatchError(f"stage '{name}' was built with different settings: rerun "
                                      f"`{PRODUCERS.get(name, name)}`")
        return self.stage(name)

    def is_current(self, name: str) -> bool:
        try:
            self.require(name)
        except PipelineError:
            return False
        return True

    def fresh(self, name: str) -> Path:
        d = self.stage(name)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        manifest = self.manifest()
        manifest["stages"].pop(name, None)
        self._write_manifest(manifest)
        return d


def _dump(obj: object, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- loaders ------------------------------------------------------------------------------------

def _load_graph(run: RunDir):
    d = run.require("graph")
    return load_graph(d / "graph.jsonl"), load_split(d / "split.json")


def _load_lm(run: RunDir):
    d = run.require("lm")
    vocab = Vocabulary.load(d / "vocab.json")
    return load_lm(d, vocab), vocab


def _load_embeddings(run: RunDir) -> np.ndarray:
    return load_embedding_table(run.require("gm") / "embeddings.bin")


def _load_pairs(run: RunDir, name: str = "pairs.jsonl"):
    return read_alignment_pairs(run.require("produce") / name)[1]


# --- commands -----------------------------------------------------------------------------------

def cmd_generate(run: RunDir) -> Path:
    start = time.perf_counter()
    cfg, seeds = run.config.graph, run.config.seeds
    syn = SyntheticTagConfig.from_library(cfg.num_nodes, cfg.num_topics, cfg.p_in, cfg.p_out, seed=seeds.graph,
                                          phrases_per_node=tuple(cfg.phrases_per_node),
                                          off_topic_rate=cfg.off_topic_rate)
    graph = generate_synthetic_tag(syn)
    split = split_nodes(graph, cfg.producer_fraction, cfg.eval_fraction, seeds.split)
    d = run.fresh("graph")
    save_graph(graph, d / "graph.jsonl")
    save_split(split, d / "split.json")
    run.record("graph", time.perf_counter() - start)
    return d


def cmd_pretrain_gm(run: RunDir) -> Path:
    start = time.perf_counter()
    graph, _ = _load_graph(run)
    cfg = run.config.encoder
    features = build_bow_features(graph, cfg.max_vocab)
    gm_cfg = GmTrainConfig(hidden_dims=tuple(cfg.hidden_dims), fanout=cfg.fanout, epochs=cfg.epochs, lr=cfg.lr,
                           weight_decay=cfg.weight_decay, batch_edges=cfg.batch_edges,
                           val_fraction=cfg.val_fraction, seed=run.config.seeds.gm,
                           embed_seed=run.config.seeds.gm, max_vocab=cfg.max_vocab)
    result = pretrain_gm(graph, features, gm_cfg)
    d = run.fresh("gm")
    save_embedding_table(result.embeddings, d / "embeddings.bin")
    save_tensors(result.model.state_dict(), d / "model.bin")
    _dump({"history": result.history, "val_accuracy": result.val_accuracy,
           "num_val_pairs": result.num_val_pairs, "feature_vocab": list(features.vocab)}, d / "train.json")
    run.record("gm", time.perf_counter() - start)
    return d


def lm_cache_key(config: RunConfig) -> str:
    lm = config.lm.model_dump(mode="json")
    lm.pop("cache_dir")
    k = config.graph.num_topics
    return stable_hash({"lm": lm, "seed": config.seeds.lm, "names": lexicon.topic_names(k),
                        "lexicons": lexicon.topic_lexicons(k)})


def _train_lm(config: RunConfig, out: Path) -> None:
    cfg = config.lm
    k = config.graph.num_topics
    names, lexicons = lexicon.topic_names(k), lexicon.topic_lexicons(k)
    corpus = generate_lm_corpus(LmCorpusConfig(lexicons, names, num_lines=cfg.corpus_lines, seed=config.seeds.lm))
    vocab = build_vocab(corpus + vocabulary_corpus(lexicons, names), cfg.vocab_size)
    lm_cfg = LmConfig(vocab_size=len(vocab), width=cfg.width, num_layers=cfg.num_layers, num_heads=cfg.num_heads,
                      max_positions=cfg.max_positions, ffn_mult=cfg.ffn_mult)
    result = pretrain_lm(corpus, vocab, lm_cfg, LmTrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                                                              warmup=cfg.warmup, seed=config.seeds.lm))
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    save_lm(result.lm, out, vocab, {"train_loss": result.train_loss, "held_out_loss": result.held_out_loss})


def cmd_pretrain_lm(run: RunDir) -> Path:
    start = time.perf_counter()
    d = run.fresh("lm")
    cache = run.config.lm.cache_dir
    if cache is None:
        _train_lm(run.config, d)
    else:
        entry = Path(cache) / lm_cache_key(run.config)
        if not (entry / "manifest.json").exists():
            tmp = entry.with_name(entry.name + ".tmp")
            if tmp.exists():
                shutil.rmtree(tmp)
            _train_lm(run.config, tmp)
            tmp.rename(entry)
        else:
            log.info("reusing pretrained LM from %s", entry)
        for f in sorted(entry.iterdir()):
            shutil.copy2(f, d / f.name)
    run.record("lm", time.perf_counter() - start)
    return d


def make_backend(config: RunConfig) -> SummarizerBackend:
    p = config.producer
    return SummarizerBackend(kind=p.backend, endpoint=p.endpoint, model=p.model, timeout=p.timeout,
                             max_retries=p.max_retries, max_concurrent=p.max_concurrent)


def cmd_produce(run: RunDir) -> Path:
    start = time.perf_counter()
    graph, split = _load_graph(run)
    emb = _load_embeddings(run)
    cfg = run.config.producer
    backend = make_backend(run.config)
    d = run.fresh("produce")
    seed = run.config.seeds.producer
    n = build_alignment_dataset(graph, split, emb, cfg.fanout, backend, d / "pairs.jsonl", seed=seed)
    held_nodes = split.test_nodes[:cfg.held_out_pairs]
    m = build_alignment_dataset(graph, split, emb, cfg.fanout, backend, d / "held_out.jsonl", seed=seed + 1,
                                nodes=held_nodes)
    pairs = read_alignment_pairs(d / "pairs.jsonl")[1]
    leaks = check_label_hygiene([p.t_full for p in pairs], graph.topic_names)
    if leaks:
        raise PipelineError(f"alignment text leaks label strings, e.g. {leaks[0]}")
    _dump({"pairs": n, "held_out_pairs": m, "held_out_nodes": list(held_nodes)}, d / "summary.json")
    run.record("produce", time.perf_counter() - start)
    return d


def translator_config(config: RunConfig, vocab: Vocabulary, graph_dim: int) -> TranslatorConfig:
    t = config.translator
    return TranslatorConfig(vocab_size=len(vocab), graph_dim=graph_dim, num_queries=t.num_queries, width=t.width,
                            num_layers=t.num_layers, num_heads=t.num_heads, lm_dim=config.lm.width,
                            max_len=t.max_len, ffn_mult=t.ffn_mult, cross_attention_every=t.cross_attention_every,
                            temperature_init=t.temperature_init, dropout=t.dropout)


def _stage_cfg(section, seed: int) -> StageTrainConfig:
    return StageTrainConfig(epochs=section.epochs, batch_size=section.batch_size, accumulation=section.accumulation,
                            lr=section.lr, weight_decay=section.weight_decay, seed=seed)


def cmd_train_stage1(run: RunDir) -> Path:
    start = time.perf_counter()
    emb = _load_embeddings(run)
    pairs = _load_pairs(run)
    held = _load_pairs(run, "held_out.jsonl")
    _, vocab = _load_lm(run)
    seed = run.config.seeds.translator
    with seeded(seed):
        model = TranslatorModel(translator_config(run.config, vocab, emb.shape[1]))
        history = train_stage1(model, pairs, emb, vocab, _stage_cfg(run.config.stage1, seed))
    batch = run.config.eval.retrieval_batch
    recall = retrieval_recall_at_1(model, held, emb, vocab, batch) if len(held) >= batch else None
    d = run.fresh("stage1")
    save_checkpoint(model, d / "checkpoint", 1, vocab)
    _dump({"history": history.steps, "retrieval_recall_at_1": recall, "held_out_pairs": len(held),
           "retrieval_batch": batch}, d / "train.json")
    run.record("stage1", time.perf_counter() - start)
    return d


def cmd_train_stage2(run: RunDir, variant: str = "full") -> Path:
    if variant not in VARIANTS:
        raise PipelineError(f"unknown variant {variant!r}")
    if variant == "stage1-only":
        raise PipelineError("the stage1-only variant has no stage-2 training; evaluate it directly")
    start = time.perf_counter()
    emb = _load_embeddings(run)
    pairs = _load_pairs(run)
    lm, vocab = _load_lm(run)
    seed = run.config.seeds.translator
    with seeded(seed):
        if variant == "full":
            model, _ = load_checkpoint(run.require("stage1") / "checkpoint", vocab)
        else:
            model = TranslatorModel(translator_config(run.config, vocab, emb.shape[1]))
        # Stage 2 uses its own seed stream so the two stages do not share dropout draws.
        history = train_stage2(model, lm, pairs, emb, vocab, prompts.STAGE2_INSTRUCTION,
                               _stage_cfg(run.config.stage2, seed + 1), target_len=run.config.translator.max_len)
    name = stage2_dir(variant)
    d = run.fresh(name)
    save_checkpoint(model, d / "checkpoint", 2, vocab, {"variant": variant})
    _dump({"history": history.steps, "variant": variant}, d / "train.json")
    run.record(name, time.perf_counter() - start)
    return d


def _checkpoint_for(run: RunDir, variant: str) -> Path:
    if variant == "stage1-only":
        return run.require("stage1") / "checkpoint"
    return run.require(stage2_dir(variant)) / "checkpoint"


def load_pipeline(run: RunDir, variant: str = "full") -> tuple[ZeroShotPipeline, object, object]:
    graph, split = _load_graph(run)
    emb = _load_embeddings(run)
    lm, vocab = _load_lm(run)
    model, _ = load_checkpoint(_checkpoint_for(run, variant), vocab)
    return ZeroShotPipeline(model, lm, vocab, emb), graph, split


def cmd_evaluate(run: RunDir, variant: str = "full") -> MetricsReport:
    if variant not in VARIANTS:
        raise PipelineError(f"unknown variant {variant!r}")
    start = time.perf_counter()
    pipe, graph, split = load_pipeline(run, variant)
    ev = run.config.eval
    task = TaskConfig(labels=list(graph.topic_names), ks=tuple(ev.ks), recall_mode=ev.recall_mode,
                      max_new_tokens=ev.max_new_tokens)
    nodes = list(split.test_nodes)
    name = eval_dir(variant)
    d = run.fresh(name)
    with seeded(run.config.seeds.eval):
        report, records = run_zeroshot_eval(pipe, nodes, [graph.labels[v] for v in nodes], task,
                                            split.producer_nodes)
    write_records(records, d / "records.jsonl")
    _dump(final_report(run.config, report, variant), d / "report.json")
    run.record(name, time.perf_counter() - start)
    return report


def final_report(config: RunConfig, report: MetricsReport, variant: str) -> dict:
    """Report document: metrics, config hash and seeds only (no timings, so reruns are byte-identical)."""
    return {**report.to_json(), "variant": variant, "config_hash": config.digest(),
            "seeds": config.seeds.model_dump()}


def _budget(config: RunConfig) -> dict:
    return {"stage1_epochs": config.stage1.epochs, "stage2_epochs": config.stage2.epochs,
            "seeds": config.seeds.model_dump()}


def cmd_ablate(run: RunDir) -> dict:
    """Train and evaluate all three variants under one budget, reusing up-to-date upstream stages."""
    for name, step in (("graph", cmd_generate), ("gm", cmd_pretrain_gm), ("lm", cmd_pretrain_lm),
                       ("produce", cmd_produce), ("stage1", cmd_train_stage1)):
        if not run.is_current(name):
            step(run)
    results = []
    for variant in VARIANTS:
        if variant != "stage1-only" and not run.is_current(stage2_dir(variant)):
            cmd_train_stage2(run, variant)
        results.append(VariantResult(variant, cmd_evaluate(run, variant), _budget(run.config)))
    summary = run_ablation(results)
    d = run.fresh("ablation")
    _dump(summary, d / "report.json")
    run.record("ablation", 0.0)
    return summary


def cmd_all(run: RunDir, variant: str = "full") -> MetricsReport:
    """generate -> pretrain-gm -> pretrain-lm -> produce -> train-stage1 -> train-stage2 -> evaluate."""
    steps = [("graph", cmd_generate), ("gm", cmd_pretrain_gm), ("lm", cmd_pretrain_lm), ("produce", cmd_produce)]
    if variant != "stage2-only":
        steps.append(("stage1", cmd_train_stage1))
    for name, step in steps:
        if run.force or not run.is_current(name):
            step(run)
    if variant != "stage1-only":
        cmd_train_stage2(run, variant)
    return cmd_evaluate(run, variant)


def cmd_chat(run: RunDir, node: int, variant: str = "full", stdin: IO[str] | None = None,
             stdout: IO[str] | None = None) -> int:
    pipe, graph, _ = load_pipeline(run, variant)
    if not 0 <= node < graph.num_nodes:
        raise PipelineError(f"node {node} is not in 0..{graph.num_nodes - 1}")
    d = run.stage("chat")
    d.mkdir(exist_ok=True)
    turns = chat_repl(pipe, node, d / f"transcript-{node}.jsonl", stdin, stdout)
    return len(turns)


def set_deterministic() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
