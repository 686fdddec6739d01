import math

import pytest
import torch

from tagalign import lexicon, prompts
from tagalign.lm import (FrozenLm, FrozenModelError, LmConfig, LmCorpusConfig, LmTrainConfig, generate,
                         generate_lm_corpus, lm_forward, load_lm, pretrain_lm, save_lm, vocabulary_corpus)
from tagalign.text import EOS_ID, build_vocab

NAMES = lexicon.topic_names(3)
LEXICONS = lexicon.topic_lexicons(3)


def corpus(n=200, seed=0):
    return generate_lm_corpus(LmCorpusConfig(LEXICONS, NAMES, num_lines=n, seed=seed))


def vocab_for(lines):
    return build_vocab(vocabulary_corpus(LEXICONS, NAMES) + lines, 512)


def small(vocab_size, seed=0):
    torch.manual_seed(seed)
    return FrozenLm(LmConfig(vocab_size=vocab_size, width=16, num_layers=1, num_heads=2, max_positions=64,
                             ffn_mult=2))


def test_corpus_is_deterministic_and_sized():
    a, b = corpus(), corpus()
    assert a == b and len(a) == 200
    assert corpus(seed=1) != a


def test_every_topic_is_an_answer():
    lines = corpus(50)
    for k in range(len(NAMES)):
        assert any(line.endswith(prompts.answer_token(k)) for line in lines)


def test_corpus_config_errors():
    with pytest.raises(ValueError):
        generate_lm_corpus(LmCorpusConfig(LEXICONS, NAMES[:2]))
    with pytest.raises(ValueError):
        generate_lm_corpus(LmCorpusConfig(LEXICONS, NAMES, num_lines=2))


def test_frozen_model_refuses_mutation():
    lm = small(32).freeze()
    assert all(not p.requires_grad for p in lm.parameters())
    with pytest.raises(FrozenModelError):
        lm.requires_grad_(True)
    with pytest.raises(FrozenModelError):
        lm.load_state_dict(lm.state_dict())
    lm.requires_grad_(False)


def test_untrained_loss_is_near_log_vocab():
    lines = corpus(100)
    vocab = vocab_for(lines)
    for seed in range(5):
        cfg = LmConfig(vocab_size=len(vocab), width=16, num_layers=1, num_heads=2, max_positions=64, ffn_mult=2)
        res = pretrain_lm(lines, vocab, cfg, LmTrainConfig(steps=0, seed=seed))
        assert abs(res.train_loss - math.log(len(vocab))) <= 0.1 * math.log(len(vocab))
        assert res.lm.frozen


def test_short_training_reduces_loss():
    lines = corpus(300)
    vocab = vocab_for(lines)
    cfg = LmConfig(vocab_size=len(vocab), width=32, num_layers=1, num_heads=2, max_positions=96, ffn_mult=2)
    res = pretrain_lm(lines, vocab, cfg, LmTrainConfig(steps=60, batch_size=16, warmup=10))
    assert res.train_loss < math.log(len(vocab)) - 1.0


def test_causal_prefix_logits_ignore_later_rows():
    lm = small(32).freeze()
    rows = torch.randn(1, 10, 16)
    other = rows.clone()
    other[:, 6:] = torch.randn(1, 4, 16)
    assert torch.allclose(lm_forward(lm, rows)[:, :6], lm_forward(lm, other)[:, :6], atol=1e-6)


def test_width_and_length_errors():
    lm = small(32).freeze()
    with pytest.raises(ValueError):
        lm(torch.zeros(1, 3, 8))
    with pytest.raises(ValueError):
        lm(torch.zeros(1, 65, 16))


def test_generate_stops_at_eos_and_is_deterministic():
    lm = small(32)
    with torch.no_grad():
        lm.out_bias[EOS_ID] = 100.0
    lm.freeze()
    assert generate(lm, torch.randn(3, 16), 5) == [EOS_ID]
    lm2 = small(32, seed=3).freeze()
    prefix = torch.randn(4, 16)
    out = generate(lm2, prefix, 6)
    assert out == generate(lm2, prefix, 6) and 1 <= len(out) <= 6
    assert generate(lm2, prefix, 6, decode="top-k", seed=2) == generate(lm2, prefix, 6, decode="top-k", seed=2)
    with pytest.raises(ValueError):
        generate(lm2, prefix, 0)
    with pytest.raises(ValueError):
        generate(lm2, prefix, 2, decode="beam")


def test_save_load_round_trip(tmp_path):
    vocab = vocab_for(corpus(20))
    lm = small(len(vocab)).freeze()
    save_lm(lm, tmp_path / "lm", vocab)
    back = load_lm(tmp_path / "lm", vocab)
    assert back.frozen and back.checksum() == lm.checksum()
    with pytest.raises(ValueError):
        load_lm(tmp_path / "lm", build_vocab(["other words"], 32))
    with pytest.raises(FileNotFoundError):
        load_lm(tmp_path / "missing")
