import json

import pytest
from pydantic import ValidationError

from tagalign import cli, pipeline
from tagalign.config import ConfigFileError, RunConfig, load_config, preset, save_config, ten_topic

TINY = {
    "graph": {"num_nodes": 60, "num_topics": 3, "p_in": 0.3, "p_out": 0.02},
    "encoder": {"hidden_dims": [8, 8], "epochs": 2},
    "producer": {"held_out_pairs": 4},
    "translator": {"num_queries": 2, "width": 16, "num_layers": 2, "num_heads": 2, "max_len": 48},
    "lm": {"width": 16, "num_layers": 1, "num_heads": 2, "corpus_lines": 60, "steps": 3, "warmup": 1},
    "stage1": {"epochs": 1, "batch_size": 8},
    "stage2": {"epochs": 1, "batch_size": 8},
    "eval": {"ks": [1, 3], "retrieval_batch": 4},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_presets():
    desk = preset("desk")
    assert (desk.graph.num_nodes, desk.graph.num_topics) == (500, 5)
    big = preset("paper-shape")
    assert (big.translator.num_queries, big.translator.width, big.lm.width) == (32, 768, 4096)
    assert ten_topic().graph.num_topics == 10
    with pytest.raises(ConfigFileError):
        preset("huge")


def test_config_validation():
    with pytest.raises(ValidationError):
        RunConfig().updated(graph={"p_in": 0.01, "p_out": 0.02})
    with pytest.raises(ValidationError):
        RunConfig().updated(producer={"backend": "remote"})
    with pytest.raises(ValidationError):
        RunConfig().updated(translator={"width": 30, "num_heads": 4})
    with pytest.raises(ValidationError):
        RunConfig().updated(eval={"ks": [3, 1]})
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"graph": {"bogus": 1}})


def test_with_seed_keeps_lm_seed():
    c = RunConfig().with_seed(7)
    assert c.seeds.translator == c.seeds.graph == 7 and c.seeds.lm == 0
    assert c.digest() != RunConfig().digest()


def test_config_file_round_trip_and_errors(tmp_path, tiny_config):
    cfg = load_config(tiny_config)
    assert cfg.graph.num_nodes == 60 and cfg.graph.p_in == 0.3 and cfg.encoder.lr == 0.01
    save_config(cfg, tmp_path / "back.json")
    assert load_config(tmp_path / "back.json") == cfg
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "wrong.json").write_text(json.dumps({"graph": {"num_nodes": "many"}}))
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "wrong.json")
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "absent.json")


def test_missing_upstream_names_the_command(tmp_path, tiny_config, capsys):
    assert run_cli("train-stage2", "--config", tiny_config, "--run-dir", tmp_path / "run") == 2
    assert "run `pretrain-gm` first" in capsys.readouterr().err
    assert run_cli("generate", "--config", tiny_config, "--run-dir", tmp_path / "run") == 0
    assert run_cli("pretrain-gm", "--config", tiny_config, "--run-dir", tmp_path / "run") == 0
    assert run_cli("pretrain-lm", "--config", tiny_config, "--run-dir", tmp_path / "run") == 0
    assert run_cli("produce", "--config", tiny_config, "--run-dir", tmp_path / "run") == 0
    capsys.readouterr()
    assert run_cli("train-stage2", "--config", tiny_config, "--run-dir", tmp_path / "run") == 2
    assert "run `train-stage1` first" in capsys.readouterr().err


def test_tampered_artifact_is_detected(tmp_path, tiny_config, capsys):
    run_dir = tmp_path / "run"
    assert run_cli("generate", "--config", tiny_config, "--run-dir", run_dir) == 0
    with open(run_dir / "graph" / "split.json", "a") as fh:
        fh.write(" ")
    assert run_cli("pretrain-gm", "--config", tiny_config, "--run-dir", run_dir) == 2
    assert "checksum" in capsys.readouterr().err


def test_config_mismatch_needs_force(tmp_path, tiny_config, capsys):
    run_dir = tmp_path / "run"
    assert run_cli("generate", "--config", tiny_config, "--run-dir", run_dir) == 0
    assert run_cli("generate", "--config", tiny_config, "--run-dir", run_dir, "--seed", "3") == 2
    assert "--force" in capsys.readouterr().err
    assert run_cli("generate", "--config", tiny_config, "--run-dir", run_dir, "--seed", "3", "--force") == 0
    # Upstream built under the old seed is rejected after the overwrite.
    cfg = load_config(tiny_config).with_seed(3)
    run = pipeline.RunDir(run_dir, cfg)
    with run.open():
        assert run.is_current("graph")
        assert not run.is_current("gm")


def test_lock_refuses_concurrent_use(tmp_path):
    cfg = RunConfig()
    run = pipeline.RunDir(tmp_path / "run", cfg)
    with run.open():
        with pytest.raises(pipeline.RunDirBusyError):
            with pipeline.RunDir(tmp_path / "run", cfg).open():
                pass


def test_paper_shape_is_refused_for_training(tmp_path, capsys):
    assert run_cli("train-stage1", "--preset", "paper-shape", "--run-dir", tmp_path / "run") == 2
    assert "paper-shape" in capsys.readouterr().err


def test_all_then_chat_and_ablate(tmp_path, tiny_config, capsys, monkeypatch):
    run_dir = tmp_path / "run"
    assert run_cli("all", "--config", tiny_config, "--run-dir", run_dir) == 0
    report = json.loads((run_dir / "eval" / "report.json").read_text())
    assert report["variant"] == "full" and set(report["topk"]) == {"1", "3"}
    assert 0.0 <= report["accuracy"] <= 1.0
    train = json.loads((run_dir / "stage1" / "train.json").read_text())
    assert train["held_out_pairs"] == 4 and train["retrieval_recall_at_1"] is not None
    monkeypatch.setattr("sys.stdin", __import__("io").StringIO("what is this node about?\n:quit\n"))
    assert run_cli("chat", "--config", tiny_config, "--run-dir", run_dir, "--node", "0") == 0
    assert (run_dir / "chat" / "transcript-0.jsonl").exists()
    assert run_cli("chat", "--config", tiny_config, "--run-dir", run_dir, "--node", "999") == 2
    capsys.readouterr()
    assert run_cli("ablate", "--config", tiny_config, "--run-dir", run_dir) == 0
    summary = json.loads(capsys.readouterr().out)
    assert sorted(summary["top1_ordering"]) == ["full", "stage1-only", "stage2-only"]
    assert (run_dir / "ablation" / "report.json").exists()


def test_gradcheck_command(capsys):
    assert run_cli("gradcheck", "--seeds", "1") == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("PASS")
