import json

import numpy as np
import pytest
from click.testing import CliRunner

from embedkit.checkpoint import Checkpoint, save_embeddings
from embedkit.cli import cli
from embedkit.data import load_jsonl
from embedkit.tokenizer import Vocab


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    res = runner.invoke(cli, ["synth", "--seed", "2", "--out", str(root / "data"), "--size", "corpus=300",
                              "--size", "sts=80", "--size", "costra=40", "--size", "docs=60",
                              "--size", "ranking_queries=8", "--size", "parallel=60"])
    assert res.exit_code == 0, res.output
    cfg = {"seed": 2, "corpus": str(root / "data" / "corpus.txt"), "output": str(root / "m.ckpt"),
           "layers": 1, "hidden": 16, "heads": 2, "max_len": 24, "vocab_size": 300, "batch_size": 32,
           "max_steps": 5}
    (root / "c.json").write_text(json.dumps(cfg))
    res = runner.invoke(cli, ["pretrain", "mlm", "--config", str(root / "c.json")])
    assert res.exit_code == 0, res.output
    return root


def invoke(*args, env=None):
    return CliRunner().invoke(cli, [str(a) for a in args], env=env)


def test_vocab_train_and_merge(workspace, tmp_path):
    corpus = workspace / "data" / "corpus.txt"
    assert invoke("vocab", "train", "--corpus", corpus, "--size", 150, "--min-freq", 2,
                  "--out", tmp_path / "a.txt").exit_code == 0
    (tmp_path / "b.txt").write_text("\n".join(Vocab.load(tmp_path / "a.txt").tokens[:5] + ("zzz",)) + "\n")
    assert invoke("vocab", "merge", tmp_path / "a.txt", tmp_path / "b.txt", "--out", tmp_path / "c.txt").exit_code == 0
    merged = Vocab.load(tmp_path / "c.txt")
    assert len(merged) == 151 and merged.tokens[-1] == "zzz"


def test_vocab_train_rejects_tiny_size(workspace, tmp_path):
    res = invoke("vocab", "train", "--corpus", workspace / "data" / "corpus.txt", "--size", 8,
                 "--out", tmp_path / "v.txt")
    assert res.exit_code == 2


def test_pretrain_retromae_and_simcse_write_checkpoints(workspace, tmp_path):
    for cmd in (["pretrain", "retromae"], ["simcse"]):
        out = tmp_path / f"{cmd[-1]}.ckpt"
        res = invoke(*cmd, "--config", workspace / "c.json", "--output", out, "--report", tmp_path / "r.md")
        assert res.exit_code == 0, res.output
        assert Checkpoint.load(out).config.hidden == 16
        assert "final loss" in (tmp_path / "r.md").read_text()


def test_env_override(workspace, tmp_path):
    out = tmp_path / "h.ckpt"
    res = invoke("pretrain", "mlm", "--config", workspace / "c.json", "--output", out,
                 env={"EMBEDKIT_HIDDEN": "8", "EMBEDKIT_MAX_STEPS": "2"})
    assert res.exit_code == 0, res.output
    assert Checkpoint.load(out).config.hidden == 8


def test_distill(workspace, tmp_path):
    pairs = load_jsonl(workspace / "data" / "parallel.jsonl")
    teacher = np.random.default_rng(0).standard_normal((len(pairs), 12))
    save_embeddings(tmp_path / "t.emb", teacher)
    cfg = json.loads((workspace / "c.json").read_text())
    cfg.update(output=str(tmp_path / "s.ckpt"), pooling="mean")
    (tmp_path / "d.json").write_text(json.dumps(cfg))
    res = invoke("distill", "--teacher-emb", tmp_path / "t.emb", "--parallel", workspace / "data" / "parallel.jsonl",
                 "--config", tmp_path / "d.json", "--report", tmp_path / "d.md")
    assert res.exit_code == 0, res.output
    ckpt = Checkpoint.load(tmp_path / "s.ckpt")
    assert not ckpt.has_head and ckpt.embedding_dim == 16
    assert "held-out cos (src)" in (tmp_path / "d.md").read_text()


def test_eval_regimes(workspace, tmp_path):
    data = workspace / "data"
    res = invoke("eval", "zero-shot", "--model", workspace / "m.ckpt", "--data", data, "--report", tmp_path / "z.md")
    assert res.exit_code == 0, res.output
    text = (tmp_path / "z.md").read_text()
    assert "STS Spearman" in text and "Costra accuracy" in text and "Ranking P@10" in text
    res = invoke("eval", "probe", "--model", workspace / "m.ckpt", "--data", data / "docs.jsonl",
                 "--folds", 2, "--report", tmp_path / "p.csv", "--format", "csv")
    assert res.exit_code == 0, res.output
    assert "micro-F1" in (tmp_path / "p.csv").read_text()
    res = invoke("eval", "finetune", "--model", workspace / "m.ckpt", "--data", data, "--task", "ranking",
                 "--config", workspace / "c.json", "--report", tmp_path / "f.md")
    assert res.exit_code == 0, res.output
    assert "Ranking P@10" in (tmp_path / "f.md").read_text()


def test_ablate(workspace, tmp_path):
    res = invoke("ablate", "--sizes", "20,40", "--repeats", 2, "--data", workspace / "data",
                 "--init", f"m={workspace / 'm.ckpt'}", "--config", workspace / "c.json", "--out", tmp_path / "a.csv")
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "init,size,mean,stddev" and [ln.split(",")[:2] for ln in lines[1:]] == [["m", "20"], ["m", "40"]]


def test_quantcheck(tmp_path):
    emb = np.random.default_rng(0).standard_normal((50, 64))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    save_embeddings(tmp_path / "e.emb", emb)
    res = invoke("quantcheck", "--emb", tmp_path / "e.emb")
    assert res.exit_code == 0
    assert json.loads(res.output)["max_cos_deviation"] < 1e-3


def test_embed_command(workspace, tmp_path):
    (tmp_path / "t.txt").write_text("one two three\nfour five\n")
    res = invoke("embed", "--model", workspace / "m.ckpt", "--texts", tmp_path / "t.txt", "--out", tmp_path / "o.emb")
    assert res.exit_code == 0 and "2x16" in res.output


# exit codes

def test_config_errors_exit_2(workspace, tmp_path):
    (tmp_path / "noseed.json").write_text(json.dumps({"corpus": "x", "output": "y"}))
    assert invoke("pretrain", "mlm", "--config", tmp_path / "noseed.json").exit_code == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert invoke("simcse", "--config", tmp_path / "bad.json").exit_code == 2
    assert invoke("pretrain", "mlm", "--config", tmp_path / "missing.json").exit_code == 2
    (tmp_path / "nocorpus.json").write_text(json.dumps({"seed": 1, "corpus": str(tmp_path / "nope.txt"),
                                                        "output": "o"}))
    assert invoke("pretrain", "mlm", "--config", tmp_path / "nocorpus.json").exit_code == 2
    assert invoke("ablate", "--sizes", "10,5", "--data", workspace / "data",
                  "--init", f"m={workspace / 'm.ckpt'}").exit_code == 2


def test_data_errors_exit_3(workspace, tmp_path):
    bad = tmp_path / "data"
    bad.mkdir()
    (bad / "sts.jsonl").write_text('{"a": "x", "b": "y", "score": 1}\n{"a": 3}\n')
    res = invoke("eval", "zero-shot", "--model", workspace / "m.ckpt", "--data", bad)
    assert res.exit_code == 3 and ":2:" in res.output
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    assert invoke("eval", "zero-shot", "--model", tmp_path / "junk.ckpt", "--data", workspace / "data").exit_code == 3
    (tmp_path / "empty.txt").write_text("")
    assert invoke("vocab", "train", "--corpus", tmp_path / "empty.txt", "--size", 50,
                  "--out", tmp_path / "v.txt").exit_code == 3


def test_numeric_failure_exit_4(workspace, tmp_path):
    emb = np.ones((3, 4), dtype=np.float32)
    emb[1, 2] = np.nan
    save_embeddings(tmp_path / "nan.emb", emb)
    assert invoke("quantcheck", "--emb", tmp_path / "nan.emb").exit_code == 4
    save_embeddings(tmp_path / "big.emb", np.full((2, 3), 1e6, dtype=np.float32))
    assert invoke("quantcheck", "--emb", tmp_path / "big.emb").exit_code == 4
    cfg = json.loads((workspace / "c.json").read_text())
    cfg.update(lr=1e30, output=str(tmp_path / "x.ckpt"), clip_norm=1e30, max_steps=3)
    (tmp_path / "hot.json").write_text(json.dumps(cfg))
    assert invoke("pretrain", "mlm", "--config", tmp_path / "hot.json").exit_code == 4


def test_help_lists_commands():
    res = invoke("--help")
    for cmd in ("vocab", "pretrain", "distill", "simcse", "eval", "ablate", "quantcheck"):
        assert cmd in res.output
    assert "--paper-scale" in invoke("pretrain", "--help").output


@pytest.mark.slow
def test_pipeline_beats_random_init(tmp_path):
    from embedkit.data import make_synthetic_suite
    from embedkit.encoder import init_encoder
    from embedkit.harness import run_zero_shot

    suite = make_synthetic_suite(4, {"corpus": 1500, "sts": 400, "ranking_queries": 8})
    suite.write(tmp_path / "data")
    cfg = {"seed": 4, "corpus": str(tmp_path / "data" / "corpus.txt"), "layers": 2, "hidden": 32, "heads": 4,
           "max_len": 32, "vocab_size": 500, "batch_size": 64, "epochs": 30, "lr": 5e-3, "weight_decay": 0.1}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    res = invoke("pretrain", "retromae", "--config", tmp_path / "c.json", "--output", tmp_path / "r.ckpt")
    assert res.exit_code == 0, res.output
    cfg.update(init_model=str(tmp_path / "r.ckpt"), epochs=1, lr=3e-5)
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    res = invoke("simcse", "--config", tmp_path / "s.json", "--output", tmp_path / "s.ckpt")
    assert res.exit_code == 0, res.output

    tuned = Checkpoint.load(tmp_path / "s.ckpt")
    random = Checkpoint.from_model(init_encoder(tuned.config, 4), tuned.vocab)
    score = {label: run_zero_shot(ckpt, {"sts": suite.sts}, label=label).value(label, "STS Spearman")
             for label, ckpt in (("random", random), ("tuned", tuned))}
    assert score["tuned"] > score["random"]
