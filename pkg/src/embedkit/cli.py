"""``embedkit`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import pipeline
from .checkpoint import Checkpoint, load_embeddings
from .data import make_synthetic_suite
from .errors import ConfigError, EmbedkitError, NumericError
from .harness import (
    curve_csv,
    emit_report,
    load_config,
    quantize_roundtrip,
    run_datasize_ablation,
    run_finetune,
    run_probe,
    run_zero_shot,
)
from .tokenizer import Vocab, merge_vocab, train_vocab


class _Group(click.Group):
    """Maps library exceptions onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except EmbedkitError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)
        except FloatingPointError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            ctx.exit(NumericError.exit_code)


def _config(path, paper_scale=False, default_seed=None, **overrides):
    cfg_overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return load_config(path, cfg_overrides, paper_scale=paper_scale)
    except ConfigError:
        if default_seed is None:
            raise
    cfg_overrides.setdefault("seed", default_seed)
    return load_config(path, cfg_overrides, paper_scale=paper_scale)


def _emit(report, path, fmt):
    if path is None:
        click.echo(json.dumps({k: [m.as_dict() for m in v] for k, v in report.rows.items()},
                              sort_keys=True, indent=2))
        return
    emit_report(report, path, fmt)
    click.echo(f"wrote {path}")


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="JSON run configuration.")
paper_scale_option = click.option("--paper-scale", is_flag=True,
                                  help="Start from the full-scale profile (L=12, H=256, batch 512, 250k steps).")


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def cli():
    """Sentence-embedding training recipes and evaluation harness."""


@cli.group()
def vocab():
    """Build and merge subword vocabularies."""


@vocab.command("train")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--size", required=True, type=int)
@click.option("--min-freq", default=2, show_default=True, type=int)
@click.option("--lowercase", is_flag=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def vocab_train(corpus, size, min_freq, lowercase, out):
    lines = [ln for ln in Path(corpus).read_text(encoding="utf-8").splitlines() if ln.strip()]
    v = train_vocab(lines, size, min_freq, lowercase)
    v.save(out)
    click.echo(f"wrote {len(v)} tokens to {out}")


@vocab.command("merge")
@click.argument("first", type=click.Path(exists=True, dir_okay=False))
@click.argument("second", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def vocab_merge(first, second, out):
    merged = merge_vocab(Vocab.load(first), Vocab.load(second))
    merged.save(out)
    click.echo(f"wrote {len(merged)} tokens to {out}")


@cli.command()
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--size", "sizes", multiple=True, metavar="KIND=N", help="Override a dataset size.")
def synth(seed, out, sizes):
    """Write a synthetic evaluation suite (corpus, STS, Costra, docs, ranking, parallel)."""
    parsed = {}
    for item in sizes:
        key, _, value = item.partition("=")
        try:
            parsed[key] = int(value)
        except ValueError:
            raise ConfigError(f"bad --size {item!r}; expected KIND=N") from None
    make_synthetic_suite(seed, parsed).write(out)
    click.echo(f"wrote synthetic suite to {out}")


@cli.command()
@click.argument("objective", type=click.Choice(["mlm", "retromae"]))
@config_option
@paper_scale_option
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
def pretrain(objective, config_path, paper_scale, seed, output, report):
    """Pre-train an encoder with masked language modelling or RetroMAE."""
    cfg = _config(config_path, paper_scale, seed=seed, output=output, report=report,
                  task=f"pretrain-{objective}")
    _, _, rep = pipeline.run_pretrain(cfg, objective)
    _emit(rep, cfg.report, cfg.report_format)


@cli.command()
@click.option("--teacher-emb", type=click.Path(dir_okay=False))
@click.option("--parallel", type=click.Path(dir_okay=False))
@config_option
@paper_scale_option
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
@click.option("--keep-head", is_flag=True, help="Keep the projection head in the checkpoint.")
def distill(teacher_emb, parallel, config_path, paper_scale, seed, output, report, keep_head):
    """Distil a teacher's embeddings into a student over parallel sentence pairs."""
    cfg = _config(config_path, paper_scale, seed=seed, output=output, report=report,
                  teacher_emb=teacher_emb, parallel=parallel, task="distill")
    _, _, _, rep = pipeline.run_distill(cfg, strip_head=not keep_head)
    _emit(rep, cfg.report, cfg.report_format)


@cli.command()
@config_option
@paper_scale_option
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
def simcse(config_path, paper_scale, seed, output, report):
    """Unsupervised SimCSE fine-tuning on a sentence corpus."""
    cfg = _config(config_path, paper_scale, seed=seed, output=output, report=report,
                  task="finetune-simcse")
    _, _, rep = pipeline.run_simcse(cfg)
    _emit(rep, cfg.report, cfg.report_format)


@cli.command("eval")
@click.argument("regime", type=click.Choice(["zero-shot", "probe", "finetune"]))
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--report", type=click.Path(dir_okay=False))
@config_option
@click.option("--seed", type=int)
@click.option("--label", help="Row label in the report (defaults to the model file stem).")
@click.option("--pooling", help="zero-shot: auto|cls|mean|max.")
@click.option("--head", help="probe/finetune: auto|multilabel|multiclass.")
@click.option("--folds", type=int, help="probe/finetune: number of folds.")
@click.option("--task", type=click.Choice(["classification", "ranking"]), help="finetune task.")
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]))
def eval_cmd(regime, model, data, report, config_path, seed, label, pooling, head, folds, task, fmt):
    """Evaluate a checkpoint zero-shot, by linear probing, or by fine-tuning."""
    cfg = _config(config_path, default_seed=0, seed=seed, model=model, data=data, report=report,
                  label=label, eval_pooling=pooling, head=head, k_folds=folds, finetune_task=task,
                  report_format=fmt, task={"zero-shot": "zero-shot-eval", "probe": "probe",
                                           "finetune": "finetune-eval"}[regime])
    ckpt = Checkpoint.load(cfg.model)
    label = cfg.label or Path(cfg.model).stem
    if regime == "zero-shot":
        found = pipeline.discover(cfg.data, ("sts", "costra", "ranking"))
        rep = run_zero_shot(ckpt, found, cfg.eval_pooling, label=label, seed=cfg.seed, cfg=cfg)
    elif regime == "probe":
        docs = _docs(cfg.data)
        settings = cfg.train_settings(lr=cfg.probe_lr, epochs=cfg.probe_epochs, max_steps=None)
        rep = run_probe(ckpt, docs, cfg.head, cfg.k_folds, cfg.seed, settings, label=label, cfg=cfg)
    else:
        if cfg.finetune_task == "ranking":
            found = pipeline.discover(cfg.data, ("ranking_train", "ranking"))
            dataset = (found["ranking_train"], found["ranking"]) if "ranking_train" in found \
                else found["ranking"]
        else:
            dataset = _docs(cfg.data)
        rep = run_finetune(ckpt, cfg.finetune_task, dataset, cfg.train_settings(), cfg.seed, label, cfg,
                           k_folds=folds, head_kind=cfg.head, temperature=cfg.temperature,
                           ranking_loss=cfg.ranking_loss)
    _emit(rep, cfg.report, cfg.report_format)


def _docs(path):
    found = pipeline.discover(path, ("docs",))
    if "docs" not in found:
        raise ConfigError(f"{path}: expected a docs dataset")
    return found["docs"]


@cli.command()
@click.option("--sizes", required=True, help="Comma-separated subset sizes, ascending.")
@click.option("--repeats", default=4, show_default=True, type=int)
@click.option("--data", type=click.Path(exists=True), help="Directory with ranking_train/test.jsonl.")
@click.option("--init", "inits", multiple=True, metavar="LABEL=CHECKPOINT", help="Initial model (repeatable).")
@config_option
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV curve output (default: stdout).")
def ablate(sizes, repeats, data, inits, config_path, seed, out):
    """Fine-tuning data-size ablation on relevance ranking."""
    cfg = _config(config_path, default_seed=0, seed=seed, data=data, sizes=sizes, repeats=repeats,
                  task="ablate-datasize")
    if cfg.data is None:
        raise ConfigError("ablate needs --data (or 'data' in the config)")
    models = {}
    for item in inits or ((f"model={cfg.model}",) if cfg.model else ()):
        name, _, path = item.partition("=")
        if not path or not Path(path).exists():
            raise ConfigError(f"bad --init {item!r}; expected LABEL=EXISTING_CHECKPOINT")
        models[name] = Checkpoint.load(path)
    if not models:
        raise ConfigError("ablate needs at least one --init LABEL=CHECKPOINT")
    found = pipeline.discover(cfg.data, ("ranking_train", "ranking"))
    if "ranking_train" not in found or "ranking" not in found:
        raise ConfigError("ablate needs ranking_train.jsonl and ranking_test.jsonl")
    curve = run_datasize_ablation(models, found["ranking_train"], found["ranking"], cfg.sizes,
                                  cfg.repeats, cfg.train_settings(), cfg.temperature)
    text = curve_csv(curve)
    if out:
        Path(out).write_bytes(text.encode("utf-8"))
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@cli.command()
@click.option("--emb", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
def quantcheck(emb, report):
    """FP16 round-trip check of an embedding file."""
    matrix, _ = load_embeddings(emb)
    result = quantize_roundtrip(matrix)
    text = json.dumps(result.as_dict(), sort_keys=True, indent=2) + "\n"
    if report:
        Path(report).write_bytes(text.encode("utf-8"))
    click.echo(text, nl=False)


@cli.command()
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--texts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--pooling", default="cls", show_default=True, type=click.Choice(["cls", "mean", "max"]))
@click.option("--raw", is_flag=True, help="Skip L2 normalisation.")
def embed(model, texts, out, pooling, raw):
    """Embed one sentence per line into an embedding file."""
    emb = pipeline.embed_file(model, texts, out, pooling, normalize=not raw)
    click.echo(f"wrote {emb.shape[0]}x{emb.shape[1]} embeddings to {out}")


def main(argv=None):
    return cli.main(args=argv, prog_name="embedkit")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
