"""Command-line pipeline: gen-data, train-tokenizer, search, derive, train, eval.

One JSON config file drives everything; any config key can be overridden
with a --key value flag. Exit codes are a stable contract: 0 success,
1 config error, 2 data error, 3 numeric divergence, each with a one-line
machine-parseable reason on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import data as d
from . import search as se
from .errors import ConfigError, DataError, DivergenceError
from .model import ModelConfig, save_checkpoint
from .metrics import render_report_text, report_to_dict, save_report_json
from .cell import CellConfig


@dataclasses.dataclass
class RunConfig:
    train_corpus: str = "data/train.tsv"
    val_corpus: str = "data/val.tsv"
    test_corpus: str = "data/test.tsv"
    vocab: str = "out/vocab.json"
    alphas: str = "out/alphas.json"
    genotype: str = "out/genotype.json"
    checkpoint: str = "out/checkpoint.json"
    out_dir: str = "out"
    embed_dim: int = 64
    channels: int = 32
    num_cells: int = 2
    nodes: int = 3
    dropout_p: float = 0.1
    lr_w: float = 0.025
    lr_alpha: float = 3e-4
    epochs: int = 5
    batch_size: int = 32
    max_len: int = 64
    ratio: float = 0.5
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"ratio must be in (0,1), got {self.ratio}")
        for name in ("embed_dim", "channels", "num_cells", "nodes", "batch_size", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def load_config(args) -> RunConfig:
    values = {}
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        unknown = set(values) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in _FIELDS:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _require(path, what: str):
    if not os.path.exists(path):
        raise DataError(f"missing {what}: {path}")


def _model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        embed_dim=cfg.embed_dim,
        channels=cfg.channels,
        num_cells=cfg.num_cells,
        num_labels=len(d.TAGS),
        dropout_p=cfg.dropout_p,
        cell=CellConfig(nodes=cfg.nodes, channels=cfg.channels),
    )


def _label_names():
    return {i: t for i, t in enumerate(d.TAGS)}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gendata(args) -> int:
    _require(args.meta, "meta-features file")
    try:
        meta = d.MetaFeatures.from_json(args.meta)
    except (TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"bad meta-features file: {e}") from e
    gen = d.gen_synthetic_long_range if args.variant == "long-range" else d.gen_synthetic
    corpus, lexicon = gen(meta, args.n, args.seed)
    os.makedirs(args.out, exist_ok=True)
    n_train = int(args.n * 0.8)
    n_val = int(args.n * 0.1)
    parts = {
        "train.tsv": corpus[:n_train],
        "val.tsv": corpus[n_train:n_train + n_val],
        "test.tsv": corpus[n_train + n_val:],
    }
    for name, part in parts.items():
        d.save_corpus(os.path.join(args.out, name), part)
    with open(os.path.join(args.out, "lexicon.json"), "w", encoding="utf-8") as fh:
        json.dump(lexicon, fh, ensure_ascii=False, sort_keys=True)
    print(f"wrote {args.n} sentences to {args.out} "
          f"({n_train}/{n_val}/{args.n - n_train - n_val} train/val/test)")
    return 0


def cmd_train_tokenizer(args) -> int:
    _require(args.corpus, "corpus")
    corpus = d.load_corpus(args.corpus)
    words = [w for s in corpus for w in s.words]
    vocab = d.train_subword(words, args.vocab_size, seed=args.seed)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    vocab.save(args.out)
    print(f"learned {len(vocab.merges)} merges, vocab size {len(vocab)} -> {args.out}")
    return 0


def cmd_search(args) -> int:
    from .figures import render_search_curves

    cfg = load_config(args)
    _require(cfg.train_corpus, "search corpus")
    _require(cfg.vocab, "vocabulary")
    corpus = d.load_corpus(cfg.train_corpus)
    vocab = d.Vocabulary.load(cfg.vocab)
    outcome = se.run_search(
        corpus, vocab, _model_config(cfg, len(vocab)),
        epochs=cfg.epochs, batch_size=cfg.batch_size, max_len=cfg.max_len,
        ratio=cfg.ratio, lr_w=cfg.lr_w, lr_alpha=cfg.lr_alpha, seed=cfg.seed,
        label_names=_label_names(),
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    se.save_curves(os.path.join(cfg.out_dir, "curves.csv"), outcome.stats)
    outcome.arch.save(cfg.alphas)
    outcome.genotype.save(cfg.genotype)
    render_search_curves(outcome.stats,
                         os.path.join(cfg.out_dir, "loss_curves.png"),
                         os.path.join(cfg.out_dir, "val_metrics.png"))
    for s in outcome.stats:
        print(f"epoch {s.epoch}: train_loss={s.train_loss:.4f} "
              f"arch_loss={s.arch_loss:.4f} val_loss={s.val_loss:.4f} "
              f"val_f1={s.val_f1_weighted:.4f} val_acc={s.val_accuracy:.4f}")
    print(f"genotype -> {cfg.genotype}")
    return 0


def cmd_derive(args) -> int:
    cfg = load_config(args)
    _require(cfg.alphas, "architecture parameters")
    arch = se.ArchParameters.load(cfg.alphas)
    genotype = se.derive_genotype(arch, CellConfig(nodes=cfg.nodes, channels=cfg.channels))
    genotype.save(cfg.genotype)
    print(f"genotype -> {cfg.genotype}")
    return 0


def cmd_train(args) -> int:
    from .figures import render_search_curves

    cfg = load_config(args)
    _require(cfg.genotype, "genotype")
    _require(cfg.train_corpus, "training corpus")
    _require(cfg.val_corpus, "validation corpus")
    _require(cfg.vocab, "vocabulary")
    genotype = se.Genotype.load(cfg.genotype)
    vocab = d.Vocabulary.load(cfg.vocab)
    train_corpus = d.load_corpus(cfg.train_corpus)
    val_corpus = d.load_corpus(cfg.val_corpus)
    model = se.build_discrete_model(genotype, _model_config(cfg, len(vocab)), seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    train_batches = d.make_batches([d.align(s, vocab, cfg.max_len) for s in train_corpus],
                                   cfg.batch_size, vocab.pad_id, rng)
    val_batches = d.make_batches([d.align(s, vocab, cfg.max_len) for s in val_corpus],
                                 cfg.batch_size, vocab.pad_id)
    opt = se.SGD(list(model.parameters().values()), lr=cfg.lr_w)
    stats = se.train_final(model, train_batches, val_batches, cfg.epochs, opt,
                           label_names=_label_names())
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_checkpoint(cfg.checkpoint, model, kind="discrete",
                    extra={"genotype": genotype.to_dict()})
    se.save_curves(os.path.join(cfg.out_dir, "train_curves.csv"), stats)
    if stats:
        render_search_curves(stats,
                             os.path.join(cfg.out_dir, "train_loss_curves.png"),
                             os.path.join(cfg.out_dir, "train_val_metrics.png"))
        best = max(s.val_f1_weighted for s in stats)
        print(f"best val F1 (weighted): {best:.4f}")
    print(f"checkpoint -> {cfg.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .figures import render_class_f1

    cfg = load_config(args)
    _require(cfg.checkpoint, "checkpoint")
    _require(cfg.test_corpus, "test corpus")
    _require(cfg.vocab, "vocabulary")
    model = se.load_discrete_checkpoint(cfg.checkpoint, seed=cfg.seed)
    vocab = d.Vocabulary.load(cfg.vocab)
    corpus = d.load_corpus(cfg.test_corpus)
    batches = d.make_batches([d.align(s, vocab, cfg.max_len) for s in corpus],
                             cfg.batch_size, vocab.pad_id)
    rep = se.evaluate(model, None, batches, label_names=_label_names())
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_report_json(os.path.join(cfg.out_dir, "report.json"), rep)
    text = render_report_text(rep)
    with open(os.path.join(cfg.out_dir, "report.txt"), "w") as fh:
        fh.write(text)
    render_class_f1(report_to_dict(rep), os.path.join(cfg.out_dir, "per_class_f1.png"))
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON config file")
    for name, ftype in _FIELDS.items():
        kind = {"int": int, "float": float, "str": str}[
            ftype if isinstance(ftype, str) else ftype.__name__
        ]
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqnas",
                                     description="architecture search for sequence labeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic tagged corpus")
    p.add_argument("--meta", required=True, help="meta-features JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", choices=["standard", "long-range"], default="standard")
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("train-tokenizer", help="learn subword merges from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tokenizer)

    for name, fn, hint in (
        ("search", cmd_search, "run the bi-level architecture search"),
        ("derive", cmd_derive, "derive a genotype from saved alphas"),
        ("train", cmd_train, "train the discrete architecture from scratch"),
        ("eval", cmd_eval, "evaluate a trained checkpoint"),
    ):
        p = sub.add_parser(name, help=hint)
        _add_config_flags(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error kind=config msg={e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error kind=data msg={e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error kind=numeric msg={e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
