"""Command-line entry point wiring the whole pipeline.

Subcommands: synth, pretrain-classifier, make-pseudo, pretrain, train,
transfer, evaluate, ablate.  Every command is deterministic given --seed.
Configuration is a flat JSON file; command-line flags override file values,
and the fully resolved config is written into the run directory before any
training starts.
"""

from __future__ import annotations

import os

# Worker/BLAS thread cap; must be set before numpy loads.  Default 1 keeps
# CLI runs strictly deterministic across machines with different core counts.
_threads = os.environ.get("DUALSTYLE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dualrl, pseudo
from .classifier import ClassifierConfig, TextClassifier, train_classifier
from .corpus import (
    RESERVED_TOKENS,
    Sentence,
    StyleLabel,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocab,
    generate_synthetic,
    load_corpus,
    load_references,
    save_corpus,
    save_references,
    tokenize,
)
from .dualrl import AnnealSchedule, TrainConfig, train
from .errors import DualStyleError
from .evaluation import emit_curves, evaluate, g2h2
from .rewards import RewardConfig
from .seq2seq import Seq2Seq

DEFAULTS: dict = {
    # synthetic task
    "kind": "lexicon_swap",
    "seed": 0,
    "vocab_size": 200,
    "max_len": 12,
    "pair_count": 14,
    "train_per_style": 4000,
    "dev_per_style": 400,
    "test_per_style": 400,
    "rare_pair_count": 4,
    "rare_weight": 0.44,
    "style_x": "negative",
    "style_y": "positive",
    # vocabulary / lexicon
    "min_count": 1,
    "salience_lambda": 1.0,
    "salience_gamma": 5.0,
    # models
    "embed_dim": 300,
    "hidden_dim": 256,
    "share_embeddings": False,
    "cls_embed_dim": 64,
    "cls_channels": 32,
    "cls_epochs": 8,
    # training
    "pretrain_epochs": 5,
    "max_dual_epochs": 20,
    "max_iterations": None,
    "pretrain_lr": 1e-3,
    "dual_lr": 1e-5,
    "pretrain_batch": 32,
    "dual_batch": 128,
    "beta": 0.5,
    "sample_size": 4,
    "length_normalize_content": True,
    "content_variant": "reconstruction_prob",
    "baseline_mode": "leave_one_out",
    "ablation": "rl_plus_mle",
    "patience": 1,
    "grad_clip": 5.0,
    "p0": 1.0,
    "p_max": 100.0,
    "anneal_rate": 1.1,
    "anneal_gap": 1000.0,
    "temperature": 1.0,
    "max_decode_len": 32,
    "log_rewards": True,
    # paths
    "data_dir": "data",
    "run_dir": "runs/default",
}

# Desk-scale preset for the default synthetic task.  The published-scale
# schedule (dual_lr, anneal gap) assumes tens of thousands of iterations;
# this preset compresses it proportionally so a full run fits in CPU minutes,
# and raises the salience threshold so a slice of style words stays below the
# template lexicon (implicit style that only the reward loop can fix).
DESK_PRESET: dict = {
    "dual_lr": 1e-3,
    "anneal_gap": 20.0,
    "max_dual_epochs": 10,
    "max_iterations": 160,
    "sample_size": 2,
    "salience_gamma": 230.0,
    "cls_epochs": 6,
}

PRESETS = {"desk": DESK_PRESET}


def resolve_config(config_path=None, preset: str | None = None,
                   overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if preset:
        if preset not in PRESETS:
            raise DualStyleError(f"unknown preset {preset!r}")
        cfg.update(PRESETS[preset])
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise DualStyleError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def task_spec(cfg: dict) -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        kind=cfg["kind"], vocab_size=cfg["vocab_size"], max_len=cfg["max_len"],
        pair_count=cfg["pair_count"], seed=cfg["seed"],
        train_per_style=cfg["train_per_style"], dev_per_style=cfg["dev_per_style"],
        test_per_style=cfg["test_per_style"], rare_pair_count=cfg["rare_pair_count"],
        rare_weight=cfg["rare_weight"], style_x_name=cfg["style_x"],
        style_y_name=cfg["style_y"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        pretrain_epochs=cfg["pretrain_epochs"],
        max_dual_epochs=cfg["max_dual_epochs"],
        max_iterations=cfg["max_iterations"],
        pretrain_lr=cfg["pretrain_lr"],
        dual_lr=cfg["dual_lr"],
        pretrain_batch=cfg["pretrain_batch"],
        dual_batch=cfg["dual_batch"],
        reward=RewardConfig(
            beta=cfg["beta"], sample_size=cfg["sample_size"],
            length_normalize_content=cfg["length_normalize_content"],
            content_variant=cfg["content_variant"],
        ),
        schedule=AnnealSchedule(p0=cfg["p0"], p_max=cfg["p_max"],
                                rate=cfg["anneal_rate"], gap=cfg["anneal_gap"]),
        baseline_mode=cfg["baseline_mode"],
        ablation=cfg["ablation"],
        patience=cfg["patience"],
        grad_clip=cfg["grad_clip"],
        temperature=cfg["temperature"],
        max_decode_len=cfg["max_decode_len"],
        log_rewards=cfg["log_rewards"],
        seed=cfg["seed"],
    )


def write_config(cfg: dict, run_dir) -> None:
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def save_vocab(vocab: Vocabulary, run_dir) -> None:
    tokens = vocab.id_to_token[len(RESERVED_TOKENS):]
    (Path(run_dir) / "vocab.txt").write_text(
        "".join(t + "\n" for t in tokens), encoding="utf-8"
    )


def load_vocab(run_dir) -> Vocabulary:
    path = Path(run_dir) / "vocab.txt"
    return Vocabulary(path.read_text(encoding="utf-8").splitlines())


def get_vocab(cfg: dict, run_dir, corpus) -> Vocabulary:
    path = Path(run_dir) / "vocab.txt"
    if path.exists():
        return load_vocab(run_dir)
    vocab = build_vocab(corpus.all_train(), min_count=cfg["min_count"])
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    save_vocab(vocab, run_dir)
    return vocab


def _log(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()))


# ---------------------------------------------------------------------------
# command implementations (shared with the test-suite pipeline)
# ---------------------------------------------------------------------------

def cmd_synth(cfg: dict) -> dict:
    spec = task_spec(cfg)
    corpus, gold = generate_synthetic(spec)
    data_dir = Path(cfg["data_dir"])
    save_corpus(corpus, data_dir)
    save_references(gold.refs, data_dir)
    (data_dir / "task.json").write_text(
        json.dumps({k: getattr(spec, k) for k in spec.__dataclass_fields__},
                   sort_keys=True, indent=2) + "\n", encoding="utf-8")
    n_train = len(corpus.of(corpus.label_x, "train")) + len(corpus.of(corpus.label_y, "train"))
    _log(event="synth", kind=spec.kind, seed=spec.seed, data_dir=data_dir,
         train_sentences=n_train)
    return {"corpus": corpus, "gold": gold}


def _load_task(cfg: dict):
    corpus = load_corpus(cfg["data_dir"], cfg["style_x"], cfg["style_y"])
    return corpus


def cmd_pretrain_classifier(cfg: dict) -> dict:
    corpus = _load_task(cfg)
    run_dir = Path(cfg["run_dir"])
    write_config(cfg, run_dir)
    vocab = get_vocab(cfg, run_dir, corpus)
    corpus = corpus.numericalize(vocab)
    cls_cfg = ClassifierConfig(embed_dim=cfg["cls_embed_dim"],
                               channels=cfg["cls_channels"],
                               epochs=cfg["cls_epochs"], seed=cfg["seed"])
    clf, dev_acc = train_classifier(corpus, vocab, cls_cfg)
    clf.save(run_dir / "checkpoints" / "cls.ckpt")
    _log(event="pretrain_classifier", dev_acc=round(dev_acc, 4),
         ckpt=run_dir / "checkpoints" / "cls.ckpt")
    return {"clf": clf, "dev_acc": dev_acc, "vocab": vocab}


def cmd_make_pseudo(cfg: dict) -> dict:
    corpus = _load_task(cfg)
    run_dir = Path(cfg["run_dir"])
    write_config(cfg, run_dir)
    vocab = get_vocab(cfg, run_dir, corpus)
    lex = pseudo.build_style_lexicon(corpus, lam=cfg["salience_lambda"],
                                     gamma=cfg["salience_gamma"])
    pairs_f, pairs_g = pseudo.make_pretrain_pairs(corpus, lex, vocab)
    out = run_dir / "pseudo"
    out.mkdir(parents=True, exist_ok=True)
    pseudo.export_pairs_tsv(pairs_f, out / "x2y_pairs.tsv")
    pseudo.export_pairs_tsv(pairs_g, out / "y2x_pairs.tsv")
    marked = {style: {" ".join(g): s for g, s in entries.items()}
              for style, entries in lex.entries.items()}
    (out / "lexicon.json").write_text(
        json.dumps(marked, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _log(event="make_pseudo", x2y_pairs=len(pairs_f), y2x_pairs=len(pairs_g),
         marked_x=len(lex.entries[corpus.label_x.name]),
         marked_y=len(lex.entries[corpus.label_y.name]))
    return {"lexicon": lex, "pairs_f": pairs_f, "pairs_g": pairs_g}


def _build_models(cfg: dict, vocab: Vocabulary) -> tuple[Seq2Seq, Seq2Seq]:
    model_f = Seq2Seq(vocab, embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
                      direction="x2y", seed=[cfg["seed"], 1])
    model_g = Seq2Seq(vocab, embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
                      direction="y2x", seed=[cfg["seed"], 2])
    if cfg["share_embeddings"]:
        model_g.params["embed"] = model_f.params["embed"]
    return model_f, model_g


def cmd_pretrain(cfg: dict) -> dict:
    corpus = _load_task(cfg)
    run_dir = Path(cfg["run_dir"])
    write_config(cfg, run_dir)
    vocab = get_vocab(cfg, run_dir, corpus)
    num = corpus.numericalize(vocab)
    lex = pseudo.build_style_lexicon(corpus, lam=cfg["salience_lambda"],
                                     gamma=cfg["salience_gamma"])
    pairs_f, pairs_g = pseudo.make_pretrain_pairs(num, lex, vocab)
    dev_f, dev_g = pseudo.make_pretrain_pairs(num, lex, vocab, split="dev")
    model_f, model_g = _build_models(cfg, vocab)
    tc = train_config(cfg)
    report = dualrl.pretrain(model_f, model_g, pairs_f, pairs_g, tc,
                             dev_pairs_f=dev_f, dev_pairs_g=dev_g)
    ck = run_dir / "checkpoints"
    model_f.save(ck / "f_pre.ckpt")
    model_g.save(ck / "g_pre.ckpt")
    for direction, r in report.items():
        _log(event="pretrain", direction=direction,
             ppl_before=r["ppl_before"], ppl_after=r["ppl_after"])
    return {"model_f": model_f, "model_g": model_g, "report": report}


def cmd_train(cfg: dict, resume: bool = False) -> dict:
    corpus = _load_task(cfg)
    run_dir = Path(cfg["run_dir"])
    write_config(cfg, run_dir)
    vocab = get_vocab(cfg, run_dir, corpus)
    num = corpus.numericalize(vocab)
    ck = run_dir / "checkpoints"
    clf = TextClassifier.load(ck / "cls.ckpt", vocab)
    clf.freeze()
    model_f = Seq2Seq.load(ck / "f_pre.ckpt", vocab)
    model_g = Seq2Seq.load(ck / "g_pre.ckpt", vocab)
    gold_refs = _load_gold_refs(cfg, corpus)
    tc = train_config(cfg)
    result = train(model_f, model_g, clf, num, tc, run_dir=run_dir,
                   gold_refs=gold_refs, resume=resume)
    emit_curves(result.history, run_dir / "curves.csv")
    last = result.history[-1] if result.history else {}
    _log(event="train", ablation=tc.ablation, epochs=len(result.history),
         iterations=result.state.iteration,
         best_epoch=result.state.best_epoch,
         dev_score=last.get("dev_score"), dev_acc=last.get("dev_acc"),
         dev_gold_bleu=last.get("dev_gold_bleu"))
    return {"result": result, "vocab": vocab, "clf": clf, "gold_refs": gold_refs,
            "corpus": num}


def _load_gold_refs(cfg: dict, corpus) -> dict | None:
    refs = {}
    for label in corpus.labels():
        for split in ("dev", "test"):
            per_line = load_references(cfg["data_dir"], label.name, split)
            if per_line:
                refs[(label.name, split)] = per_line
    return refs or None


def cmd_transfer(cfg: dict, direction: str, in_path, out_path,
                 checkpoint: str = "best") -> dict:
    run_dir = Path(cfg["run_dir"])
    vocab = load_vocab(run_dir)
    tag = "f" if direction == "x2y" else "g"
    model = Seq2Seq.load(run_dir / "checkpoints" / f"{tag}_{checkpoint}.ckpt", vocab)
    lines = Path(in_path).read_text(encoding="utf-8").splitlines()
    sentences = [vocab.to_ids(tokenize(ln)) for ln in lines]
    outputs = model.greedy_decode_batch(sentences, max_len=cfg["max_decode_len"])
    Path(out_path).write_text(
        "".join(o.text() + "\n" for o in outputs), encoding="utf-8")
    _log(event="transfer", direction=direction, lines=len(lines), out=out_path)
    return {"outputs": outputs}


def cmd_evaluate(cfg: dict, outputs_path, reference_paths, target_style: str,
                 inputs_path=None, report_dir=None) -> dict:
    run_dir = Path(cfg["run_dir"])
    vocab = load_vocab(run_dir)
    clf = TextClassifier.load(run_dir / "checkpoints" / "cls.ckpt", vocab)
    target = (StyleLabel(0, cfg["style_x"]) if target_style == cfg["style_x"]
              else StyleLabel(1, cfg["style_y"]))
    report = evaluate(outputs_path, reference_paths, clf, target,
                      report_dir=report_dir, inputs_path=inputs_path)
    _log(event="evaluate", acc=round(report.acc, 1), bleu=round(report.bleu, 1),
         g2=round(report.g2, 1), h2=round(report.h2, 1),
         n=report.n_sentences)
    return {"report": report}


def cmd_ablate(cfg: dict, mode: str) -> dict:
    sub = dict(cfg)
    sub["ablation"] = mode
    sub["run_dir"] = str(Path(cfg["run_dir"]) / f"ablate_{mode}")
    base_ck = Path(cfg["run_dir"]) / "checkpoints"
    sub_ck = Path(sub["run_dir"]) / "checkpoints"
    sub_ck.mkdir(parents=True, exist_ok=True)
    for name in ("cls.ckpt", "f_pre.ckpt", "g_pre.ckpt"):
        (sub_ck / name).write_bytes((base_ck / name).read_bytes())
    (Path(sub["run_dir"]) / "vocab.txt").write_bytes(
        (Path(cfg["run_dir"]) / "vocab.txt").read_bytes())
    out = cmd_train(sub)
    _log(event="ablate", mode=mode, run_dir=sub["run_dir"])
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data-dir", dest="data_dir", default=None)
    p.add_argument("--run-dir", dest="run_dir", default=None)


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "preset", "func", "direction", "in_path",
            "out_path", "checkpoint", "outputs", "refs", "target_style",
            "inputs", "report_dir", "mode", "resume"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualstyle",
        description="Dual-model unsupervised text style transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic style-transfer corpus")
    _add_common(p)
    p.add_argument("--kind", default=None,
                   choices=["lexicon_swap", "casing", "marker"])
    p.set_defaults(func=lambda cfg, args: cmd_synth(cfg))

    p = sub.add_parser("pretrain-classifier", help="train and freeze the style classifier")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_pretrain_classifier(cfg))

    p = sub.add_parser("make-pseudo", help="build the salience lexicon and template pairs")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_make_pseudo(cfg))

    p = sub.add_parser("pretrain", help="warm-start both transfer models on template pairs")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_pretrain(cfg))

    p = sub.add_parser("train", help="run dual training")
    _add_common(p)
    p.add_argument("--ablation", default=None, choices=list(dualrl.ABLATIONS))
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=lambda cfg, args: cmd_train(cfg, resume=args.resume))

    p = sub.add_parser("transfer", help="greedy-transfer a file of sentences")
    _add_common(p)
    p.add_argument("--direction", required=True, choices=["x2y", "y2x"])
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--checkpoint", default="best", choices=["best", "last", "pre"])
    p.set_defaults(func=lambda cfg, args: cmd_transfer(
        cfg, args.direction, args.in_path, args.out_path, args.checkpoint))

    p = sub.add_parser("evaluate", help="score transferred outputs against references")
    _add_common(p)
    p.add_argument("--outputs", required=True)
    p.add_argument("--refs", required=True, help="comma-separated reference files")
    p.add_argument("--target-style", dest="target_style", required=True)
    p.add_argument("--inputs", default=None)
    p.add_argument("--report-dir", dest="report_dir", default=None)
    p.set_defaults(func=lambda cfg, args: cmd_evaluate(
        cfg, args.outputs, args.refs.split(","), args.target_style,
        inputs_path=args.inputs, report_dir=args.report_dir))

    p = sub.add_parser("ablate", help="dual training with one component removed")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=list(dualrl.ABLATIONS))
    p.set_defaults(func=lambda cfg, args: cmd_ablate(cfg, args.mode))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.preset, _overrides(args))
        args.func(cfg, args)
    except (DualStyleError, FileNotFoundError, ValueError) as exc:
        print(f"error={exc.__class__.__name__} detail={exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
