"""Command-line entry point.

Every subcommand takes ``--config <yaml>`` and repeatable ``--set key=value``
overrides, validates the merged configuration before doing anything, and
writes a resolved-config snapshot next to its outputs. Exit codes: 0 success,
2 configuration error, 3 data/input error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import torch

from .config import RunConfig, _build, load_config, load_yaml
from .errors import ConfigError, InputError, SaltError

log = logging.getLogger("salt")

CACHE_ENV = "SALT_CACHE_DIR"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "salt")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1..5"`` or ``"1,2,3"`` -> tuple of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r} (use 1..5 or 1,2,3)") from None
    if not seeds:
        raise ConfigError(f"empty seed range {text!r}")
    return seeds


def _snapshot(cfg: RunConfig, directory: Path, args: argparse.Namespace, name: str = "resolved_config.json") -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    invocation = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    blob = {"command": invocation, "config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    path = directory / name
    path.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("backend", "scorer.backend"), ("checkpoint", "scorer.checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _checkpoint(cfg: RunConfig) -> str:
    if not cfg.scorer.checkpoint:
        raise ConfigError("scorer.checkpoint is not set (use --checkpoint or the config file)")
    return cfg.scorer.checkpoint


def _tokenizer(cfg: RunConfig):
    if cfg.scorer.backend == "toy":
        from .toy import WordTokenizer

        ckpt = Path(_checkpoint(cfg))
        if not (ckpt / "vocab.txt").is_file():
            raise InputError(f"toy tokenizer vocabulary not found: {ckpt / 'vocab.txt'}")
        return WordTokenizer.load(ckpt / "vocab.txt")
    from transformers import AutoTokenizer

    from .scorer import HFTokenizerAdapter

    return HFTokenizerAdapter(AutoTokenizer.from_pretrained(_checkpoint(cfg)), name=_checkpoint(cfg))


def cmd_build_vocab(args) -> int:
    from .vocab import build_token_set, load_frequency_list

    cfg = _config(args)
    limit = args.limit if args.limit is not None else cfg.vocab.limit
    words = load_frequency_list(args.list, limit=limit, language=args.lang)
    vs = build_token_set(words, _tokenizer(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vs.save(out)
    _snapshot(cfg, out.parent, args, f"{out.stem}.config.json")
    print(f"{args.lang}: {len(vs)} tokens from {vs.word_count_in}/{vs.word_count_total} single-token words -> {out}")
    return 0


def cmd_augment(args) -> int:
    from .codeswitch import augment_dataset
    from .data import load_examples
    from .scorer import load_scorer
    from .vocab import VocabularyBundle

    cfg = _config(args)
    aug_cfg = cfg.augment_config()
    vocab = VocabularyBundle.load_dir(args.vocab_dir, aug_cfg.target_languages)
    examples = load_examples(args.data, aug_cfg.source_language)
    scorer = load_scorer(cfg.scorer.backend, _checkpoint(cfg), cfg.scorer.max_length)
    manifest = augment_dataset(examples, aug_cfg, scorer, vocab, args.out)
    _snapshot(cfg, Path(args.out), args)
    for lang, st in manifest["languages"].items():
        print(f"{lang}: {st['count']} examples, substitution rate {st['substitution_rate']:.3f} (threshold {st['threshold']:g})")
    return 0


def cmd_train(args) -> int:
    from .codeswitch import load_augmented
    from .data import load_examples
    from .trainer import build_classifier, save_checkpoint, train

    cfg = _config(args)
    tcfg = cfg.train_config()
    data = Path(args.data)
    originals = load_examples(data / "train.jsonl", tcfg.source_language)
    dev = load_examples(data / "dev.jsonl", tcfg.source_language)
    augmented = []
    if tcfg.augmentation:
        if args.augmented is None:
            raise ConfigError("train.augmentation is on but --augmented was not given")
        path = Path(args.augmented) / "augmented.jsonl"
        if not path.is_file():
            raise InputError(f"augmented data not found: {path}")
        augmented = load_augmented(args.augmented)
    model, tokenizer = build_classifier(cfg.scorer.backend, _checkpoint(cfg), tcfg.n_classes, tcfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result = train(tcfg, originals, augmented, dev, model, tokenizer, out.with_suffix(".log.jsonl"))
    save_checkpoint(out, result.model, tcfg, cfg.scorer.backend, _checkpoint(cfg), tokenizer)
    _snapshot(cfg, out.parent, args, f"{out.stem}.config.json")
    print(f"best epoch {result.best_epoch} dev accuracy {result.best_dev_accuracy:.4f} -> {out}")
    return 0


def _test_sets(data_dir: Path) -> dict:
    from .data import load_examples

    files = sorted(data_dir.glob("test.*.jsonl"))
    if not files:
        raise InputError(f"no test.<lang>.jsonl files in {data_dir}")
    return {p.name[len("test.") : -len(".jsonl")]: load_examples(p, p.name[len("test.") : -len(".jsonl")]) for p in files}


def _evaluate(args, generalized_only: bool) -> int:
    from .evaluation import dump_json, evaluate, evaluate_generalized, format_matrix, format_table
    from .trainer import load_checkpoint

    cfg = _config(args)
    model, tokenizer, meta = load_checkpoint(args.ckpt)
    tests = _test_sets(Path(args.data_dir))
    src = meta.get("train_config", {}).get("source_language", cfg.train.source_language)
    out = Path(args.out) if args.out else Path(args.ckpt).parent / f"{Path(args.ckpt).stem}.eval"
    out.mkdir(parents=True, exist_ok=True)
    blob = {"checkpoint": str(args.ckpt), "config_hash": meta.get("config_hash")}
    if not generalized_only:
        report = evaluate(model, tokenizer, tests, src, cfg.eval.batch_size)
        blob["per_language"] = report.to_dict()
        print(format_table({Path(args.ckpt).stem: report}, src))
    if generalized_only or args.generalized or cfg.eval.generalized:
        gen = evaluate_generalized(model, tokenizer, tests, cfg.eval.batch_size)
        blob["generalized"] = gen.to_dict()
        print(format_matrix(gen))
    (out / "report.json").write_text(dump_json(blob) + "\n", encoding="utf-8")
    _snapshot(cfg, out, args)
    return 0


def cmd_evaluate(args) -> int:
    return _evaluate(args, generalized_only=False)


def cmd_eval_generalized(args) -> int:
    return _evaluate(args, generalized_only=True)


def cmd_synth_gen(args) -> int:
    from .synth import SyntheticLanguageSpec, generate_corpus, write_testbed

    cfg = _config(args)
    spec = cfg.synth.spec
    if args.spec is not None:
        path = Path(args.spec)
        if not path.is_file():
            raise ConfigError(f"spec file not found: {path}")
        problems: list[str] = []
        spec = _build(SyntheticLanguageSpec, load_yaml(path.read_text(encoding="utf-8")) or {}, "spec", problems)
        if problems:
            raise ConfigError("invalid testbed spec:\n  " + "\n  ".join(problems))
    testbed = generate_corpus(spec)
    write_testbed(testbed, args.out)
    _snapshot(cfg, Path(args.out), args)
    print(f"testbed with {len(spec.languages)} languages, {spec.n_concepts} concepts -> {args.out}")
    return 0


def cmd_synth_pretrain(args) -> int:
    from .synth import pretrain_toy, read_testbed
    from .toy import save_toy_checkpoint

    cfg = _config(args)
    testbed = read_testbed(args.corpus)
    tokenizer = testbed.tokenizer()
    pcfg = cfg.synth.pretrain
    encoder, history = pretrain_toy(testbed.pretraining_sentences(), tokenizer, pcfg)
    save_toy_checkpoint(args.out, encoder, tokenizer, {"history": history, "pretrain_config": pcfg.to_dict()})
    _snapshot(cfg, Path(args.out), args)
    print(f"final MLM loss {history[-1]:.4f} -> {args.out}")
    return 0


def _e2e_train_config(cfg: RunConfig):
    """Testbed recipe defaults, with any train.* / mixup.* keys the user set applied on top."""
    import dataclasses

    from .pipeline import default_train_config

    base = default_train_config()
    given = {k.split(".", 1)[1] for k in cfg.explicit_keys if k.startswith("train.") and k.count(".") == 1}
    mixup = cfg.mixup if any(k.startswith("mixup") for k in cfg.explicit_keys) else base.mixup
    return dataclasses.replace(base, seed=cfg.seed, mixup=mixup, **{k: getattr(cfg.train, k) for k in given})


def cmd_synth_e2e(args) -> int:
    from .evaluation import dump_json, format_table
    from .pipeline import VARIANTS, run_experiment

    cfg = _config(args)
    seeds = parse_seeds(args.seeds) if args.seeds else cfg.synth.seeds
    variants = tuple(args.variants.split(",")) if args.variants else cfg.synth.variants
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {VARIANTS}")
    out = Path(args.out)
    torch.manual_seed(cfg.seed)
    t0 = time.perf_counter()
    result = run_experiment(
        out / "work",
        seeds=seeds,
        variants=variants,
        spec=cfg.synth.spec,
        pretrain=cfg.synth.pretrain,
        augment=cfg.augment_config(),
        train_config=_e2e_train_config(cfg),
        cache_dir=cache_dir(),
        generalized=not args.no_generalized,
    )
    summary = result.summary()
    summary["wall_seconds"] = time.perf_counter() - t0
    (out / "summary.json").write_text(dump_json(summary) + "\n", encoding="utf-8")
    _snapshot(cfg, out, args)
    print(format_table({v: result.aggregated(v) for v in variants}, result.source_language))
    if "salt_vs_baseline" in summary:
        d = summary["salt_vs_baseline"]
        p = "n/a" if d["p_value"] is None else f"{d['p_value']:.4g}"
        print(f"SALT - baseline: {100 * d['delta_target']:+.2f} target avg, {100 * d['delta_generalized']:+.2f} generalized avg, paired t p = {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salt", description="Self-augmented code-switching for zero-shot cross-lingual transfer.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=3")
        p.set_defaults(func=func)
        return p

    p = add("build-vocab", cmd_build_vocab, "Build a target-language token set from a frequency word list.")
    p.add_argument("--lang", required=True)
    p.add_argument("--list", required=True, help="frequency list, one word per line (optional rank/count column)")
    p.add_argument("--limit", type=int, default=None, help="use the top N entries (default: vocab.limit)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--backend", choices=("toy", "pretrained"))
    p.add_argument("--checkpoint")

    p = add("augment", cmd_augment, "Code-switch a JSONL dataset into every target language.")
    p.add_argument("--data", required=True, help="source-language JSONL examples")
    p.add_argument("--vocab-dir", required=True, help="directory with <lang>.json token sets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--backend", choices=("toy", "pretrained"))
    p.add_argument("--checkpoint")

    p = add("train", cmd_train, "Fine-tune a pair classifier on original plus augmented data.")
    p.add_argument("--data", required=True, help="directory with train.jsonl and dev.jsonl")
    p.add_argument("--augmented", help="directory written by `augment`")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--backend", choices=("toy", "pretrained"))
    p.add_argument("--checkpoint", help="pretrained encoder to start from")

    for name, func, text in (
        ("evaluate", cmd_evaluate, "Zero-shot accuracy per test language."),
        ("eval-generalized", cmd_eval_generalized, "Accuracy matrix with premise and hypothesis in different languages."),
    ):
        p = add(name, func, text)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data-dir", required=True, help="directory with test.<lang>.jsonl files")
        p.add_argument("--out", help="report directory")
        if name == "evaluate":
            p.add_argument("--generalized", action="store_true", help="also compute the language-pair matrix")

    synth = sub.add_parser("synth", help="Synthetic multilingual testbed.", description="Synthetic multilingual testbed.")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True)

    def add_synth(name, func, help_text):
        p = synth_sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.set_defaults(func=func)
        return p

    p = add_synth("gen", cmd_synth_gen, "Generate languages, corpora and the pair task.")
    p.add_argument("--spec", help="YAML testbed spec (fields of synth.spec)")
    p.add_argument("--out", required=True)
    p = add_synth("pretrain", cmd_synth_pretrain, "Pretrain the toy MLM encoder on a generated testbed.")
    p.add_argument("--corpus", required=True, help="testbed directory written by `synth gen`")
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = add("synth-e2e", cmd_synth_e2e, "Generate, pretrain, augment, fine-tune every variant over seeds, and compare.")
    p.add_argument("--seeds", "--seed", dest="seeds", help="1..5 or 1,2,3 (default: synth.seeds)")
    p.add_argument("--variants", help="comma-separated subset of baseline,salt,wo_mixup,en_only")
    p.add_argument("--out", default="runs/synth-e2e")
    p.add_argument("--no-generalized", action="store_true", help="skip the language-pair matrix")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except SaltError as exc:
        print(f"salt: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"salt: error: {exc}", file=sys.stderr)
        return InputError.exit_code
    except Exception as exc:  # anything else is a runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"salt: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
