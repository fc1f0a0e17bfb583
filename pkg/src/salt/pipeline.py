"""End-to-end testbed recipe: generate, pretrain, augment, fine-tune variants over seeds, evaluate."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .codeswitch import AugmentationConfig, augment_dataset, load_augmented
from .evaluation import EvaluationReport, GeneralizedReport, aggregate, evaluate, evaluate_generalized, significance
from .mixup import MixupConfig
from .scorer import ToyScorer
from .synth import PretrainConfig, SyntheticLanguageSpec, Testbed, generate_corpus, pretrain_toy, write_testbed
from .toy import load_toy_checkpoint, save_toy_checkpoint
from .trainer import TrainConfig, build_classifier, train
from .vocab import VocabularyBundle, build_token_set, load_frequency_list

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "salt", "wo_mixup", "en_only")


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    """Training config for one ablation row."""
    cfg = dataclasses.replace(base, seed=seed, mixup=dataclasses.replace(base.mixup))
    if variant == "baseline":
        cfg.augmentation = False
    elif variant == "salt":
        pass
    elif variant == "wo_mixup":
        cfg.mixup.enabled = False
    elif variant == "en_only":
        cfg.augmented_languages = (cfg.source_language,)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return cfg


def _digest(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class Prepared:
    testbed: Testbed
    checkpoint: Path
    vocab: VocabularyBundle
    augmented_dir: Path
    pretrain_history: list[float]
    manifest: dict


def prepare(
    spec: SyntheticLanguageSpec,
    pretrain: PretrainConfig,
    augment: AugmentationConfig,
    workdir: str | Path,
    cache_dir: str | Path | None = None,
) -> Prepared:
    """Everything up to (and including) offline augmentation.

    The pretrained toy encoder is cached under ``cache_dir`` (default: the
    work directory), keyed by the testbed spec and pretraining config.
    """
    workdir = Path(workdir)
    testbed = generate_corpus(spec)
    tb_dir = workdir / "testbed"
    write_testbed(testbed, tb_dir)
    tokenizer = testbed.tokenizer()

    ckpt = Path(cache_dir or workdir) / f"toy-{_digest(spec.to_dict(), pretrain.to_dict())}"
    if (ckpt / "encoder.pt").exists():
        encoder, tokenizer, blob = load_toy_checkpoint(ckpt)
        history = blob.get("history", [])
    else:
        encoder, history = pretrain_toy(testbed.pretraining_sentences(), tokenizer, pretrain)
        save_toy_checkpoint(ckpt, encoder, tokenizer, {"history": history, "pretrain_config": pretrain.to_dict()})

    vocab_dir = workdir / "vocab"
    vocab_dir.mkdir(parents=True, exist_ok=True)
    sets = {}
    for lang in augment.target_languages:
        vs = build_token_set(load_frequency_list(tb_dir / "freq" / f"{lang}.txt", language=lang), tokenizer)
        vs.save(vocab_dir / f"{lang}.json")
        sets[lang] = vs
    vocab = VocabularyBundle(sets)

    aug_dir = workdir / "augmented"
    manifest = augment_dataset(testbed.train, augment, ToyScorer(encoder, tokenizer), vocab, aug_dir)
    return Prepared(testbed, ckpt, vocab, aug_dir, history, manifest)


@dataclass
class VariantRun:
    variant: str
    seed: int
    report: EvaluationReport
    generalized: GeneralizedReport | None
    dev_accuracy: float
    history: list[dict]


@dataclass
class ExperimentResult:
    runs: list[VariantRun]
    source_language: str
    prepared: Prepared | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def select(self, variant: str) -> list[VariantRun]:
        return sorted((r for r in self.runs if r.variant == variant), key=lambda r: r.seed)

    def target_means(self, variant: str) -> np.ndarray:
        """Per-seed mean zero-shot accuracy over non-source languages."""
        return np.array([r.report.avg_excl_source for r in self.select(variant)])

    def generalized_means(self, variant: str) -> np.ndarray:
        return np.array([np.nan if r.generalized is None else r.generalized.average for r in self.select(variant)])

    def aggregated(self, variant: str) -> EvaluationReport:
        runs = self.select(variant)
        return aggregate([r.report for r in runs], [r.seed for r in runs])

    def summary(self) -> dict:
        variants = [v for v in VARIANTS if self.select(v)]
        out = {"variants": {}, "source_language": self.source_language}
        for v in variants:
            agg = self.aggregated(v)
            out["variants"][v] = {
                "seeds": agg.seeds,
                "per_language_accuracy": agg.per_language_accuracy,
                "avg_excl_source": agg.avg_excl_source,
                "avg_incl_source": agg.avg_incl_source,
                "per_seed_target_mean": self.target_means(v).tolist(),
                "generalized_average": float(self.generalized_means(v).mean()),
                "per_seed_generalized": self.generalized_means(v).tolist(),
            }
        if "salt" in variants and "baseline" in variants:
            a, b = self.target_means("salt"), self.target_means("baseline")
            test = significance(a, b, "paired") if len(a) >= 2 else None
            out["salt_vs_baseline"] = {
                "delta_target": float(a.mean() - b.mean()),
                "delta_generalized": float(self.generalized_means("salt").mean() - self.generalized_means("baseline").mean()),
                "paired_t": None if test is None else test.statistic,
                "p_value": None if test is None else test.p_value,
            }
        out["timings"] = self.timings
        return out


def run_variants(prepared: Prepared, base: TrainConfig, seeds, variants=VARIANTS, generalized: bool = True) -> ExperimentResult:
    testbed = prepared.testbed
    augmented = load_augmented(prepared.augmented_dir)
    src = base.source_language
    runs = []
    timings: dict[str, float] = {}
    for seed in seeds:
        for variant in variants:
            t0 = time.perf_counter()
            cfg = variant_config(base, variant, seed)
            model, tokenizer = build_classifier("toy", prepared.checkpoint, cfg.n_classes, seed)
            result = train(cfg, testbed.train, augmented if cfg.augmentation else [], testbed.dev, model, tokenizer)
            report = evaluate(result.model, tokenizer, testbed.test, src)
            gen = evaluate_generalized(result.model, tokenizer, testbed.test) if generalized else None
            runs.append(VariantRun(variant, seed, report, gen, result.best_dev_accuracy, result.history))
            timings[variant] = timings.get(variant, 0.0) + time.perf_counter() - t0
            log.info("seed %s %-9s target %.4f", seed, variant, report.avg_excl_source)
    return ExperimentResult(runs, src, prepared, timings)


def default_train_config() -> TrainConfig:
    """Testbed fine-tuning recipe: every variant gets the same number of optimizer steps."""
    return TrainConfig(max_steps=3000, batch_size=16, learning_rate=1e-3, mixup=MixupConfig())


def run_experiment(
    workdir: str | Path,
    seeds=(1, 2, 3, 4, 5),
    variants=VARIANTS,
    spec: SyntheticLanguageSpec | None = None,
    pretrain: PretrainConfig | None = None,
    augment: AugmentationConfig | None = None,
    train_config: TrainConfig | None = None,
    cache_dir: str | Path | None = None,
    generalized: bool = True,
) -> ExperimentResult:
    torch.set_num_threads(1)
    spec = spec or SyntheticLanguageSpec()
    augment = augment or AugmentationConfig()
    t0 = time.perf_counter()
    prepared = prepare(spec, pretrain or PretrainConfig(), augment, workdir, cache_dir)
    t1 = time.perf_counter()
    result = run_variants(prepared, train_config or default_train_config(), seeds, variants, generalized)
    result.timings["prepare"] = t1 - t0
    return result
