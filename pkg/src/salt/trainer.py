"""Sentence-pair classifier fine-tuning on original plus self-augmented data."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import mixup as mixup_ops
from .data import TaskExample
from .errors import ConfigError, DataError, InputError, TrainingDivergence
from .mixup import MixupConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 4
    # when set, every run takes exactly this many optimizer steps (epochs repeat as needed)
    max_steps: int | None = None
    batch_size: int = 32
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    grad_clip: float = 1.0
    seed: int = 1
    n_classes: int = 3
    source_language: str = "en"
    # False reproduces vanilla fine-tuning
    augmentation: bool = True
    # subset of augmented languages to train on; ("en",) is the en-only ablation
    augmented_languages: tuple[str, ...] | None = None
    include_originals: bool = True
    max_length: int = 128
    eval_batch_size: int = 256
    mixup: MixupConfig = field(default_factory=MixupConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["augmented_languages"] is not None:
            d["augmented_languages"] = list(d["augmented_languages"])
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainingInstance:
    key: tuple[int, int]
    original_a: list[int]
    original_b: list[int]
    switched_a: list[int] | None
    switched_b: list[int] | None
    label: int
    kind: str

    @property
    def augmented(self) -> bool:
        return self.switched_a is not None


def _language_slot(language: str) -> int:
    return zlib.crc32(language.encode()) + 1


def build_training_stream(
    originals,
    augmented,
    tokenizer,
    epoch: int,
    seed: int,
    languages=None,
    include_originals: bool = True,
) -> list[TrainingInstance]:
    """All instances for one epoch, shuffled by a (seed, epoch)-derived permutation."""
    by_index: dict[int, tuple[list[int], list[int], TaskExample]] = {}
    for ex in originals:
        by_index[ex.index] = (tokenizer.encode(ex.sentence_a), tokenizer.encode(ex.sentence_b), ex)
    items: list[TrainingInstance] = []
    if include_originals:
        for idx, (a, b, ex) in by_index.items():
            items.append(TrainingInstance((idx, 0), a, b, None, None, ex.label, "original"))
    for aug in augmented or ():
        if languages is not None and aug.language not in languages:
            continue
        if aug.source_index not in by_index:
            raise DataError(f"augmented record points at unknown source_index {aug.source_index}")
        oa, ob = aug.original_ids_a, aug.original_ids_b
        a, b, ex = by_index[aug.source_index]
        if oa != a or ob != b:
            raise DataError(f"augmented record for index {aug.source_index} does not match its source tokens")
        items.append(
            TrainingInstance(
                (aug.source_index, _language_slot(aug.language)),
                oa,
                ob,
                list(aug.token_ids_a),
                list(aug.token_ids_b),
                ex.label,
                aug.language,
            )
        )
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    return [items[i] for i in order]


def _frame(a, b, tokenizer, max_length):
    a, b = list(a), list(b)
    while len(a) + len(b) + 3 > max_length:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    ids = [tokenizer.cls_id, *a, tokenizer.sep_id, *b, tokenizer.sep_id]
    seg = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return ids, seg


def collate(instances, tokenizer, max_length: int = 128) -> dict:
    framed = []
    for inst in instances:
        o_ids, seg = _frame(inst.original_a, inst.original_b, tokenizer, max_length)
        if inst.augmented:
            s_ids, _ = _frame(inst.switched_a, inst.switched_b, tokenizer, max_length)
        else:
            s_ids = o_ids
        framed.append((o_ids, s_ids, seg))
    n = max(len(f[0]) for f in framed)
    b = len(framed)
    orig = torch.full((b, n), tokenizer.pad_id, dtype=torch.long)
    switched = orig.clone()
    seg_t = torch.zeros((b, n), dtype=torch.long)
    attn = torch.zeros((b, n), dtype=torch.long)
    for k, (o, s, g) in enumerate(framed):
        orig[k, : len(o)] = torch.tensor(o)
        switched[k, : len(s)] = torch.tensor(s)
        seg_t[k, : len(g)] = torch.tensor(g)
        attn[k, : len(o)] = 1
    return {
        "original_ids": orig,
        "switched_ids": switched,
        "token_type_ids": seg_t,
        "attention_mask": attn,
        "labels": torch.tensor([inst.label for inst in instances], dtype=torch.long),
        "is_augmented": torch.tensor([inst.augmented for inst in instances]),
        "keys": [inst.key for inst in instances],
    }


def input_embeddings(model, batch: dict, mixup: MixupConfig, seed: int, epoch: int):
    """Token-embedding rows for a batch; augmented rows are mixed when mixup is on.

    Returns the embeddings and the coefficient vectors drawn, keyed by instance.
    """
    table = model.word_embeddings
    orig_ids, sw_ids = batch["original_ids"], batch["switched_ids"]
    h_switched = table(sw_ids)
    if not mixup.enabled or not bool(batch["is_augmented"].any()):
        return h_switched, {}
    h_orig = table(orig_ids)
    dim = h_orig.shape[-1]
    n = orig_ids.shape[1]
    r = torch.ones(orig_ids.shape[0], n, dim, dtype=h_orig.dtype)
    drawn = {}
    for k, key in enumerate(batch["keys"]):
        if not bool(batch["is_augmented"][k]):
            continue
        rng = mixup_ops.coefficient_rng(seed, epoch, key)
        if mixup.per_position:
            vec = np.stack([mixup_ops.sample_coefficients(dim, rng) for _ in range(n)])
        else:
            vec = mixup_ops.sample_coefficients(dim, rng)
        drawn[key] = vec
        r[k] = torch.as_tensor(vec, dtype=h_orig.dtype)
    return mixup_ops.mix_rows(h_orig, h_switched, orig_ids == sw_ids, r), drawn


def training_step(batch, model, optimizer, mixup: MixupConfig, seed: int, epoch: int, scheduler=None, grad_clip: float = 1.0) -> float:
    model.train()
    embeds, drawn = input_embeddings(model, batch, mixup, seed, epoch)
    logits = model(embeds, batch["token_type_ids"], batch["attention_mask"])
    loss = nn.functional.cross_entropy(logits, batch["labels"])
    if not torch.isfinite(loss):
        dump = {
            "epoch": epoch,
            "keys": [list(k) for k in batch["keys"]],
            "r": {str(k): np.asarray(v).tolist() for k, v in drawn.items()},
        }
        raise TrainingDivergence(f"non-finite loss {loss.item()}; batch dump: {json.dumps(dump)[:2000]}")
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return float(loss.item())


@torch.no_grad()
def predict(model, tokenizer, examples, batch_size: int = 256, max_length: int = 128) -> np.ndarray:
    model.eval()
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        insts = [
            TrainingInstance((ex.index, 0), tokenizer.encode(ex.sentence_a), tokenizer.encode(ex.sentence_b), None, None, ex.label, "eval")
            for ex in chunk
        ]
        batch = collate(insts, tokenizer, max_length)
        logits = model(model.word_embeddings(batch["original_ids"]), batch["token_type_ids"], batch["attention_mask"])
        preds.append(logits.argmax(-1).numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model, tokenizer, examples, batch_size: int = 256, max_length: int = 128) -> float:
    if not examples:
        raise InputError("cannot compute accuracy on an empty set")
    labels = np.array([ex.label for ex in examples])
    return float((predict(model, tokenizer, examples, batch_size, max_length) == labels).mean())


@dataclass
class TrainResult:
    model: nn.Module
    history: list[dict]
    best_epoch: int
    best_dev_accuracy: float
    config_hash: str


def train(config: TrainConfig, originals, augmented, dev, model, tokenizer, log_path: str | Path | None = None) -> TrainResult:
    """Fine-tune ``model`` and restore the epoch with the best source-language dev accuracy."""
    originals = list(originals)
    if not originals:
        raise InputError("no training examples")
    if config.augmentation and not augmented:
        raise ConfigError("augmentation is enabled but no augmented data was provided")
    foreign = sorted({ex.language for ex in dev if ex.language and ex.language != config.source_language})
    if foreign:
        raise DataError(f"dev set must be {config.source_language!r} only, found {foreign}")
    bad = [ex.index for ex in originals if not 0 <= ex.label < config.n_classes]
    if bad:
        raise DataError(f"labels outside [0, {config.n_classes}) at indices {bad[:5]}")
    aug = list(augmented) if config.augmentation else []
    torch.manual_seed(config.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    per_epoch = len(build_training_stream(originals, aug, tokenizer, 0, config.seed, config.augmented_languages, config.include_originals))
    steps_per_epoch = math.ceil(per_epoch / config.batch_size)
    total = config.max_steps or config.epochs * steps_per_epoch
    n_epochs = math.ceil(total / steps_per_epoch)
    warmup = int(config.warmup_ratio * total)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: (step + 1) / max(1, warmup) if step < warmup else max(0.0, (total - step) / max(1, total - warmup))
    )
    history = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    digest = config.config_hash()
    step = 0
    for epoch in range(n_epochs):
        stream = build_training_stream(originals, aug, tokenizer, epoch, config.seed, config.augmented_languages, config.include_originals)
        losses = []
        for start in range(0, len(stream), config.batch_size):
            if step >= total:
                break
            batch = collate(stream[start : start + config.batch_size], tokenizer, config.max_length)
            losses.append(training_step(batch, model, optimizer, config.mixup, config.seed, epoch, scheduler, config.grad_clip))
            step += 1
        dev_acc = accuracy(model, tokenizer, dev, config.eval_batch_size, config.max_length)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "dev_acc": dev_acc,
            "instances": len(stream),
            "steps": step,
            "config_hash": digest,
        }
        history.append(record)
        log.info("epoch %d loss %.4f dev %.4f", epoch, record["train_loss"], dev_acc)
        if dev_acc > best_acc:
            best_acc, best_epoch, best_state = dev_acc, epoch, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    if log_path is not None:
        with Path(log_path).open("w", encoding="utf-8") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")
    return TrainResult(model, history, best_epoch, best_acc, digest)


class HFPairClassifier(nn.Module):
    """Adapts a Hugging Face sequence classifier to the ``inputs_embeds`` calling convention."""

    def __init__(self, hf_model):
        super().__init__()
        self.hf = hf_model

    @property
    def word_embeddings(self) -> nn.Embedding:
        return self.hf.get_input_embeddings()

    def forward(self, inputs_embeds, token_type_ids=None, attention_mask=None):
        return self.hf(inputs_embeds=inputs_embeds, token_type_ids=token_type_ids, attention_mask=attention_mask).logits


def build_classifier(backend: str, checkpoint: str | Path, n_classes: int, seed: int, dropout: float = 0.1):
    """Fresh classification head on a pretrained encoder; returns ``(model, tokenizer)``."""
    torch.manual_seed(seed)
    if backend == "toy":
        from .toy import ToyPairClassifier, load_toy_checkpoint

        encoder, tokenizer, _ = load_toy_checkpoint(checkpoint)
        return ToyPairClassifier(encoder, n_classes, dropout), tokenizer
    if backend == "pretrained":
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        from .scorer import HFTokenizerAdapter

        hf = AutoModelForSequenceClassification.from_pretrained(str(checkpoint), num_labels=n_classes)
        tok = HFTokenizerAdapter(AutoTokenizer.from_pretrained(str(checkpoint)), name=str(checkpoint))
        return HFPairClassifier(hf), tok
    raise ConfigError(f"unknown backend {backend!r}")


def save_checkpoint(path: str | Path, model, config: TrainConfig, backend: str, base_checkpoint: str | Path, tokenizer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "backend": backend,
            "base_checkpoint": str(base_checkpoint),
            "train_config": config.to_dict(),
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "n_classes": config.n_classes,
            "tokenizer": getattr(tokenizer, "name", ""),
        },
        path,
    )


def load_checkpoint(path: str | Path):
    """Rebuild a trained classifier; returns ``(model, tokenizer, metadata)``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model, tokenizer = build_classifier(blob["backend"], blob["base_checkpoint"], blob["n_classes"], blob["seed"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, tokenizer, blob
