import copy
import dataclasses

import numpy as np
import pytest
import torch
from torch import nn

from salt import mixup as mixup_ops
from salt.codeswitch import AugmentationConfig, iter_augmented
from salt.data import TaskExample
from salt.errors import ConfigError, DataError, TrainingDivergence
from salt.mixup import MixupConfig
from salt.toy import save_toy_checkpoint
from salt.trainer import (
    TrainConfig,
    build_training_stream,
    collate,
    input_embeddings,
    load_checkpoint,
    save_checkpoint,
    train,
    training_step,
)


@pytest.fixture(scope="module")
def augmented(small_testbed, scorer, vocab_sets):
    out = []
    for _, augs, _ in iter_augmented(small_testbed.train, AugmentationConfig(), scorer, vocab_sets):
        out.extend(augs)
    return out


def test_stream_counts(small_testbed, augmented, tokenizer):
    n = len(small_testbed.train)
    assert len(augmented) == 4 * n
    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)
    assert len(stream) == 5 * n
    assert sum(not i.augmented for i in stream) == n
    only_en = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1, languages=("en",))
    assert len(only_en) == 2 * n
    no_orig = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1, include_originals=False)
    assert len(no_orig) == 4 * n


def test_stream_shuffle_is_seeded(small_testbed, augmented, tokenizer):
    keys = lambda s: [i.key for i in s]  # noqa: E731
    a = build_training_stream(small_testbed.train, augmented, tokenizer, 2, 7)
    b = build_training_stream(small_testbed.train, augmented, tokenizer, 2, 7)
    c = build_training_stream(small_testbed.train, augmented, tokenizer, 3, 7)
    assert keys(a) == keys(b)
    assert keys(a) != keys(c)
    assert sorted(keys(a)) == sorted(keys(c))
    assert len(set(keys(a))) == len(a)


def test_stream_rejects_dangling_records(small_testbed, augmented, tokenizer):
    bad = dataclasses.replace(augmented[0], source_index=10_000)
    with pytest.raises(DataError, match="10000"):
        build_training_stream(small_testbed.train, [bad], tokenizer, 0, 1)


def test_collate_layout(small_testbed, augmented, tokenizer):
    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)[:6]
    batch = collate(stream, tokenizer)
    n = batch["original_ids"].shape[1]
    assert batch["switched_ids"].shape == (6, n)
    for k, inst in enumerate(stream):
        length = len(inst.original_a) + len(inst.original_b) + 3
        assert batch["attention_mask"][k].sum() == length
        assert batch["original_ids"][k, 0] == tokenizer.cls_id
        assert batch["token_type_ids"][k, length - 1] == 1
        if not inst.augmented:
            assert torch.equal(batch["original_ids"][k], batch["switched_ids"][k])


def test_coefficients_drawn_once_per_augmented_instance(small_testbed, augmented, tokenizer, classifier, monkeypatch):
    calls = []
    real = mixup_ops.sample_coefficients

    def counting(dim, rng):
        calls.append(dim)
        return real(dim, rng)

    monkeypatch.setattr(mixup_ops, "sample_coefficients", counting)
    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)[:16]
    batch = collate(stream, tokenizer)
    _, drawn = input_embeddings(classifier, batch, MixupConfig(), 1, 0)
    n_aug = sum(i.augmented for i in stream)
    assert len(calls) == n_aug == len(drawn)
    calls.clear()
    input_embeddings(classifier, batch, MixupConfig(per_position=True), 1, 0)
    assert len(calls) == n_aug * batch["original_ids"].shape[1]
    calls.clear()
    embeds, drawn = input_embeddings(classifier, batch, MixupConfig(enabled=False), 1, 0)
    assert calls == [] and drawn == {}
    torch.testing.assert_close(embeds, classifier.word_embeddings(batch["switched_ids"]))


def test_coefficients_independent_of_batch_composition(small_testbed, augmented, tokenizer, classifier):
    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)
    aug = [i for i in stream if i.augmented][:4]
    _, big = input_embeddings(classifier, collate(aug, tokenizer), MixupConfig(), 1, 0)
    _, small = input_embeddings(classifier, collate(aug[2:3], tokenizer), MixupConfig(), 1, 0)
    np.testing.assert_array_equal(big[aug[2].key], small[aug[2].key])


def _loss(model, batch, seed=1, epoch=0):
    embeds, _ = input_embeddings(model, batch, MixupConfig(), seed, epoch)
    logits = model(embeds, batch["token_type_ids"], batch["attention_mask"])
    return nn.functional.cross_entropy(logits, batch["labels"])


def test_gradient_matches_finite_differences(small_testbed, augmented, tokenizer, classifier):
    model = classifier.double().eval()
    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)
    insts = [i for i in stream if i.augmented and i.switched_a != i.original_a][:3]
    batch = collate(insts, tokenizer)
    model.zero_grad()
    _loss(model, batch).backward()
    grad = model.word_embeddings.weight.grad.clone()
    changed = (batch["original_ids"] != batch["switched_ids"]) & batch["attention_mask"].bool()
    rows = sorted(set(batch["original_ids"][changed].tolist()) | set(batch["switched_ids"][changed].tolist()))
    rng = np.random.default_rng(0)
    w = model.word_embeddings.weight
    eps = 1e-6
    checked = 0
    for row in rows:
        for col in rng.choice(w.shape[1], size=3, replace=False):
            g = grad[row, col].item()
            if abs(g) < 1e-7:
                continue
            with torch.no_grad():
                w[row, col] += eps
                up = _loss(model, batch).item()
                w[row, col] -= 2 * eps
                down = _loss(model, batch).item()
                w[row, col] += eps
            fd = (up - down) / (2 * eps)
            assert abs(g - fd) / max(abs(g), abs(fd)) < 1e-4, (row, col, g, fd)
            checked += 1
    assert checked >= 5


def _config(**kw):
    base = dict(max_steps=12, batch_size=8, learning_rate=1e-3, warmup_ratio=0.1, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(small_testbed, augmented, tokenizer, classifier):
    a = train(_config(), small_testbed.train, augmented, small_testbed.dev, copy.deepcopy(classifier), tokenizer)
    b = train(_config(), small_testbed.train, augmented, small_testbed.dev, copy.deepcopy(classifier), tokenizer)
    assert a.history == b.history
    for (k, x), (_, y) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        assert torch.equal(x, y), k


def test_step_budget_and_log(tmp_path, small_testbed, augmented, tokenizer, classifier):
    res = train(_config(max_steps=20, augmentation=False), small_testbed.train, [], small_testbed.dev, classifier, tokenizer, tmp_path / "log.jsonl")
    # baseline: 24 originals in batches of 8 is 3 steps per epoch
    assert res.history[-1]["steps"] == 20
    assert len(res.history) == 7
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 7
    assert res.best_dev_accuracy == max(h["dev_acc"] for h in res.history)


def test_training_reduces_loss(small_testbed, tokenizer, classifier):
    res = train(_config(max_steps=60, augmentation=False), small_testbed.train, [], small_testbed.dev, classifier, tokenizer)
    assert res.history[-1]["train_loss"] < res.history[0]["train_loss"]


def test_input_validation(small_testbed, augmented, tokenizer, classifier):
    with pytest.raises(ConfigError):
        train(_config(), small_testbed.train, [], small_testbed.dev, classifier, tokenizer)
    fr_dev = [dataclasses.replace(ex, language="fr") for ex in small_testbed.dev]
    with pytest.raises(DataError, match="dev"):
        train(_config(), small_testbed.train, augmented, fr_dev, classifier, tokenizer)
    bad = [TaskExample("the", "a", 5, "en", 0)]
    with pytest.raises(DataError, match="labels"):
        train(_config(augmentation=False), bad, [], small_testbed.dev, classifier, tokenizer)


def test_divergence_dumps_batch(small_testbed, augmented, tokenizer, classifier):
    class Broken(nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.inner = inner

        @property
        def word_embeddings(self):
            return self.inner.word_embeddings

        def forward(self, *a):
            return self.inner(*a) * float("nan")

    stream = build_training_stream(small_testbed.train, augmented, tokenizer, 0, 1)[:4]
    model = Broken(classifier)
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    with pytest.raises(TrainingDivergence, match="keys"):
        training_step(collate(stream, tokenizer), model, opt, MixupConfig(), 1, 0)


def test_checkpoint_roundtrip(tmp_path, small_testbed, tokenizer, encoder, classifier):
    save_toy_checkpoint(tmp_path / "enc", encoder, tokenizer)
    cfg = _config()
    save_checkpoint(tmp_path / "clf.pt", classifier, cfg, "toy", tmp_path / "enc", tokenizer)
    model, tok, meta = load_checkpoint(tmp_path / "clf.pt")
    assert meta["config_hash"] == cfg.config_hash() and meta["seed"] == 3
    for k, v in classifier.state_dict().items():
        assert torch.equal(model.state_dict()[k], v)
    assert tok.vocab_size == tokenizer.vocab_size
