"""The pretrained backend, exercised on a tiny BERT built and saved locally (no downloads)."""

import numpy as np
import pytest
import torch

transformers = pytest.importorskip("transformers")
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors  # noqa: E402

from salt.codeswitch import AugmentationConfig, augment_example, substitutable_mask  # noqa: E402
from salt.data import TaskExample  # noqa: E402
from salt.scorer import PretrainedScorer, load_scorer  # noqa: E402
from salt.trainer import TrainConfig, build_classifier, load_checkpoint, predict, save_checkpoint, train  # noqa: E402
from salt.vocab import VocabularyBundle, WordList, build_token_set  # noqa: E402

WORDS = ["the", "a", "cat", "dog", "runs", "sleeps", "chat", "chien", "gato", "perro", "hund", "katze", "is", "near"]
PIECES = ["##s", "##x", "."]


@pytest.fixture(scope="module")
def tiny_bert(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny-bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", *WORDS, *PIECES]
    wp = Tokenizer(models.WordPiece({w: i for i, w in enumerate(vocab)}, unk_token="[UNK]"))
    wp.normalizer = normalizers.BertNormalizer(lowercase=True)
    wp.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    wp.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]", pair="[CLS] $A [SEP] $B:1 [SEP]:1", special_tokens=[("[CLS]", 2), ("[SEP]", 3)]
    )
    tok = transformers.BertTokenizerFast(
        tokenizer_object=wp, unk_token="[UNK]", pad_token="[PAD]", cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]"
    )
    torch.manual_seed(0)
    cfg = transformers.BertConfig(
        vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1, num_attention_heads=2, intermediate_size=32, max_position_embeddings=64
    )
    transformers.BertForMaskedLM(cfg).save_pretrained(d)
    tok.save_pretrained(d)
    return d


@pytest.fixture(scope="module")
def hf_scorer(tiny_bert):
    return load_scorer("pretrained", tiny_bert)


def framed(tok, text):
    return [tok.cls_id, *tok.encode(text), tok.sep_id]


def test_scorer_distributions(hf_scorer):
    tok = hf_scorer.tokenizer
    seq = framed(tok, "the cat runs near the dog .")
    dists = hf_scorer.score_positions(seq)
    assert len(dists) == len(seq) - 2
    for d in dists:
        assert d.probs.shape == (tok.vocab_size,)
        assert abs(d.probs.sum() - 1) < 1e-5
    other = framed(tok, "a dog sleeps .")
    for x, y in zip(hf_scorer.score_batch([seq, other])[1], hf_scorer.score_positions(other)):
        np.testing.assert_allclose(x.probs, y.probs, atol=1e-5)
    assert hf_scorer.max_length == 64


def test_no_mask_reaches_model(hf_scorer):
    seen = []
    model = hf_scorer.model
    handle = model.register_forward_pre_hook(lambda m, args, kwargs: seen.append(kwargs["input_ids"].clone()), with_kwargs=True)
    try:
        seq = framed(hf_scorer.tokenizer, "the cat sleeps .")
        hf_scorer.score_positions(seq)
    finally:
        handle.remove()
    assert seen[0][0].tolist() == seq
    assert hf_scorer.tokenizer.mask_id not in seen[0]


def test_adapter_word_pieces(hf_scorer):
    tok = hf_scorer.tokenizer
    assert len(tok.tokenize_word("cat")) == 1
    cats = tok.tokenize_word("cats")
    assert len(cats) == 2 and tok.is_continuation(cats[1]) and not tok.is_continuation(cats[0])
    assert tok.is_punctuation(tok.tokenize_word(".")[0])
    seq = framed(tok, "the cats .")
    # [CLS] the cat ##s . [SEP]
    assert substitutable_mask(seq, tok).tolist() == [False, True, False, False, False, False]


def test_vocab_sets_and_augmentation(hf_scorer):
    tok = hf_scorer.tokenizer
    lists = {"en": ("the", "cat", "dogs"), "fr": ("chat", "chien", "le"), "es": ("gato", "perro"), "de": ("hund", "katze")}
    bundle = VocabularyBundle({lang: build_token_set(WordList(lang, words), tok) for lang, words in lists.items()})
    assert bundle["en"].token_ids == {tok.tokenize_word("the")[0], tok.tokenize_word("cat")[0]}
    ex = TaskExample("the cat runs .", "a dog sleeps .", 0, "en", 0)
    out = augment_example(ex, AugmentationConfig(), hf_scorer, bundle)
    assert [a.language for a in out] == ["en", "fr", "es", "de"]
    for a in out:
        assert len(a.token_ids_a) == len(tok.encode(ex.sentence_a))
        assert all(s.substituted_id in bundle[a.language] for s in a.substitutions_a + a.substitutions_b)


def test_classifier_train_and_reload(tmp_path, tiny_bert):
    model, tok = build_classifier("pretrained", tiny_bert, 3, seed=0)
    data = [TaskExample("the cat runs .", "a cat runs .", 0, "en", 0), TaskExample("the dog sleeps .", "a cat runs .", 2, "en", 1)] * 4
    data = [TaskExample(e.sentence_a, e.sentence_b, e.label, "en", i) for i, e in enumerate(data)]
    cfg = TrainConfig(max_steps=4, batch_size=4, augmentation=False, seed=0)
    res = train(cfg, data, [], data[:2], model, tok)
    assert res.history[-1]["steps"] == 4
    save_checkpoint(tmp_path / "clf.pt", res.model, cfg, "pretrained", tiny_bert, tok)
    back, _, meta = load_checkpoint(tmp_path / "clf.pt")
    assert meta["backend"] == "pretrained"
    np.testing.assert_array_equal(predict(back, tok, data), predict(res.model, tok, data))


def test_direct_construction(tiny_bert):
    from salt.scorer import HFTokenizerAdapter

    model = transformers.AutoModelForMaskedLM.from_pretrained(tiny_bert)
    tok = HFTokenizerAdapter(transformers.AutoTokenizer.from_pretrained(tiny_bert))
    sc = PretrainedScorer(model, tok, max_length=16)
    assert sc.max_length == 16
    assert sc.embed_tokens([5]).shape == (1, 16)
