import numpy as np
import pytest
import torch

from salt.errors import ConfigError, InputError
from salt.scorer import ToyScorer, load_scorer
from salt.toy import save_toy_checkpoint


def framed(tok, text):
    return [tok.cls_id, *tok.encode(text), tok.sep_id]


def test_distributions_are_normalised(scorer, tokenizer, small_testbed):
    seq = framed(tokenizer, small_testbed.train[0].sentence_a)
    dists = scorer.score_positions(seq)
    assert [d.position for d in dists] == list(range(1, len(seq) - 1))
    for d in dists:
        assert d.probs.shape == (tokenizer.vocab_size,)
        assert abs(d.probs.sum() - 1.0) < 1e-5
        assert (d.probs >= 0).all()


def test_deterministic(scorer, tokenizer, small_testbed):
    seq = framed(tokenizer, small_testbed.train[1].sentence_a)
    a = scorer.score_positions(seq)
    b = scorer.score_positions(seq)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.probs, y.probs)


def test_batch_matches_single(scorer, tokenizer, small_testbed):
    seqs = [framed(tokenizer, ex.sentence_a) for ex in small_testbed.train[:4]]
    seqs.append(framed(tokenizer, small_testbed.train[5].sentence_b))  # shorter, forces padding
    batch = scorer.score_batch(seqs)
    for seq, dists in zip(seqs, batch):
        single = scorer.score_positions(seq)
        for x, y in zip(dists, single):
            assert x.position == y.position
            np.testing.assert_allclose(x.probs, y.probs, atol=1e-5)


class SpyScorer(ToyScorer):
    def __init__(self, encoder, tokenizer):
        super().__init__(encoder, tokenizer)
        self.seen = []

    def _logits(self, input_ids, attention_mask):
        self.seen.append(input_ids.clone())
        return super()._logits(input_ids, attention_mask)


def test_ids_reach_model_unchanged(encoder, tokenizer, small_testbed):
    spy = SpyScorer(encoder, tokenizer)
    seq = framed(tokenizer, small_testbed.train[2].sentence_a)
    spy.score_positions(seq)
    assert spy.seen[0][0].tolist() == seq
    assert tokenizer.mask_id not in spy.seen[0]


def test_errors(scorer, tokenizer):
    with pytest.raises(InputError, match="empty"):
        scorer.score_positions([])
    with pytest.raises(InputError, match="exceeds"):
        scorer.score_positions([tokenizer.cls_id] * (scorer.max_length + 1))
    with pytest.raises(InputError, match="out of range"):
        scorer.score_positions([tokenizer.cls_id, tokenizer.vocab_size + 3])


def test_embed_tokens(scorer, encoder):
    vec = scorer.embed_tokens([7, 8])
    assert vec.dtype == np.float64 and vec.shape == (2, encoder.config.dim)
    np.testing.assert_allclose(vec[0], encoder.word_embeddings.weight[7].detach().double().numpy())


def test_load_scorer_backends(tmp_path, encoder, tokenizer):
    save_toy_checkpoint(tmp_path / "ck", encoder, tokenizer)
    sc = load_scorer("toy", tmp_path / "ck", max_length=16)
    assert sc.max_length == 16
    assert torch.equal(sc.embedding_table.weight, encoder.word_embeddings.weight)
    with pytest.raises(ConfigError):
        load_scorer("gpt", tmp_path / "ck")
    with pytest.raises(InputError):
        load_scorer("toy", tmp_path / "missing")
