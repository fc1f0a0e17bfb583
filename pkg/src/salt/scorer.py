"""Masked-LM scoring without masking, over a toy or a pretrained backend.

A scorer feeds the caller's token ids to the model unchanged and returns the
softmax over the full vocabulary at every non-special position. Restricting
the distribution to a language happens downstream in ``codeswitch``.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, InputError
from .toy import ToyEncoder, WordTokenizer, load_toy_checkpoint


@dataclass(frozen=True)
class PositionDistribution:
    position: int
    probs: np.ndarray


class Scorer:
    """Common scoring logic; backends provide ``_logits`` and ``embedding_table``."""

    tokenizer = None
    max_length: int = 512

    @property
    def vocab_size(self) -> int:
        return self.embedding_table.num_embeddings

    @property
    def embedding_dim(self) -> int:
        return self.embedding_table.embedding_dim

    @property
    def special_token_ids(self) -> frozenset[int]:
        return frozenset(self.tokenizer.special_ids)

    @property
    def embedding_table(self) -> torch.nn.Embedding:
        raise NotImplementedError

    def _logits(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def _check(self, token_ids) -> list[int]:
        ids = [int(i) for i in token_ids]
        if not ids:
            raise InputError("cannot score an empty sequence")
        if len(ids) > self.max_length:
            raise InputError(f"sequence of length {len(ids)} exceeds maximum {self.max_length}")
        vs = self.vocab_size
        bad = [i for i in ids if not 0 <= i < vs]
        if bad:
            raise InputError(f"token ids out of range [0, {vs}): {bad[:5]}")
        return ids

    @torch.no_grad()
    def score_batch(self, sequences) -> list[list[PositionDistribution]]:
        seqs = [self._check(s) for s in sequences]
        if not seqs:
            return []
        n = max(len(s) for s in seqs)
        pad = self.tokenizer.pad_id
        input_ids = torch.full((len(seqs), n), pad, dtype=torch.long)
        attention = torch.zeros((len(seqs), n), dtype=torch.long)
        for k, s in enumerate(seqs):
            input_ids[k, : len(s)] = torch.tensor(s)
            attention[k, : len(s)] = 1
        probs = self._logits(input_ids, attention).double().softmax(-1).numpy()
        special = self.special_token_ids
        out = []
        for k, s in enumerate(seqs):
            out.append([PositionDistribution(i, probs[k, i]) for i, t in enumerate(s) if t not in special])
        return out

    def score_positions(self, token_ids) -> list[PositionDistribution]:
        return self.score_batch([token_ids])[0]

    @torch.no_grad()
    def embed_tokens(self, token_ids) -> np.ndarray:
        ids = [int(i) for i in token_ids]
        bad = [i for i in ids if not 0 <= i < self.vocab_size]
        if bad:
            raise InputError(f"token ids out of range [0, {self.vocab_size}): {bad[:5]}")
        return self.embedding_table(torch.tensor(ids, dtype=torch.long)).double().numpy()


class ToyScorer(Scorer):
    def __init__(self, encoder: ToyEncoder, tokenizer: WordTokenizer):
        self.encoder = encoder.eval()
        self.tokenizer = tokenizer
        self.max_length = encoder.config.max_len

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "ToyScorer":
        encoder, tokenizer, _ = load_toy_checkpoint(path)
        return cls(encoder, tokenizer)

    @property
    def embedding_table(self) -> torch.nn.Embedding:
        return self.encoder.word_embeddings

    def _logits(self, input_ids, attention_mask):
        self.encoder.eval()
        return self.encoder(input_ids, attention_mask=attention_mask)


class HFTokenizerAdapter:
    """Exposes a Hugging Face tokenizer through the toolkit's tokenizer interface."""

    def __init__(self, hf_tokenizer, name: str = ""):
        self.hf = hf_tokenizer
        self.name = name or getattr(hf_tokenizer, "name_or_path", "hf")
        self.pad_id = hf_tokenizer.pad_token_id
        self.unk_id = hf_tokenizer.unk_token_id
        self.cls_id = hf_tokenizer.cls_token_id
        self.sep_id = hf_tokenizer.sep_token_id
        self.mask_id = hf_tokenizer.mask_token_id
        self.special_ids = frozenset(i for i in hf_tokenizer.all_special_ids if i is not None)
        self._tokens = hf_tokenizer.convert_ids_to_tokens(list(range(len(hf_tokenizer))))
        # WordPiece marks continuations with "##"; SentencePiece marks word starts with "▁"
        self._sentencepiece = any(t.startswith("▁") for t in self._tokens if t)

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    def tokenize_word(self, word: str) -> list[int]:
        return list(self.hf.encode(word, add_special_tokens=False))

    def encode(self, text: str) -> list[int]:
        return list(self.hf.encode(text, add_special_tokens=False))

    def decode(self, ids) -> str:
        return self.hf.decode(list(ids))

    def id_to_token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def is_continuation(self, token_id: int) -> bool:
        tok = self._tokens[token_id]
        if self._sentencepiece:
            return not tok.startswith("▁") and token_id not in self.special_ids
        return tok.startswith("##")

    def is_punctuation(self, token_id: int) -> bool:
        tok = self._tokens[token_id].lstrip("▁")
        if tok.startswith("##"):
            tok = tok[2:]
        return bool(tok) and all(c in string.punctuation or not c.isalnum() for c in tok)


class PretrainedScorer(Scorer):
    """Backend over a Hugging Face masked LM (e.g. ``bert-base-multilingual-uncased``)."""

    def __init__(self, model, tokenizer: HFTokenizerAdapter, max_length: int | None = None):
        self.model = model.eval()
        self.tokenizer = tokenizer
        limit = getattr(model.config, "max_position_embeddings", 512)
        self.max_length = min(max_length or limit, limit)

    @classmethod
    def from_pretrained(cls, name_or_path: str, max_length: int | None = None) -> "PretrainedScorer":
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover
            raise ConfigError("the pretrained backend needs the 'transformers' package") from exc
        model = AutoModelForMaskedLM.from_pretrained(name_or_path)
        tok = AutoTokenizer.from_pretrained(name_or_path)
        return cls(model, HFTokenizerAdapter(tok, name=str(name_or_path)), max_length)

    @property
    def embedding_table(self) -> torch.nn.Embedding:
        return self.model.get_input_embeddings()

    def _logits(self, input_ids, attention_mask):
        self.model.eval()
        return self.model(input_ids=input_ids, attention_mask=attention_mask).logits


def load_scorer(backend: str, checkpoint: str | Path, max_length: int | None = None) -> Scorer:
    if backend == "toy":
        scorer = ToyScorer.from_checkpoint(checkpoint)
        if max_length:
            scorer.max_length = min(scorer.max_length, max_length)
        return scorer
    if backend == "pretrained":
        return PretrainedScorer.from_pretrained(str(checkpoint), max_length)
    raise ConfigError(f"unknown scorer backend {backend!r} (expected 'toy' or 'pretrained')")
