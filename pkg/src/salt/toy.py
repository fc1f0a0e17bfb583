"""Word-level tokenizer and small transformer encoder for the synthetic testbed.

The tokenizer knows a fixed word list. Unknown words fall back to one piece
per character (``c``, ``##c``, ...) so multi-piece words exist and can be
filtered the same way as WordPiece output from a real tokenizer.
"""

from __future__ import annotations

import string
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import InputError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION_PREFIX = "##"
DEFAULT_ALPHABET = string.ascii_lowercase


class WordTokenizer:
    """Whitespace tokenizer over a closed word vocabulary with a character fallback."""

    def __init__(self, words, alphabet: str = DEFAULT_ALPHABET, lowercase: bool = True, name: str = "toy-word"):
        self.lowercase = lowercase
        self.name = name
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for w in words:
            w = w.lower() if lowercase else w
            if w not in seen:
                seen.add(w)
                tokens.append(w)
        for ch in alphabet:
            for piece in (ch, CONTINUATION_PREFIX + ch):
                if piece not in seen:
                    seen.add(piece)
                    tokens.append(piece)
        self.alphabet = alphabet
        self.id_to_token_list = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]
        self.mask_id = self.token_to_id[MASK]
        self.special_ids = frozenset(self.token_to_id[t] for t in SPECIAL_TOKENS)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token_list)

    def tokenize_word(self, word: str) -> list[int]:
        if self.lowercase:
            word = word.lower()
        if word in self.token_to_id:
            return [self.token_to_id[word]]
        ids = []
        for k, ch in enumerate(word):
            piece = ch if k == 0 else CONTINUATION_PREFIX + ch
            ids.append(self.token_to_id.get(piece, self.unk_id))
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self.tokenize_word(word))
        return ids

    def decode(self, ids) -> str:
        words: list[str] = []
        for i in ids:
            tok = self.id_to_token_list[int(i)]
            if tok.startswith(CONTINUATION_PREFIX) and words:
                words[-1] += tok[len(CONTINUATION_PREFIX):]
            else:
                words.append(tok)
        return " ".join(words)

    def id_to_token(self, token_id: int) -> str:
        return self.id_to_token_list[token_id]

    def is_continuation(self, token_id: int) -> bool:
        return self.id_to_token_list[token_id].startswith(CONTINUATION_PREFIX)

    def is_punctuation(self, token_id: int) -> bool:
        tok = self.id_to_token_list[token_id]
        if tok.startswith(CONTINUATION_PREFIX):
            tok = tok[len(CONTINUATION_PREFIX):]
        return bool(tok) and all(c in string.punctuation for c in tok)

    def save(self, path: str | Path) -> None:
        """Write one token per line; the first lines are the special tokens."""
        Path(path).write_text("\n".join(self.id_to_token_list) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, lowercase: bool = True, name: str = "toy-word") -> "WordTokenizer":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise InputError(f"{path}: not a toy tokenizer vocabulary (bad special-token header)")
        tok = cls.__new__(cls)
        tok.lowercase = lowercase
        tok.name = name
        tok.id_to_token_list = tokens
        tok.token_to_id = {t: i for i, t in enumerate(tokens)}
        tok.alphabet = "".join(t for t in tokens if len(t) == 1)
        tok.pad_id = tok.token_to_id[PAD]
        tok.unk_id = tok.token_to_id[UNK]
        tok.cls_id = tok.token_to_id[CLS]
        tok.sep_id = tok.token_to_id[SEP]
        tok.mask_id = tok.token_to_id[MASK]
        tok.special_ids = frozenset(tok.token_to_id[t] for t in SPECIAL_TOKENS)
        return tok


@dataclass
class ToyConfig:
    vocab_size: int
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    max_len: int = 64
    dropout: float = 0.1
    n_segments: int = 2
    norm_first: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


class ToyEncoder(nn.Module):
    """BERT-shaped encoder: token + position + segment embeddings, then transformer layers.

    The MLM decoder is tied to the token embedding table. ``encode_embeddings``
    accepts precomputed token-embedding rows so callers can inject mixed rows.
    """

    def __init__(self, config: ToyConfig):
        super().__init__()
        self.config = config
        self.word_embeddings = nn.Embedding(config.vocab_size, config.dim)
        self.position_embeddings = nn.Embedding(config.max_len, config.dim)
        self.segment_embeddings = nn.Embedding(config.n_segments, config.dim)
        self.emb_norm = nn.LayerNorm(config.dim)
        self.emb_dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            config.dim,
            config.n_heads,
            config.ff_dim,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=config.norm_first,
        )
        self.layers = nn.TransformerEncoder(
            layer, config.n_layers, norm=nn.LayerNorm(config.dim) if config.norm_first else None, enable_nested_tensor=False
        )
        self.mlm_transform = nn.Sequential(nn.Linear(config.dim, config.dim), nn.GELU(), nn.LayerNorm(config.dim))
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for emb in (self.word_embeddings, self.position_embeddings, self.segment_embeddings):
            nn.init.normal_(emb.weight, std=0.02)

    @property
    def embedding_dim(self) -> int:
        return self.config.dim

    def encode_embeddings(self, token_embeds, token_type_ids=None, attention_mask=None):
        b, n, _ = token_embeds.shape
        if n > self.config.max_len:
            raise InputError(f"sequence length {n} exceeds model maximum {self.config.max_len}")
        pos = torch.arange(n, device=token_embeds.device).unsqueeze(0).expand(b, n)
        if token_type_ids is None:
            token_type_ids = torch.zeros(b, n, dtype=torch.long, device=token_embeds.device)
        h = token_embeds + self.position_embeddings(pos) + self.segment_embeddings(token_type_ids)
        h = self.emb_dropout(self.emb_norm(h))
        pad_mask = None if attention_mask is None else attention_mask == 0
        return self.layers(h, src_key_padding_mask=pad_mask)

    def encode(self, input_ids, token_type_ids=None, attention_mask=None):
        return self.encode_embeddings(self.word_embeddings(input_ids), token_type_ids, attention_mask)

    def mlm_logits(self, hidden):
        return self.mlm_transform(hidden) @ self.word_embeddings.weight.T + self.mlm_bias

    def forward(self, input_ids, token_type_ids=None, attention_mask=None):
        return self.mlm_logits(self.encode(input_ids, token_type_ids, attention_mask))


class ToyPairClassifier(nn.Module):
    """Sentence-pair classifier on top of a (pretrained) ToyEncoder, pooled at [CLS]."""

    def __init__(self, encoder: ToyEncoder, n_classes: int, dropout: float = 0.1):
        super().__init__()
        self.encoder = encoder
        dim = encoder.config.dim
        self.pooler = nn.Sequential(nn.Linear(dim, dim), nn.Tanh())
        self.dropout = nn.Dropout(dropout)
        self.head = nn.Linear(dim, n_classes)
        self.n_classes = n_classes

    @property
    def word_embeddings(self) -> nn.Embedding:
        return self.encoder.word_embeddings

    def forward(self, inputs_embeds, token_type_ids=None, attention_mask=None):
        hidden = self.encoder.encode_embeddings(inputs_embeds, token_type_ids, attention_mask)
        return self.head(self.dropout(self.pooler(hidden[:, 0])))


def save_toy_checkpoint(path: str | Path, encoder: ToyEncoder, tokenizer: WordTokenizer, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tokenizer.save(path / "vocab.txt")
    torch.save(
        {"config": encoder.config.to_dict(), "state_dict": encoder.state_dict(), "tokenizer": tokenizer.name, **(extra or {})},
        path / "encoder.pt",
    )


def load_toy_checkpoint(path: str | Path) -> tuple[ToyEncoder, WordTokenizer, dict]:
    path = Path(path)
    if not (path / "encoder.pt").exists():
        raise InputError(f"no toy checkpoint at {path}")
    blob = torch.load(path / "encoder.pt", map_location="cpu", weights_only=False)
    tokenizer = WordTokenizer.load(path / "vocab.txt", name=blob.get("tokenizer", "toy-word"))
    encoder = ToyEncoder(ToyConfig(**blob["config"]))
    encoder.load_state_dict(blob["state_dict"])
    encoder.eval()
    return encoder, tokenizer, blob

