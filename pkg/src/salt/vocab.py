"""Frequency word lists and the per-language token-id sets derived from them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InputError

DEFAULT_LIMIT = 10_000


@dataclass(frozen=True)
class WordList:
    language: str
    words: tuple[str, ...]
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class VocabularySet:
    language: str
    token_ids: frozenset[int]
    word_count_in: int
    word_count_total: int

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.token_ids

    def __len__(self) -> int:
        return len(self.token_ids)

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "token_ids": sorted(self.token_ids),
            "word_count_in": self.word_count_in,
            "word_count_total": self.word_count_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VocabularySet":
        return cls(d["language"], frozenset(int(i) for i in d["token_ids"]), int(d["word_count_in"]), int(d["word_count_total"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "VocabularySet":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"vocabulary set not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _parse_entry(line: str) -> str:
    # accepts "word", "rank<TAB>word", "rank word" and "word<TAB>count"
    fields = [f.strip() for f in (line.split("\t") if "\t" in line else line.split())]
    fields = [f for f in fields if f]
    if not fields:
        return ""
    if len(fields) >= 2 and fields[0].rstrip(".").isdigit():
        return fields[1]
    return fields[0]


def load_frequency_list(path: str | Path, limit: int = DEFAULT_LIMIT, language: str | None = None) -> WordList:
    """Read a most-frequent-first word list, case-folded and deduplicated.

    The language defaults to the file stem (``fr.txt`` -> ``fr``).
    """
    if limit <= 0:
        raise InputError(f"limit must be positive, got {limit}")
    path = Path(path)
    if not path.is_file():
        raise InputError(f"frequency list not found: {path}")
    words: list[str] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            word = _parse_entry(line).casefold()
            if not word or word in seen:
                continue
            seen.add(word)
            words.append(word)
            if len(words) >= limit:
                break
    if not words:
        raise InputError(f"frequency list is empty: {path}")
    return WordList(language or path.stem, tuple(words), str(path))


def _surface_forms(word: str) -> list[str]:
    forms = [word]
    cap = word[:1].upper() + word[1:]
    if cap != word:
        forms.append(cap)
    return forms


def build_token_set(word_list: WordList, tokenizer) -> VocabularySet:
    """Keep words that the tokenizer maps to exactly one non-special token.

    Both the lower-case and capitalised surface forms are tried, so cased
    tokenizers contribute both ids. Multi-piece words are dropped: a
    substitution must not change the sequence length.
    """
    if not word_list.words:
        raise InputError(f"word list for {word_list.language!r} is empty")
    special = set(tokenizer.special_ids)
    unk = getattr(tokenizer, "unk_id", None)
    token_ids: set[int] = set()
    kept = 0
    for word in word_list.words:
        hit = False
        for form in _surface_forms(word):
            ids = tokenizer.tokenize_word(form)
            if len(ids) == 1 and ids[0] not in special and ids[0] != unk:
                token_ids.add(ids[0])
                hit = True
        kept += hit
    if not token_ids:
        raise ConfigError(
            f"language {word_list.language!r}: no word in the list maps to a single token; "
            "the tokenizer probably splits this language into characters"
        )
    return VocabularySet(word_list.language, frozenset(token_ids), kept, len(word_list.words))


def coverage_ratio(word_list: WordList, tokenizer) -> float:
    if not word_list.words:
        raise InputError(f"word list for {word_list.language!r} is empty")
    try:
        vs = build_token_set(word_list, tokenizer)
    except ConfigError:
        return 0.0
    return vs.word_count_in / vs.word_count_total


def rank_languages(word_lists, tokenizer, top: int = 3, exclude: tuple[str, ...] = ()) -> list[tuple[str, float]]:
    """Order candidate target languages by vocabulary overlap, highest first."""
    scored = [(wl.language, coverage_ratio(wl, tokenizer)) for wl in word_lists if wl.language not in exclude]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:top]


@dataclass
class VocabularyBundle:
    """All vocabulary sets for one run, keyed by language."""

    sets: dict[str, VocabularySet] = field(default_factory=dict)

    def __getitem__(self, lang: str) -> VocabularySet:
        try:
            return self.sets[lang]
        except KeyError:
            raise ConfigError(f"no vocabulary set for language {lang!r}") from None

    def __contains__(self, lang: str) -> bool:
        return lang in self.sets

    @classmethod
    def load_dir(cls, directory: str | Path, languages) -> "VocabularyBundle":
        directory = Path(directory)
        return cls({lang: VocabularySet.load(directory / f"{lang}.json") for lang in languages})
