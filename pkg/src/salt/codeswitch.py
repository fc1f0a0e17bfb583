"""Offline code-switching: replace tokens with in-language MLM predictions.

Every sentence is scored once (unmasked); the same distributions then serve
all target languages. At each substitutable position the distribution is
restricted to the language's token set minus the original token, and the
best candidate replaces the original if its raw probability clears the
threshold for that language class.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import TaskExample, read_jsonl, write_jsonl
from .errors import ConfigError, InputError, InternalError
from .scorer import PositionDistribution
from .vocab import VocabularySet

log = logging.getLogger(__name__)

DEFAULT_LANGUAGES = ("en", "fr", "es", "de")
SYNONYM_THRESHOLD = 1e-3
CROSSLINGUAL_THRESHOLD = 1e-7


@dataclass(frozen=True)
class TokenSubstitution:
    position: int
    original_id: int
    substituted_id: int
    probability: float
    language: str


@dataclass
class AugmentationConfig:
    target_languages: tuple[str, ...] = DEFAULT_LANGUAGES
    source_language: str = "en"
    synonym_threshold: float = SYNONYM_THRESHOLD
    crosslingual_threshold: float = CROSSLINGUAL_THRESHOLD
    per_language_thresholds: dict[str, float] = field(default_factory=dict)
    # "argmax" is the reproducible default; "sample" draws among candidates above threshold
    selection: str = "argmax"
    seed: int = 0
    batch_size: int = 64

    def __post_init__(self):
        self.target_languages = tuple(self.target_languages)
        problems = []
        if not self.target_languages:
            problems.append("target_languages must be nonempty")
        for name in ("synonym_threshold", "crosslingual_threshold"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                problems.append(f"{name}={v} outside (0, 1]")
        for lang, v in self.per_language_thresholds.items():
            if not 0 < v <= 1:
                problems.append(f"per_language_thresholds[{lang}]={v} outside (0, 1]")
        if self.selection not in ("argmax", "sample"):
            problems.append(f"selection={self.selection!r} (expected argmax or sample)")
        if problems:
            raise ConfigError("; ".join(problems))

    def threshold_for(self, language: str) -> float:
        if language in self.per_language_thresholds:
            return self.per_language_thresholds[language]
        return self.synonym_threshold if language == self.source_language else self.crosslingual_threshold

    def to_dict(self) -> dict:
        return {
            "target_languages": list(self.target_languages),
            "source_language": self.source_language,
            "synonym_threshold": self.synonym_threshold,
            "crosslingual_threshold": self.crosslingual_threshold,
            "per_language_thresholds": dict(sorted(self.per_language_thresholds.items())),
            "selection": self.selection,
            "seed": self.seed,
            "batch_size": self.batch_size,
        }


@dataclass(frozen=True)
class AugmentedExample:
    source_index: int
    language: str
    token_ids_a: tuple[int, ...]
    token_ids_b: tuple[int, ...]
    substitutions_a: tuple[TokenSubstitution, ...]
    substitutions_b: tuple[TokenSubstitution, ...]
    label: int

    @property
    def original_ids_a(self) -> list[int]:
        return revert_substitutions(self.token_ids_a, self.substitutions_a)

    @property
    def original_ids_b(self) -> list[int]:
        return revert_substitutions(self.token_ids_b, self.substitutions_b)

    def to_record(self) -> dict:
        subs = [
            {"seg": seg, "pos": s.position, "orig": s.original_id, "sub": s.substituted_id, "prob": float(s.probability)}
            for seg, group in (("a", self.substitutions_a), ("b", self.substitutions_b))
            for s in group
        ]
        return {
            "source_index": self.source_index,
            "language": self.language,
            "tokens_a": list(self.token_ids_a),
            "tokens_b": list(self.token_ids_b),
            "substitutions": subs,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AugmentedExample":
        lang = rec["language"]
        groups: dict[str, list[TokenSubstitution]] = {"a": [], "b": []}
        for s in rec["substitutions"]:
            groups[s.get("seg", "a")].append(TokenSubstitution(s["pos"], s["orig"], s["sub"], s["prob"], lang))
        return cls(
            int(rec["source_index"]),
            lang,
            tuple(rec["tokens_a"]),
            tuple(rec["tokens_b"]),
            tuple(groups["a"]),
            tuple(groups["b"]),
            int(rec["label"]),
        )


def substitutable_mask(token_ids, tokenizer) -> np.ndarray:
    """True where a token may be replaced.

    Excluded: special tokens, punctuation-only tokens and every piece of a
    word the tokenizer split into several pieces.
    """
    n = len(token_ids)
    cont = [tokenizer.is_continuation(int(t)) for t in token_ids]
    special = tokenizer.special_ids
    mask = np.ones(n, dtype=bool)
    for i, t in enumerate(token_ids):
        t = int(t)
        multi = cont[i] or (i + 1 < n and cont[i + 1])
        if t in special or multi or tokenizer.is_punctuation(t):
            mask[i] = False
    return mask


def propose_substitutions(
    token_ids,
    vocab_set: VocabularySet,
    threshold: float,
    distributions,
    substitutable=None,
    rng: np.random.Generator | None = None,
) -> list[TokenSubstitution]:
    """Best in-set replacement per position, kept only if its probability >= threshold.

    ``distributions`` holds PositionDistribution items indexed into
    ``token_ids``. Pass ``rng`` to sample among qualifying candidates
    (proportionally to probability) instead of taking the argmax.
    """
    n = len(token_ids)
    if not len(vocab_set):
        raise ConfigError(f"vocabulary set for {vocab_set.language!r} is empty")
    positions = [d.position for d in distributions]
    if len(set(positions)) != len(positions) or any(not 0 <= p < n for p in positions):
        raise InternalError(f"distributions do not align with a sequence of length {n}")
    if substitutable is not None and len(substitutable) != n:
        raise InternalError("substitutable mask length differs from token sequence")
    cand = np.fromiter(sorted(vocab_set.token_ids), dtype=np.int64)
    subs = []
    for d in distributions:
        p = d.position
        if substitutable is not None and not substitutable[p]:
            continue
        if d.probs.shape[0] <= cand[-1]:
            raise InternalError("distribution is shorter than the vocabulary set's largest id")
        orig = int(token_ids[p])
        scores = d.probs[cand].astype(np.float64)
        scores[cand == orig] = -np.inf
        if rng is None:
            k = int(np.argmax(scores))
        else:
            ok = np.flatnonzero(scores >= threshold)
            if ok.size == 0:
                continue
            w = scores[ok] / scores[ok].sum()
            k = int(ok[rng.choice(ok.size, p=w)])
        prob = float(scores[k])
        if prob >= threshold:
            subs.append(TokenSubstitution(p, orig, int(cand[k]), prob, vocab_set.language))
    return subs


def apply_substitutions(token_ids, subs) -> list[int]:
    out = [int(t) for t in token_ids]
    seen: set[int] = set()
    for s in subs:
        if s.position in seen:
            raise InputError(f"duplicate substitution at position {s.position}")
        if not 0 <= s.position < len(out):
            raise InputError(f"substitution position {s.position} outside sequence of length {len(out)}")
        seen.add(s.position)
        out[s.position] = s.substituted_id
    return out


def revert_substitutions(token_ids, subs) -> list[int]:
    out = [int(t) for t in token_ids]
    for s in subs:
        out[s.position] = s.original_id
    return out


def _score_sentences(scorer, sentences: list[list[int]], batch_size: int) -> list[list[PositionDistribution]]:
    tok = scorer.tokenizer
    out: list[list[PositionDistribution]] = []
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start : start + batch_size]
        framed = [[tok.cls_id, *ids, tok.sep_id] for ids in chunk]
        for dists in scorer.score_batch(framed):
            # drop the [CLS] offset so positions index the bare sentence
            out.append([PositionDistribution(d.position - 1, d.probs) for d in dists])
    return out


def _check_lengths(scorer, ids: list[int], which: str, index: int) -> None:
    if not ids:
        raise InputError(f"example {index}: sentence {which} tokenizes to nothing")
    if len(ids) + 2 > scorer.max_length:
        raise InputError(f"example {index}: sentence {which} has {len(ids)} tokens, over the scorer maximum")


def _augment_scored(example, ids_a, ids_b, dists_a, dists_b, config, vocab_sets, tokenizer) -> list[AugmentedExample]:
    mask_a = substitutable_mask(ids_a, tokenizer)
    mask_b = substitutable_mask(ids_b, tokenizer)
    out = []
    for k, lang in enumerate(config.target_languages):
        if lang not in vocab_sets:
            raise ConfigError(f"no vocabulary set for target language {lang!r}")
        vs = vocab_sets[lang]
        thr = config.threshold_for(lang)
        rng = np.random.default_rng([config.seed, example.index, k]) if config.selection == "sample" else None
        subs_a = propose_substitutions(ids_a, vs, thr, dists_a, mask_a, rng)
        subs_b = propose_substitutions(ids_b, vs, thr, dists_b, mask_b, rng)
        out.append(
            AugmentedExample(
                example.index,
                lang,
                tuple(apply_substitutions(ids_a, subs_a)),
                tuple(apply_substitutions(ids_b, subs_b)),
                tuple(subs_a),
                tuple(subs_b),
                example.label,
            )
        )
    return out


def augment_example(example: TaskExample, config: AugmentationConfig, scorer, vocab_sets) -> list[AugmentedExample]:
    """One augmented copy per configured language; sentences are scored separately."""
    tok = scorer.tokenizer
    ids_a, ids_b = tok.encode(example.sentence_a), tok.encode(example.sentence_b)
    _check_lengths(scorer, ids_a, "a", example.index)
    _check_lengths(scorer, ids_b, "b", example.index)
    dists_a, dists_b = _score_sentences(scorer, [ids_a, ids_b], 2)
    return _augment_scored(example, ids_a, ids_b, dists_a, dists_b, config, vocab_sets, tok)


def iter_augmented(dataset, config: AugmentationConfig, scorer, vocab_sets):
    """Yield ``(example, augmented_list, n_substitutable)`` in dataset order."""
    tok = scorer.tokenizer
    missing = [lang for lang in config.target_languages if lang not in vocab_sets]
    if missing:
        raise ConfigError(f"no vocabulary set for target language(s): {', '.join(missing)}")
    step = max(1, config.batch_size)
    for start in range(0, len(dataset), step):
        chunk = dataset[start : start + step]
        ids = []
        for ex in chunk:
            a, b = tok.encode(ex.sentence_a), tok.encode(ex.sentence_b)
            _check_lengths(scorer, a, "a", ex.index)
            _check_lengths(scorer, b, "b", ex.index)
            ids.append((a, b))
        dists = _score_sentences(scorer, [s for pair in ids for s in pair], 2 * step)
        for j, ex in enumerate(chunk):
            a, b = ids[j]
            da, db = dists[2 * j], dists[2 * j + 1]
            n_sub = int(substitutable_mask(a, tok).sum() + substitutable_mask(b, tok).sum())
            yield ex, _augment_scored(ex, a, b, da, db, config, vocab_sets, tok), n_sub


def augment_dataset(dataset, config: AugmentationConfig, scorer, vocab_sets, out_dir: str | Path) -> dict:
    """Augment every example and write ``augmented.jsonl`` + ``manifest.json`` into out_dir.

    Files are assembled in a scratch directory and moved into place only on
    success, so a failed run leaves no partial output.
    """
    dataset = list(dataset)
    if not dataset:
        raise InputError("cannot augment an empty dataset")
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stats = {lang: {"examples": 0, "substitutions": 0, "positions": 0} for lang in config.target_languages}
    records = []
    for ex, augmented, n_sub in iter_augmented(dataset, config, scorer, vocab_sets):
        for aug in augmented:
            st = stats[aug.language]
            st["examples"] += 1
            st["substitutions"] += len(aug.substitutions_a) + len(aug.substitutions_b)
            st["positions"] += n_sub
            records.append(aug.to_record())
    languages = {}
    for lang, st in stats.items():
        languages[lang] = {
            "count": st["examples"],
            "threshold": config.threshold_for(lang),
            "threshold_class": "synonym" if lang == config.source_language else "crosslingual",
            "substitutions": st["substitutions"],
            "substitutable_positions": st["positions"],
            "substitution_rate": st["substitutions"] / st["positions"] if st["positions"] else 0.0,
        }
    manifest = {
        "source_examples": len(dataset),
        "augmented_examples": len(records),
        "languages": languages,
        "mean_substitution_rate": float(np.mean([v["substitution_rate"] for v in languages.values()])),
        "thresholds": {"synonym": config.synonym_threshold, "crosslingual": config.crosslingual_threshold},
        "config": config.to_dict(),
        "tokenizer": getattr(scorer.tokenizer, "name", ""),
    }
    scratch = Path(tempfile.mkdtemp(prefix=".augment-", dir=out_dir.parent))
    try:
        write_jsonl(scratch / "augmented.jsonl", records)
        manifest["data_sha256"] = hashlib.sha256((scratch / "augmented.jsonl").read_bytes()).hexdigest()
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        out_dir.mkdir(exist_ok=True)
        for name in ("augmented.jsonl", "manifest.json"):
            shutil.move(str(scratch / name), out_dir / name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    log.info("augmented %d examples into %d records", len(dataset), len(records))
    return manifest


def load_augmented(directory: str | Path) -> list[AugmentedExample]:
    return [AugmentedExample.from_record(r) for r in read_jsonl(Path(directory) / "augmented.jsonl")]
