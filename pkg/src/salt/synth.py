"""Synthetic multilingual testbed.

Languages share one grammar and one set of function words; every content
concept gets its own surface form in each language, so the exact bilingual
lexicon is known. Some concepts also have a second form (a synonym) within a
language, used interchangeably with the first. A fraction of the pretraining corpus is code-mixed (each
content word drawn from a random language), standing in for the natural
mixing that gives real multilingual encoders their cross-lingual signal.

The sentence-pair task is a small inference problem over semantic
categories: the premise names an entity and an action, the hypothesis names
a category and an action. Labels: 0 entailment (right category, action of
the same kind), 1 neutral (right category, action of another kind), 2
contradiction (wrong category). Labels depend on category membership only,
so deciding them needs lexical knowledge that a model trained on one
language has to transfer through its embeddings.
"""

from __future__ import annotations

import json
import logging
import math
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import TaskExample, load_examples, save_examples, write_jsonl
from .errors import ConfigError, InputError, TrainingDivergence
from .toy import ToyConfig, ToyEncoder, WordTokenizer

log = logging.getLogger(__name__)

FUNCTION_WORDS = ("the", "a", "is", "near", "very", "and")
PUNCT = "."
LABELS = ("entailment", "neutral", "contradiction")
_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticLanguageSpec:
    languages: tuple[str, ...] = ("en", "fr", "es", "de", "el")
    source_language: str = "en"
    n_categories: int = 6
    nouns_per_category: int = 8
    verbs_per_category: int = 4
    adjectives_per_category: int = 4
    pretrain_sentences_per_language: int = 2000
    # code-mixed pretraining sentences, as a fraction of the monolingual total
    codemix_fraction: float = 0.5
    n_train: int = 2000
    n_dev: int = 300
    n_test: int = 600
    # probability that a noun appears with its own adjective/verb rather than a random one
    coherence: float = 0.85
    # fraction of concepts that have a second surface form in each language
    synonym_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.languages = tuple(self.languages)

    def validate(self) -> None:
        problems = []
        if self.source_language not in self.languages:
            problems.append(f"source_language {self.source_language!r} not among languages")
        if len(set(self.languages)) != len(self.languages):
            problems.append("duplicate language codes")
        if self.n_categories < 2:
            problems.append("n_categories must be >= 2 (contradictions need a wrong category)")
        if self.verbs_per_category < 2:
            problems.append("verbs_per_category must be >= 2 (neutral pairs need a second verb)")
        if min(self.nouns_per_category, self.adjectives_per_category) < 1:
            problems.append("each category needs at least one noun and one adjective")
        if not 0 <= self.synonym_fraction <= 1:
            problems.append("synonym_fraction outside [0, 1]")
        if not 0 <= self.codemix_fraction <= 10:
            problems.append("codemix_fraction outside [0, 10]")
        if min(self.n_train, self.n_dev, self.n_test, self.pretrain_sentences_per_language) < 1:
            problems.append("corpus and task sizes must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def concepts_per_category(self) -> int:
        return 1 + self.nouns_per_category + self.verbs_per_category + self.adjectives_per_category

    @property
    def n_concepts(self) -> int:
        return self.n_categories * self.concepts_per_category

    def to_dict(self) -> dict:
        d = asdict(self)
        d["languages"] = list(self.languages)
        return d


@dataclass
class GoldLexicon:
    """Surface forms of every content concept in every language.

    ``forms[lang][c]`` is the primary form of concept ``c``; ``synonyms[lang]``
    maps some concepts to a second form.
    """

    forms: dict[str, list[str]]
    synonyms: dict[str, dict[int, str]] = field(default_factory=dict)

    def forms_of(self, lang: str, concept: int) -> list[str]:
        alt = self.synonyms.get(lang, {}).get(concept)
        return [self.forms[lang][concept]] if alt is None else [self.forms[lang][concept], alt]

    def concept_of(self, lang: str) -> dict[str, int]:
        out = {w: c for c, w in enumerate(self.forms[lang])}
        out.update({w: c for c, w in self.synonyms.get(lang, {}).items()})
        return out

    def mapping(self, src: str, tgt: str) -> dict[str, str]:
        """Primary form to primary form."""
        return dict(zip(self.forms[src], self.forms[tgt]))

    def inverse(self, src: str, tgt: str) -> dict[str, str]:
        return self.mapping(tgt, src)

    def token_map(self, tokenizer, src: str, tgt: str) -> dict[int, frozenset[int]]:
        """Source token id -> ids of every correct counterpart in ``tgt``.

        With ``src == tgt`` the counterparts are the token's synonyms, and
        concepts without one are left out.
        """
        out = {}
        for word, c in self.concept_of(src).items():
            ia = tokenizer.tokenize_word(word)
            if len(ia) != 1:
                continue
            ids = set()
            for form in self.forms_of(tgt, c):
                ib = tokenizer.tokenize_word(form)
                if len(ib) == 1 and ib[0] != ia[0]:
                    ids.add(ib[0])
            if ids:
                out[ia[0]] = frozenset(ids)
        return out

    def to_dict(self) -> dict:
        return {"forms": self.forms, "synonyms": {k: {str(c): w for c, w in v.items()} for k, v in self.synonyms.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "GoldLexicon":
        syn = {k: {int(c): w for c, w in v.items()} for k, v in d.get("synonyms", {}).items()}
        return cls({k: list(v) for k, v in d["forms"].items()}, syn)


@dataclass
class Testbed:
    spec: SyntheticLanguageSpec
    lexicon: GoldLexicon
    corpora: dict[str, list[str]]  # per language, plus "mixed"
    train: list[TaskExample]
    dev: list[TaskExample]
    test: dict[str, list[TaskExample]]
    frequency_lists: dict[str, list[str]]
    categories: dict[str, int] = field(default_factory=dict)  # english noun/word -> category

    def tokenizer(self) -> WordTokenizer:
        words = list(FUNCTION_WORDS) + [PUNCT]
        for lang in self.spec.languages:
            words.extend(self.lexicon.forms[lang])
            words.extend(self.lexicon.synonyms.get(lang, {}).values())
        return WordTokenizer(words, name=f"synth-{self.spec.seed}")

    def pretraining_sentences(self) -> list[str]:
        out = []
        for lang in self.spec.languages:
            out.extend(self.corpora[lang])
        out.extend(self.corpora.get("mixed", []))
        return out


class _Grammar:
    def __init__(self, spec: SyntheticLanguageSpec):
        self.spec = spec
        k = spec.concepts_per_category
        self.category_word = [c * k for c in range(spec.n_categories)]
        self.nouns = [[c * k + 1 + i for i in range(spec.nouns_per_category)] for c in range(spec.n_categories)]
        off = 1 + spec.nouns_per_category
        self.verbs = [[c * k + off + i for i in range(spec.verbs_per_category)] for c in range(spec.n_categories)]
        off += spec.verbs_per_category
        self.adjs = [[c * k + off + i for i in range(spec.adjectives_per_category)] for c in range(spec.n_categories)]
        self.all_nouns = [n for group in self.nouns for n in group]

    def category_of(self, concept: int) -> int:
        return concept // self.spec.concepts_per_category

    def signature(self, noun: int) -> tuple[int, int]:
        """The adjective and verb a noun typically occurs with; unique per noun."""
        c = self.category_of(noun)
        i = self.nouns[c].index(noun)
        a, v = self.spec.adjectives_per_category, self.spec.verbs_per_category
        return self.adjs[c][i % a], self.verbs[c][(i + i // a) % v]

    def _adj(self, rng, noun: int) -> int:
        if rng.random() < self.spec.coherence:
            return self.signature(noun)[0]
        return int(rng.choice(self.adjs[int(rng.integers(self.spec.n_categories))]))

    def _verb(self, rng, noun: int) -> int:
        if rng.random() < self.spec.coherence:
            return self.signature(noun)[1]
        return int(rng.choice(self.verbs[int(rng.integers(self.spec.n_categories))]))

    def pretrain_plan(self, rng) -> list:
        c = int(rng.integers(self.spec.n_categories))
        n = int(rng.choice(self.nouns[c]))
        t = int(rng.integers(6))
        if t == 0:
            return ["the", self._adj(rng, n), n, self._verb(rng, n), PUNCT]
        if t == 1:
            return ["the", self._adj(rng, n), n, "is", "a", self.category_word[c], PUNCT]
        if t == 2:
            return ["the", self._adj(rng, n), n, self._verb(rng, n), "near", "the", int(rng.choice(self.all_nouns)), PUNCT]
        if t == 3:
            return ["a", "very", self._adj(rng, n), self.category_word[c], self._verb(rng, n), PUNCT]
        if t == 4:
            n2 = int(rng.choice(self.nouns[c]))
            return ["the", self._adj(rng, n), n, "and", "the", n2, self._verb(rng, n), PUNCT]
        # category-level statement, the shape task hypotheses take; the verb is
        # unrelated to the category so neither word predicts the other
        return ["a", self.category_word[c], int(rng.choice(self.verbs[int(rng.integers(self.spec.n_categories))])), PUNCT]

    def task_plan(self, rng, label: int) -> tuple[list, list]:
        s = self.spec
        c = int(rng.integers(s.n_categories))
        n = int(rng.choice(self.nouns[c]))
        adj = self._adj(rng, n)
        verb = self._verb(rng, n)
        other = int(rng.choice(self.all_nouns))
        premise = ["the", adj, n, verb, "near", "the", other, PUNCT]
        # labels depend on category membership only, never on exact token identity
        vc = self.category_of(verb)
        cat, hverb = self.category_word[c], int(rng.choice(self.verbs[vc]))
        if label == 1:
            hverb = int(rng.choice(self.verbs[int(rng.choice([k for k in range(s.n_categories) if k != vc]))]))
        elif label == 2:
            cat = self.category_word[int(rng.choice([k for k in range(s.n_categories) if k != c]))]
        return premise, ["a", cat, hverb, PUNCT]


def _new_word(rng, taken: set[str]) -> str:
    while True:
        n_syl = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n_syl))
        if w not in taken:
            taken.add(w)
            return w


def _make_lexicon(spec: SyntheticLanguageSpec, rng) -> GoldLexicon:
    taken = set(FUNCTION_WORDS) | {PUNCT} | set(string.ascii_lowercase)
    forms = {lang: [_new_word(rng, taken) for _ in range(spec.n_concepts)] for lang in spec.languages}
    n_syn = int(round(spec.synonym_fraction * spec.n_concepts))
    synonyms = {}
    for lang in spec.languages:
        chosen = sorted(int(c) for c in rng.choice(spec.n_concepts, size=n_syn, replace=False))
        synonyms[lang] = {c: _new_word(rng, taken) for c in chosen}
    return GoldLexicon(forms, synonyms)


def _pick(lexicon: GoldLexicon, lang: str, concept: int, rng) -> str:
    options = lexicon.forms_of(lang, concept)
    return options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]


def _render(plan, lexicon: GoldLexicon, lang: str, rng) -> str:
    return " ".join(_pick(lexicon, lang, t, rng) if isinstance(t, int) else t for t in plan)


def _render_mixed(plan, lexicon: GoldLexicon, languages, rng) -> str:
    out = []
    for t in plan:
        if isinstance(t, int):
            out.append(_pick(lexicon, languages[int(rng.integers(len(languages)))], t, rng))
        else:
            out.append(t)
    return " ".join(out)


def _task_split(grammar, rng, n: int, lexicon: GoldLexicon, languages, start_index: int) -> dict[str, list[TaskExample]]:
    labels = np.arange(n) % len(LABELS)
    rng.shuffle(labels)
    plans = [grammar.task_plan(rng, int(y)) for y in labels]
    out = {}
    for lang in languages:
        out[lang] = [
            TaskExample(_render(p, lexicon, lang, rng), _render(h, lexicon, lang, rng), int(y), lang, start_index + k)
            for k, ((p, h), y) in enumerate(zip(plans, labels))
        ]
    return out


def generate_corpus(spec: SyntheticLanguageSpec) -> Testbed:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lexicon = _make_lexicon(spec, rng)
    grammar = _Grammar(spec)
    corpora: dict[str, list[str]] = {}
    for lang in spec.languages:
        corpora[lang] = [_render(grammar.pretrain_plan(rng), lexicon, lang, rng) for _ in range(spec.pretrain_sentences_per_language)]
    n_mixed = int(round(spec.codemix_fraction * spec.pretrain_sentences_per_language * len(spec.languages)))
    corpora["mixed"] = [_render_mixed(grammar.pretrain_plan(rng), lexicon, spec.languages, rng) for _ in range(n_mixed)]

    src = spec.source_language
    train = _task_split(grammar, rng, spec.n_train, lexicon, [src], 0)[src]
    dev = _task_split(grammar, rng, spec.n_dev, lexicon, [src], spec.n_train)[src]
    test = _task_split(grammar, rng, spec.n_test, lexicon, spec.languages, spec.n_train + spec.n_dev)

    freq = {}
    for lang in spec.languages:
        counts = Counter(w for s in corpora[lang] for w in s.split() if w.isalpha())
        freq[lang] = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    categories = {w: grammar.category_of(c) for w, c in lexicon.concept_of(src).items()}
    return Testbed(spec, lexicon, corpora, train, dev, test, freq, categories)


def write_testbed(testbed: Testbed, out_dir: str | Path) -> None:
    """Layout: spec.json, lexicon.json, vocab.txt, corpus/<lang>.jsonl, freq/<lang>.txt, task/*.jsonl."""
    out = Path(out_dir)
    for sub in ("corpus", "freq", "task"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(testbed.spec.to_dict(), indent=2) + "\n")
    (out / "lexicon.json").write_text(json.dumps({**testbed.lexicon.to_dict(), "categories": testbed.categories}) + "\n")
    testbed.tokenizer().save(out / "vocab.txt")
    for name, sents in testbed.corpora.items():
        write_jsonl(out / "corpus" / f"{name}.jsonl", ({"text": s} for s in sents))
    for lang, words in testbed.frequency_lists.items():
        (out / "freq" / f"{lang}.txt").write_text("".join(f"{r}\t{w}\n" for r, w in enumerate(words, 1)))
    save_examples(out / "task" / "train.jsonl", testbed.train)
    save_examples(out / "task" / "dev.jsonl", testbed.dev)
    for lang, examples in testbed.test.items():
        save_examples(out / "task" / f"test.{lang}.jsonl", examples)


def read_testbed(directory: str | Path) -> Testbed:
    d = Path(directory)
    if not (d / "spec.json").exists():
        raise InputError(f"no testbed at {d} (spec.json missing)")
    spec = SyntheticLanguageSpec(**json.loads((d / "spec.json").read_text()))
    lex_blob = json.loads((d / "lexicon.json").read_text())
    corpora = {}
    for p in sorted((d / "corpus").glob("*.jsonl")):
        corpora[p.stem] = [json.loads(line)["text"] for line in p.read_text(encoding="utf-8").splitlines() if line]
    freq = {lang: [ln.split("\t")[1] for ln in (d / "freq" / f"{lang}.txt").read_text().splitlines()] for lang in spec.languages}
    test = {lang: load_examples(d / "task" / f"test.{lang}.jsonl") for lang in spec.languages}
    return Testbed(
        spec,
        GoldLexicon.from_dict(lex_blob),
        corpora,
        load_examples(d / "task" / "train.jsonl"),
        load_examples(d / "task" / "dev.jsonl"),
        test,
        freq,
        lex_blob.get("categories", {}),
    )


@dataclass
class PretrainConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    max_len: int = 64
    dropout: float = 0.0
    norm_first: bool = True
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 2e-3
    weight_decay: float = 0.01
    mask_prob: float = 0.2
    # probability of packing two sentences as a segment pair
    pair_prob: float = 0.5
    seed: int = 0

    def model_config(self, vocab_size: int) -> ToyConfig:
        return ToyConfig(
            vocab_size, self.dim, self.n_layers, self.n_heads, self.ff_dim, self.max_len, self.dropout, norm_first=self.norm_first
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _mlm_batch(seqs, segs, tokenizer, rng, mask_prob, replace_pool):
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), tokenizer.pad_id, dtype=np.int64)
    seg = np.zeros_like(ids)
    for k, (s, g) in enumerate(zip(seqs, segs)):
        ids[k, : len(s)] = s
        seg[k, : len(g)] = g
    attn = ids != tokenizer.pad_id
    special = np.isin(ids, list(tokenizer.special_ids))
    chosen = (rng.random(ids.shape) < mask_prob) & ~special
    labels = np.where(chosen, ids, -100)
    roll = rng.random(ids.shape)
    inputs = ids.copy()
    inputs[chosen & (roll < 0.8)] = tokenizer.mask_id
    rand_pos = chosen & (roll >= 0.8) & (roll < 0.9)
    inputs[rand_pos] = rng.choice(replace_pool, size=int(rand_pos.sum()))
    return (
        torch.from_numpy(inputs),
        torch.from_numpy(seg),
        torch.from_numpy(attn.astype(np.int64)),
        torch.from_numpy(labels),
    )


def _pack(encoded, rng, tokenizer, pair_prob, max_len):
    order = rng.permutation(len(encoded))
    seqs, segs = [], []
    k = 0
    while k < len(order):
        a = encoded[order[k]]
        if k + 1 < len(order) and rng.random() < pair_prob and len(a) + len(encoded[order[k + 1]]) + 3 <= max_len:
            b = encoded[order[k + 1]]
            seqs.append([tokenizer.cls_id, *a, tokenizer.sep_id, *b, tokenizer.sep_id])
            segs.append([0] * (len(a) + 2) + [1] * (len(b) + 1))
            k += 2
        else:
            a = a[: max_len - 2]
            seqs.append([tokenizer.cls_id, *a, tokenizer.sep_id])
            segs.append([0] * (len(a) + 2))
            k += 1
    return seqs, segs


def pretrain_toy(sentences, tokenizer: WordTokenizer, config: PretrainConfig | None = None):
    """MLM-pretrain a ToyEncoder; returns ``(encoder, per-epoch mean losses)``.

    Masking follows BERT: ``mask_prob`` of non-special positions are predicted,
    of which 80% become [MASK], 10% a random word and 10% stay unchanged.
    """
    config = config or PretrainConfig()
    if not sentences:
        raise InputError("empty pretraining corpus")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    encoded = [tokenizer.encode(s) for s in sentences]
    pool = np.array(sorted({t for s in encoded for t in s} - set(tokenizer.special_ids)), dtype=np.int64)
    model = ToyEncoder(config.model_config(tokenizer.vocab_size))
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    steps_per_epoch = math.ceil(len(encoded) * (1 - config.pair_prob / 2) / config.batch_size)
    total = max(1, config.epochs * steps_per_epoch)
    warmup = max(1, total // 20)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min((s + 1) / warmup, max(0.05, (total - s) / max(1, total - warmup))))
    history = []
    for epoch in range(config.epochs):
        model.train()
        seqs, segs = _pack(encoded, rng, tokenizer, config.pair_prob, config.max_len)
        losses = []
        for start in range(0, len(seqs), config.batch_size):
            inputs, seg, attn, labels = _mlm_batch(
                seqs[start : start + config.batch_size], segs[start : start + config.batch_size], tokenizer, rng, config.mask_prob, pool
            )
            if not bool((labels != -100).any()):
                continue
            hidden = model.encode(inputs, seg, attn)
            picked = labels != -100
            loss = nn.functional.cross_entropy(model.mlm_logits(hidden[picked]), labels[picked])
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"MLM loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            sched.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        log.info("pretrain epoch %d mlm loss %.4f", epoch, history[-1])
    model.eval()
    return model, history


@dataclass(frozen=True)
class PrecisionReport:
    precision: float
    matched: int
    total: int
    outside_lexicon: int


def substitution_precision(proposals, lexicon_ids: dict[int, int]) -> PrecisionReport:
    """Fraction of substitutions equal to the gold counterpart of their original token.

    ``lexicon_ids`` maps source token id -> the set of correct target ids (a
    bare id is accepted too) for one language pair. Substitutions of tokens outside the lexicon count as misses and are
    tallied in ``outside_lexicon``.
    """
    matched = outside = total = 0
    for sub in proposals:
        total += 1
        gold = lexicon_ids.get(sub.original_id)
        if gold is None:
            outside += 1
        elif sub.substituted_id in (gold if isinstance(gold, (set, frozenset)) else {gold}):
            matched += 1
    return PrecisionReport(matched / total if total else math.nan, matched, total, outside)


def gold_topk_accuracy(scorer, testbed: Testbed, tokenizer, target: str, vocab_set, k: int = 5, n_sentences: int = 300) -> float:
    """How often the gold counterpart is in the top-k of the in-set distribution.

    Scored on source-language test premises at content positions.
    """
    src = testbed.spec.source_language
    gold = testbed.lexicon.token_map(tokenizer, src, target)
    cand = np.array(sorted(vocab_set.token_ids))
    hits = total = 0
    sentences = [tokenizer.encode(ex.sentence_a) for ex in testbed.test[src][:n_sentences]]
    framed = [[tokenizer.cls_id, *s, tokenizer.sep_id] for s in sentences]
    for ids, dists in zip(framed, scorer.score_batch(framed)):
        for d in dists:
            orig = ids[d.position]
            if orig not in gold:
                continue
            scores = d.probs[cand].copy()
            scores[cand == orig] = -np.inf
            top = cand[np.argsort(-scores, kind="stable")[:k]]
            hits += int(bool(gold[orig] & set(top.tolist())))
            total += 1
    return hits / total if total else math.nan
