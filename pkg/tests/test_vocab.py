import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from salt.errors import ConfigError, InputError
from salt.toy import WordTokenizer
from salt.vocab import (
    VocabularyBundle,
    VocabularySet,
    WordList,
    build_token_set,
    coverage_ratio,
    load_frequency_list,
    rank_languages,
)

WORDS = ["chat", "maison", "le", "la", "rouge", "chien", "et"]


@pytest.fixture
def tok():
    # "chien" and "et" are not in the vocabulary, so they split into character pieces
    return WordTokenizer(["chat", "maison", "le", "la", "rouge", "Dog"], lowercase=False)


def test_parse_formats(tmp_path):
    p = tmp_path / "fr.txt"
    p.write_text("1\tChat\n2 maison\nle\t999\n\nchat\nLa\n")
    wl = load_frequency_list(p)
    assert wl.language == "fr"
    assert wl.words == ("chat", "maison", "le", "la")


def test_limit_keeps_most_frequent(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("\n".join(f"w{i}" for i in range(50)))
    assert load_frequency_list(p, limit=10, language="xx").words == tuple(f"w{i}" for i in range(10))


def test_missing_and_empty_lists(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_frequency_list(tmp_path / "nope.txt")
    (tmp_path / "e.txt").write_text("\n\n")
    with pytest.raises(InputError, match="empty"):
        load_frequency_list(tmp_path / "e.txt")


def test_single_token_words_only(tok):
    vs = build_token_set(WordList("fr", tuple(WORDS)), tok)
    expected = {tok.token_to_id[w] for w in ["chat", "maison", "le", "la", "rouge"]}
    assert vs.token_ids == frozenset(expected)
    assert vs.word_count_in == 5 and vs.word_count_total == 7
    assert not vs.token_ids & tok.special_ids


def test_capitalised_form_also_collected(tok):
    vs = build_token_set(WordList("en", ("dog",)), tok)
    assert vs.token_ids == {tok.token_to_id["Dog"]}


def test_character_split_language_rejected():
    # a tokenizer that knows only characters turns every word into several pieces
    char_tok = WordTokenizer([], alphabet="abcdefghijklmnopqrstuvwxyz")
    with pytest.raises(ConfigError, match="zh"):
        build_token_set(WordList("zh", ("zhongwen", "hanzi", "shuxue")), char_tok)
    assert coverage_ratio(WordList("zh", ("zhongwen",)), char_tok) == 0.0


def test_single_letter_words_are_single_tokens():
    # character pieces that happen to be whole words count, like CJK single-character words
    char_tok = WordTokenizer([], alphabet="ab")
    vs = build_token_set(WordList("xx", ("a", "ab")), char_tok)
    assert vs.token_ids == {char_tok.token_to_id["a"]}


@settings(max_examples=40, deadline=None)
@given(st.permutations(WORDS))
def test_set_invariant_to_list_order(perm):
    tok = WordTokenizer(["chat", "maison", "le", "la", "rouge", "Dog"], lowercase=False)
    a = build_token_set(WordList("fr", tuple(WORDS)), tok)
    b = build_token_set(WordList("fr", tuple(perm)), tok)
    assert a == b


def test_roundtrip_json(tmp_path, tok):
    vs = build_token_set(WordList("fr", tuple(WORDS)), tok)
    vs.save(tmp_path / "fr.json")
    blob = json.loads((tmp_path / "fr.json").read_text())
    assert blob["token_ids"] == sorted(blob["token_ids"])
    assert set(blob) == {"language", "token_ids", "word_count_in", "word_count_total"}
    assert VocabularySet.load(tmp_path / "fr.json") == vs


def test_bundle_missing_language(tmp_path, tok):
    build_token_set(WordList("fr", tuple(WORDS)), tok).save(tmp_path / "fr.json")
    with pytest.raises(ConfigError, match="de.json"):
        VocabularyBundle.load_dir(tmp_path, ["fr", "de"])
    bundle = VocabularyBundle.load_dir(tmp_path, ["fr"])
    assert "fr" in bundle
    with pytest.raises(ConfigError, match="'es'"):
        bundle["es"]


def test_rank_languages(tok):
    lists = [
        WordList("fr", ("chat", "le", "la")),
        WordList("xx", ("qqq", "zzz")),
        WordList("en", ("dog",)),
    ]
    ranked = rank_languages(lists, tok, top=2, exclude=("en",))
    assert ranked[0] == ("fr", 1.0)
    assert ranked[1] == ("xx", 0.0)
