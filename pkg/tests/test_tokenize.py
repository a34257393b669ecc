import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyglot_probe.errors import InputError
from polyglot_probe.tokenize import (
    ARROW,
    BOS,
    PromptTask,
    SynonymTable,
    SyntheticLanguageSpec,
    Vocab,
    build_prompt,
    default_specs,
    gen_synthetic_languages,
    prompt_text,
    read_lexicon_tsv,
    sample_shots,
    segment,
    segment_with_separators,
    write_lexicon_tsv,
)


def test_reserved_ids():
    v = Vocab(["a", "b"])
    assert (v.pad_id, v.bos_id, v.sep_id) == (0, 1, 2)
    assert v.id("a") == 3 and len(v) == 5


def test_vocab_rejects_whitespace_piece():
    with pytest.raises(InputError):
        Vocab(["a b"])


def test_encode_falls_back_to_characters():
    v = Vocab(["ab", "a", "b", "c"])
    assert v.encode("ab cab") == [v.id("ab"), v.id("c"), v.id("a"), v.id("b")]
    with pytest.raises(InputError, match="not in the vocabulary"):
        v.encode("zz")


def test_vocab_file_round_trip(tmp_path):
    v = Vocab(["x", "y"])
    (tmp_path / "v.json").write_text(v.to_json(), encoding="utf-8")
    assert Vocab.load(tmp_path / "v.json").pieces == v.pieces


def test_vocab_load_checks_reserved(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps({"pieces": ["x", "y"]}))
    with pytest.raises(InputError, match="reserved"):
        Vocab.load(tmp_path / "v.json")


def test_synthetic_languages_are_disjoint(lexicon):
    a, b = lexicon.lexicons["aa"], lexicon.lexicons["bb"]
    assert len(set(a)) == len(a) == 12
    assert not set("".join(a)) & set("".join(b))
    for word in a + b:
        assert word in lexicon.vocab


def test_synthetic_languages_deterministic():
    x = gen_synthetic_languages(default_specs(3, 20, seed=5))
    y = gen_synthetic_languages(default_specs(3, 20, seed=5))
    assert x.lexicons == y.lexicons and x.vocab.pieces == y.vocab.pieces


def test_overlapping_ranges_rejected():
    specs = [SyntheticLanguageSpec("aa", 0x100, 0x110), SyntheticLanguageSpec("bb", 0x10F, 0x120)]
    with pytest.raises(InputError, match="overlap"):
        gen_synthetic_languages(specs)


def test_synonyms_first_form_is_primary():
    lex = gen_synthetic_languages(default_specs(2, 8, seed=1, n_synonyms=2))
    for c in range(8):
        for lang in ("aa", "bb"):
            forms = lex.synonyms[c][lang]
            assert len(forms) == 3 and forms[0] == lex.lexicons[lang][c]


def test_synonym_table_round_trip(lexicon, tmp_path):
    (tmp_path / "s.json").write_text(lexicon.synonyms.to_json(), encoding="utf-8")
    back = SynonymTable.load(tmp_path / "s.json")
    assert back.to_dict() == lexicon.synonyms.to_dict()
    assert back.languages == ["aa", "bb"]


def test_synonym_table_rejects_undeclared_language():
    with pytest.raises(InputError, match="undeclared"):
        SynonymTable({0: {"xx": ["w"]}}, languages=["aa"])


def test_prompt_layout(lexicon):
    task = PromptTask("aa", "bb", 0)
    shots = [1, 2, 3, 4, 5]
    lines = prompt_text(task, shots, lexicon.lexicons).split("\n")
    assert len(lines) == 6
    assert lines[0] == f"<aa> : {lexicon.lexicons['aa'][1]} {ARROW} <bb> : {lexicon.lexicons['bb'][1]}"
    assert lines[-1] == f"<aa> : {lexicon.lexicons['aa'][0]} {ARROW} <bb> :"
    ids = build_prompt(task, shots, lexicon.lexicons, lexicon.vocab)
    assert ids[0] == lexicon.vocab.id(BOS)
    assert lexicon.vocab.decode(ids[1:]) == "\n".join(lines)


@pytest.mark.parametrize("shots", [[0, 1, 2, 3, 4], [1, 2, 3, 4]])
def test_prompt_rejects(lexicon, shots):
    with pytest.raises(InputError):
        prompt_text(PromptTask("aa", "bb", 0), shots, lexicon.lexicons)


def test_sample_shots_excludes_query():
    rng = np.random.Generator(np.random.PCG64(0))
    for q in range(10):
        shots = sample_shots(rng, 10, q)
        assert q not in shots and len(set(shots)) == 5


def test_lexicon_tsv_round_trip(tmp_path, lexicon):
    write_lexicon_tsv(tmp_path / "lex.tsv", lexicon.lexicons)
    assert read_lexicon_tsv(tmp_path / "lex.tsv") == lexicon.lexicons


def test_lexicon_tsv_malformed(tmp_path):
    (tmp_path / "bad.tsv").write_text("word\n")
    with pytest.raises(InputError, match="bad.tsv:1"):
        read_lexicon_tsv(tmp_path / "bad.tsv")


def test_longest_match():
    assert segment("abcd", "longest-match", {"ab", "abc", "d"}) == ["abc", "d"]


def test_longest_match_single_char_fallback():
    assert segment("xab", "longest-match", {"ab"}) == ["x", "ab"]


def test_longest_match_needs_lexicon():
    with pytest.raises(InputError):
        segment("abc", "longest-match", set())


def test_unknown_mode():
    with pytest.raises(InputError):
        segment("abc", "bpe")


@given(st.text(alphabet="ab c\t", max_size=30))
def test_whitespace_segmentation_round_trips(text):
    seg = segment_with_separators(text)
    assert seg.join() == text
    assert all(w and not any(c.isspace() for c in w) for w in seg.words)


@settings(max_examples=200)
@given(st.text(alphabet="abcd ", max_size=20))
def test_longest_match_round_trips(text):
    seg = segment_with_separators(text, "longest-match", {"ab", "abc", "d", "cd"})
    assert seg.join() == text
