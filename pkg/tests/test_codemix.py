import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyglot_probe import codemix as cm
from polyglot_probe.errors import InputError


def _dict(entries, src="en", tgt="zh"):
    return cm.BilingualDictionary(src, tgt, entries)


def _rec(text, rid="r1", src="en"):
    return cm.ParallelRecord(rid, src, "de", text, "ref")


@pytest.mark.parametrize(
    "x, expected", [(Fraction(5, 2), 3), (Fraction(3, 2), 2), (Fraction(7, 4), 2), (Fraction(5, 4), 1), (Fraction(0), 0)]
)
def test_round_half_up(x, expected):
    assert cm.round_half_up(x) == expected


def test_replacement_count_decimal_reading():
    # 0.5 * 5 = 2.5 rounds up; 0.25 * 10 = 2.5 rounds up
    assert cm.replacement_count(0.5, 5) == 3
    assert cm.replacement_count(0.25, 10) == 3
    assert cm.replacement_count(0.75, 2) == 2


def test_ratio_zero_is_identity():
    r = _rec("a b c")
    out = cm.generate_codemix(r, _dict({"a": "x"}), 0.0, seed=1)
    assert out.rendered == "a b c" and out.replaced == []


def test_full_ratio_replaces_all():
    out = cm.generate_codemix(_rec("a b c"), _dict({"a": "x", "b": "y", "c": "z"}), 1.0, seed=1)
    assert out.rendered == "x y z"
    assert out.ratio_actual == 1.0


def test_skip_when_not_enough_eligible():
    with pytest.raises(cm.SkipRecord) as info:
        cm.generate_codemix(_rec("a b c d"), _dict({"a": "x"}), 0.75, seed=1)
    assert info.value.n_eligible == 1


def test_eligible_denominator():
    opts = cm.MixOptions(denominator="eligible")
    out = cm.generate_codemix(_rec("a b c d"), _dict({"a": "x", "b": "y"}), 0.5, seed=1, options=opts)
    assert len(out.replaced) == 1 and out.ratio_actual_eligible == 0.5


def test_punctuation_not_eligible():
    out = cm.generate_codemix(_rec("a , b"), _dict({"a": "x", ",": "，", "b": "y"}), 0.5, seed=3,
                              options=cm.MixOptions(denominator="eligible"))
    assert 1 not in out.replaced


def test_same_seed_same_output_and_seed_matters():
    d = _dict({w: w.upper() for w in "abcdefghij"})
    r = _rec(" ".join("abcdefghij"))
    a = cm.generate_codemix(r, d, 0.5, seed=1)
    b = cm.generate_codemix(r, d, 0.5, seed=1)
    assert a == b
    picks = {tuple(cm.generate_codemix(r, d, 0.5, seed=s).replaced) for s in range(10)}
    assert len(picks) > 1


def test_render_joins_han_without_spaces():
    base = "The World Bank hopes to spread that message"
    d = _dict({"hopes": "希望", "spread": "传播", "that": "这一", "message": "理念"})
    out = cm.generate_codemix(_rec(base), d, 0.5, seed=0)
    assert out.rendered == "The World Bank希望to传播这一理念"


def test_render_inserts_space_between_glued_latin():
    seg = cm.segment_with_separators("世界银行", "longest-match", {"世界", "银行"})
    assert cm.render(seg.seps, ["world", "bank"]) == "world bank"


def test_load_parallel_errors(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text(json.dumps({"id": "a", "src_lang": "en", "tgt_lang": "zh", "src": "x"}) + "\n")
    with pytest.raises(InputError, match=r"p.jsonl:1: missing field\(s\) tgt"):
        cm.load_parallel(p)
    row = {"id": "a", "src_lang": "en", "tgt_lang": "zh", "src": "x", "tgt": "y"}
    p.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(InputError, match="duplicate id"):
        cm.load_parallel(p)


def test_dictionary_errors(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("")
    with pytest.raises(InputError, match="empty"):
        cm.build_dictionary(p, "en", "zh")
    p.write_text("a\tb\na\tc\n")
    with pytest.raises(InputError, match="duplicate"):
        cm.build_dictionary(p, "en", "zh")
    assert cm.build_dictionary(p, "en", "zh", strict=False).entries == {"a": "b"}
    p.write_text("a b\n")
    with pytest.raises(InputError, match="d.tsv:1"):
        cm.build_dictionary(p, "en", "zh")


def test_corpus_counts_and_order():
    corpus = [_rec("a b c d", rid=f"r{i}") for i in range(5)] + [_rec("a", rid="short")]
    d = _dict({"a": "x", "b": "y", "c": "z", "d": "w"})
    res = cm.generate_corpus(corpus, [d], seed=2)
    assert len(res.baselines) == 6
    assert len(res.records) + res.summary["skipped"] == 6 * 3
    assert [r.id for r in res.records][:3] == ["r0@0.25", "r0@0.5", "r0@0.75"]
    threaded = cm.generate_corpus(corpus, [d], seed=2, threads=4)
    assert [r.to_dict() for r in threaded.records] == [r.to_dict() for r in res.records]


def test_corpus_skips_unreachable():
    res = cm.generate_corpus([_rec("a b c d")], [_dict({"a": "x"})], ratios=[0.75], seed=0)
    assert res.records == [] and res.summary["skipped"] == 1


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 30),
    covered=st.integers(0, 30),
    ratio=st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]),
    seed=st.integers(0, 2**32),
)
def test_ratio_invariant(n, covered, ratio, seed):
    words = [f"w{i}" for i in range(n)]
    d = _dict({w: f"t{i}" for i, w in enumerate(words[: min(covered, n)])} or {"zz": "q"})
    try:
        out = cm.generate_codemix(_rec(" ".join(words)), d, ratio, seed)
    except cm.SkipRecord:
        assert cm.replacement_count(ratio, n) > min(covered, n)
        return
    assert len(out.replaced) == cm.replacement_count(ratio, n)
    assert len(set(out.replaced)) == len(out.replaced)
    assert all(words[i] in d.entries for i in out.replaced)
    kept = [w for i, w in enumerate(out.rendered.split()) if i not in out.replaced]
    assert kept == [w for i, w in enumerate(words) if i not in out.replaced]
