import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlg2p.lexicon import (
    LexiconEntry, LexiconFormatError, UnknownSymbolError, Vocabulary, batch_examples, build_vocabs, decode_example,
    downsample_balanced, encode_all, encode_example, make_batch, num_batches, parse_lexicon, parse_wordlist,
    positive_ratio, read_words, split_train_valid, tag_entries, write_lexicon,
)

FAN = LexiconEntry("Fan", ("f", "E:", "n"), False)


def entries(n, positives):
    return [LexiconEntry(f"w{i}", ("a",), i < positives) for i in range(n)]


def symbols(seq, table):
    return [table[i] for i in seq]


# parsing ------------------------------------------------------------------------


def test_parse_lexicon_examples(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("# header\nFan\tf E: n\nBoomers\tb u: m 6 s\t1\n", encoding="utf-8")
    fan, boomers = parse_lexicon(p)
    assert fan == LexiconEntry("Fan", ("f", "E:", "n"), None)
    assert boomers.phonemes == ("b", "u:", "m", "6", "s") and boomers.anglicism is True
    empty = tmp_path / "empty.tsv"
    empty.write_text("", encoding="utf-8")
    assert parse_lexicon(empty) == []


def test_parse_lexicon_dedup_keeps_homographs(tmp_path, caplog):
    p = tmp_path / "lex.tsv"
    p.write_text("Fan\tf E: n\nFan\tf E: n\nFan\tf a n\n", encoding="utf-8")
    out = parse_lexicon(p)
    assert [e.phonemes for e in out] == [("f", "E:", "n"), ("f", "a", "n")]
    assert "1" in caplog.text


@pytest.mark.parametrize("line", ["Fan\n", "Fan\tf E: n\t2\n", "\tf\n", "Fan\t\n", "a\tb\t1\tx\n"])
def test_parse_lexicon_malformed_reports_line(tmp_path, line):
    p = tmp_path / "lex.tsv"
    p.write_text("ok\to\n" + line, encoding="utf-8")
    with pytest.raises(LexiconFormatError, match=":2"):
        parse_lexicon(p)


def test_write_then_parse_round_trip(tmp_path):
    es = [FAN, LexiconEntry("Boomers", ("b", "u:", "m", "6", "s"), True)]
    write_lexicon(es, tmp_path / "x.tsv")
    assert (tmp_path / "x.tsv").read_text(encoding="utf-8") == "Fan\tf E: n\t0\nBoomers\tb u: m 6 s\t1\n"
    assert parse_lexicon(tmp_path / "x.tsv") == es


def test_entry_invariants():
    with pytest.raises(ValueError):
        LexiconEntry("", ("a",))
    with pytest.raises(ValueError):
        LexiconEntry("a", ())
    with pytest.raises(ValueError):
        LexiconEntry("a", ("a b",))


def test_parse_wordlist(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("Fan\nfan\n# comment\n  Whistleblower \n", encoding="utf-8")
    words = parse_wordlist(p)
    assert words == {"fan", "whistleblower"}
    tagged = tag_entries([LexiconEntry("Whistleblower", ("v",))], words)
    assert tagged[0].anglicism is True
    assert parse_wordlist(p, case_sensitive=True) == {"Fan", "fan", "Whistleblower"}
    assert read_words(p) == ["Fan", "fan", "Whistleblower"]
    (tmp_path / "e.txt").write_text("", encoding="utf-8")
    assert parse_wordlist(tmp_path / "e.txt") == set()
    with pytest.raises(OSError):
        parse_wordlist(tmp_path / "missing.txt")


# tagging / balancing ----------------------------------------------------------------


def test_tag_entries_ratio():
    es = [LexiconEntry(f"w{i}", ("a",)) for i in range(10)]
    tagged = tag_entries(es, {"w1", "w3", "w5", "w7"})
    assert positive_ratio(tagged) == pytest.approx(0.4)
    assert not any(e.anglicism for e in tag_entries(es, set()))


def test_tag_share_arithmetic():
    flagged = 1386
    assert round(100 * flagged / 62_427, 2) == 2.22
    es = entries(62_427, 0)
    tagged = tag_entries(es, {f"w{i}" for i in range(flagged)})
    assert sum(e.anglicism for e in tagged) == flagged
    assert round(100 * positive_ratio(tagged), 2) == 2.22


@pytest.mark.parametrize("n,pos,expected", [(71_102, 10_063, 20_126), (3_457, 516, 1_032)])
def test_downsample_sizes(n, pos, expected):
    out = downsample_balanced(entries(n, pos), seed=7)
    assert len(out) == expected
    assert sum(e.anglicism for e in out) == expected // 2


def test_downsample_all_kept_and_errors():
    es = entries(10, 5)
    assert sorted(e.word for e in downsample_balanced(es, 0)) == sorted(e.word for e in es)
    with pytest.raises(ValueError):
        downsample_balanced(entries(10, 6), 0)
    assert downsample_balanced(es, 3) == downsample_balanced(es, 3)


@settings(max_examples=50)
@given(st.integers(1, 60), st.data(), st.integers(0, 2**31))
def test_downsample_balanced_subset(n, data, seed):
    pos = data.draw(st.integers(0, n // 2))
    es = entries(n, pos)
    out = downsample_balanced(es, seed)
    assert sum(e.anglicism for e in out) == sum(not e.anglicism for e in out) == pos
    assert len({e.word for e in out}) == len(out)
    assert {e.word for e in out} <= {e.word for e in es}


def test_split_examples():
    es = entries(10, 2)
    s = split_train_valid(es, 3, seed=1)
    assert (len(s.train), len(s.valid)) == (7, 3)
    assert not {e.word for e in s.train} & {e.word for e in s.valid}
    assert split_train_valid(es, 0, 1).valid == []
    again = split_train_valid(es, 3, seed=1)
    assert (again.train, again.valid) == (s.train, s.valid)
    with pytest.raises(ValueError):
        split_train_valid(es, 10, 1)
    assert json.dumps(s.manifest())


# vocab / encoding --------------------------------------------------------------------


def test_build_vocabs_fan():
    v = build_vocabs([FAN])
    assert list(v.graphemes) == ["<pad>", "<s>", "F", "a", "n"]
    assert list(v.phonemes) == ["<pad>", "<os>", "</os>", "E:", "f", "n"]
    assert v.pad == 0 and v.phonemes.index("<pad>") == 0
    assert build_vocabs([FAN, FAN]) == v == build_vocabs([FAN])
    with pytest.raises(ValueError):
        build_vocabs([])


def test_vocab_save_load(tmp_path):
    v = build_vocabs([FAN, LexiconEntry("Ähre", ("E:", "r", "@"))])
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == v


def test_encode_fan():
    v = build_vocabs([FAN])
    ex = encode_example(FAN, v)
    assert symbols(ex.encoder_input, v.graphemes) == ["<s>", "n", "a", "F"]
    assert symbols(ex.decoder_input, v.phonemes) == ["<os>", "f", "E:", "n"]
    assert symbols(ex.decoder_target, v.phonemes) == ["f", "E:", "n", "</os>"]


@pytest.mark.parametrize("word,expected", [("a", ["<s>", "a"]), ("anna", ["<s>", "a", "n", "n", "a"])])
def test_encode_reversal_fixed_points(word, expected):
    e = LexiconEntry(word, ("a",))
    v = build_vocabs([e])
    assert symbols(encode_example(e, v).encoder_input, v.graphemes) == expected


def test_unknown_symbol_policy(caplog):
    v = build_vocabs([FAN])
    bad = LexiconEntry("Fax", ("f",))
    with pytest.raises(UnknownSymbolError):
        encode_example(bad, v)
    examples, kept, skipped = encode_all([FAN, bad], v, skip_unknown=True)
    assert kept == [FAN] and len(examples) == 1 and skipped[0][0] == "Fax"


words = st.text(alphabet="abcdeäöüßXY", min_size=1, max_size=8)
phones = st.lists(st.sampled_from(["a:", "E", "b", "S", "@", "r\\", "U6"]), min_size=1, max_size=8)


@given(st.lists(st.tuples(words, phones, st.booleans()), min_size=1, max_size=6))
def test_encode_decode_round_trip(items):
    es = [LexiconEntry(w, tuple(p), f) for w, p, f in items]
    v = build_vocabs(es)
    for e in es:
        ex = encode_example(e, v)
        assert len(ex.decoder_input) == len(ex.decoder_target)
        assert decode_example(ex, v) == e


# batching -------------------------------------------------------------------------------


@pytest.mark.parametrize("n,expected", [(62_427, 2_498), (71_102, 2_845), (20_126, 806)])
def test_batch_counts(n, expected):
    assert num_batches(n, 25) == expected


@given(st.integers(0, 10_000), st.integers(1, 300))
def test_batch_count_is_ceil(n, size):
    assert num_batches(n, size) == math.ceil(n / size)


def test_batch_examples_padding_and_permutation():
    es = [LexiconEntry(w, tuple(w)) for w in ["a", "bb", "ccc", "dddd", "e"]]
    v = build_vocabs(es)
    ex = [encode_example(e, v) for e in es]
    batches = batch_examples(ex, 2, seed=0, epoch=1)
    assert [len(b) for b in batches] == [2, 2, 1]
    assert sorted(np.concatenate([b.index for b in batches]).tolist()) == list(range(5))
    for b in batches:
        assert b.encoder_input.shape == b.encoder_mask.shape
        assert (b.encoder_input[~b.encoder_mask] == v.pad).all()
        assert (b.decoder_target[~b.decoder_mask] == v.pad).all()
        for row, i in enumerate(b.index):
            assert b.encoder_mask[row].sum() == len(ex[i].encoder_input)
            assert b.decoder_mask[row].sum() == len(ex[i].decoder_target)
    again = batch_examples(ex, 2, seed=0, epoch=1)
    assert all((a.index == b.index).all() for a, b in zip(batches, again))
    orders = {tuple(np.concatenate([b.index for b in batch_examples(ex, 2, 0, e)])) for e in range(6)}
    assert len(orders) > 1
    assert np.concatenate([b.index for b in batch_examples(ex, 2)]).tolist() == list(range(5))


def test_make_batch_labels():
    es = [FAN, LexiconEntry("Fan", ("f", "a", "n"), True)]
    v = build_vocabs(es)
    b = make_batch([encode_example(e, v) for e in es])
    assert b.labels.tolist() == [0.0, 1.0]
