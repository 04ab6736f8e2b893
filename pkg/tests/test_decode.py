import itertools
import json

import numpy as np
import pytest

from mtlg2p.decode import (
    DecodeConfig, beam_search, beam_search_state, generate_dictionary, greedy_decode, metadata_header, skip_report,
)
from mtlg2p.lexicon import LexiconEntry, build_vocabs, encode_example, encode_word
from mtlg2p.model import ModelConfig, decode_teacher_forced, encode, init_params
from mtlg2p.train import TrainConfig, fit

# three real phonemes + three specials = phoneme vocabulary of 6
TINY_WORDS = [LexiconEntry("ab", ("p", "t"), False), LexiconEntry("ba", ("k",), True)]
MAX_LEN = 5


def tiny_model(seed, scale=1.5, hidden=4):
    vocab = build_vocabs(TINY_WORDS)
    assert len(vocab.phonemes) == 6
    cfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), embed_dim=3, hidden_dim=hidden,
                      cls_hidden1=3, cls_hidden2=3, init_scale=scale)
    return cfg, vocab, init_params(cfg, seed, np.float64)


def sequence_logprob(params, state, vocab, tokens):
    logp = decode_teacher_forced(state, [vocab.out_start, *tokens[:-1]], params).data[0]
    return float(sum(logp[t, tok] for t, tok in enumerate(tokens)))


def exhaustive_best(params, vocab, word, max_len):
    """Score every sequence of real phonemes ending in the end token, up to max_len tokens in total."""
    state = encode([encode_word(word, vocab)], params)
    real = [i for i, s in enumerate(vocab.phonemes) if not s.startswith("<")]
    best = None
    for n in range(max_len):
        for body in itertools.product(real, repeat=n):
            seq = (*body, vocab.out_end)
            key = (-sequence_logprob(params, state, vocab, seq), seq)
            best = key if best is None or key < best else best
    return best[1], -best[0]


def all_sequences_count(vocab, max_len):
    allowed = len(vocab.phonemes) - 2  # pad and output-start are never emitted
    return sum(allowed**k for k in range(1, max_len + 1))


@pytest.mark.parametrize("seed", range(8))
def test_wide_beam_equals_exhaustive_argmax(seed):
    cfg, vocab, params = tiny_model(seed)
    width = all_sequences_count(vocab, MAX_LEN)
    for word in ("ab", "ba"):
        res = beam_search(word, params, vocab, cfg, DecodeConfig(beam_width=width, max_len=MAX_LEN))
        seq, lp = exhaustive_best(params, vocab, word, MAX_LEN)
        assert res.tokens + (vocab.out_end,) == seq
        assert res.logprob == pytest.approx(lp, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_width_one_is_greedy(seed):
    cfg, vocab, params = tiny_model(seed, scale=2.0)
    for word in ("ab", "ba", "abba"):
        dc = DecodeConfig(beam_width=1, max_len=MAX_LEN)
        b, g = beam_search(word, params, vocab, cfg, dc), greedy_decode(word, params, vocab, cfg, dc)
        assert (b.tokens, b.logprob, b.truncated) == (g.tokens, g.logprob, g.truncated)


def test_greedy_never_beats_beam_of_eight():
    for seed in range(100):
        cfg, vocab, params = tiny_model(seed, scale=2.0)
        g = greedy_decode("ab", params, vocab, cfg, DecodeConfig(max_len=MAX_LEN))
        b = beam_search("ab", params, vocab, cfg, DecodeConfig(beam_width=8, max_len=MAX_LEN))
        if not g.truncated:
            assert g.logprob <= b.logprob + 1e-12


def width_scores(seed, word, widths=(1, 2, 3, 4, 5, 8)):
    cfg, vocab, params = tiny_model(seed, scale=2.5)
    out = []
    for width in widths:
        r = beam_search(word, params, vocab, cfg, DecodeConfig(beam_width=width, max_len=6))
        out.append(-np.inf if r.truncated else r.logprob)
    return out


@pytest.mark.xfail(strict=True, reason="pruning can discard the prefix a narrower beam followed; "
                                       "seed 5 on 'abba' scores -5.78 at width 1 but -8.34 at width 2")
def test_best_logprob_non_decreasing_in_width():
    for seed in range(60):
        for word in ("ab", "ba", "abba"):
            scores = width_scores(seed, word)
            assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:])), (seed, word, scores)


def test_every_width_bounded_by_exhaustive_optimum():
    for seed in (5, 13, 46, 53):
        cfg, vocab, params = tiny_model(seed, scale=2.5)
        for word in ("ba", "abba"):
            _, best = exhaustive_best(params, vocab, word, 6)
            assert max(width_scores(seed, word)) <= best + 1e-9


def test_output_has_no_specials_and_respects_cap():
    for seed in range(30):
        cfg, vocab, params = tiny_model(seed, scale=3.0)
        for width in (1, 3):
            r = beam_search("ab", params, vocab, cfg, DecodeConfig(beam_width=width, max_len=3))
            assert not any(p.startswith("<") for p in r.phonemes)
            assert len(r.tokens) + (0 if r.truncated else 1) <= 3
            assert 0 <= r.anglicism_prob <= 1


def test_truncation_flag():
    cfg, vocab, params = tiny_model(0)
    params["out.b"].data[vocab.out_end] = -1e3  # the end token is never competitive
    state = encode([encode_word("ab", vocab)], params)
    # narrow beam: the end token is pruned at every step, so nothing ever finishes
    hyp, truncated = beam_search_state(state, params, vocab, 2, 3)
    assert truncated and not hyp.finished and len(hyp.tokens) == 3
    # a beam wide enough to retire the end token keeps it in the pool and returns it
    hyp, truncated = beam_search_state(state, params, vocab, 4, 3)
    assert not truncated and hyp.tokens == (vocab.out_end,)


def test_decode_config():
    assert DecodeConfig().limit(1) == 8 and DecodeConfig().limit(5) == 20
    assert DecodeConfig(max_len=5).limit(50) == 5
    with pytest.raises(ValueError):
        DecodeConfig(beam_width=0)


def test_deterministic():
    cfg, vocab, params = tiny_model(3)
    a = beam_search("ab", params, vocab, cfg)
    b = beam_search("ab", params, vocab, cfg)
    assert a == b


# dictionary generation on a model overfit to two words ------------------------------------------------

LEX = [LexiconEntry("Boomers", ("b", "u:", "m", "6", "s"), True), LexiconEntry("Fan", ("f", "E:", "n"), False)]


@pytest.fixture(scope="module")
def fitted():
    vocab = build_vocabs(LEX)
    cfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), embed_dim=16, hidden_dim=16, cls_hidden1=8,
                      cls_hidden2=8)
    ex = [encode_example(e, vocab) for e in LEX]
    result = fit(init_params(cfg, 0), ex, ex, cfg, TrainConfig(max_epochs=150, batch_size=2))
    return cfg, vocab, result.best_params


def test_generate_dictionary_rows(fitted):
    cfg, vocab, params = fitted
    out = generate_dictionary(["Boomers", "Fan", "Fax"], params, vocab, cfg)
    assert out.lines == ["Boomers\tb u: m 6 s", "Fan\tf E: n"]
    assert [s["word"] for s in out.skipped] == ["Fax"]
    assert json.loads(skip_report(out))["count"] == 1
    g = greedy_decode("Fan", params, vocab, cfg)
    assert g.phonemes == ("f", "E:", "n")


def test_generate_dictionary_flags(fitted):
    cfg, vocab, params = fitted
    out = generate_dictionary(["Boomers", "Fan"], params, vocab, cfg, emit_flags=True)
    cols = [line.split("\t") for line in out.lines]
    assert [c[3] for c in cols] == ["1", "0"]
    assert all(0 <= float(c[2]) <= 1 for c in cols)
    text = out.text(metadata_header("m.ckpt", DecodeConfig()))
    assert text.splitlines()[0] == "# model=m.ckpt, beam=8, threshold=0.5"


def test_generate_dictionary_empty(fitted):
    cfg, vocab, params = fitted
    out = generate_dictionary([], params, vocab, cfg)
    assert out.lines == [] and out.skipped == [] and out.text() == ""
