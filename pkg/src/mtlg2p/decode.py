"""Beam-search and greedy phoneme generation, and dictionary output."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .lexicon import UnknownSymbolError, Vocabulary, encode_word
from .model import ModelConfig, ModelParams, classify, decoder_step, encode
from .numcore import Tensor

log = logging.getLogger(__name__)


@dataclass
class DecodeConfig:
    beam_width: int = 8
    max_len_factor: int = 4
    max_len_floor: int = 8
    threshold: float = 0.5
    max_len: int | None = None  # fixed cap; overrides the factor/floor rule

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    def limit(self, n_graphemes: int) -> int:
        """Max decoder steps, counting the end token."""
        if self.max_len is not None:
            return self.max_len
        return max(self.max_len_floor, self.max_len_factor * n_graphemes)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool = False


@dataclass
class DecodeResult:
    phonemes: tuple[str, ...]
    tokens: tuple[int, ...]  # without the end token
    logprob: float
    anglicism_prob: float
    truncated: bool = False


def _rank(h: Hypothesis):
    return (-h.logprob, h.tokens)


def _blocked(vocab: Vocabulary) -> np.ndarray:
    ids = [vocab.pad, vocab.out_start]
    return np.array(ids, dtype=np.int64)


def _prepare(word: str, params: ModelParams, vocab: Vocabulary, cfg: ModelConfig):
    enc = encode_word(word, vocab)
    with nc.no_grad():
        state = encode(np.array([enc]), params)
        p = classify(state, params, "eval", dropout=cfg.dropout, prelu_alpha=cfg.prelu_alpha)
    return state, float(p.data[0])


def _repeat(states, rows):
    return [(Tensor(h.data[rows]), Tensor(c.data[rows])) for h, c in states]


def beam_search_state(state, params: ModelParams, vocab: Vocabulary, width: int, max_steps: int):
    """Length-synchronous beam search from an encoder state. Returns (best Hypothesis, truncated flag)."""
    end = vocab.out_end
    blocked = _blocked(vocab)
    live = [Hypothesis((), 0.0)]
    states = list(state.layers)
    pool: list[Hypothesis] = []
    for _ in range(max_steps):
        tokens = np.array([h.tokens[-1] if h.tokens else vocab.out_start for h in live])
        with nc.no_grad():
            states, logp = decoder_step(params, states, tokens)
        scores = logp.data.astype(np.float64)
        scores[:, blocked] = -np.inf
        cands = []
        for r, h in enumerate(live):
            row = scores[r]
            # each live row contributes at most `width` useful candidates
            top = np.argsort(-row, kind="stable")[:width] if row.size > width else np.argsort(-row, kind="stable")
            for tok in top:
                if np.isneginf(row[tok]):
                    continue
                cands.append((Hypothesis(h.tokens + (int(tok),), h.logprob + float(row[tok]), int(tok) == end), r))
        cands.sort(key=lambda c: _rank(c[0]))
        kept_rows, next_live = [], []
        for hyp, r in cands[:width]:
            if hyp.finished:
                pool.append(hyp)
            else:
                next_live.append(hyp)
                kept_rows.append(r)
        live = next_live
        if not live:
            break
        if pool:
            best_done = min(pool, key=_rank)
            # log-probs only decrease; a live prefix strictly below the best finished one cannot win
            if best_done.logprob > max(h.logprob for h in live):
                break
        states = _repeat(states, np.array(kept_rows))
    if pool:
        return min(pool, key=_rank), False
    return min(live, key=_rank), True


def greedy_state(state, params: ModelParams, vocab: Vocabulary, max_steps: int):
    end = vocab.out_end
    blocked = _blocked(vocab)
    states = list(state.layers)
    tokens: tuple[int, ...] = ()
    total = 0.0
    prev = vocab.out_start
    for _ in range(max_steps):
        with nc.no_grad():
            states, logp = decoder_step(params, states, np.array([prev]))
        row = logp.data[0].astype(np.float64)
        row[blocked] = -np.inf
        tok = int(np.argmax(row))
        total += float(row[tok])
        tokens += (tok,)
        if tok == end:
            return Hypothesis(tokens, total, True), False
        prev = tok
    return Hypothesis(tokens, total, False), True


def _result(hyp: Hypothesis, truncated: bool, prob: float, vocab: Vocabulary, word: str) -> DecodeResult:
    toks = hyp.tokens[:-1] if hyp.finished else hyp.tokens
    if truncated:
        log.warning("no hypothesis for %r finished within the length cap", word)
    return DecodeResult(tuple(vocab.phonemes[t] for t in toks), toks, hyp.logprob, prob, truncated)


def beam_search(word: str, params: ModelParams, vocab: Vocabulary, model_cfg: ModelConfig, cfg: DecodeConfig | None = None) -> DecodeResult:
    """Best phoneme sequence by raw log-probability plus the Anglicism probability."""
    cfg = cfg or DecodeConfig()
    state, prob = _prepare(word, params, vocab, model_cfg)
    hyp, truncated = beam_search_state(state, params, vocab, cfg.beam_width, cfg.limit(len(word)))
    return _result(hyp, truncated, prob, vocab, word)


def greedy_decode(word: str, params: ModelParams, vocab: Vocabulary, model_cfg: ModelConfig, cfg: DecodeConfig | None = None) -> DecodeResult:
    cfg = cfg or DecodeConfig()
    state, prob = _prepare(word, params, vocab, model_cfg)
    hyp, truncated = greedy_state(state, params, vocab, cfg.limit(len(word)))
    return _result(hyp, truncated, prob, vocab, word)


@dataclass
class DictionaryOutput:
    lines: list[str]
    results: list[tuple[str, DecodeResult]]
    skipped: list[dict]

    def text(self, header: str | None = None) -> str:
        body = "".join(line + "\n" for line in self.lines)
        return (f"# {header}\n" if header else "") + body


def generate_dictionary(words: Iterable[str], params: ModelParams, vocab: Vocabulary, model_cfg: ModelConfig,
                        cfg: DecodeConfig | None = None, emit_flags: bool = False) -> DictionaryOutput:
    """Decode each word in input order. Words with unknown graphemes are skipped and reported."""
    cfg = cfg or DecodeConfig()
    lines, results, skipped = [], [], []
    for word in words:
        try:
            res = beam_search(word, params, vocab, model_cfg, cfg)
        except UnknownSymbolError as e:
            skipped.append({"word": word, "reason": str(e)})
            continue
        cols = [word, " ".join(res.phonemes)]
        if emit_flags:
            cols += [f"{res.anglicism_prob:.6f}", "1" if res.anglicism_prob >= cfg.threshold else "0"]
        lines.append("\t".join(cols))
        results.append((word, res))
    return DictionaryOutput(lines, results, skipped)


def metadata_header(model_name: str, cfg: DecodeConfig) -> str:
    return f"model={model_name}, beam={cfg.beam_width}, threshold={cfg.threshold}"


def skip_report(out: DictionaryOutput) -> str:
    return json.dumps({"skipped": out.skipped, "count": len(out.skipped)}, ensure_ascii=False, indent=1) + "\n"
