"""Lexicon and word-list ingestion, tagging, splitting, vocabularies and sequence encoding."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import stream

log = logging.getLogger(__name__)

PAD = "<pad>"
START = "<s>"
OUT_START = "<os>"
OUT_END = "</os>"
GRAPHEME_SPECIALS = (PAD, START)
PHONEME_SPECIALS = (PAD, OUT_START, OUT_END)


class LexiconFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class UnknownSymbolError(KeyError):
    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    phonemes: tuple[str, ...]
    anglicism: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(self.phonemes))
        if not self.word:
            raise ValueError("empty word")
        if not self.phonemes:
            raise ValueError(f"{self.word!r} has no phonemes")
        for p in self.phonemes:
            if not p or any(c.isspace() for c in p):
                raise ValueError(f"bad phoneme token {p!r} in {self.word!r}")

    def to_line(self, with_flag: bool = True) -> str:
        cols = [self.word, " ".join(self.phonemes)]
        if with_flag and self.anglicism is not None:
            cols.append("1" if self.anglicism else "0")
        return "\t".join(cols)


@dataclass(frozen=True)
class EncodedExample:
    encoder_input: tuple[int, ...]
    decoder_input: tuple[int, ...]
    decoder_target: tuple[int, ...]
    label: bool


@dataclass
class DatasetSplit:
    train: list[LexiconEntry]
    valid: list[LexiconEntry]
    seed: int

    def manifest(self) -> dict:
        return {"seed": self.seed, "train": split_stats(self.train), "valid": split_stats(self.valid)}


class Vocabulary:
    """Grapheme and phoneme symbol tables. ``<pad>`` is index 0 in both."""

    def __init__(self, graphemes: Sequence[str], phonemes: Sequence[str]):
        self.graphemes = tuple(graphemes)
        self.phonemes = tuple(phonemes)
        self.grapheme_index = {s: i for i, s in enumerate(self.graphemes)}
        self.phoneme_index = {s: i for i, s in enumerate(self.phonemes)}
        if len(self.grapheme_index) != len(self.graphemes) or len(self.phoneme_index) != len(self.phonemes):
            raise ValueError("duplicate symbols in vocabulary")
        if self.graphemes[: len(GRAPHEME_SPECIALS)] != GRAPHEME_SPECIALS:
            raise ValueError(f"grapheme table must start with {GRAPHEME_SPECIALS}")
        if self.phonemes[: len(PHONEME_SPECIALS)] != PHONEME_SPECIALS:
            raise ValueError(f"phoneme table must start with {PHONEME_SPECIALS}")

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and (self.graphemes, self.phonemes) == (other.graphemes, other.phonemes)

    def __repr__(self):
        return f"Vocabulary({len(self.graphemes)} graphemes, {len(self.phonemes)} phonemes)"

    @property
    def pad(self) -> int:
        return 0

    @property
    def start(self) -> int:
        return self.grapheme_index[START]

    @property
    def out_start(self) -> int:
        return self.phoneme_index[OUT_START]

    @property
    def out_end(self) -> int:
        return self.phoneme_index[OUT_END]

    def special_phoneme_ids(self) -> tuple[int, ...]:
        return tuple(self.phoneme_index[s] for s in PHONEME_SPECIALS)

    def to_dict(self) -> dict:
        return {"graphemes": list(self.graphemes), "phonemes": list(self.phonemes)}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls(d["graphemes"], d["phonemes"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# reading


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def parse_lexicon(path, has_flag_column: bool | None = None) -> list[LexiconEntry]:
    """Read ``word<TAB>phonemes[<TAB>0|1]`` lines.

    ``has_flag_column`` True requires the flag, False forbids it, None accepts both.
    Repeated (word, phonemes) pairs keep their first occurrence.
    """
    entries: list[LexiconEntry] = []
    seen: set[tuple[str, tuple[str, ...]]] = set()
    dupes = 0
    for lineno, line in _content_lines(path):
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise LexiconFormatError(path, lineno, f"expected 2 or 3 tab-separated columns, got {len(cols)}")
        if has_flag_column is True and len(cols) != 3:
            raise LexiconFormatError(path, lineno, "missing flag column")
        if has_flag_column is False and len(cols) != 2:
            raise LexiconFormatError(path, lineno, "unexpected flag column")
        word = cols[0].strip()
        phonemes = tuple(cols[1].split())
        flag = None
        if len(cols) == 3:
            if cols[2].strip() not in ("0", "1"):
                raise LexiconFormatError(path, lineno, f"flag must be 0 or 1, got {cols[2]!r}")
            flag = cols[2].strip() == "1"
        try:
            entry = LexiconEntry(word, phonemes, flag)
        except ValueError as e:
            raise LexiconFormatError(path, lineno, str(e)) from None
        key = (entry.word, entry.phonemes)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
        entries.append(entry)
    if dupes:
        log.warning("%s: dropped %d duplicate (word, phonemes) entries", path, dupes)
    return entries


def write_lexicon(entries: Iterable[LexiconEntry], path, with_flag: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_line(with_flag) + "\n")


def normalize_word(word: str, case_sensitive: bool = False) -> str:
    word = word.strip()
    return word if case_sensitive else word.casefold()


def read_words(path) -> list[str]:
    """Words of a one-per-line list in file order, trimmed, first occurrence kept."""
    out: list[str] = []
    seen: set[str] = set()
    for _, line in _content_lines(path):
        w = line.strip()
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def parse_wordlist(path, case_sensitive: bool = False) -> set[str]:
    return {normalize_word(w, case_sensitive) for w in read_words(path)}


# ---------------------------------------------------------------------------
# dataset construction


def positive_ratio(entries: Sequence[LexiconEntry]) -> float:
    if not entries:
        return 0.0
    return sum(bool(e.anglicism) for e in entries) / len(entries)


def split_stats(entries: Sequence[LexiconEntry]) -> dict:
    pos = sum(bool(e.anglicism) for e in entries)
    return {"entries": len(entries), "anglicisms": pos, "anglicism_ratio": round(100 * positive_ratio(entries), 2)}


def tag_entries(entries: Iterable[LexiconEntry], wordlist: set[str], case_sensitive: bool = False) -> list[LexiconEntry]:
    """Flag each entry whose normalized word is in ``wordlist``."""
    tagged = [LexiconEntry(e.word, e.phonemes, normalize_word(e.word, case_sensitive) in wordlist) for e in entries]
    log.info("tagged %d entries, %.2f %% Anglicisms", len(tagged), 100 * positive_ratio(tagged))
    return tagged


def downsample_balanced(entries: Sequence[LexiconEntry], seed: int, part: str = "train") -> list[LexiconEntry]:
    """All positives plus an equal-sized uniform sample of negatives, shuffled.

    ``part`` names the random sub-stream so each split is sampled independently.
    """
    pos = [e for e in entries if e.anglicism]
    neg = [e for e in entries if not e.anglicism]
    if len(pos) > len(neg):
        raise ValueError(f"downsampling expects positives <= negatives, got {len(pos)} > {len(neg)}")
    rng = stream(seed, "downsample", part)
    keep = np.sort(rng.choice(len(neg), size=len(pos), replace=False))
    chosen = pos + [neg[i] for i in keep]
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


def split_train_valid(entries: Sequence[LexiconEntry], valid_count: int, seed: int) -> DatasetSplit:
    if not 0 <= valid_count < len(entries):
        raise ValueError(f"valid_count must be in [0, {len(entries)}), got {valid_count}")
    order = stream(seed, "split").permutation(len(entries))
    shuffled = [entries[i] for i in order]
    split = DatasetSplit(train=shuffled[valid_count:], valid=shuffled[:valid_count], seed=seed)
    log.info("split: %s", split.manifest())
    return split


def build_vocabs(train: Sequence[LexiconEntry]) -> Vocabulary:
    if not train:
        raise ValueError("cannot build vocabularies from an empty training set")
    chars = sorted({c for e in train for c in e.word})
    phones = sorted({p for e in train for p in e.phonemes})
    return Vocabulary(GRAPHEME_SPECIALS + tuple(chars), PHONEME_SPECIALS + tuple(phones))


# ---------------------------------------------------------------------------
# encoding and batching


def encode_word(word: str, vocab: Vocabulary) -> tuple[int, ...]:
    """``<s>`` followed by the word's graphemes in reverse order."""
    try:
        return (vocab.start,) + tuple(vocab.grapheme_index[c] for c in reversed(word))
    except KeyError as e:
        raise UnknownSymbolError(f"unknown grapheme {e.args[0]!r} in {word!r}") from None


def encode_example(entry: LexiconEntry, vocab: Vocabulary) -> EncodedExample:
    enc = encode_word(entry.word, vocab)
    try:
        ph = tuple(vocab.phoneme_index[p] for p in entry.phonemes)
    except KeyError as e:
        raise UnknownSymbolError(f"unknown phoneme {e.args[0]!r} in {entry.word!r}") from None
    return EncodedExample(enc, (vocab.out_start,) + ph, ph + (vocab.out_end,), bool(entry.anglicism))


def decode_example(ex: EncodedExample, vocab: Vocabulary) -> LexiconEntry:
    word = "".join(vocab.graphemes[i] for i in reversed(ex.encoder_input[1:]))
    phones = tuple(vocab.phonemes[i] for i in ex.decoder_target[:-1])
    return LexiconEntry(word, phones, ex.label)


def encode_all(entries: Sequence[LexiconEntry], vocab: Vocabulary, skip_unknown: bool = False):
    """Encode a list; returns (examples, kept entries, skipped [(word, reason)])."""
    examples, kept, skipped = [], [], []
    for e in entries:
        try:
            examples.append(encode_example(e, vocab))
            kept.append(e)
        except UnknownSymbolError as err:
            if not skip_unknown:
                raise
            skipped.append((e.word, str(err)))
    if skipped:
        log.warning("skipped %d entries with unknown symbols", len(skipped))
    return examples, kept, skipped


@dataclass
class Batch:
    encoder_input: np.ndarray  # (B, Te) int
    encoder_mask: np.ndarray  # (B, Te) bool, True on real symbols
    decoder_input: np.ndarray  # (B, Td)
    decoder_target: np.ndarray  # (B, Td)
    decoder_mask: np.ndarray  # (B, Td)
    labels: np.ndarray  # (B,) float 0/1
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.encoder_input.shape[0]


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def make_batch(examples: Sequence[EncodedExample], index=None) -> Batch:
    enc, enc_mask = _pad([e.encoder_input for e in examples])
    dec_in, dec_mask = _pad([e.decoder_input for e in examples])
    dec_tgt, _ = _pad([e.decoder_target for e in examples])
    labels = np.array([1.0 if e.label else 0.0 for e in examples])
    idx = np.arange(len(examples)) if index is None else np.asarray(index)
    return Batch(enc, enc_mask, dec_in, dec_tgt, dec_mask, labels, idx)


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def batch_examples(examples: Sequence[EncodedExample], batch_size: int, seed: int | None = None, epoch: int = 0) -> list[Batch]:
    """Right-padded batches; the order is permuted by (seed, epoch) unless ``seed`` is None.

    The last batch may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples)) if seed is None else stream(seed, "permutation", epoch).permutation(len(examples))
    return [
        make_batch([examples[i] for i in order[s : s + batch_size]], order[s : s + batch_size])
        for s in range(0, len(examples), batch_size)
    ]
