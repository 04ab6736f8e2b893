"""Deterministic synthetic lexicon for smoke tests and the overfit experiment.

Native words are built from CV/CVC syllables and pronounced letter by letter
with German-style vowels. Loanword entries contain the marker bigram ``sh``
and use a second, English-style vowel table, so the correct pronunciation of
a vowel depends on whether the word is flagged.
"""
from __future__ import annotations

from importlib import resources

from .lexicon import LexiconEntry, parse_lexicon, parse_wordlist, tag_entries
from .seeding import stream

CONSONANTS = "bdfgklmnprtw"
VOWELS = "aeiou"
MARKER = "sh"

_CONS = {c: c for c in CONSONANTS} | {"w": "v"}
_NATIVE_VOWELS = {"a": "a:", "e": "e:", "i": "I", "o": "O", "u": "U"}
_LOAN_VOWELS = {"a": "E I", "e": "i:", "i": "aI", "o": "O U", "u": "u:"}
_LOAN_CONS = _CONS | {"w": "w", "r": "r\\"}


def pronounce(word: str, loan: bool) -> tuple[str, ...]:
    vowels = _LOAN_VOWELS if loan else _NATIVE_VOWELS
    cons = _LOAN_CONS if loan else _CONS
    out: list[str] = []
    i = 0
    while i < len(word):
        if word.startswith(MARKER, i):
            out.append("S")
            i += 2
            continue
        ch = word[i]
        out.extend((vowels.get(ch) or cons[ch]).split())
        i += 1
    return tuple(out)


def _syllable(rng) -> str:
    s = CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
    if rng.random() < 0.3:
        s += CONSONANTS[rng.integers(len(CONSONANTS))]
    return s


def synthetic_lexicon(n: int = 200, flagged_ratio: float = 0.3, seed: int = 0) -> list[LexiconEntry]:
    rng = stream(seed, "toy-lexicon")
    n_flag = round(n * flagged_ratio)
    flags = [True] * n_flag + [False] * (n - n_flag)
    flags = [flags[i] for i in rng.permutation(n)]
    seen: set[str] = set()
    entries = []
    for loan in flags:
        while True:
            sylls = [_syllable(rng) for _ in range(int(rng.integers(1, 3)))]
            if loan:
                sylls.insert(int(rng.integers(len(sylls) + 1)), MARKER + VOWELS[rng.integers(len(VOWELS))])
            word = "".join(sylls)
            if word not in seen:
                break
        seen.add(word)
        entries.append(LexiconEntry(word, pronounce(word, loan), loan))
    return entries


def bundled_lexicon() -> list[LexiconEntry]:
    """The shipped 200-entry lexicon, flagged through the shipped word list."""
    data = resources.files("mtlg2p") / "data"
    with resources.as_file(data / "toy_lexicon.tsv") as lex, resources.as_file(data / "toy_wordlist.txt") as words:
        return tag_entries(parse_lexicon(lex), parse_wordlist(words))
