"""Edit distances, PER / G2P WER, classifier metrics and ASR WER / AER scoring."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Hashable, Mapping, Sequence

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"


@dataclass(frozen=True)
class EditOps:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: EditOps) -> EditOps:
        return EditOps(self.substitutions + other.substitutions, self.deletions + other.deletions,
                       self.insertions + other.insertions)


def _table(ref: Sequence, hyp: Sequence) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, prev, r = d[i], d[i - 1], ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    return d


def align(ref: Sequence, hyp: Sequence) -> list[tuple]:
    """Minimal alignment as (ref item | None, hyp item | None, op) tuples.

    Where several backtraces cost the same, the diagonal step (match or
    substitution) wins over deletion, and deletion over insertion.
    """
    d = _table(ref, hyp)
    i, j = len(ref), len(hyp)
    out = []
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            out.append((ref[i - 1], hyp[j - 1], MATCH if ref[i - 1] == hyp[j - 1] else SUB))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            out.append((ref[i - 1], None, DEL))
            i -= 1
        else:
            out.append((None, hyp[j - 1], INS))
            j -= 1
    out.reverse()
    return out


align_words = align


def ops_of(alignment) -> EditOps:
    s = sum(op == SUB for *_, op in alignment)
    dl = sum(op == DEL for *_, op in alignment)
    ins = sum(op == INS for *_, op in alignment)
    return EditOps(s, dl, ins)


def levenshtein(ref: Sequence, hyp: Sequence) -> EditOps:
    return ops_of(align(ref, hyp))


def per(pairs: Sequence[tuple[Sequence, Sequence]]) -> float:
    """Phoneme error rate in percent: total edit distance over total reference length."""
    if not pairs:
        raise ValueError("per: no pairs")
    dist = ref_len = 0
    for ref, hyp in pairs:
        if not ref:
            raise ValueError("per: empty reference")
        dist += levenshtein(ref, hyp).distance
        ref_len += len(ref)
    return 100.0 * dist / ref_len


def g2p_wer(pairs: Sequence[tuple[Sequence, Sequence]]) -> float:
    """Percent of words whose hypothesis differs from the reference in any way."""
    if not pairs:
        raise ValueError("g2p_wer: no pairs")
    wrong = sum(tuple(r) != tuple(h) for r, h in pairs)
    return 100.0 * wrong / len(pairs)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassifierReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return asdict(self)


def classifier_metrics(probabilities: Sequence[float], labels: Sequence, threshold: float = 0.5) -> ClassifierReport:
    """Accuracy / precision / recall / F1 in percent; undefined ratios are reported as 0."""
    if len(probabilities) != len(labels):
        raise ValueError("classifier_metrics: probabilities and labels differ in length")
    if not len(labels):
        raise ValueError("classifier_metrics: empty input")
    tp = fp = fn = tn = 0
    for p, y in zip(probabilities, labels):
        pred, y = p >= threshold, bool(y)
        if pred and y:
            tp += 1
        elif pred:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    n = tp + fp + fn + tn
    return ClassifierReport(100.0 * (tp + tn) / n, 100.0 * prec, 100.0 * rec, 100.0 * f1, ConfusionCounts(tp, fp, fn, tn))


# ---------------------------------------------------------------------------
# ASR transcripts


@dataclass
class FlaggedTranscript:
    utt_id: str
    words: list[str]
    flags: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.flags:
            self.flags = [False] * len(self.words)
        if len(self.flags) != len(self.words):
            raise ValueError(f"{self.utt_id}: {len(self.flags)} flags for {len(self.words)} words")


def parse_transcripts(path, flagged: bool = True) -> list[FlaggedTranscript]:
    """``id<TAB>words`` per line; with ``flagged`` a leading ``*`` marks an Anglicism."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            utt, sep, text = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>words'")
            words, flags = [], []
            for w in text.split():
                star = flagged and w.startswith("*") and len(w) > 1
                words.append(w[1:] if star else w)
                flags.append(star)
            out.append(FlaggedTranscript(utt.strip(), words, flags))
    return out


def aer(total: int, recognized: int) -> float:
    """Percent of flagged Anglicisms not recognized."""
    if total <= 0:
        return 0.0
    return 100.0 * (total - recognized) / total


def _tokenize(words: Sequence[str], flags: Sequence[bool], map_hyphens: bool, ignore_case: bool):
    """Returns (tokens, group) where group[k] is the index of the flagged word token k belongs to, else -1."""
    tokens, groups, n_flagged = [], [], 0
    for w, f in zip(words, flags):
        pieces = [p for p in w.split("-") if p] if map_hyphens else [w]
        if ignore_case:
            pieces = [p.casefold() for p in pieces]
        gid = -1
        if f:
            gid, n_flagged = n_flagged, n_flagged + 1
        tokens += pieces
        groups += [gid] * len(pieces)
    return tokens, groups, n_flagged


@dataclass
class UtteranceScore:
    utt_id: str
    ref_words: int
    substitutions: int
    deletions: int
    insertions: int
    flagged: int
    recognized: int


@dataclass
class AsrReport:
    wer: float
    aer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    flagged: int
    recognized: int
    utterances: list[UtteranceScore]

    def to_dict(self) -> dict:
        return asdict(self)


def asr_wer_aer(refs: Sequence[FlaggedTranscript], hyps, map_hyphens: bool = False, ignore_case: bool = False) -> AsrReport:
    """Corpus WER and Anglicism error rate.

    A flagged reference word counts as recognized when every token it maps to
    is aligned as an exact match. ``hyps`` is a mapping id -> words or a list
    of transcripts.
    """
    if isinstance(hyps, Mapping):
        hyp_map = {k: list(v) for k, v in hyps.items()}
    else:
        hyp_map = {}
        for h in hyps:
            if h.utt_id in hyp_map:
                raise ValueError(f"duplicate hypothesis id {h.utt_id}")
            hyp_map[h.utt_id] = list(h.words)
    ref_ids = [r.utt_id for r in refs]
    if len(set(ref_ids)) != len(ref_ids):
        raise ValueError("duplicate reference ids")
    missing = [i for i in ref_ids if i not in hyp_map]
    if missing:
        raise ValueError(f"no hypothesis for utterance(s): {', '.join(missing)}")
    extra = sorted(set(hyp_map) - set(ref_ids))
    if extra:
        raise ValueError(f"hypothesis for unknown utterance(s): {', '.join(extra)}")

    total = EditOps()
    ref_len = flagged = recognized = 0
    per_utt = []
    for r in refs:
        rtok, groups, n_flag = _tokenize(r.words, r.flags, map_hyphens, ignore_case)
        htok, _, _ = _tokenize(hyp_map[r.utt_id], [False] * len(hyp_map[r.utt_id]), map_hyphens, ignore_case)
        alignment = align(rtok, htok)
        ops = ops_of(alignment)
        ok = [True] * n_flag
        k = 0
        for ref_item, _, op in alignment:
            if ref_item is None:
                continue
            if groups[k] >= 0 and op != MATCH:
                ok[groups[k]] = False
            k += 1
        rec = sum(ok)
        per_utt.append(UtteranceScore(r.utt_id, len(rtok), ops.substitutions, ops.deletions, ops.insertions, n_flag, rec))
        total = total + ops
        ref_len += len(rtok)
        flagged += n_flag
        recognized += rec
    wer = 100.0 * total.distance / ref_len if ref_len else 0.0
    return AsrReport(wer, aer(flagged, recognized), total.substitutions, total.deletions, total.insertions,
                     ref_len, flagged, recognized, per_utt)
