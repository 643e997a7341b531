"""Transcription-quality scoring and supervision building.

WMER values are exact rationals so threshold comparisons such as
"3 errors in 10 words is not above 30%" never depend on float rounding.
"""

import logging
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

from . import lattice as latmod
from .errors import CurateError, FormatError
from .lattice import Arc, Lattice

log = logging.getLogger(__name__)

MATCH, SUB, DEL, INS = "match", "substitution", "deletion", "insertion"

BEST_PATH = "best-path"
PRUNED_LATTICE = "pruned-lattice"
HUMAN = "human-transcript"
KINDS = (BEST_PATH, PRUNED_LATTICE, HUMAN)


class SemisupError(CurateError):
    pass


def as_fraction(x):
    """Exact rational for a threshold or score given as text, int, float or Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x).strip())


@dataclass(frozen=True)
class AlignmentResult:
    ops: tuple  # ((op, ref_token or None, hyp_token or None), ...)
    matches: int
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


def align_words(reference, hypothesis):
    """Minimum edit-distance alignment with unit costs.

    On equal cost the backtrace prefers match, then substitution, deletion,
    insertion.
    """
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i][j] = min(diag, d[i - 1][j] + 1, d[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and ref[i - 1] == hyp[j - 1] and d[i][j] == d[i - 1][j - 1]:
            ops.append((MATCH, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and j and d[i][j] == d[i - 1][j - 1] + 1:
            ops.append((SUB, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            ops.append((DEL, ref[i - 1], None))
            i -= 1
        else:
            ops.append((INS, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    count = {k: 0 for k in (MATCH, SUB, DEL, INS)}
    for op, _, _ in ops:
        count[op] += 1
    return AlignmentResult(tuple(ops), count[MATCH], count[SUB], count[DEL], count[INS], n)


@dataclass(frozen=True)
class WmerScore:
    utt: str
    wmer: Fraction
    duration: float = 0.0
    errors: int = None
    ref_len: int = None

    def __post_init__(self):
        # floats are read as the decimal they print as, so 0.3 means 3/10
        object.__setattr__(self, "wmer", as_fraction(self.wmer))

    @property
    def percent(self):
        return self.wmer * 100


@dataclass(frozen=True)
class CorpusWmer:
    token_weighted: float  # total errors / total reference words
    duration_weighted: float  # duration-weighted mean of per-utterance WMER
    utterances: int
    errors: int
    ref_words: int
    duration: float


def wmer_of(alignment):
    return Fraction(alignment.errors, max(1, alignment.ref_len))


def score_corpus(references, hypotheses, durations=None):
    """Per-utterance WMER (sorted by utterance id) and corpus aggregates."""
    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise SemisupError("no hypothesis for utterances: " + " ".join(missing))
    if durations is not None:
        nodur = sorted(set(references) - set(durations))
        if nodur:
            raise SemisupError("no duration for utterances: " + " ".join(nodur))
    extra = sorted(set(hypotheses) - set(references))
    if extra:
        log.warning("ignoring %d hypotheses without a reference", len(extra))
    scores = []
    errors = words = 0
    for utt in sorted(references):
        al = align_words(references[utt], hypotheses[utt])
        dur = float(durations[utt]) if durations is not None else 0.0
        scores.append(WmerScore(utt, wmer_of(al), dur, al.errors, al.ref_len))
        errors += al.errors
        words += al.ref_len
    total_dur = math.fsum(s.duration for s in scores)
    if total_dur > 0:
        dw = math.fsum(float(s.wmer) * s.duration for s in scores) / total_dur
    else:
        dw = math.fsum(float(s.wmer) for s in scores) / len(scores) if scores else 0.0
    agg = CorpusWmer(errors / max(1, words), dw, len(scores), errors, words, total_dur)
    return scores, agg


def round2(x):
    return Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class ReportRow:
    threshold: Fraction
    hours: float
    percent: float

    @property
    def hours_text(self):
        return str(round2(self.hours))

    @property
    def percent_text(self):
        return str(round2(self.percent))


def cumulative_report(scores, thresholds, total_hours):
    """Hours (and share of ``total_hours``) of data whose WMER exceeds each threshold.

    Durations in ``scores`` are seconds.
    """
    if total_hours <= 0:
        raise SemisupError("total duration must be positive")
    rows = []
    for t in thresholds:
        tau = as_fraction(t)
        if tau < 0:
            raise SemisupError("thresholds must be nonnegative")
        secs = math.fsum(s.duration for s in scores if s.percent > tau)
        hours = secs / 3600.0
        rows.append(ReportRow(tau, hours, hours / total_hours * 100.0))
    return rows


@dataclass(frozen=True)
class Partition:
    threshold: Fraction
    supervised: frozenset
    unsupervised: frozenset


def partition_by_wmer(scores, threshold):
    """Utterances whose WMER is strictly above ``threshold`` percent become unsupervised."""
    tau = as_fraction(threshold)
    if tau < 0:
        raise SemisupError("threshold must be nonnegative")
    sup, unsup = set(), set()
    for s in scores:
        (unsup if s.percent > tau else sup).add(s.utt)
    return Partition(tau, frozenset(sup), frozenset(unsup))


def removal_filter(partition):
    """Ids kept when poorly transcribed data is simply discarded."""
    if not partition.supervised:
        log.warning("every utterance is above the WMER threshold; nothing is kept")
    return sorted(partition.supervised)


# supervision ------------------------------------------------------------------

@dataclass(frozen=True)
class Supervision:
    utt: str
    lattice: Lattice  # phone level, acoustic costs zeroed, graph costs scaled
    lm_scale: float
    confidence: float
    kind: str
    words: tuple = None  # word sequence for best-path and transcript kinds


def best_path_posterior(lattice, lm_scale=1.0):
    """Share of the lattice's probability mass carried by its best path."""
    fb = latmod.forward_backward(lattice, lm_scale)
    cost = latmod.best_path(lattice, lm_scale).cost(lm_scale)
    return min(1.0, max(0.0, math.exp(-cost - fb.total)))


def _linear(arcs, times, final_cost, utt):
    nodes = tuple((k, t) for k, t in enumerate(times))
    out = tuple(Arc(k, k + 1, a.label, a.acoustic, a.graph) for k, a in enumerate(arcs))
    return Lattice(nodes, out, 0, ((len(arcs), final_cost),), utt)


def _normalize(phone_lattice, lm_scale):
    """Drop acoustic costs, scale graph costs, and shift finals so total mass is 1."""
    lat = latmod.scale_graph(phone_lattice, lm_scale, acoustic_scale=0.0)
    # round to the precision of the text format first, then round the shift
    # upward, so the mass of the serialized graph never exceeds 1
    arcs = tuple(Arc(a.src, a.dst, a.label, 0.0, round(a.graph, 6)) for a in lat.arcs)
    lat = Lattice(lat.nodes, arcs, lat.start, tuple((n, round(c, 6)) for n, c in lat.finals),
                  lat.utt)
    total = latmod.forward_backward(lat, 1.0).total
    finals = tuple((n, math.ceil((c + total) * 1e6) / 1e6) for n, c in lat.finals)
    return Lattice(lat.nodes, lat.arcs, lat.start, finals, lat.utt)


def build_supervision(lattice, lexicon, kind=PRUNED_LATTICE, lm_scale=1.0, beam=math.inf):
    """Phone-level supervision for one decoded word lattice.

    The confidence is the best-path posterior of the original word lattice
    and is kept as a separate weight, not folded into the arcs.
    """
    if kind not in (BEST_PATH, PRUNED_LATTICE):
        raise SemisupError(f"unknown supervision kind {kind!r}")
    confidence = best_path_posterior(lattice, lm_scale)
    words = None
    if kind == BEST_PATH:
        path = latmod.best_path(lattice, lm_scale)
        times = [lattice.time(lattice.start)] + [lattice.time(a.dst) for a in path.arcs]
        linear = _linear(path.arcs, times, path.final_cost, lattice.utt)
        phones = latmod.word_to_phone(linear, lexicon)
        # keep a single pronunciation per word so the graph has exactly one path
        best = latmod.best_path(phones, lm_scale)
        ptimes = [phones.time(phones.start)] + [phones.time(a.dst) for a in best.arcs]
        phone_lat = _linear(best.arcs, ptimes, best.final_cost, lattice.utt)
        words = path.labels
    else:
        pruned = latmod.prune_posterior(lattice, beam, lm_scale)
        if not pruned.arcs and lattice.arcs:
            raise SemisupError("internal error: pruning removed the best path")
        phone_lat = latmod.word_to_phone(pruned, lexicon)
    return Supervision(lattice.utt, _normalize(phone_lat, lm_scale), lm_scale, confidence,
                       kind, words)


def transcript_supervision(utt, words, lexicon, lm_scale=1.0):
    """Supervision from a trusted transcript; every listed pronunciation stays."""
    arcs = [Arc(0, 0, w) for w in words]
    linear = _linear(arcs, [float(k) for k in range(len(arcs) + 1)], 0.0, utt)
    phone_lat = latmod.word_to_phone(linear, lexicon)
    return Supervision(utt, _normalize(phone_lat, lm_scale), lm_scale, 1.0, HUMAN, tuple(words))


def format_manifest_and_lattices(supervisions):
    """Manifest text and lattice text; the manifest records byte offsets into the latter."""
    manifest = ["# utterance-id\tkind\tconfidence\tlattice-offset"]
    chunks, offset = [], 0
    for sup in supervisions:
        block = latmod.format_lattice(sup.lattice)
        manifest.append(f"{sup.utt}\t{sup.kind}\t{sup.confidence:.6f}\t{offset}")
        chunks.append(block)
        offset += len(block.encode("utf-8"))
    return "\n".join(manifest) + "\n", "".join(chunks)


# text formats -------------------------------------------------------------------

def read_transcripts(lines, path=None):
    out = {}
    for lineno, raw in enumerate(lines, 1):
        f = raw.split()
        if not f or f[0].startswith("#"):
            continue
        if f[0] in out:
            raise FormatError(f"duplicate utterance id {f[0]!r}", path, lineno)
        out[f[0]] = f[1:]
    return out


def read_durations(lines, path=None):
    out = {}
    for lineno, raw in enumerate(lines, 1):
        f = raw.split()
        if not f or f[0].startswith("#"):
            continue
        if len(f) != 2:
            raise FormatError("expected 'utterance-id seconds'", path, lineno)
        try:
            d = float(f[1])
        except ValueError:
            raise FormatError(f"bad duration {f[1]!r}", path, lineno) from None
        if d < 0 or not math.isfinite(d):
            raise FormatError(f"bad duration {f[1]!r}", path, lineno)
        out[f[0]] = d
    return out


def fmt_decimal(x, digits=6):
    s = f"{float(x):.{digits}f}".rstrip("0").rstrip(".")
    return s if s not in ("", "-0") else "0"


def format_scores(scores):
    lines = ["# utterance-id\twmer\tduration"]
    for s in scores:
        lines.append(f"{s.utt}\t{float(s.wmer):.6f}\t{fmt_decimal(s.duration, 3)}")
    return "\n".join(lines) + "\n"


def read_scores(lines, path=None):
    scores = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        f = line.split("\t") if "\t" in line else line.split()
        if len(f) != 3:
            raise FormatError("expected utterance-id<TAB>wmer<TAB>duration", path, lineno)
        try:
            w = Fraction(f[1])
            d = float(f[2])
        except (ValueError, ZeroDivisionError):
            raise FormatError(f"bad number in {line!r}", path, lineno) from None
        if w < 0 or d < 0:
            raise FormatError("negative wmer or duration", path, lineno)
        scores.append(WmerScore(f[0], w, d))
    return scores


def format_threshold(t):
    t = as_fraction(t)
    if t.denominator == 1:
        return str(t.numerator)
    return fmt_decimal(float(t))


def format_report(rows):
    lines = ["# threshold\thours\tpercent"]
    for r in rows:
        lines.append(f"{format_threshold(r.threshold)}\t{r.hours_text}\t{r.percent_text}")
    return "\n".join(lines) + "\n"


def format_partition(partition):
    lines = ["# utterance-id\tset"]
    tagged = [(u, "supervised") for u in partition.supervised]
    tagged += [(u, "unsupervised") for u in partition.unsupervised]
    for u, tag in sorted(tagged):
        lines.append(f"{u}\t{tag}")
    return "\n".join(lines) + "\n"


def read_partition(lines, path=None, threshold=None):
    sup, unsup = set(), set()
    for lineno, raw in enumerate(lines, 1):
        f = raw.split()
        if not f or f[0].startswith("#"):
            continue
        if len(f) != 2 or f[1] not in ("supervised", "unsupervised"):
            raise FormatError("expected utterance-id<TAB>supervised|unsupervised", path, lineno)
        (sup if f[1] == "supervised" else unsup).add(f[0])
    return Partition(as_fraction(threshold) if threshold is not None else None,
                     frozenset(sup), frozenset(unsup))
