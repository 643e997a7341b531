"""Backoff n-gram language models with ARPA serialization.

Probabilities are held as natural logs and written as log10. Both smoothing
methods are stored in interpolated-backoff form: an explicit n-gram's
probability already includes the lower-order share, and the backoff weight of
a context is exactly the mass reserved for unseen continuations, so every
conditional distribution sums to one.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import FormatError, NgramError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
LN10 = math.log(10.0)
ARPA_NEG_INF = -99.0

WITTEN_BELL = "witten-bell"
ABSOLUTE = "absolute-discount"


@dataclass
class CountTable:
    order: int
    counts: dict = field(default_factory=dict)  # token tuple -> count
    vocab: set = field(default_factory=set)

    def add(self, other):
        if other.order != self.order:
            raise NgramError("cannot add count tables of different order")
        out = CountTable(self.order, dict(self.counts), set(self.vocab))
        for k, v in other.counts.items():
            out.counts[k] = out.counts.get(k, 0) + v
        out.vocab |= other.vocab
        return out

    def __getitem__(self, ngram):
        return self.counts.get(tuple(ngram), 0)


def pad(tokens):
    return [BOS] + [t for t in tokens if t not in (BOS, EOS)] + [EOS]


def count_ngrams(corpus, order):
    """Count every 1..order-gram of each sentence padded with <s> and </s>."""
    if order < 1:
        raise NgramError("order must be >= 1")
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise NgramError("empty corpus")
    counts = defaultdict(int)
    vocab = {BOS, EOS, UNK}
    for sent in corpus:
        seq = pad(sent)
        vocab.update(seq)
        for i in range(len(seq)):
            for k in range(1, order + 1):
                if i + k > len(seq):
                    break
                counts[tuple(seq[i:i + k])] += 1
    return CountTable(order, dict(counts), vocab)


@dataclass
class NgramModel:
    order: int
    prob: dict  # ngram tuple -> ln p(last | prefix)
    bow: dict  # context tuple -> ln backoff weight
    vocab: frozenset

    def map_token(self, tok):
        return tok if tok in self.vocab else UNK

    def logprob(self, context, token):
        """ln p(token | context) with standard backoff."""
        token = self.map_token(token)
        context = tuple(self.map_token(t) for t in context)
        if self.order > 1:
            context = context[-(self.order - 1):]
        else:
            context = ()
        penalty = 0.0
        while True:
            p = self.prob.get(context + (token,))
            if p is not None:
                return penalty + p
            if not context:
                # model read from an ARPA file without <unk>
                return penalty + ARPA_NEG_INF * LN10
            penalty += self.bow.get(context, 0.0)
            context = context[1:]

    def predicted_vocab(self):
        return sorted(t for t in self.vocab if t != BOS)

    def contexts(self):
        return sorted(self.bow)


def estimate(counts, smoothing=WITTEN_BELL, discount=0.5, min_count=0.0):
    """Smoothed backoff model from a count table.

    ``min_count`` drops fractional counts at or below it (used for expected
    graphone counts).
    """
    if smoothing not in (WITTEN_BELL, ABSOLUTE):
        raise NgramError(f"unknown smoothing {smoothing!r}")
    if smoothing == ABSOLUTE and not 0.0 < discount < 1.0:
        raise NgramError(f"absolute discount must lie in (0, 1), got {discount}")
    order = counts.order
    vocab = set(counts.vocab) | {BOS, EOS, UNK}
    predicted = sorted(vocab - {BOS})
    c = {k: v for k, v in counts.counts.items() if v > min_count}

    prob, bow = {}, {}
    uni = {w: c.get((w,), 0) for w in predicted}
    uni[UNK] = max(uni[UNK], 1)
    total = math.fsum(uni.values())
    types = sum(1 for v in uni.values() if v > 0)
    uniform = 1.0 / len(predicted)
    for w in predicted:
        if smoothing == WITTEN_BELL:
            p = (uni[w] + types * uniform) / (total + types)
        else:
            p = max(uni[w] - discount, 0.0) / total + discount * types / total * uniform
        prob[(w,)] = math.log(p)
    prob[(BOS,)] = -math.inf

    def lower(ctx, w):
        # full backoff distribution of the lower orders built so far
        pen = 0.0
        while True:
            p = prob.get(ctx + (w,))
            if p is not None:
                return math.exp(pen + p)
            pen += bow.get(ctx, 0.0)
            ctx = ctx[1:]

    for k in range(2, order + 1):
        by_ctx = defaultdict(dict)
        for ng, v in c.items():
            if len(ng) == k and ng[-1] != BOS:
                by_ctx[ng[:-1]][ng[-1]] = v
        for ctx in sorted(by_ctx):
            cont = by_ctx[ctx]
            csum = math.fsum(cont.values())
            t = len(cont)
            if smoothing == WITTEN_BELL:
                lam = t / (csum + t)
            else:
                lam = discount * t / csum
            for w in sorted(cont):
                pl = lower(ctx[1:], w)
                if smoothing == WITTEN_BELL:
                    p = (cont[w] + t * pl) / (csum + t)
                else:
                    p = (cont[w] - discount) / csum + lam * pl
                prob[ctx + (w,)] = math.log(p)
            bow[ctx] = math.log(lam)
    return NgramModel(order, prob, bow, frozenset(vocab))


def score_sequence(model, tokens):
    """log10 probability of a sentence, including the end-of-sentence event."""
    hist = [BOS]
    total = 0.0
    for tok in list(tokens) + [EOS]:
        total += model.logprob(hist, tok)
        hist.append(tok)
    return total / LN10


def train(corpus, order=3, smoothing=WITTEN_BELL, discount=0.5):
    return estimate(count_ngrams(corpus, order), smoothing, discount)


# ARPA ------------------------------------------------------------------------

def _fmt(x):
    if x == -math.inf:
        return f"{ARPA_NEG_INF:.1f}"
    s = f"{x / LN10:.10f}"
    return "0.0000000000" if s == "-0.0000000000" else s


def format_arpa(model):
    by_order = defaultdict(list)
    for ng in model.prob:
        by_order[len(ng)].append(ng)
    lines = ["", "\\data\\"]
    for k in range(1, model.order + 1):
        lines.append(f"ngram {k}={len(by_order[k])}")
    for k in range(1, model.order + 1):
        lines.append("")
        lines.append(f"\\{k}-grams:")
        for ng in sorted(by_order[k]):
            row = f"{_fmt(model.prob[ng])}\t{' '.join(ng)}"
            if k < model.order and ng in model.bow:
                row += f"\t{_fmt(model.bow[ng])}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def write_arpa(model, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_arpa(model))


def read_arpa(lines, path=None):
    declared = {}
    prob, bow = {}, {}
    section = None  # None, "data", or an order
    seen = defaultdict(int)
    ended = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if ended:
            raise FormatError("content after \\end\\", path, lineno)
        if line == "\\data\\":
            section = "data"
            continue
        if line == "\\end\\" or line.startswith("\\"):
            if isinstance(section, int) and seen[section] != declared[section]:
                raise FormatError(f"declared {declared[section]} {section}-grams but found "
                                  f"{seen[section]}", path, lineno)
        if line == "\\end\\":
            ended = True
            continue
        if line.startswith("\\"):
            if not (line.endswith("-grams:") and line[1:-7].isdigit()):
                raise FormatError(f"malformed section header {line!r}", path, lineno)
            section = int(line[1:-7])
            if section not in declared:
                raise FormatError(f"section {section}-grams not declared in \\data\\", path, lineno)
            continue
        if section is None:
            raise FormatError("content before \\data\\", path, lineno)
        if section == "data":
            if not line.startswith("ngram ") or "=" not in line:
                raise FormatError(f"malformed count line {line!r}", path, lineno)
            k, _, n = line[6:].partition("=")
            try:
                declared[int(k)] = int(n)
            except ValueError:
                raise FormatError(f"malformed count line {line!r}", path, lineno) from None
            continue
        f = line.split()
        k = section
        if len(f) not in (k + 1, k + 2):
            raise FormatError(f"expected {k}-gram entry, got {line!r}", path, lineno)
        try:
            lp = float(f[0])
            lb = float(f[k + 1]) if len(f) == k + 2 else None
        except ValueError:
            raise FormatError(f"non-numeric score in {line!r}", path, lineno) from None
        ng = tuple(f[1:k + 1])
        prob[ng] = -math.inf if lp <= ARPA_NEG_INF else lp * LN10
        if lb is not None:
            bow[ng] = lb * LN10
        seen[k] += 1
        if seen[k] > declared[k]:
            raise FormatError(f"more {k}-grams than the declared {declared[k]}", path, lineno)
    if not declared:
        raise FormatError("missing \\data\\ section", path)
    if not ended:
        raise FormatError("missing \\end\\ marker", path)
    for k, n in declared.items():
        if seen[k] != n:
            raise FormatError(f"declared {n} {k}-grams but found {seen[k]}", path)
    vocab = frozenset(ng[0] for ng in prob if len(ng) == 1)
    return NgramModel(max(declared), prob, bow, vocab)


def load_arpa(path):
    with open(path, encoding="utf-8") as f:
        return read_arpa(f, path)


def read_corpus(lines):
    return [line.split() for line in lines if line.strip()]
