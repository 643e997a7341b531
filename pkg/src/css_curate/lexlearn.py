"""Lexicon learning from phonetic decodes and per-token acoustic evidence.

Each word token contributes a mixture likelihood
``log sum_b p(b|w) exp(s(u, b))`` where ``s(u, b)`` is the supplied acoustic
log-likelihood of pronunciation ``b`` for that token. Pronunciation
probabilities are fitted by EM on this objective, then pronunciations are
pruned greedily by the likelihood they cost to remove.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import FormatError, LexiconError
from .lexicon import PHONEDEC, SOURCE_PRIORITY, Lexicon, Pron

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenEvidence:
    utt: str
    word: str
    scores: tuple  # ((phones, log-likelihood), ...)

    def __post_init__(self):
        if not self.scores:
            raise LexiconError(f"token of {self.word!r} in {self.utt} has no candidates")
        for _, s in self.scores:
            if not math.isfinite(s):
                raise LexiconError(f"non-finite score for {self.word!r} in {self.utt}")


def _by_utt(records):
    groups = defaultdict(list)
    for r in records:
        groups[r.utt].append(r)
    return groups


def _check_sorted(utt, recs, what, allow_overlap):
    for a, b in zip(recs, recs[1:]):
        if b.start < a.start:
            raise LexiconError(f"{what} CTM for utterance {utt} is not sorted by start time")
        if not allow_overlap and b.start < a.end - 1e-9:
            raise LexiconError(f"overlapping words in utterance {utt} "
                               f"({a.token!r} and {b.token!r})")


def harvest_candidates(word_ctm, phone_ctm, min_count=2, skip_phones=()):
    """Pronunciation candidates from time-aligned word and phone decodes.

    A phone belongs to the word whose half-open span ``[start, end)`` holds
    the phone's midpoint.
    """
    words, phones = _by_utt(word_ctm), _by_utt(phone_ctm)
    missing = sorted(set(words) - set(phones))
    if missing:
        raise LexiconError("no phone decode for utterances: " + " ".join(missing))
    skip = set(skip_phones)
    counts = Counter()
    for utt in sorted(words):
        wrecs, precs = words[utt], phones[utt]
        _check_sorted(utt, wrecs, "word", allow_overlap=False)
        _check_sorted(utt, precs, "phone", allow_overlap=True)
        k = 0
        for w in wrecs:
            while k < len(precs) and precs[k].midpoint < w.start:
                k += 1
            seq = []
            j = k
            while j < len(precs) and precs[j].midpoint < w.end:
                if precs[j].token not in skip:
                    seq.append(precs[j].token)
                j += 1
            k = j
            if seq:
                counts[(w.token, tuple(seq))] += 1
    lex = Lexicon()
    for (word, pron), c in sorted(counts.items()):
        if c >= min_count:
            lex.add(word, pron, 1.0, PHONEDEC)
    return lex.uniform()


def merge_lexicons(l0, l1, l2):
    """Union of three lexicons; duplicates keep the most trusted source tag."""
    inv = {}
    for lx in (l0, l1, l2):
        for ph, tag in lx.phone_inventory().items():
            if ph in inv and tag is not None and inv[ph] is not None and inv[ph] != tag:
                raise LexiconError(f"phone {ph!r} tagged both {inv[ph]!r} and {tag!r}")
            if inv.get(ph) is None:
                inv[ph] = tag
    merged = {}
    for lx in (l0, l1, l2):
        for word, prons in lx.entries.items():
            slot = merged.setdefault(word, {})
            for p in prons:
                old = slot.get(p.phones)
                if old is None or SOURCE_PRIORITY[p.source] < SOURCE_PRIORITY[old]:
                    slot[p.phones] = p.source
    out = Lexicon(inventory={k: v for lx in (l0, l1, l2) for k, v in lx.inventory.items()})
    for word, slot in sorted(merged.items()):
        for phones, source in slot.items():
            out.add(word, phones, 1.0, source)
    return out.uniform()


# evidence ---------------------------------------------------------------------

def _index_evidence(lexicon, evidence):
    """word -> list of tokens, each a list of (pron index, score)."""
    offenders = []
    per_word = defaultdict(list)
    for ev in evidence:
        if ev.word not in lexicon:
            offenders.append(f"{ev.utt}:{ev.word}")
            continue
        tok = []
        for phones, s in ev.scores:
            i = lexicon.pron_index(ev.word, phones)
            if i is None:
                offenders.append(f"{ev.utt}:{ev.word}:{' '.join(phones)}")
            else:
                tok.append((i, s))
        if tok:
            per_word[ev.word].append(tok)
    if offenders:
        raise LexiconError("evidence references unknown words or pronunciations: "
                           + ", ".join(offenders))
    return per_word


def _token_ll(probs, token):
    terms = [math.log(probs[i]) + s for i, s in token if probs[i] > 0]
    if not terms:
        return -math.inf
    m = max(terms)
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


def word_log_likelihood(probs, tokens):
    return math.fsum(_token_ll(probs, t) for t in tokens)


def _em_iteration(probs, tokens):
    soft = [0.0] * len(probs)
    for tok in tokens:
        ll = _token_ll(probs, tok)
        if ll == -math.inf:
            continue
        for i, s in tok:
            if probs[i] > 0:
                soft[i] += math.exp(math.log(probs[i]) + s - ll)
    total = math.fsum(soft)
    if total <= 0:
        return list(probs)
    return [c / total for c in soft]


def evidence_log_likelihood(lexicon, evidence):
    per_word = _index_evidence(lexicon, evidence)
    return math.fsum(word_log_likelihood([p.prob for p in lexicon.prons(w)], toks)
                     for w, toks in sorted(per_word.items()))


def estimate_pron_probs(lexicon, evidence, em_iters=10, trace=None):
    """EM estimate of p(pron | word); ``trace`` collects the total log-likelihood.

    Words without evidence get uniform probabilities. ``trace`` receives
    ``em_iters + 1`` values, the first under the starting probabilities.
    """
    if em_iters < 0:
        raise LexiconError("em_iters must be >= 0")
    per_word = _index_evidence(lexicon, evidence)
    probs = {}
    for w, prons in lexicon.entries.items():
        if w in per_word:
            p = [q.prob for q in prons]
            z = math.fsum(p)
            probs[w] = [x / z for x in p] if z > 0 else [1.0 / len(p)] * len(p)
        else:
            probs[w] = [1.0 / len(prons)] * len(prons)
    words = sorted(per_word)

    def total():
        return math.fsum(word_log_likelihood(probs[w], per_word[w]) for w in words)

    if trace is not None:
        trace.append(total())
    for it in range(em_iters):
        for w in words:
            if len(probs[w]) > 1:
                probs[w] = _em_iteration(probs[w], per_word[w])
        if trace is not None:
            trace.append(total())
            log.info("pronunciation EM iteration %d: log-likelihood %.6f", it + 1, trace[-1])
    return lexicon.with_probs(probs)


@dataclass
class PruneReport:
    removals: list = field(default_factory=list)  # (word, phones, delta, step)
    avg_prons: float = 0.0

    def format(self):
        lines = ["# word\tpron\tdelta\tstep"]
        for word, phones, delta, step in self.removals:
            lines.append(f"{word}\t{' '.join(phones)}\t{delta:.6f}\t{step}")
        lines.append(f"# avg_prons_per_word\t{self.avg_prons:.4f}")
        return "\n".join(lines) + "\n"


def removal_delta(probs, tokens, idx):
    """Log-likelihood lost by dropping pronunciation ``idx`` and renormalizing the rest."""
    before = word_log_likelihood(probs, tokens)
    rest = 1.0 - probs[idx]
    if rest <= 0:
        return math.inf
    after_probs = [0.0 if i == idx else p / rest for i, p in enumerate(probs)]
    after = word_log_likelihood(after_probs, tokens)
    if after == -math.inf:
        return math.inf
    return before - after


def prune_candidates(probs, per_word, max_prons_per_word, min_loss):
    """Removable (delta, word, index) triples under the current state."""
    out = []
    for w in sorted(per_word):
        p = probs[w]
        if len(p) <= 1:
            continue
        over = len(p) > max_prons_per_word
        for i in range(len(p)):
            d = removal_delta(p, per_word[w], i)
            if over or d < min_loss:
                out.append((d, w, i))
    return out


def prune_by_likelihood(lexicon, evidence, max_prons_per_word=4, min_loss=0.0, refresh=True):
    """Greedy likelihood-reduction pruning.

    Each step removes the globally cheapest removable pronunciation. A
    pronunciation is removable when its word has evidence, more than one
    pronunciation, and either exceeds ``max_prons_per_word`` or would lose
    less than ``min_loss`` log-likelihood. Words without evidence are left
    alone.
    """
    if max_prons_per_word < 1:
        raise LexiconError("max_prons_per_word must be >= 1")
    per_word = _index_evidence(lexicon, evidence)
    prons = {w: list(v) for w, v in lexicon.entries.items()}
    probs = {w: [p.prob for p in v] for w, v in prons.items()}
    for w in per_word:
        z = math.fsum(probs[w])
        probs[w] = [x / z for x in probs[w]] if z > 0 else [1.0 / len(probs[w])] * len(probs[w])
    report = PruneReport()
    step = 0
    while True:
        cands = prune_candidates(probs, per_word, max_prons_per_word, min_loss)
        if not cands:
            break
        delta, w, idx = min(cands)
        step += 1
        removed = prons[w].pop(idx)
        p = probs[w]
        rest = 1.0 - p.pop(idx)
        if rest > 0 and math.fsum(p) > 0:
            probs[w] = [x / rest for x in p]
        else:
            probs[w] = [1.0 / len(p)] * len(p)
        toks = []
        for tok in per_word[w]:
            kept = [(i if i < idx else i - 1, s) for i, s in tok if i != idx]
            if kept:
                toks.append(kept)
        per_word[w] = toks
        if not toks:
            del per_word[w]
        elif refresh and len(probs[w]) > 1:
            probs[w] = _em_iteration(probs[w], toks)
        report.removals.append((w, removed.phones, delta, step))
        log.debug("prune step %d: %s /%s/ delta %.6f", step, w, removed.text, delta)
    out = Lexicon(inventory=dict(lexicon.inventory))
    for w, ps in prons.items():
        out.entries[w] = [Pron(p.phones, q, p.source) for p, q in zip(ps, probs[w])]
    report.avg_prons = out.num_prons() / len(out) if len(out) else 0.0
    return out, report


@dataclass(frozen=True)
class LexiconStats:
    avg_prons: float
    oov_types: float
    oov_tokens: float
    n_words: int
    n_prons: int


def lexicon_stats(lexicon, corpus_vocab):
    """Average pronunciations per word and OOV rates (type and token weighted)."""
    if not len(lexicon):
        raise LexiconError("empty lexicon")
    # a mapping gives token counts; a plain iterable counts each occurrence
    counts = Counter(corpus_vocab)
    oov = [w for w in counts if w not in lexicon]
    n_types = len(counts)
    n_tokens = sum(counts.values())
    return LexiconStats(
        lexicon.num_prons() / len(lexicon),
        len(oov) / n_types if n_types else 0.0,
        sum(counts[w] for w in oov) / n_tokens if n_tokens else 0.0,
        len(lexicon),
        lexicon.num_prons(),
    )


# evidence file ------------------------------------------------------------------

def read_evidence(lines, lexicon, path=None):
    """Parse ``utt<TAB>word<TAB>pron<TAB>loglik`` lines into tokens.

    ``pron`` is an index into the word's pronunciation list or a
    space-separated phone string. Consecutive lines with the same utterance
    and word form one token; a repeated pronunciation starts the next token.
    """
    tokens = []
    cur_key, cur = None, []

    def flush():
        if cur:
            tokens.append(TokenEvidence(cur_key[0], cur_key[1], tuple(cur)))

    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        if len(f) != 4:
            raise FormatError("expected utt<TAB>word<TAB>pron<TAB>loglik", path, lineno)
        utt, word, pron, score = f[0].strip(), f[1].strip(), f[2].strip(), f[3].strip()
        try:
            s = float(score)
        except ValueError:
            raise FormatError(f"bad log-likelihood {score!r}", path, lineno) from None
        if not math.isfinite(s):
            raise FormatError("log-likelihood must be finite", path, lineno)
        if word not in lexicon:
            raise FormatError(f"word {word!r} not in lexicon", path, lineno)
        if pron.isdigit():
            i = int(pron)
            if i >= len(lexicon.prons(word)):
                raise FormatError(f"pronunciation index {i} out of range for {word!r}",
                                  path, lineno)
            phones = lexicon.prons(word)[i].phones
        else:
            phones = tuple(pron.split())
            if lexicon.pron_index(word, phones) is None:
                raise FormatError(f"pronunciation /{pron}/ not listed for {word!r}", path, lineno)
        key = (utt, word)
        if key != cur_key or any(ph == phones for ph, _ in cur):
            flush()
            cur_key, cur = key, []
        cur.append((phones, s))
    flush()
    return tokens


def load_evidence(path, lexicon):
    with open(path, encoding="utf-8") as f:
        return read_evidence(f, lexicon, path)


def format_evidence(evidence, lexicon):
    out = []
    for ev in evidence:
        for phones, s in ev.scores:
            out.append(f"{ev.utt}\t{ev.word}\t{lexicon.pron_index(ev.word, phones)}\t{s:.6f}\n")
    return "".join(out)

