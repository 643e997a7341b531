"""Joint-sequence (graphone) grapheme-to-phoneme conversion.

Training runs EM for a unigram joint model over every monotone segmentation
of each (spelling, pronunciation) pair, then collects expected graphone
n-gram counts under the converged segmentation posterior and smooths them
into a backoff model. Decoding is a best-first search over graphone
sequences that spell the word, scored by that model.
"""

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

from . import ngram
from .errors import CurateError, FormatError
from .lexicon import G2P, Lexicon

log = logging.getLogger(__name__)

SEP = "}"
PHONE_JOIN = "|"
MAX_RATIO = 4


class G2PError(CurateError):
    pass


def graphone_token(graphemes, phones):
    return graphemes + SEP + PHONE_JOIN.join(phones)


def parse_graphone(token):
    graphemes, sep, phones = token.partition(SEP)
    if not sep:
        raise ValueError(f"not a graphone token: {token!r}")
    return graphemes, tuple(phones.split(PHONE_JOIN)) if phones else ()


@dataclass
class GraphoneModel:
    lm: ngram.NgramModel
    inventory: tuple  # graphone tokens, sorted
    max_g: int = 2
    max_p: int = 2
    log_likelihoods: list = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        self._by_graphemes = defaultdict(list)
        for tok in self.inventory:
            g, p = parse_graphone(tok)
            self._by_graphemes[g].append((tok, p))
        self.letters = frozenset(ch for tok in self.inventory for ch in parse_graphone(tok)[0])

    def candidates(self, graphemes):
        return self._by_graphemes.get(graphemes, ())


def _alignment_edges(letters, phones, max_g, max_p):
    """Edges of the segmentation lattice over (letter, phone) positions."""
    I, J = len(letters), len(phones)
    edges = []
    for i in range(I + 1):
        for j in range(J + 1):
            for a in range(max_g + 1):
                if i + a > I:
                    break
                for b in range(max_p + 1):
                    if j + b > J:
                        break
                    if a == 0 and b == 0:
                        continue
                    tok = graphone_token("".join(letters[i:i + a]), phones[j:j + b])
                    edges.append(((i, j), (i + a, j + b), tok))
    return edges


class _Pair:
    __slots__ = ("nodes", "edges", "out", "end")

    def __init__(self, letters, phones, max_g, max_p):
        self.edges = _alignment_edges(letters, phones, max_g, max_p)
        # row-major position order is topological: edges never decrease i or j
        self.nodes = [(i, j) for i in range(len(letters) + 1) for j in range(len(phones) + 1)]
        self.end = (len(letters), len(phones))
        self.out = defaultdict(list)
        for e in self.edges:
            self.out[e[0]].append(e)

    def forward_backward(self, q):
        alpha = dict.fromkeys(self.nodes, 0.0)
        alpha[(0, 0)] = 1.0
        for u in self.nodes:
            au = alpha[u]
            if au:
                for _, v, tok in self.out[u]:
                    alpha[v] += au * q.get(tok, 0.0)
        beta = dict.fromkeys(self.nodes, 0.0)
        beta[self.end] = 1.0
        for u in reversed(self.nodes):
            s = beta[u]
            for _, v, tok in self.out[u]:
                s += q.get(tok, 0.0) * beta[v]
            beta[u] = s
        return alpha, beta, alpha[self.end]


def _prepare(lexicon, max_g, max_p):
    pairs, skipped = [], 0
    for word, prons in lexicon.entries.items():
        letters = list(word.casefold())
        for pron in prons:
            phones = tuple(pron.phones)
            if not letters and not phones:
                skipped += 1
                continue
            if len(phones) > MAX_RATIO * max(1, len(letters)) or \
                    len(letters) > MAX_RATIO * max(1, len(phones)):
                skipped += 1
                continue
            pairs.append(_Pair(letters, phones, max_g, max_p))
    return pairs, skipped


def _em_step(pairs, q):
    counts = defaultdict(float)
    ll = 0.0
    for pair in pairs:
        alpha, beta, z = pair.forward_backward(q)
        if z <= 0.0:
            raise G2PError("alignment lost all probability mass")
        ll += math.log(z)
        for u, v, tok in pair.edges:
            c = alpha[u] * q.get(tok, 0.0) * beta[v]
            if c:
                counts[tok] += c / z
    return counts, ll


def _expected_ngram_counts(pairs, q, order, floor=1e-15):
    counts = defaultdict(float)
    for pair in pairs:
        alpha, beta, z = pair.forward_backward(q)
        start, end = (0, 0), pair.end

        def grow(tokens, weight, node):
            # weight: mass of all prefixes ending at ``node`` with this chain
            post = weight * beta[node] / z
            if post < floor:
                return
            counts[tokens] += post
            if len(tokens) == order:
                return
            for _, v, tok in pair.out[node]:
                qt = q.get(tok, 0.0)
                if qt:
                    grow(tokens + (tok,), weight * qt, v)
            if node == end:
                counts[tokens + (ngram.EOS,)] += weight / z

        grow((ngram.BOS,), 1.0, start)
        for u, v, tok in pair.edges:
            qt = q.get(tok, 0.0)
            if qt and alpha[u]:
                grow((tok,), alpha[u] * qt, v)
        counts[(ngram.EOS,)] += 1.0
    return counts


def train_graphone_model(lexicon, order=3, max_g=2, max_p=2, em_iters=10,
                         min_count=1e-6, language=None, smoothing=ngram.WITTEN_BELL):
    """EM-trained graphone model; see the module docstring."""
    if language is not None:
        lexicon = lexicon.filter_language(language)
    if not lexicon.entries:
        raise G2PError("cannot train on an empty lexicon")
    if order < 1 or max_g < 1 or max_p < 1 or em_iters < 1:
        raise G2PError("order, max_g, max_p and em_iters must all be >= 1")
    pairs, skipped = _prepare(lexicon, max_g, max_p)
    if skipped:
        log.warning("skipped %d lexicon entries that cannot be aligned", skipped)
    if not pairs:
        raise G2PError("no alignable lexicon entries")

    inventory = sorted({tok for p in pairs for _, _, tok in p.edges})
    q = dict.fromkeys(inventory, 1.0 / len(inventory))
    history = []
    for it in range(em_iters):
        counts, ll = _em_step(pairs, q)
        if it:
            history.append(ll)
        total = math.fsum(counts.values())
        q = {tok: counts[tok] / total for tok in sorted(counts)}
        log.info("graphone EM iteration %d: log-likelihood %.6f", it + 1, ll)
    _, ll = _em_step(pairs, q)
    history.append(ll)

    expected = _expected_ngram_counts(pairs, q, order)
    kept = sorted(tok for tok in q if expected.get((tok,), 0.0) > min_count)
    table = ngram.CountTable(order, dict(expected), set(kept) | {ngram.BOS, ngram.EOS, ngram.UNK})
    table.counts = {k: v for k, v in table.counts.items()
                    if all(t in table.vocab for t in k)}
    lm = ngram.estimate(table, smoothing, min_count=min_count)
    return GraphoneModel(lm, tuple(kept), max_g, max_p, history, skipped)


def g2p_nbest(model, word, n=1, max_pops=200_000):
    """Up to ``n`` distinct pronunciations of ``word`` with their ln probabilities.

    A pronunciation is scored by its best segmentation. Ties go to the
    lexicographically smaller phone sequence.
    """
    if n < 1:
        raise G2PError("n must be >= 1")
    letters = list(word.casefold())
    if not letters:
        raise G2PError("cannot decode an empty word")
    unseen = sorted(set(letters) - model.letters)
    if unseen:
        raise G2PError(f"letters never seen in training for {word!r}: {' '.join(unseen)}")
    lm = model.lm
    hist_len = max(lm.order - 1, 0)
    max_phones = MAX_RATIO * len(letters)
    L = len(letters)
    # (cost, phones, done, position, history)
    start_hist = (ngram.BOS,)[-hist_len:] if hist_len else ()
    heap = [(0.0, (), 1, 0, start_hist)]
    results, seen, pops = [], set(), 0
    while heap and len(results) < n and pops < max_pops:
        cost, phones, live, i, hist = heapq.heappop(heap)
        pops += 1
        if not live:
            if phones not in seen:
                seen.add(phones)
                results.append((phones, -cost))
            continue
        if i == L:
            end = cost - lm.logprob(hist, ngram.EOS)
            heapq.heappush(heap, (end, phones, 0, i, hist))
        for a in range(0, model.max_g + 1):
            if i + a > L:
                break
            for tok, ph in model.candidates("".join(letters[i:i + a])):
                if len(phones) + len(ph) > max_phones:
                    continue
                c = cost - lm.logprob(hist, tok)
                if c == math.inf:
                    continue
                h = (hist + (tok,))[-hist_len:] if hist_len else ()
                heapq.heappush(heap, (c, phones + ph, 1, i + a, h))
    return results


def generate_oov_lexicon(model, wordlist, base, n=1):
    """Lexicon for the words of ``wordlist`` missing from ``base``.

    Returns ``(lexicon, skipped)`` where ``skipped`` lists ``(word, reason)``
    for words that could not be decoded. Per-word probabilities are the
    n-best scores renormalized over the kept pronunciations.
    """
    out = Lexicon()
    skipped = []
    for word in sorted(set(wordlist)):
        if word in base:
            continue
        try:
            hyps = g2p_nbest(model, word, n)
        except G2PError as e:
            skipped.append((word, str(e)))
            continue
        if not hyps:
            skipped.append((word, "no pronunciation found"))
            continue
        top = max(lp for _, lp in hyps)
        weights = [math.exp(lp - top) for _, lp in hyps]
        z = math.fsum(weights)
        for (phones, _), wgt in zip(hyps, weights):
            out.add(word, phones, wgt / z, G2P)
    return out, skipped


# serialization ----------------------------------------------------------------

def format_model(model):
    lines = ["\\graphones\\", f"max_g={model.max_g}", f"max_p={model.max_p}"]
    lines += list(model.inventory)
    lines.append("\\end-graphones\\")
    return "\n".join(lines) + "\n" + ngram.format_arpa(model.lm)


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_model(model))


def read_model(lines, path=None):
    lines = list(lines)
    if not lines or lines[0].strip() != "\\graphones\\":
        raise FormatError("missing \\graphones\\ header", path, 1)
    params, inventory = {}, []
    for k, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if line == "\\end-graphones\\":
            break
        if "=" in line and SEP not in line:
            key, _, val = line.partition("=")
            try:
                params[key] = int(val)
            except ValueError:
                raise FormatError(f"bad parameter line {line!r}", path, k) from None
        elif line:
            try:
                parse_graphone(line)
            except ValueError as e:
                raise FormatError(str(e), path, k) from None
            inventory.append(line)
    else:
        raise FormatError("missing \\end-graphones\\ marker", path)
    lm = ngram.read_arpa(lines[k:], path)
    return GraphoneModel(lm, tuple(inventory), params.get("max_g", 2), params.get("max_p", 2))


def load_model(path):
    with open(path, encoding="utf-8") as f:
        return read_model(f, path)
