"""N-best and lattice rescoring with a pluggable language-model scorer.

Combined path cost is

    acoustic_scale * acoustic + (1 - mu) * graph + mu * (-ln p_scorer)

where ``graph`` includes final costs and the scorer term includes the
end-of-sentence event. ``mu = 1`` replaces the first-pass LM entirely.
"""

import logging
from dataclasses import dataclass
from typing import Protocol

from . import lattice as latmod
from . import ngram
from .errors import CurateError
from .lattice import EPS, Arc, Lattice

log = logging.getLogger(__name__)


class RescoreError(CurateError):
    pass


class LmScorer(Protocol):
    """Anything that scores token sequences left to right.

    Implementations must be deterministic, and two states with equal keys
    must score every continuation identically.
    """

    def start(self): ...

    def advance(self, state, token): ...  # -> (state, ln p)

    def finish(self, state): ...  # -> ln p(end | state)

    def key(self, state): ...


class NgramScorer:
    """Scorer backed by a backoff n-gram model; state is the truncated history."""

    def __init__(self, model):
        self.model = model
        self.hist = max(model.order - 1, 0)

    def _cut(self, ctx):
        return tuple(ctx[-self.hist:]) if self.hist else ()

    def start(self):
        return self._cut((ngram.BOS,))

    def advance(self, state, token):
        tok = self.model.map_token(token)
        return self._cut(state + (tok,)), self.model.logprob(state, tok)

    def finish(self, state):
        return self.model.logprob(state, ngram.EOS)

    def key(self, state):
        return state


def score_labels(scorer, labels):
    """ln probability of a label sequence under ``scorer``, end event included."""
    state, total = scorer.start(), 0.0
    for tok in labels:
        state, lp = scorer.advance(state, tok)
        total += lp
    return total + scorer.finish(state)


@dataclass(frozen=True)
class RescoreConfig:
    mu: float = 0.5
    acoustic_scale: float = 1.0
    beam: float = 10.0
    max_states: int = 64  # per lattice node; None for no cap

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise RescoreError(f"mu must lie in [0, 1], got {self.mu}")
        if not self.beam >= 0:
            raise RescoreError(f"beam must be nonnegative, got {self.beam}")
        if self.max_states is not None and self.max_states < 1:
            raise RescoreError("max_states must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    rank: int  # 1-based rank after rescoring
    original_rank: int
    labels: tuple
    combined: float
    scorer_logprob: float
    path: latmod.Path


def _constrained_best(lattice, labels, acoustic_scale, graph_scale):
    """Cheapest path spelling exactly ``labels`` under the given weights."""
    order = latmod.topo_order(lattice)
    out = lattice.out_arcs()
    n = len(labels)
    best = {(lattice.start, 0): (0.0, ())}
    for node in order:
        for k in range(n + 1):
            cur = best.get((node, k))
            if cur is None:
                continue
            for i in sorted(out[node]):
                a = lattice.arcs[i]
                if a.label == EPS:
                    nk = k
                elif k < n and a.label == labels[k]:
                    nk = k + 1
                else:
                    continue
                cand = (cur[0] + acoustic_scale * a.acoustic + graph_scale * a.graph,
                        cur[1] + (i,))
                old = best.get((a.dst, nk))
                if old is None or cand < old:
                    best[(a.dst, nk)] = cand
    ends = []
    for f, c in lattice.finals:
        got = best.get((f, n))
        if got is not None:
            ends.append((got[0] + graph_scale * c, got[1], f))
    cost, ids, f = min(ends)
    return latmod.make_path(lattice, ids, f), cost


def nbest_rescore(lattice, scorer, config, n):
    """Rescore the ``n`` best first-pass hypotheses and re-rank them.

    Each hypothesis is charged for its cheapest path under the interpolated
    weights, so paths sharing a word sequence are handled exactly. Equal
    combined costs keep first-pass order.
    """
    if n < 1:
        raise RescoreError("n must be >= 1")
    first = latmod.nbest(lattice, n, 1.0, config.acoustic_scale)
    hyps = []
    for rank, p in enumerate(first, 1):
        labels = p.labels
        if config.mu == 0.0:
            path, base = p, p.cost(1.0, config.acoustic_scale)
        else:
            path, base = _constrained_best(lattice, labels, config.acoustic_scale, 1.0 - config.mu)
        lp = score_labels(scorer, labels)
        hyps.append((base - config.mu * lp, rank, labels, lp, path))
    hyps.sort(key=lambda h: (h[0], h[1]))
    return [Hypothesis(k, r, labels, c, lp, path)
            for k, (c, r, labels, lp, path) in enumerate(hyps, 1)]


@dataclass(frozen=True)
class LatticeRescoreResult:
    lattice: Lattice  # expanded lattice; graph field holds the interpolated cost
    best: latmod.Path
    cost: float
    beamed: bool  # True if the state cap discarded any expanded state


def _lower_bound_to_go(lattice, acoustic_scale, graph_scale):
    # scorer costs are nonnegative, so the original weights bound the rest
    w = [acoustic_scale * a.acoustic + graph_scale * a.graph for a in lattice.arcs]
    return latmod._backward_best(lattice, w, graph_scale)


def lattice_rescore(lattice, scorer, config):
    """Expand (node, scorer state) pairs and find the best rescored path.

    A state is dropped when its cost so far plus a lower bound on the cost to
    go exceeds the rescored first-pass best path by more than the beam. That
    test never removes the optimum, so only the per-node state cap can make
    the result approximate; ``beamed`` reports when it did.
    """
    latmod._require_connected(lattice)
    mu, ac = config.mu, config.acoustic_scale
    gs = 1.0 - mu
    h = _lower_bound_to_go(lattice, ac, gs)
    ref = latmod.best_path(lattice, 1.0, ac)
    ref_cost = ref.acoustic * ac + gs * (ref.graph + ref.final_cost) \
        - mu * score_labels(scorer, ref.labels)
    limit = ref_cost + config.beam
    times = dict(lattice.nodes)
    fin = dict(lattice.finals)
    out = lattice.out_arcs()

    # per original node: key -> [g, scorer state, expanded id]
    states = {n: {} for n in times}
    s0 = scorer.start()
    states[lattice.start][scorer.key(s0)] = [0.0, s0, None]
    nodes, arcs, finals = [], [], []
    beamed = False
    ids = {}
    pending = []  # (src expanded id, dst node, dst key, label, acoustic, graph)

    def within(g, node):
        c = g + h[node]
        return c <= limit or latmod._tie(c, limit)

    for node in latmod.topo_order(lattice):
        here = states[node]
        live = sorted(((v[0], repr(k), k) for k, v in here.items() if within(v[0], node)))
        if config.max_states is not None and len(live) > config.max_states:
            beamed = True
            live = live[:config.max_states]
        for g, _, k in live:
            ids[(node, k)] = len(nodes)
            nodes.append((len(nodes), times[node]))
        for g, _, k in live:
            src = ids[(node, k)]
            state = here[k][1]
            if node in fin:
                finals.append((src, gs * fin[node] - mu * scorer.finish(state)))
            for i in out[node]:
                a = lattice.arcs[i]
                if a.label == EPS:
                    nstate, lp = state, 0.0
                else:
                    nstate, lp = scorer.advance(state, a.label)
                cost = gs * a.graph - mu * lp
                ng = g + ac * a.acoustic + cost
                nk = scorer.key(nstate)
                slot = states[a.dst].get(nk)
                if slot is None or ng < slot[0]:
                    states[a.dst][nk] = [ng, nstate, None]
                pending.append((src, a.dst, nk, a.label, a.acoustic, cost))
        # free memory for finished nodes
        states[node] = {k: here[k] for _, _, k in live}

    for src, dst, nk, label, acoustic, cost in pending:
        d = ids.get((dst, nk))
        if d is not None:
            arcs.append(Arc(src, d, label, acoustic, cost))
    if not finals:
        raise RescoreError("rescoring lost every complete path")
    expanded = latmod.connect(Lattice(tuple(nodes), tuple(arcs), 0, tuple(finals), lattice.utt))
    best = latmod.best_path(expanded, 1.0, ac)
    if beamed:
        log.warning("%s: state cap reached, rescoring is approximate", lattice.utt or "lattice")
    return LatticeRescoreResult(expanded, best, best.cost(1.0, ac), beamed)


def format_hypotheses(rows):
    """``rows``: iterable of (utt, rank, combined cost, labels)."""
    lines = ["# utterance-id\trank\tcombined-cost\twords"]
    for utt, rank, cost, labels in rows:
        lines.append(f"{utt}\t{rank}\t{cost:.6f}\t{' '.join(labels)}")
    return "\n".join(lines) + "\n"
