"""Acyclic weighted lattices.

Arc costs are negated natural logs. An arc's weight under a given scaling is
``acoustic_scale * acoustic + lm_scale * graph``; final costs count as graph
cost. Probability arithmetic happens in the log domain.
"""

import heapq
import math
from dataclasses import dataclass, field

from .errors import FormatError, LatticeError

EPS = "<eps>"
INF = math.inf


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    label: str
    acoustic: float = 0.0
    graph: float = 0.0

    def weight(self, lm_scale=1.0, acoustic_scale=1.0):
        return acoustic_scale * self.acoustic + lm_scale * self.graph


@dataclass(frozen=True)
class Lattice:
    nodes: tuple  # ((node_id, time), ...)
    arcs: tuple  # (Arc, ...)
    start: int
    finals: tuple  # ((node_id, final_cost), ...)
    utt: str = ""

    def __post_init__(self):
        ids = [n for n, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise LatticeError("duplicate node id")
        known = set(ids)
        if self.start not in known:
            raise LatticeError(f"start node {self.start} not declared")
        if not self.finals:
            raise LatticeError("lattice has no final node")
        for n, _ in self.finals:
            if n not in known:
                raise LatticeError(f"final node {n} not declared")
        times = dict(self.nodes)
        for a in self.arcs:
            if a.src not in known or a.dst not in known:
                raise LatticeError(f"arc {a.src}->{a.dst} uses an undeclared node")
            if times[a.dst] < times[a.src]:
                raise LatticeError(f"arc {a.src}->{a.dst} goes backwards in time")

    @classmethod
    def build(cls, arcs, start=0, finals=None, times=None, utt=""):
        """Convenience constructor from ``(src, dst, label, ac, graph)`` tuples.

        Nodes are inferred from the arcs; missing times default to the node's
        topological depth.
        """
        arcs = tuple(a if isinstance(a, Arc) else Arc(*a) for a in arcs)
        ids = {start}
        for a in arcs:
            ids.update((a.src, a.dst))
        if finals is None:
            srcs = {a.src for a in arcs}
            finals = [(n, 0.0) for n in sorted(ids) if n not in srcs]
        finals = tuple((n, 0.0) if not isinstance(n, tuple) else n for n in finals)
        for n, _ in finals:
            ids.add(n)
        times = dict(times or {})
        if len(times) < len(ids):
            depth = _depths(sorted(ids), arcs)
            for n in ids:
                times.setdefault(n, float(depth[n]))
        nodes = tuple((n, float(times[n])) for n in sorted(ids))
        return cls(nodes, arcs, start, finals, utt)

    @property
    def node_ids(self):
        return [n for n, _ in self.nodes]

    def time(self, node):
        return dict(self.nodes)[node]

    def final_cost(self, node):
        for n, c in self.finals:
            if n == node:
                return c
        return INF

    def out_arcs(self):
        out = {n: [] for n, _ in self.nodes}
        for i, a in enumerate(self.arcs):
            out[a.src].append(i)
        return out


@dataclass(frozen=True)
class Path:
    arc_ids: tuple
    arcs: tuple
    final: int
    final_cost: float
    acoustic: float
    graph: float

    @property
    def labels(self):
        return tuple(a.label for a in self.arcs if a.label != EPS)

    def cost(self, lm_scale=1.0, acoustic_scale=1.0):
        return acoustic_scale * self.acoustic + lm_scale * (self.graph + self.final_cost)


@dataclass(frozen=True)
class PosteriorAnnotation:
    posteriors: tuple  # per arc, aligned with lattice.arcs
    total: float  # total log-likelihood (natural log)
    alpha: dict = field(default_factory=dict, repr=False)
    beta: dict = field(default_factory=dict, repr=False)


def _depths(ids, arcs):
    depth = {n: 0 for n in ids}
    for _ in range(len(ids)):
        changed = False
        for a in arcs:
            if depth[a.dst] < depth[a.src] + 1:
                depth[a.dst] = depth[a.src] + 1
                changed = True
        if not changed:
            break
    return depth


def logsumexp(values):
    values = [v for v in values if v != -INF]
    if not values:
        return -INF
    m = max(values)
    if m == INF:
        return INF
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def topo_order(lattice):
    """Node ids ordered so that every arc points forward.

    Ready nodes are released smallest id first, so the order is deterministic.
    """
    indeg = {n: 0 for n in lattice.node_ids}
    succ = {n: [] for n in indeg}
    for a in lattice.arcs:
        indeg[a.dst] += 1
        succ[a.src].append(a.dst)
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(order) != len(indeg):
        stuck = min(n for n, d in indeg.items() if d > 0)
        raise LatticeError(f"lattice has a cycle through node {stuck}")
    return order


def _reach(lattice):
    fwd = {lattice.start}
    bwd = {n for n, _ in lattice.finals}
    order = topo_order(lattice)
    out = lattice.out_arcs()
    for n in order:
        if n in fwd:
            fwd.update(lattice.arcs[i].dst for i in out[n])
    for n in reversed(order):
        if any(lattice.arcs[i].dst in bwd for i in out[n]):
            bwd.add(n)
    return fwd, bwd


def is_connected(lattice):
    fwd, bwd = _reach(lattice)
    return all(n in fwd and n in bwd for n in lattice.node_ids)


def connect(lattice):
    """Drop nodes and arcs not on some start-to-final path."""
    fwd, bwd = _reach(lattice)
    keep = fwd & bwd
    if lattice.start not in keep:
        raise LatticeError("no complete path from start to a final node")
    return Lattice(
        tuple((n, t) for n, t in lattice.nodes if n in keep),
        tuple(a for a in lattice.arcs if a.src in keep and a.dst in keep),
        lattice.start,
        tuple((n, c) for n, c in lattice.finals if n in keep),
        lattice.utt,
    )


def _require_connected(lattice):
    fwd, bwd = _reach(lattice)
    for n in lattice.node_ids:
        if n not in fwd:
            raise LatticeError(f"node {n} is not reachable from the start node")
        if n not in bwd:
            raise LatticeError(f"node {n} cannot reach a final node")


def forward_backward(lattice, lm_scale=1.0, acoustic_scale=1.0):
    """Arc posteriors and total log-likelihood in the log semiring."""
    if lm_scale < 0:
        raise ValueError("lm_scale must be nonnegative")
    _require_connected(lattice)
    order = topo_order(lattice)
    out = lattice.out_arcs()
    w = [a.weight(lm_scale, acoustic_scale) for a in lattice.arcs]
    incoming = {n: [] for n in order}
    alpha = {}
    for n in order:
        # connected + acyclic means nothing enters the start node
        alpha[n] = 0.0 if n == lattice.start else logsumexp(incoming[n])
        for i in out[n]:
            incoming[lattice.arcs[i].dst].append(alpha[n] - w[i])
    fin = {n: -lm_scale * c for n, c in lattice.finals}
    beta = {}
    for n in reversed(order):
        terms = [fin.get(n, -INF)] + [beta[lattice.arcs[i].dst] - w[i] for i in out[n]]
        beta[n] = logsumexp(terms)
    total = beta[lattice.start]
    if total == -INF:
        raise LatticeError("lattice carries no probability mass")
    post = tuple(math.exp(alpha[a.src] - w[i] + beta[a.dst] - total)
                 for i, a in enumerate(lattice.arcs))
    return PosteriorAnnotation(post, total, alpha, beta)


def _backward_best(lattice, w, lm_scale):
    """Min cost from each node to a final (tropical semiring)."""
    order = topo_order(lattice)
    out = lattice.out_arcs()
    fin = {n: lm_scale * c for n, c in lattice.finals}
    best = {}
    for n in reversed(order):
        b = fin.get(n, INF)
        for i in out[n]:
            c = w[i] + best[lattice.arcs[i].dst]
            if c < b:
                b = c
        best[n] = b
    return best


def _forward_best(lattice, w):
    order = topo_order(lattice)
    out = lattice.out_arcs()
    best = {n: INF for n in order}
    best[lattice.start] = 0.0
    for n in order:
        if best[n] == INF:
            continue
        for i in out[n]:
            d = lattice.arcs[i].dst
            c = best[n] + w[i]
            if c < best[d]:
                best[d] = c
    return best


def _tie(a, b):
    return a == b or abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def make_path(lattice, arc_ids, final):
    arcs = tuple(lattice.arcs[i] for i in arc_ids)
    return Path(
        tuple(arc_ids),
        arcs,
        final,
        lattice.final_cost(final),
        math.fsum(a.acoustic for a in arcs),
        math.fsum(a.graph for a in arcs),
    )


def best_path(lattice, lm_scale=1.0, acoustic_scale=1.0):
    """Minimum-cost path; ties go to the smallest arc-index sequence."""
    w = [a.weight(lm_scale, acoustic_scale) for a in lattice.arcs]
    best = _backward_best(lattice, w, lm_scale)
    if best[lattice.start] == INF:
        raise LatticeError("no complete path from start to a final node")
    out = lattice.out_arcs()
    fin = {n: lm_scale * c for n, c in lattice.finals}
    node, ids = lattice.start, []
    while True:
        target = best[node]
        # stopping yields the shortest (hence lexicographically smallest) sequence
        if node in fin and _tie(fin[node], target):
            return make_path(lattice, ids, node)
        for i in sorted(out[node]):
            d = lattice.arcs[i].dst
            if best[d] < INF and _tie(w[i] + best[d], target):
                ids.append(i)
                node = d
                break
        else:
            raise LatticeError("best path reconstruction failed")


def nbest(lattice, n, lm_scale=1.0, acoustic_scale=1.0, max_pops=1_000_000):
    """Up to ``n`` paths with distinct label sequences, cheapest first.

    A* over partial paths with the exact cost-to-go as heuristic, so complete
    paths pop in nondecreasing cost order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    w = [a.weight(lm_scale, acoustic_scale) for a in lattice.arcs]
    h = _backward_best(lattice, w, lm_scale)
    if h[lattice.start] == INF:
        raise LatticeError("no complete path from start to a final node")
    out = lattice.out_arcs()
    fin = {n_: lm_scale * c for n_, c in lattice.finals}
    # (estimate, arc ids, done flag, node, cost so far)
    heap = [(h[lattice.start], (), 1, lattice.start, 0.0)]
    seen, paths, pops = set(), [], 0
    while heap and len(paths) < n and pops < max_pops:
        est, ids, flag, node, g = heapq.heappop(heap)
        pops += 1
        if flag == 0:
            p = make_path(lattice, ids, node)
            if p.labels not in seen:
                seen.add(p.labels)
                paths.append(p)
            continue
        if node in fin:
            heapq.heappush(heap, (g + fin[node], ids, 0, node, g + fin[node]))
        for i in out[node]:
            d = lattice.arcs[i].dst
            if h[d] < INF:
                g2 = g + w[i]
                heapq.heappush(heap, (g2 + h[d], ids + (i,), 1, d, g2))
    return paths


def prune_posterior(lattice, beam, lm_scale=1.0, acoustic_scale=1.0):
    """Remove arcs whose best containing path is worse than the best path by more than ``beam``."""
    if beam < 0:
        raise ValueError("beam must be nonnegative")
    w = [a.weight(lm_scale, acoustic_scale) for a in lattice.arcs]
    fwd = _forward_best(lattice, w)
    bwd = _backward_best(lattice, w, lm_scale)
    best = bwd[lattice.start]
    if best == INF:
        raise LatticeError("no complete path from start to a final node")
    limit = best + beam

    def ok(c):
        return c <= limit or _tie(c, limit)

    arcs = tuple(a for i, a in enumerate(lattice.arcs)
                 if ok(fwd[a.src] + w[i] + bwd[a.dst]))
    finals = tuple((n, c) for n, c in lattice.finals if ok(fwd[n] + lm_scale * c))
    pruned = Lattice(lattice.nodes, arcs, lattice.start, finals, lattice.utt)
    return connect(pruned)


def word_to_phone(lattice, lexicon):
    """Expand each word arc into one phone sub-path per pronunciation.

    The first phone arc of each sub-path carries the word's acoustic cost and
    its graph cost plus ``-ln p(pron|word)``; later arcs are free. Interior
    node times are spread linearly across the word's span.
    """
    missing = sorted({a.label for a in lattice.arcs
                      if a.label != EPS and a.label not in lexicon})
    if missing:
        raise LatticeError("words missing from lexicon: " + ", ".join(missing))
    times = dict(lattice.nodes)
    next_id = max(times) + 1
    nodes = list(lattice.nodes)
    arcs = []
    for a in lattice.arcs:
        if a.label == EPS:
            arcs.append(a)
            continue
        t0, t1 = times[a.src], times[a.dst]
        for pron in lexicon.prons(a.label):
            if pron.prob <= 0:
                continue
            extra = -math.log(pron.prob)
            k = len(pron.phones)
            chain = [a.src]
            for j in range(1, k):
                nodes.append((next_id, t0 + (t1 - t0) * j / k))
                chain.append(next_id)
                next_id += 1
            chain.append(a.dst)
            for j, ph in enumerate(pron.phones):
                if j == 0:
                    arcs.append(Arc(chain[0], chain[1], ph, a.acoustic, a.graph + extra))
                else:
                    arcs.append(Arc(chain[j], chain[j + 1], ph, 0.0, 0.0))
    return Lattice(tuple(nodes), tuple(arcs), lattice.start, lattice.finals, lattice.utt)


def scale_graph(lattice, lm_scale, acoustic_scale=0.0):
    """Lattice with costs rescaled; final costs scale with the graph cost."""
    return Lattice(
        lattice.nodes,
        tuple(Arc(a.src, a.dst, a.label, acoustic_scale * a.acoustic, lm_scale * a.graph)
              for a in lattice.arcs),
        lattice.start,
        tuple((n, lm_scale * c) for n, c in lattice.finals),
        lattice.utt,
    )


def enumerate_paths(lattice, limit=1_000_000):
    """Every complete path, depth first. Meant for small lattices and tests."""
    out = lattice.out_arcs()
    fin = dict(lattice.finals)
    paths = []

    def walk(node, ids):
        if len(paths) >= limit:
            raise LatticeError("too many paths to enumerate")
        if node in fin:
            paths.append(make_path(lattice, ids, node))
        for i in out[node]:
            walk(lattice.arcs[i].dst, ids + [i])

    walk(lattice.start, [])
    return paths


# text format ---------------------------------------------------------------

def fmt_num(x):
    if x == 0:
        return "0"
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def format_lattice(lattice):
    lines = [f"UTT {lattice.utt}"]
    for n, t in lattice.nodes:
        lines.append(f"N {n} {fmt_num(t)}")
    for a in lattice.arcs:
        lines.append(f"A {a.src} {a.dst} {a.label} {fmt_num(a.acoustic)} {fmt_num(a.graph)}")
    for n, c in lattice.finals:
        lines.append(f"F {n} {fmt_num(c)}")
    return "\n".join(lines) + "\n\n"


def read_lattices(lines, path=None):
    """Yield lattices from the block text format.

    The first node line declares the start node.
    """
    block = None

    def finish():
        utt, nodes, arcs, finals, lineno = block
        if not nodes:
            raise FormatError(f"lattice {utt!r} has no nodes", path, lineno)
        try:
            return Lattice(tuple(nodes), tuple(arcs), nodes[0][0], tuple(finals), utt)
        except LatticeError as e:
            raise FormatError(f"lattice {utt!r}: {e}", path, lineno) from None

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            if block is not None:
                yield finish()
                block = None
            continue
        if line.startswith("#"):
            continue
        f = line.split()
        try:
            if f[0] == "UTT":
                if block is not None:
                    yield finish()
                if len(f) != 2:
                    raise FormatError("expected 'UTT <id>'", path, lineno)
                block = (f[1], [], [], [], lineno)
                continue
            if block is None:
                raise FormatError("record outside a UTT block", path, lineno)
            if f[0] == "N" and len(f) == 3:
                block[1].append((int(f[1]), float(f[2])))
            elif f[0] == "A" and len(f) == 6:
                block[2].append(Arc(int(f[1]), int(f[2]), f[3], float(f[4]), float(f[5])))
            elif f[0] == "F" and len(f) == 3:
                block[3].append((int(f[1]), float(f[2])))
            else:
                raise FormatError(f"unrecognized lattice line {line!r}", path, lineno)
        except ValueError:
            raise FormatError(f"bad number in {line!r}", path, lineno) from None
    if block is not None:
        yield finish()


def load_lattices(path):
    with open(path, encoding="utf-8") as f:
        return list(read_lattices(f, path))


def save_lattices(lattices, path):
    with open(path, "w", encoding="utf-8") as f:
        for lat in lattices:
            f.write(format_lattice(lat))
