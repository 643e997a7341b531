import io
import math
import random

import pytest

from css_curate.errors import FormatError, LexiconError
from css_curate.lexicon import (
    G2P, ORIG, PHONEDEC, CtmRecord, Lexicon, format_lexicon, read_ctm, read_lexicon,
)
from css_curate.lexlearn import (
    TokenEvidence, estimate_pron_probs, format_evidence, harvest_candidates, lexicon_stats,
    merge_lexicons, prune_by_likelihood, read_evidence,
)


def ctm(utt, items):
    return [CtmRecord(utt, tok, s, d) for tok, s, d in items]


def lex_of(rows):
    lx = Lexicon()
    for word, phones, p, src in rows:
        lx.add(word, phones.split(), p, src)
    return lx


# harvesting -------------------------------------------------------------------

def test_harvest_tree():
    words = ctm("u1", [("three", 0.0, 0.5)])
    phones = ctm("u1", [("t_en", 0.0, 0.2), ("r_en", 0.2, 0.15), ("iy_en", 0.35, 0.15)])
    lx = harvest_candidates(words, phones, min_count=1)
    assert lx.words() == ["three"]
    p = lx.prons("three")[0]
    assert p.phones == ("t_en", "r_en", "iy_en") and p.source == PHONEDEC and p.prob == 1.0


def test_harvest_midpoint_on_boundary_goes_to_later_word():
    words = ctm("u1", [("a", 0.0, 0.5), ("b", 0.5, 0.5)])
    # midpoint of "x" is exactly 0.5
    phones = ctm("u1", [("p", 0.0, 0.25), ("x", 0.25, 0.5), ("q", 0.75, 0.25)])
    lx = harvest_candidates(words, phones, min_count=1)
    assert lx.prons("a")[0].phones == ("p",)
    assert lx.prons("b")[0].phones == ("x", "q")


def test_harvest_min_count():
    words = ctm("u1", [("a", 0.0, 0.5)]) + ctm("u2", [("a", 0.0, 0.5)]) + ctm("u3", [("b", 0, 1)])
    phones = ctm("u1", [("p", 0.0, 0.5)]) + ctm("u2", [("p", 0.1, 0.3)]) + ctm("u3", [("z", 0, 1)])
    lx = harvest_candidates(words, phones, min_count=2)
    assert lx.words() == ["a"]


def test_harvest_overlap_error():
    words = ctm("u7", [("a", 0.0, 0.5), ("b", 0.4, 0.5)])
    with pytest.raises(LexiconError, match="u7"):
        harvest_candidates(words, ctm("u7", [("p", 0, 1)]), min_count=1)


def test_harvest_unsorted_error():
    words = ctm("u8", [("a", 0.5, 0.2), ("b", 0.0, 0.2)])
    with pytest.raises(LexiconError, match="u8"):
        harvest_candidates(words, ctm("u8", [("p", 0, 1)]), min_count=1)


def test_harvest_permutation_invariant():
    rng = random.Random(3)
    words, phones = [], []
    for u in range(12):
        t = 0.0
        for _ in range(4):
            w = rng.choice(["la", "ok", "then"])
            words.append(CtmRecord(f"u{u}", w, t, 0.4))
            phones.append(CtmRecord(f"u{u}", w[0] + "_en", t, 0.2))
            phones.append(CtmRecord(f"u{u}", rng.choice(["a_en", "e_en"]), t + 0.2, 0.2))
            t += 0.4
    a = harvest_candidates(words, phones, min_count=1)
    order = list(range(12))
    rng.shuffle(order)
    w2 = [r for u in order for r in words if r.utt == f"u{u}"]
    p2 = [r for u in order for r in phones if r.utt == f"u{u}"]
    b = harvest_candidates(w2, p2, min_count=1)
    assert format_lexicon(a) == format_lexicon(b)


# merging ----------------------------------------------------------------------

def test_merge_disjoint():
    l0 = lex_of([("a", "a_en", 1.0, ORIG)])
    l1 = lex_of([("b", "b_en", 1.0, G2P)])
    l2 = lex_of([("c", "c_en", 1.0, PHONEDEC)])
    m = merge_lexicons(l0, l1, l2)
    assert m.words() == ["a", "b", "c"]


def test_merge_priority_and_uniform_reset():
    l0 = lex_of([("tree", "t_en r_en iy_en", 1.0, ORIG)])
    l2 = lex_of([("tree", "t_en r_en iy_en", 1.0, PHONEDEC), ("tree", "ch_en iy_en", 1.0, PHONEDEC)])
    m = merge_lexicons(l0, Lexicon(), l2)
    ps = m.prons("tree")
    assert [(p.text, p.source, p.prob) for p in ps] == [
        ("t_en r_en iy_en", ORIG, 0.5), ("ch_en iy_en", PHONEDEC, 0.5)]


def test_merge_inventory_conflict():
    l0 = lex_of([("a", "x", 1.0, ORIG)])
    l0.inventory["x"] = "en"
    l1 = lex_of([("b", "x", 1.0, G2P)])
    l1.inventory["x"] = "man"
    with pytest.raises(LexiconError, match="'x'"):
        merge_lexicons(l0, l1, Lexicon())


# EM -----------------------------------------------------------------------------

def two_pron():
    return lex_of([("three", "th_en r_en iy_en", 0.5, ORIG), ("three", "t_en r_en iy_en", 0.5, PHONEDEC)])


TH = ("th_en", "r_en", "iy_en")
T = ("t_en", "r_en", "iy_en")


def test_single_pron_is_certain():
    lx = lex_of([("a", "a_en", 0.3, ORIG)])
    ev = [TokenEvidence("u1", "a", ((("a_en",), -4.0),))]
    assert estimate_pron_probs(lx, ev).prons("a")[0].prob == 1.0


def test_em_ratio_nine_converges_to_one():
    ev = [TokenEvidence(f"u{i}", "three", ((TH, -1.0 + math.log(9)), (T, -1.0))) for i in range(10)]
    # the objective sum log(9p + 1 - p) is increasing on [0, 1]
    grid = [k / 1000 for k in range(1001)]
    best = max(grid, key=lambda p: sum(math.log(9 * p + 1 - p) for _ in ev))
    assert best == 1.0
    est = estimate_pron_probs(two_pron(), ev, em_iters=60)
    assert est.prons("three")[0].prob > 1 - 1e-6


def test_em_symmetric_fixed_point():
    ev = [TokenEvidence("u1", "three", ((TH, -1.0), (T, -3.0))),
          TokenEvidence("u2", "three", ((TH, -3.0), (T, -1.0)))]
    est = estimate_pron_probs(two_pron(), ev, em_iters=10)
    assert [p.prob for p in est.prons("three")] == pytest.approx([0.5, 0.5], abs=1e-12)


def test_em_monotone_random():
    rng = random.Random(0)
    for _ in range(10):
        lx = Lexicon()
        for w in range(5):
            for b in range(rng.randint(1, 4)):
                lx.add(f"w{w}", [f"p{b}"])
        ev = []
        for u in range(40):
            w = f"w{rng.randrange(5)}"
            cands = tuple((p.phones, rng.uniform(-20, 0)) for p in lx.prons(w) if rng.random() < 0.8)
            if cands:
                ev.append(TokenEvidence(f"u{u}", w, cands))
        trace = []
        est = estimate_pron_probs(lx.uniform(), ev, em_iters=20, trace=trace)
        assert len(trace) == 21
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        for w in est:
            assert math.fsum(p.prob for p in est.prons(w)) == pytest.approx(1.0, abs=1e-9)


def test_em_words_without_evidence_uniform():
    lx = lex_of([("a", "x", 0.9, ORIG), ("a", "y", 0.1, ORIG)])
    assert [p.prob for p in estimate_pron_probs(lx, []).prons("a")] == [0.5, 0.5]


def test_em_unknown_evidence():
    with pytest.raises(LexiconError, match="u9:ghost"):
        estimate_pron_probs(two_pron(), [TokenEvidence("u9", "ghost", ((("g",), -1.0),))])
    with pytest.raises(LexiconError, match="three:z"):
        estimate_pron_probs(two_pron(), [TokenEvidence("u9", "three", ((("z",), -1.0),))])


# pruning ------------------------------------------------------------------------

def direct_ll(probs, tokens):
    return sum(math.log(sum(probs[i] * math.exp(s) for i, s in tok)) for tok in tokens)


def oracle_deltas(probs, per_word, cap, min_loss):
    out = []
    for w, toks in per_word.items():
        p = probs[w]
        if len(p) < 2 or not toks:
            continue
        for i in range(len(p)):
            rest = 1 - p[i]
            q = [0 if j == i else x / rest for j, x in enumerate(p)] if rest > 0 else None
            try:
                d = direct_ll(p, toks) - direct_ll(q, toks) if q else math.inf
            except ValueError:
                d = math.inf
            if len(p) > cap or d < min_loss:
                out.append((d, w, i))
    return out


def replay_prune(lx, evidence, removals, cap, min_loss):
    """Independently re-run the pruning loop and check each removal is the argmin."""
    prons = {w: [p.phones for p in lx.prons(w)] for w in lx}
    probs = {w: [p.prob for p in lx.prons(w)] for w in lx}
    per_word = {}
    for ev in evidence:
        per_word.setdefault(ev.word, []).append(
            [(prons[ev.word].index(ph), s) for ph, s in ev.scores])
    for word, phones, delta, _ in removals:
        cands = oracle_deltas(probs, per_word, cap, min_loss)
        best = min(d for d, _, _ in cands)
        i = prons[word].index(phones)
        mine = [d for d, w, j in cands if w == word and j == i]
        assert mine and (mine[0] == best or mine[0] == pytest.approx(best, rel=1e-12, abs=1e-12))
        assert delta == pytest.approx(mine[0], rel=1e-9, abs=1e-12) or delta == mine[0]
        # apply the removal, renormalize, one EM refresh
        prons[word].pop(i)
        rest = 1 - probs[word].pop(i)
        p = [x / rest for x in probs[word]] if rest > 0 and sum(probs[word]) > 0 else \
            [1 / len(probs[word])] * len(probs[word])
        toks = [[(j if j < i else j - 1, s) for j, s in t if j != i] for t in per_word[word]]
        toks = [t for t in toks if t]
        per_word[word] = toks
        if toks and len(p) > 1:
            soft = [0.0] * len(p)
            for t in toks:
                z = sum(p[j] * math.exp(s) for j, s in t)
                for j, s in t:
                    soft[j] += p[j] * math.exp(s) / z
            p = [c / sum(soft) for c in soft]
        probs[word] = p
    assert not oracle_deltas(probs, per_word, cap, min_loss)


def random_prune_instance(rng, max_prons=3):
    lx = Lexicon()
    for w in range(6):
        for b in range(rng.randint(1, max_prons)):
            lx.add(f"w{w}", [f"p{b}", f"q{w}"])
    ev = []
    for u in range(30):
        w = f"w{rng.randrange(6)}"
        cands = tuple((p.phones, rng.uniform(-6, 0)) for p in lx.prons(w))
        ev.append(TokenEvidence(f"u{u}", w, cands))
    return estimate_pron_probs(lx.uniform(), ev, em_iters=5), ev


def test_prune_zero_probability_first():
    lx = lex_of([("a", "x", 1.0, ORIG), ("a", "y", 0.0, PHONEDEC), ("b", "z", 0.5, ORIG),
                 ("b", "w", 0.5, ORIG)])
    ev = [TokenEvidence("u1", "a", ((("x",), -1.0),)),
          TokenEvidence("u2", "b", ((("z",), -1.0), (("w",), -1.5))),
          TokenEvidence("u3", "b", ((("z",), -1.5), (("w",), -1.0)))]
    out, report = prune_by_likelihood(lx, ev, max_prons_per_word=1, min_loss=0.0)
    assert report.removals[0][:3] == ("a", ("y",), 0.0)
    assert out.prons("a")[0].prob == 1.0


def test_prune_matches_exhaustive_oracle():
    rng = random.Random(42)
    for _ in range(20):
        lx, ev = random_prune_instance(rng)
        cap, min_loss = rng.choice([(1, 0.0), (2, 0.0), (2, 0.5), (3, 1.0)])
        out, report = prune_by_likelihood(lx, ev, max_prons_per_word=cap, min_loss=min_loss)
        replay_prune(lx, ev, report.removals, cap, min_loss)
        for w in out:
            assert len(out.prons(w)) >= 1
            assert math.fsum(p.prob for p in out.prons(w)) == pytest.approx(1.0, abs=1e-9)


def test_prune_two_pron_word_drops_weaker():
    ev = [TokenEvidence(f"u{i}", "three", ((TH, -1.0), (T, -1.0 + 2.0))) for i in range(8)]
    lx = estimate_pron_probs(two_pron(), ev, em_iters=3)
    out, report = prune_by_likelihood(lx, ev, max_prons_per_word=1)
    assert [p.phones for p in out.prons("three")] == [T]
    assert report.removals[0][1] == TH


def test_prune_exempts_words_without_evidence():
    lx = lex_of([("a", "x", 0.5, ORIG), ("a", "y", 0.5, ORIG)])
    out, report = prune_by_likelihood(lx, [], max_prons_per_word=1)
    assert len(out.prons("a")) == 2 and report.removals == []
    assert report.avg_prons == 2.0


def test_prune_report_format():
    ev = [TokenEvidence("u1", "three", ((TH, -1.0), (T, -2.0)))]
    _, report = prune_by_likelihood(two_pron(), ev, max_prons_per_word=1)
    text = report.format()
    assert text.startswith("# word\tpron\tdelta\tstep\n")
    assert "\n# avg_prons_per_word\t1.0000\n" in text


# stats ----------------------------------------------------------------------------

def test_stats_single_pron():
    lx = lex_of([("a", "x", 1, ORIG), ("b", "y", 1, ORIG)])
    st = lexicon_stats(lx, {"a", "b"})
    assert st.avg_prons == 1.0 and st.oov_types == 0.0 and st.oov_tokens == 0.0


def test_stats_oov_rate():
    lx = Lexicon()
    for i in range(97):
        lx.add(f"w{i}", ["x"])
    vocab = {f"w{i}": 1 for i in range(100)}
    vocab["w99"] = 5
    st = lexicon_stats(lx, vocab)
    assert st.oov_types == pytest.approx(0.03)
    assert st.oov_tokens == pytest.approx(7 / 104)


def test_stats_empty():
    with pytest.raises(LexiconError):
        lexicon_stats(Lexicon(), {"a"})


# file formats ---------------------------------------------------------------------

def test_lexicon_text_round_trip():
    text = "# comment\nthree\t0.6\tth_en r_en iy_en\nthree\t0.4\tt_en r_en iy_en\tPHONEDEC\nni\t1\tn_man i_man\n"
    lx = read_lexicon(io.StringIO(text))
    assert lx.prons("three")[1].source == PHONEDEC
    assert lx.phone_inventory()["n_man"] == "man"
    assert read_lexicon(io.StringIO(format_lexicon(lx))).entries == lx.entries


def test_lexicon_bad_line():
    with pytest.raises(FormatError, match=":2:"):
        read_lexicon(io.StringIO("a\t1\tx\nb 1 y\n"))


def test_ctm_parse():
    recs = read_ctm(io.StringIO("u1 A 0.00 0.50 three 0.9\nu1 A 0.5 0.2 la\n"))
    assert recs[0] == CtmRecord("u1", "three", 0.0, 0.5, 0.9)
    assert recs[1].confidence is None
    with pytest.raises(FormatError):
        read_ctm(io.StringIO("u1 A 0.0 0.0 three\n"))


def test_evidence_round_trip():
    lx = two_pron()
    text = "u1\tthree\t0\t-1.5\nu1\tthree\t1\t-0.5\nu1\tthree\t0\t-2.0\nu2\tthree\tt_en r_en iy_en\t-1\n"
    ev = read_evidence(io.StringIO(text), lx)
    assert len(ev) == 3
    assert ev[0].scores == ((TH, -1.5), (T, -0.5))
    assert ev[2].scores == ((T, -1.0),)
    again = read_evidence(io.StringIO(format_evidence(ev, lx)), lx)
    assert again == ev


def test_evidence_errors():
    with pytest.raises(FormatError, match=":1:"):
        read_evidence(io.StringIO("u1\tthree\t7\t-1\n"), two_pron())
    with pytest.raises(FormatError, match=":1:"):
        read_evidence(io.StringIO("u1\tfour\t0\t-1\n"), two_pron())
