import io
import math
import random

import pytest

from css_curate import ngram
from css_curate.g2p import (
    G2PError, GraphoneModel, format_model, g2p_nbest, generate_oov_lexicon,
    parse_graphone, read_model, train_graphone_model,
)
from css_curate.lexicon import G2P, Lexicon

LETTERS = "abcdefghijklmnopqrstuvwxyz"


def mapping_lexicon(n_words, seed=0, lo=2, hi=7):
    rng = random.Random(seed)
    words = set()
    while len(words) < n_words:
        words.add("".join(rng.choice(LETTERS) for _ in range(rng.randint(lo, hi))))
    lx = Lexicon()
    for w in sorted(words):
        lx.add(w, [c.upper() + "_en" for c in w])
    return lx


def exhaustive_segmentations(model, word):
    """Best score per pronunciation over every graphone sequence that spells ``word``."""
    inv = [parse_graphone(t) + (t,) for t in model.inventory]
    L = len(word)
    best = {}

    def walk(i, phones, hist, score):
        if len(phones) > 4 * L:
            return
        if i == L:
            s = score + model.lm.logprob(hist, ngram.EOS)
            best[phones] = max(best.get(phones, -math.inf), s)
        for g, p, tok in inv:
            if word.startswith(g, i) and (g or p):
                walk(i + len(g), phones + p, hist + [tok], score + model.lm.logprob(hist, tok))

    walk(0, (), [ngram.BOS], 0.0)
    return best


def toy_model(sentences, order=2):
    lm = ngram.estimate(ngram.count_ngrams(sentences, order))
    inventory = sorted({t for s in sentences for t in s})
    return GraphoneModel(lm, tuple(inventory), 2, 2)


def test_deterministic_mapping_one_best():
    lx = mapping_lexicon(20)
    model = train_graphone_model(lx, order=3, max_g=1, max_p=1, em_iters=10)
    for word in lx:
        hyps = g2p_nbest(model, word, 1)
        assert hyps[0][0] == lx.prons(word)[0].phones
        assert math.exp(hyps[0][1]) > 0


def test_deterministic_mapping_single_candidate():
    lx = Lexicon()
    for w in ["ab", "ba", "aab", "bba", "abab"]:
        lx.add(w, [c.upper() + "_en" for c in w])
    model = train_graphone_model(lx, max_g=1, max_p=1)
    assert [h[0] for h in g2p_nbest(model, "ab", 5)] == [("A_en", "B_en")]


def test_em_monotone_and_longer_training_helps():
    lx = mapping_lexicon(15, seed=3)
    m1 = train_graphone_model(lx, em_iters=1)
    m10 = train_graphone_model(lx, em_iters=10)
    assert m10.log_likelihoods[-1] >= m1.log_likelihoods[-1] - 1e-9
    ll = m10.log_likelihoods
    assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))


def test_empty_lexicon_rejected():
    with pytest.raises(G2PError):
        train_graphone_model(Lexicon())


def test_empty_word_rejected():
    model = toy_model([["a}A", "b}B"]])
    with pytest.raises(G2PError):
        g2p_nbest(model, "", 1)


def test_unseen_letters_listed():
    model = toy_model([["a}A", "b}B"]])
    with pytest.raises(G2PError, match="x z"):
        g2p_nbest(model, "axbz", 1)


def test_ambiguous_toy_model_matches_enumeration():
    model = toy_model([["a}A", "b}B"], ["ab}X"], ["a}A"]])
    hyps = g2p_nbest(model, "ab", 5)
    assert len(hyps) == 2
    assert hyps[0][1] >= hyps[1][1]
    oracle = exhaustive_segmentations(model, "ab")
    assert set(oracle) == {h[0] for h in hyps}
    for phones, lp in hyps:
        assert lp == pytest.approx(oracle[phones], abs=1e-9)


def noisy_lexicon(seed=5):
    rng = random.Random(seed)
    lx = Lexicon()
    for _ in range(25):
        w = "".join(rng.choice("abc") for _ in range(rng.randint(1, 4)))
        phones = []
        for ch in w:
            opts = {"a": [["A"], ["A"]], "b": [["B", "E"], ["B"]], "c": [["K"], []]}[ch]
            phones += opts[rng.random() < 0.3]
        if phones:
            lx.add(w, phones)
    return lx


def check_against_enumeration(model, word, n=6):
    oracle = exhaustive_segmentations(model, word)
    ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))
    hyps = g2p_nbest(model, word, n)
    assert len(hyps) == min(n, len(oracle))
    assert [lp for _, lp in hyps] == pytest.approx([lp for _, lp in ranked[:n]], abs=1e-9)
    for phones, lp in hyps:
        assert lp == pytest.approx(oracle[phones], abs=1e-9)


@pytest.mark.parametrize("word", ["a", "b", "ab", "ca", "bb"])
def test_decoding_matches_enumeration_short_words(word):
    model = train_graphone_model(noisy_lexicon(), order=2, max_g=2, max_p=2, em_iters=5)
    check_against_enumeration(model, word)


@pytest.mark.parametrize("word", ["cab", "abca", "bbc", "acab"])
def test_decoding_matches_enumeration_without_insertions(word):
    # insertion graphones make the segmentation space explode past 2 letters,
    # so the 4-letter check runs on the same model with them withheld
    full = train_graphone_model(noisy_lexicon(), order=3, max_g=2, max_p=2, em_iters=5)
    inv = tuple(t for t in full.inventory if not t.startswith("}"))
    check_against_enumeration(GraphoneModel(full.lm, inv, 2, 2), word)


def test_nbest_sorted_and_distinct():
    lx = mapping_lexicon(40, seed=9)
    model = train_graphone_model(lx, max_g=2, max_p=2, em_iters=3)
    hyps = g2p_nbest(model, "hello", 5)
    scores = [lp for _, lp in hyps]
    assert scores == sorted(scores, reverse=True)
    assert len({p for p, _ in hyps}) == len(hyps)


def test_generate_oov_lexicon():
    lx = mapping_lexicon(20, seed=1)
    model = train_graphone_model(lx, max_g=1, max_p=1)
    l1, skipped = generate_oov_lexicon(model, list(lx), lx, n=1)
    assert len(l1) == 0 and skipped == []
    l1, skipped = generate_oov_lexicon(model, list(lx)[:3] + ["abc"], lx, n=1)
    if "abc" not in lx:
        assert l1.words() == ["abc"]
        p = l1.prons("abc")[0]
        assert p.phones == ("A_en", "B_en", "C_en") and p.source == G2P and p.prob == 1.0
    assert not set(l1) & set(lx)


def test_generate_oov_skips_unseen_letters():
    model = toy_model([["a}A", "b}B"]])
    l1, skipped = generate_oov_lexicon(model, ["ab", "q"], Lexicon(), n=2)
    assert l1.words() == ["ab"]
    assert [w for w, _ in skipped] == ["q"]
    assert math.fsum(p.prob for p in l1.prons("ab")) == pytest.approx(1.0)


def test_case_folding():
    lx = mapping_lexicon(20, seed=2)
    model = train_graphone_model(lx, max_g=1, max_p=1)
    w = lx.words()[0]
    assert g2p_nbest(model, w.upper(), 1)[0][0] == lx.prons(w)[0].phones


def test_language_filter():
    lx = Lexicon()
    lx.add("ab", ["A_en", "B_en"])
    lx.add("ni", ["n_man", "i_man"])
    model = train_graphone_model(lx, max_g=1, max_p=1, language="man")
    assert model.letters == {"n", "i"}


def test_model_round_trip():
    lx = mapping_lexicon(10, seed=4)
    model = train_graphone_model(lx, em_iters=3)
    text = format_model(model)
    back = read_model(io.StringIO(text).readlines())
    assert back.inventory == model.inventory
    assert (back.max_g, back.max_p) == (model.max_g, model.max_p)
    for w in list(lx)[:5]:
        a, b = g2p_nbest(model, w, 3), g2p_nbest(back, w, 3)
        assert [p for p, _ in a] == [p for p, _ in b]
        assert [s for _, s in a] == pytest.approx([s for _, s in b], abs=1e-6)
