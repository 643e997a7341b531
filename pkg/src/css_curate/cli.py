"""css-curate command line.

Exit status: 0 on success, 1 on data errors, 2 on usage errors.
"""

import argparse
import io
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from functools import partial

from . import __version__
from . import g2p, lexlearn, ngram, rescore, semisup
from . import lattice as latmod
from . import lexicon as lexmod
from .errors import CurateError

log = logging.getLogger("css_curate")


class UsageError(Exception):
    pass


# io helpers -------------------------------------------------------------------

def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.readlines()


def write_outputs(outputs):
    """Write every (path, text) pair; files appear only once all content exists.

    ``None`` or ``-`` means stdout.
    """
    for path, text in outputs:
        if path in (None, "-"):
            sys.stdout.write(text)
            continue
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def run_jobs(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def load_sorted_lattices(path):
    lats = latmod.load_lattices(path)
    seen = set()
    for lat in lats:
        if lat.utt in seen:
            raise CurateError(f"{path}: duplicate utterance id {lat.utt!r}")
        seen.add(lat.utt)
    return sorted(lats, key=lambda lat: lat.utt)


def load_vocab(args):
    """Word counts from --transcripts (first field is the id) or --wordlist."""
    counts = {}
    if getattr(args, "transcripts", None):
        for words in semisup.read_transcripts(read_lines(args.transcripts), args.transcripts).values():
            for w in words:
                counts[w] = counts.get(w, 0) + 1
    if getattr(args, "wordlist", None):
        for line in read_lines(args.wordlist):
            for w in line.split():
                counts[w] = counts.get(w, 0) + 1
    return counts


def parse_lm(spec):
    kind, sep, path = spec.partition(":")
    if not sep or kind != "arpa" or not path:
        raise UsageError(f"--lm expects arpa:<path>, got {spec!r}")
    return path


def num(x):
    return f"{x:.6f}"


# subcommands ------------------------------------------------------------------

def cmd_g2p_train(args):
    l0 = lexmod.load_lexicon(args.lexicon)
    model = g2p.train_graphone_model(
        l0, order=args.order, max_g=args.max_g, max_p=args.max_p, em_iters=args.em_iters,
        min_count=args.min_count, language=args.language, smoothing=args.smoothing)
    return [(args.out, g2p.format_model(model))]


def _g2p_apply(model, vocab, base, n):
    l1, skipped = g2p.generate_oov_lexicon(model, sorted(vocab), base, n)
    for word, why in skipped:
        log.warning("g2p skipped %s: %s", word, why)
    report = "# word\treason\n" + "".join(f"{w}\t{r}\n" for w, r in skipped)
    return l1, report


def cmd_g2p_apply(args):
    model = g2p.load_model(args.model)
    base = lexmod.load_lexicon(args.lexicon) if args.lexicon else lexmod.Lexicon()
    l1, report = _g2p_apply(model, load_vocab(args), base, args.nbest)
    outs = [(args.out, lexmod.format_lexicon(l1))]
    if args.skipped:
        outs.append((args.skipped, report))
    return outs


def cmd_lex_harvest(args):
    lex = lexlearn.harvest_candidates(
        lexmod.load_ctm(args.word_ctm), lexmod.load_ctm(args.phone_ctm),
        min_count=args.min_count, skip_phones=split_list(args.skip_phones))
    return [(args.out, lexmod.format_lexicon(lex))]


def cmd_lex_merge(args):
    parts = [lexmod.load_lexicon(p) if p else lexmod.Lexicon() for p in (args.l0, args.l1, args.l2)]
    return [(args.out, lexmod.format_lexicon(lexlearn.merge_lexicons(*parts)))]


def format_trace(trace):
    return "# iteration\tlog-likelihood\n" + "".join(f"{i}\t{num(v)}\n" for i, v in enumerate(trace))


def cmd_lex_estimate(args):
    lex = lexmod.load_lexicon(args.lexicon)
    ev = lexlearn.load_evidence(args.evidence, lex)
    trace = []
    out = lexlearn.estimate_pron_probs(lex, ev, args.em_iters, trace)
    outs = [(args.out, lexmod.format_lexicon(out))]
    if args.trace:
        outs.append((args.trace, format_trace(trace)))
    return outs


def cmd_lex_prune(args):
    lex = lexmod.load_lexicon(args.lexicon)
    ev = lexlearn.load_evidence(args.evidence, lex)
    out, report = lexlearn.prune_by_likelihood(lex, ev, args.max_prons, args.min_loss,
                                               refresh=not args.no_refresh)
    outs = [(args.out, lexmod.format_lexicon(out))]
    if args.report:
        outs.append((args.report, report.format()))
    return outs


def format_stats(st):
    rows = [("avg_prons_per_word", f"{st.avg_prons:.4f}"), ("words", str(st.n_words)),
            ("prons", str(st.n_prons)), ("oov_rate_types", f"{st.oov_types * 100:.4f}"),
            ("oov_rate_tokens", f"{st.oov_tokens * 100:.4f}")]
    return "# statistic\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in rows)


def cmd_lex_stats(args):
    lex = lexmod.load_lexicon(args.lexicon)
    return [(args.out, format_stats(lexlearn.lexicon_stats(lex, load_vocab(args))))]


def reparse(text, reader):
    return reader(io.StringIO(text).readlines())


def cmd_lex_learn(args):
    """Original lexicon in, learned lexicon out, with every intermediate kept."""
    j = partial(os.path.join, args.out_dir)
    l0 = lexmod.load_lexicon(args.lexicon)
    vocab = load_vocab(args)
    word_ctm, phone_ctm = lexmod.load_ctm(args.word_ctm), lexmod.load_ctm(args.phone_ctm)
    evidence_lines = read_lines(args.evidence)

    # G2P on the original lexicon, pronunciations for the OOV words
    model = g2p.train_graphone_model(
        l0, order=args.order, max_g=args.max_g, max_p=args.max_p, em_iters=args.em_iters,
        min_count=args.g2p_min_count, language=args.language, smoothing=args.smoothing)
    model_text = g2p.format_model(model)
    model = reparse(model_text, g2p.read_model)
    l1, skipped_text = _g2p_apply(model, vocab, l0, args.nbest)
    l1_text = lexmod.format_lexicon(l1)

    # adapted pronunciations from the phonetic decode
    l2 = lexlearn.harvest_candidates(word_ctm, phone_ctm, min_count=args.min_count,
                                     skip_phones=split_list(args.skip_phones))
    l2_text = lexmod.format_lexicon(l2)

    merged = lexlearn.merge_lexicons(l0, reparse(l1_text, lexmod.read_lexicon),
                                     reparse(l2_text, lexmod.read_lexicon))
    merged_text = lexmod.format_lexicon(merged)
    merged = reparse(merged_text, lexmod.read_lexicon)

    ev = lexlearn.read_evidence(evidence_lines, merged, args.evidence)
    trace = []
    est = lexlearn.estimate_pron_probs(merged, ev, args.lex_em_iters, trace)
    est_text = lexmod.format_lexicon(est)
    est = reparse(est_text, lexmod.read_lexicon)
    ev = lexlearn.read_evidence(evidence_lines, est, args.evidence)
    learned, report = lexlearn.prune_by_likelihood(est, ev, args.max_prons, args.min_loss,
                                                   refresh=not args.no_refresh)
    learned_text = lexmod.format_lexicon(learned)
    outs = [
        (j("g2p.model"), model_text),
        (j("L1.lex"), l1_text),
        (j("g2p_skipped.tsv"), skipped_text),
        (j("L2.lex"), l2_text),
        (j("merged.lex"), merged_text),
        (j("estimated.lex"), est_text),
        (j("em_trace.tsv"), format_trace(trace)),
        (j("prune_report.tsv"), report.format()),
        (j("learned.lex"), learned_text),
    ]
    if vocab:
        outs.append((j("stats.tsv"), format_stats(lexlearn.lexicon_stats(
            reparse(learned_text, lexmod.read_lexicon), vocab))))
    return outs


def cmd_wmer_score(args):
    refs = semisup.read_transcripts(read_lines(args.ref), args.ref)
    hyps = semisup.read_transcripts(read_lines(args.hyp), args.hyp)
    durs = semisup.read_durations(read_lines(args.durations), args.durations) if args.durations else None
    scores, agg = semisup.score_corpus(refs, hyps, durs)
    text = semisup.format_scores(scores)
    text += f"# wmer_token_weighted\t{num(agg.token_weighted)}\n"
    text += f"# wmer_duration_weighted\t{num(agg.duration_weighted)}\n"
    log.info("corpus WMER %.4f (token weighted), %.4f (duration weighted)",
             agg.token_weighted, agg.duration_weighted)
    return [(args.out, text)]


def cmd_report(args):
    scores = semisup.read_scores(read_lines(args.scores), args.scores)
    rows = semisup.cumulative_report(scores, split_list(args.thresholds), args.total_hours)
    outs = [(args.out, semisup.format_report(rows))]
    if args.plot:
        from .plots import plot_cumulative
        # the figure is rendered last, after the table is known to be valid
        outs.append(("plot", (plot_cumulative, rows, args.plot)))
    return outs


def cmd_partition(args):
    scores = semisup.read_scores(read_lines(args.scores), args.scores)
    part = semisup.partition_by_wmer(scores, args.threshold)
    outs = [(args.out, semisup.format_partition(part))]
    if args.kept:
        outs.append((args.kept, "".join(u + "\n" for u in semisup.removal_filter(part))))
    return outs


def _supervise(lexicon, kind, lm_scale, beam, lat):
    return semisup.build_supervision(lat, lexicon, kind, lm_scale, beam)


def _supervise_transcript(lexicon, lm_scale, item):
    utt, words = item
    return semisup.transcript_supervision(utt, words, lexicon, lm_scale)


def cmd_supervision(args):
    lex = lexmod.load_lexicon(args.lexicon)
    lats = load_sorted_lattices(args.lattices)
    part = None
    if args.partition:
        part = semisup.read_partition(read_lines(args.partition), args.partition)
        lats = [lat for lat in lats if lat.utt in part.unsupervised]
    sups = run_jobs(partial(_supervise, lex, args.kind, args.lm_scale, args.beam), lats, args.jobs)
    if args.transcripts:
        refs = semisup.read_transcripts(read_lines(args.transcripts), args.transcripts)
        wanted = part.supervised if part is not None else set(refs) - {s.utt for s in sups}
        missing = sorted(set(wanted) - set(refs))
        if missing:
            raise CurateError("no transcript for supervised utterances: " + " ".join(missing))
        items = [(u, refs[u]) for u in sorted(wanted)]
        sups += run_jobs(partial(_supervise_transcript, lex, args.lm_scale), items, args.jobs)
    sups.sort(key=lambda s: s.utt)
    manifest, lat_text = semisup.format_manifest_and_lattices(sups)
    manifest = f"# lm_scale={args.lm_scale}\n" + manifest
    return [(args.out_lattices, lat_text), (args.out, manifest)]


def _bestpath(lm, ac, lat):
    p = latmod.best_path(lat, lm, ac)
    return f"{lat.utt}\t{num(p.cost(lm, ac))}\t{' '.join(p.labels)}\n"


def cmd_lat_bestpath(args):
    lats = load_sorted_lattices(args.lattices)
    rows = run_jobs(partial(_bestpath, args.lm_scale, args.acoustic_scale), lats, args.jobs)
    return [(args.out, "# utterance-id\tcost\twords\n" + "".join(rows))]


def _nbest(n, lm, ac, lat):
    return "".join(f"{lat.utt}\t{k}\t{num(p.cost(lm, ac))}\t{' '.join(p.labels)}\n"
                   for k, p in enumerate(latmod.nbest(lat, n, lm, ac), 1))


def cmd_lat_nbest(args):
    lats = load_sorted_lattices(args.lattices)
    rows = run_jobs(partial(_nbest, args.n, args.lm_scale, args.acoustic_scale), lats, args.jobs)
    return [(args.out, "# utterance-id\trank\tcost\twords\n" + "".join(rows))]


def _prune(beam, lm, ac, lat):
    return latmod.format_lattice(latmod.prune_posterior(lat, beam, lm, ac))


def cmd_lat_prune(args):
    lats = load_sorted_lattices(args.lattices)
    blocks = run_jobs(partial(_prune, args.beam, args.lm_scale, args.acoustic_scale), lats, args.jobs)
    return [(args.out, "".join(blocks))]


def _posterior(lm, ac, lat):
    fb = latmod.forward_backward(lat, lm, ac)
    rows = [f"{lat.utt}\t{i}\t{a.src}\t{a.dst}\t{a.label}\t{num(p)}\n"
            for i, (a, p) in enumerate(zip(lat.arcs, fb.posteriors))]
    summary = f"{lat.utt}\t{num(fb.total)}\t{num(semisup.best_path_posterior(lat, lm))}\n" \
        if ac == 1.0 else f"{lat.utt}\t{num(fb.total)}\tNA\n"
    return "".join(rows), summary


def cmd_lat_posterior(args):
    lats = load_sorted_lattices(args.lattices)
    res = run_jobs(partial(_posterior, args.lm_scale, args.acoustic_scale), lats, args.jobs)
    outs = [(args.out, "# utterance-id\tarc\tsrc\tdst\tlabel\tposterior\n"
             + "".join(r for r, _ in res))]
    if args.summary:
        outs.append((args.summary, "# utterance-id\ttotal-logprob\tbest-path-posterior\n"
                     + "".join(s for _, s in res)))
    return outs


def _w2p(lexicon, lat):
    return latmod.format_lattice(latmod.word_to_phone(lat, lexicon))


def cmd_lat_w2p(args):
    lex = lexmod.load_lexicon(args.lexicon)
    lats = load_sorted_lattices(args.lattices)
    return [(args.out, "".join(run_jobs(partial(_w2p, lex), lats, args.jobs)))]


def read_sentences(args):
    lines = read_lines(args.corpus)
    if args.with_ids:
        return sorted(semisup.read_transcripts(lines, args.corpus).items())
    return [(str(k), s) for k, s in enumerate(ngram.read_corpus(lines), 1)]


def cmd_ngram_train(args):
    corpus = [s for _, s in read_sentences(args)]
    if not corpus:
        raise CurateError(f"{args.corpus}: empty corpus")
    model = ngram.train(corpus, args.order, args.smoothing, args.discount)
    return [(args.out, ngram.format_arpa(model))]


def cmd_ngram_score(args):
    model = ngram.load_arpa(args.lm)
    rows, total, n = [], 0.0, 0
    for sid, sent in read_sentences(args):
        lp = ngram.score_sequence(model, sent)
        rows.append(f"{sid}\t{lp:.6f}\t{len(sent) + 1}\n")
        total += lp
        n += len(sent) + 1
    ppl = 10 ** (-total / n) if n else float("nan")
    text = "# sentence\tlog10prob\ttokens\n" + "".join(rows)
    text += f"# total_log10prob\t{total:.6f}\n# perplexity\t{ppl:.6f}\n"
    return [(args.out, text)]


def rescore_config(args):
    return rescore.RescoreConfig(args.mu, args.acoustic_scale, args.beam,
                                 args.max_states if args.max_states > 0 else None)


def _rescore_nbest(scorer, config, n, lat):
    return [(lat.utt, h.rank, h.combined, h.labels)
            for h in rescore.nbest_rescore(lat, scorer, config, n)]


def cmd_rescore_nbest(args):
    scorer = rescore.NgramScorer(ngram.load_arpa(parse_lm(args.lm)))
    lats = load_sorted_lattices(args.lattices)
    res = run_jobs(partial(_rescore_nbest, scorer, rescore_config(args), args.n), lats, args.jobs)
    return [(args.out, rescore.format_hypotheses(r for rows in res for r in rows))]


def _rescore_lattice(scorer, config, lat):
    res = rescore.lattice_rescore(lat, scorer, config)
    return (lat.utt, 1, res.cost, res.best.labels), latmod.format_lattice(res.lattice), res.beamed


def cmd_rescore_lattice(args):
    scorer = rescore.NgramScorer(ngram.load_arpa(parse_lm(args.lm)))
    lats = load_sorted_lattices(args.lattices)
    res = run_jobs(partial(_rescore_lattice, scorer, rescore_config(args)), lats, args.jobs)
    beamed = [r[0][0] for r in res if r[2]]
    if beamed:
        log.warning("state cap reached for %d lattices: %s", len(beamed), " ".join(beamed))
    outs = [(args.out, rescore.format_hypotheses(r[0] for r in res))]
    if args.out_lattices:
        outs.append((args.out_lattices, "".join(r[1] for r in res)))
    return outs


# argument parsing -------------------------------------------------------------

def split_list(text):
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t for t in text.replace(",", " ").split() if t]


def float_arg(text):
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def int_arg(text):
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def common(p):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--jobs", type=int_arg, default=1, help="worker processes (default 1)")


def opt(p, flag, *, inp=False, req=False, **kw):
    # inp: path must exist; req: must come from a flag or the config file
    a = p.add_argument(flag, **kw)
    a.is_input = inp
    a.is_required = req
    return a


def lex_knobs(p):
    opt(p, "--max-prons", type=int_arg, default=4, help="pronunciation cap per word (default 4)")
    opt(p, "--min-loss", type=float_arg, default=0.0,
        help="also prune removals losing less than this log-likelihood (default 0)")
    opt(p, "--no-refresh", action="store_true", help="skip the EM refresh after each removal")


def g2p_knobs(p, min_count_flag="--min-count"):
    opt(p, "--order", type=int_arg, default=3, help="graphone n-gram order (default 3)")
    opt(p, "--max-g", type=int_arg, default=2, help="letters per graphone (default 2)")
    opt(p, "--max-p", type=int_arg, default=2, help="phones per graphone (default 2)")
    opt(p, "--em-iters", type=int_arg, default=10, help="alignment EM iterations (default 10)")
    opt(p, min_count_flag, type=float_arg, default=1e-6,
        help="drop graphones with smaller expected count (default 1e-6)")
    opt(p, "--language", choices=lexmod.LANG_TAGS, help="train only on entries of this language")
    opt(p, "--smoothing", choices=(ngram.WITTEN_BELL, ngram.ABSOLUTE), default=ngram.WITTEN_BELL)


def lattice_knobs(p, beam=False):
    opt(p, "--lattices", inp=True, req=True, help="lattices in the text block format")
    opt(p, "--lm-scale", type=float_arg, default=1.0, help="graph cost scale (default 1.0)")
    opt(p, "--acoustic-scale", type=float_arg, default=1.0, help="acoustic cost scale (default 1.0)")
    if beam:
        opt(p, "--beam", type=float_arg, default=math.inf, help="posterior pruning beam (default inf)")


def rescore_knobs(p):
    opt(p, "--lattices", inp=True, req=True)
    opt(p, "--lm", req=True, help="scorer, arpa:<path>")
    opt(p, "--mu", type=float_arg, default=0.5, help="weight of the new LM (default 0.5)")
    opt(p, "--acoustic-scale", type=float_arg, default=1.0)
    opt(p, "--beam", type=float_arg, default=10.0, help="state expansion beam (default 10)")
    opt(p, "--max-states", type=int_arg, default=64,
        help="expanded states per node, 0 for no cap (default 64)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="css-curate",
        description="Lexicon learning and transcription curation for code-switching ASR.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        common(p)
        p.set_defaults(func=fn)
        return p

    p = add("g2p-train", cmd_g2p_train, "train a graphone G2P model from a lexicon")
    opt(p, "--lexicon", inp=True, req=True)
    g2p_knobs(p)
    opt(p, "--out", req=True, help="model file")

    p = add("g2p-apply", cmd_g2p_apply, "generate pronunciations for OOV words")
    opt(p, "--model", inp=True, req=True)
    opt(p, "--wordlist", inp=True, help="whitespace separated words")
    opt(p, "--transcripts", inp=True, help="'utt word ...' lines; words become the word list")
    opt(p, "--lexicon", inp=True, help="words already here are skipped")
    opt(p, "--nbest", type=int_arg, default=1, help="pronunciations per word (default 1)")
    opt(p, "--out", help="lexicon (default stdout)")
    opt(p, "--skipped", help="TSV of words that could not be decoded")

    p = add("lex-harvest", cmd_lex_harvest, "harvest pronunciations from word and phone CTMs")
    opt(p, "--word-ctm", inp=True, req=True)
    opt(p, "--phone-ctm", inp=True, req=True)
    opt(p, "--min-count", type=int_arg, default=2, help="minimum occurrences (default 2)")
    opt(p, "--skip-phones", help="comma separated phones to ignore, e.g. silence")
    opt(p, "--out")

    p = add("lex-merge", cmd_lex_merge, "merge original, G2P and harvested lexicons")
    opt(p, "--l0", inp=True, req=True)
    opt(p, "--l1", inp=True)
    opt(p, "--l2", inp=True)
    opt(p, "--out")

    p = add("lex-estimate", cmd_lex_estimate, "EM estimate of pronunciation probabilities")
    opt(p, "--lexicon", inp=True, req=True)
    opt(p, "--evidence", inp=True, req=True)
    opt(p, "--em-iters", type=int_arg, default=10)
    opt(p, "--out")
    opt(p, "--trace", help="TSV of log-likelihood per iteration")

    p = add("lex-prune", cmd_lex_prune, "greedy likelihood-reduction pruning")
    opt(p, "--lexicon", inp=True, req=True)
    opt(p, "--evidence", inp=True, req=True)
    lex_knobs(p)
    opt(p, "--out")
    opt(p, "--report", help="TSV of removals")

    p = add("lex-stats", cmd_lex_stats, "pronunciations per word and OOV rates")
    opt(p, "--lexicon", inp=True, req=True)
    opt(p, "--transcripts", inp=True)
    opt(p, "--wordlist", inp=True)
    opt(p, "--out")

    p = add("lex-learn", cmd_lex_learn, "whole lexicon-learning pipeline into one directory")
    opt(p, "--lexicon", inp=True, req=True, help="original lexicon")
    opt(p, "--transcripts", inp=True, help="training transcripts (vocabulary for G2P)")
    opt(p, "--wordlist", inp=True)
    opt(p, "--word-ctm", inp=True, req=True)
    opt(p, "--phone-ctm", inp=True, req=True)
    opt(p, "--evidence", inp=True, req=True)
    opt(p, "--out-dir", req=True)
    g2p_knobs(p, "--g2p-min-count")
    opt(p, "--nbest", type=int_arg, default=1)
    opt(p, "--min-count", type=int_arg, default=2, help="harvest threshold (default 2)")
    opt(p, "--skip-phones")
    opt(p, "--lex-em-iters", type=int_arg, default=10, help="pronunciation EM iterations")
    lex_knobs(p)

    p = add("wmer-score", cmd_wmer_score, "per-utterance WMER of transcripts against decodes")
    opt(p, "--ref", inp=True, req=True, help="human transcripts")
    opt(p, "--hyp", inp=True, req=True, help="decoded hypotheses")
    opt(p, "--durations", inp=True, help="'utt seconds' lines")
    opt(p, "--out")

    p = add("report", cmd_report, "cumulative duration above WMER thresholds")
    opt(p, "--scores", inp=True, req=True)
    opt(p, "--total-hours", type=float_arg, req=True)
    opt(p, "--thresholds", default="0,20,30,40", help="comma separated percents")
    opt(p, "--out")
    opt(p, "--plot", help="also draw the table to this image file")

    p = add("partition", cmd_partition, "split utterances at a WMER threshold")
    opt(p, "--scores", inp=True, req=True)
    opt(p, "--threshold", default="30", help="percent; above it is unsupervised (default 30)")
    opt(p, "--out")
    opt(p, "--kept", help="ids kept by the removal baseline")

    p = add("supervision", cmd_supervision, "phone-level supervision graphs with confidences")
    opt(p, "--lattices", inp=True, req=True)
    opt(p, "--lexicon", inp=True, req=True)
    opt(p, "--kind", choices=(semisup.BEST_PATH, semisup.PRUNED_LATTICE),
        default=semisup.PRUNED_LATTICE)
    opt(p, "--lm-scale", type=float_arg, default=1.0)
    opt(p, "--beam", type=float_arg, default=math.inf)
    opt(p, "--partition", inp=True, help="only unsupervised utterances use lattices")
    opt(p, "--transcripts", inp=True, help="build transcript supervision for the rest")
    opt(p, "--out-lattices", req=True)
    opt(p, "--out", help="manifest (default stdout)")

    p = add("lat-bestpath", cmd_lat_bestpath, "best path of each lattice")
    lattice_knobs(p)
    opt(p, "--out")

    p = add("lat-nbest", cmd_lat_nbest, "n best distinct word sequences")
    lattice_knobs(p)
    opt(p, "--n", type=int_arg, default=10)
    opt(p, "--out")

    p = add("lat-prune", cmd_lat_prune, "posterior beam pruning")
    lattice_knobs(p, beam=True)
    opt(p, "--out")

    p = add("lat-posterior", cmd_lat_posterior, "arc posteriors")
    lattice_knobs(p)
    opt(p, "--out")
    opt(p, "--summary", help="TSV with total log-likelihood and best-path posterior")

    p = add("lat-w2p", cmd_lat_w2p, "expand word lattices to phone lattices")
    opt(p, "--lattices", inp=True, req=True)
    opt(p, "--lexicon", inp=True, req=True)
    opt(p, "--out")

    p = add("ngram-train", cmd_ngram_train, "train a backoff n-gram model, written as ARPA")
    opt(p, "--corpus", inp=True, req=True)
    opt(p, "--with-ids", action="store_true", help="first field of each line is an utterance id")
    opt(p, "--order", type=int_arg, default=3)
    opt(p, "--smoothing", choices=(ngram.WITTEN_BELL, ngram.ABSOLUTE), default=ngram.WITTEN_BELL)
    opt(p, "--discount", type=float_arg, default=0.5)
    opt(p, "--out")

    p = add("ngram-score", cmd_ngram_score, "log10 probability of each sentence")
    opt(p, "--lm", inp=True, req=True, help="ARPA file")
    opt(p, "--corpus", inp=True, req=True)
    opt(p, "--with-ids", action="store_true")
    opt(p, "--out")

    p = add("rescore-nbest", cmd_rescore_nbest, "rescore n-best lists from lattices")
    rescore_knobs(p)
    opt(p, "--n", type=int_arg, default=100)
    opt(p, "--out")

    p = add("rescore-lattice", cmd_rescore_lattice, "rescore lattices by state expansion")
    rescore_knobs(p)
    opt(p, "--out")
    opt(p, "--out-lattices")
    return parser, sub


def read_config(path):
    out = {}
    for lineno, raw in enumerate(read_lines(path), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def apply_config(subparser, path):
    cfg = read_config(path)
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, val in cfg.items():
        a = actions.get(key)
        if a is None or key in ("config", "help", "func"):
            raise UsageError(f"{path}: unknown setting {key!r}")
        if isinstance(a, argparse._StoreTrueAction):
            defaults[key] = val.lower() in ("1", "true", "yes", "on")
            continue
        try:
            v = a.type(val) if a.type else val
        except argparse.ArgumentTypeError as e:
            raise UsageError(f"{path}: {key}: {e}") from None
        if a.choices and v not in a.choices:
            raise UsageError(f"{path}: {key} must be one of {', '.join(map(str, a.choices))}")
        defaults[key] = v
    subparser.set_defaults(**defaults)


def validate(subparser, args):
    for a in subparser._actions:
        v = getattr(args, a.dest, None)
        if getattr(a, "is_required", False) and v is None:
            raise UsageError(f"{a.option_strings[0]} is required")
        if getattr(a, "is_input", False) and v is not None and not os.path.isfile(v):
            raise UsageError(f"{a.option_strings[0]}: no such file: {v}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.command == "lex-learn" and not (args.transcripts or args.wordlist):
        log.info("no vocabulary given; G2P generates nothing")
    if args.command == "g2p-apply" and not (args.transcripts or args.wordlist):
        raise UsageError("give --wordlist or --transcripts")
    if args.command.startswith("rescore"):
        parse_lm(args.lm)
        if not os.path.isfile(parse_lm(args.lm)):
            raise UsageError(f"--lm: no such file: {parse_lm(args.lm)}")
    if args.command == "report" and args.total_hours <= 0:
        raise UsageError("--total-hours must be positive")
    if getattr(args, "out_dir", None) and \
            not os.path.isdir(os.path.dirname(os.path.abspath(args.out_dir))):
        raise UsageError(f"parent directory does not exist for {args.out_dir}")
    for name in ("out", "out_lattices", "report", "trace", "skipped", "kept", "summary", "plot"):
        v = getattr(args, name, None)
        if v not in (None, "-") and not os.path.isdir(os.path.dirname(os.path.abspath(v))):
            raise UsageError(f"output directory does not exist for {v}")


def setup_logging():
    level = os.environ.get("CSS_CURATE_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv=None):
    setup_logging()
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    subparser = sub.choices[args.command]
    try:
        if args.config:
            if not os.path.isfile(args.config):
                raise UsageError(f"--config: no such file: {args.config}")
            apply_config(subparser, args.config)
            args = parser.parse_args(argv)
        validate(subparser, args)
    except UsageError as e:
        subparser.print_usage(sys.stderr)
        print(f"{subparser.prog}: error: {e}", file=sys.stderr)
        return 2
    try:
        outputs = args.func(args)
        plots = [o[1] for o in outputs if o[0] == "plot"]
        if getattr(args, "out_dir", None):
            os.makedirs(args.out_dir, exist_ok=True)
        write_outputs([o for o in outputs if o[0] != "plot"])
        for fn, *rest in plots:
            fn(*rest)
    except UsageError as e:
        print(f"{subparser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (CurateError, OSError, UnicodeDecodeError) as e:
        print(f"{subparser.prog}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
