"""Pronunciation lexicon and CTM data model plus their text formats.

Lexicon lines are ``word<TAB>probability<TAB>phone1 phone2 ...`` with an
optional fourth ``source`` column (ORIG, G2P or PHONEDEC; ORIG when absent).
Phones carry a language suffix such as ``_en`` or ``_man``.
"""

import math
from dataclasses import dataclass, field

from .errors import FormatError, LexiconError

ORIG = "ORIG"
G2P = "G2P"
PHONEDEC = "PHONEDEC"
SOURCES = (ORIG, G2P, PHONEDEC)
# lower rank wins when the same pronunciation arrives from several sources
SOURCE_PRIORITY = {ORIG: 0, G2P: 1, PHONEDEC: 2}

LANG_TAGS = ("en", "man")


def phone_language(phone):
    """Language tag encoded in a phone's suffix, or None for untagged phones."""
    base, sep, tag = phone.rpartition("_")
    if sep and base and tag in LANG_TAGS:
        return tag
    return None


@dataclass(frozen=True)
class Pron:
    phones: tuple
    prob: float = 1.0
    source: str = ORIG

    def __post_init__(self):
        if not self.phones:
            raise LexiconError("empty pronunciation")
        if self.source not in SOURCES:
            raise LexiconError(f"unknown pronunciation source {self.source!r}")

    @property
    def text(self):
        return " ".join(self.phones)


@dataclass
class Lexicon:
    """Ordered mapping word -> list of distinct pronunciations.

    Entry order is significant: evidence files address pronunciations by their
    index within a word's list.
    """

    entries: dict = field(default_factory=dict)
    # explicit phone -> language tag overrides; otherwise the suffix decides
    inventory: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    def __iter__(self):
        return iter(self.entries)

    def words(self):
        return list(self.entries)

    def prons(self, word):
        return self.entries[word]

    def add(self, word, phones, prob=1.0, source=ORIG):
        phones = tuple(phones)
        prons = self.entries.setdefault(word, [])
        for p in prons:
            if p.phones == phones:
                return
        prons.append(Pron(phones, prob, source))

    def pron_index(self, word, phones):
        phones = tuple(phones)
        for i, p in enumerate(self.entries.get(word, ())):
            if p.phones == phones:
                return i
        return None

    def phone_inventory(self):
        inv = {}
        for prons in self.entries.values():
            for p in prons:
                for ph in p.phones:
                    inv.setdefault(ph, phone_language(ph))
        inv.update(self.inventory)
        return inv

    def num_prons(self):
        return sum(len(v) for v in self.entries.values())

    def copy(self):
        return Lexicon({w: list(v) for w, v in self.entries.items()}, dict(self.inventory))

    def with_probs(self, probs):
        """New lexicon with per-word probability lists replaced."""
        out = self.copy()
        for w, ps in probs.items():
            out.entries[w] = [Pron(p.phones, float(q), p.source)
                              for p, q in zip(out.entries[w], ps)]
        return out

    def normalized(self):
        out = self.copy()
        for w, prons in out.entries.items():
            total = math.fsum(p.prob for p in prons)
            if total > 0:
                out.entries[w] = [Pron(p.phones, p.prob / total, p.source) for p in prons]
            else:
                u = 1.0 / len(prons)
                out.entries[w] = [Pron(p.phones, u, p.source) for p in prons]
        return out

    def uniform(self):
        out = self.copy()
        for w, prons in out.entries.items():
            u = 1.0 / len(prons)
            out.entries[w] = [Pron(p.phones, u, p.source) for p in prons]
        return out

    def filter_language(self, tag):
        """Keep pronunciations whose phones all carry ``tag``."""
        out = Lexicon(inventory=dict(self.inventory))
        inv = self.phone_inventory()
        for w, prons in self.entries.items():
            kept = [p for p in prons if all(inv.get(ph) == tag for ph in p.phones)]
            if kept:
                out.entries[w] = kept
        return out


def format_prob(x):
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return s or "0"


def read_lexicon(lines, path=None):
    lex = Lexicon()
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise FormatError("expected word<TAB>prob<TAB>phones[<TAB>source]", path, lineno)
        word, prob, phones = fields[0].strip(), fields[1].strip(), fields[2].split()
        source = fields[3].strip() if len(fields) == 4 else ORIG
        if not word or not phones:
            raise FormatError("empty word or pronunciation", path, lineno)
        try:
            p = float(prob)
        except ValueError:
            raise FormatError(f"bad probability {prob!r}", path, lineno) from None
        if not 0.0 <= p <= 1.0:
            raise FormatError(f"probability {p} outside [0, 1]", path, lineno)
        if source not in SOURCES:
            raise FormatError(f"unknown source {source!r}", path, lineno)
        lex.add(word, phones, p, source)
    return lex


def load_lexicon(path):
    with open(path, encoding="utf-8") as f:
        return read_lexicon(f, path)


def format_lexicon(lexicon):
    out = []
    for word, prons in lexicon.entries.items():
        for p in prons:
            out.append(f"{word}\t{format_prob(p.prob)}\t{p.text}\t{p.source}\n")
    return "".join(out)


def save_lexicon(lexicon, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_lexicon(lexicon))


@dataclass(frozen=True)
class CtmRecord:
    utt: str
    token: str
    start: float
    duration: float
    confidence: float = None

    @property
    def end(self):
        return self.start + self.duration

    @property
    def midpoint(self):
        return self.start + 0.5 * self.duration


def read_ctm(lines, path=None):
    """Parse ``utt channel start duration token [confidence]`` lines."""
    records = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";;"):
            continue
        f = line.split()
        if len(f) not in (5, 6):
            raise FormatError("expected utt channel start duration token [confidence]",
                              path, lineno)
        try:
            start, dur = float(f[2]), float(f[3])
            conf = float(f[5]) if len(f) == 6 else None
        except ValueError:
            raise FormatError("non-numeric time field", path, lineno) from None
        if dur <= 0:
            raise FormatError(f"non-positive duration {dur}", path, lineno)
        if conf is not None and not 0.0 <= conf <= 1.0:
            raise FormatError(f"confidence {conf} outside [0, 1]", path, lineno)
        records.append(CtmRecord(f[0], f[4], start, dur, conf))
    return records


def load_ctm(path):
    with open(path, encoding="utf-8") as f:
        return read_ctm(f, path)


def format_ctm(records):
    out = []
    for r in records:
        line = f"{r.utt} 1 {r.start:.3f} {r.duration:.3f} {r.token}"
        if r.confidence is not None:
            line += f" {r.confidence:.4f}"
        out.append(line + "\n")
    return "".join(out)
