"""Vocabularies, a minimal BPE segmenter and n-gram frequency tables."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .treebank import Action, ActionSequence, Kind, terminal

PAD = "<pad>"
UNK = "<unk>"
BOS = "<s>"

VOCAB_VERSION = "tgnae-vocab 1"
NGRAM_VERSION = "tgnae-ngram 1"


class EmptyCorpus(ValueError):
    pass


class InvalidOrder(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Bijection between symbols and dense ids.

    Symbols are ``(kind, text)`` pairs so terminals never collide with
    nonterminal labels. ``kind`` is one of ``special``, ``terminal``, ``open``,
    ``close``.
    """

    symbols: list[tuple[str, str]]
    mode: str = "word"
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ValueError("duplicate vocabulary symbols")
        self._ranks = {m: r for r, m in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return self._index[("special", PAD)]

    @property
    def unk_id(self) -> int:
        return self._index[("special", UNK)]

    def id(self, kind: str, text: str) -> int:
        return self._index.get((kind, text), self.unk_id)

    def __contains__(self, sym) -> bool:
        return sym in self._index

    def action_id(self, a: Action) -> int:
        return self.id(a.kind.value, a.label)

    def symbol(self, i: int) -> tuple[str, str]:
        return self.symbols[i]

    def segment(self, word: str) -> list[str]:
        """Split ``word`` into the pieces :meth:`encode_word` would emit."""
        if self.mode == "word":
            return [word]
        return _apply_merges(list(word), self._ranks)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{VOCAB_VERSION}\nmode\t{self.mode}\n")
            fh.write(f"merges\t{len(self.merges)}\n")
            fh.writelines(f"{a}\t{b}\n" for a, b in self.merges)
            fh.write(f"symbols\t{len(self.symbols)}\n")
            fh.writelines(f"{kind}\t{text}\n" for kind, text in self.symbols)

    @classmethod
    def load(cls, path) -> Vocabulary:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines[0] != VOCAB_VERSION:
            raise FormatError(f"{path}: unsupported vocabulary header {lines[0]!r}")
        mode = lines[1].split("\t")[1]
        n_merges = int(lines[2].split("\t")[1])
        merges = [tuple(l.split("\t")) for l in lines[3:3 + n_merges]]
        at = 3 + n_merges
        n_sym = int(lines[at].split("\t")[1])
        symbols = [tuple(l.split("\t", 1)) for l in lines[at + 1:at + 1 + n_sym]]
        return cls(symbols, mode, merges)


def _apply_merges(pieces: list[str], ranks: dict[tuple[str, str], int]) -> list[str]:
    # repeatedly merge the best-ranked adjacent pair, leftmost first
    while len(pieces) > 1:
        best = None
        for i in range(len(pieces) - 1):
            r = ranks.get((pieces[i], pieces[i + 1]))
            if r is not None and (best is None or r < best[0]):
                best = (r, i)
        if best is None:
            break
        _, i = best
        pair = (pieces[i], pieces[i + 1])
        out, j = [], 0
        while j < len(pieces):
            if j < len(pieces) - 1 and (pieces[j], pieces[j + 1]) == pair:
                out.append(pieces[j] + pieces[j + 1])
                j += 2
            else:
                out.append(pieces[j])
                j += 1
        pieces = out
    return pieces


def learn_bpe(words: Iterable[str], merge_count: int) -> list[tuple[str, str]]:
    """Greedy BPE: merge the most frequent adjacent pair, lexicographic tie-break."""
    word_freq = Counter(words)
    seqs = {w: list(w) for w in word_freq}
    merges: list[tuple[str, str]] = []
    for _ in range(merge_count):
        pairs: Counter = Counter()
        for w, f in word_freq.items():
            s = seqs[w]
            for i in range(len(s) - 1):
                pairs[(s[i], s[i + 1])] += f
        if not pairs:
            break
        top = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        ranks = {pair: 0}
        for w, pieces in seqs.items():
            seqs[w] = _apply_merges(pieces, ranks)
    return merges


def build_vocab(
    corpus: Iterable[str],
    mode: str = "word",
    size: int | None = None,
    merge_count: int = 0,
    nonterminals: Iterable[str] = (),
) -> Vocabulary:
    """Build a vocabulary from a stream of terminal tokens.

    In ``word`` mode the ``size`` most frequent words are kept (ties broken
    lexicographically). In ``bpe`` mode all characters plus ``merge_count``
    learned merges are kept.
    """
    words = list(corpus)
    if not words:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    symbols: list[tuple[str, str]] = [("special", PAD), ("special", UNK)]
    merges: list[tuple[str, str]] = []
    if mode == "word":
        counts = Counter(words)
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        if size is not None:
            ranked = ranked[:size]
        symbols += [("terminal", w) for w in sorted(ranked)]
    elif mode == "bpe":
        merges = learn_bpe(words, merge_count)
        chars = sorted({c for w in words for c in w})
        pieces = chars + ["".join(m) for m in merges]
        seen: set[str] = set()
        for p in pieces:
            if p not in seen:
                seen.add(p)
                symbols.append(("terminal", p))
    else:
        raise ValueError(f"unknown vocabulary mode {mode!r}")
    labels = sorted(set(nonterminals))
    symbols += [("open", l) for l in labels]
    symbols += [("close", l) for l in labels]
    return Vocabulary(symbols, mode, merges)


def vocab_from_treebank(seqs: Sequence[ActionSequence], **cfg) -> Vocabulary:
    words = [w for s in seqs for w in s.words]
    labels = {a.label for s in seqs for a in s if a.kind is Kind.OPEN}
    return build_vocab(words, nonterminals=labels, **cfg)


def encode_word(v: Vocabulary, word: str) -> list[int]:
    return [v.id("terminal", p) for p in v.segment(word)]


def decode(v: Vocabulary, ids: Sequence[int]) -> str:
    return "".join(v.symbol(i)[1] for i in ids)


def segment_actions(v: Vocabulary, seq: ActionSequence) -> tuple[ActionSequence, list[int]]:
    """Expand each terminal into its subword pieces.

    Returns the expanded sequence and, for each of its terminals, the index of
    the source word.
    """
    out: list[Action] = []
    word_of: list[int] = []
    w = 0
    for a in seq:
        if a.is_terminal:
            for piece in v.segment(a.label):
                out.append(terminal(piece))
                word_of.append(w)
            w += 1
        else:
            out.append(a)
    return ActionSequence(tuple(out), seq.sentence_id), word_of


def action_ids(v: Vocabulary, seq: ActionSequence | Sequence[Action]) -> list[int]:
    return [v.action_id(a) for a in seq]


# --------------------------------------------------------------------------
# n-gram frequencies


@dataclass
class NGramTable:
    """Counts of orders 1-3 over sentence-internal terminals.

    Histories are padded with a single ``<s>`` so the first word has a bigram
    but no trigram, and the second word has both.
    """

    counts: dict[int, Counter]
    history: dict[int, Counter]
    types: list[str]
    k: float = 1.0

    @property
    def total(self) -> int:
        return sum(self.counts[1].values())

    def prob(self, order: int, ngram: Sequence[str]) -> float:
        if order not in (1, 2, 3):
            raise InvalidOrder(f"order must be 1, 2 or 3, got {order}")
        ngram = tuple(ngram)
        if len(ngram) != order:
            raise ValueError(f"expected a {order}-gram, got {ngram!r}")
        V = len(self.types)
        num = self.counts[order][ngram] + self.k
        den = (self.total if order == 1 else self.history[order][ngram[:-1]]) + self.k * V
        if den == 0:
            raise ZeroDivisionError(f"unsmoothed history {ngram[:-1]!r} never seen")
        return num / den

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{NGRAM_VERSION}\nk\t{self.k!r}\n")
            fh.write(f"types\t{len(self.types)}\n")
            fh.writelines(t + "\n" for t in self.types)
            for order in (1, 2, 3):
                for table, tag in ((self.counts[order], "count"), (self.history[order], "history")):
                    if order == 1 and tag == "history":
                        continue
                    fh.write(f"{tag}{order}\t{len(table)}\n")
                    fh.writelines("\t".join(g) + f"\t{table[g]}\n" for g in sorted(table))

    @classmethod
    def load(cls, path) -> NGramTable:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines[0] != NGRAM_VERSION:
            raise FormatError(f"{path}: unsupported n-gram header {lines[0]!r}")
        k = float(lines[1].split("\t")[1])
        n_types = int(lines[2].split("\t")[1])
        types = lines[3:3 + n_types]
        at = 3 + n_types
        counts = {1: Counter(), 2: Counter(), 3: Counter()}
        history = {1: Counter(), 2: Counter(), 3: Counter()}
        while at < len(lines) and lines[at]:
            tag, n = lines[at].split("\t")
            target = counts if tag.startswith("count") else history
            order = int(tag[-1])
            for l in lines[at + 1:at + 1 + int(n)]:
                *g, c = l.split("\t")
                target[order][tuple(g)] = int(c)
            at += 1 + int(n)
        return cls(counts, history, types, k)


def build_ngrams(sentences: Iterable[Sequence[str]], k: float = 1.0) -> NGramTable:
    counts = {1: Counter(), 2: Counter(), 3: Counter()}
    history = {1: Counter(), 2: Counter(), 3: Counter()}
    types: set[str] = set()
    for sent in sentences:
        padded = [BOS] + list(sent)
        for i in range(1, len(padded)):
            types.add(padded[i])
            counts[1][(padded[i],)] += 1
            for order in (2, 3):
                if i - order + 1 < 0:
                    continue
                g = tuple(padded[i - order + 1:i + 1])
                counts[order][g] += 1
                history[order][g[:-1]] += 1
    if not types:
        raise EmptyCorpus("no tokens to count")
    return NGramTable(counts, history, sorted(types), k)


def log_freq(t: NGramTable, order: int, ngram: Sequence[str]) -> float:
    """Natural log of the add-k smoothed relative frequency of ``ngram``."""
    return math.log(t.prob(order, ngram))


def sentence_log_freqs(t: NGramTable, words: Sequence[str]) -> list[dict[str, float]]:
    """Per-word ``unigram``/``bigram``/``trigram`` log frequencies (nan if undefined)."""
    padded = [BOS] + list(words)
    out = []
    for i in range(1, len(padded)):
        row = {"unigram": log_freq(t, 1, (padded[i],))}
        row["bigram"] = log_freq(t, 2, tuple(padded[i - 1:i + 1]))
        row["trigram"] = log_freq(t, 3, tuple(padded[i - 2:i + 1])) if i >= 2 else math.nan
        out.append(row)
    return out
