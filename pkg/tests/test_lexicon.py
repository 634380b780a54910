import math
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import EXAMPLE_TREE

from tgnae.lexicon import (
    EmptyCorpus,
    FormatError,
    InvalidOrder,
    NGramTable,
    Vocabulary,
    action_ids,
    build_ngrams,
    build_vocab,
    decode,
    encode_word,
    learn_bpe,
    segment_actions,
    sentence_log_freqs,
    vocab_from_treebank,
)
from tgnae.treebank import parse_tree

words = st.lists(st.text("abcd", min_size=1, max_size=6), min_size=1, max_size=30)


class TestVocabulary:
    def test_specials_first(self):
        v = build_vocab(["b", "a", "a"], nonterminals=["S"])
        assert v.pad_id == 0 and v.unk_id == 1
        assert v.symbols[2:] == [("terminal", "a"), ("terminal", "b"), ("open", "S"), ("close", "S")]

    def test_unknown_maps_to_unk(self):
        v = build_vocab(["a"])
        assert v.id("terminal", "zzz") == v.unk_id

    def test_size_keeps_most_frequent_with_lexicographic_ties(self):
        v = build_vocab(["c", "c", "b", "a", "d", "d"], size=3)
        kept = {t for k, t in v.symbols if k == "terminal"}
        assert kept == {"c", "d", "a"}

    def test_terminal_and_label_do_not_collide(self):
        v = vocab_from_treebank([parse_tree("(NP NP NP)")])
        seq = parse_tree("(NP NP NP)")
        ids = action_ids(v, seq)
        assert len(set(ids)) == 3

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_vocab([])

    def test_save_load_roundtrip(self, tmp_path):
        v = build_vocab(["low", "lower", "newest", "widest"] * 3, mode="bpe", merge_count=6,
                        nonterminals=["S", "NP"])
        v.save(tmp_path / "v.txt")
        w = Vocabulary.load(tmp_path / "v.txt")
        assert w.symbols == v.symbols and w.merges == v.merges and w.mode == "bpe"

    def test_load_rejects_other_format(self, tmp_path):
        (tmp_path / "v.txt").write_text("something else\n")
        with pytest.raises(FormatError):
            Vocabulary.load(tmp_path / "v.txt")


class TestBPE:
    def test_known_merges(self):
        # pair counts: (l,o)=2 (o,w)=2 (w,e)=1 (e,r)=1 ... ties broken lexicographically
        merges = learn_bpe(["low", "lower"], 3)
        assert merges == [("l", "o"), ("lo", "w"), ("e", "r")]

    def test_merge_most_frequent_pair(self):
        merges = learn_bpe(["ab"] * 5 + ["bc"] * 3, 1)
        assert merges == [("a", "b")]

    @given(words, st.integers(0, 10))
    def test_segmentation_reconstructs_word(self, corpus, n):
        v = build_vocab(corpus, mode="bpe", merge_count=n)
        for w in corpus:
            pieces = v.segment(w)
            assert "".join(pieces) == w
            assert decode(v, encode_word(v, w)) == w

    @given(words, st.integers(0, 10))
    def test_deterministic(self, corpus, n):
        assert learn_bpe(corpus, n) == learn_bpe(list(corpus), n)

    def test_segment_actions_word_index(self):
        v = build_vocab(["blue", "bird", "sings", "the"], mode="bpe", merge_count=2)
        seq = parse_tree(EXAMPLE_TREE)
        expanded, word_of = segment_actions(v, seq)
        assert len(word_of) == len(expanded.terminal_positions)
        assert sorted(set(word_of)) == [0, 1, 2, 3]
        assert word_of == sorted(word_of)


class TestNGrams:
    corpus = (("a", "b", "a"), ("b", "a", "c"))

    def test_counts_by_hand(self):
        t = build_ngrams(self.corpus, k=0.0)
        assert t.total == 6
        assert t.prob(1, ["a"]) == pytest.approx(3 / 6)
        # history <s> occurs twice, followed once by a
        assert t.prob(2, ["<s>", "a"]) == pytest.approx(1 / 2)
        assert t.prob(2, ["b", "a"]) == pytest.approx(1.0)
        assert t.prob(3, ["<s>", "b", "a"]) == pytest.approx(1.0)

    def test_add_k(self):
        t = build_ngrams(self.corpus, k=1.0)
        V = 3
        assert t.prob(2, ["a", "c"]) == pytest.approx((1 + 1) / (2 + V))
        assert t.prob(2, ["c", "a"]) == pytest.approx(1 / V)

    def test_conditional_sums_to_one(self):
        t = build_ngrams(self.corpus, k=0.5)
        for h in t.history[2]:
            assert sum(t.prob(2, (*h, w)) for w in t.types) == pytest.approx(1.0)
        for h in t.history[3]:
            assert sum(t.prob(3, (*h, w)) for w in t.types) == pytest.approx(1.0)

    def test_invalid_order(self):
        with pytest.raises(InvalidOrder):
            build_ngrams(self.corpus).prob(4, ["a"] * 4)

    def test_sentence_log_freqs(self):
        t = build_ngrams(self.corpus, k=1.0)
        rows = sentence_log_freqs(t, ["a", "b", "a"])
        assert math.isnan(rows[0]["trigram"])
        assert not math.isnan(rows[1]["trigram"])
        assert rows[0]["bigram"] == pytest.approx(math.log(t.prob(2, ["<s>", "a"])))

    def test_save_load(self, tmp_path):
        t = build_ngrams(self.corpus, k=0.25)
        t.save(tmp_path / "n.txt")
        u = NGramTable.load(tmp_path / "n.txt")
        assert u.types == t.types and u.k == t.k
        for order in (1, 2, 3):
            assert Counter(u.counts[order]) == Counter(t.counts[order])
            if order > 1:
                assert Counter(u.history[order]) == Counter(t.history[order])
