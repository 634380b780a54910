import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from oracles import EXAMPLE_TREE, LABELS, entropy_bits, random_tree, render

from tgnae import metrics as mx
from tgnae import model as md
from tgnae.lexicon import build_vocab
from tgnae.treebank import parse_tree

VOCAB = build_vocab([f"w{i}" for i in range(20)] + ["The", "blue", "bird", "sings"],
                    nonterminals=LABELS)
BPE = build_vocab([f"w{i}" for i in range(20)] * 3 + ["The", "blue", "bird", "sings"],
                  mode="bpe", merge_count=4, nonterminals=LABELS)

weights = st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=2, max_size=12)


class TestNAERow:
    def test_hand_value(self):
        assert mx.nae_row([0.5, 0.25, 0.25], [0, 1, 2]) == pytest.approx(0.9464, abs=1e-4)
        assert mx.nae_row([0.5, 0.25, 0.25], [0, 1, 2]) == pytest.approx(1.5 / math.log2(3), abs=1e-12)

    def test_uniform_and_one_hot(self):
        assert mx.nae_row(np.ones(7), range(7)) == pytest.approx(1.0)
        assert mx.nae_row([0, 0, 1, 0], range(4)) == 0.0

    def test_singleton_is_zero(self):
        assert mx.nae_row([0.3, 0.7], [1]) == 0.0

    def test_only_T_matters(self):
        w = np.array([0.1, 0.2, 0.3, 0.4])
        assert mx.nae_row(w, [1, 3]) == pytest.approx(entropy_bits([0.2, 0.4]) / 1.0)

    def test_errors(self):
        with pytest.raises(mx.EmptyT):
            mx.nae_row([1.0], [])
        with pytest.raises(mx.ZeroMass):
            mx.nae_row([1.0, 0.0, 0.0], [1, 2])

    @given(weights)
    def test_bounds_and_oracle(self, w):
        assume(sum(w) > 1e-6)
        v = mx.nae_row(w, range(len(w)))
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(min(1.0, entropy_bits(w) / math.log2(len(w))), abs=1e-9)

    @given(weights, st.floats(1e-3, 1e3))
    def test_rescaling_invariance(self, w, c):
        assume(sum(w) > 1e-6)
        idx = range(len(w))
        assert mx.nae_row(np.array(w) * c, idx) == pytest.approx(mx.nae_row(w, idx), abs=1e-9)


class TestAlignment:
    def test_example_tree_attribution(self):
        enc = md.encode_sentence("TG", parse_tree(EXAMPLE_TREE), VOCAB)
        al = mx.align(enc)
        assert [s.word for s in al.slots] == ["The", "blue", "bird", "sings"]
        assert [s.queries for s in al.slots] == [(2,), (3,), (4,), (8,)]
        assert al.slots[0].scored == (1, 2)
        assert al.slots[3].scored == (5, 7, 8, 9, 11)
        assert al.preceding[8] == (0, 5, 7)

    def test_vanilla_first_word_has_no_preceding(self):
        enc = md.encode_sentence("Vanilla", parse_tree(EXAMPLE_TREE), VOCAB)
        al = mx.align(enc)
        assert al.preceding[0] == ()
        assert al.slots[0].scored == ()
        assert al.slots[1].scored == (1,)

    def test_stack_counts(self):
        al, depths = mx.tree_alignment(parse_tree(EXAMPLE_TREE))
        assert list(mx.word_stack_count(depths, al)) == [3, 4, 5, 1]

    @pytest.mark.parametrize("variant", md.VARIANTS)
    @pytest.mark.parametrize("vocab", [VOCAB, BPE], ids=["word", "bpe"])
    def test_every_scored_item_attributed_once(self, variant, vocab):
        rng = np.random.default_rng(5)
        for _ in range(30):
            seq = parse_tree(render(random_tree(rng)))
            enc = md.encode_sentence(variant, seq, vocab)
            al = mx.align(enc)
            got = sorted(p for s in al.slots for p in s.scored)
            assert got == list(np.flatnonzero(enc.scored))
            assert len(al) == len(seq.words)


class TestWordMetrics:
    @pytest.mark.parametrize("variant", md.VARIANTS)
    def test_surprisal_partition(self, variant):
        cfg = md.ModelConfig(layers=2, heads=2, model_dim=16, ffn_dim=32, vocab_size=len(BPE),
                             variant=variant)
        m = md.init_model(cfg, seed=2)
        rng = np.random.default_rng(3)
        for _ in range(15):
            seq = parse_tree(render(random_tree(rng)))
            enc = md.encode_sentence(variant, seq, BPE)
            scores = md.score_sequence(m, enc.ids, enc.plan)
            surp = mx.word_surprisal(scores, mx.align(enc))
            assert surp.sum() == pytest.approx(np.nansum(scores), abs=1e-6)

    def test_word_nae_sums_heads_and_pieces(self):
        enc = md.encode_sentence("TG", parse_tree(EXAMPLE_TREE), VOCAB)
        al = mx.align(enc)
        rng = np.random.default_rng(0)
        top = rng.random((3, len(enc), len(enc)))
        got = mx.word_nae(top, al)
        p = 8
        T = [0, 5, 7]
        want = sum(entropy_bits(top[h, p, T]) / math.log2(3) for h in range(3))
        assert got[3] == pytest.approx(want)

    def test_zero_mass_rows_count_as_zero(self):
        enc = md.encode_sentence("TG", parse_tree(EXAMPLE_TREE), VOCAB)
        al = mx.align(enc)
        top = np.zeros((2, len(enc), len(enc)))
        top[:, :, :] = np.eye(len(enc))  # all mass on self, none on T
        diag = mx.NAEDiagnostics()
        out = mx.word_nae(top, al, diagnostics=diag)
        assert (out == 0).all()
        assert diag.zero_mass == 2 * 4 and diag.rows == 8

    def test_empty_preceding_gives_nan(self):
        enc = md.encode_sentence("Vanilla", parse_tree(EXAMPLE_TREE), VOCAB)
        top = np.tril(np.ones((1, 4, 4)))
        out = mx.word_nae(top, mx.align(enc))
        assert math.isnan(out[0]) and out[1] == 0.0 and out[3] == pytest.approx(1.0)

    def test_weighting_choice(self):
        with pytest.raises(ValueError):
            mx.word_nae(np.zeros((1, 2, 2)), None, weighting="softmax")

    def test_record_size_checked(self):
        enc = md.encode_sentence("TG", parse_tree(EXAMPLE_TREE), VOCAB)
        with pytest.raises(mx.MissingAlignment):
            mx.word_nae(np.zeros((1, 5, 5)), mx.align(enc))
        with pytest.raises(mx.MissingAlignment):
            mx.word_surprisal(np.zeros(5), mx.align(enc))


class TestBeam:
    def cand(self, p, nae, sc=(1.0,)):
        return mx.BeamCandidate(None, p, list(nae), list(sc))

    def test_singleton(self):
        assert mx.beam_nae([self.cand(0.3, [0.123456789])], 0) == 0.123456789

    def test_weighted_example(self):
        cands = [self.cand(0.6, [1.0]), self.cand(0.4, [0.5])]
        assert mx.beam_nae(cands, 0) == pytest.approx(0.8, abs=1e-15)

    @given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(0, 3)), min_size=1, max_size=6),
           st.floats(0.01, 100))
    def test_rescaling(self, pairs, c):
        a = [self.cand(p, [v]) for p, v in pairs]
        b = [self.cand(p * c, [v]) for p, v in pairs]
        assert mx.beam_nae(a, 0) == pytest.approx(mx.beam_nae(b, 0), rel=1e-9, abs=1e-12)

    def test_zero_weight(self):
        with pytest.raises(mx.ZeroTotalWeight):
            mx.beam_nae([self.cand(0.0, [1.0])], 0)
        with pytest.raises(mx.ZeroTotalWeight):
            mx.beam_nae([], 0)

    def test_stack_count(self):
        cands = [self.cand(1, [0], [2]), self.cand(3, [0], [6])]
        assert mx.beam_stack_count(cands, 0) == pytest.approx(5.0)


class TestFeatures:
    def words(self):
        return pd.DataFrame({
            "story": ["1"] * 5, "zone": [1, 2, 3, 4, 5], "sentence": [1, 1, 1, 2, 2],
            "position": [1, 2, 3, 1, 2], "x": [1.0, 2.0, 3.0, 4.0, 5.0],
        })

    def test_spillover_within_sentence(self):
        f = mx.build_features(self.words(), mx.FeatureConfig(["x"], zscore=False))
        assert np.isnan(f["x_so"][0]) and np.isnan(f["x_so"][3])
        assert list(f["x_so"][[1, 2, 4]]) == [1.0, 2.0, 4.0]
        assert list(f["excluded"]) == [True, False, False, True, False]

    def test_zscore_over_kept_rows(self):
        f = mx.build_features(self.words(), mx.FeatureConfig(["x"]))
        kept = f[~f["excluded"]]
        for c in ("x", "x_so", "zone", "position"):
            assert kept[c].mean() == pytest.approx(0.0, abs=1e-12)
            assert kept[c].std(ddof=1) == pytest.approx(1.0)

    def test_degenerate_column(self):
        df = self.words().assign(x=1.0)
        with pytest.raises(mx.DegenerateColumn):
            mx.zscore_columns(df, ["x"])
