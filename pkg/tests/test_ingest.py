import math

import numpy as np
import pandas as pd
import pytest

from tgnae import ingest as ing
from tgnae import metrics as mx

HEADER = "participant\tstory\tzone\tword\trt\tinclude_participant\n"


def positions(n_sentences=2, length=5, story="1"):
    table, z = {}, 0
    for s in range(1, n_sentences + 1):
        for p in range(1, length + 1):
            z += 1
            table[(story, z)] = ing.WordPosition(s, p, length, f"w{z}", "NN")
    return table


class TestLoad:
    def test_tab_and_comma_agree(self):
        tab = HEADER + "p1\t1\t3\tw3\t350\t1\n"
        comma = tab.replace("\t", ",")
        assert ing.load_rt(tab) == ing.load_rt(comma)

    def test_from_path(self, tmp_path):
        path = tmp_path / "rt.tsv"
        path.write_text(HEADER + "p1\t1\t3\tw3\t350.5\tfalse\n")
        (row,) = ing.load_rt(path)
        assert row.rt_ms == 350.5 and row.zone == 3 and not row.include_participant

    def test_missing_column(self):
        with pytest.raises(ing.MissingColumn, match="rt"):
            ing.load_rt("participant\tstory\tzone\tword\np1\t1\t1\tw\n")

    @pytest.mark.parametrize("line", [
        "p1\t1\tx\tw\t300\t1", "p1\t1\t1\tw\tabc\t1", "p1\t1\t1\tw\t-5\t1",
        "p1\t1\t0\tw\t300\t1", "p1\t1\t1\tw\t300\tmaybe", "p1\t1\t1\tw\t300"])
    def test_unparsable(self, line):
        with pytest.raises(ing.UnparsableRow) as info:
            ing.load_rt(HEADER + line + "\n")
        assert info.value.line == 2

    def test_flag_column_optional(self):
        (row,) = ing.load_rt("participant,story,zone,word,rt\np,1,1,w,200\n")
        assert row.include_participant


class TestExclusion:
    def obs(self, zone, rt, include=True):
        return ing.RTObservation("p", "1", zone, "w", rt, include)

    def test_priority_order(self):
        pos = positions()
        assert ing.exclusion_reason(self.obs(1, 50, False), pos[("1", 1)]) == "participant_flag"
        assert ing.exclusion_reason(self.obs(1, 50), pos[("1", 1)]) == "rt_below_min"
        assert ing.exclusion_reason(self.obs(5, 5000), pos[("1", 5)]) == "rt_above_max"
        assert ing.exclusion_reason(self.obs(1, 300), pos[("1", 1)]) == "sentence_initial"
        assert ing.exclusion_reason(self.obs(2, 300), pos[("1", 2)]) == "sentence_second"
        assert ing.exclusion_reason(self.obs(5, 300), pos[("1", 5)]) == "sentence_final"
        assert ing.exclusion_reason(self.obs(3, 300), pos[("1", 3)]) is None

    @pytest.mark.parametrize("rt, kept", [(99.999, False), (100, True), (3000, True), (3000.001, False)])
    def test_bounds_inclusive(self, rt, kept):
        out, _ = ing.preprocess([self.obs(3, rt)], positions())
        assert bool(out) == kept

    def test_unknown_zone(self):
        with pytest.raises(ing.UnknownZone):
            ing.preprocess([self.obs(99, 300)], positions())

    def test_report(self):
        rows = [self.obs(z, 300) for z in range(1, 11)]
        kept, rep = ing.preprocess(rows, positions())
        assert rep["input"] == 10 and rep["kept"] == len(kept) == 4
        assert rep["excluded"]["sentence_initial"] == 2
        assert rep["kept"] + sum(rep["excluded"].values()) == rep["input"]


class TestJoin:
    def features(self):
        words = pd.DataFrame([
            {"story": k[0], "zone": k[1], "sentence": v.sentence, "position": v.position,
             "word": v.word, "x": float(k[1])}
            for k, v in positions().items()])
        return mx.build_features(words, mx.FeatureConfig(["x"], zscore=False))

    def test_join_adds_log_rt_and_features(self):
        rows = [ing.RTObservation("p", "1", 3, "w3", 400.0)]
        out = ing.join(rows, self.features())
        assert out.loc[0, "log_rt"] == pytest.approx(math.log(400))
        assert out.loc[0, "x"] == 3.0 and out.loc[0, "x_so"] == 2.0

    def test_unmatched(self):
        with pytest.raises(ing.UnmatchedZone):
            ing.join([ing.RTObservation("p", "2", 3, "w", 400.0)], self.features())

    def test_duplicate_feature_key(self):
        f = self.features()
        with pytest.raises(ing.DuplicateKey):
            ing.join([], pd.concat([f, f.iloc[:1]]))

    def test_extra_covariates_get_spillover(self):
        extra = pd.DataFrame({"story": ["1"] * 10, "zone": range(1, 11), "clt": np.arange(10.0)})
        rows = [ing.RTObservation("p", "1", z, "w", 400.0) for z in (3, 6, 8)]
        out = ing.join(rows, self.features(), extra, ["clt"])
        assert list(out["clt"]) == [2.0, 5.0, 7.0]
        assert list(out["clt_so"][[0, 2]]) == [1.0, 6.0]
        assert math.isnan(out["clt_so"][1])  # zone 6 starts sentence 2


def test_word_positions_from_treebank():
    from tgnae.treebank import read_treebank

    entries = read_treebank(["1\t(S a (NP b c NP) S)", "1\t(S d e S)", "2\t(S f S)"])
    table = ing.word_positions(entries)
    assert table[("1", 4)] == ing.WordPosition(2, 1, 2, "d", "")
    assert table[("1", 3)].position == table[("1", 3)].length == 3
    assert ("2", 1) in table and len(table) == 6
