import json
import shutil
import subprocess
import sys

import pandas as pd
import pytest
import yaml

from tgnae import pipeline as pl
from tgnae.cli import run

STAGES = ["prepare", "train", "extract", "ingest", "fit", "report"]


def read_json(path):
    return json.loads(path.read_text())


def test_missing_treebank_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"train_treebank": "absent.txt", "stories": "s.txt",
                                   "rt": "rt.tsv"}))
    assert run(["run", "prepare", "-c", str(cfg)]) == 2
    record = json.loads(capsys.readouterr().err.strip())
    assert record["exit"] == 2
    assert record["path"].endswith("absent.txt")
    assert "absent.txt" in record["message"]


def test_missing_config_exits_2(tmp_path, capsys):
    assert run(["run", "prepare", "-c", str(tmp_path / "none.yaml")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "MissingInput"


def test_invalid_config_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"train_treebank": "a", "stories": "b", "rt": "c",
                                   "seeds": []}))
    assert run(["run", "prepare", "-c", str(cfg)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"train_treebank": "a", "stories": "b", "rt": "c",
                                   "sedes": [1]}))
    with pytest.raises(pl.ConfigError):
        pl.load_config(cfg)


def test_flags_override_config(pipeline_run):
    cfg = pl.load_config(pipeline_run, seeds=[7], weighting="raw", variants=["TG"])
    assert cfg.seeds == [7] and cfg.weighting == "raw" and cfg.variants == ["TG"]
    assert cfg.digest() != pl.load_config(pipeline_run).digest()


def test_every_stage_has_manifest(pipeline_run):
    out = pipeline_run.parent / "run"
    digest = pl.load_config(pipeline_run).digest()
    for stage in STAGES:
        m = read_json(out / stage / "MANIFEST.json")
        assert m["stage"] == stage and m["config_hash"] == digest
        assert m["seeds"] == [1, 2]
        assert {"tgnae", "torch", "numpy"} <= set(m["versions"])
        for name in m["artifacts"]:
            assert (out / stage / name).exists()


def test_prepare_rerun_is_byte_identical(pipeline_run, tmp_path):
    out = pipeline_run.parent / "run" / "prepare"
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run(["run", "prepare", "-c", str(pipeline_run)]) == 0
    after = {p.name: p.read_bytes() for p in out.iterdir()}
    assert before == after
    golden = (out / "plans.txt").read_text().splitlines()
    assert golden[0].startswith("# 1:1\t(S")


def test_word_table_columns(pipeline_run):
    words = pd.read_csv(pipeline_run.parent / "run" / "extract" / "words.tsv", sep="\t")
    for col in ("tg_nae", "tf_nae", "tgc_nae", "tg_surp", "tf_surp", "tgc_surp",
                "tg_nae__s1", "tg_nae__s2", "stack_count", "unigram", "bigram", "trigram",
                "wordlen", "tg_bs_nae", "stack_count_bs"):
        assert col in words, col
    avg = words[["tg_nae__s1", "tg_nae__s2"]].mean(axis=1)
    pd.testing.assert_series_equal(avg, words["tg_nae"], check_names=False, rtol=1e-8)


def test_exclusion_report(pipeline_run):
    rep = read_json(pipeline_run.parent / "run" / "ingest" / "exclusions.json")
    assert rep["kept"] + sum(rep["excluded"].values()) == rep["input"]
    assert rep["excluded"]["participant_flag"] > 0


def test_fit_suite_both_nae_has_two_lrt_rows(pipeline_run, tmp_path):
    out_dir = tmp_path / "copy"
    shutil.copytree(pipeline_run.parent / "run", out_dir)
    assert run(["run", "fit", "-c", str(pipeline_run), "--suite", "both-nae",
                "--output", str(out_dir)]) == 0
    assert run(["run", "report", "-c", str(pipeline_run), "--output", str(out_dir)]) == 0
    report = read_json(out_dir / "report" / "report.json")
    rows = [r for r in report["lrt"] if r["suite"] == "both-nae"]
    assert len(rows) == 2 and len(report["lrt"]) == 2
    assert {r["nested"] for r in rows} == {"TG", "Transformer"}
    assert all(r["df"] == 2 for r in rows)


def test_report_contents(pipeline_run):
    out = pipeline_run.parent / "run" / "report"
    report = read_json(out / "report.json")
    suites = {r["suite"] for r in report["delta_loglik"]}
    assert {"nae", "both-nae", "surprisal", "tg-vs-tgcomp", "clt", "beam"} <= suites
    nae = [r for r in report["delta_loglik"] if r["suite"] == "nae"]
    assert all(len(r["per_seed"]) == 2 and r["sd"] is not None for r in nae)
    assert any(e["predictor"] == "tg_nae" for e in report["effects"])
    corr = report["correlations"]
    assert len(corr["matrix"]) == len(corr["columns"])
    for name in ("delta_loglik", "lrt", "effects", "pos", "correlations"):
        assert (out / f"{name}.tsv").exists()


def test_unknown_suite(pipeline_run, capsys):
    assert run(["run", "fit", "-c", str(pipeline_run), "--suite", "nope"]) == 1
    assert "nope" in json.loads(capsys.readouterr().err)["message"]


def test_stage_needs_previous_artifacts(tmp_path, capsys):
    from conftest import small_fixture

    cfg = small_fixture(tmp_path)
    assert run(["run", "extract", "-c", str(cfg)]) == 2
    assert "vocab" in json.loads(capsys.readouterr().err)["path"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tgnae", "--help"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0 and "run" in proc.stdout
