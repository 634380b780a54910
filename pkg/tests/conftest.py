from pathlib import Path

import pytest
import yaml

from tgnae.cli import write_fixture


def small_fixture(directory: Path, seed: int = 0, steps: int = 40) -> Path:
    """A synthetic corpus and config sized for the test suite."""
    cfg_path = write_fixture(directory, seed=seed, train_sentences=200, stories=3,
                             sentences_per_story=8, participants=8)
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg["model"] = {"layers": 1, "heads": 2, "model_dim": 16, "ffn_dim": 32, "max_len": 128}
    cfg["train"] = {"steps": steps, "batch_size": 8, "eval_every": 20}
    cfg["pos_min_count"] = 20
    cfg_path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return cfg_path


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One complete pipeline run shared by the CLI tests."""
    from tgnae.cli import run

    cfg = small_fixture(tmp_path_factory.mktemp("fixture"))
    assert run(["run", "all", "-c", str(cfg)]) == 0
    return cfg


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
