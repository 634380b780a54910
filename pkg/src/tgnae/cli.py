"""Command-line entry point.

    tgnae run <stage> --config run.yaml [--seed N] [--variant V] [--weighting norm|raw] [--suite S]
    tgnae synth <dir>

``<stage>`` is one of prepare, train, extract, ingest, fit, report or all.
Failures print one JSON error record to stderr; missing inputs exit with 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import pipeline as pl

EXIT_MISSING = 2
EXIT_FAILURE = 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgnae", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one pipeline stage (or all)")
    run.add_argument("stage", choices=[*pl.STAGES, "all"])
    run.add_argument("--config", "-c", required=True, help="YAML or JSON config file")
    run.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    run.add_argument("--variant", action="append", choices=list(pl.PREFIX),
                     help="model variant (repeatable)")
    run.add_argument("--weighting", choices=["norm", "raw"])
    run.add_argument("--suite", action="append", help="regression suite for fit (repeatable)")
    run.add_argument("--output", help="run directory (overrides the config)")
    run.add_argument("-v", "--verbose", action="store_true")

    syn = sub.add_parser("synth", help="write a small synthetic fixture with a config")
    syn.add_argument("directory")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--train-sentences", type=int, default=600)
    syn.add_argument("--stories", type=int, default=4)
    syn.add_argument("--sentences-per-story", type=int, default=15)
    syn.add_argument("--participants", type=int, default=12)
    return p


def _error(exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit": code}
    if isinstance(exc, FileNotFoundError) and exc.filename is not None:
        record["path"] = str(exc.filename)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            path = write_fixture(Path(args.directory), seed=args.seed,
                                 train_sentences=args.train_sentences, stories=args.stories,
                                 sentences_per_story=args.sentences_per_story,
                                 participants=args.participants)
            print(path)
            return 0
        _deterministic()
        cfg = pl.load_config(args.config, seeds=args.seed, variants=args.variant,
                             weighting=args.weighting, output=args.output)
        if args.stage == "all":
            print(pl.run_all(cfg))
        elif args.stage == "fit":
            print(pl.fit_stage(cfg, args.suite))
        else:
            if args.suite:
                cfg.suites = args.suite
            print(pl.STAGES[args.stage](cfg))
        return 0
    except FileNotFoundError as exc:
        return _error(exc, EXIT_MISSING)
    except (ValueError, KeyError, RuntimeError) as exc:
        return _error(exc, EXIT_FAILURE)


def _deterministic() -> None:
    import torch

    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def main() -> None:
    sys.exit(run())


# --------------------------------------------------------------------------
# synthetic fixture


def write_fixture(directory: Path, seed: int = 0, train_sentences: int = 600, stories: int = 4,
                  sentences_per_story: int = 15, participants: int = 12) -> Path:
    """Treebanks, RTs, covariates, a beam file and ``config.yaml`` under ``directory``."""
    from . import ingest, synth
    from .treebank import read_treebank

    directory.mkdir(parents=True, exist_ok=True)
    (directory / "train.txt").write_text(
        "\n".join(synth.sample_treebank(train_sentences, seed=seed)) + "\n", encoding="utf-8")
    synth.write_stories(directory / "stories.txt", stories, sentences_per_story, seed=seed + 1)
    entries = read_treebank((directory / "stories.txt").read_text(encoding="utf-8").splitlines())
    positions = ingest.word_positions(entries)
    rows = synth.simulate_rt(positions, synth.RTDesign(participants=participants,
                                                       exclude_participants=(0,)), seed=seed + 2)
    cols = ["participant", "story", "zone", "word", "rt", "include_participant"]
    with open(directory / "rt.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        fh.writelines("\t".join(str(r[c]) for c in cols) + "\n" for r in rows)

    rng = np.random.default_rng(seed + 3)
    with open(directory / "clt.tsv", "w", encoding="utf-8") as fh:
        fh.write("story\tzone\tclt\n")
        fh.writelines(f"{story}\t{zone}\t{rng.normal():.6f}\n" for story, zone in sorted(positions))

    # beam: the gold structure plus a flat alternative over the same words
    with open(directory / "beam.tsv", "w", encoding="utf-8") as fh:
        counter: dict[str, int] = {}
        for e in entries:
            counter[e.story] = counter.get(e.story, 0) + 1
            k = counter[e.story]
            flat = "(S " + " ".join(e.actions.words) + " S)"
            p = float(rng.uniform(0.55, 0.9))
            fh.write(f"{e.story}\t{k}\t{p:.6f}\t{e.actions.render()}\n")
            fh.write(f"{e.story}\t{k}\t{1 - p:.6f}\t{flat}\n")

    config = {
        "train_treebank": "train.txt", "stories": "stories.txt", "rt": "rt.tsv",
        "covariates": "clt.tsv", "beam": "beam.tsv", "output": "run",
        "seeds": [1, 2], "variants": ["TG", "TGminusComp", "Vanilla"], "weighting": "norm",
        "suites": ["baseline", "nae", "both-nae", "surprisal", "tg-vs-tgcomp",
                   "tg-vs-tgcomp-weak", "clt", "beam"],
        "model": {"layers": 2, "heads": 2, "model_dim": 32, "ffn_dim": 64, "max_len": 128},
        "train": {"steps": 150, "batch_size": 16, "eval_every": 50},
        "pos_min_count": 40,
    }
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return path


if __name__ == "__main__":
    main()
