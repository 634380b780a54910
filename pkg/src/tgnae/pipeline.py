"""Pipeline stages: prepare, train, extract, ingest, fit, report.

Each stage reads only the artifacts of earlier stages under the run
directory and writes its own subdirectory with a ``MANIFEST.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import ingest as ing
from . import lexicon as lex
from . import metrics as mx
from .treebank import (
    build_attention_plan,
    duplicate_closes,
    plan_debug_lines,
    read_treebank,
)

log = logging.getLogger(__name__)

PREFIX = {"TG": "tg", "TGminusComp": "tgc", "Vanilla": "tf"}
MODEL_DERIVED = ("tg_nae", "tf_nae", "tgc_nae", "tg_surp", "tf_surp", "tgc_surp", "tg_bs_nae")
BASE_PREDICTORS = ("wordlen", "unigram", "bigram", "trigram", "tg_surp", "tf_surp", "stack_count")


class ConfigError(ValueError):
    pass


class MissingInput(FileNotFoundError):
    def __init__(self, what: str, path):
        super().__init__(2, f"{what} not found", str(path))


# --------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    train_treebank: str
    stories: str
    rt: str
    output: str = "run"
    valid_treebank: str | None = None
    covariates: str | None = None
    covariate_columns: list[str] = field(default_factory=lambda: ["clt"])
    beam: str | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    variants: list[str] = field(default_factory=lambda: ["TG", "TGminusComp", "Vanilla"])
    weighting: str = "norm"
    suites: list[str] = field(default_factory=lambda: ["baseline", "nae", "both-nae"])
    vocab: dict = field(default_factory=lambda: {"mode": "word", "size": None, "merge_count": 0})
    ngram_k: float = 1.0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    valid_fraction: float = 0.1
    pos_min_count: int = 1000
    rt_bounds: list[float] = field(default_factory=lambda: [100.0, 3000.0])
    base_dir: str = "."

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    @property
    def out(self) -> Path:
        return self.path(self.output)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        bad = [v for v in self.variants if v not in PREFIX]
        if bad:
            raise ConfigError(f"unknown variants {bad}")
        if self.weighting not in ("norm", "raw"):
            raise ConfigError("weighting must be 'norm' or 'raw'")
        unknown = [s for s in self.suites if s not in SUITES]
        if unknown:
            raise ConfigError(f"unknown suites {unknown}; known: {sorted(SUITES)}")

    def digest(self) -> str:
        d = asdict(self)
        d.pop("base_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path, **overrides) -> PipelineConfig:
    import yaml

    path = Path(path)
    if not path.exists():
        raise MissingInput("config file", path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    known = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    raw.setdefault("base_dir", str(path.parent))
    try:
        cfg = PipelineConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise MissingInput(what, path)
    return path


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    import torch

    return {"tgnae": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pandas": pd.__version__, "scipy": scipy.__version__, "torch": torch.__version__}


def write_manifest(cfg: PipelineConfig, stage: str, directory: Path, seeds=None) -> None:
    artifacts = {
        p.name: _sha(p) for p in sorted(directory.iterdir())
        if p.is_file() and p.name != "MANIFEST.json"
    }
    manifest = {"stage": stage, "config_hash": cfg.digest(),
                "seeds": list(seeds if seeds is not None else cfg.seeds),
                "versions": _versions(), "artifacts": artifacts}
    (directory / "MANIFEST.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _stage_dir(cfg: PipelineConfig, name: str) -> Path:
    d = cfg.out / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


# --------------------------------------------------------------------------
# prepare


def prepare(cfg: PipelineConfig) -> Path:
    train_entries = read_treebank(_read_lines(_require(cfg.path(cfg.train_treebank), "training treebank")))
    stories = read_treebank(_read_lines(_require(cfg.path(cfg.stories), "story treebank")))
    if cfg.valid_treebank:
        valid_entries = read_treebank(_read_lines(_require(cfg.path(cfg.valid_treebank), "validation treebank")))
    else:
        n_valid = max(1, int(len(train_entries) * cfg.valid_fraction))
        train_entries, valid_entries = train_entries[:-n_valid], train_entries[-n_valid:]
    out = _stage_dir(cfg, "prepare")
    seqs = [e.actions for e in train_entries]
    labels = {a.label for e in [*train_entries, *valid_entries, *stories] for a in e.actions
              if a.kind.value == "open"}
    vocab = lex.build_vocab([w for s in seqs for w in s.words], nonterminals=labels, **cfg.vocab)
    vocab.save(out / "vocab.txt")
    lex.build_ngrams([s.words for s in seqs], k=cfg.ngram_k).save(out / "ngrams.txt")
    for name, entries in (("train", train_entries), ("valid", valid_entries)):
        (out / f"{name}.actions").write_text(
            "".join(f"{e.actions.render()}\n" for e in entries), encoding="utf-8")
    with open(out / "stories.actions", "w", encoding="utf-8") as fh:
        fh.writelines(f"{e.story}\t{e.actions.render()}\t{' '.join(t or '-' for t in e.pos_tags)}\n" for e in stories)
    with open(out / "plans.txt", "w", encoding="utf-8") as fh:
        for e in stories:
            d = duplicate_closes(e.actions)
            fh.write(f"# {e.actions.sentence_id}\t{d.render()}\n")
            fh.write("\n".join(plan_debug_lines(d, build_attention_plan(d))) + "\n")
    write_manifest(cfg, "prepare", out)
    return out


def _read_actions(path: Path):
    from .treebank import parse_tree

    return [parse_tree(l) for l in _read_lines(path) if l.strip()]


def _read_stories(path: Path):
    from .treebank import TreebankEntry, parse_tree

    entries, counters = [], {}
    for line in _read_lines(path):
        if not line.strip():
            continue
        story, tree, tags = line.split("\t")
        counters[story] = counters.get(story, 0) + 1
        tags = [("" if t == "-" else t) for t in tags.split(" ")]
        entries.append(TreebankEntry(parse_tree(tree, f"{story}:{counters[story]}"), tags, story))
    return entries


# --------------------------------------------------------------------------
# train


def _model_config(cfg: PipelineConfig, variant: str, vocab_size: int):
    from .model import ModelConfig

    return ModelConfig(**{**cfg.model, "variant": variant, "vocab_size": vocab_size})


def train_stage(cfg: PipelineConfig) -> Path:
    from . import model as md

    prep = cfg.out / "prepare"
    vocab = lex.Vocabulary.load(_require(prep / "vocab.txt", "vocabulary (run prepare)"))
    train_seqs = _read_actions(_require(prep / "train.actions", "training actions"))
    valid_seqs = _read_actions(_require(prep / "valid.actions", "validation actions"))
    out = _stage_dir(cfg, "train")
    for variant in cfg.variants:
        tr = [md.encode_sentence(variant, s, vocab) for s in train_seqs]
        va = [md.encode_sentence(variant, s, vocab) for s in valid_seqs]
        mcfg = _model_config(cfg, variant, len(vocab))
        longest = max(len(e) for e in tr + va)
        if longest > mcfg.max_len:
            raise ConfigError(f"{variant}: sequences of length {longest} exceed max_len {mcfg.max_len}")
        for seed in cfg.seeds:
            model = md.init_model(mcfg, seed)
            hyper = md.TrainConfig(**{**cfg.train, "seed": seed})
            model, tlog = md.train(model, tr, hyper, valid=va, pad_id=vocab.pad_id)
            log.info("%s seed %d: best valid %.4f at step %d", variant, seed,
                     tlog.best_valid, tlog.best_step)
            md.save_checkpoint(model, out / f"{variant}_s{seed}.ckpt",
                               {"seed": seed, "best_step": tlog.best_step})
            _dump(asdict(tlog), out / f"{variant}_s{seed}.log.json")
    write_manifest(cfg, "train", out)
    return out


# --------------------------------------------------------------------------
# extract


def _read_beam(path: Path) -> dict[tuple[str, int], list[tuple[float, str]]]:
    """``story<TAB>sentence<TAB>prob<TAB>tree`` lines grouped by sentence."""
    beams: dict[tuple[str, int], list[tuple[float, str]]] = {}
    for line in _read_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        story, sent, prob, tree = line.split("\t")
        beams.setdefault((story, int(sent)), []).append((float(prob), tree))
    return beams


def extract_stage(cfg: PipelineConfig) -> Path:
    from . import model as md

    prep, trained = cfg.out / "prepare", cfg.out / "train"
    vocab = lex.Vocabulary.load(_require(prep / "vocab.txt", "vocabulary (run prepare)"))
    ngrams = lex.NGramTable.load(_require(prep / "ngrams.txt", "n-gram table (run prepare)"))
    stories = _read_stories(_require(prep / "stories.actions", "story actions (run prepare)"))
    out = _stage_dir(cfg, "extract")

    rows: list[dict] = []
    zone: dict[str, int] = {}
    sent_no: dict[str, int] = {}
    for e in stories:
        sent_no[e.story] = sent_no.get(e.story, 0) + 1
        al, depths = mx.tree_alignment(e.actions, e.pos_tags)
        stack = mx.word_stack_count(depths, al)
        freqs = lex.sentence_log_freqs(ngrams, e.actions.words)
        for i, w in enumerate(e.actions.words):
            zone[e.story] = zone.get(e.story, 0) + 1
            rows.append({"story": e.story, "zone": zone[e.story], "sentence": sent_no[e.story],
                         "position": i + 1, "word": w, "pos": e.pos_tags[i] or "",
                         "wordlen": len(w), "stack_count": int(stack[i]), **freqs[i]})
    table = pd.DataFrame(rows)

    beams = _read_beam(_require(cfg.path(cfg.beam), "beam file")) if cfg.beam else None
    diagnostics = mx.NAEDiagnostics()
    for variant in cfg.variants:
        prefix = PREFIX[variant]
        for seed in cfg.seeds:
            model, _ = md.load_checkpoint(
                _require(trained / f"{variant}_s{seed}.ckpt", f"checkpoint {variant} seed {seed}"))
            nae, surp, bs_nae = [], [], []
            for e in stories:
                enc = md.encode_sentence(variant, e.actions, vocab)
                al = mx.align(enc, e.pos_tags)
                _, rec = md.forward(model, enc.ids, enc.plan)
                nae.extend(mx.word_nae(rec, al, cfg.weighting, diagnostics))
                surp.extend(mx.word_surprisal(md.score_sequence(model, enc.ids, enc.plan), al))
                if variant == "TG" and beams is not None:
                    bs_nae.extend(_beam_sentence(model, vocab, e, beams, cfg.weighting, diagnostics))
            table[f"{prefix}_nae__s{seed}"] = nae
            table[f"{prefix}_surp__s{seed}"] = surp
            if bs_nae:
                table[f"tg_bs_nae__s{seed}"] = [v[0] for v in bs_nae]
                table["stack_count_bs"] = [v[1] for v in bs_nae]
        for kind in ("nae", "surp"):
            cols = [f"{prefix}_{kind}__s{s}" for s in cfg.seeds]
            table[f"{prefix}_{kind}"] = table[cols].mean(axis=1)
        if variant == "TG" and beams is not None:
            table["tg_bs_nae"] = table[[f"tg_bs_nae__s{s}" for s in cfg.seeds]].mean(axis=1)
    table.to_csv(out / "words.tsv", sep="\t", index=False, float_format="%.10g")
    _dump({"zero_mass_rows": diagnostics.zero_mass, "nae_rows": diagnostics.rows},
          out / "diagnostics.json")
    write_manifest(cfg, "extract", out)
    return out


def _beam_sentence(model, vocab, entry, beams, weighting, diagnostics):
    """Per-word (beam NAE, beam stack count) for one sentence."""
    from . import model as md
    from .treebank import read_tree

    story, index = entry.story, int(entry.actions.sentence_id.split(":")[1])
    cands = []
    for prob, tree in beams.get((story, index), []):
        seq, _ = read_tree(tree)
        if seq.words != entry.actions.words:
            raise ConfigError(f"beam structure for {story}:{index} has different words")
        enc = md.encode_sentence("TG", seq, vocab)
        _, rec = md.forward(model, enc.ids, enc.plan)
        tal, depths = mx.tree_alignment(seq)
        cands.append(mx.BeamCandidate(seq, prob, mx.word_nae(rec, mx.align(enc), weighting, diagnostics),
                                      mx.word_stack_count(depths, tal)))
    if not cands:
        # no beam given: the gold structure alone
        enc = md.encode_sentence("TG", entry.actions, vocab)
        _, rec = md.forward(model, enc.ids, enc.plan)
        tal, depths = mx.tree_alignment(entry.actions)
        cands.append(mx.BeamCandidate(entry.actions, 1.0, mx.word_nae(rec, mx.align(enc), weighting),
                                      mx.word_stack_count(depths, tal)))
    n = len(entry.actions.words)
    return [(mx.beam_nae(cands, w), mx.beam_stack_count(cands, w)) for w in range(n)]


# --------------------------------------------------------------------------
# ingest


def _predictor_columns(table: pd.DataFrame) -> list[str]:
    skip = {"story", "zone", "sentence", "position", "word", "pos"}
    return [c for c in table.columns if c not in skip]


def ingest_stage(cfg: PipelineConfig) -> Path:
    words = pd.read_csv(_require(cfg.out / "extract" / "words.tsv", "word table (run extract)"),
                        sep="\t", dtype={"story": str, "pos": str}, keep_default_na=False,
                        na_values=[""])
    words["pos"] = words["pos"].fillna("")
    rt_path = _require(cfg.path(cfg.rt), "RT corpus")
    out = _stage_dir(cfg, "ingest")
    positions = {
        (r.story, int(r.zone)): ing.WordPosition(int(r.sentence), int(r.position), 0, r.word, r.pos)
        for r in words.itertuples()
    }
    lengths = words.groupby(["story", "sentence"])["position"].max()
    positions = {k: ing.WordPosition(v.sentence, v.position, int(lengths[(k[0], v.sentence)]),
                                     v.word, v.pos) for k, v in positions.items()}
    rows = ing.load_rt(rt_path)
    kept, report = ing.preprocess(rows, positions, tuple(cfg.rt_bounds))
    predictors = _predictor_columns(words)
    feats = mx.build_features(
        words, mx.FeatureConfig(predictors=[c for c in predictors if c not in mx.POSITIONAL],
                                zscore=False))
    extra, extra_cols = None, ()
    if cfg.covariates:
        extra = pd.read_csv(_require(cfg.path(cfg.covariates), "covariate table"), sep=None,
                            engine="python", dtype={"story": str})
        extra_cols = tuple(cfg.covariate_columns)
    data = ing.join(kept, feats, extra, extra_cols)
    if data["excluded"].any():
        bad = data[data["excluded"]].iloc[0]
        raise ConfigError(f"analysis row story {bad['story']} zone {bad['zone']} lacks a predictor")
    z_cols = [c for c in data.columns
              if c not in {"participant", "story", "zone", "word", "rt", "log_rt", "sentence",
                           "pos", "excluded"}]
    data = mx.zscore_columns(data, z_cols)
    report["mean_rt"] = float(data["rt"].mean())
    data.drop(columns=["excluded"]).to_csv(out / "analysis.tsv", sep="\t", index=False,
                                            float_format="%.10g")
    _dump(report, out / "exclusions.json")
    write_manifest(cfg, "ingest", out)
    return out


# --------------------------------------------------------------------------
# fit


def _so(cols: Sequence[str]) -> list[str]:
    return [c for base in cols for c in (base, f"{base}_so")]


BASELINE = ["zone", "position", *_so(BASE_PREDICTORS)]


@dataclass
class Suite:
    baseline: list[str]
    additions: dict[str, list[str]]
    per_seed: bool = True
    lrt: bool = True
    pos: bool = False
    requires: tuple[str, ...] = ()


def _without(cols, drop):
    return [c for c in cols if c not in drop]


SUITES: dict[str, Suite] = {
    "baseline": Suite(BASELINE, {}, per_seed=False, lrt=False),
    "nae": Suite(BASELINE, {"TG": _so(["tg_nae"]), "Transformer": _so(["tf_nae"])}, lrt=False),
    "both-nae": Suite(BASELINE, {"TG": _so(["tg_nae"]), "Transformer": _so(["tf_nae"])},
                      per_seed=False, pos=True),
    "surprisal": Suite(
        _without(BASELINE, _so(["tg_surp", "tf_surp"])) + _so(["tg_nae", "tf_nae"]),
        {"TG": _so(["tg_surp"]), "Transformer": _so(["tf_surp"])}),
    "tg-vs-tgcomp": Suite(BASELINE + _so(["tgc_surp", "tf_nae"]),
                          {"TG": _so(["tg_nae"]), "TGminusComp": _so(["tgc_nae"])}, pos=True),
    "tg-vs-tgcomp-weak": Suite(BASELINE + _so(["tgc_surp"]),
                               {"TG": _so(["tg_nae"]), "TGminusComp": _so(["tgc_nae"])}),
    "clt": Suite(BASELINE, {"TG": _so(["tg_nae"]), "CLT": _so(["clt"])}, per_seed=False,
                 requires=("clt",)),
    "beam": Suite(_without(BASELINE, _so(["stack_count"])) + _so(["stack_count_bs"]),
                  {"TG": _so(["tg_bs_nae"]), "Transformer": _so(["tf_nae"])},
                  requires=("tg_bs_nae",)),
}


def _seed_cols(cols: Sequence[str], seed: int | None) -> list[str]:
    if seed is None:
        return list(cols)
    out = []
    for c in cols:
        so = c.endswith("_so")
        base = c[:-3] if so else c
        out.append(f"{base}__s{seed}{'_so' if so else ''}" if base in MODEL_DERIVED else c)
    return out


def _fit_entry(fit, names_public, mean_rt) -> dict:
    from .stats import effect_size_ms

    coefs = []
    for public, row in zip(["(Intercept)", *names_public], fit.table()):
        coefs.append({**row, "name": public, "effect_ms": effect_size_ms(row["beta"], mean_rt)})
    return {"loglik": fit.loglik, "n": fit.n, "converged": fit.converged,
            "variance": fit.variance_components, "coefficients": coefs}


def fit_stage(cfg: PipelineConfig, suites: Sequence[str] | None = None) -> Path:
    from .stats import ModelSpec, delta_loglik, fit_lme, lrt, pos_delta_rmse

    ingest_dir = cfg.out / "ingest"
    data = pd.read_csv(_require(ingest_dir / "analysis.tsv", "analysis table (run ingest)"),
                       sep="\t", dtype={"story": str, "participant": str, "pos": str},
                       keep_default_na=False, na_values=[""])
    data["pos"] = data["pos"].fillna("")
    excl = json.loads((ingest_dir / "exclusions.json").read_text())
    mean_rt = float(excl["mean_rt"])
    out = _stage_dir(cfg, "fit")
    suites = list(suites or cfg.suites)
    results: dict = {}
    for name in suites:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}")
        suite = SUITES[name]
        missing = [c for c in suite.requires if c not in data]
        if missing:
            raise ConfigError(f"suite {name!r} needs column(s) {missing}")

        def fit(cols, seed=None):
            actual = _seed_cols(cols, seed)
            return fit_lme(data, ModelSpec("log_rt", actual)), cols

        entry: dict = {"baseline": suite.baseline, "additions": suite.additions}
        base_avg, _ = fit(suite.baseline)
        entry["baseline_fit"] = _fit_entry(base_avg, suite.baseline, mean_rt)
        if suite.per_seed and suite.additions:
            per_seed = {}
            seed_base = {seed: fit(suite.baseline, seed)[0] for seed in cfg.seeds}
            for label, cols in suite.additions.items():
                rows = []
                for seed in cfg.seeds:
                    b = seed_base[seed]
                    e, names = fit(suite.baseline + cols, seed)
                    coef = {c["name"]: c for c in _fit_entry(e, names, mean_rt)["coefficients"]}
                    rows.append({"seed": seed, "delta_loglik": delta_loglik(b, e),
                                 "predictors": {c: coef[c] for c in cols}})
                d = np.array([r["delta_loglik"] for r in rows])
                per_seed[label] = {
                    "seeds": rows,
                    "mean": float(d.mean()),
                    "sd": float(d.std(ddof=1)) if len(d) > 1 else 0.0,
                }
            entry["per_seed"] = per_seed
        ext_fits = {}
        if suite.additions:
            singles = {}
            for label, cols in suite.additions.items():
                f, _ = fit(suite.baseline + cols)
                ext_fits[label] = f
                singles[label] = {"delta_loglik": delta_loglik(base_avg, f),
                                  "fit": _fit_entry(f, suite.baseline + cols, mean_rt)}
            entry["averaged"] = singles
        if suite.lrt and len(suite.additions) > 1:
            all_cols = suite.baseline + [c for cols in suite.additions.values() for c in cols]
            full, _ = fit(all_cols)
            entry["full_fit"] = _fit_entry(full, all_cols, mean_rt)
            entry["lrt"] = []
            for label, f in ext_fits.items():
                r = lrt(f, full)
                entry["lrt"].append({"full": "+".join(suite.additions), "nested": label,
                                     "chi2": r.chi2, "df": r.df, "p": r.pvalue,
                                     "delta_loglik": r.delta_loglik})
        if suite.pos and ext_fits:
            tokens = list(zip(data["story"], data["zone"]))
            try:
                entry["pos"] = pos_delta_rmse(base_avg, ext_fits, data["pos"].tolist(),
                                              [f"{s}:{z}" for s, z in tokens],
                                              min_count=cfg.pos_min_count)
            except ValueError as exc:
                entry["pos"] = {"error": type(exc).__name__, "message": str(exc)}
        results[name] = entry
    _dump({"mean_rt": mean_rt, "n": len(data), "suites": results}, out / "fits.json")
    write_manifest(cfg, "fit", out)
    return out


# --------------------------------------------------------------------------
# report


def report_stage(cfg: PipelineConfig) -> Path:
    from .stats import correlations

    fits = json.loads(_require(cfg.out / "fit" / "fits.json", "fit results (run fit)").read_text())
    data = pd.read_csv(cfg.out / "ingest" / "analysis.tsv", sep="\t", dtype={"story": str})
    exclusions = json.loads((cfg.out / "ingest" / "exclusions.json").read_text())
    out = _stage_dir(cfg, "report")
    dll_rows, lrt_rows, effect_rows, pos_rows = [], [], [], []
    for suite, entry in fits["suites"].items():
        for label, res in entry.get("per_seed", {}).items():
            dll_rows.append({"suite": suite, "model": label, "mean": res["mean"], "sd": res["sd"],
                             "per_seed": [r["delta_loglik"] for r in res["seeds"]]})
            for r in res["seeds"]:
                for pred, c in r["predictors"].items():
                    effect_rows.append({"suite": suite, "model": label, "seed": r["seed"],
                                        "predictor": pred, "beta": c["beta"], "se": c["se"],
                                        "p": c["p"], "effect_ms": c["effect_ms"]})
        if "per_seed" not in entry:
            for label, res in entry.get("averaged", {}).items():
                dll_rows.append({"suite": suite, "model": label, "mean": res["delta_loglik"],
                                 "sd": None, "per_seed": []})
                for c in res["fit"]["coefficients"]:
                    if c["name"] in entry["additions"][label]:
                        effect_rows.append({"suite": suite, "model": label, "seed": None,
                                            "predictor": c["name"], "beta": c["beta"],
                                            "se": c["se"], "p": c["p"],
                                            "effect_ms": c["effect_ms"]})
        for r in entry.get("lrt", []):
            lrt_rows.append({"suite": suite, **r})
        pos = entry.get("pos")
        if pos and "differences" in pos:
            for label, tags in pos["improvement"].items():
                for tag, r in tags.items():
                    pos_rows.append({"suite": suite, "test": "improvement", "model": label,
                                     "tag": tag, **r})
            for pair, tags in pos["differences"].items():
                for tag, r in tags.items():
                    pos_rows.append({"suite": suite, "test": "difference", "model": pair,
                                     "tag": tag, **r})
    corr_cols = [c for c in ("tg_nae", "tf_nae", "tgc_nae", "tg_surp", "tf_surp", "tgc_surp",
                             "stack_count", "wordlen", "unigram", "bigram", "trigram", "clt")
                 if c in data]
    corr = correlations(data, corr_cols)
    report = {
        "n_rows": fits["n"], "mean_rt": fits["mean_rt"], "exclusions": exclusions,
        "delta_loglik": dll_rows, "lrt": lrt_rows, "effects": effect_rows, "pos": pos_rows,
        "correlations": {"columns": corr_cols, "matrix": corr.to_numpy().tolist()},
    }
    _dump(report, out / "report.json")
    for name, rows in (("delta_loglik", dll_rows), ("lrt", lrt_rows), ("effects", effect_rows),
                       ("pos", pos_rows)):
        pd.DataFrame(rows).to_csv(out / f"{name}.tsv", sep="\t", index=False, float_format="%.10g")
    corr.to_csv(out / "correlations.tsv", sep="\t", float_format="%.10g")
    write_manifest(cfg, "report", out)
    return out


STAGES = {
    "prepare": prepare,
    "train": train_stage,
    "extract": extract_stage,
    "ingest": ingest_stage,
    "fit": fit_stage,
    "report": report_stage,
}


def run_all(cfg: PipelineConfig) -> Path:
    for stage in STAGES.values():
        stage(cfg)
    return cfg.out / "report" / "report.json"
