"""Reading-time corpora: loading, exclusion filters and joining to predictors."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

REQUIRED = ("participant", "story", "zone", "word", "rt")
INCLUDE_COLUMNS = ("include_participant", "include")
RT_BOUNDS = (100.0, 3000.0)
REASONS = (
    "participant_flag",
    "rt_below_min",
    "rt_above_max",
    "sentence_initial",
    "sentence_second",
    "sentence_final",
)


class MissingColumn(ValueError):
    pass


class UnparsableRow(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownZone(KeyError):
    pass


class UnmatchedZone(KeyError):
    pass


class DuplicateKey(ValueError):
    pass


@dataclass(frozen=True)
class RTObservation:
    participant: str
    story: str
    zone: int
    word: str
    rt_ms: float
    include_participant: bool = True


@dataclass(frozen=True)
class WordPosition:
    sentence: int
    position: int  # 1-based within the sentence
    length: int
    word: str = ""
    pos: str = ""


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def _parse_flag(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise UnparsableRow(line, f"bad include flag {value!r}")


def load_rt(source) -> list[RTObservation]:
    """Read a comma- or tab-delimited RT file (delimiter chosen from the header)."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines:
        raise MissingColumn("empty RT file")
    delim = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise MissingColumn(f"RT file lacks column(s): {', '.join(missing)}")
    col = {h: i for i, h in enumerate(header)}
    flag_col = next((c for c in INCLUDE_COLUMNS if c in col), None)
    rows = []
    for line_no, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise UnparsableRow(line_no, f"expected {len(header)} fields, got {len(rec)}")
        try:
            zone = int(rec[col["zone"]])
            rt = float(rec[col["rt"]])
        except ValueError as exc:
            raise UnparsableRow(line_no, str(exc)) from None
        if not (math.isfinite(rt) and rt > 0):
            raise UnparsableRow(line_no, f"rt must be positive, got {rec[col['rt']]!r}")
        if zone < 1:
            raise UnparsableRow(line_no, f"zone must be >= 1, got {zone}")
        include = _parse_flag(rec[col[flag_col]], line_no) if flag_col else True
        rows.append(RTObservation(rec[col["participant"]].strip(), rec[col["story"]].strip(),
                                  zone, rec[col["word"]], rt, include))
    return rows


def word_positions(entries) -> dict[tuple[str, int], WordPosition]:
    """Zone table for treebank entries, numbering words 1.. per story in file order."""
    table: dict[tuple[str, int], WordPosition] = {}
    zone: dict[str, int] = {}
    sentence: dict[str, int] = {}
    for e in entries:
        words = e.actions.words
        sentence[e.story] = sentence.get(e.story, 0) + 1
        for i, w in enumerate(words):
            zone[e.story] = zone.get(e.story, 0) + 1
            tag = e.pos_tags[i] if i < len(e.pos_tags) else ""
            table[(e.story, zone[e.story])] = WordPosition(sentence[e.story], i + 1, len(words), w, tag)
    return table


def exclusion_reason(row: RTObservation, wp: WordPosition, bounds=RT_BOUNDS) -> str | None:
    """First triggering exclusion reason, in the order of ``REASONS``."""
    if not row.include_participant:
        return "participant_flag"
    if row.rt_ms < bounds[0]:
        return "rt_below_min"
    if row.rt_ms > bounds[1]:
        return "rt_above_max"
    if wp.position == 1:
        return "sentence_initial"
    if wp.position == 2:
        return "sentence_second"
    if wp.position == wp.length:
        return "sentence_final"
    return None


def preprocess(rows: Iterable[RTObservation], positions: Mapping[tuple[str, int], WordPosition],
               bounds=RT_BOUNDS) -> tuple[list[RTObservation], dict]:
    """Drop excluded rows; RT bounds are inclusive.

    The report counts each dropped row once under its first reason.
    """
    kept: list[RTObservation] = []
    counts = {r: 0 for r in REASONS}
    n_in = 0
    for row in rows:
        n_in += 1
        key = (row.story, row.zone)
        if key not in positions:
            raise UnknownZone(f"story {row.story!r} zone {row.zone} not in the word table")
        reason = exclusion_reason(row, positions[key], bounds)
        if reason is None:
            kept.append(row)
        else:
            counts[reason] += 1
    report = {"input": n_in, "kept": len(kept), "excluded": counts,
              "rt_bounds": list(bounds)}
    return kept, report


def observations_frame(rows: Sequence[RTObservation]) -> pd.DataFrame:
    return pd.DataFrame({
        "participant": [r.participant for r in rows],
        "story": [r.story for r in rows],
        "zone": [r.zone for r in rows],
        "word": [r.word for r in rows],
        "rt": [r.rt_ms for r in rows],
    })


def join(rows: Sequence[RTObservation], features: pd.DataFrame,
         extra: pd.DataFrame | None = None, extra_columns: Sequence[str] = ()) -> pd.DataFrame:
    """Inner-join RT rows to per-word features on ``(story, zone)``.

    ``extra`` supplies external covariates keyed by ``(story, zone)``; each
    listed column also gets a ``_so`` copy from the previous word of the same
    sentence.
    """
    feats = features.copy()
    feats["story"] = feats["story"].astype(str)
    feats["zone"] = feats["zone"].astype(int)
    dup = feats.duplicated(["story", "zone"], keep=False)
    if dup.any():
        first = feats[dup].iloc[0]
        raise DuplicateKey(f"feature table repeats story {first['story']!r} zone {first['zone']}")
    if extra is not None and len(extra_columns):
        ext = extra[["story", "zone", *extra_columns]].copy()
        ext["story"] = ext["story"].astype(str)
        ext["zone"] = ext["zone"].astype(int)
        if ext.duplicated(["story", "zone"]).any():
            raise DuplicateKey("external covariate table repeats a (story, zone) key")
        ext = feats[["story", "zone", "sentence"]].merge(ext, on=["story", "zone"], how="left")
        ext = ext.sort_values(["story", "zone"], kind="stable")
        same = (ext["story"].shift(1) == ext["story"]) & (ext["sentence"].shift(1) == ext["sentence"])
        for c in extra_columns:
            so = ext[c].shift(1)
            so[~same] = np.nan
            ext[f"{c}_so"] = so
        feats = feats.merge(ext.drop(columns=["sentence"]), on=["story", "zone"], how="left")
    obs = observations_frame(rows)
    keys = set(zip(feats["story"], feats["zone"]))
    for s, z in zip(obs["story"], obs["zone"]):
        if (s, z) not in keys:
            raise UnmatchedZone(f"no features for story {s!r} zone {z}")
    out = obs.merge(feats.drop(columns=["word"], errors="ignore"), on=["story", "zone"],
                    how="inner", validate="many_to_one")
    out["log_rt"] = np.log(out["rt"])
    return out
