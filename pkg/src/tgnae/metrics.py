"""Word-level predictors: normalized attention entropy, surprisal, stack count."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .treebank import (
    ActionSequence,
    Kind,
    Mode,
    build_attention_plan,
    duplicate_closes,
    simulate_stack,
)


class EmptyT(ValueError):
    pass


class ZeroMass(ValueError):
    pass


class MissingAlignment(ValueError):
    pass


class ZeroTotalWeight(ValueError):
    pass


class DegenerateColumn(ValueError):
    pass


def nae_row(weights, T: Iterable[int]) -> float:
    """Entropy of ``weights`` renormalized over ``T``, divided by ``log2 |T|``."""
    idx = sorted(set(T))
    if not idx:
        raise EmptyT("no preceding positions to attend to")
    w = np.asarray(weights, dtype=np.float64)[idx]
    if (w < 0).any():
        raise ValueError("attention weights must be nonnegative")
    if len(idx) == 1:
        return 0.0
    mass = w.sum()
    if not mass > 0:
        raise ZeroMass("all attention mass lies outside T")
    p = w / mass
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log2(nz)))
    return min(1.0, max(0.0, h / math.log2(len(idx))))


# --------------------------------------------------------------------------
# alignment between words and model positions


@dataclass
class WordSlot:
    word: str
    queries: tuple[int, ...]
    scored: tuple[int, ...]
    last_position: int
    pos: str = ""


@dataclass
class WordAlignment:
    variant: str
    slots: list[WordSlot]
    preceding: dict[int, tuple[int, ...]]
    n_positions: int
    sentence_id: str = ""

    def __len__(self) -> int:
        return len(self.slots)


def _word_action_ranges(actions: ActionSequence, word_of_terminal: Sequence[int]) -> list[int]:
    """Owner word of every action.

    An action belongs to the first word whose last terminal is at or after it;
    trailing actions after the final terminal go to the final word.
    """
    terms = actions.terminal_positions
    last_of: dict[int, int] = {}
    for pos, w in zip(terms, word_of_terminal):
        last_of[w] = pos
    n_words = len(last_of)
    owner = []
    w = 0
    for k in range(len(actions)):
        while w < n_words - 1 and k > last_of[w]:
            w += 1
        owner.append(w)
    return owner


def align(enc, pos_tags: Sequence[str] | None = None, words: Sequence[str] | None = None) -> WordAlignment:
    """Build a :class:`WordAlignment` from a model encoding (see ``model.Encoded``)."""
    return align_positions(
        enc.variant, enc.actions, enc.plan, enc.action_of, enc.lexical, enc.scored,
        len(enc.ids), pos_tags, words,
    )


def align_positions(variant, actions: ActionSequence, plan, action_of: Sequence[int],
                    lexical: Mapping[int, int], scored, n_positions: int,
                    pos_tags=None, words=None) -> WordAlignment:
    term_positions = actions.terminal_positions
    by_action = {action_of[p]: w for p, w in lexical.items()}
    word_of_terminal = [by_action[k] for k in term_positions]
    owner = _word_action_ranges(actions, word_of_terminal)
    n_words = max(word_of_terminal) + 1

    queries: list[list[int]] = [[] for _ in range(n_words)]
    for p in sorted(lexical):
        if plan.modes[p] is not Mode.STACK:
            raise MissingAlignment(f"lexical position {p} is not a STACK row")
        queries[lexical[p]].append(p)
    attributed: list[list[int]] = [[] for _ in range(n_words)]
    last = [-1] * n_words
    for p, k in enumerate(action_of):
        w = owner[k]
        last[w] = max(last[w], p)
        if scored[p]:
            attributed[w].append(p)
    preceding = {p: tuple(sorted(j for j in plan.attendable[p] if j < p)) for p in lexical}
    tags = list(pos_tags) if pos_tags is not None else [""] * n_words
    if words is None:
        pieces: list[list[str]] = [[] for _ in range(n_words)]
        for k, w in zip(term_positions, word_of_terminal):
            pieces[w].append(actions[k].label)
        words = ["".join(p) for p in pieces]
    slots = [
        WordSlot(words[w], tuple(queries[w]), tuple(attributed[w]), last[w], tags[w])
        for w in range(n_words)
    ]
    return WordAlignment(variant, slots, preceding, n_positions, actions.sentence_id)


def tree_alignment(seq: ActionSequence, pos_tags: Sequence[str] | None = None):
    """Word alignment over the close-duplicated tree, for stack counts.

    Returns ``(alignment, depths)`` where ``depths[p]`` is the stack depth
    after duplicated position ``p``.
    """
    d = duplicate_closes(seq)
    plan = build_attention_plan(d)
    depths = [s.depth for s in simulate_stack(d)]
    term_word = {k: w for w, k in enumerate(seq.terminal_positions)}
    lexical = {
        p: term_word[k]
        for p, k in enumerate(d.origin_index)
        if d.items[p].kind is Kind.TERMINAL
    }
    scored = np.zeros(len(d), dtype=bool)
    scored[1:] = plan.target_mask[:-1]
    al = align_positions("TG", seq, plan, d.origin_index, lexical, scored, len(d), pos_tags)
    return al, depths


# --------------------------------------------------------------------------
# per-word predictors


@dataclass
class NAEDiagnostics:
    zero_mass: int = 0
    rows: int = 0


def word_nae(rec, al: WordAlignment, weighting: str = "norm",
             diagnostics: NAEDiagnostics | None = None) -> np.ndarray:
    """Top-layer NAE per word: summed over heads, then over the word's pieces.

    ``rec`` is an ``AttentionRecord`` or an array ``[heads, L, L]``.
    Rows with an empty preceding set contribute ``nan``.
    """
    if weighting not in ("norm", "raw"):
        raise ValueError(f"weighting must be 'norm' or 'raw', not {weighting!r}")
    top = rec.top(weighting) if hasattr(rec, "top") else np.asarray(rec)
    if top.shape[-1] != al.n_positions:
        raise MissingAlignment(
            f"record covers {top.shape[-1]} positions, alignment {al.n_positions}"
        )
    out = np.zeros(len(al.slots))
    for w, slot in enumerate(al.slots):
        if not slot.queries:
            raise MissingAlignment(f"word {w} has no lexical positions")
        total = 0.0
        for p in slot.queries:
            T = al.preceding[p]
            if not T:
                total = math.nan
                continue
            for h in range(top.shape[0]):
                if diagnostics is not None:
                    diagnostics.rows += 1
                try:
                    total += nae_row(top[h, p], T)
                except ZeroMass:
                    if diagnostics is not None:
                        diagnostics.zero_mass += 1
        out[w] = total
    return out


def word_surprisal(scores, al: WordAlignment) -> np.ndarray:
    """Sum of the NLLs of the items attributed to each word."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != al.n_positions:
        raise MissingAlignment(
            f"scores cover {len(scores)} positions, alignment {al.n_positions}"
        )
    out = np.zeros(len(al.slots))
    for w, slot in enumerate(al.slots):
        vals = scores[list(slot.scored)]
        if np.isnan(vals).any():
            raise MissingAlignment(f"word {w} is attributed an unscored position")
        out[w] = vals.sum()
    return out


def word_stack_count(depths: Sequence[int], al: WordAlignment) -> np.ndarray:
    """Stack depth right after each word's last attributed action."""
    out = np.zeros(len(al.slots), dtype=int)
    for w, slot in enumerate(al.slots):
        if not 0 <= slot.last_position < len(depths):
            raise MissingAlignment(f"word {w} has no position in the stack trace")
        out[w] = depths[slot.last_position]
    return out


# --------------------------------------------------------------------------
# beam aggregation


@dataclass
class BeamCandidate:
    structure: ActionSequence | None
    prob: float
    nae: Sequence[float]
    stack_count: Sequence[float] = field(default_factory=list)


def _weighted(cands: Sequence[BeamCandidate], values: Sequence[float]) -> float:
    if not cands:
        raise ZeroTotalWeight("empty beam")
    p = np.array([c.prob for c in cands], dtype=np.float64)
    if (p < 0).any():
        raise ValueError("beam weights must be nonnegative")
    total = p.sum()
    if not total > 0:
        raise ZeroTotalWeight("beam weights sum to zero")
    if len(cands) == 1:
        return float(values[0])
    return float(np.dot(p, values) / total)


def beam_nae(cands: Sequence[BeamCandidate], w: int) -> float:
    """Probability-weighted mean NAE of word ``w`` across beam structures."""
    return _weighted(cands, [c.nae[w] for c in cands])


def beam_stack_count(cands: Sequence[BeamCandidate], w: int) -> float:
    return _weighted(cands, [c.stack_count[w] for c in cands])


# --------------------------------------------------------------------------
# feature tables


POSITIONAL = ("zone", "position")


@dataclass
class FeatureConfig:
    predictors: Sequence[str]
    positional: Sequence[str] = POSITIONAL
    spillover: bool = True
    zscore: bool = True
    no_spillover: Sequence[str] = ()


def zscore_columns(df: pd.DataFrame, columns: Iterable[str], rows=None) -> pd.DataFrame:
    """Standardize ``columns`` using the mean and sample SD over ``rows``."""
    out = df.copy()
    ref = df if rows is None else df[rows]
    for c in columns:
        vals = ref[c].to_numpy(dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        if len(vals) < 2:
            raise DegenerateColumn(f"column {c!r} has fewer than two finite values")
        sd = vals.std(ddof=1)
        if not sd > 0:
            raise DegenerateColumn(f"column {c!r} has zero variance")
        out[c] = (df[c].astype(np.float64) - vals.mean()) / sd
    return out


def build_features(words: pd.DataFrame | Iterable[Mapping], cfg: FeatureConfig) -> pd.DataFrame:
    """Add spillover copies, flag incomplete rows and z-transform.

    ``words`` needs ``story``, ``sentence`` and ``position`` columns, ordered
    within story. The spillover copy ``<name>_so`` is the previous word's value
    in the same sentence; sentence-initial words have none and are flagged in
    the ``excluded`` column.
    """
    df = pd.DataFrame(words).reset_index(drop=True)
    df = df.sort_values(["story", "sentence", "position"], kind="stable").reset_index(drop=True)
    columns = list(cfg.positional) + list(cfg.predictors)
    if cfg.spillover:
        prev_same = (df["story"].shift(1) == df["story"]) & (
            df["sentence"].shift(1) == df["sentence"]
        )
        for c in cfg.predictors:
            if c in cfg.no_spillover:
                continue
            so = df[c].shift(1).astype(np.float64)
            so[~prev_same] = np.nan
            df[f"{c}_so"] = so
            columns.append(f"{c}_so")
    values = df[columns].to_numpy(dtype=np.float64)
    df["excluded"] = ~np.isfinite(values).all(axis=1)
    if cfg.zscore:
        df = zscore_columns(df, columns, rows=~df["excluded"])
    return df
