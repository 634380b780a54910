"""Synthetic fixtures: a toy PCFG treebank and self-paced-reading data."""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

_PRETERMINAL = re.compile(r"\([^\s()]+ [^\s()]+\)")

# nonterminal -> [(probability, right-hand side)]
GRAMMAR: dict[str, list[tuple[float, tuple[str, ...]]]] = {
    "S": [(0.85, ("NP", "VP")), (0.15, ("NP", "VP", "SBAR"))],
    "NP": [(0.45, ("DT", "NN")), (0.25, ("DT", "JJ", "NN")), (0.15, ("NP", "PP")),
           (0.15, ("PRP",))],
    "VP": [(0.35, ("VBZ", "NP")), (0.25, ("VBD",)), (0.25, ("VBZ", "NP", "PP")),
           (0.15, ("VBD", "ADVP"))],
    "PP": [(1.0, ("IN", "NP"))],
    "SBAR": [(1.0, ("WDT", "S"))],
    "ADVP": [(1.0, ("RB",))],
}

LEXICON: dict[str, tuple[str, ...]] = {
    "DT": ("the", "a", "every", "some"),
    "NN": ("bird", "dog", "cat", "farmer", "river", "house", "song", "garden", "letter", "storm"),
    "JJ": ("blue", "old", "quiet", "bright", "small", "heavy"),
    "PRP": ("she", "he", "they", "it"),
    "VBZ": ("sees", "likes", "finds", "carries", "hears", "follows"),
    "VBD": ("slept", "laughed", "waited", "sang", "left"),
    "IN": ("near", "with", "under", "behind"),
    "WDT": ("because", "while"),
    "RB": ("quickly", "later", "again"),
}


def _expand(symbol: str, rng: np.random.Generator, depth: int, max_depth: int) -> str:
    if symbol in LEXICON:
        words = LEXICON[symbol]
        return f"({symbol} {words[rng.integers(len(words))]})"
    rules = GRAMMAR[symbol]
    if depth >= max_depth:
        # fall back to the shortest rule so generation terminates
        rules = [min(rules, key=lambda r: (len(r[1]), any(s in GRAMMAR for s in r[1])))]
    probs = np.array([p for p, _ in rules])
    rhs = rules[rng.choice(len(rules), p=probs / probs.sum())][1]
    inner = " ".join(_expand(s, rng, depth + 1, max_depth) for s in rhs)
    return f"({symbol} {inner})"


def sample_tree(rng: np.random.Generator, max_depth: int = 6, max_words: int = 12) -> str:
    """One Penn-style tree (with preterminals) from the toy grammar."""
    while True:
        tree = _expand("S", rng, 0, max_depth)
        if _n_words(tree) <= max_words:
            return tree


def _n_words(tree: str) -> int:
    return len(_PRETERMINAL.findall(tree))


def sample_treebank(n: int, seed: int = 0, max_words: int = 12) -> list[str]:
    rng = np.random.default_rng(seed)
    return [sample_tree(rng, max_words=max_words) for _ in range(n)]


def write_stories(path, n_stories: int, sentences_per_story: int, seed: int = 0) -> None:
    """Analysis treebank: ``story<TAB>tree`` lines."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for s in range(1, n_stories + 1):
            fh.writelines(f"{s}\t{sample_tree(rng, max_words=12)}\n" for _ in range(sentences_per_story))


@dataclass
class RTDesign:
    participants: int = 20
    base_log_rt: float = 5.8
    participant_sd: float = 0.15
    story_sd: float = 0.05
    noise_sd: float = 0.3
    wordlen_effect: float = 0.02
    exclude_participants: Sequence[int] = ()
    outlier_rate: float = 0.01


def simulate_rt(positions: dict, design: RTDesign, seed: int = 0,
                planted: dict | None = None) -> list[dict]:
    """Rows of ``participant, story, zone, word, rt, include_participant``.

    ``planted`` maps ``(story, zone)`` to an extra additive log-RT term.
    """
    rng = np.random.default_rng(seed)
    stories = sorted({s for s, _ in positions})
    p_eff = rng.normal(0, design.participant_sd, design.participants)
    s_eff = {s: rng.normal(0, design.story_sd) for s in stories}
    rows = []
    for p in range(design.participants):
        for (story, zone), wp in sorted(positions.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            mu = design.base_log_rt + p_eff[p] + s_eff[story] + design.wordlen_effect * len(wp.word)
            if planted:
                mu += planted.get((story, zone), 0.0)
            rt = float(np.exp(mu + rng.normal(0, design.noise_sd)))
            if rng.random() < design.outlier_rate:
                rt = float(rng.choice([rng.uniform(20, 99), rng.uniform(3001, 6000)]))
            rows.append({
                "participant": f"p{p + 1:03d}", "story": story, "zone": zone, "word": wp.word,
                "rt": round(rt, 3),
                "include_participant": int(p not in design.exclude_participants),
            })
    return rows
