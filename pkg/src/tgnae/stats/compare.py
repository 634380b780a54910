"""Model comparisons: ΔLogLik, likelihood-ratio tests, effect sizes, per-POS ΔRMSE."""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from ..metrics import DegenerateColumn
from .lme import RegressionFit
from .signed_rank import bonferroni, wilcoxon


class NotNested(ValueError):
    pass


class InsufficientCount(ValueError):
    pass


@dataclass
class LRTResult:
    chi2: float
    df: int
    pvalue: float
    delta_loglik: float


def _check_nested(small: RegressionFit, big: RegressionFit) -> None:
    if small.n != big.n or small.response_key != big.response_key:
        raise NotNested("fits were made on different rows")
    missing = set(small.names) - set(big.names)
    if missing:
        raise NotNested(f"extended model lacks {sorted(missing)}")


def delta_loglik(base: RegressionFit, ext: RegressionFit) -> float:
    _check_nested(base, ext)
    return ext.loglik - base.loglik


def chi2_pvalue(chi2: float, df: int) -> float:
    """Upper tail of the chi-square distribution; negative statistics count as zero."""
    if df < 1:
        raise ValueError("df must be positive")
    return float(stats.chi2.sf(max(chi2, 0.0), df))


def lrt(nested: RegressionFit, full: RegressionFit) -> LRTResult:
    _check_nested(nested, full)
    df = len(full.names) - len(nested.names)
    if df < 1:
        raise NotNested("full model adds no fixed effects")
    delta = full.loglik - nested.loglik
    chi2 = 2.0 * delta
    return LRTResult(chi2, df, chi2_pvalue(chi2, df), delta)


def effect_size_ms(beta: float, mean_rt: float) -> float:
    """RT change in ms at ``mean_rt`` for +1 SD of a z-scored predictor of log RT."""
    return math.expm1(beta) * mean_rt


def correlations(table: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Pearson correlation matrix of ``columns``."""
    if len(table) < 2:
        raise DegenerateColumn("need at least two rows")
    values = table[list(columns)].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise DegenerateColumn("columns must be finite")
    sd = values.std(axis=0)
    if (sd == 0).any():
        bad = [c for c, s in zip(columns, sd) if s == 0]
        raise DegenerateColumn(f"zero-variance columns: {bad}")
    r = np.corrcoef(values, rowvar=False)
    r = np.atleast_2d(r)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    return pd.DataFrame(r, index=list(columns), columns=list(columns))


# --------------------------------------------------------------------------
# per-POS analysis


_SYMBOL_SUFFIX = re.compile(r"[^A-Za-z$]+$")


def clean_pos_tag(tag: str) -> str | None:
    """Strip trailing punctuation tags (``NNP.`` -> ``NNP``); ``None`` for multi-tag regions."""
    tag = str(tag).strip()
    if not tag or " " in tag:
        return None
    stripped = _SYMBOL_SUFFIX.sub("", tag)
    return stripped or None


def token_delta_rmse(fit_base: RegressionFit, fit_ext: RegressionFit, tokens) -> pd.Series:
    """Per word token: RMSE of the base fit minus RMSE of the extended fit.

    Squared errors are averaged across the data points (participants) of each
    token before taking roots.
    """
    _check_nested(fit_base, fit_ext)
    frame = pd.DataFrame({
        "token": list(tokens),
        "base": (fit_base.y - fit_base.fitted) ** 2,
        "ext": (fit_ext.y - fit_ext.fitted) ** 2,
    })
    g = frame.groupby("token", sort=True)[["base", "ext"]].mean()
    return np.sqrt(g["base"]) - np.sqrt(g["ext"])


def pos_delta_rmse(base: RegressionFit, ext: Mapping[str, RegressionFit], pos_tags,
                   tokens, min_count: int = 1000, alpha: float = 0.05) -> dict:
    """Per-POS improvement of each extended fit over ``base`` and pairwise differences.

    ``pos_tags`` and ``tokens`` are per data point. A tag is tested when it
    has more than ``min_count`` data points. Improvement is tested one-sided
    (``greater``) per tag and model; pairwise differences two-sided, only for
    tags where some model improved significantly. Each family is
    Bonferroni-corrected by the number of tags it tests.
    """
    pos_tags = [clean_pos_tag(t) for t in pos_tags]
    tokens = list(tokens)
    token_tag: dict = {}
    for t, p in zip(tokens, pos_tags):
        token_tag.setdefault(t, p)
    counts = pd.Series([p for p in pos_tags if p is not None]).value_counts()
    tested = sorted(t for t, c in counts.items() if c > min_count)
    skipped = {t: f"InsufficientCount: {int(c)} <= {min_count}"
               for t, c in counts.items() if c <= min_count}
    if not tested:
        raise InsufficientCount(f"no POS tag has more than {min_count} data points")
    deltas = {name: token_delta_rmse(base, fit, tokens) for name, fit in ext.items()}
    token_index = token_delta_rmse(base, base, tokens).index
    tag_of = pd.Series([token_tag[t] for t in token_index], index=token_index)

    improvement: dict[str, dict] = {}
    for name, delta in deltas.items():
        raw = []
        for tag in tested:
            vals = delta[tag_of == tag].to_numpy()
            raw.append(wilcoxon(vals, "greater").pvalue)
        adj = bonferroni(raw, len(tested))
        improvement[name] = {
            tag: {
                "mean": float(delta[tag_of == tag].mean()),
                "n_tokens": int((tag_of == tag).sum()),
                "p": float(p), "p_bonferroni": float(pa), "significant": bool(pa < alpha),
            }
            for tag, p, pa in zip(tested, raw, adj)
        }

    differences: dict[str, dict] = {}
    names = list(deltas)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = names[i], names[j]
            tags = [t for t in tested
                    if improvement[a][t]["significant"] or improvement[b][t]["significant"]]
            raw, rows = [], []
            for tag in tags:
                diff = (deltas[a] - deltas[b])[tag_of == tag].to_numpy()
                raw.append(wilcoxon(diff, "two-sided").pvalue)
                se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else math.nan
                rows.append((float(diff.mean()), se, len(diff)))
            adj = bonferroni(raw, len(tags))
            differences[f"{a}-{b}"] = {
                tag: {"mean_diff": m, "se": se, "n_tokens": n, "p": float(p),
                      "p_bonferroni": float(pa), "significant": bool(pa < alpha)}
                for tag, (m, se, n), p, pa in zip(tags, rows, raw, adj)
            }
    return {"tested_tags": tested, "skipped": skipped, "improvement": improvement,
            "differences": differences, "min_count": min_count, "alpha": alpha}
