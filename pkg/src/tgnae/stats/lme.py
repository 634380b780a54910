"""Linear mixed-effects models with crossed random intercepts, fitted by ML.

For ``y = X b + Z u + e`` with ``u_f ~ N(0, s_f^2 sigma^2)`` per grouping
factor ``f`` and ``e ~ N(0, sigma^2)``, the marginal covariance is
``sigma^2 (I + Z D^2 Z')`` with ``D`` holding the relative SDs ``s_f``.
The fixed effects and ``sigma^2`` are profiled out, leaving a likelihood over
the relative SDs only. Everything is computed from the small cross-products
``X'X, Z'Z, Z'X, ...`` so the cost per evaluation does not depend on ``n``.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats


class Singular(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass
class ModelSpec:
    response: str
    fixed: Sequence[str]
    groups: Sequence[str] = ("participant", "story")
    intercept: bool = True

    @property
    def names(self) -> list[str]:
        return (["(Intercept)"] if self.intercept else []) + list(self.fixed)


@dataclass
class RegressionFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    pvalue: np.ndarray
    sigma2: float
    group_var: dict[str, float]
    loglik: float
    n: int
    fitted: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    converged: bool = True
    response_key: str = ""

    @property
    def variance_components(self) -> dict[str, float]:
        return {**self.group_var, "residual": self.sigma2}

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def table(self) -> list[dict]:
        return [
            {"name": n, "beta": float(b), "se": float(s), "z": float(b / s) if s > 0 else math.nan,
             "p": float(p)}
            for n, b, s, p in zip(self.names, self.beta, self.se, self.pvalue)
        ]


@dataclass
class _Cross:
    XtX: np.ndarray
    Xty: np.ndarray
    yty: float
    ZtZ: np.ndarray
    ZtX: np.ndarray
    Zty: np.ndarray
    sizes: list[int]
    n: int


def _codes(values) -> np.ndarray:
    _, inv = np.unique(np.asarray(values).astype(str), return_inverse=True)
    return inv


def _cross_products(y, X, codes: list[np.ndarray]) -> _Cross:
    n = len(y)
    sizes = [int(c.max()) + 1 for c in codes]
    offsets = np.cumsum([0] + sizes)
    q = int(offsets[-1])
    ZtZ = np.zeros((q, q))
    ZtX = np.zeros((q, X.shape[1]))
    Zty = np.zeros(q)
    for f, c in enumerate(codes):
        o = offsets[f]
        ZtZ[o:o + sizes[f], o:o + sizes[f]] = np.diag(np.bincount(c, minlength=sizes[f]))
        for col in range(X.shape[1]):
            ZtX[o:o + sizes[f], col] = np.bincount(c, weights=X[:, col], minlength=sizes[f])
        Zty[o:o + sizes[f]] = np.bincount(c, weights=y, minlength=sizes[f])
        for g in range(f + 1, len(codes)):
            og = offsets[g]
            tab = np.zeros((sizes[f], sizes[g]))
            np.add.at(tab, (c, codes[g]), 1.0)
            ZtZ[o:o + sizes[f], og:og + sizes[g]] = tab
            ZtZ[og:og + sizes[g], o:o + sizes[f]] = tab.T
    return _Cross(X.T @ X, X.T @ y, float(y @ y), ZtZ, ZtX, Zty, sizes, n)


# Upper bound on relative SDs; beyond it the intercept is numerically confounded
# with the grouping factors and the profiled design matrix becomes singular.
MAX_REL_SD = 1e3


def _profile(cp: _Cross, rel_sd: np.ndarray):
    """Profiled quantities at relative SDs ``rel_sd`` (one per factor)."""
    d = np.repeat(rel_sd, cp.sizes)
    q = len(d)
    M = np.eye(q) + d[:, None] * cp.ZtZ * d[None, :]
    L = linalg.cholesky(M, lower=True)
    cX = linalg.solve_triangular(L, d[:, None] * cp.ZtX, lower=True)
    cy = linalg.solve_triangular(L, d * cp.Zty, lower=True)
    XtVX = cp.XtX - cX.T @ cX
    XtVy = cp.Xty - cX.T @ cy
    ytVy = cp.yty - cy @ cy
    beta = linalg.solve(XtVX, XtVy, assume_a="pos")
    rss = max(ytVy - beta @ XtVy, 1e-300)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    n = cp.n
    sigma2 = rss / n
    loglik = -0.5 * (n * math.log(2 * math.pi * sigma2) + n + logdet)
    return loglik, beta, sigma2, XtVX, L, d


def _design(data: pd.DataFrame, spec: ModelSpec):
    missing = [c for c in [spec.response, *spec.fixed, *spec.groups] if c not in data]
    if missing:
        raise KeyError(f"columns not in data: {missing}")
    y = data[spec.response].to_numpy(dtype=np.float64)
    cols = [data[c].to_numpy(dtype=np.float64) for c in spec.fixed]
    if spec.intercept:
        cols.insert(0, np.ones(len(data)))
    X = np.column_stack(cols) if cols else np.zeros((len(data), 0))
    if not (np.isfinite(y).all() and np.isfinite(X).all()):
        raise ValueError("response and fixed effects must be finite")
    if len(y) <= X.shape[1]:
        raise Singular(f"{len(y)} rows for {X.shape[1]} fixed effects")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise Singular("fixed-effect design matrix is rank deficient")
    codes = [_codes(data[g]) for g in spec.groups]
    return y, X, codes


def fit_lme(data: pd.DataFrame, spec: ModelSpec, rel_sd: Sequence[float] | None = None,
            tol: float = 1e-8, strict: bool = False) -> RegressionFit:
    """Maximum-likelihood fit (not REML).

    ``rel_sd`` pins the relative random-intercept SDs instead of optimizing
    them; ``rel_sd=(0, 0)`` gives ordinary least squares.
    """
    y, X, codes = _design(data, spec)
    cp = _cross_products(y, X, codes)
    k = len(codes)
    converged = True
    if k == 0:
        best = np.zeros(0)
    elif rel_sd is not None:
        best = np.asarray(rel_sd, dtype=np.float64)
    else:
        def objective(s):
            return -_profile(cp, np.abs(s))[0]

        best, best_val = None, math.inf
        converged = False
        for start in (0.1, 0.5, 1.5):
            res = optimize.minimize(
                objective, np.full(k, start), method="L-BFGS-B",
                bounds=[(0.0, MAX_REL_SD)] * k,
                options={"ftol": tol * 1e-4, "gtol": tol, "maxiter": 500},
            )
            if res.fun < best_val:
                best, best_val = np.abs(res.x), res.fun
            converged = converged or bool(res.success)
        # boundary optimum: zero components the optimizer left slightly positive
        for f in range(k):
            trial = best.copy()
            trial[f] = 0.0
            if objective(trial) <= best_val:
                best, best_val = trial, objective(trial)
        if strict and not converged:
            raise NotConverged("variance-ratio search did not converge")
    loglik, beta, sigma2, XtVX, L, d = _profile(cp, best)
    cov = sigma2 * linalg.inv(XtVX)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = beta / se
    pvalue = 2.0 * stats.norm.sf(np.abs(z))
    # BLUPs: u = D M^-1 D Z' r
    r_z = cp.Zty - cp.ZtX @ beta
    u = d * linalg.cho_solve((L, True), d * r_z) if len(d) else np.zeros(0)
    fitted = X @ beta
    offsets = np.cumsum([0] + cp.sizes)
    for f, c in enumerate(codes):
        fitted = fitted + u[offsets[f]:offsets[f + 1]][c]
    group_var = {g: float(best[f] ** 2 * sigma2) for f, g in enumerate(spec.groups)}
    return RegressionFit(
        names=spec.names, beta=beta, se=se, pvalue=pvalue, sigma2=float(sigma2),
        group_var=group_var, loglik=float(loglik), n=len(y), fitted=fitted, y=y,
        converged=converged, response_key=_key(y),
    )


def _key(y: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(y).tobytes()).hexdigest()


def ols_loglik(y, X) -> float:
    """Gaussian log-likelihood of an OLS fit at the ML variance."""
    y = np.asarray(y, dtype=np.float64)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(((y - X @ beta) ** 2).sum())
    n = len(y)
    return -0.5 * n * (math.log(2 * math.pi * rss / n) + 1)
