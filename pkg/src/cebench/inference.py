"""Sharpened FDR q-values and inverse-probability attrition weights."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

GRID_STEP = 0.001
PROPENSITY_FLOOR = 0.05


def _grid(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.arange(1, n + 1) / n


def sharpened_q(pvals: Sequence[float], step: float = GRID_STEP) -> np.ndarray:
    """Two-stage (Benjamini-Krieger-Yekutieli) sharpened q-values.

    For every level ``q`` on the grid, stage one runs Benjamini-Hochberg at
    ``q/(1+q)``; the rejection count ``r1`` sets the stage-two level
    ``q/(1+q) * m/(m-r1)``.  A test's q-value is the smallest grid level at
    which stage two rejects it; tests never rejected keep 1.
    """
    p = np.asarray(pvals, dtype=float)
    if p.size == 0:
        raise ValueError("no p-values")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ps = p[order]
    ranks = np.arange(1, m + 1)
    levels = _grid(step)
    q1 = levels / (1 + levels)
    # largest rank k with p_(k) <= level * k / m, per grid level
    ok1 = ps[None, :] <= q1[:, None] * ranks[None, :] / m
    r1 = np.where(ok1.any(axis=1), m - np.argmax(ok1[:, ::-1], axis=1), 0)
    with np.errstate(divide="ignore"):
        q2 = np.where(r1 < m, q1 * m / np.maximum(m - r1, 1), np.inf)
    ok2 = ps[None, :] <= q2[:, None] * ranks[None, :] / m
    r2 = np.where(ok2.any(axis=1), m - np.argmax(ok2[:, ::-1], axis=1), 0)
    rejected = ranks[None, :] <= r2[:, None]
    first = np.argmax(rejected, axis=0)
    qs = np.where(rejected.any(axis=0), levels[first], 1.0)
    out = np.empty(m)
    out[order] = qs
    return out


def bh_q(pvals: Sequence[float]) -> np.ndarray:
    """Plain Benjamini-Hochberg adjusted p-values."""
    p = np.asarray(pvals, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(adj[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


@dataclass(frozen=True)
class QValueReport:
    pvalues: dict[str, np.ndarray]
    qvalues: dict[str, np.ndarray]


def qvalues_by_family(pvals: Mapping[str, Sequence[float]], step: float = GRID_STEP) -> QValueReport:
    ps = {fam: np.asarray(v, dtype=float) for fam, v in pvals.items()}
    return QValueReport(ps, {fam: sharpened_q(v, step) for fam, v in ps.items() if len(v)})


# ---------------------------------------------------------------------------
# attrition


class SeparationError(RuntimeError):
    """Remain/attrite outcome is perfectly predicted by the regressors."""


@dataclass
class PropensityModel:
    coef: pd.Series
    covariates: tuple[str, ...]
    treatments: tuple[str, ...]
    converged: bool
    ridge: float = 0.0
    floor: float = PROPENSITY_FLOOR

    def design(self, rows: pd.DataFrame) -> np.ndarray:
        return propensity_design(rows, self.covariates, self.treatments)[0]

    def predict(self, rows: pd.DataFrame) -> np.ndarray:
        return expit(self.design(rows) @ self.coef.to_numpy())


def propensity_design(rows: pd.DataFrame, covariates: Sequence[str], treatments: Sequence[str]):
    cols = [np.ones(len(rows))]
    names = ["const"]
    for c in covariates:
        cols.append(rows[c].to_numpy(float))
        names.append(c)
    for t in treatments:
        cols.append(rows[t].to_numpy(float))
        names.append(t)
    for t in treatments:
        for c in covariates:
            cols.append(rows[t].to_numpy(float) * rows[c].to_numpy(float))
            names.append(f"{t}:{c}")
    return np.column_stack(cols), names


def _newton_logit(X, y, w, ridge=0.0, tol=1e-8, max_iter=200):
    beta = np.zeros(X.shape[1])
    pen = np.full(X.shape[1], ridge)
    pen[0] = 0.0

    def loglik(b):
        eta = X @ b
        return np.sum(w * (y * eta - np.logaddexp(0, eta))) - 0.5 * np.sum(pen * b * b)

    ll = loglik(beta)
    for it in range(max_iter):
        p = expit(X @ beta)
        grad = X.T @ (w * (y - p)) - pen * beta
        if np.max(np.abs(grad)) < tol:
            return beta, True, it
        H = (X * (w * p * (1 - p))[:, None]).T @ X + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - 1e-12:
                break
            t /= 2
        beta, ll = cand, ll_c
        if np.max(np.abs(X @ beta)) > 35:
            return beta, False, it
    return beta, False, max_iter


def fit_remain_propensity(
    rows: pd.DataFrame,
    covariates: Sequence[str],
    treatments: Sequence[str],
    *,
    remain: str = "remain",
    weights: str | None = None,
    on_separation: str = "raise",
    ridge: float = 1.0,
    floor: float = PROPENSITY_FLOOR,
) -> PropensityModel:
    """Logistic model of remaining in the sample.

    Regressors are an intercept, the covariates, treatment dummies and every
    treatment x covariate interaction.  Damped Newton iterations stop when the
    score max-norm falls below 1e-8.  Separation raises unless
    ``on_separation="ridge"``, which refits with an L2 penalty and warns.
    """
    y = rows[remain].to_numpy(float)
    if y.min() == y.max():
        raise ValueError("remain indicator has no variation")
    X, names = propensity_design(rows, covariates, treatments)
    w = np.ones(len(rows)) if weights is None else rows[weights].to_numpy(float)
    beta, ok, _ = _newton_logit(X, y, w)
    used_ridge = 0.0
    if not ok:
        if on_separation != "ridge":
            raise SeparationError("remain propensity shows (quasi-)separation; no finite MLE")
        warnings.warn("separation in remain propensity; using ridge-stabilized fit", RuntimeWarning)
        beta, ok, _ = _newton_logit(X, y, w, ridge=ridge)
        used_ridge = ridge
    return PropensityModel(pd.Series(beta, index=names), tuple(covariates), tuple(treatments), ok, used_ridge, floor)


def ipw_weights(
    model: PropensityModel,
    rows: pd.DataFrame,
    *,
    remain: str = "remain",
    base: Sequence[str] = ("sampling_weight", "tracking_weight"),
    floor: float | None = None,
) -> pd.Series:
    """Base weights divided by the floored remain propensity, for remaining rows only."""
    floor = model.floor if floor is None else floor
    stay = rows[remain].to_numpy(bool)
    kept = rows.loc[stay]
    p = np.maximum(model.predict(kept), floor)
    w = np.ones(len(kept))
    for col in base:
        if col in kept:
            w = w * kept[col].to_numpy(float)
    return pd.Series(w / p, index=kept.index)


def inverse_propensity(model: PropensityModel, rows: pd.DataFrame, floor: float | None = None) -> np.ndarray:
    floor = model.floor if floor is None else floor
    return 1.0 / np.maximum(model.predict(rows), floor)
