"""Weighted least squares with block fixed effects and cluster-robust inference."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .data_model import AnalysisFrame

RANK_TOL = 1e-10


class EstimationError(RuntimeError):
    """A regression could not be estimated."""


class RankDeficiencyError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


@dataclass(frozen=True)
class RegressionSpec:
    regressors: tuple[str, ...]
    outcome: str = "y"
    fixed_effects: str | None = "block"
    weight: str | None = "weight"
    cluster: str | None = "cluster"
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if len(set(self.regressors)) != len(self.regressors):
            raise ValueError("duplicate regressors")
        if self.fixed_effects is not None and self.fixed_effects in self.regressors:
            raise ValueError("fixed-effect column also listed as a regressor")


@dataclass
class FitResult:
    params: pd.Series
    cov: pd.DataFrame
    resid: np.ndarray
    fitted: np.ndarray
    nobs: int
    n_clusters: int
    k: int
    r2: float
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    clusters: np.ndarray = field(repr=False)
    tests: dict[str, tuple[float, float]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    df_denom: int | None = None

    @property
    def names(self) -> list[str]:
        return list(self.params.index)

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.cov.to_numpy())), index=self.params.index)

    @property
    def dof(self) -> int:
        return self.df_denom if self.df_denom is not None else max(self.n_clusters - 1, 1)

    @property
    def tvalues(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.t.sf(np.abs(self.tvalues), self.dof), index=self.params.index)

    def conf_int(self, level: float = 0.95) -> pd.DataFrame:
        crit = stats.t.ppf(0.5 + level / 2, self.dof)
        se = self.bse
        return pd.DataFrame({"lower": self.params - crit * se, "upper": self.params + crit * se})

    def bread(self) -> np.ndarray:
        Xw = self.X * self.w[:, None]
        return np.linalg.inv(self.X.T @ Xw)


def _as_frame(frame) -> pd.DataFrame:
    return frame.df if isinstance(frame, AnalysisFrame) else frame


def design_matrix(spec: RegressionSpec, df: pd.DataFrame) -> tuple[np.ndarray, list[str]]:
    cols, names = [], []
    if spec.intercept:
        cols.append(np.ones(len(df)))
        names.append("const")
    for r in spec.regressors:
        if r not in df.columns:
            raise KeyError(f"regressor {r!r} not in frame")
        cols.append(df[r].to_numpy(dtype=float))
        names.append(r)
    if spec.fixed_effects is not None:
        groups = df[spec.fixed_effects].astype(str).to_numpy()
        levels = sorted(set(groups))
        # one category omitted when an intercept is present
        for lev in levels[1:] if spec.intercept else levels:
            cols.append((groups == lev).astype(float))
            names.append(f"fe[{lev}]")
    X = np.column_stack(cols) if cols else np.empty((len(df), 0))
    return X, names


def _solve(X: np.ndarray, y: np.ndarray, w: np.ndarray, names: list[str]) -> np.ndarray:
    sw = np.sqrt(w)
    Q, R, piv = linalg.qr(X * sw[:, None], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        raise EstimationError("empty design")
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    if rank < X.shape[1]:
        raise RankDeficiencyError([names[i] for i in piv[rank:]])
    coef = np.empty(X.shape[1])
    coef[piv] = linalg.solve_triangular(R, Q.T @ (y * sw))
    return coef


def fit(spec: RegressionSpec, frame, *, small_sample: bool = True) -> FitResult:
    """Weighted least squares with dummy-expanded fixed effects and CR1 covariance.

    Rows with zero weight carry no information and are dropped before
    counting observations and clusters.
    """
    df = _as_frame(frame)
    y = df[spec.outcome].to_numpy(dtype=float)
    w = np.ones(len(df)) if spec.weight is None else df[spec.weight].to_numpy(dtype=float)
    keep = np.isfinite(y) & np.isfinite(w) & (w > 0)
    for r in spec.regressors:
        keep &= np.isfinite(df[r].to_numpy(dtype=float))
    if not keep.all():
        df = df.loc[keep]
        y, w = y[keep], w[keep]
    X, names = design_matrix(spec, df)
    n, k = X.shape
    if n <= k:
        raise EstimationError(f"fewer rows ({n}) than parameters ({k})")
    coef = _solve(X, y, w, names)
    fitted = X @ coef
    resid = y - fitted
    ybar = np.sum(w * y) / np.sum(w)
    tss = np.sum(w * (y - ybar) ** 2)
    r2 = 0.0 if tss <= 1e-14 * max(1.0, np.sum(w * y * y)) else 1.0 - np.sum(w * resid**2) / tss
    if spec.cluster is None:
        clusters = np.arange(n)
    else:
        clusters = df[spec.cluster].to_numpy()
    res = FitResult(
        params=pd.Series(coef, index=names),
        cov=pd.DataFrame(np.zeros((k, k)), index=names, columns=names),
        resid=resid,
        fitted=fitted,
        nobs=n,
        n_clusters=len(pd.unique(clusters)),
        k=k,
        r2=float(r2),
        X=X,
        y=y,
        w=w,
        clusters=clusters,
    )
    res.cov = pd.DataFrame(cluster_cov(res, clusters, small_sample=small_sample), index=names, columns=names)
    return res


def cluster_cov(fit_result: FitResult, clusters, *, small_sample: bool = True) -> np.ndarray:
    """CR1 sandwich ``B M B`` scaled by ``G/(G-1) * (N-1)/(N-K)``."""
    clusters = np.asarray(clusters)
    if clusters.shape[0] != fit_result.nobs:
        raise ValueError("cluster ids must align with fitted rows")
    codes, uniq = pd.factorize(clusters, sort=True)
    g = len(uniq)
    if g < 2:
        raise EstimationError("cluster-robust covariance needs at least two clusters")
    X, w, e = fit_result.X, fit_result.w, fit_result.resid
    scores = X * (w * e)[:, None]
    S = np.zeros((g, X.shape[1]))
    np.add.at(S, codes, scores)
    bread = fit_result.bread()
    V = bread @ (S.T @ S) @ bread
    if small_sample:
        n, k = fit_result.nobs, fit_result.k
        V *= g / (g - 1) * (n - 1) / (n - k)
    return (V + V.T) / 2


@dataclass(frozen=True)
class LinearHypothesis:
    """Restrictions ``R b = r`` over the named coefficients ``terms``."""

    terms: tuple[str, ...]
    R: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        r = np.asarray(self.r, dtype=float).reshape(-1)
        if R.shape != (r.size, len(self.terms)):
            raise ValueError("R must be q x len(terms) with q = len(r)")
        if np.linalg.matrix_rank(R) < R.shape[0]:
            raise ValueError("restriction matrix must have full row rank")
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_rows(cls, rows: Sequence[Mapping[str, float]], targets: Sequence[float] | None = None):
        terms = tuple(dict.fromkeys(t for row in rows for t in row))
        R = [[row.get(t, 0.0) for t in terms] for row in rows]
        return cls(terms, np.array(R), np.zeros(len(rows)) if targets is None else np.asarray(targets))

    @property
    def q(self) -> int:
        return self.R.shape[0]

    def expand(self, names: Sequence[str]) -> np.ndarray:
        full = np.zeros((self.q, len(names)))
        index = {n: i for i, n in enumerate(names)}
        for j, t in enumerate(self.terms):
            if t not in index:
                raise KeyError(f"hypothesis term {t!r} not in model")
            full[:, index[t]] = self.R[:, j]
        return full


def wald(fit_result: FitResult, hypothesis: LinearHypothesis, df_denom: int | None = None) -> tuple[float, float]:
    """F statistic and p-value from F(q, G-1) unless ``df_denom`` is given."""
    if hypothesis.q > fit_result.k:
        raise ValueError("more restrictions than parameters")
    R = hypothesis.expand(fit_result.names)
    diff = R @ fit_result.params.to_numpy() - hypothesis.r
    RVR = R @ fit_result.cov.to_numpy() @ R.T
    if np.linalg.matrix_rank(RVR) < hypothesis.q:
        raise EstimationError("singular R V R' in Wald test")
    F = float(diff @ np.linalg.solve(RVR, diff)) / hypothesis.q
    d2 = df_denom if df_denom is not None else fit_result.dof
    return F, float(stats.f.sf(F, hypothesis.q, d2))


def bcr_equality_hypothesis(term_i: str, term_j: str, cost_i: float, cost_j: float) -> LinearHypothesis:
    """``b_i / c_i = b_j / c_j`` restated as ``c_j b_i - c_i b_j = 0``."""
    if cost_i == 0 or cost_j == 0:
        raise ValueError("benefit-cost comparison needs nonzero costs")
    if cost_i < 0 or cost_j < 0:
        raise ValueError("costs must be positive")
    return LinearHypothesis((term_i, term_j), np.array([[cost_j, -cost_i]]), np.zeros(1))


def delta_ratio_test(
    fit_result: FitResult, term_i: str, term_j: str, cost_i: float, cost_j: float
) -> tuple[float, float]:
    """Delta-method test of ``b_i / b_j = c_i / c_j``.

    Diagnostic companion to the exact linear restriction; agrees with it to
    first order near the null.
    """
    b = fit_result.params
    bi, bj = b[term_i], b[term_j]
    if bj == 0:
        raise EstimationError("ratio undefined at zero denominator coefficient")
    g = bi / bj - cost_i / cost_j
    grad = np.array([1.0 / bj, -bi / bj**2])
    V = fit_result.cov.loc[[term_i, term_j], [term_i, term_j]].to_numpy()
    var = float(grad @ V @ grad)
    F = g * g / var
    return F, float(stats.f.sf(F, 1, fit_result.dof))
