"""Post-double-selection LASSO with weighted, loading-adjusted penalties.

Objective (standardized regressors, weights normalized to mean one)::

    (1/n) sum_i w_i (y_i - x_i'b)^2 + (lam/n) sum_j psi_j |b_j|
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

C_PENALTY = 1.1
GAMMA_NUMERATOR = 0.1
TOL = 1e-7
MAX_SWEEPS = 10_000
KKT_TOL = 1e-6


class ConvergenceError(RuntimeError):
    def __init__(self, max_violation: float):
        self.max_violation = max_violation
        super().__init__(f"coordinate descent did not converge; max KKT violation {max_violation:.3g}")


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def penalty_level(n: int, p: int, c: float = C_PENALTY, gamma: float | None = None) -> float:
    """``2 c sqrt(n) Phi^{-1}(1 - gamma / (2p))`` with ``gamma = 0.1 / ln(n)`` by default."""
    if n <= 1 or p < 1:
        raise ValueError("penalty level needs n > 1 and p >= 1")
    if gamma is None:
        gamma = GAMMA_NUMERATOR / np.log(n)
    return float(2 * c * np.sqrt(n) * stats.norm.ppf(1 - gamma / (2 * p)))


@dataclass
class LassoProblem:
    y: np.ndarray
    X: np.ndarray
    weights: np.ndarray | None = None
    lam: float | None = None
    loadings: np.ndarray | None = None
    unpenalized: Sequence[int] = ()

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise ValueError("X must be n x p matching y")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("lasso data must be finite")
        if self.lam is not None and self.lam < 0:
            raise ValueError("penalty must be nonnegative")


@dataclass
class LassoResult:
    coef: np.ndarray
    intercept: float
    active: np.ndarray
    lam: float
    loadings: np.ndarray
    sweeps: int
    kkt_violation: float
    scale: np.ndarray = field(repr=False)


def _normalize_weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    return w * (n / w.sum())


def _standardize(X, w):
    n = X.shape[0]
    mean = (w @ X) / n
    Xc = X - mean
    ms = (w @ (Xc**2)) / n
    scale = np.sqrt(ms)
    ok = scale > 1e-12 * np.maximum(1.0, np.sqrt((w @ X**2) / n))
    Z = np.zeros_like(Xc)
    Z[:, ok] = Xc[:, ok] / scale[ok]
    return Z, mean, scale, ok


def _cd(G, grad, thresh, beta, tol, max_sweeps):
    """Cyclic coordinate descent with covariance updates.

    ``G`` is the weighted Gram matrix of the standardized columns divided by
    n (unit diagonal for live columns) and ``grad`` holds ``Z'W r / n``,
    kept current as coefficients move.
    """
    p = G.shape[0]
    diag = np.diag(G)
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if diag[j] <= 0:
                continue
            old = beta[j]
            rho = grad[j] + diag[j] * old
            t = thresh[j]
            if rho > t:
                new = (rho - t) / diag[j]
            elif rho < -t:
                new = (rho + t) / diag[j]
            else:
                new = 0.0
            if new != old:
                grad -= (new - old) * G[:, j]
                beta[j] = new
                change = abs(new - old)
                if change > max_change:
                    max_change = change
        if max_change < tol:
            return sweep
    return max_sweeps


def _kkt(Z, r, w, thresh, beta):
    n = Z.shape[0]
    g = (Z * w[:, None]).T @ r / n  # half the gradient of the loss
    viol = np.where(beta != 0, np.abs(g - thresh * np.sign(beta)), np.maximum(np.abs(g) - thresh, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lasso_fit(
    problem: LassoProblem,
    *,
    tol: float = TOL,
    max_sweeps: int = MAX_SWEEPS,
    kkt_tol: float = KKT_TOL,
) -> LassoResult:
    """Weighted LASSO by cyclic coordinate descent.

    Columns are standardized internally to weighted mean square one, so the
    result is invariant to column rescaling.  Coefficients are returned on
    the original scale.  Zero-variance columns are never selected.
    """
    y, X = problem.y, problem.X
    n, p = X.shape
    w = _normalize_weights(problem.weights, n)
    Z, xmean, scale, ok = _standardize(X, w)
    ymean = (w @ y) / n
    lam = penalty_level(n, max(p, 1)) if problem.lam is None else float(problem.lam)
    psi = np.ones(p) if problem.loadings is None else np.asarray(problem.loadings, dtype=float)
    if np.any(psi < 0):
        raise ValueError("penalty loadings must be nonnegative")
    psi = psi.copy()
    psi[list(problem.unpenalized)] = 0.0
    # per-coordinate threshold on the half-gradient scale
    thresh = lam * psi / (2 * n)
    thresh[~ok] = np.inf
    beta = np.zeros(p)
    wZ = Z * w[:, None]
    G = wZ.T @ Z / n
    c0 = wZ.T @ (y - ymean) / n
    sweeps = 0
    viol = np.inf
    budget = max_sweeps
    cur_tol = tol
    while budget > 0:
        grad = c0 - G @ beta  # refresh to remove drift
        used = _cd(G, grad, thresh, beta, cur_tol, budget)
        sweeps += used
        budget -= used
        r = (y - ymean) - Z @ beta
        viol = _kkt(Z[:, ok], r, w, thresh[ok], beta[ok])
        if viol <= kkt_tol:
            break
        cur_tol /= 10
    if viol > kkt_tol:
        raise ConvergenceError(viol)
    coef = np.zeros(p)
    coef[ok] = beta[ok] / scale[ok]
    intercept = float(ymean - xmean @ coef)
    return LassoResult(coef, intercept, np.flatnonzero(coef != 0), lam, psi, sweeps, viol, scale)


def _post_ols_resid(y, X, w, active):
    if len(active) == 0:
        return y - (w @ y) / w.sum()
    A = np.column_stack([np.ones(len(y)), X[:, active]])
    sw = np.sqrt(w)
    b = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)[0]
    return y - A @ b


def robust_lasso(
    y,
    X,
    weights=None,
    *,
    iterations: int = 2,
    weighted_loadings: bool = True,
    lam: float | None = None,
    c: float = C_PENALTY,
    gamma: float | None = None,
) -> LassoResult:
    """Heteroskedasticity-robust LASSO with iterated penalty loadings.

    Loadings start at one (in units of the response's standard deviation)
    and are refined ``iterations`` times as
    ``sqrt(mean(w * z_j^2 * e^2))`` with ``e`` the post-LASSO residual.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    w = _normalize_weights(weights, n)
    lw = w if weighted_loadings else np.ones(n)
    Z, _, scale, ok = _standardize(X, w)
    ysd = np.sqrt((w @ (y - (w @ y) / n) ** 2) / n)
    if ysd <= 0:
        return LassoResult(np.zeros(p), float(y.mean()), np.array([], dtype=int), 0.0, np.ones(p), 0, 0.0, scale)
    if lam is None:
        lam = penalty_level(n, p, c, gamma)
    psi = np.full(p, ysd)
    res = lasso_fit(LassoProblem(y, X, w, lam, psi))
    for _ in range(iterations):
        e = _post_ols_resid(y, X, w, res.active)
        psi = np.sqrt((lw @ (Z**2 * (e**2)[:, None])) / n)
        psi[~ok] = 1.0
        psi = np.maximum(psi, 1e-12 * ysd)
        res = lasso_fit(LassoProblem(y, X, w, lam, psi))
    return res


def _residualize(target: np.ndarray, K: np.ndarray | None, w: np.ndarray) -> np.ndarray:
    if K is None or K.shape[1] == 0:
        return target - (w @ target) / w.sum()
    A = np.column_stack([np.ones(K.shape[0]), K])
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(A * sw[:, None], (target.T * sw).T, rcond=None)[0]
    return target - A @ coef


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[str, ...]
    always_keep: tuple[str, ...]
    by_target: dict[str, tuple[str, ...]]
    fits: dict[str, LassoResult] = field(default_factory=dict, repr=False, compare=False)

    @property
    def controls(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.always_keep + self.selected))


def post_double_select(
    outcome: np.ndarray,
    treatments: np.ndarray | Sequence[np.ndarray],
    candidates: pd.DataFrame,
    always_keep: pd.DataFrame | None = None,
    weights: np.ndarray | None = None,
    *,
    weighted_loadings: bool = True,
    treatment_names: Sequence[str] | None = None,
) -> SelectionResult:
    """Union of LASSO selections for the outcome and each treatment indicator.

    Every target and candidate is first residualized on ``always_keep`` (plus
    an intercept); columns that vanish under residualization are never
    selected.  The returned control set is the union plus ``always_keep``;
    the final effect estimate is an unpenalized refit on that set.
    """
    y = np.asarray(outcome, dtype=float)
    n = y.size
    T = np.asarray(treatments, dtype=float)
    if T.ndim == 1:
        T = T[:, None] if T.size == n else T.reshape(n, -1)
    elif T.shape[0] != n:
        T = T.T
    w = _normalize_weights(weights, n)
    K = None if always_keep is None or always_keep.shape[1] == 0 else always_keep.to_numpy(float)
    keep_names = () if always_keep is None else tuple(always_keep.columns)
    C = candidates.to_numpy(float)
    Cr = _residualize(C, K, w) if C.shape[1] else C
    norms0 = np.sqrt(w @ (C - (w @ C) / n) ** 2) if C.shape[1] else np.zeros(0)
    normsr = np.sqrt(w @ Cr**2) if C.shape[1] else np.zeros(0)
    live = normsr > 1e-8 * np.maximum(norms0, 1e-300)
    names = np.array(candidates.columns)
    tnames = list(treatment_names) if treatment_names is not None else [f"treatment{k}" for k in range(T.shape[1])]
    targets = {"outcome": y, **{tn: T[:, k] for k, tn in enumerate(tnames)}}
    chosen: set[int] = set()
    by_target, fits = {}, {}
    for tname, target in targets.items():
        if not live.any():
            by_target[tname] = ()
            continue
        tr = _residualize(target, K, w)
        res = robust_lasso(tr, Cr[:, live], w, weighted_loadings=weighted_loadings)
        idx = np.flatnonzero(live)[res.active]
        by_target[tname] = tuple(names[idx])
        fits[tname] = res
        chosen.update(idx.tolist())
    selected = tuple(names[i] for i in sorted(chosen) if names[i] not in keep_names)
    return SelectionResult(selected, keep_names, by_target, fits)
