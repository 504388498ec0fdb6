"""Honest causal forest on residualized outcomes, plus CATE summaries.

Each tree draws a subsample, grows its structure on one half with the
Athey-Imbens honest causal-tree criterion and estimates leaf effects on the
other half as ``cov(d_res, y_res) / var(d_res)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .wls import RegressionSpec, fit

MIN_ROWS = 200


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 2000
    subsample: float = 0.5
    honesty: float = 0.5
    min_leaf: int = 5
    max_depth: int | None = None
    feature_fraction: float | None = None  # None: sqrt(m)/m
    seed: int = 0
    variance_penalty: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("subsample", "honesty"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        if self.n_trees < 1:
            raise ValueError("need at least one tree")

    def n_features(self, m: int) -> int:
        frac = self.feature_fraction if self.feature_fraction is not None else math.sqrt(m) / m
        return max(1, min(m, int(math.ceil(frac * m - 1e-12))))


# ---------------------------------------------------------------------------
# residualization


@dataclass(frozen=True)
class Residualized:
    y: np.ndarray
    d: np.ndarray
    treated: np.ndarray
    weights: np.ndarray
    y_coef: pd.Series
    d_coef: pd.Series


def residualize(
    outcome,
    treatment,
    covariates: pd.DataFrame | None = None,
    weights=None,
    blocks=None,
) -> Residualized:
    """WLS residuals of outcome and treatment on covariates and block dummies.

    Constant covariates are dropped.  By Frisch-Waugh-Lovell the weighted
    regression of the outcome residual on the treatment residual reproduces
    the full-regression treatment coefficient.
    """
    y = np.asarray(outcome, dtype=float)
    d = np.asarray(treatment, dtype=float)
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    df = pd.DataFrame({"y": y, "d": d, "weight": w})
    regs = []
    if covariates is not None:
        for c in covariates.columns:
            v = covariates[c].to_numpy(dtype=float)
            if np.ptp(v) > 0:
                df[f"x_{c}"] = v
                regs.append(f"x_{c}")
    fe = None
    if blocks is not None:
        df["block"] = np.asarray(blocks)
        fe = "block"
    out = {}
    for target in ("y", "d"):
        res = fit(RegressionSpec(tuple(regs), outcome=target, fixed_effects=fe, cluster=None), df)
        out[target] = res
    return Residualized(out["y"].resid, out["d"].resid, d, w, out["y"].params, out["d"].params)


# ---------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    structure_idx: np.ndarray = field(repr=False)
    estimation_idx: np.ndarray = field(repr=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.left[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _leaf_effect(d, y):
    n = d.size
    if n < 2:
        return np.nan
    dc = d - d.mean()
    sdd = dc @ dc
    if sdd <= 1e-12:
        return np.nan
    return float(dc @ (y - y.mean()) / sdd)


def _criterion(n, sd, sy, sdd, sdy, syy, pen):
    """Sum over children of ``n tau^2 - pen * n * Var(tau)`` (vectorized)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        cdd = sdd - sd * sd / n
        cdy = sdy - sd * sy / n
        cyy = syy - sy * sy / n
        tau = cdy / cdd
        val = n * tau * tau
        if pen:
            s2 = np.maximum(cyy - tau * cdy, 0.0) / np.maximum(n - 2, 1)
            val = val - pen * n * s2 / cdd
    return val


def _best_split(X, d, y, t, idx, feats, min_leaf, pen):
    best = (-np.inf, -1, 0.0)
    n_tot = idx.size
    tot = (n_tot, d[idx].sum(), y[idx].sum(), d[idx] @ d[idx], d[idx] @ y[idx], y[idx] @ y[idx])
    parent = _criterion(*[np.float64(v) for v in tot], pen)
    if not np.isfinite(parent):
        return best
    for f in feats:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ii = idx[order]
        dd, yy, tt = d[ii], y[ii], t[ii]
        cn = np.arange(1, n_tot + 1, dtype=float)
        csd, csy = np.cumsum(dd), np.cumsum(yy)
        csdd, csdy, csyy = np.cumsum(dd * dd), np.cumsum(dd * yy), np.cumsum(yy * yy)
        ctr = np.cumsum(tt)
        # candidate split after position k (left = first k+1 rows)
        k = np.arange(n_tot - 1)
        valid = xs[k] < xs[k + 1]
        lt, lc = ctr[k], cn[k] - ctr[k]
        rt, rc = ctr[-1] - lt, (n_tot - cn[k]) - (ctr[-1] - lt)
        valid &= (lt >= min_leaf) & (lc >= min_leaf) & (rt >= min_leaf) & (rc >= min_leaf)
        if not valid.any():
            continue
        k = k[valid]
        left = _criterion(cn[k], csd[k], csy[k], csdd[k], csdy[k], csyy[k], pen)
        right = _criterion(
            n_tot - cn[k], csd[-1] - csd[k], csy[-1] - csy[k],
            csdd[-1] - csdd[k], csdy[-1] - csdy[k], csyy[-1] - csyy[k], pen,
        )
        gain = left + right - parent
        gain[~np.isfinite(gain)] = -np.inf
        j = int(np.argmax(gain))
        if gain[j] > best[0]:
            best = (float(gain[j]), int(f), 0.5 * (xs[k[j]] + xs[k[j] + 1]))
    return best


def _grow_tree(X, d, y, t, s_idx, e_idx, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    m = X.shape[1]
    mtry = cfg.n_features(m)
    pen = (1.0 + s_idx.size / e_idx.size) if cfg.variance_penalty else 0.0
    feature, threshold, left, right = [], [], [], []
    members = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, s_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if idx.size < 4 * cfg.min_leaf:
            continue
        feats = rng.choice(m, size=mtry, replace=False)
        gain, f, thr = _best_split(X, d, y, t, idx, np.sort(feats), cfg.min_leaf, pen)
        if f < 0 or gain <= 0:
            continue
        go = X[idx, f] <= thr
        ln, rn = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, ln, rn
        stack.append((rn, idx[~go], depth + 1))
        stack.append((ln, idx[go], depth + 1))
    tree = Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.zeros(len(feature)),
        s_idx,
        e_idx,
    )
    # honest estimates; leaves without a usable estimation sample inherit from the parent
    stack = [(0, e_idx, _leaf_effect(d[e_idx], y[e_idx]))]
    while stack:
        node, idx, inherited = stack.pop()
        est = _leaf_effect(d[idx], y[idx]) if idx.size else np.nan
        has_both = idx.size and 0 < t[idx].sum() < idx.size
        val = est if (np.isfinite(est) and has_both) else inherited
        tree.value[node] = val
        if tree.left[node] >= 0:
            go = X[idx, tree.feature[node]] <= tree.threshold[node]
            stack.append((tree.left[node], idx[go], val))
            stack.append((tree.right[node], idx[~go], val))
    return tree


@dataclass
class CateModel:
    trees: list[Tree]
    config: ForestConfig
    features: tuple[str, ...]
    y_coef: pd.Series | None = None
    d_coef: pd.Series | None = None

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, pd.DataFrame):
            X = X[list(self.features)].to_numpy(dtype=float)
        return np.asarray(X, dtype=float)

    def predict_all(self, X) -> np.ndarray:
        X = self._matrix(X)
        return np.column_stack([tr.predict(X) for tr in self.trees])

    def predict(self, X) -> np.ndarray:
        """Average over trees with exactly rounded summation (order independent)."""
        P = self.predict_all(X)
        return np.array([math.fsum(row) for row in P]) / P.shape[1]

    def leaf_ids(self, X) -> np.ndarray:
        X = self._matrix(X)
        return np.column_stack([tr.apply(X) for tr in self.trees])


def fit_forest(
    data: Residualized | Mapping[str, np.ndarray],
    moderators: pd.DataFrame | np.ndarray,
    config: ForestConfig = ForestConfig(),
    *,
    feature_names: Sequence[str] | None = None,
) -> CateModel:
    """Grow an honest causal forest.

    ``data`` supplies residualized outcome ``y``, residualized treatment ``d``
    and the raw binary treatment ``treated`` (used for the per-leaf
    minimum of treated and control rows).
    """
    if isinstance(data, Residualized):
        y, d, t = data.y, data.d, data.treated
        y_coef, d_coef = data.y_coef, data.d_coef
    else:
        y, d, t = (np.asarray(data[k], dtype=float) for k in ("y", "d", "treated"))
        y_coef = d_coef = None
    if isinstance(moderators, pd.DataFrame):
        names = tuple(moderators.columns)
        X = moderators.to_numpy(dtype=float)
    else:
        X = np.asarray(moderators, dtype=float)
        names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    n = y.size
    if n < MIN_ROWS:
        raise ValueError(f"causal forest needs at least {MIN_ROWS} rows, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(d))):
        raise ValueError("forest inputs must be finite")
    t = (np.asarray(t) > 0.5).astype(float)
    n_sub = int(round(config.subsample * n))
    n_struct = int(round(config.honesty * n_sub))
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)

    def one(ss):
        rng = np.random.Generator(np.random.Philox(ss))
        sub = rng.choice(n, size=n_sub, replace=False)
        return _grow_tree(X, d, y, t, np.sort(sub[:n_struct]), np.sort(sub[n_struct:]), config, rng)

    if config.n_jobs and config.n_jobs > 1:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=config.n_jobs, prefer="threads")(delayed(one)(ss) for ss in seeds)
    else:
        trees = [one(ss) for ss in seeds]
    return CateModel(list(trees), config, names, y_coef, d_coef)


# ---------------------------------------------------------------------------
# summaries


def cate_cdf(predictions) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF points ``(sorted values, i/n)``."""
    v = np.sort(np.asarray(predictions, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    return v, np.arange(1, v.size + 1) / v.size


def _predictions(model_or_values, sample) -> np.ndarray:
    if hasattr(model_or_values, "predict"):
        return np.asarray(model_or_values.predict(sample), dtype=float)
    return np.asarray(model_or_values, dtype=float)


def growth_index(predictions: Mapping[str, np.ndarray], scales: Mapping[str, float] | None = None) -> np.ndarray:
    """Standardized index of anthropometric CATEs (mean of scaled predictions, rescaled to unit SD)."""
    cols = []
    for k, v in predictions.items():
        v = np.asarray(v, dtype=float)
        s = scales[k] if scales else v.std()
        cols.append(v / s if s > 0 else v * 0)
    idx = np.mean(cols, axis=0)
    sd = idx.std()
    return idx / sd if sd > 0 else idx


def cross_outcome_correlation(models: Mapping[str, object], sample=None) -> pd.DataFrame:
    """Pearson correlations of per-row CATE predictions across outcomes."""
    preds = {k: _predictions(m, sample) for k, m in models.items()}
    n = {v.size for v in preds.values()}
    if len(n) != 1:
        raise ValueError("predictions must share one sample")
    for k, v in preds.items():
        if np.std(v) == 0:
            raise ValueError(f"predictions for {k} have zero variance")
    names = list(preds)
    C = np.corrcoef(np.vstack([preds[k] for k in names]))
    np.fill_diagonal(C, 1.0)
    C = (C + C.T) / 2
    return pd.DataFrame(C, index=names, columns=names)


@dataclass(frozen=True)
class TargetingReport:
    outcome_gains: dict[str, float]
    composite_gain: float
    assignments: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def mean_outcome_gain(self) -> float:
        return float(np.mean(list(self.outcome_gains.values())))


def targeting_gains(
    models: Mapping[str, object],
    sample=None,
    standardizer: Mapping[str, float] | None = None,
    baseline: Mapping[str, object] | None = None,
) -> TargetingReport:
    """Welfare gains from assigning each row its better modality.

    CATEs are cash-minus-in-kind effects, divided by ``standardizer[k]``
    (the control-group SD).  An outcome's gain is the mean of
    ``baseline + max(cate, 0)``: cash where it beats in-kind, in-kind
    otherwise.  The composite policy assigns cash where the mean CATE over
    outcomes is positive and is scored by its mean gain across outcomes.
    ``baseline`` (in-kind effect versus control, default zero) is optional.
    """
    preds = {}
    for k, m in models.items():
        v = _predictions(m, sample)
        s = 1.0 if standardizer is None else float(standardizer[k])
        preds[k] = v / s
    sizes = {v.size for v in preds.values()}
    if len(sizes) != 1:
        raise ValueError("mismatched samples across outcomes")
    n = sizes.pop()
    base = {}
    for k in preds:
        b = 0.0 if baseline is None or k not in baseline else baseline[k]
        b = np.broadcast_to(np.asarray(b, dtype=float), (n,))
        s = 1.0 if standardizer is None else float(standardizer[k])
        base[k] = b / s
    gains, assign = {}, {}
    for k, v in preds.items():
        a = v > 0
        assign[k] = a
        gains[k] = float(np.mean(base[k] + np.where(a, v, 0.0)))
    mean_cate = np.mean(np.vstack(list(preds.values())), axis=0)
    a = mean_cate > 0
    assign["composite"] = a
    composite = float(np.mean([np.mean(base[k] + np.where(a, v, 0.0)) for k, v in preds.items()]))
    return TargetingReport(gains, composite, assign)
