import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cebench.wls import (
    EstimationError,
    LinearHypothesis,
    RankDeficiencyError,
    RegressionSpec,
    bcr_equality_hypothesis,
    cluster_cov,
    delta_ratio_test,
    fit,
    wald,
)


def oracle(df, regressors, fe="block", weight="weight", cluster="cluster"):
    """Dense normal equations and a hand-summed CR1 sandwich."""
    cols = [np.ones(len(df))] + [df[r].to_numpy(float) for r in regressors]
    if fe:
        levels = sorted(df[fe].astype(str).unique())
        cols += [(df[fe].astype(str) == lev).to_numpy(float) for lev in levels[1:]]
    X = np.column_stack(cols)
    y = df["y"].to_numpy(float)
    w = df[weight].to_numpy(float) if weight else np.ones(len(df))
    XtWX = sum(w[i] * np.outer(X[i], X[i]) for i in range(len(y)))
    XtWy = sum(w[i] * X[i] * y[i] for i in range(len(y)))
    b = np.linalg.solve(XtWX, XtWy)
    e = y - X @ b
    inv = np.linalg.inv(XtWX)
    g = df[cluster].to_numpy() if cluster else np.arange(len(y))
    meat = np.zeros_like(XtWX)
    for c in np.unique(g):
        s = np.zeros(X.shape[1])
        for i in np.flatnonzero(g == c):
            s += w[i] * e[i] * X[i]
        meat += np.outer(s, s)
    G, n, k = len(np.unique(g)), len(y), X.shape[1]
    V = inv @ meat @ inv * G / (G - 1) * (n - 1) / (n - k)
    return b, V


def random_dataset(rng, n=None, clusters=None):
    n = n or int(rng.integers(20, 61))
    clusters = clusters or int(rng.integers(3, 9))
    df = pd.DataFrame(
        {
            "x1": rng.standard_normal(n),
            "x2": rng.standard_normal(n) * 3,
            "cluster": rng.integers(0, clusters, n),
            "weight": rng.uniform(0.2, 4.0, n),
        }
    )
    df.loc[: clusters - 1, "cluster"] = np.arange(clusters)
    df["block"] = df["cluster"] % 2
    df["y"] = 1 + 0.5 * df["x1"] - df["x2"] + rng.standard_normal(n) * (1 + df["cluster"] / 3)
    return df


def test_difference_in_means():
    df = pd.DataFrame({"y": [1.0, 2.0, 3.0, 10.0, 11.0, 15.0], "t": [0, 0, 0, 1, 1, 1], "cluster": range(6)})
    res = fit(RegressionSpec(("t",), fixed_effects=None, weight=None), df)
    assert res.params["t"] == pytest.approx(12.0 - 2.0, abs=1e-12)


def test_six_row_normal_equations():
    df = pd.DataFrame(
        {
            "y": [1.3, -0.2, 2.9, 4.1, 0.7, 3.3],
            "x1": [0.1, 1.5, -0.3, 2.2, 0.9, -1.1],
            "weight": [1.0, 2.0, 0.5, 1.5, 3.0, 1.0],
            "cluster": [0, 0, 1, 1, 2, 2],
            "block": ["a", "a", "a", "b", "b", "b"],
        }
    )
    res = fit(RegressionSpec(("x1",)), df)
    b, _ = oracle(df, ["x1"])
    np.testing.assert_allclose(res.params.to_numpy(), b, rtol=1e-10)


def test_constant_outcome():
    df = pd.DataFrame({"y": np.full(10, 4.0), "x": np.arange(10.0), "cluster": np.arange(10) % 3})
    res = fit(RegressionSpec(("x",), fixed_effects=None, weight=None), df)
    assert res.params["x"] == pytest.approx(0.0, abs=1e-12)
    assert res.r2 == 0.0


def test_rank_deficiency_names_columns():
    df = pd.DataFrame({"y": np.arange(8.0), "a": np.arange(8.0) % 2, "cluster": np.arange(8)})
    df["b"] = 2 * df["a"]
    with pytest.raises(RankDeficiencyError) as err:
        fit(RegressionSpec(("a", "b"), fixed_effects=None, weight=None), df)
    assert set(err.value.columns) & {"a", "b"}


def test_too_few_rows():
    df = pd.DataFrame({"y": [1.0, 2.0], "a": [0.0, 1.0], "b": [1.0, 3.0], "cluster": [0, 1]})
    with pytest.raises(EstimationError):
        fit(RegressionSpec(("a", "b"), fixed_effects=None, weight=None), df)


def test_singleton_clusters_equal_hc1(rng):
    df = random_dataset(rng, n=40)
    df["cluster"] = np.arange(40)
    res = fit(RegressionSpec(("x1", "x2")), df)
    X, e, w = res.X, res.resid, res.w
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    meat = (X * (w * e)[:, None]).T @ (X * (w * e)[:, None])
    n, k = X.shape
    hc1 = bread @ meat @ bread * n / (n - k)
    # CR1 with G = n has factor n/(n-1) * (n-1)/(n-k) = n/(n-k)
    np.testing.assert_allclose(res.cov.to_numpy(), hc1, rtol=1e-10)


def test_two_cluster_sandwich():
    rng = np.random.default_rng(3)
    df = random_dataset(rng, n=16, clusters=2)
    res = fit(RegressionSpec(("x1",), fixed_effects=None), df)
    _, V = oracle(df, ["x1"], fe=None)
    np.testing.assert_allclose(res.cov.to_numpy(), V, rtol=1e-10)


def test_too_few_clusters():
    df = pd.DataFrame({"y": np.arange(6.0), "x": [0, 1, 0, 1, 0, 1.0], "cluster": 0})
    with pytest.raises(EstimationError):
        fit(RegressionSpec(("x",), fixed_effects=None, weight=None), df)


def test_cr1_close_to_classical_under_homoskedasticity():
    rng = np.random.default_rng(5)
    ratios = []
    for _ in range(40):
        n = 400
        df = pd.DataFrame({"x": rng.standard_normal(n), "cluster": np.arange(n) % 200})
        df["y"] = 1 + 2 * df["x"] + rng.standard_normal(n)
        res = fit(RegressionSpec(("x",), fixed_effects=None, weight=None), df)
        s2 = np.sum(res.resid**2) / (n - 2)
        classical = np.sqrt(s2 * np.linalg.inv(res.X.T @ res.X)[1, 1])
        ratios.append(res.bse["x"] / classical)
    assert abs(np.mean(ratios) - 1) < 0.15


def test_fitted_and_orthogonality(rng):
    df = random_dataset(rng)
    res = fit(RegressionSpec(("x1", "x2")), df)
    np.testing.assert_allclose(res.fitted + res.resid, res.y, atol=1e-10)
    assert np.max(np.abs(res.X.T @ (res.w * res.resid))) < 1e-8


def test_cov_invariant_to_relabel_and_permutation(rng):
    df = random_dataset(rng)
    base = fit(RegressionSpec(("x1", "x2")), df).cov.to_numpy()
    relabelled = df.assign(cluster=df["cluster"].map(lambda c: f"v{97 - c}"))
    np.testing.assert_allclose(fit(RegressionSpec(("x1", "x2")), relabelled).cov.to_numpy(), base, rtol=1e-10)
    shuffled = df.sample(frac=1.0, random_state=4)
    np.testing.assert_allclose(fit(RegressionSpec(("x1", "x2")), shuffled).cov.to_numpy(), base, rtol=1e-9, atol=1e-14)
    assert np.allclose(base, base.T)
    assert np.linalg.eigvalsh(base).min() > -1e-12


def test_cluster_cov_requires_alignment(rng):
    res = fit(RegressionSpec(("x1",)), random_dataset(rng))
    with pytest.raises(ValueError):
        cluster_cov(res, np.arange(3))


def test_wald_single_restriction_is_t_squared(rng):
    df = random_dataset(rng)
    res = fit(RegressionSpec(("x1", "x2")), df)
    F, p = wald(res, LinearHypothesis(("x1",), np.array([[1.0]]), np.zeros(1)))
    assert F == pytest.approx((res.params["x1"] / res.bse["x1"]) ** 2, rel=1e-12)
    assert p == pytest.approx(stats.f.sf(F, 1, res.n_clusters - 1))


def test_wald_joint_quadratic_form(rng):
    df = random_dataset(rng)
    res = fit(RegressionSpec(("x1", "x2")), df)
    b, V = oracle(df, ["x1", "x2"])
    R = np.zeros((2, len(b)))
    R[0, 1] = 1.0
    R[1, 1], R[1, 2] = 1.0, 2.0
    r = np.array([0.5, -1.5])
    d = R @ b - r
    F_oracle = d @ np.linalg.inv(R @ V @ R.T) @ d / 2
    hyp = LinearHypothesis.from_rows([{"x1": 1.0}, {"x1": 1.0, "x2": 2.0}], [0.5, -1.5])
    F, _ = wald(res, hyp)
    assert F == pytest.approx(F_oracle, rel=1e-8)


def test_wald_size_uniform_p():
    rng = np.random.default_rng(17)
    ps = []
    for _ in range(400):
        n, g = 200, 40
        df = pd.DataFrame({"x": rng.standard_normal(n), "cluster": np.arange(n) % g})
        u = rng.standard_normal(g)[df["cluster"]] * 0.5
        df["y"] = 1 + u + rng.standard_normal(n)
        res = fit(RegressionSpec(("x",), fixed_effects=None, weight=None), df)
        ps.append(wald(res, LinearHypothesis(("x",), np.array([[1.0]]), np.zeros(1)))[1])
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_hypothesis_rank_checked():
    with pytest.raises(ValueError):
        LinearHypothesis(("a", "b"), np.array([[1.0, 1.0], [2.0, 2.0]]), np.zeros(2))


def test_bcr_hypothesis_proportional_case():
    h = bcr_equality_hypothesis("bi", "bj", 1.0, 2.0)
    assert h.R @ np.array([2.0, 4.0]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        bcr_equality_hypothesis("bi", "bj", 0.0, 2.0)


def test_bcr_equal_costs_reduces_to_equality(rng):
    df = random_dataset(rng)
    res = fit(RegressionSpec(("x1", "x2")), df)
    F1, _ = wald(res, bcr_equality_hypothesis("x1", "x2", 3.0, 3.0))
    F2, _ = wald(res, LinearHypothesis(("x1", "x2"), np.array([[1.0, -1.0]]), np.zeros(1)))
    assert F1 == pytest.approx(F2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_bcr_statistic_scale_invariant(k):
    rng = np.random.default_rng(8)
    res = fit(RegressionSpec(("x1", "x2")), random_dataset(rng))
    F1, _ = wald(res, bcr_equality_hypothesis("x1", "x2", 1.5, 4.0))
    F2, _ = wald(res, bcr_equality_hypothesis("x1", "x2", 1.5 * k, 4.0 * k))
    assert F1 == pytest.approx(F2, rel=1e-9)


def test_delta_method_agrees_near_null():
    rng = np.random.default_rng(21)
    n = 2000
    df = pd.DataFrame({"a": rng.standard_normal(n), "b": rng.standard_normal(n), "cluster": np.arange(n) % 100})
    df["y"] = 1.0 * df["a"] + 2.0 * df["b"] + rng.standard_normal(n)
    res = fit(RegressionSpec(("a", "b"), fixed_effects=None, weight=None), df)
    F_lin, _ = wald(res, bcr_equality_hypothesis("a", "b", 1.0, 2.0))
    F_delta, _ = delta_ratio_test(res, "a", "b", 1.0, 2.0)
    assert F_delta == pytest.approx(F_lin, rel=0.1, abs=0.05)


def test_clustered_fixed_effects_allowed_to_cross(rng):
    df = random_dataset(rng)
    df["block"] = np.arange(len(df)) % 3
    res = fit(RegressionSpec(("x1",)), df)
    assert any(n.startswith("fe[") for n in res.names)


def test_spec_rejects_duplicate_or_fe_regressor():
    with pytest.raises(ValueError):
        RegressionSpec(("a", "a"))
    with pytest.raises(ValueError):
        RegressionSpec(("block",))
