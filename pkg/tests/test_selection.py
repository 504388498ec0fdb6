import numpy as np
import pandas as pd
import pytest
from scipy import stats

from cebench import simlab
from cebench.selection import (
    ConvergenceError,
    LassoProblem,
    lasso_fit,
    penalty_level,
    post_double_select,
    robust_lasso,
    soft_threshold,
)


def standardized(rng, n, p, corr=0.3):
    X = rng.standard_normal((n, p)) + corr * rng.standard_normal((n, 1))
    X -= X.mean(axis=0)
    return X / np.sqrt((X**2).mean(axis=0))


def ista(y, Z, lam, psi, iters=20000):
    """Proximal gradient on (1/n)|y - Zb|^2 + (lam/n) sum psi|b|, independent of the solver."""
    n = len(y)
    yc = y - y.mean()
    L = 2 * np.linalg.eigvalsh(Z.T @ Z / n).max()
    b = np.zeros(Z.shape[1])
    for _ in range(iters):
        grad = -2 * Z.T @ (yc - Z @ b) / n
        b = soft_threshold(b - grad / L, lam * psi / n / L)
    return b


def test_large_penalty_zeroes_everything(rng):
    Z = standardized(rng, 100, 5)
    res = lasso_fit(LassoProblem(rng.standard_normal(100), Z, lam=1e9))
    assert np.all(res.coef == 0)
    assert res.active.size == 0


def test_zero_penalty_equals_least_squares(rng):
    X = rng.standard_normal((80, 4)) * [1, 5, 0.1, 2]
    y = X @ [1.0, -0.2, 3.0, 0.0] + rng.standard_normal(80)
    res = lasso_fit(LassoProblem(y, X, lam=0.0), tol=1e-12)
    A = np.column_stack([np.ones(80), X])
    ols = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(res.coef, ols[1:], rtol=1e-8, atol=1e-10)
    assert res.intercept == pytest.approx(ols[0], abs=1e-8)


def test_univariate_soft_threshold(rng):
    n = 200
    z = standardized(rng, n, 1)
    y = 0.4 * z[:, 0] + rng.standard_normal(n)
    lam = 40.0
    rho = z[:, 0] @ (y - y.mean()) / n
    res = lasso_fit(LassoProblem(y, z, lam=lam))
    assert res.coef[0] == pytest.approx(np.sign(rho) * max(abs(rho) - lam / (2 * n), 0), abs=1e-10)


def test_matches_ista_oracle(rng):
    n, p = 150, 12
    Z = standardized(rng, n, p)
    y = Z[:, :3] @ [1.0, -0.7, 0.4] + rng.standard_normal(n)
    psi = rng.uniform(0.5, 1.5, p)
    lam = 30.0
    res = lasso_fit(LassoProblem(y, Z, lam=lam, loadings=psi), tol=1e-12)
    np.testing.assert_allclose(res.coef, ista(y, Z, lam, psi), atol=1e-7)


def test_kkt_conditions(rng):
    n, p = 300, 20
    X = rng.standard_normal((n, p))
    y = X[:, 0] - X[:, 1] + rng.standard_normal(n)
    w = rng.uniform(0.5, 2, n)
    res = robust_lasso(y, X, w)
    assert res.kkt_violation <= 1e-6


def test_nonconvergence_reported(rng):
    X = standardized(rng, 100, 30, corr=3.0)
    y = X[:, 0] + rng.standard_normal(100)
    with pytest.raises(ConvergenceError) as err:
        lasso_fit(LassoProblem(y, X, lam=1.0), max_sweeps=1)
    assert err.value.max_violation > 1e-6


def test_penalty_formula():
    n, p = 100, 10
    gamma = 0.1 / np.log(n)
    expect = 2 * 1.1 * np.sqrt(n) * stats.norm.ppf(1 - gamma / (2 * p))
    assert penalty_level(n, p) == pytest.approx(expect, rel=1e-14)
    assert penalty_level(n, 1) < penalty_level(n, 100)
    with pytest.raises(ValueError):
        penalty_level(1, 3)


def test_loadings_near_residual_sd():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((4000, 6))
    y = rng.standard_normal(4000)
    res = robust_lasso(y, X)
    np.testing.assert_allclose(res.loadings, 1.0, atol=0.1)


def test_rescaling_invariance(rng):
    y, d, C = simlab.sparse_selection_data(n=300, p=20, seed=3)
    base = post_double_select(y, d, C)
    C2 = C.copy()
    C2["c03"] *= 1000.0
    C2["c07"] *= 1e-3
    assert post_double_select(y, d, C2).selected == base.selected


def test_duplicate_of_always_keep_never_selected():
    y, d, C = simlab.sparse_selection_data(n=300, p=10, seed=5)
    keep = C[["c01"]].rename(columns={"c01": "k1"})
    res = post_double_select(y, d, C, keep)
    assert "c01" not in res.selected
    assert set(res.controls) >= {"k1"}


def test_sparse_dgp_selects_confounders():
    hits = 0
    for s in range(40):
        y, d, C = simlab.sparse_selection_data(seed=s)
        sel = post_double_select(y, d, C)
        hits += {"c01", "c02", "c03", "c04", "c05"} <= set(sel.selected)
    assert hits >= 38


def test_pure_noise_rarely_selects():
    rng = np.random.default_rng(12)
    nonempty = 0
    for _ in range(40):
        C = pd.DataFrame(rng.standard_normal((500, 50)), columns=[f"c{j}" for j in range(50)])
        sel = post_double_select(rng.standard_normal(500), (rng.random(500) < 0.5).astype(float), C)
        nonempty += bool(sel.selected)
    assert nonempty / 40 < 0.2


def test_output_contains_always_keep():
    rng = np.random.default_rng(13)
    C = pd.DataFrame(rng.standard_normal((200, 5)), columns=list("abcde"))
    keep = pd.DataFrame({"lag": rng.standard_normal(200)})
    res = post_double_select(rng.standard_normal(200), rng.random(200) < 0.5, C, keep)
    assert res.controls[: len(keep.columns)] == ("lag",)
    assert set(res.fits) == {"outcome", "treatment0"}
