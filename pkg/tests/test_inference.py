import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from scipy.special import expit

from cebench.inference import (
    PropensityModel,
    SeparationError,
    bh_q,
    fit_remain_propensity,
    inverse_propensity,
    ipw_weights,
    qvalues_by_family,
    sharpened_q,
)


def _bh_reject_count(sorted_p, level):
    m = len(sorted_p)
    for k in range(m, 0, -1):
        if sorted_p[k - 1] <= level * k / m:
            return k
    return 0


def reference_sharpened_q(pvals, n_grid=1000):
    """Literal loop over grid levels k/n_grid running both stages each time."""
    p = [float(x) for x in pvals]
    m = len(p)
    sp = sorted(p)
    q = [1.0] * m
    done = [False] * m
    for g in range(1, n_grid + 1):
        level = g / n_grid
        q1 = level / (1 + level)
        r1 = _bh_reject_count(sp, q1)
        if r1 == m:
            r2 = m
        else:
            r2 = _bh_reject_count(sp, q1 * m / (m - r1))
        cutoff = sp[r2 - 1] if r2 else -1.0
        for i in range(m):
            if not done[i] and p[i] <= cutoff:
                q[i] = level
                done[i] = True
        if all(done):
            break
    return np.array(q)


def test_single_small_p():
    assert sharpened_q([0.001])[0] == 0.002
    assert reference_sharpened_q([0.001])[0] == 0.002


def test_all_ones():
    assert np.array_equal(sharpened_q([1.0, 1.0, 1.0]), np.ones(3))


def test_empty_and_invalid():
    with pytest.raises(ValueError):
        sharpened_q([])
    with pytest.raises(ValueError):
        sharpened_q([0.2, 1.3])


def test_matches_reference_on_random_vectors():
    rng = np.random.default_rng(99)
    for _ in range(100):
        m = int(rng.integers(1, 21))
        p = np.where(rng.random(m) < 0.4, rng.random(m) * 0.01, rng.random(m))
        assert np.array_equal(sharpened_q(p), reference_sharpened_q(p))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_monotone_and_bounded(p):
    q = sharpened_q(p)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(q[order]) >= 0)
    assert np.all((q > 0) & (q <= 1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.randoms())
def test_permutation_equivariant(p, r):
    p = np.array(p)
    perm = np.array(r.sample(range(len(p)), len(p)))
    assert np.array_equal(sharpened_q(p)[perm], sharpened_q(p[perm]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_bh_dominance(p):
    """A test BH rejects at q/(1+q) is rejected by the two-stage rule at q."""
    q = sharpened_q(p)
    bh = bh_q(p)
    grid = np.arange(1, 1001) / 1000
    for qi, bi in zip(q, bh):
        ok = grid[grid / (1 + grid) >= bi]
        bound = ok[0] if ok.size else 1.0
        assert qi <= bound


def test_bh_reference():
    assert np.allclose(bh_q([0.01, 0.04, 0.03]), [0.03, 0.04, 0.04])


def test_families_are_separate():
    rep = qvalues_by_family({"Primary": [0.001, 0.2], "Secondary": [0.04]})
    assert np.array_equal(rep.qvalues["Primary"], sharpened_q([0.001, 0.2]))
    assert np.array_equal(rep.qvalues["Secondary"], sharpened_q([0.04]))


# ---------------------------------------------------------------------------
# attrition model


def _rows(n, rng, beta=(0.5, 1.0, -0.5, 0.8)):
    x = rng.standard_normal(n)
    t = (rng.random(n) < 0.5).astype(float)
    eta = beta[0] + beta[1] * x + beta[2] * t + beta[3] * t * x
    remain = (rng.random(n) < expit(eta)).astype(int)
    return pd.DataFrame({"x": x, "T": t, "remain": remain, "sampling_weight": rng.uniform(1, 3, n)})


def test_intercept_only_saturated_mean():
    rows = pd.DataFrame({"remain": [1] * 90 + [0] * 10})
    m = fit_remain_propensity(rows, [], [])
    assert np.allclose(m.predict(rows), 0.9, atol=1e-10)


def test_logit_matches_scipy_optimizer():
    rng = np.random.default_rng(2)
    rows = _rows(800, rng)
    m = fit_remain_propensity(rows, ["x"], ["T"])
    X = np.column_stack([np.ones(800), rows["x"], rows["T"], rows["T"] * rows["x"]])
    y = rows.remain.to_numpy()

    def nll(b):
        eta = X @ b
        return -np.sum(y * eta - np.logaddexp(0, eta))

    ref = optimize.minimize(nll, np.zeros(4), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(m.coef.to_numpy(), ref, atol=1e-5)
    assert list(m.coef.index) == ["const", "x", "T", "T:x"]


def test_logit_recovers_coefficients():
    rng = np.random.default_rng(4)
    est = np.array([fit_remain_propensity(_rows(2000, rng), ["x"], ["T"]).coef.to_numpy() for _ in range(30)])
    np.testing.assert_allclose(est.mean(axis=0), [0.5, 1.0, -0.5, 0.8], atol=0.1)


def test_separation_raises_then_ridge():
    rows = pd.DataFrame({"x": np.arange(20.0), "remain": (np.arange(20) >= 10).astype(int)})
    with pytest.raises(SeparationError):
        fit_remain_propensity(rows, ["x"], [])
    with pytest.warns(RuntimeWarning):
        m = fit_remain_propensity(rows, ["x"], [], on_separation="ridge")
    assert m.ridge > 0
    p = m.predict(rows)
    assert np.all((p > 0) & (p < 1))


def test_no_variation_raises():
    with pytest.raises(ValueError):
        fit_remain_propensity(pd.DataFrame({"remain": [1, 1, 1]}), [], [])


def test_certain_retention_leaves_weights():
    rows = pd.DataFrame({"remain": [1, 1, 0, 1], "sampling_weight": [2.0, 3.0, 4.0, 5.0]})
    m = PropensityModel(pd.Series([40.0], index=["const"]), (), (), True)
    w = ipw_weights(m, rows)
    assert w.tolist() == [2.0, 3.0, 5.0]


def test_floor_binding_caps_weight():
    rows = pd.DataFrame({"remain": [1, 1], "sampling_weight": [2.0, 7.0]})
    m = PropensityModel(pd.Series([-12.0], index=["const"]), (), (), True)
    w = ipw_weights(m, rows)
    assert w.tolist() == [2.0 / 0.05, 7.0 / 0.05]
    assert np.all(inverse_propensity(m, rows) == 1 / 0.05)


def test_weights_positive_and_attriters_excluded():
    rng = np.random.default_rng(6)
    rows = _rows(300, rng)
    m = fit_remain_propensity(rows, ["x"], ["T"])
    w = ipw_weights(m, rows)
    assert len(w) == rows.remain.sum()
    assert (w > 0).all()
    assert set(w.index) == set(rows.index[rows.remain == 1])
