from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.special import logit

from cebench import costing, simlab
from cebench.costing import REFERENCE_LEDGERS, ArmCostLedger
from cebench.data_model import Arm, DataError, OutcomeSpec, TrialData
from cebench.estimators import (
    CeVariant,
    Moderator,
    attrition_regression,
    bcr_row,
    benchmarked_tce,
    choice_effect,
    cost_equivalent,
    ctb_classify,
    itt,
    lumpsum_flow,
    prespecified_heterogeneity,
    spillover,
    tce,
    term_costs,
)
from cebench.simlab import AttritionSpec, DgpSpec, EffectSpec, OutcomeDgp
from cebench.wls import EstimationError, LinearHypothesis, RankDeficiencyError, wald

Y = OutcomeSpec("y")


def spec_with(**effects):
    return DgpSpec(outcomes=(OutcomeDgp("y", EffectSpec(**effects)),))


def draws(spec, fn, reps, seed=0):
    return np.array([fn(simlab.generate(spec, s)) for s in simlab.replicate_seeds(seed, reps)])


def test_itt_recovers_large_effect():
    est = draws(spec_with(arm_effects={"GD_Large": 0.3}), lambda d: itt(d, Y).params["T_GDLarge"], 200)
    assert abs(est.mean() - 0.3) < 0.02


def test_itt_zero_effect_coverage():
    def covered(d):
        ci = itt(d, Y).conf_int().loc["T_GDLarge"]
        return ci["lower"] <= 0 <= ci["upper"]

    cover = draws(spec_with(), covered, 200, seed=1).mean()
    assert 0.90 <= cover <= 0.99


def test_granular_and_pooled_agree_under_equal_cells():
    data = simlab.generate(spec_with(arm_effects={"GD_Main": 0.25}), 3)
    pooled = itt(data, Y).params["T_GDMain"]
    gran = itt(data, Y, granular=True)
    hyp = LinearHypothesis.from_rows(
        [{"T_GDLower": 1.0}, {"T_GDMiddle": 1.0}, {"T_GDUpper": 1.0}], [pooled] * 3
    )
    assert wald(gran, hyp)[1] > 0.01


def test_pooled_is_cell_average_on_exchangeable_data():
    def gap(d):
        g = itt(d, Y, granular=True).params
        avg = np.mean([g["T_GDLower"], g["T_GDMiddle"], g["T_GDUpper"]])
        return itt(d, Y).params["T_GDMain"] - avg

    assert abs(draws(spec_with(arm_effects={"GD_Main": 0.2}), gap, 60, seed=2).mean()) < 0.01


def test_itt_with_ledgers_attaches_ratio_tests():
    res = itt(simlab.generate(spec_with(), 0), Y, ledgers=REFERENCE_LEDGERS)
    assert set(res.tests) == {"GDM=GDL", "GK=GDL"}
    assert res.meta["control_mean"] == res.meta["control_mean"]


def test_cost_equivalent_null_offset():
    spec = simlab.ce_validity_spec(offset=0.0)
    est = draws(spec, lambda d: cost_equivalent(d, Y, REFERENCE_LEDGERS).delta_gk, 150, seed=4)
    assert abs(est.mean()) < 0.02


def test_cost_equivalent_slope_and_prediction():
    data = simlab.generate(simlab.ce_validity_spec(), 5)
    res = cost_equivalent(data, Y, REFERENCE_LEDGERS)
    bench = res.benchmark
    for arm in (Arm.GD_LOWER, Arm.GD_LARGE):
        c = costing.cost_per_eligible(REFERENCE_LEDGERS[arm])
        assert res.predict_cash(c) == pytest.approx(res.delta_t + res.gamma1 * (c - bench) / 100, abs=1e-12)


def test_prediction_invariant_to_benchmark_shift():
    data = simlab.generate(simlab.ce_validity_spec(), 6)
    a = cost_equivalent(data, Y, REFERENCE_LEDGERS)
    b = cost_equivalent(data, Y, REFERENCE_LEDGERS, benchmark=a.benchmark + 37.5)
    for arm in (Arm.GD_LOWER, Arm.GD_MIDDLE, Arm.GD_UPPER, Arm.GD_LARGE):
        c = costing.cost_per_eligible(REFERENCE_LEDGERS[arm])
        assert a.predict_cash(c) == pytest.approx(b.predict_cash(c), abs=1e-8)


def test_linear_interpolation_more_precise_than_cubic():
    spec = simlab.power_spec()
    data = simlab.generate(spec, 0)
    lin = simlab.analytic_variance(data, spec, "Linear")
    cub = simlab.analytic_variance(data, spec, "Cubic")
    assert lin < cub


def test_cubic_needs_four_cost_levels():
    spec = DgpSpec(villages={Arm.CONTROL: 40, Arm.GIKURIRO: 40, Arm.GD_LARGE: 30})
    data = simlab.generate(spec, 0)
    with pytest.raises(RankDeficiencyError):
        cost_equivalent(data, Y, REFERENCE_LEDGERS, CeVariant.CUBIC)


def test_drop_variant_removes_arm():
    data = simlab.generate(simlab.ce_validity_spec(), 7)
    res = cost_equivalent(data, Y, REFERENCE_LEDGERS, "DropLarge")
    full = cost_equivalent(data, Y, REFERENCE_LEDGERS)
    assert res.fit.nobs < full.fit.nobs
    assert "proportional_scaling" in res.fit.tests


def test_cost_equivalent_requires_ledger():
    with pytest.raises(ValueError):
        cost_equivalent(simlab.generate(spec_with(), 0), Y, {})


def test_tce_scales_itt_by_eligible_share():
    spec = replace(spec_with(arm_effects={"GD_Large": 0.5}), ineligible_treat_rate=0.0)
    share = 7 * 2.0 / (7 * 2.0 + 4 * 24.4)
    ratio = draws(spec, lambda d: tce(d, Y).params["T_GDLarge"], 80, seed=8).mean() / 0.5
    assert ratio == pytest.approx(share, abs=0.06)


def test_benchmarked_tce_drops_slope_when_costs_equal():
    same = {a: ArmCostLedger(a, 100.0, 1.0, 0.8, 0.2) for a in REFERENCE_LEDGERS}
    data = simlab.generate(spec_with(arm_effects={"GD_Main": 0.2, "GD_Large": 0.2, "Gikuriro": 0.2}), 9)
    res = benchmarked_tce(data, Y, same)
    assert res.tau_terms == ()
    assert "tau100" not in res.fit.params.index
    assert res.fit.params["T_any"] == pytest.approx(tce(data, Y).params["T_GDLarge"], abs=0.3)


def test_spillover_null_and_injected():
    base = draws(spec_with(), lambda d: spillover(d, Y).params[["T_GDMain", "T_GDLarge"]].to_numpy(), 60, seed=10)
    assert np.all(np.abs(base.mean(axis=0)) < 0.05)
    data = simlab.generate(spec_with(spillover={"GD_Large": -0.4}), 11)
    ci = spillover(data, Y).conf_int().loc["T_GDLarge"]
    assert ci["lower"] <= -0.4 <= ci["upper"]


def test_spillover_ignores_treated_ineligibles():
    data = simlab.generate(spec_with(), 12)
    hh = data.households.copy()
    hh["p_not_treated"] = 0.9
    pool = hh[(hh["stratum"] == "Ineligible") & hh["never_treat"] & hh["arm"].str.startswith("GD")]
    victim = pool["household_id"].iloc[0]
    hh.loc[hh["household_id"] == victim, "complied"] = True
    with_row = spillover(TrialData(data.design, hh), Y)
    without = spillover(TrialData(data.design, hh[hh["household_id"] != victim]), Y)
    np.testing.assert_array_equal(with_row.params.to_numpy(), without.params.to_numpy())


def test_attrition_balanced_and_differential():
    bal = replace(spec_with(), attrition=AttritionSpec(control_rate=0.05))
    est = draws(bal, lambda d: attrition_regression(d).params["T_GDLarge"], 60, seed=13)
    assert abs(est.mean()) < 0.01
    shift = logit(0.08) - logit(0.05)
    diff = replace(spec_with(), attrition=AttritionSpec(control_rate=0.05, arm_shift={"GD_Large": shift}))
    est = draws(diff, lambda d: attrition_regression(d).params["T_GDLarge"], 60, seed=14)
    assert est.mean() == pytest.approx(0.03, abs=0.008)


def test_attrition_without_variation():
    with pytest.raises(EstimationError):
        attrition_regression(simlab.generate(spec_with(), 0))


def test_bcr_cost_scaling_exact():
    res = itt(simlab.generate(spec_with(arm_effects={"GD_Large": 0.3, "Gikuriro": -0.1}), 15), Y)
    costs = term_costs(REFERENCE_LEDGERS)
    row = bcr_row(res, costs)
    row2 = bcr_row(res, {k: 2 * v for k, v in costs.items()})
    for t in row.bcr:
        assert row2.bcr[t] == pytest.approx(row.bcr[t] / 2, rel=1e-14)
        assert np.sign(row.bcr[t]) == np.sign(res.params[t])
    for k in row.pvalues:
        assert row2.pvalues[k] == pytest.approx(row.pvalues[k], rel=1e-12)
    with pytest.raises(ValueError):
        bcr_row(res, {**costs, "T_GK": 0.0})


def test_bcr_equal_ratio_size_rough():
    spec = simlab.equal_bcr_spec()
    p = draws(spec, lambda d: itt(d, Y, ledgers=REFERENCE_LEDGERS).tests["GDM=GDL"][1], 200, seed=16)
    assert 0.01 <= np.mean(p < 0.05) <= 0.10


def test_lumpsum_flow_null_and_injected():
    null = draws(spec_with(arm_effects={"GD_Main": 0.2}), lambda d: lumpsum_flow(d, Y).params["D_main_LS"], 40, seed=17)
    assert abs(null.mean()) < 0.04
    eff = draws(spec_with(lumpsum_effect=0.4), lambda d: lumpsum_flow(d, Y).params["D_main_LS"], 40, seed=18)
    assert eff.mean() == pytest.approx(0.4, abs=0.05)


def test_lumpsum_flow_all_flow_is_rank_error():
    data = simlab.generate(spec_with(), 19)
    hh = data.households.copy()
    hh.loc[hh["modality"].notna(), "modality"] = "Flow"
    with pytest.raises(RankDeficiencyError):
        lumpsum_flow(TrialData(data.design, hh), Y)


def test_lumpsum_flow_missing_labels():
    data = simlab.generate(spec_with(), 19)
    hh = data.households.copy()
    gd = hh["arm"].str.startswith("GD") & (hh["stratum"] == "Eligible")
    hh.loc[hh.index[gd][0], "modality"] = None
    with pytest.raises(DataError):
        lumpsum_flow(TrialData(data.design, hh), Y)


def test_choice_effect_null_and_sophisticated():
    null = draws(spec_with(), lambda d: choice_effect(d, Y).params["got_wanted"], 40, seed=20)
    assert abs(null.mean()) < 0.04
    eff = draws(spec_with(got_wanted_effect=0.3), lambda d: choice_effect(d, Y).params["got_wanted"], 40, seed=21)
    assert eff.mean() == pytest.approx(0.3, abs=0.05)


def test_choice_everyone_gets_choice_is_rank_error():
    data = simlab.generate(spec_with(), 22)
    hh = data.households.copy()
    hh.loc[hh["modality"].notna(), "modality"] = "Choice"
    with pytest.raises(RankDeficiencyError):
        choice_effect(TrialData(data.design, hh), Y)


def test_heterogeneity_null_interactions():
    est = draws(spec_with(arm_effects={"GD_Large": 0.3}),
                lambda d: prespecified_heterogeneity(d, Y, Moderator.IMPATIENT).params["T_GDMain_x_mod"], 40, seed=23)
    assert abs(est.mean()) < 0.05


def test_heterogeneity_centering_identity():
    data = simlab.generate(spec_with(arm_effects={"GD_Large": 0.3}), 24)
    cen = prespecified_heterogeneity(data, Y, Moderator.FIRST_THOUSAND_DAYS, column="x2", demean=True)
    raw = prespecified_heterogeneity(data, Y, Moderator.FIRST_THOUSAND_DAYS, column="x2", demean=False)
    hh = data.households.set_index("household_id")
    el = hh[(hh["stratum"] == "Eligible") & hh["y__el"].notna()]
    w = el["sampling_weight"] * el["tracking_weight"]
    mbar = float((w * el["x2"]).sum() / w.sum())
    for t in ("T_GK", "T_GDMain", "T_GDLarge"):
        assert cen.params[t] == pytest.approx(raw.params[t] + raw.params[f"{t}_x_mod"] * mbar, abs=1e-10)


def test_heterogeneity_gradient_recovered():
    spec = spec_with(het_kind="linear", het_feature="x1", het_scale=0.3)
    est = draws(spec, lambda d: prespecified_heterogeneity(d, Y, Moderator.FIRST_THOUSAND_DAYS, column="x1")
                .params["T_GDLarge_x_mod"], 40, seed=25)
    assert est.mean() == pytest.approx(0.3, abs=0.05)


def test_behavioural_moderators_exclude_large_arm():
    res = prespecified_heterogeneity(simlab.generate(spec_with(), 26), Y, Moderator.INCONSISTENT)
    assert "T_GDLarge" not in res.params.index
    assert set(res.tests) == {"GDMain_x=GK_x"}


def test_constant_moderator():
    data = simlab.generate(spec_with(), 27)
    hh = data.households.assign(impatient=1.0)
    with pytest.raises(EstimationError):
        prespecified_heterogeneity(TrialData(data.design, hh), Y, Moderator.IMPATIENT)


def _ctb(hid, near, far, returns=(1.0, 1.25, 2.0)):
    rows = []
    for r, s in zip(returns, near):
        rows.append({"household_id": hid, "start_day": 0, "gross_return": r, "soon_share": s})
    for r, s in zip(returns, far):
        rows.append({"household_id": hid, "start_day": 90, "gross_return": r, "soon_share": s})
    return rows


def _beta_delta_share(beta, delta, gross, alpha=0.5):
    """Soon share maximizing c_s^a + beta delta (R (1 - c_s))^a on a fine grid.

    ``beta`` below one applies only when the sooner date is today.
    """
    c = np.linspace(0, 1, 100_001)
    u = c**alpha + beta * delta * (gross * (1 - c)) ** alpha
    return float(c[np.argmax(u)])


def test_ctb_patient_and_consistent():
    alloc = pd.DataFrame(_ctb("h1", [0.2, 0.1, 0.0], [0.2, 0.1, 0.0]))
    out = ctb_classify(alloc)
    assert out.loc["h1", "impatient"] == False  # noqa: E712
    assert out.loc["h1", "inconsistent"] == False  # noqa: E712


def test_ctb_present_biased_chooser():
    returns = (1.0, 1.25, 2.0)
    near = [_beta_delta_share(0.6, 0.98, r) for r in returns]
    far = [_beta_delta_share(1.0, 0.98, r) for r in returns]
    out = ctb_classify(pd.DataFrame(_ctb("h2", near, far, returns)))
    assert bool(out.loc["h2", "inconsistent"]) is True


def test_ctb_incomplete_records_missing():
    alloc = pd.DataFrame(_ctb("h3", [0.5, np.nan, np.nan], [np.nan, np.nan, np.nan]))
    out = ctb_classify(alloc, pd.DataFrame({"f1": [pd.NA]}, index=["h3"]))
    assert pd.isna(out.loc["h3", "impatient"])
    assert pd.isna(out.loc["h3", "inconsistent"])
    assert pd.isna(out.loc["h3", "lack_other_control"])
    flags = pd.DataFrame({"f1": [True, False], "f2": [pd.NA, False]}, index=["a", "b"])
    lack = ctb_classify(pd.DataFrame(columns=["household_id", "start_day", "gross_return", "soon_share"]), flags)
    assert bool(lack.loc["a", "lack_other_control"]) and not bool(lack.loc["b", "lack_other_control"])
