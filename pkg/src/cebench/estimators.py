"""Named trial analyses built on the regression core."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import costing
from .costing import ArmCostLedger
from .data_model import (
    GD_ARMS,
    GD_MAIN_ARMS,
    AnalysisFrame,
    Arm,
    DataError,
    Level,
    Modality,
    OutcomeSpec,
    Role,
    Round,
    Stratum,
    TrialData,
    WeightMode,
    build_analysis_frame,
    outcome_column,
)
from .selection import post_double_select
from .wls import (
    EstimationError,
    FitResult,
    LinearHypothesis,
    RegressionSpec,
    bcr_equality_hypothesis,
    fit,
    wald,
)

POOLED_TERMS = ("T_GK", "T_GDMain", "T_GDLarge")
GRANULAR_TERMS = ("T_GK", "T_GDLower", "T_GDMiddle", "T_GDUpper", "T_GDLarge")
_MAIN = [a.value for a in GD_MAIN_ARMS]
_GD = [a.value for a in GD_ARMS]


def add_arm_dummies(df: pd.DataFrame) -> pd.DataFrame:
    arm = df["arm"].to_numpy()
    out = df.copy()
    out["T_GK"] = (arm == Arm.GIKURIRO.value).astype(float)
    out["T_GDMain"] = np.isin(arm, _MAIN).astype(float)
    out["T_GDLarge"] = (arm == Arm.GD_LARGE.value).astype(float)
    out["T_GDLower"] = (arm == Arm.GD_LOWER.value).astype(float)
    out["T_GDMiddle"] = (arm == Arm.GD_MIDDLE.value).astype(float)
    out["T_GDUpper"] = (arm == Arm.GD_UPPER.value).astype(float)
    out["T_any"] = (arm != Arm.CONTROL.value).astype(float)
    return out


def _weighted_stats(y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    if len(y) == 0 or w.sum() <= 0:
        return float("nan"), float("nan")
    m = float(np.sum(w * y) / np.sum(w))
    return m, float(np.sqrt(np.sum(w * (y - m) ** 2) / np.sum(w)))


def _finish(res: FitResult, frame: AnalysisFrame, df: pd.DataFrame, terms: Sequence[str], controls) -> FitResult:
    ctrl = df[df["arm"] == Arm.CONTROL.value]
    mean, sd = _weighted_stats(ctrl["y"].to_numpy(float), ctrl["weight"].to_numpy(float))
    res.meta.update(
        outcome=frame.outcome.name,
        family=frame.outcome.family.value,
        control_mean=mean,
        control_sd=sd,
        terms=tuple(terms),
        controls=tuple(controls),
    )
    return res


def select_controls(
    df: pd.DataFrame,
    treatments: Sequence[str],
    candidates: Sequence[str],
    always_keep: Sequence[str] = (),
    weighted_loadings: bool = True,
) -> tuple[str, ...]:
    """Post-double-selection controls; block dummies are always kept."""
    blocks = pd.get_dummies(df["block"].astype(str), prefix="fe", drop_first=True, dtype=float)
    keep = pd.concat([df[list(always_keep)].astype(float), blocks], axis=1)
    sel = post_double_select(
        df["y"].to_numpy(float),
        df[list(treatments)].to_numpy(float),
        df[list(candidates)].astype(float),
        keep,
        df["weight"].to_numpy(float),
        weighted_loadings=weighted_loadings,
        treatment_names=treatments,
    )
    return tuple(c for c in sel.selected if c not in always_keep)


def _controls(frame: AnalysisFrame, df, terms, controls, candidates, always_keep):
    base = list(frame.lag_columns) + [c for c in always_keep if c not in frame.lag_columns]
    chosen = list(controls)
    if candidates:
        chosen += [
            c
            for c in select_controls(df, terms, candidates, base)
            if c not in chosen
        ]
    return base, chosen


def _frame(data, spec, mode, covariates, ipw=None, lagged=True):
    frame = build_analysis_frame(data, spec, mode, covariates=covariates, ipw=ipw, lagged=lagged)
    return frame, add_arm_dummies(frame.df)


def _has_baseline(data: TrialData, spec: OutcomeSpec) -> bool:
    src = data.individuals if spec.level is Level.INDIVIDUAL else data.households
    return src is not None and outcome_column(spec.name, Round.BASELINE) in src.columns


def _regress(df, terms, extra, cluster="cluster", fe="block") -> FitResult:
    return fit(RegressionSpec(tuple(terms) + tuple(extra), fixed_effects=fe, cluster=cluster), df)


def _ratio_tests(res: FitResult, pairs, costs: Mapping[str, float]):
    for label, (a, b) in pairs.items():
        if a in res.params.index and b in res.params.index:
            res.tests[label] = wald(res, bcr_equality_hypothesis(a, b, costs[a], costs[b]))


def term_costs(ledgers: Mapping[Arm, ArmCostLedger], basis: str = "eligible") -> dict[str, float]:
    return {
        "T_GK": costing.arm_cost(Arm.GIKURIRO, ledgers, basis),
        "T_GDMain": costing.arm_cost("GD_Main", ledgers, basis),
        "T_GDLarge": costing.arm_cost(Arm.GD_LARGE, ledgers, basis),
        "T_GDLower": costing.arm_cost(Arm.GD_LOWER, ledgers, basis),
        "T_GDMiddle": costing.arm_cost(Arm.GD_MIDDLE, ledgers, basis),
        "T_GDUpper": costing.arm_cost(Arm.GD_UPPER, ledgers, basis),
    }


ITT_RATIO_PAIRS = {"GDM=GDL": ("T_GDMain", "T_GDLarge"), "GK=GDL": ("T_GK", "T_GDLarge")}


def itt(
    data: TrialData,
    spec: OutcomeSpec,
    *,
    controls: Sequence[str] = (),
    candidates: Sequence[str] = (),
    always_keep: Sequence[str] = (),
    granular: bool = False,
    weight_mode: WeightMode | str = WeightMode.ELIGIBLE_ITT,
    ipw: pd.Series | None = None,
    ledgers: Mapping[Arm, ArmCostLedger] | None = None,
    cluster: str = "cluster",
) -> FitResult:
    """ANCOVA intention-to-treat regression.

    Regressors are the arm dummies (pooled GD-Main or the three small cells
    separately), the lagged outcome, block fixed effects and controls.  When
    ``candidates`` is given, controls are chosen by post-double selection.
    With ``ledgers``, benefit-cost ratio equality tests are attached to
    ``tests``.
    """
    terms = GRANULAR_TERMS if granular else POOLED_TERMS
    covs = tuple(dict.fromkeys(list(controls) + list(candidates) + list(always_keep)))
    frame, df = _frame(data, spec, weight_mode, covs, ipw, _has_baseline(data, spec))
    base, chosen = _controls(frame, df, terms, controls, candidates, always_keep)
    res = _regress(df, terms, base + chosen, cluster=cluster)
    basis = "eligible" if WeightMode(weight_mode) is WeightMode.ELIGIBLE_ITT else "village_household"
    if ledgers is not None:
        _ratio_tests(res, ITT_RATIO_PAIRS, term_costs(ledgers, basis))
    return _finish(res, frame, df, terms, chosen)


def tce(data: TrialData, spec: OutcomeSpec, **kwargs) -> FitResult:
    """Total causal effect: the ITT contrast on the pooled, population-weighted sample."""
    kwargs.setdefault("weight_mode", WeightMode.POPULATION_TCE)
    return itt(data, spec, **kwargs)


class CeVariant(str, enum.Enum):
    LINEAR = "Linear"
    QUADRATIC = "Quadratic"
    CUBIC = "Cubic"
    DROP_LOWER = "DropLower"
    DROP_MID = "DropMid"
    DROP_UPPER = "DropUpper"
    DROP_LARGE = "DropLarge"

    @property
    def degree(self) -> int:
        return {"Quadratic": 2, "Cubic": 3}.get(self.value, 1)

    @property
    def dropped_arm(self) -> Arm | None:
        return {
            "DropLower": Arm.GD_LOWER,
            "DropMid": Arm.GD_MIDDLE,
            "DropUpper": Arm.GD_UPPER,
            "DropLarge": Arm.GD_LARGE,
        }.get(self.value)


TAU_TERMS = ("tau100", "tau100_sq", "tau100_cu")


@dataclass
class CostEquivalentResult:
    fit: FitResult
    variant: CeVariant
    benchmark: float
    basis: str = "eligible"
    tau_terms: tuple[str, ...] = ("tau100",)

    def _get(self, name, attr):
        s = getattr(self.fit, attr)
        return float(s[name]) if name in s.index else float("nan")

    @property
    def delta_gk(self) -> float:
        return self._get("T_GK", "params")

    @property
    def delta_t(self) -> float:
        return self._get("T_any", "params")

    @property
    def gamma1(self) -> float:
        return self._get("tau100", "params")

    @property
    def se_delta_gk(self) -> float:
        return self._get("T_GK", "bse")

    @property
    def se_delta_t(self) -> float:
        return self._get("T_any", "bse")

    @property
    def se_gamma1(self) -> float:
        return self._get("tau100", "bse")

    @property
    def p_delta_gk(self) -> float:
        return self._get("T_GK", "pvalues")

    @property
    def p_delta_t(self) -> float:
        return self._get("T_any", "pvalues")

    @property
    def p_gamma1(self) -> float:
        return self._get("tau100", "pvalues")

    def predict_cash(self, cost: float) -> float:
        """Interpolated cash impact at an absolute cost (same basis as the benchmark)."""
        d = (cost - self.benchmark) / 100.0
        val = self.delta_t
        for k, t in enumerate(self.tau_terms, start=1):
            val += float(self.fit.params[t]) * d**k
        return val


def _tau_columns(df: pd.DataFrame, tau: costing.TauAssignment, degree: int) -> tuple[pd.DataFrame, tuple[str, ...]]:
    out = df.copy()
    t = out["cluster"].map(tau.tau).to_numpy(float) / 100.0
    if np.isnan(t).any():
        raise DataError("villages without a tau assignment")
    if np.allclose(t, 0.0):
        return out, ()
    names = TAU_TERMS[:degree]
    for k, name in enumerate(names, start=1):
        out[name] = t**k
    return out, names


def cost_equivalent(
    data: TrialData,
    spec: OutcomeSpec,
    ledgers: Mapping[Arm, ArmCostLedger],
    variant: CeVariant | str = CeVariant.LINEAR,
    *,
    benchmark: float | None = None,
    basis: str = "eligible",
    weight_mode: WeightMode | str = WeightMode.ELIGIBLE_ITT,
    controls: Sequence[str] = (),
    candidates: Sequence[str] = (),
    always_keep: Sequence[str] = (),
    cluster: str = "cluster",
) -> CostEquivalentResult:
    """Gikuriro benchmarked against cash interpolated to Gikuriro's cost.

    Regresses the endline outcome on an any-treatment dummy, a Gikuriro
    dummy and a polynomial in the per-$100 cost deviation of each GD arm
    from the benchmark.  ``delta_gk`` is the Gikuriro differential over
    cost-equivalent cash.
    """
    variant = CeVariant(variant)
    if not ledgers:
        raise ValueError("cost-equivalent analysis needs a cost ledger")
    if benchmark is None:
        benchmark = costing.default_benchmark(ledgers, basis)
    tau = costing.assign_tau(data.design, ledgers, benchmark, basis)
    covs = tuple(dict.fromkeys(list(controls) + list(candidates) + list(always_keep)))
    frame, df = _frame(data, spec, weight_mode, covs, None, _has_baseline(data, spec))
    if variant.dropped_arm is not None:
        df = df[df["arm"] != variant.dropped_arm.value]
    df, tau_terms = _tau_columns(df, tau, variant.degree)
    terms = ("T_any", "T_GK") + tau_terms
    base, chosen = _controls(frame, df, terms, controls, candidates, always_keep)
    res = _regress(df, terms, base + chosen, cluster=cluster)
    _finish(res, frame, df, terms, chosen)
    if "tau100" in res.params.index:
        # cash benefits proportional to cost: delta_T = gamma_1 * C / 100
        hyp = LinearHypothesis(("T_any", "tau100"), np.array([[1.0, -benchmark / 100.0]]), np.zeros(1))
        res.tests["proportional_scaling"] = wald(res, hyp)
    return CostEquivalentResult(res, variant, float(benchmark), basis, tau_terms)


def benchmarked_tce(data: TrialData, spec: OutcomeSpec, ledgers, variant=CeVariant.LINEAR, **kwargs):
    """Cost-equivalent comparison on the population sample, costed per village household."""
    kwargs.setdefault("basis", "village_household")
    kwargs.setdefault("weight_mode", WeightMode.POPULATION_TCE)
    return cost_equivalent(data, spec, ledgers, variant, **kwargs)


def spillover(
    data: TrialData,
    spec: OutcomeSpec,
    *,
    ledgers: Mapping[Arm, ArmCostLedger] | None = None,
    controls: Sequence[str] = (),
    cluster: str = "cluster",
) -> FitResult:
    """GD village effects on never-targeted ineligibles; treated households get zero weight."""
    frame, df = _frame(data, spec, WeightMode.SPILLOVER_NEVER_TREAT, tuple(controls), None, _has_baseline(data, spec))
    df = df[df["weight"] > 0]
    if df.empty:
        raise DataError("spillover subsample is empty")
    terms = ("T_GDMain", "T_GDLarge")
    res = _regress(df, terms, list(frame.lag_columns) + list(controls), cluster=cluster)
    if ledgers is not None:
        _ratio_tests(res, {"GDM=GDL": terms}, term_costs(ledgers, "village_household"))
    return _finish(res, frame, df, terms, controls)


class AttritionLevel(str, enum.Enum):
    HOUSEHOLD = "Household"
    ROSTER = "Roster"
    ANTHRO = "Anthro"
    ANEMIA = "Anemia"
    NEW_MEMBER = "NewMember"


def attrition_frame(
    data: TrialData,
    level: AttritionLevel | str,
    *,
    anthro_outcome: str = "haz",
    anemia_outcome: str = "anemia",
    stratum: Stratum | None = Stratum.ELIGIBLE,
) -> pd.DataFrame:
    """Rows with an ``attrit`` indicator, arm, block, cluster and weight."""
    level = AttritionLevel(level)
    hh = data.households
    if level is AttritionLevel.HOUSEHOLD:
        base = hh.assign(attrit=data.attrited().astype(float).to_numpy())
    else:
        ind = data.individuals
        if ind is None:
            raise DataError(f"{level.value} attrition needs individual records")
        bl = [c for c in ind.columns if c.endswith("__bl")]
        el = [c for c in ind.columns if c.endswith("__el")]
        if level is AttritionLevel.ROSTER:
            present = ind[bl].notna().any(axis=1)
            ind = ind[present].assign(attrit=ind.loc[present, el].isna().all(axis=1).astype(float))
        elif level is AttritionLevel.ANTHRO:
            b, e = outcome_column(anthro_outcome, Round.BASELINE), outcome_column(anthro_outcome, Round.ENDLINE)
            sel = (ind["role"] == Role.CHILD_U6.value) & ind[b].notna()
            ind = ind[sel].assign(attrit=ind.loc[sel, e].isna().astype(float))
        elif level is AttritionLevel.ANEMIA:
            b, e = outcome_column(anemia_outcome, Round.BASELINE), outcome_column(anemia_outcome, Round.ENDLINE)
            sel = ind[b].notna()
            ind = ind[sel].assign(attrit=ind.loc[sel, e].isna().astype(float))
        else:
            present_el = ind[el].notna().any(axis=1)
            new = ~ind[bl].notna().any(axis=1)
            ind = ind[present_el].assign(attrit=new[present_el].astype(float))
        keep = [c for c in hh.columns if not c.endswith(("__bl", "__el"))]
        base = ind.merge(hh[keep], on="household_id", how="inner", suffixes=("", "_hh"))
    if stratum is not None:
        base = base[base["stratum"] == Stratum(stratum).value]
    out = pd.DataFrame(
        {
            "y": base["attrit"].to_numpy(float),
            "weight": (base["sampling_weight"] * base["tracking_weight"]).to_numpy(float),
            "cluster": base["village_id"].to_numpy(),
            "block": base["block_id"].to_numpy(),
            "arm": base["arm"].to_numpy(),
        },
        index=base.index,
    )
    for c in base.columns:
        if c not in out.columns and c not in ("attrit",):
            out[c] = base[c].to_numpy()
    return add_arm_dummies(out.reset_index(drop=True))


def attrition_regression(
    data: TrialData,
    level: AttritionLevel | str = AttritionLevel.HOUSEHOLD,
    *,
    covariates: Sequence[str] = (),
    **kwargs,
) -> FitResult:
    """Attrition indicator on arm dummies (optionally plus covariates), block FE, village clusters."""
    df = attrition_frame(data, level, **kwargs)
    y = df["y"].to_numpy()
    if len(y) == 0 or y.min() == y.max():
        raise EstimationError("attrition indicator has no variation")
    res = _regress(df, POOLED_TERMS, covariates)
    mean, sd = _weighted_stats(
        y[df["arm"] == Arm.CONTROL.value], df.loc[df["arm"] == Arm.CONTROL.value, "weight"].to_numpy(float)
    )
    res.meta.update(outcome=f"attrition_{AttritionLevel(level).value}", control_mean=mean, control_sd=sd,
                    terms=POOLED_TERMS, controls=tuple(covariates), family="Primary")
    return res


@dataclass
class BcrRow:
    outcome: str
    bcr: dict[str, float]
    se: dict[str, float]
    pvalues: dict[str, float]
    costs: dict[str, float] = field(default_factory=dict)
    family: str = "Primary"


BCR_PAIRS = {
    "a": ("T_GK", "T_GDMain"),
    "b": ("T_GK", "T_GDLarge"),
    "c": ("T_GDMain", "T_GDLarge"),
}


def bcr_row(res: FitResult, costs: Mapping[str, float]) -> BcrRow:
    bcr, se, pv = {}, {}, {}
    for term in POOLED_TERMS:
        c = costs[term]
        if c == 0:
            raise ValueError(f"zero cost for {term}")
        bcr[term] = float(res.params[term]) / (c / 100.0)
        se[term] = float(res.bse[term]) / (c / 100.0)
    for label, (a, b) in BCR_PAIRS.items():
        pv[label] = wald(res, bcr_equality_hypothesis(a, b, costs[a], costs[b]))[1]
    return BcrRow(res.meta.get("outcome", ""), bcr, se, pv, {t: costs[t] for t in POOLED_TERMS},
                  res.meta.get("family", "Primary"))


def bcr_table(
    data: TrialData,
    outcomes: Sequence[OutcomeSpec],
    ledgers: Mapping[Arm, ArmCostLedger],
    *,
    fits: Mapping[str, FitResult] | None = None,
    **itt_kwargs,
) -> list[BcrRow]:
    """Benefit-cost ratios per $100 of cost per eligible, with pairwise equality tests."""
    costs = term_costs(ledgers, "eligible")
    rows = []
    for spec in outcomes:
        res = fits[spec.name] if fits and spec.name in fits else itt(data, spec, **itt_kwargs)
        rows.append(bcr_row(res, costs))
    return rows


def _eligible_gd_frame(data, spec, covariates=()):
    frame, df = _frame(data, spec, WeightMode.ELIGIBLE_ITT, tuple(covariates), None, _has_baseline(data, spec))
    return frame, df


def lumpsum_flow(data: TrialData, spec: OutcomeSpec, *, controls: Sequence[str] = ()) -> FitResult:
    """Main/large dummies and their lump-sum interactions, choice households dropped."""
    frame, df = _eligible_gd_frame(data, spec, controls)
    df = df[df["arm"].isin([Arm.CONTROL.value] + _GD)]
    gd = df["arm"].isin(_GD)
    if "modality" not in df or df.loc[gd, "modality"].isna().any():
        raise DataError("GD households lack modality labels")
    df = df[~(gd & (df["modality"] == Modality.CHOICE.value))].copy()
    ls = (df["modality"] == Modality.LUMP_SUM.value).to_numpy(float)
    df["D_main"] = df["T_GDMain"]
    df["D_main_LS"] = df["T_GDMain"] * ls
    df["D_large"] = df["T_GDLarge"]
    df["D_large_LS"] = df["T_GDLarge"] * ls
    terms = ("D_main", "D_main_LS", "D_large", "D_large_LS")
    res = _regress(df, terms, list(frame.lag_columns) + list(controls))
    res.tests["main_lumpsum_total"] = wald(res, LinearHypothesis.from_rows([{"D_main": 1, "D_main_LS": 1}]))
    res.tests["large_lumpsum_total"] = wald(res, LinearHypothesis.from_rows([{"D_large": 1, "D_large_LS": 1}]))
    return _finish(res, frame, df, terms, controls)


def choice_effect(data: TrialData, spec: OutcomeSpec, *, controls: Sequence[str] = ()) -> FitResult:
    """Chose-lump-sum, assigned-lump-sum and got-what-I-wanted dummies among GD households."""
    frame, df = _eligible_gd_frame(data, spec, controls)
    df = df[df["arm"].isin(_GD)]
    if "chose_lumpsum" not in df or df["chose_lumpsum"].isna().all():
        raise DataError("no choice records")
    df = df[df["chose_lumpsum"].notna()].copy()
    chose = df["chose_lumpsum"].astype(bool).to_numpy()
    mod = df["modality"].to_numpy()
    assigned = (mod == Modality.LUMP_SUM.value) | ((mod == Modality.CHOICE.value) & chose)
    df["chose_LS"] = chose.astype(float)
    df["assigned_LS"] = assigned.astype(float)
    df["got_wanted"] = (assigned == chose).astype(float)
    terms = ("chose_LS", "assigned_LS", "got_wanted")
    extra = ["T_GDLarge"] if df["T_GDLarge"].nunique() > 1 else []
    res = _regress(df, terms, extra + list(frame.lag_columns) + list(controls))
    return _finish(res, frame, df, terms, controls)


class Moderator(str, enum.Enum):
    BASELINE_ANTHRO = "BaselineAnthro"
    FIRST_THOUSAND_DAYS = "FirstThousandDays"
    NEWBORN = "Newborn"
    IMPATIENT = "Impatient"
    INCONSISTENT = "Inconsistent"
    LACK_OTHER_CONTROL = "LackOtherControl"


BEHAVIOURAL_MODERATORS = frozenset({Moderator.IMPATIENT, Moderator.INCONSISTENT, Moderator.LACK_OTHER_CONTROL})

MODERATOR_COLUMNS = {
    Moderator.FIRST_THOUSAND_DAYS: "first_1000_days",
    Moderator.NEWBORN: "newborn",
    Moderator.IMPATIENT: "impatient",
    Moderator.INCONSISTENT: "inconsistent",
    Moderator.LACK_OTHER_CONTROL: "lack_other_control",
}


def prespecified_heterogeneity(
    data: TrialData,
    spec: OutcomeSpec,
    moderator: Moderator | str,
    *,
    column: str | None = None,
    controls: Sequence[str] = (),
    demean: bool | None = None,
) -> FitResult:
    """Arm dummies interacted with a moderator.

    Continuous moderators (and any moderator when ``demean=True``) are
    centred at their weighted sample mean, so the arm coefficients are the
    effects at the mean.  Tests compare each GD interaction with Gikuriro's.
    """
    moderator = Moderator(moderator)
    frame, df = _eligible_gd_frame(data, spec, controls)
    if moderator is Moderator.BASELINE_ANTHRO:
        m = df["y_lag"].to_numpy(float).copy()
        if "y_lag_missing" in df:
            m[df["y_lag_missing"].to_numpy(bool)] = np.nan
    else:
        col = column or MODERATOR_COLUMNS[moderator]
        src = data.individuals if spec.level is Level.INDIVIDUAL else data.households
        id_col = "individual_id" if spec.level is Level.INDIVIDUAL else "household_id"
        if col in src.columns:
            m = df["row_id"].map(dict(zip(src[id_col].astype(str), src[col]))).to_numpy(float)
        elif col in data.households.columns:
            hh = data.households
            m = df["household_id"].map(dict(zip(hh["household_id"].astype(str), hh[col]))).to_numpy(float)
        elif moderator is Moderator.FIRST_THOUSAND_DAYS and "age_months" in df:
            m = (df["age_months"].to_numpy(float) < 24).astype(float)
        else:
            raise DataError(f"moderator column {col!r} not found")
    df = df.assign(mod=m)
    df = df[np.isfinite(df["mod"].to_numpy(float))].copy()
    arms = POOLED_TERMS
    if moderator in BEHAVIOURAL_MODERATORS:
        # behavioural comparisons are Gikuriro against GD-Main only
        df = df[df["arm"] != Arm.GD_LARGE.value].copy()
        arms = ("T_GK", "T_GDMain")
    mv = df["mod"].to_numpy(float)
    if np.ptp(mv) == 0:
        raise EstimationError("moderator is constant")
    binary = set(np.unique(mv)) <= {0.0, 1.0}
    if demean if demean is not None else not binary:
        w = df["weight"].to_numpy(float)
        df["mod"] = mv - np.sum(w * mv) / np.sum(w)
    inter = []
    for t in arms:
        name = f"{t}_x_mod"
        df[name] = df[t] * df["mod"]
        inter.append(name)
    terms = tuple(inter) + arms + ("mod",)
    res = _regress(df, terms, list(frame.lag_columns) + list(controls))
    res.tests["GDMain_x=GK_x"] = wald(res, LinearHypothesis.from_rows([{"T_GDMain_x_mod": 1, "T_GK_x_mod": -1}]))
    if "T_GDLarge_x_mod" in inter:
        res.tests["GDLarge_x=GK_x"] = wald(res, LinearHypothesis.from_rows([{"T_GDLarge_x_mod": 1, "T_GK_x_mod": -1}]))
    res.meta["moderator"] = moderator.value
    return _finish(res, frame, df, terms, controls)


def ctb_classify(
    allocations: pd.DataFrame,
    survey_flags: pd.DataFrame | None = None,
    *,
    doubling_return: float = 2.0,
    near_start: int = 0,
    far_start: int = 90,
    impatience_threshold: float = 0.5,
) -> pd.DataFrame:
    """Impatience, time inconsistency and other-control traits per household.

    ``allocations`` is long: ``household_id, start_day, gross_return,
    soon_share`` with ``soon_share`` the fraction allocated to the sooner
    date.  Impatient: more than ``impatience_threshold`` kept for today at
    the doubling return.  Inconsistent: for some return offered in both
    frames, strictly more to "soon" when soon is today than when it is
    ``far_start`` days out.  Lacking other control: any survey flag set.
    Incomplete records give missing traits, not ``False``.
    """
    a = allocations.dropna(subset=["soon_share"])
    ids = list(dict.fromkeys(allocations["household_id"]))
    if survey_flags is not None:
        ids += [h for h in survey_flags.index if h not in set(ids)]
    out = pd.DataFrame(index=pd.Index(ids, name="household_id"))
    imp = pd.Series(pd.NA, index=out.index, dtype="boolean")
    inc = pd.Series(pd.NA, index=out.index, dtype="boolean")
    for hid, g in a.groupby("household_id", sort=False):
        near = g[g["start_day"] == near_start].set_index("gross_return")["soon_share"]
        far = g[g["start_day"] == far_start].set_index("gross_return")["soon_share"]
        if doubling_return in near.index:
            imp[hid] = bool(near[doubling_return] > impatience_threshold)
        shared = near.index.intersection(far.index)
        if len(shared):
            inc[hid] = bool((near[shared] > far[shared]).any())
    out["impatient"] = imp
    out["inconsistent"] = inc
    lack = pd.Series(pd.NA, index=out.index, dtype="boolean")
    if survey_flags is not None:
        flags = survey_flags.astype("boolean")
        anyset = flags.fillna(False).any(axis=1)
        complete = flags.notna().all(axis=1)
        for hid in flags.index:
            if anyset[hid]:
                lack[hid] = True
            elif complete[hid]:
                lack[hid] = False
    out["lack_other_control"] = lack
    return out
