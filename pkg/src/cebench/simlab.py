"""Synthetic cluster-randomized trials with known effects, and a Monte Carlo harness."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit, logit

from . import costing
from .costing import REFERENCE_LEDGERS, ArmCostLedger
from .data_model import (
    ARM_ORDER,
    GD_ARMS,
    GD_MAIN_ARMS,
    Arm,
    Modality,
    Role,
    StudyDesign,
    Stratum,
    TrialData,
    Village,
)

REFERENCE_VILLAGES = {
    Arm.CONTROL: 74,
    Arm.GIKURIRO: 74,
    Arm.GD_LOWER: 22,
    Arm.GD_MIDDLE: 22,
    Arm.GD_UPPER: 22,
    Arm.GD_LARGE: 34,
}
REFERENCE_HOUSEHOLDS = {
    Stratum.INELIGIBLE: {
        Arm.CONTROL: 298, Arm.GIKURIRO: 297, Arm.GD_LOWER: 88,
        Arm.GD_MIDDLE: 87, Arm.GD_UPPER: 88, Arm.GD_LARGE: 137,
    },
    Stratum.ELIGIBLE: {
        Arm.CONTROL: 521, Arm.GIKURIRO: 541, Arm.GD_LOWER: 165,
        Arm.GD_MIDDLE: 154, Arm.GD_UPPER: 167, Arm.GD_LARGE: 246,
    },
}
REFERENCE_MODALITY = {
    Modality.FLOW: {Arm.GD_LOWER: 83, Arm.GD_MIDDLE: 87, Arm.GD_UPPER: 104, Arm.GD_LARGE: 147},
    Modality.LUMP_SUM: {Arm.GD_LOWER: 51, Arm.GD_MIDDLE: 50, Arm.GD_UPPER: 41, Arm.GD_LARGE: 68},
    Modality.CHOICE: {Arm.GD_LOWER: 31, Arm.GD_MIDDLE: 17, Arm.GD_UPPER: 22, Arm.GD_LARGE: 31},
}
REFERENCE_BLOCKS = 22


class SpecError(ValueError):
    """Infeasible synthetic-trial settings."""


@dataclass(frozen=True)
class EffectSpec:
    """True effects for one outcome.

    Constant per-arm effects come from ``arm_effects`` (``GD_Main`` sets the
    three small arms).  With ``cash_at_benchmark`` set, GD effects are linear
    in cost per eligible and Gikuriro's effect is ``cash_at_benchmark +
    gk_offset``.  ``het_kind`` adds a moderator-dependent term to the arms
    in ``het_arms``.
    """

    arm_effects: Mapping[str, float] = field(default_factory=dict)
    cash_at_benchmark: float | None = None
    cash_slope_per_100: float = 0.0
    gk_offset: float = 0.0
    het_kind: str = "none"  # none | step | linear
    het_feature: str = "x1"
    het_scale: float = 0.0
    het_arms: tuple[str, ...] = tuple(a.value for a in GD_ARMS)
    lumpsum_effect: float = 0.0
    got_wanted_effect: float = 0.0
    spillover: Mapping[str, float] = field(default_factory=dict)
    on: str = "assigned"  # assigned | treated

    def arm_effect(self, arm: Arm, ledgers: Mapping[Arm, ArmCostLedger]) -> float:
        if self.cash_at_benchmark is not None:
            bench = costing.default_benchmark(ledgers)
            if arm is Arm.GIKURIRO:
                return self.cash_at_benchmark + self.gk_offset
            if arm.is_cash:
                t = costing.cost_per_eligible(ledgers[arm])
                return self.cash_at_benchmark + self.cash_slope_per_100 * (t - bench) / 100.0
            return 0.0
        if arm.value in self.arm_effects:
            return float(self.arm_effects[arm.value])
        if arm.is_main_cash and "GD_Main" in self.arm_effects:
            return float(self.arm_effects["GD_Main"])
        return 0.0


@dataclass(frozen=True)
class OutcomeDgp:
    name: str
    effects: EffectSpec = field(default_factory=EffectSpec)
    icc: float = 0.05
    noise_sd: float = 1.0
    autocorr: float = 0.5
    covariate_coefs: Mapping[str, float] = field(default_factory=dict)
    binary: bool = False
    baseline: bool = True
    level: str = "Household"


@dataclass(frozen=True)
class AttritionSpec:
    control_rate: float = 0.033
    arm_shift: Mapping[str, float] = field(default_factory=dict)  # logit shifts
    covariate_coefs: Mapping[str, float] = field(default_factory=dict)
    treated_covariate_coefs: Mapping[str, float] = field(default_factory=dict)
    child_rate: float = 0.07


@dataclass(frozen=True)
class DgpSpec:
    n_blocks: int = REFERENCE_BLOCKS
    villages: Mapping[Arm, int] = field(default_factory=lambda: dict(REFERENCE_VILLAGES))
    eligible_per_village: int = 7
    ineligible_per_village: int = 4
    ledgers: Mapping[Arm, ArmCostLedger] = field(default_factory=lambda: dict(REFERENCE_LEDGERS))
    outcomes: tuple[OutcomeDgp, ...] = (OutcomeDgp("y"),)
    child_outcomes: tuple[OutcomeDgp, ...] = ()
    children_per_household: int = 0
    n_covariates: int = 5
    attrition: AttritionSpec | None = None
    eligible_weight: float = 2.0
    ineligible_weight: float = 24.4
    tracking_weight_sd: float = 0.0
    ineligible_treat_rate: float = 0.15
    never_treat_share: float = 0.5
    modality_probs: tuple[float, float, float] = (0.577, 0.288, 0.135)
    lumpsum_preference: float = 0.65
    trait_rates: Mapping[str, float] = field(
        default_factory=lambda: {"impatient": 0.25, "inconsistent": 0.67, "lack_other_control": 0.27}
    )
    food_groups: int = 0
    design_seed: int | None = None

    def __post_init__(self):
        for o in self.outcomes + self.child_outcomes:
            if not 0.0 <= o.icc < 1.0:
                raise SpecError(f"ICC for {o.name} must lie in [0, 1)")
            if o.noise_sd < 0:
                raise SpecError("noise SD must be nonnegative")
            if o.noise_sd == 0 and o.icc > 0:
                raise SpecError(f"ICC {o.icc} is infeasible with zero noise for {o.name}")
            if not -1.0 < o.autocorr < 1.0:
                raise SpecError("autocorrelation must lie in (-1, 1)")
        probs = [self.ineligible_treat_rate, self.never_treat_share, self.lumpsum_preference,
                 *self.modality_probs, *self.trait_rates.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise SpecError("probabilities must lie in [0, 1]")
        if abs(sum(self.modality_probs) - 1.0) > 1e-9:
            raise SpecError("modality probabilities must sum to one")
        if self.attrition is not None and not 0.0 < self.attrition.control_rate < 1.0:
            raise SpecError("attrition control rate must lie in (0, 1)")
        if self.n_blocks < 1 or sum(self.villages.values()) < 2:
            raise SpecError("need at least one block and two villages")


def _streams(seed: int, design_seed: int | None):
    root = np.random.SeedSequence(seed)
    outcome_ss, structure_ss = root.spawn(2)
    if design_seed is not None:
        structure_ss = np.random.SeedSequence(design_seed)
    return (
        np.random.Generator(np.random.Philox(structure_ss)),
        np.random.Generator(np.random.Philox(outcome_ss)),
    )


def _design(spec: DgpSpec, rng: np.random.Generator) -> StudyDesign:
    labels = []
    for arm in ARM_ORDER:
        labels += [arm] * int(spec.villages.get(arm, 0))
    n = len(labels)
    # deal arms round-robin into blocks after a random order within arm: balanced blocks
    keys = rng.random(n)
    order = sorted(range(n), key=lambda i: (ARM_ORDER.index(labels[i]), keys[i]))
    offset = int(rng.integers(spec.n_blocks))
    blocks = [f"B{b + 1:02d}" for b in range(spec.n_blocks)]
    villages = []
    for pos, i in enumerate(order):
        arm = labels[i]
        amt = spec.ledgers[arm].cost_per_beneficiary if arm.is_cash else None
        villages.append(Village(f"V{pos + 1:03d}", blocks[(pos + offset) % spec.n_blocks], arm, amt))
    return StudyDesign(tuple(blocks), tuple(villages))


def _effect_values(o: OutcomeDgp, arms: np.ndarray, X: pd.DataFrame, ledgers) -> np.ndarray:
    eff = o.effects
    table = {a.value: eff.arm_effect(a, ledgers) for a in ARM_ORDER}
    out = np.array([table[a] for a in arms])
    if eff.het_kind != "none" and eff.het_scale != 0:
        x = X[eff.het_feature].to_numpy()
        h = np.where(x > 0, 1.0, -1.0) if eff.het_kind == "step" else x
        out = out + eff.het_scale * h * np.isin(arms, list(eff.het_arms))
    return out


def generate(spec: DgpSpec, seed: int = 0) -> TrialData:
    """Draw one synthetic trial.  Identical ``(spec, seed)`` gives identical data."""
    srng, orng = _streams(seed, spec.design_seed)
    design = _design(spec, srng)
    vf = design.village_frame()
    # --- households (structure stream)
    n_e, n_i = spec.eligible_per_village, spec.ineligible_per_village
    per_v = n_e + n_i
    nv = len(vf)
    vid = np.repeat(vf["village_id"].to_numpy(), per_v)
    arm = np.repeat(vf["arm"].to_numpy(), per_v)
    elig = np.tile(np.r_[np.ones(n_e, bool), np.zeros(n_i, bool)], nv)
    n = vid.size
    X = pd.DataFrame({f"x{j + 1}": srng.standard_normal(n) for j in range(spec.n_covariates)})
    hh_size = 1 + srng.poisson(3.5, n)
    never = ~elig & (srng.random(n) < spec.never_treat_share)
    ubudehe = np.where(elig, srng.integers(1, 3, n), np.where(never, srng.integers(3, 5, n), srng.integers(1, 3, n)))
    hh_size = np.where(elig | ~never, np.maximum(hh_size, 3), hh_size)
    is_gd = np.isin(arm, [a.value for a in GD_ARMS])
    mod_draw = srng.choice(3, size=n, p=list(spec.modality_probs))
    modality = np.where(
        is_gd & elig, np.array([Modality.FLOW.value, Modality.LUMP_SUM.value, Modality.CHOICE.value], dtype=object)[mod_draw], None
    )
    sw = np.where(elig, spec.eligible_weight, spec.ineligible_weight)
    tw = np.ones(n)
    if spec.tracking_weight_sd > 0:
        tw = np.exp(spec.tracking_weight_sd * srng.standard_normal(n))
    traits = {k: (srng.random(n) < r).astype(float) for k, r in spec.trait_rates.items()}

    # --- behaviour (outcome stream)
    comp_e = np.array([spec.ledgers[Arm(a)].compliance_eligible if Arm(a) in spec.ledgers else 0.0 for a in arm])
    treated_arm = arm != Arm.CONTROL.value
    complied = treated_arm & np.where(
        elig, orng.random(n) < comp_e, (~never) & (orng.random(n) < spec.ineligible_treat_rate)
    )
    chose = np.where(is_gd & elig, orng.random(n) < spec.lumpsum_preference, False)
    chose_col = np.where(is_gd & elig, chose.astype(float), np.nan)
    assigned_ls = (modality == Modality.LUMP_SUM.value) | ((modality == Modality.CHOICE.value) & chose)
    got = (assigned_ls == chose) & is_gd & elig

    cols = {
        "household_id": [f"H{i + 1:05d}" for i in range(n)],
        "village_id": vid,
        "stratum": np.where(elig, Stratum.ELIGIBLE.value, Stratum.INELIGIBLE.value),
        "sampling_weight": sw,
        "tracking_weight": tw,
        "complied": complied,
        "modality": modality,
        "chose_lumpsum": chose_col,
        "hh_size": hh_size,
        "ubudehe": ubudehe,
        "never_treat": never,
    }
    cols.update({c: X[c].to_numpy() for c in X.columns})
    cols.update(traits)

    # transfers actually received
    transfer = np.zeros(n)
    for v in design.villages:
        if v.arm.is_cash:
            rows = np.flatnonzero((vid == v.village_id) & complied)
            if rows.size:
                transfer[rows] = costing.scale_transfers(v.assigned_transfer, hh_size[rows]).usd
    cols["transfer_usd"] = transfer

    vcodes = pd.factorize(vid)[0]
    eligible_assigned = elig & treated_arm
    for o in spec.outcomes:
        eff = _effect_values(o, arm, X, spec.ledgers)
        dose = np.where(elig, complied if o.effects.on == "treated" else eligible_assigned, complied).astype(float)
        y_eff = eff * dose
        y_eff += o.effects.lumpsum_effect * (assigned_ls & elig & is_gd)
        y_eff += o.effects.got_wanted_effect * got
        for key, val in o.effects.spillover.items():
            arms_hit = [a.value for a in GD_MAIN_ARMS] if key == "GD_Main" else [key]
            y_eff += val * (np.isin(arm, arms_hit) & ~elig & ~complied)
        cols.update(_draw_outcome(o, X, vcodes, nv, y_eff, orng))
    if spec.food_groups:
        base = -0.2 + 0.1 * X["x1"].to_numpy()
        lift = 0.4 * np.isin(arm, [Arm.GD_LARGE.value]) + 0.1 * treated_arm
        for g in range(spec.food_groups):
            p = expit(base + (g - spec.food_groups / 2) * 0.25 + lift * elig)
            cols[f"fg{g + 1:02d}__el"] = (orng.random(n) < p).astype(float)
    hh = pd.DataFrame(cols)

    individuals = None
    if spec.children_per_household and spec.child_outcomes:
        individuals = _children(spec, hh, X, arm, elig, complied, vcodes, nv, orng)

    if spec.attrition is not None:
        a = spec.attrition
        eta = logit(a.control_rate) + np.array([a.arm_shift.get(x, 0.0) for x in arm])
        for c, b in a.covariate_coefs.items():
            eta += b * X[c].to_numpy()
        for c, b in a.treated_covariate_coefs.items():
            eta += b * X[c].to_numpy() * treated_arm
        gone = orng.random(n) < expit(eta)
        el_cols = [c for c in hh.columns if c.endswith("__el")]
        hh.loc[gone, el_cols] = np.nan
        if individuals is not None:
            lost = individuals["household_id"].isin(hh.loc[gone, "household_id"]).to_numpy()
            lost |= orng.random(len(individuals)) < a.child_rate
            icols = [c for c in individuals.columns if c.endswith("__el")]
            individuals.loc[lost, icols] = np.nan
    return TrialData(design, hh, individuals)


def _draw_outcome(o: OutcomeDgp, X: pd.DataFrame, vcodes, nv, effect, rng) -> dict[str, np.ndarray]:
    n = vcodes.size
    sig = o.noise_sd
    sv = sig * math.sqrt(o.icc / (1 - o.icc)) if o.icc > 0 else 0.0
    v = rng.standard_normal(nv)[vcodes] * sv
    mean = np.zeros(n)
    for c, b in o.covariate_coefs.items():
        mean += b * X[c].to_numpy()
    e0 = rng.standard_normal(n)
    e1 = o.autocorr * e0 + math.sqrt(1 - o.autocorr**2) * rng.standard_normal(n)
    y_bl = mean + v + sig * e0
    y_el = mean + v + sig * e1 + effect
    if o.binary:
        y_bl, y_el = (y_bl > 0).astype(float), (y_el > 0).astype(float)
    out = {f"{o.name}__el": y_el}
    if o.baseline:
        out[f"{o.name}__bl"] = y_bl
    return out


def _children(spec, hh, X, arm, elig, complied, vcodes, nv, rng) -> pd.DataFrame:
    k = spec.children_per_household
    rows = np.repeat(np.flatnonzero(elig), k)
    m = rows.size
    age = rng.uniform(0, 60, m)
    cols = {
        "individual_id": [f"I{i + 1:06d}" for i in range(m)],
        "household_id": hh["household_id"].to_numpy()[rows],
        "role": np.full(m, Role.CHILD_U6.value, dtype=object),
        "sex": np.where(rng.random(m) < 0.5, "F", "M"),
        "age_months": age,
        "first_1000_days": (age < 24).astype(float),
    }
    Xc = X.iloc[rows].reset_index(drop=True)
    for o in spec.child_outcomes:
        eff = _effect_values(o, arm[rows], Xc, spec.ledgers)
        dose = complied[rows] if o.effects.on == "treated" else (arm[rows] != Arm.CONTROL.value)
        cols.update(_draw_outcome(o, Xc, vcodes[rows], nv, eff * dose, rng))
    return pd.DataFrame(cols)


def reference_design_data() -> TrialData:
    """Household skeleton with the published arm, stratum and modality counts (no outcomes)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(20180101)))
    design = _design(DgpSpec(), rng)
    by_arm: dict[Arm, list[str]] = {a: [] for a in ARM_ORDER}
    for v in design.villages:
        by_arm[v.arm].append(v.village_id)
    recs = []
    hid = 0
    for arm in ARM_ORDER:
        vids = by_arm[arm]
        mods: list = []
        if arm.is_cash:
            for mod in Modality:
                mods += [mod.value] * REFERENCE_MODALITY[mod][arm]
        for stratum in (Stratum.ELIGIBLE, Stratum.INELIGIBLE):
            count = REFERENCE_HOUSEHOLDS[stratum][arm]
            for j in range(count):
                hid += 1
                recs.append(
                    {
                        "household_id": f"H{hid:05d}",
                        "village_id": vids[j % len(vids)],
                        "stratum": stratum.value,
                        "sampling_weight": 2.0 if stratum is Stratum.ELIGIBLE else 24.4,
                        "tracking_weight": 1.0,
                        "complied": False,
                        "modality": mods[j] if (stratum is Stratum.ELIGIBLE and mods) else None,
                    }
                )
    return TrialData(design, pd.DataFrame.from_records(recs))


# ---------------------------------------------------------------------------
# Monte Carlo


class MonteCarloAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    dof: float = np.inf


@dataclass
class EstimatorDescriptor:
    """An estimator to replicate: ``run(data)`` returns named estimates and p-values.

    ``truth`` maps estimate names to true values; ``null`` maps them to the
    value tested for power (default zero).  P-values returned under ``tests``
    feed rejection rates.
    """

    name: str
    run: Callable[[TrialData], tuple[Mapping[str, Estimate], Mapping[str, float]]]
    truth: Mapping[str, float] = field(default_factory=dict)
    null: Mapping[str, float] = field(default_factory=dict)
    alpha: float = 0.05


@dataclass
class McReport:
    estimator: str
    reps: int
    failures: int
    rows: pd.DataFrame
    tests: pd.DataFrame
    estimates: pd.DataFrame = field(repr=False)
    wall_clock: float = 0.0

    def row(self, param: str) -> pd.Series:
        return self.rows.set_index("parameter").loc[param]

    def rejection_rate(self, test: str) -> float:
        return float(self.tests.set_index("test").loc[test, "rejection_rate"])

    def to_csv(self, path) -> None:
        table = pd.concat(
            [self.rows.assign(kind="estimate"), self.tests.rename(columns={"test": "parameter"}).assign(kind="test")],
            ignore_index=True,
        )
        table.insert(0, "estimator", self.estimator)
        table.to_csv(path, index=False, float_format="%.10g")

    def summary(self) -> str:
        lines = [f"Monte Carlo: {self.estimator}  reps={self.reps}  failures={self.failures}"]
        for r in self.rows.itertuples(index=False):
            lines.append(
                f"  {r.parameter:<16} truth={r.truth:+.4f} mean={r.mean:+.4f} bias={r.bias:+.4f} "
                f"(mc se {r.mc_se:.4f}) sd={r.sd:.4f} mean_se={r.mean_se:.4f} coverage={r.coverage:.3f} "
                f"reject_null={r.reject_null:.3f}"
            )
        for r in self.tests.itertuples(index=False):
            lines.append(f"  test {r.test:<20} rejection_rate={r.rejection_rate:.3f}")
        return "\n".join(lines) + "\n"


def replicate_seeds(seed: int, reps: int) -> list[int]:
    ss = np.random.SeedSequence(seed).spawn(reps)
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in ss]


def _one_rep(spec, descriptor, s):
    try:
        return descriptor.run(generate(spec, s)), None
    except Exception as exc:  # noqa: BLE001 - failures are counted and reported
        return None, f"{type(exc).__name__}: {exc}"


def monte_carlo(
    spec: DgpSpec,
    descriptor: EstimatorDescriptor,
    reps: int,
    *,
    seed: int = 0,
    n_jobs: int = 1,
    max_failure_rate: float = 0.05,
) -> McReport:
    """Run ``descriptor`` on ``reps`` independent synthetic trials."""
    start = time.perf_counter()
    seeds = replicate_seeds(seed, reps)
    if n_jobs > 1:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=n_jobs)(delayed(_one_rep)(spec, descriptor, s) for s in seeds)
    else:
        outs = [_one_rep(spec, descriptor, s) for s in seeds]
    errors = [e for _, e in outs if e is not None]
    if len(errors) > max_failure_rate * reps:
        raise MonteCarloAbort(
            f"{len(errors)}/{reps} replications failed for {descriptor.name}; first errors: {errors[:3]}"
        )
    recs, trecs = [], []
    for r, (out, err) in enumerate(outs):
        if out is None:
            continue
        ests, tests = out
        for k, e in ests.items():
            recs.append({"rep": r, "parameter": k, "value": e.value, "se": e.se, "dof": e.dof})
        for k, p in tests.items():
            trecs.append({"rep": r, "test": k, "p": p})
    est = pd.DataFrame.from_records(recs, columns=["rep", "parameter", "value", "se", "dof"])
    rows = []
    for k, g in est.groupby("parameter", sort=False):
        v, se, dof = g["value"].to_numpy(), g["se"].to_numpy(), g["dof"].to_numpy()
        truth = descriptor.truth.get(k, np.nan)
        null = descriptor.null.get(k, 0.0)
        crit = stats.t.ppf(1 - descriptor.alpha / 2, dof)
        cover = np.abs(v - truth) <= crit * se if np.isfinite(truth) else np.full(v.size, np.nan)
        rows.append(
            {
                "parameter": k,
                "truth": truth,
                "mean": v.mean(),
                "bias": v.mean() - truth,
                "sd": v.std(ddof=1) if v.size > 1 else np.nan,
                "mc_se": v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else np.nan,
                "mean_se": se.mean(),
                "coverage": np.mean(cover),
                "reject_null": np.mean(np.abs(v - null) > crit * se),
                "n": v.size,
            }
        )
    tdf = pd.DataFrame.from_records(trecs, columns=["rep", "test", "p"])
    tests = [
        {"test": k, "rejection_rate": float(np.mean(g["p"].to_numpy() < descriptor.alpha)), "n": len(g)}
        for k, g in tdf.groupby("test", sort=False)
    ]
    return McReport(
        descriptor.name,
        reps,
        len(errors),
        pd.DataFrame(rows, columns=["parameter", "truth", "mean", "bias", "sd", "mc_se", "mean_se", "coverage", "reject_null", "n"]),
        pd.DataFrame(tests, columns=["test", "rejection_rate", "n"]),
        est,
        time.perf_counter() - start,
    )


def fit_estimates(res, terms: Sequence[str]) -> dict[str, Estimate]:
    return {t: Estimate(float(res.params[t]), float(res.bse[t]), float(res.dof)) for t in terms}


# ---------------------------------------------------------------------------
# interpolation power study


@dataclass
class PowerStudy:
    variants: tuple[str, ...]
    analytic_var: dict[str, float]
    mc_var: dict[str, float]
    reps: int

    def ratio(self, variant: str, kind: str = "analytic") -> float:
        v = self.analytic_var if kind == "analytic" else self.mc_var
        return v[variant] / v["Linear"]

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "variant": list(self.variants),
                "analytic_var": [self.analytic_var[v] for v in self.variants],
                "mc_var": [self.mc_var[v] for v in self.variants],
                "analytic_ratio": [self.ratio(v) for v in self.variants],
                "mc_ratio": [self.ratio(v, "mc") for v in self.variants],
            }
        )


def power_spec(**overrides) -> DgpSpec:
    """Reference arm shape and costs, fixed design, no baseline round and no attrition."""
    base = DgpSpec(outcomes=(OutcomeDgp("y", icc=0.05, baseline=False),), design_seed=7)
    return replace(base, **overrides)


def analytic_variance(data: TrialData, spec: DgpSpec, variant, outcome: str = "y") -> float:
    """Design-based sampling variance of the Gikuriro differential.

    ``A^{-1} X'W Omega W X A^{-1}`` with ``Omega`` the village random-effect
    plus idiosyncratic covariance implied by ``spec``.
    """
    from .data_model import OutcomeSpec
    from .estimators import _frame, _tau_columns, CeVariant
    from .wls import RegressionSpec, design_matrix

    variant = CeVariant(variant)
    o = next(x for x in spec.outcomes if x.name == outcome)
    ospec = OutcomeSpec(outcome)
    _, df = _frame(data, ospec, "EligibleITT", (), None, lagged=False)
    if variant.dropped_arm is not None:
        df = df[df["arm"] != variant.dropped_arm.value]
    tau = costing.assign_tau(data.design, spec.ledgers)
    df, tau_terms = _tau_columns(df, tau, variant.degree)
    rs = RegressionSpec(("T_any", "T_GK") + tau_terms)
    X, names = design_matrix(rs, df)
    w = df["weight"].to_numpy(float)
    A_inv = np.linalg.inv(X.T @ (X * w[:, None]))
    sig2 = o.noise_sd**2
    sv2 = sig2 * o.icc / (1 - o.icc)
    WX = X * w[:, None]
    codes = pd.factorize(df["cluster"].to_numpy())[0]
    S = np.zeros((codes.max() + 1, X.shape[1]))
    np.add.at(S, codes, WX)
    meat = sig2 * (WX.T @ (X * w[:, None])) + sv2 * (S.T @ S)
    V = A_inv @ meat @ A_inv
    return float(V[names.index("T_GK"), names.index("T_GK")])


def interpolation_power_study(
    spec: DgpSpec | None = None,
    reps: int = 1000,
    *,
    variants: Sequence[str] = ("Linear", "Quadratic", "Cubic", "DropLower", "DropMid", "DropUpper", "DropLarge"),
    seed: int = 0,
) -> PowerStudy:
    """Var(delta_GK | variant) / Var(delta_GK | Linear), analytically and by simulation.

    The design (village arms, households, covariates) is held fixed through
    ``spec.design_seed`` so both routes target the same sampling variance.
    """
    from .data_model import OutcomeSpec
    from .estimators import cost_equivalent

    spec = spec or power_spec()
    # the analytic route assumes no lagged outcome and no attrition
    spec = replace(spec, outcomes=(replace(spec.outcomes[0], baseline=False),), attrition=None,
                   design_seed=seed if spec.design_seed is None else spec.design_seed)
    ospec = OutcomeSpec(spec.outcomes[0].name)
    first = generate(spec, 0)
    analytic = {v: analytic_variance(first, spec, v, ospec.name) for v in variants}
    draws: dict[str, list[float]] = {v: [] for v in variants}
    for s in replicate_seeds(seed, reps):
        data = generate(spec, s)
        for v in variants:
            draws[v].append(cost_equivalent(data, ospec, spec.ledgers, v).delta_gk)
    mc = {v: float(np.var(draws[v], ddof=1)) for v in variants}
    return PowerStudy(tuple(variants), analytic, mc, reps)


# ---------------------------------------------------------------------------
# auxiliary DGPs


def sparse_selection_data(n: int = 500, p: int = 50, k: int = 5, effect: float = 0.5,
                          coef: float = 0.5, rho: float = 0.3, seed: int = 0):
    """Outcome, treatment and candidates where the first ``k`` candidates confound both."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    cov = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    X = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
    beta = np.zeros(p)
    beta[:k] = coef
    d = X @ beta + rng.standard_normal(n)
    y = effect * d + X @ beta + rng.standard_normal(n)
    return y, d, pd.DataFrame(X, columns=[f"c{j + 1:02d}" for j in range(p)])


def forest_data(n: int = 2000, kind: str = "step", tau: float = 0.5, m: int = 5, noise_sd: float = 1.0, seed: int = 0):
    """Moderators, binary treatment, outcome and true CATE for forest checks."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    X = rng.standard_normal((n, m))
    t = (rng.random(n) < 0.5).astype(float)
    if kind == "step":
        cate = np.where(X[:, 0] > 0, tau, -tau)
    elif kind == "homogeneous":
        cate = np.full(n, tau)
    elif kind == "zero":
        cate = np.zeros(n)
    else:
        raise ValueError(kind)
    y = cate * t + 0.5 * X[:, 1] + noise_sd * rng.standard_normal(n)
    return pd.DataFrame(X, columns=[f"m{j + 1}" for j in range(m)]), t, y, cate


def ce_validity_spec(offset: float = 0.5, cash_at_benchmark: float = 0.2, slope_per_100: float = 0.1) -> DgpSpec:
    """Cash effect linear in cost per eligible; Gikuriro sits ``offset`` above cash at its own cost."""
    eff = EffectSpec(cash_at_benchmark=cash_at_benchmark, cash_slope_per_100=slope_per_100, gk_offset=offset)
    return DgpSpec(outcomes=(OutcomeDgp("y", eff),))


def ipw_attrition_spec(effect: float = 0.3, het_scale: float = 0.6, attrition_slope: float = 1.5) -> DgpSpec:
    """Effects rising in ``x1`` and treated households with high ``x1`` attriting more.

    Attrition is missing at random given ``x1`` and arm, so complete-case ITT
    is biased towards zero while weighting by the inverse remain propensity
    is not.
    """
    arms = tuple(a.value for a in ARM_ORDER if a is not Arm.CONTROL)
    eff = EffectSpec(arm_effects={a: effect for a in arms}, het_kind="linear", het_feature="x1",
                     het_scale=het_scale, het_arms=arms)
    return DgpSpec(outcomes=(OutcomeDgp("y", eff),),
                   attrition=AttritionSpec(control_rate=0.1, treated_covariate_coefs={"x1": attrition_slope}))


def equal_bcr_spec(per_100: float = 0.05, ledgers: Mapping[Arm, ArmCostLedger] | None = None) -> DgpSpec:
    """GD-Main and GD-Large effects proportional to cost per eligible: equal benefit-cost ratios."""
    ledgers = dict(REFERENCE_LEDGERS) if ledgers is None else dict(ledgers)
    main = costing.arm_cost("GD_Main", ledgers)
    large = costing.arm_cost(Arm.GD_LARGE, ledgers)
    eff = EffectSpec(arm_effects={"GD_Main": per_100 * main / 100.0, "GD_Large": per_100 * large / 100.0})
    return DgpSpec(ledgers=ledgers, outcomes=(OutcomeDgp("y", eff),))
