"""Trial data containers, outcome transforms and analysis-frame construction.

The trial is a two-level panel: villages (the randomization unit, nested in
blocks) contain households, and households contain individuals.  Household and
individual records live in pandas frames; outcome columns follow the
``<name>__bl`` / ``<name>__el`` convention for baseline and endline rounds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd


class Arm(str, enum.Enum):
    CONTROL = "Control"
    GIKURIRO = "Gikuriro"
    GD_LOWER = "GD_Lower"
    GD_MIDDLE = "GD_Middle"
    GD_UPPER = "GD_Upper"
    GD_LARGE = "GD_Large"

    @property
    def is_cash(self) -> bool:
        return self.value.startswith("GD_")

    @property
    def is_main_cash(self) -> bool:
        return self in GD_MAIN_ARMS


GD_MAIN_ARMS = (Arm.GD_LOWER, Arm.GD_MIDDLE, Arm.GD_UPPER)
GD_ARMS = GD_MAIN_ARMS + (Arm.GD_LARGE,)
ARM_ORDER = (Arm.CONTROL, Arm.GIKURIRO) + GD_ARMS


class Modality(str, enum.Enum):
    FLOW = "Flow"
    LUMP_SUM = "LumpSum"
    CHOICE = "Choice"


class Stratum(str, enum.Enum):
    ELIGIBLE = "Eligible"
    INELIGIBLE = "Ineligible"


class Round(str, enum.Enum):
    BASELINE = "Baseline"
    ENDLINE = "Endline"


class Role(str, enum.Enum):
    CHILD_U6 = "ChildU6"
    WOMAN_CHILDBEARING = "WomanChildbearing"
    OTHER = "OtherMember"


class Level(str, enum.Enum):
    HOUSEHOLD = "Household"
    INDIVIDUAL = "Individual"


class Family(str, enum.Enum):
    PRIMARY = "Primary"
    SECONDARY = "Secondary"


class WeightMode(str, enum.Enum):
    ELIGIBLE_ITT = "EligibleITT"
    POPULATION_TCE = "PopulationTCE"
    SPILLOVER_NEVER_TREAT = "SpilloverNeverTreat"


class DataError(ValueError):
    """Invalid or inconsistent trial data."""


_ROUND_SUFFIX = {Round.BASELINE: "bl", Round.ENDLINE: "el"}


def outcome_column(name: str, rnd: Round | str) -> str:
    return f"{name}__{_ROUND_SUFFIX[Round(rnd)]}"


# ---------------------------------------------------------------------------
# transforms


def ihs(x):
    """Inverse hyperbolic sine, ``ln(x + sqrt(x^2 + 1))``.

    Accepts a scalar or an array.  Evaluated through ``arcsinh``, which is
    accurate for large negative inputs where the textbook form cancels.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("ihs requires finite input")
    out = np.arcsinh(arr)
    return float(out) if out.ndim == 0 else out


def winsorize(values: Sequence[float], lo: float = 0.01, hi: float = 0.99, method: str = "linear") -> np.ndarray:
    """Clamp values to their empirical ``lo`` and ``hi`` quantiles.

    Quantiles are unweighted and type 7 (``method="linear"``) by default.
    Type 7 caps usually fall between two order statistics, so a second pass
    can pull them in a little further; ``method="inverted_cdf"`` caps at
    order statistics and is idempotent.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("winsorize requires at least one value")
    if not np.all(np.isfinite(arr)):
        raise ValueError("winsorize requires finite values")
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"invalid winsor quantiles ({lo}, {hi})")
    qlo, qhi = np.quantile(arr, [lo, hi], method=method)
    return np.clip(arr, qlo, qhi)


@dataclass(frozen=True)
class Transform:
    kind: str = "none"  # none | ihs | winsorize | winsorize_ihs
    lo: float = 0.01
    hi: float = 0.99
    method: str = "linear"

    def __post_init__(self):
        if self.kind not in ("none", "ihs", "winsorize", "winsorize_ihs"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(f"invalid winsor quantiles ({self.lo}, {self.hi})")

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.asarray(values, dtype=float).copy()
        ok = np.isfinite(out)
        if not ok.any():
            return out
        if self.kind in ("winsorize", "winsorize_ihs"):
            out[ok] = winsorize(out[ok], self.lo, self.hi, self.method)
        if self.kind in ("ihs", "winsorize_ihs"):
            out[ok] = ihs(out[ok])
        return out


@dataclass(frozen=True)
class OutcomeSpec:
    name: str
    level: Level = Level.HOUSEHOLD
    transform: Transform = field(default_factory=Transform)
    family: Family = Family.PRIMARY
    role: Role | None = None
    min_age_months: float | None = None
    max_age_months: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "family", Family(self.family))
        if self.role is not None:
            object.__setattr__(self, "role", Role(self.role))


# ---------------------------------------------------------------------------
# design and rows


@dataclass(frozen=True)
class Village:
    village_id: str
    block_id: str
    arm: Arm
    assigned_transfer: float | None = None


@dataclass(frozen=True)
class StudyDesign:
    blocks: tuple[str, ...]
    villages: tuple[Village, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        vs = tuple(
            v if isinstance(v, Village) else Village(*v) for v in self.villages
        )
        vs = tuple(
            Village(v.village_id, v.block_id, Arm(v.arm), v.assigned_transfer) for v in vs
        )
        object.__setattr__(self, "villages", vs)
        ids = [v.village_id for v in vs]
        if len(set(ids)) != len(ids):
            raise DataError("village ids must be unique")
        blocks = set(self.blocks)
        for v in vs:
            if v.block_id not in blocks:
                raise DataError(f"village {v.village_id} has unknown block {v.block_id}")
            has_amount = v.assigned_transfer is not None and not (
                isinstance(v.assigned_transfer, float) and math.isnan(v.assigned_transfer)
            )
            if v.arm.is_cash != has_amount:
                raise DataError(
                    f"village {v.village_id}: assigned transfer must be present iff arm is GD"
                )

    def arm_counts(self) -> dict[Arm, int]:
        counts = {a: 0 for a in ARM_ORDER}
        for v in self.villages:
            counts[v.arm] += 1
        return counts

    def village_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "village_id": [v.village_id for v in self.villages],
                "block_id": [v.block_id for v in self.villages],
                "arm": [v.arm.value for v in self.villages],
                "assigned_transfer": [
                    np.nan if v.assigned_transfer is None else float(v.assigned_transfer)
                    for v in self.villages
                ],
            }
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "StudyDesign":
        villages = []
        for r in df.itertuples(index=False):
            amt = getattr(r, "assigned_transfer", np.nan)
            amt = None if amt is None or pd.isna(amt) else float(amt)
            villages.append(Village(str(r.village_id), str(r.block_id), Arm(r.arm), amt))
        blocks = tuple(dict.fromkeys(str(b) for b in df["block_id"]))
        return cls(blocks, tuple(villages))


@dataclass(frozen=True)
class HouseholdRow:
    household_id: str
    village_id: str
    stratum: Stratum
    sampling_weight: float
    tracking_weight: float = 1.0
    complied: bool = False
    modality: Modality | None = None
    chose_lumpsum: bool | None = None
    covariates: Mapping[str, float] = field(default_factory=dict)
    outcomes: Mapping[tuple[str, Round], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "stratum", Stratum(self.stratum))
        if self.modality is not None:
            object.__setattr__(self, "modality", Modality(self.modality))
        if not (self.sampling_weight > 0 and self.tracking_weight > 0):
            raise DataError(f"household {self.household_id}: weights must be positive")

    @property
    def attrited(self) -> bool:
        endline = [v for (n, r), v in self.outcomes.items() if Round(r) is Round.ENDLINE]
        return not any(v is not None and np.isfinite(v) for v in endline)


@dataclass(frozen=True)
class IndividualRow:
    individual_id: str
    household_id: str
    role: Role
    sex: str
    age_months: float
    outcomes: Mapping[tuple[str, Round], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.age_months >= 0:
            raise DataError(f"individual {self.individual_id}: negative age")
        if self.role is Role.CHILD_U6 and self.age_months >= 72:
            raise DataError(f"individual {self.individual_id}: ChildU6 aged 72+ months")


def households_to_frame(rows: Iterable[HouseholdRow]) -> pd.DataFrame:
    records = []
    for r in rows:
        rec = {
            "household_id": r.household_id,
            "village_id": r.village_id,
            "stratum": r.stratum.value,
            "sampling_weight": float(r.sampling_weight),
            "tracking_weight": float(r.tracking_weight),
            "complied": bool(r.complied),
            "modality": None if r.modality is None else r.modality.value,
            "chose_lumpsum": r.chose_lumpsum,
        }
        rec.update({k: float(v) for k, v in r.covariates.items()})
        for (name, rnd), v in r.outcomes.items():
            rec[outcome_column(name, rnd)] = np.nan if v is None else float(v)
        records.append(rec)
    return pd.DataFrame.from_records(records)


def individuals_to_frame(rows: Iterable[IndividualRow]) -> pd.DataFrame:
    records = []
    for r in rows:
        rec = {
            "individual_id": r.individual_id,
            "household_id": r.household_id,
            "role": r.role.value,
            "sex": r.sex,
            "age_months": float(r.age_months),
        }
        for (name, rnd), v in r.outcomes.items():
            rec[outcome_column(name, rnd)] = np.nan if v is None else float(v)
        records.append(rec)
    return pd.DataFrame.from_records(records)


_HH_REQUIRED = ("household_id", "village_id", "stratum", "sampling_weight")


@dataclass(frozen=True)
class TrialData:
    """Design plus household (and optionally individual) records.

    Treat as immutable once built; estimators never modify the frames.
    """

    design: StudyDesign
    households: pd.DataFrame
    individuals: pd.DataFrame | None = None

    def __post_init__(self):
        hh = self.households
        missing = [c for c in _HH_REQUIRED if c not in hh.columns]
        if missing:
            raise DataError(f"households frame lacks columns {missing}")
        hh = hh.copy()
        if "tracking_weight" not in hh:
            hh["tracking_weight"] = 1.0
        if "complied" not in hh:
            hh["complied"] = False
        for col in ("sampling_weight", "tracking_weight"):
            w = hh[col].to_numpy(dtype=float)
            if not np.all(w > 0):
                raise DataError(f"{col} must be strictly positive")
        bad = set(hh["stratum"]) - {s.value for s in Stratum}
        if bad:
            raise DataError(f"unknown strata {sorted(bad)}")
        vf = self.design.village_frame()
        unknown = set(hh["village_id"].astype(str)) - set(vf["village_id"])
        if unknown:
            raise DataError(f"households reference unknown villages {sorted(unknown)[:5]}")
        if hh["household_id"].duplicated().any():
            raise DataError("duplicate household ids")
        hh["village_id"] = hh["village_id"].astype(str)
        hh = hh.drop(columns=[c for c in ("block_id", "arm") if c in hh.columns])
        hh = hh.merge(vf[["village_id", "block_id", "arm"]], on="village_id", how="left")
        object.__setattr__(self, "households", hh)
        if self.individuals is not None:
            ind = self.individuals
            if not set(ind["household_id"]).issubset(set(hh["household_id"])):
                raise DataError("individuals reference unknown households")
            if (ind["age_months"] < 0).any():
                raise DataError("negative age in individuals")
            child = ind["role"] == Role.CHILD_U6.value
            age_bl = ind.get("age_months_bl", ind["age_months"])
            if (child & (age_bl >= 72)).any():
                raise DataError("ChildU6 with baseline age of 72+ months")

    def endline_columns(self, frame: pd.DataFrame | None = None) -> list[str]:
        frame = self.households if frame is None else frame
        return [c for c in frame.columns if c.endswith("__el")]

    def attrited(self) -> pd.Series:
        """Household attrition flag: every endline outcome missing."""
        cols = self.endline_columns()
        if not cols:
            raise DataError("no endline outcome columns; attrition undefined")
        return self.households[cols].isna().all(axis=1)


# ---------------------------------------------------------------------------
# analysis frames


@dataclass(frozen=True)
class AnalysisFrame:
    """Regression-ready rows: ``y``, ``y_lag``, covariates, weights, ids."""

    df: pd.DataFrame
    outcome: OutcomeSpec
    weight_mode: WeightMode
    covariates: tuple[str, ...] = ()
    lag_columns: tuple[str, ...] = ("y_lag",)

    def __len__(self) -> int:
        return len(self.df)


def _weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(x * w) / np.sum(w))


def never_treat_flag(hh: pd.DataFrame) -> pd.Series:
    """Ineligible households outside GD's targeting rule (Ubudehe 3/4 or fewer than three members)."""
    if "never_treat" in hh:
        return hh["never_treat"].astype(bool)
    if "ubudehe" in hh and "hh_size" in hh:
        return (hh["ubudehe"] >= 3) | (hh["hh_size"] < 3)
    raise DataError("spillover frame needs a never_treat column or ubudehe and hh_size")


def _individual_base(data: TrialData, spec: OutcomeSpec) -> pd.DataFrame:
    if data.individuals is None:
        raise DataError(f"outcome {spec.name} is individual-level but no individuals supplied")
    ind = data.individuals
    if spec.role is not None:
        ind = ind[ind["role"] == spec.role.value]
    if spec.min_age_months is not None:
        ind = ind[ind["age_months"] >= spec.min_age_months]
    if spec.max_age_months is not None:
        ind = ind[ind["age_months"] < spec.max_age_months]
    keep = [c for c in data.households.columns if not c.endswith(("__bl", "__el"))]
    hh = data.households[keep]
    return ind.merge(hh, on="household_id", how="inner", suffixes=("", "_hh"))


def build_analysis_frame(
    data: TrialData,
    spec: OutcomeSpec,
    weight_mode: WeightMode | str = WeightMode.ELIGIBLE_ITT,
    *,
    covariates: Sequence[str] = (),
    ipw: pd.Series | None = None,
    lagged: bool = True,
    keep_attriters: bool = False,
) -> AnalysisFrame:
    """Filter, transform and weight one outcome for regression.

    Parameters
    ----------
    weight_mode
        ``EligibleITT`` keeps the eligible stratum; ``PopulationTCE`` pools
        both strata; ``SpilloverNeverTreat`` keeps never-targeted ineligibles
        in control and GD villages, zero-weighting GD-treated households and
        scaling control-village weights by the probability of not being
        treated: a supplied ``p_not_treated`` column if present, otherwise
        the untreated share among the same households in GD villages.
    ipw
        Optional multiplicative weights indexed by household id (or
        individual id for individual outcomes).
    lagged
        Include the baseline value as ``y_lag``.  A missing baseline is imputed
        with the weighted arm mean and flagged in ``y_lag_missing``.
    """
    mode = WeightMode(weight_mode)
    if spec.level is Level.INDIVIDUAL:
        base = _individual_base(data, spec)
        id_col = "individual_id"
        source = data.individuals
    else:
        base = data.households
        id_col = "household_id"
        source = data.households
    el, bl = outcome_column(spec.name, Round.ENDLINE), outcome_column(spec.name, Round.BASELINE)
    if el not in source.columns:
        raise DataError(f"unknown outcome {spec.name!r}")
    if lagged and bl not in source.columns:
        raise DataError(f"outcome {spec.name!r} has no baseline round for ANCOVA")
    missing_cov = [c for c in covariates if c not in base.columns]
    if missing_cov:
        raise DataError(f"unknown covariates {missing_cov}")

    df = base
    weight = df["sampling_weight"].to_numpy(float) * df["tracking_weight"].to_numpy(float)
    if mode is WeightMode.ELIGIBLE_ITT:
        mask = (df["stratum"] == Stratum.ELIGIBLE.value).to_numpy()
        if not mask.any():
            raise DataError("EligibleITT frame is empty: no eligible rows")
    elif mode is WeightMode.POPULATION_TCE:
        strata = set(df["stratum"])
        if strata != {Stratum.ELIGIBLE.value, Stratum.INELIGIBLE.value}:
            raise DataError("PopulationTCE requires both eligible and ineligible rows")
        mask = np.ones(len(df), dtype=bool)
    else:
        nt = never_treat_flag(df).to_numpy()
        arm = df["arm"].to_numpy()
        in_arm = np.isin(arm, [Arm.CONTROL.value] + [a.value for a in GD_ARMS])
        mask = (df["stratum"] == Stratum.INELIGIBLE.value).to_numpy() & nt & in_arm
        if not mask.any():
            raise DataError("SpilloverNeverTreat frame is empty")
        treated = df["complied"].to_numpy(bool)
        is_gd = np.isin(arm, [a.value for a in GD_ARMS])
        gd_rows = mask & is_gd
        if "p_not_treated" in df:
            p_not = df["p_not_treated"].to_numpy(float)
        elif gd_rows.any():
            p_not = 1.0 - _weighted_mean(treated[gd_rows].astype(float), weight[gd_rows])
        else:
            p_not = 1.0
        weight = weight.copy()
        weight[is_gd & treated] = 0.0
        ctrl = arm == Arm.CONTROL.value
        weight[ctrl] *= p_not[ctrl] if np.ndim(p_not) else p_not

    df = df.loc[mask].copy()
    weight = weight[mask]
    y_el = spec.transform.apply(df[el].to_numpy(float))
    out = pd.DataFrame(
        {
            "row_id": df[id_col].astype(str).to_numpy(),
            "household_id": df["household_id"].astype(str).to_numpy(),
            "y": y_el,
            "weight": weight,
            "cluster": df["village_id"].to_numpy(),
            "block": df["block_id"].to_numpy(),
            "arm": df["arm"].to_numpy(),
            "stratum": df["stratum"].to_numpy(),
        }
    )
    lag_cols: tuple[str, ...] = ()
    if lagged:
        y_bl = spec.transform.apply(df[bl].to_numpy(float))
        out["y_lag"] = y_bl
        lag_cols = ("y_lag",)
    for extra in ("modality", "chose_lumpsum", "complied", "age_months", "sex", "role"):
        if extra in df.columns:
            out[extra] = df[extra].to_numpy()
    for c in covariates:
        out[c] = df[c].to_numpy(float)
    if ipw is not None:
        mult = ipw.reindex(out["row_id"]).to_numpy(float)
        out["weight"] = out["weight"].to_numpy() * mult
    if not keep_attriters:
        out = out[np.isfinite(out["y"].to_numpy())]
        out = out[np.isfinite(out["weight"].to_numpy())]
    if lagged:
        miss = ~np.isfinite(out["y_lag"].to_numpy())
        if miss.any():
            filled = out["y_lag"].to_numpy().copy()
            for arm_label, grp in out.groupby("arm"):
                idx = out.index.get_indexer(grp.index)
                ok = idx[~miss[idx]]
                w = out["weight"].to_numpy()[ok]
                if len(ok) == 0 or w.sum() <= 0:
                    fill = float(np.nanmean(filled[~miss])) if (~miss).any() else 0.0
                else:
                    fill = _weighted_mean(filled[ok], w)
                filled[idx[miss[idx]]] = fill
            out["y_lag"] = filled
            out["y_lag_missing"] = miss.astype(float)
            lag_cols = ("y_lag", "y_lag_missing")
    out = out.reset_index(drop=True)
    return AnalysisFrame(out, spec, mode, tuple(covariates), lag_cols)
