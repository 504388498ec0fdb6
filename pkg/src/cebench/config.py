"""Run configuration: a versioned YAML file validated with pydantic.

Unknown keys anywhere are errors, so a typo cannot silently fall back to a
default.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from . import simlab
from .costing import REFERENCE_LEDGERS, ArmCostLedger
from .data_model import (
    Arm,
    DataError,
    Family,
    Level,
    OutcomeSpec,
    Role,
    StudyDesign,
    Transform,
    TrialData,
)
from .estimators import CeVariant, Moderator
from .forest import ForestConfig

SCHEMA_VERSION = 1
CONFIG_ENV = "CEBENCH_CONFIG"


class ConfigError(ValueError):
    """Configuration could not be loaded or is inconsistent."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataFiles(_Strict):
    villages: Optional[str] = None
    households: Optional[str] = None
    individuals: Optional[str] = None
    ctb_allocations: Optional[str] = None
    bundled: Optional[Literal["reference"]] = None
    columns: dict[str, str] = Field(default_factory=dict)  # source name -> canonical name

    @model_validator(mode="after")
    def _one_source(self):
        if self.bundled is None and (self.villages is None or self.households is None):
            raise ValueError("data needs villages and households files, or bundled: reference")
        if self.bundled is not None and (self.villages or self.households):
            raise ValueError("bundled data cannot be combined with data files")
        return self


class OutcomeConfig(_Strict):
    name: str
    level: Level = Level.HOUSEHOLD
    transform: Literal["none", "ihs", "winsorize", "winsorize_ihs"] = "none"
    winsor_lo: float = 0.01
    winsor_hi: float = 0.99
    winsor_method: Literal["linear", "inverted_cdf"] = "linear"
    family: Family = Family.PRIMARY
    role: Optional[Role] = None
    min_age_months: Optional[float] = None
    max_age_months: Optional[float] = None

    def spec(self) -> OutcomeSpec:
        return OutcomeSpec(
            self.name,
            self.level,
            Transform(self.transform, self.winsor_lo, self.winsor_hi, self.winsor_method),
            self.family,
            self.role,
            self.min_age_months,
            self.max_age_months,
        )


class ArmCost(_Strict):
    cost_per_beneficiary: float
    averted_share: float = 1.0
    compliance_eligible: float = 1.0
    compliance_population: float = 1.0


class CostConfig(_Strict):
    reference: bool = False
    arms: dict[Arm, ArmCost] = Field(default_factory=dict)
    benchmark: Optional[float] = None

    def ledgers(self) -> dict[Arm, ArmCostLedger]:
        out = dict(REFERENCE_LEDGERS) if self.reference else {}
        for arm, c in self.arms.items():
            out[arm] = ArmCostLedger(arm, c.cost_per_beneficiary, c.averted_share,
                                     c.compliance_eligible, c.compliance_population)
        return out


class IpwConfig(_Strict):
    enabled: bool = False
    covariates: list[str] = Field(default_factory=list)
    on_separation: Literal["raise", "ridge"] = "raise"
    floor: float = 0.05


class ForestSection(_Strict):
    n_trees: int = 2000
    subsample: float = 0.5
    honesty: float = 0.5
    min_leaf: int = 5
    max_depth: Optional[int] = None
    outcomes: list[str] = Field(default_factory=list)
    moderators: list[str] = Field(default_factory=list)
    covariates: list[str] = Field(default_factory=list)

    def config(self, seed: int, n_jobs: int = 1) -> ForestConfig:
        return ForestConfig(self.n_trees, self.subsample, self.honesty, self.min_leaf, self.max_depth,
                            seed=seed, n_jobs=n_jobs)


class AnalysisConfig(_Strict):
    controls: list[str] = Field(default_factory=list)
    candidates: list[str] = Field(default_factory=list)
    always_keep: list[str] = Field(default_factory=list)
    granular: bool = False
    variants: list[CeVariant] = Field(default_factory=lambda: [CeVariant.LINEAR])
    moderators: list[Moderator] = Field(default_factory=list)
    attrition_levels: list[str] = Field(default_factory=lambda: ["Household"])
    food_groups: list[str] = Field(default_factory=list)
    ipw: IpwConfig = Field(default_factory=IpwConfig)
    forest: ForestSection = Field(default_factory=ForestSection)


class EffectConfig(_Strict):
    arm_effects: dict[str, float] = Field(default_factory=dict)
    cash_at_benchmark: Optional[float] = None
    cash_slope_per_100: float = 0.0
    gk_offset: float = 0.0
    het_kind: Literal["none", "step", "linear"] = "none"
    het_feature: str = "x1"
    het_scale: float = 0.0
    lumpsum_effect: float = 0.0
    got_wanted_effect: float = 0.0
    spillover: dict[str, float] = Field(default_factory=dict)
    on: Literal["assigned", "treated"] = "assigned"


class OutcomeDgpConfig(_Strict):
    name: str
    effects: EffectConfig = Field(default_factory=EffectConfig)
    icc: float = 0.05
    noise_sd: float = 1.0
    autocorr: float = 0.5
    covariate_coefs: dict[str, float] = Field(default_factory=dict)
    binary: bool = False
    baseline: bool = True

    def dgp(self) -> simlab.OutcomeDgp:
        e = self.effects
        eff = simlab.EffectSpec(
            dict(e.arm_effects), e.cash_at_benchmark, e.cash_slope_per_100, e.gk_offset, e.het_kind,
            e.het_feature, e.het_scale, lumpsum_effect=e.lumpsum_effect, got_wanted_effect=e.got_wanted_effect,
            spillover=dict(e.spillover), on=e.on,
        )
        return simlab.OutcomeDgp(self.name, eff, self.icc, self.noise_sd, self.autocorr,
                                 dict(self.covariate_coefs), self.binary, self.baseline)


class AttritionConfig(_Strict):
    control_rate: float = 0.033
    arm_shift: dict[str, float] = Field(default_factory=dict)
    covariate_coefs: dict[str, float] = Field(default_factory=dict)
    treated_covariate_coefs: dict[str, float] = Field(default_factory=dict)
    child_rate: float = 0.07


class DgpConfig(_Strict):
    n_blocks: int = simlab.REFERENCE_BLOCKS
    villages: dict[Arm, int] = Field(default_factory=lambda: dict(simlab.REFERENCE_VILLAGES))
    eligible_per_village: int = 7
    ineligible_per_village: int = 4
    outcomes: list[OutcomeDgpConfig] = Field(default_factory=lambda: [OutcomeDgpConfig(name="y")])
    child_outcomes: list[OutcomeDgpConfig] = Field(default_factory=list)
    children_per_household: int = 0
    n_covariates: int = 5
    attrition: Optional[AttritionConfig] = None
    ineligible_treat_rate: float = 0.15
    lumpsum_preference: float = 0.65
    food_groups: int = 0
    design_seed: Optional[int] = None

    def spec(self, ledgers) -> simlab.DgpSpec:
        att = None
        if self.attrition is not None:
            a = self.attrition
            att = simlab.AttritionSpec(a.control_rate, dict(a.arm_shift), dict(a.covariate_coefs),
                                       dict(a.treated_covariate_coefs), a.child_rate)
        return simlab.DgpSpec(
            n_blocks=self.n_blocks,
            villages=dict(self.villages),
            eligible_per_village=self.eligible_per_village,
            ineligible_per_village=self.ineligible_per_village,
            ledgers=ledgers or dict(REFERENCE_LEDGERS),
            outcomes=tuple(o.dgp() for o in self.outcomes),
            child_outcomes=tuple(o.dgp() for o in self.child_outcomes),
            children_per_household=self.children_per_household,
            n_covariates=self.n_covariates,
            attrition=att,
            ineligible_treat_rate=self.ineligible_treat_rate,
            lumpsum_preference=self.lumpsum_preference,
            food_groups=self.food_groups,
            design_seed=self.design_seed,
        )


class SimulationConfig(_Strict):
    reps: int = 0
    estimator: Literal["ce", "itt", "ratio"] = "ce"
    variant: CeVariant = CeVariant.LINEAR
    power_reps: int = 200
    power_variants: list[CeVariant] = Field(default_factory=lambda: list(CeVariant))


class RunConfig(_Strict):
    schema_version: int
    seed: int = 0
    data: Optional[DataFiles] = None
    dgp: Optional[DgpConfig] = None
    outcomes: list[OutcomeConfig] = Field(default_factory=list)
    costs: Optional[CostConfig] = None
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    output_dir: str = "out"
    _base_dir: Path = PrivateAttr(default_factory=Path)

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        if (self.data is None) == (self.dgp is None):
            raise ValueError("exactly one of 'data' and 'dgp' must be given")
        return self

    def ledgers(self) -> dict[Arm, ArmCostLedger] | None:
        return None if self.costs is None else self.costs.ledgers()

    def outcome_specs(self) -> list[OutcomeSpec]:
        if self.outcomes:
            return [o.spec() for o in self.outcomes]
        if self.dgp is not None:
            specs = [OutcomeSpec(o.name) for o in self.dgp.outcomes]
            specs += [OutcomeSpec(o.name, Level.INDIVIDUAL) for o in self.dgp.child_outcomes]
            return specs
        return []


def load_config(path: str | Path, base_dir: str | Path | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    cfg._base_dir = Path(base_dir) if base_dir else path.parent
    return cfg


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def _resolve(cfg: RunConfig, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else cfg._base_dir / q


def load_data(cfg: RunConfig, seed: int | None = None) -> TrialData:
    """Read data files (or draw from the DGP) and check that referenced columns exist."""
    seed = cfg.seed if seed is None else seed
    if cfg.dgp is not None:
        data = simlab.generate(cfg.dgp.spec(cfg.ledgers()), seed)
    elif cfg.data.bundled == "reference":
        data = simlab.reference_design_data()
    else:
        d = cfg.data
        rename = dict(d.columns)
        try:
            villages = pd.read_csv(_resolve(cfg, d.villages)).rename(columns=rename)
            hh = pd.read_csv(_resolve(cfg, d.households)).rename(columns=rename)
            ind = pd.read_csv(_resolve(cfg, d.individuals)).rename(columns=rename) if d.individuals else None
        except FileNotFoundError as exc:
            raise ConfigError(f"data file not found: {exc.filename}") from None
        if "modality" in hh:
            hh["modality"] = hh["modality"].where(hh["modality"].notna(), None)
        data = TrialData(StudyDesign.from_frame(villages), hh, ind)
        if d.ctb_allocations:
            data = _attach_ctb(data, pd.read_csv(_resolve(cfg, d.ctb_allocations)).rename(columns=rename))
    check_columns(cfg, data)
    return data


def _attach_ctb(data: TrialData, alloc: pd.DataFrame) -> TrialData:
    from .estimators import ctb_classify

    flag_cols = [c for c in data.households.columns if c.startswith("other_control_")]
    flags = data.households.set_index("household_id")[flag_cols] if flag_cols else None
    traits = ctb_classify(alloc, flags)
    hh = data.households.drop(columns=[c for c in traits.columns if c in data.households.columns])
    hh = hh.merge(traits.astype("float"), left_on="household_id", right_index=True, how="left")
    return TrialData(data.design, hh, data.individuals)


def check_columns(cfg: RunConfig, data: TrialData) -> None:
    hh_cols = set(data.households.columns)
    ind_cols = set(data.individuals.columns) if data.individuals is not None else set()
    missing = []
    for o in cfg.outcome_specs():
        cols = ind_cols if o.level is Level.INDIVIDUAL else hh_cols
        if f"{o.name}__el" not in cols:
            missing.append(f"{o.name}__el")
    a = cfg.analysis
    for c in a.controls + a.candidates + a.always_keep + a.ipw.covariates + a.forest.covariates:
        if c not in hh_cols and c not in ind_cols:
            missing.append(c)
    for c in a.forest.moderators + a.food_groups:
        if c not in hh_cols and c not in ind_cols:
            missing.append(c)
    if missing:
        raise DataError(f"config references missing columns: {sorted(set(missing))}")
