"""Ex-post cost ledger: averted costs, compliance adjustment and cost deviations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data_model import GD_ARMS, GD_MAIN_ARMS, Arm, StudyDesign

RWF_PER_USD = 790.0


@dataclass(frozen=True)
class ArmCostLedger:
    arm: Arm
    cost_per_beneficiary: float
    averted_share: float = 1.0
    compliance_eligible: float = 1.0
    compliance_population: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "arm", Arm(self.arm))
        if self.cost_per_beneficiary < 0:
            raise ValueError("cost per beneficiary must be nonnegative")
        for name in ("averted_share", "compliance_eligible", "compliance_population"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


# Rows 1-3 and 5 of the published cost table.
REFERENCE_LEDGERS: dict[Arm, ArmCostLedger] = {
    Arm.GIKURIRO: ArmCostLedger(Arm.GIKURIRO, 141.84, 0.60, 0.80, 0.19),
    Arm.GD_LOWER: ArmCostLedger(Arm.GD_LOWER, 66.02, 1.00, 0.81, 0.18),
    Arm.GD_MIDDLE: ArmCostLedger(Arm.GD_MIDDLE, 111.09, 1.00, 0.86, 0.19),
    Arm.GD_UPPER: ArmCostLedger(Arm.GD_UPPER, 145.43, 1.00, 0.83, 0.18),
    Arm.GD_LARGE: ArmCostLedger(Arm.GD_LARGE, 566.55, 1.00, 0.91, 0.18),
}

PUBLISHED_COST_PER_ELIGIBLE = {
    Arm.GIKURIRO: 124.49,
    Arm.GD_LOWER: 53.58,
    Arm.GD_MIDDLE: 95.86,
    Arm.GD_UPPER: 121.24,
    Arm.GD_LARGE: 517.44,
}
PUBLISHED_COST_PER_VILLAGE_HOUSEHOLD = {
    Arm.GIKURIRO: 28.02,
    Arm.GD_LOWER: 12.20,
    Arm.GD_MIDDLE: 20.83,
    Arm.GD_UPPER: 26.69,
    Arm.GD_LARGE: 99.56,
}


def cost_per_eligible(ledger: ArmCostLedger) -> float:
    """Spend per eligible household: non-averted costs in full plus averted costs for compliers."""
    c, a = ledger.cost_per_beneficiary, ledger.averted_share
    return c * (1.0 - a) + c * a * ledger.compliance_eligible


def cost_per_village_household(ledger: ArmCostLedger) -> float:
    """Total spend amortized over every household in the village."""
    return ledger.cost_per_beneficiary * ledger.compliance_population


COST_BASES = {
    "eligible": cost_per_eligible,
    "village_household": cost_per_village_household,
}


def arm_cost(arm: Arm | str, ledgers: Mapping[Arm, ArmCostLedger], basis: str = "eligible") -> float:
    """Cost of an arm on the chosen basis; ``GD_Main`` averages the three small arms."""
    fn = COST_BASES[basis]
    if str(arm) in ("GD_Main", "GDMain"):
        return float(np.mean([fn(_ledger(ledgers, a)) for a in GD_MAIN_ARMS]))
    return fn(_ledger(ledgers, Arm(arm)))


def _ledger(ledgers: Mapping[Arm, ArmCostLedger], arm: Arm) -> ArmCostLedger:
    try:
        return ledgers[arm]
    except KeyError:
        raise KeyError(f"no cost ledger for arm {arm.value}") from None


def default_benchmark(ledgers: Mapping[Arm, ArmCostLedger], basis: str = "eligible") -> float:
    return COST_BASES[basis](_ledger(ledgers, Arm.GIKURIRO))


def tau_for_village(
    arm: Arm | str,
    ledgers: Mapping[Arm, ArmCostLedger],
    benchmark: float | None = None,
    basis: str = "eligible",
) -> float:
    """Deviation of a GD arm's cost from the benchmark; zero for Control and Gikuriro."""
    arm = Arm(arm)
    if not arm.is_cash:
        return 0.0
    if benchmark is None:
        benchmark = default_benchmark(ledgers, basis)
    return COST_BASES[basis](_ledger(ledgers, arm)) - benchmark


@dataclass(frozen=True)
class TauAssignment:
    tau: dict[str, float]
    benchmark: float
    basis: str = "eligible"

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.tau.values()):
            raise ValueError("non-finite tau")


def assign_tau(
    design: StudyDesign,
    ledgers: Mapping[Arm, ArmCostLedger],
    benchmark: float | None = None,
    basis: str = "eligible",
) -> TauAssignment:
    if benchmark is None:
        benchmark = default_benchmark(ledgers, basis)
    tau = {
        v.village_id: tau_for_village(v.arm, ledgers, benchmark, basis) for v in design.villages
    }
    return TauAssignment(tau, float(benchmark), basis)


@dataclass(frozen=True)
class TransferSchedule:
    usd: np.ndarray
    rwf: np.ndarray
    exchange_rate: float
    min_size: int
    max_size: int


def round_to_hundred(x) -> np.ndarray:
    """Round half up to the nearest 100."""
    return np.floor(np.asarray(x, dtype=float) / 100.0 + 0.5) * 100.0


def scale_transfers(
    target_mean: float,
    sizes: Sequence[float],
    *,
    exchange_rate: float = RWF_PER_USD,
    min_size: int = 3,
    max_size: int = 8,
) -> TransferSchedule:
    """Scale a village's mean transfer by clamped household size.

    The per-capita rate is ``target / mean(clamp(size))`` so the USD schedule
    reproduces the target mean exactly; RwF amounts are rounded afterwards.
    """
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise ValueError("need at least one household size")
    if not target_mean > 0:
        raise ValueError("target mean transfer must be positive")
    if np.all(sizes == 0):
        raise ValueError("all household sizes are zero")
    clamped = np.clip(sizes, min_size, max_size)
    rate = target_mean / clamped.mean()
    usd = rate * clamped
    return TransferSchedule(usd, round_to_hundred(usd * exchange_rate), exchange_rate, min_size, max_size)


def gd_costs(ledgers: Mapping[Arm, ArmCostLedger], basis: str = "eligible") -> dict[Arm, float]:
    return {a: COST_BASES[basis](_ledger(ledgers, a)) for a in GD_ARMS}
