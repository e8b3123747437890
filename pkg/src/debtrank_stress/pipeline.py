"""Three-round stress runs over an ensemble of networks and a set of shocks."""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .balance_sheet import Cohort, LeverageNetworks, derive_leverage
from .contagion import ContagionState, ShockVector, first_round, get_dynamics, impact_vector, propagate
from .fire_sales import FireSalesOutcome, FireSalesParams, aggregate_shock, third_round
from .risk import LossSample


def stage_seed(seed: int, label: str) -> int:
    """Seed for a named pipeline stage, derived from the run seed."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class CellResult:
    """One network under one shock."""

    network: int
    scenario: int
    shock: ShockVector
    level: float
    state: ContagionState
    fire_sales: FireSalesOutcome | None

    @property
    def distress(self) -> dict[str, np.ndarray]:
        out = {"first": self.state.initial_distress, "second": self.state.distress}
        if self.fire_sales is not None:
            out["third"] = self.fire_sales.final_distress
        return out

    @property
    def system_distress(self) -> dict[str, float]:
        w = self.state.weights
        return {k: min(1.0, max(0.0, float(w @ v))) for k, v in self.distress.items()}

    @property
    def contributions(self) -> dict[str, float]:
        H = self.system_distress
        out = {"first": H["first"], "second": H["second"] - H["first"]}
        if "third" in H:
            out["third"] = H["third"] - H["second"]
        return out

    def loss_sample(self) -> LossSample:
        return LossSample(self.network, self.scenario, self.distress, self.system_distress, self.level)


def run_cell(
    leverage: LeverageNetworks,
    shock: ShockVector,
    dynamics: str = "debtrank",
    price_impact: float | None = 0.1,
    network: int = 0,
    scenario: int = 0,
) -> CellResult:
    f = get_dynamics(dynamics)
    state = propagate(first_round(leverage, shock), leverage, f)
    r = shock.level if shock.is_common else aggregate_shock(leverage, shock)
    outcome = None
    if price_impact is not None:
        outcome = third_round(leverage, state, FireSalesParams(price_impact, r))
    return CellResult(network, scenario, shock, r, state, outcome)


def run_network(
    cohort: Cohort,
    exposures,
    shocks: list[ShockVector],
    dynamics: str = "debtrank",
    price_impact: float | None = 0.1,
    network: int = 0,
    with_impact: bool = False,
) -> tuple[list[CellResult], np.ndarray | None]:
    leverage = derive_leverage(cohort, exposures)
    cells = [run_cell(leverage, s, dynamics, price_impact, network, k) for k, s in enumerate(shocks)]
    impacts = impact_vector(leverage, get_dynamics(dynamics)) if with_impact else None
    return cells, impacts


def run_stress(
    cohort: Cohort,
    networks,
    shocks: list[ShockVector],
    dynamics: str = "debtrank",
    price_impact: float | None = 0.1,
    with_impact: bool = False,
    workers: int = 1,
) -> tuple[list[list[CellResult]], list[np.ndarray] | None]:
    """Run every (network, shock) cell; results are ordered by network then scenario."""
    networks = list(networks)

    def one(k):
        return run_network(cohort, networks[k], shocks, dynamics, price_impact, k, with_impact)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, range(len(networks))))
    else:
        out = [one(k) for k in range(len(networks))]
    cells = [c for c, _ in out]
    impacts = [i for _, i in out] if with_impact else None
    return cells, impacts
