"""Third round: leverage targeting, asset sales and linear price impact."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .balance_sheet import LeverageNetworks
from .contagion import ContagionState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FireSalesParams:
    price_impact: float = 0.1
    shock: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.price_impact <= 1.0:
            raise ValueError("price impact must lie in [0, 1]")
        if not 0.0 <= self.shock < 1.0:
            raise ValueError("shock must lie in [0, 1)")


@dataclass(frozen=True)
class FireSalesOutcome:
    post_round2_leverage: np.ndarray
    sale_fractions: np.ndarray
    sold_fraction: float
    final_price: float
    final_distress: np.ndarray
    final_system_distress: float
    decomposition: dict[str, float]
    participating: np.ndarray
    flags: tuple[str, ...] = ()


def post_round2_leverage(leverage: LeverageNetworks, h1, h2, r: float) -> np.ndarray:
    """Leverage right after the second round; ``nan`` for defaulted banks.

    Assets are external holdings repriced at ``1 - r`` plus interbank assets
    net of the second-round write-down ``h2 - h1`` (in units of initial equity).
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    le, lb = leverage.external_total, leverage.interbank_total
    alive = h2 < 1.0
    num = (1.0 - r) * le + lb - (h2 - h1)
    den = np.where(alive, 1.0 - h2, 1.0)
    return np.where(alive, num / den, np.nan)


def sale_fraction(leverage: LeverageNetworks, h2, r: float, flags: list | None = None) -> np.ndarray:
    """Fraction of external assets each bank sells to return to its initial leverage.

    Banks that defaulted, hold no external assets, or have leverage at or
    below one do not sell. Values above one are capped (a bank cannot sell
    more than it holds); such cases are reported in ``flags``.
    """
    h2 = np.asarray(h2, dtype=float)
    le = leverage.external_total
    lev = leverage.total
    ok = (h2 < 1.0) & (le > 0) & (h2 > 0) & (lev > 1.0)
    safe_le = np.where(ok, le, 1.0)
    s = np.where(ok, h2 / ((1.0 - r) * safe_le) * (lev - 1.0) / (lev + 1.0), 0.0)
    if flags is not None:
        for i in np.flatnonzero((h2 > 0) & (h2 < 1.0) & (lev <= 1.0)):
            flags.append(f"bank {i}: leverage {lev[i]:g} <= 1, no sale")
        for i in np.flatnonzero(s > 1.0):
            flags.append(f"bank {i}: required sale fraction {s[i]:g} capped at 1")
    return np.minimum(s, 1.0)


def restored_leverage(leverage: LeverageNetworks, h2, s, r: float) -> np.ndarray:
    """Leverage after selling ``s`` at price ``1 - r`` and retiring debt with the proceeds."""
    le, lb = leverage.external_total, leverage.interbank_total
    h2 = np.asarray(h2, dtype=float)
    s = np.asarray(s, dtype=float)
    num = (1.0 - s) * (1.0 - r) * le + lb - h2 + le * r
    den = (1.0 - h2) + s * (1.0 - r) * le
    return num / den


def third_round(
    leverage: LeverageNetworks,
    state: ContagionState,
    params: FireSalesParams,
    quantities=None,
) -> FireSalesOutcome:
    """Fire-sale losses after the second round has terminated.

    ``quantities`` defaults to each bank's initial external assets (unit
    initial price). Defaulted banks neither sell nor enter the aggregate
    sold fraction, and stay at full distress.
    """
    r, eta = params.shock, params.price_impact
    h1, hT = state.initial_distress, state.distress
    w = state.weights
    Q = leverage.external_assets if quantities is None else np.asarray(quantities, dtype=float)
    participating = hT < 1.0
    flags: list[str] = []
    lT = post_round2_leverage(leverage, h1, hT, r)
    s = sale_fraction(leverage, hT, r, flags)
    q_part = np.where(participating, Q, 0.0)
    total_q = q_part.sum()
    rho = float((s * q_part).sum() / total_q) if total_q > 0 else 0.0
    price = (1.0 - r) * (1.0 - rho * eta)
    extra = leverage.external_total * (1.0 - r) * (1.0 - s) * rho * eta
    h_final = np.where(participating, np.minimum(1.0, hT + extra), 1.0)
    H1, HT, Hf = float(w @ h1), float(w @ hT), float(w @ h_final)
    return FireSalesOutcome(
        post_round2_leverage=lT,
        sale_fractions=s,
        sold_fraction=rho,
        final_price=price,
        final_distress=h_final,
        final_system_distress=Hf,
        decomposition={"first": H1, "second": HT - H1, "third": Hf - HT},
        participating=participating,
        flags=tuple(flags),
    )


def aggregate_shock(leverage: LeverageNetworks, shock) -> float:
    """Single repricing factor for the third round when shocks differ per asset class.

    Holdings-weighted mean of the per-class shocks across the whole system.
    """
    values = np.asarray(getattr(shock, "values", shock), dtype=float)
    ext = leverage.external
    if ext.ndim == 1 or values.size == 1:
        return float(values.reshape(-1)[0])
    holdings = ext * leverage.equity[:, None]
    total = holdings.sum()
    return float((holdings.sum(axis=0) @ values) / total) if total > 0 else 0.0
