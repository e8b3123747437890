"""First- and second-round distress: external shock, then reverberation on the interbank network."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .balance_sheet import LeverageNetworks


class DistressFunction(Protocol):
    """Maps a bank's relative equity loss to the relative loss on its obligations."""

    name: str

    def __call__(self, h: np.ndarray) -> np.ndarray: ...


class Identity:
    name = "debtrank"

    def __call__(self, h):
        return np.asarray(h, dtype=float)

    def __repr__(self):
        return "Identity()"


class DefaultIndicator:
    name = "cascade"

    def __call__(self, h):
        return (np.asarray(h) >= 1.0).astype(float)

    def __repr__(self):
        return "DefaultIndicator()"


DEBTRANK = Identity()
CASCADE = DefaultIndicator()
DYNAMICS = {"debtrank": DEBTRANK, "cascade": CASCADE}


def get_dynamics(name: str) -> DistressFunction:
    try:
        return DYNAMICS[name]
    except KeyError:
        raise ValueError(f"unknown dynamics {name!r}; expected one of {sorted(DYNAMICS)}") from None


@dataclass(frozen=True)
class ShockVector:
    """Relative price declines of external assets.

    ``asset_classes`` is ``None`` for a common shock on all external assets,
    in which case ``values`` has a single entry.
    """

    values: np.ndarray
    asset_classes: tuple[str, ...] | None = None

    def __post_init__(self):
        vals = np.atleast_1d(np.array(self.values, dtype=float))
        if np.any(vals < 0) or np.any(vals > 1) or np.any(np.isnan(vals)):
            raise ValueError("shocks must lie in [0, 1]")
        if self.asset_classes is not None and len(self.asset_classes) != vals.size:
            raise ValueError("one shock per asset class is required")
        if self.asset_classes is None and vals.size != 1:
            raise ValueError("a common shock has a single value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def common(cls, r: float) -> "ShockVector":
        return cls(np.array([r]))

    @property
    def is_common(self) -> bool:
        return self.asset_classes is None

    @property
    def level(self) -> float:
        if not self.is_common:
            raise ValueError("per-asset shock has no single common value")
        return float(self.values[0])


@dataclass(frozen=True)
class ContagionState:
    """Distress trajectory of a propagation run.

    ``history[k]`` is the distress vector at round ``k + 1``. ``end_round``
    is set once the interbank reverberation has terminated.
    """

    distress: np.ndarray
    history: tuple[np.ndarray, ...]
    active: np.ndarray
    propagated: np.ndarray
    weights: np.ndarray
    last_round: int = 1
    end_round: int | None = None
    transmissions: tuple[tuple[int, ...], ...] = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("distress", "active", "propagated", "weights"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def initial_distress(self) -> np.ndarray:
        return self.history[0]

    def at(self, round_: int | str) -> np.ndarray:
        """Snapshot at a round: a round number or ``"first"`` / ``"final"``."""
        if round_ == "first":
            return self.history[0]
        if round_ == "final":
            return self.history[-1]
        if not 1 <= round_ <= len(self.history):
            raise IndexError(f"no snapshot for round {round_}")
        return self.history[round_ - 1]

    @property
    def defaulted(self) -> np.ndarray:
        return self.distress >= 1.0


def _state(h1: np.ndarray, weights: np.ndarray) -> ContagionState:
    return ContagionState(
        distress=h1,
        history=(h1,),
        active=h1 > 0,
        propagated=np.zeros(h1.size, dtype=bool),
        weights=weights,
    )


def first_round(leverage: LeverageNetworks, shock: ShockVector | float) -> ContagionState:
    """Equity loss from the shock on external assets, amplified by external leverage."""
    if not isinstance(shock, ShockVector):
        shock = ShockVector.common(shock)
    ext = leverage.external
    if shock.is_common:
        loss = leverage.external_total * shock.level
    else:
        if ext.ndim != 2 or ext.shape[1] != shock.values.size:
            raise ValueError("shock has one entry per asset class; leverage has no matching breakdown")
        loss = ext @ shock.values
    h1 = np.minimum(1.0, loss)
    return _state(h1, leverage.weights)


def seed_default(leverage: LeverageNetworks, k: int) -> ContagionState:
    h = np.zeros(leverage.n)
    h[k] = 1.0
    return _state(h, leverage.weights)


def propagate(
    state: ContagionState,
    leverage: LeverageNetworks,
    f: DistressFunction = DEBTRANK,
    settle_defaults: bool = True,
) -> ContagionState:
    """Run the interbank reverberation from round 2 until no bank is active.

    A bank transmits ``f`` of its current distress to its lenders the round
    after it becomes distressed, and does not reverberate again. With
    ``settle_defaults`` a bank that defaults after that transmission passes on
    the untransmitted remainder once more; this keeps default-only losses a
    lower bound of DebtRank losses. Round 2 is always computed, so ``T >= 2``.
    """
    lev = leverage.interbank
    h = state.distress.copy()
    base = state.distress.copy()
    history = list(state.history)
    propagated = state.propagated.copy()
    sent = np.zeros(h.size)
    transmissions = list(state.transmissions)
    t = state.last_round
    while True:
        fh = f(h)
        active = ~propagated & (fh > 0)
        if settle_defaults:
            active |= propagated & (h >= 1.0) & (sent < fh)
        if t >= 2 and not active.any():
            break
        t += 1
        # recomputing from cumulative transmissions (rather than adding
        # increments) keeps the result independent of how transfers were split
        sent = np.where(active, fh, sent)
        h = np.maximum(h, np.minimum(1.0, base + lev @ sent))
        propagated |= active
        transmissions.append(tuple(np.flatnonzero(active).tolist()))
        history.append(h.copy())
    return ContagionState(
        distress=h,
        history=tuple(history),
        active=np.zeros(h.size, dtype=bool),
        propagated=propagated,
        weights=state.weights,
        last_round=t,
        end_round=t,
        transmissions=tuple(transmissions),
    )


def closed_form_second_round(leverage: LeverageNetworks, r: float) -> np.ndarray:
    """Distress after round 2 for a common shock under DebtRank dynamics."""
    first = leverage.external_total * r
    return np.minimum(1.0, first + leverage.interbank @ first)


def global_vulnerability(state_or_h, round_: int | str = "final", weights=None) -> float:
    """Equity-weighted average distress (at a round of a state, or of a raw vector)."""
    if isinstance(state_or_h, ContagionState):
        h = state_or_h.at(round_)
        weights = state_or_h.weights if weights is None else weights
    else:
        h = np.asarray(state_or_h, dtype=float)
    return min(1.0, max(0.0, float(np.dot(np.asarray(weights, dtype=float), h))))


def monetary_loss(state: ContagionState, leverage: LeverageNetworks, round_: int | str = "final") -> float:
    return global_vulnerability(state, round_) * float(leverage.equity.sum())


def approx_global_second_round(leverage: LeverageNetworks, r: float) -> float:
    """Mean-field estimate of round-2 global distress from average leverages."""
    w = leverage.weights
    le = float(w @ leverage.external_total)
    lb = float(w @ leverage.interbank_total)
    return le * r + lb * le * r


@dataclass(frozen=True)
class ApproximationGap:
    approx: float
    exact: float

    @property
    def gap(self) -> float:
        return self.approx - self.exact


def approximation_gap(leverage: LeverageNetworks, r: float) -> ApproximationGap:
    exact = global_vulnerability(closed_form_second_round(leverage, r), weights=leverage.weights)
    return ApproximationGap(approx_global_second_round(leverage, r), exact)


def impact(
    k: int,
    leverage: LeverageNetworks,
    f: DistressFunction = DEBTRANK,
    net: bool = False,
    monetary: bool = False,
    settle_defaults: bool = True,
) -> float:
    """System-wide relative equity loss when bank ``k`` defaults.

    Includes the defaulting bank's own loss unless ``net``; ``monetary``
    returns the loss in currency units instead of as a fraction of equity.
    """
    final = propagate(seed_default(leverage, k), leverage, f, settle_defaults).distress
    w = leverage.weights
    dr = max(0.0, min(1.0, float(w @ final)) - (w[k] if net else 0.0))
    return dr * float(leverage.equity.sum()) if monetary else dr


def impact_vector(leverage: LeverageNetworks, f: DistressFunction = DEBTRANK, net: bool = False) -> np.ndarray:
    return np.array([impact(k, leverage, f, net) for k in range(leverage.n)])


def run_second_round(
    leverage: LeverageNetworks, shock, f: DistressFunction = DEBTRANK, settle_defaults: bool = True
) -> ContagionState:
    return propagate(first_round(leverage, shock), leverage, f, settle_defaults)


__all__ = [
    "CASCADE",
    "DEBTRANK",
    "ApproximationGap",
    "ContagionState",
    "DefaultIndicator",
    "DistressFunction",
    "Identity",
    "ShockVector",
    "approx_global_second_round",
    "approximation_gap",
    "closed_form_second_round",
    "first_round",
    "get_dynamics",
    "global_vulnerability",
    "impact",
    "impact_vector",
    "monetary_loss",
    "propagate",
    "run_second_round",
    "seed_default",
]
