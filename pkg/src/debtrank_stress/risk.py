"""Loss samples, empirical VaR/CVaR and ensemble aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

ROUNDS = ("first", "second", "third")


class RiskError(ValueError):
    pass


def _sorted_samples(samples) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise RiskError("no loss samples")
    return x


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise RiskError("alpha must lie in (0, 1)")


def empirical_var(samples, alpha: float, literal: bool = False) -> float:
    """Smallest sample ``x`` whose empirical CDF reaches ``alpha``.

    ``alpha = 0.95`` gives the 95th percentile of losses. With ``literal``
    the threshold is ``1 - alpha`` instead (lower tail).
    """
    _check_alpha(alpha)
    x = _sorted_samples(samples)
    level = 1.0 - alpha if literal else alpha
    cdf = np.arange(1, x.size + 1) / x.size
    return float(x[int(np.argmax(cdf >= level))])


def empirical_cvar(samples, alpha: float, literal: bool = False) -> float:
    """Mean of the losses at or beyond the VaR."""
    x = _sorted_samples(samples)
    var = empirical_var(x, alpha, literal)
    tail = x[x >= var]
    # the tail mean is at least the VaR; clamp away a last-bit rounding shortfall
    return max(var, math.fsum(tail) / tail.size)


@dataclass(frozen=True)
class LossSample:
    """Outcome of one (network, scenario) stress run.

    ``h`` maps a round label to the per-bank distress vector after that round.
    """

    network: int
    scenario: int
    distress: Mapping[str, np.ndarray]
    system_distress: Mapping[str, float]
    shock: float | None = None

    def __post_init__(self):
        for label, vec in self.distress.items():
            vec = np.asarray(vec, dtype=float)
            if np.any(vec < 0) or np.any(vec > 1):
                raise RiskError(f"round {label}: distress outside [0, 1]")
        for label, value in self.system_distress.items():
            if not 0.0 <= value <= 1.0:
                raise RiskError(f"round {label}: global distress outside [0, 1]")

    @property
    def rounds(self) -> tuple[str, ...]:
        return tuple(r for r in ROUNDS if r in self.system_distress)


@dataclass
class RiskReport:
    alpha: float
    rounds: tuple[str, ...]
    global_var: dict[str, float]
    global_cvar: dict[str, float]
    bank_var: dict[str, np.ndarray]
    bank_cvar: dict[str, np.ndarray]
    median_system_distress: dict[str, float]
    median_distress: dict[str, np.ndarray]
    median_impact: np.ndarray | None
    sample_count: int
    network_count: int
    scenario_count: int
    pooling: str = "pooled over networks and scenarios"
    literal_quantile: bool = False
    bank_ids: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        def vec(a):
            return None if a is None else [float(v) for v in a]

        return {
            "alpha": self.alpha,
            "rounds": list(self.rounds),
            "pooling": self.pooling,
            "quantile_convention": "lower (1 - alpha)" if self.literal_quantile else "upper (alpha)",
            "samples": self.sample_count,
            "networks": self.network_count,
            "scenarios": self.scenario_count,
            "global": {
                r: {"var": self.global_var[r], "cvar": self.global_cvar[r], "median_system_distress": self.median_system_distress[r]}
                for r in self.rounds
            },
            "var_shift": self.var_shift,
            "bank_ids": list(self.bank_ids),
            "banks": {
                r: {"var": vec(self.bank_var[r]), "cvar": vec(self.bank_cvar[r]), "median_distress": vec(self.median_distress[r])}
                for r in self.rounds
            },
            "median_impact": vec(self.median_impact),
        }

    @property
    def var_shift(self) -> float | None:
        """Move of the global VaR between the first and second rounds."""
        if "first" in self.global_var and "second" in self.global_var:
            return self.global_var["second"] - self.global_var["first"]
        return None


def _median(values) -> float:
    return float(np.median(np.sort(np.asarray(values, dtype=float))))


def aggregate_ensemble(
    losses: Iterable[LossSample],
    alpha: float = 0.95,
    impacts: Sequence[np.ndarray] | None = None,
    literal: bool = False,
    bank_ids: Sequence[str] = (),
) -> RiskReport:
    """Summarise loss samples.

    VaR/CVaR use the pooled samples of every (network, scenario) pair;
    point statistics are medians over the same pool, which for a single
    scenario is the median across networks. ``impacts`` holds one impact
    vector per network.
    """
    _check_alpha(alpha)
    losses = list(losses)
    if not losses:
        raise RiskError("no loss samples")
    rounds = tuple(r for r in ROUNDS if all(r in s.system_distress for s in losses))
    gvar, gcvar, bvar, bcvar, medH, medh = {}, {}, {}, {}, {}, {}
    for r in rounds:
        H = np.array([s.system_distress[r] for s in losses])
        gvar[r] = empirical_var(H, alpha, literal)
        gcvar[r] = empirical_cvar(H, alpha, literal)
        medH[r] = _median(H)
        hs = np.array([np.asarray(s.distress[r], dtype=float) for s in losses])
        bvar[r] = np.array([empirical_var(hs[:, i], alpha, literal) for i in range(hs.shape[1])])
        bcvar[r] = np.array([empirical_cvar(hs[:, i], alpha, literal) for i in range(hs.shape[1])])
        medh[r] = np.median(np.sort(hs, axis=0), axis=0)
    median_impact = None
    if impacts is not None and len(impacts):
        median_impact = np.median(np.sort(np.array(impacts, dtype=float), axis=0), axis=0)
    return RiskReport(
        alpha=alpha,
        rounds=rounds,
        global_var=gvar,
        global_cvar=gcvar,
        bank_var=bvar,
        bank_cvar=bcvar,
        median_system_distress=medH,
        median_distress=medh,
        median_impact=median_impact,
        sample_count=len(losses),
        network_count=len({s.network for s in losses}),
        scenario_count=len({s.scenario for s in losses}),
        literal_quantile=literal,
        bank_ids=tuple(bank_ids),
    )
