"""Shock scenarios for stress runs: fixed, truncated Beta, or per asset class."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .contagion import DYNAMICS, ShockVector
from .fire_sales import FireSalesParams

SAMPLERS = ("affine", "rejection")
REJECTION_BATCH = 1 << 20
REJECTION_MAX_DRAWS = 1 << 32


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class FixedShock:
    level: float

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ScenarioError("fixed shock must lie in [0, 1]")


@dataclass(frozen=True)
class BetaShock:
    """Beta(a, b) shocks restricted to ``[lo, hi]``.

    ``sampler="affine"`` maps a Beta draw ``x`` to ``lo + x (hi - lo)``;
    ``sampler="rejection"`` redraws until the raw value falls in the interval.
    """

    a: float = 4.0
    b: float = 8.0
    lo: float = 0.001
    hi: float = 0.015
    draws: int = 150
    sampler: str = "affine"

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ScenarioError("Beta parameters must be positive")
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ScenarioError("need 0 <= min < max <= 1")
        if self.draws < 1:
            raise ScenarioError("draw count must be positive")
        if self.sampler not in SAMPLERS:
            raise ScenarioError(f"sampler must be one of {SAMPLERS}")


@dataclass(frozen=True)
class PerAssetShock:
    shocks: Mapping[str, float]

    def __post_init__(self):
        if not self.shocks:
            raise ScenarioError("per-asset scenario needs at least one asset class")
        for cls, r in self.shocks.items():
            if not 0.0 <= r <= 1.0:
                raise ScenarioError(f"shock on {cls!r} must lie in [0, 1]")


ShockKind = Union[FixedShock, BetaShock, PerAssetShock]


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ShockKind
    dynamics: str = "debtrank"
    fire_sales: FireSalesParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ScenarioError(f"dynamics must be one of {sorted(DYNAMICS)}")

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


def _beta_affine(rng: np.random.Generator, k: BetaShock) -> np.ndarray:
    return k.lo + rng.beta(k.a, k.b, k.draws) * (k.hi - k.lo)


def _beta_rejection(rng: np.random.Generator, k: BetaShock) -> np.ndarray:
    kept: list[np.ndarray] = []
    have = drawn = 0
    while have < k.draws:
        if drawn >= REJECTION_MAX_DRAWS:
            raise ScenarioError(
                f"rejection sampler accepted {have} of {drawn} draws; interval carries too little mass"
            )
        x = rng.beta(k.a, k.b, REJECTION_BATCH)
        drawn += x.size
        x = x[(x >= k.lo) & (x <= k.hi)]
        kept.append(x)
        have += x.size
    return np.concatenate(kept)[: k.draws]


def draw_shocks(spec: ScenarioSpec, asset_classes=None) -> list[ShockVector]:
    """Shock vectors for a scenario, deterministic in ``spec.seed``."""
    kind = spec.kind
    if isinstance(kind, FixedShock):
        return [ShockVector.common(kind.level)]
    if isinstance(kind, BetaShock):
        rng = np.random.default_rng(spec.seed)
        values = _beta_affine(rng, kind) if kind.sampler == "affine" else _beta_rejection(rng, kind)
        return [ShockVector.common(float(v)) for v in values]
    if isinstance(kind, PerAssetShock):
        if asset_classes is None:
            raise ScenarioError("per-asset shocks need the cohort's asset classes")
        unknown = sorted(set(kind.shocks) - set(asset_classes))
        if unknown:
            raise ScenarioError(f"unknown asset class(es) {unknown}")
        values = [float(kind.shocks.get(c, 0.0)) for c in asset_classes]
        return [ShockVector(np.array(values), tuple(asset_classes))]
    raise ScenarioError(f"unsupported scenario kind {type(kind).__name__}")


def parse_shock(text: str) -> ShockKind:
    """Parse the command-line forms ``fixed:R`` and ``beta:A,B,MIN,MAX,N[,SAMPLER]``."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    try:
        if name == "fixed":
            return FixedShock(float(rest))
        if name == "beta":
            parts = [p.strip() for p in rest.split(",")]
            if len(parts) not in (5, 6):
                raise ScenarioError("beta shock takes A,B,MIN,MAX,N[,SAMPLER]")
            a, b, lo, hi = map(float, parts[:4])
            sampler = parts[5] if len(parts) == 6 else "affine"
            return BetaShock(a, b, lo, hi, int(parts[4]), sampler)
        if name == "asset":
            shocks = {}
            for item in rest.split(","):
                cls, _, val = item.partition("=")
                shocks[cls.strip()] = float(val)
            return PerAssetShock(shocks)
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"cannot parse shock {text!r}: {exc}") from None
    raise ScenarioError(f"unknown shock kind {name!r} (expected fixed, beta or asset)")


def scenario_from_dict(cfg: Mapping) -> ScenarioSpec:
    """Build a spec from JSON-style config, e.g. ``{"kind": "beta", "a": 4, ...}``."""
    kind = cfg.get("kind")
    if kind == "fixed":
        shock: ShockKind = FixedShock(float(cfg["level"]))
    elif kind == "beta":
        shock = BetaShock(
            float(cfg.get("a", 4)),
            float(cfg.get("b", 8)),
            float(cfg.get("min", 0.001)),
            float(cfg.get("max", 0.015)),
            int(cfg.get("draws", 150)),
            cfg.get("sampler", "affine"),
        )
    elif kind in ("per_asset", "asset"):
        shock = PerAssetShock({k: float(v) for k, v in cfg["shocks"].items()})
    else:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    fs = cfg.get("fire_sales")
    if fs is None and "price_impact" in cfg:
        fs = {"price_impact": cfg["price_impact"]}
    fire = None
    if fs is not None:
        r = shock.level if isinstance(shock, FixedShock) else 0.0
        fire = FireSalesParams(float(fs.get("price_impact", 0.1)), float(fs.get("shock", r)))
    return ScenarioSpec(shock, cfg.get("dynamics", "debtrank"), fire, int(cfg.get("seed", 0)))


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    k = spec.kind
    if isinstance(k, FixedShock):
        out: dict = {"kind": "fixed", "level": k.level}
    elif isinstance(k, BetaShock):
        out = {"kind": "beta", "a": k.a, "b": k.b, "min": k.lo, "max": k.hi, "draws": k.draws, "sampler": k.sampler}
    else:
        out = {"kind": "per_asset", "shocks": dict(sorted(k.shocks.items()))}
    out["dynamics"] = spec.dynamics
    out["seed"] = spec.seed
    if spec.fire_sales is not None:
        out["fire_sales"] = asdict(spec.fire_sales)
    return out


def load_scenario(path: str | Path) -> ScenarioSpec:
    return scenario_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
