"""Bank balance sheets, cohort ingestion, series preprocessing and leverage networks."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

REL_TOL = 1e-9

CSV_COLUMNS = (
    "bank_id",
    "name",
    "period",
    "equity",
    "total_assets",
    "interbank_assets",
    "interbank_liabilities",
)
OPTIONAL_COLUMNS = ("external_assets",)
BREAKDOWN_COLUMNS = ("bank_id", "asset_class", "amount")


class CohortError(Exception):
    """Base class for balance-sheet input problems."""


class CohortParseError(CohortError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CohortError):
    pass


def _close(a: float, b: float, tol: float = REL_TOL) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class BankRecord:
    """One institution's aggregates for one period.

    Interbank sides may be ``None`` before preprocessing. External assets and
    external liabilities are residuals of the balance-sheet identity.
    """

    bank_id: str
    name: str
    period: int
    equity: float
    total_assets: float
    interbank_assets: float | None
    interbank_liabilities: float | None
    imputed: frozenset[str] = field(default_factory=frozenset)

    @property
    def complete(self) -> bool:
        return self.interbank_assets is not None and self.interbank_liabilities is not None

    @property
    def external_assets(self) -> float:
        if self.interbank_assets is None:
            raise ValueError(f"{self.bank_id}/{self.period}: interbank assets missing")
        return self.total_assets - self.interbank_assets

    @property
    def external_liabilities(self) -> float:
        if self.interbank_liabilities is None:
            raise ValueError(f"{self.bank_id}/{self.period}: interbank liabilities missing")
        return self.total_assets - self.interbank_liabilities - self.equity

    def problems(self) -> list[str]:
        """Reasons the record cannot enter a simulation (empty when admissible)."""
        out = []
        if not self.complete:
            missing = [
                side
                for side, v in (
                    ("interbank_assets", self.interbank_assets),
                    ("interbank_liabilities", self.interbank_liabilities),
                )
                if v is None
            ]
            out.append("missing " + ", ".join(missing))
            return out
        if self.equity <= 0:
            out.append("non-positive equity")
        if self.external_liabilities < -REL_TOL * max(1.0, self.total_assets):
            out.append(f"negative external liabilities ({self.external_liabilities:g})")
        return out


@dataclass(frozen=True)
class Rejection:
    bank_id: str
    period: int | None
    reason: str


@dataclass(frozen=True)
class Cohort:
    """Ordered set of admissible banks for one period.

    ``external_breakdown`` (when given) is an ``n x m`` matrix of holdings per
    asset class whose rows sum to each bank's external assets.
    """

    banks: tuple[BankRecord, ...]
    rejected: tuple[Rejection, ...] = ()
    asset_classes: tuple[str, ...] | None = None
    external_breakdown: np.ndarray | None = None
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, int] = {}
        for pos, bank in enumerate(self.banks):
            if bank.bank_id in index:
                raise ValidationError(f"duplicate bank_id {bank.bank_id!r}")
            index[bank.bank_id] = pos
        object.__setattr__(self, "index", index)
        if self.external_breakdown is not None:
            mat = np.array(self.external_breakdown, dtype=float)
            if self.asset_classes is None or mat.shape != (len(self.banks), len(self.asset_classes)):
                raise ValidationError("external breakdown does not match cohort/asset classes")
            mat.setflags(write=False)
            object.__setattr__(self, "external_breakdown", mat)

    def __len__(self) -> int:
        return len(self.banks)

    @property
    def bank_ids(self) -> list[str]:
        return [b.bank_id for b in self.banks]

    def _column(self, attr: str) -> np.ndarray:
        return np.array([getattr(b, attr) for b in self.banks], dtype=float)

    @property
    def equity(self) -> np.ndarray:
        return self._column("equity")

    @property
    def total_assets(self) -> np.ndarray:
        return self._column("total_assets")

    @property
    def interbank_assets(self) -> np.ndarray:
        return self._column("interbank_assets")

    @property
    def interbank_liabilities(self) -> np.ndarray:
        return self._column("interbank_liabilities")

    @property
    def external_assets(self) -> np.ndarray:
        return self._column("external_assets")

    @property
    def external_liabilities(self) -> np.ndarray:
        return self._column("external_liabilities")


def _parse_amount(raw: str, column: str, line: int, bank_id: str) -> float | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise CohortParseError(f"{column}={raw!r} is not a number", line) from None
    if not math.isfinite(value):
        raise CohortParseError(f"{column}={raw!r} is not finite", line)
    if value < 0:
        raise ValidationError(f"bank {bank_id!r}: negative {column} ({value:g}) on line {line}")
    return value


def read_records(path: str | Path) -> list[BankRecord]:
    """Parse every row of a balance-sheet CSV (all periods)."""
    path = Path(path)
    records = []
    seen: set[tuple[str, int]] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CohortParseError("empty file", 1) from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CohortParseError(f"header lacks columns {missing}", 1)
        pos = {name: header.index(name) for name in header}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CohortParseError(f"expected {len(header)} fields, got {len(row)}", line)
            bank_id = row[pos["bank_id"]].strip()
            if not bank_id:
                raise CohortParseError("empty bank_id", line)
            try:
                period = int(row[pos["period"]].strip())
            except ValueError:
                raise CohortParseError(f"period={row[pos['period']]!r} is not a year", line) from None
            if (bank_id, period) in seen:
                raise ValidationError(f"duplicate bank_id {bank_id!r} for period {period} (line {line})")
            seen.add((bank_id, period))
            vals = {
                c: _parse_amount(row[pos[c]], c, line, bank_id)
                for c in ("equity", "total_assets", "interbank_assets", "interbank_liabilities")
            }
            for c in ("equity", "total_assets"):
                if vals[c] is None:
                    raise CohortParseError(f"{c} is required", line)
            rec = BankRecord(
                bank_id=bank_id,
                name=row[pos["name"]].strip(),
                period=period,
                equity=vals["equity"],
                total_assets=vals["total_assets"],
                interbank_assets=vals["interbank_assets"],
                interbank_liabilities=vals["interbank_liabilities"],
            )
            if rec.interbank_assets is not None and rec.interbank_assets > rec.total_assets * (1 + REL_TOL):
                raise ValidationError(
                    f"bank {bank_id!r}: interbank assets exceed total assets (negative external assets)"
                )
            if "external_assets" in pos:
                ext = _parse_amount(row[pos["external_assets"]], "external_assets", line, bank_id)
                if ext is not None and rec.interbank_assets is not None:
                    if not _close(rec.total_assets, rec.interbank_assets + ext):
                        raise ValidationError(
                            f"bank {bank_id!r}: total_assets {rec.total_assets:g} != "
                            f"interbank {rec.interbank_assets:g} + external {ext:g}"
                        )
            records.append(rec)
    return records


def read_breakdown(path: str | Path) -> dict[str, dict[str, float]]:
    """Read ``bank_id,asset_class,amount`` rows into ``{bank_id: {class: amount}}``."""
    out: dict[str, dict[str, float]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in BREAKDOWN_COLUMNS):
            raise CohortParseError(f"breakdown header must contain {BREAKDOWN_COLUMNS}", 1)
        for row in reader:
            line = reader.line_num
            bank_id = row["bank_id"].strip()
            amount = _parse_amount(row["amount"] or "", "amount", line, bank_id)
            if amount is None:
                raise CohortParseError("amount is required", line)
            cls = row["asset_class"].strip()
            bank = out.setdefault(bank_id, {})
            if cls in bank:
                raise ValidationError(f"bank {bank_id!r}: asset class {cls!r} repeated (line {line})")
            bank[cls] = amount
    return out


def build_cohort(
    records: Iterable[BankRecord],
    breakdown: dict[str, dict[str, float]] | None = None,
) -> Cohort:
    """Split records into admitted banks and a rejection report."""
    admitted, rejected = [], []
    for rec in records:
        problems = rec.problems()
        if problems:
            rejected.append(Rejection(rec.bank_id, rec.period, "; ".join(problems)))
            logger.info("rejecting %s (%s): %s", rec.bank_id, rec.period, "; ".join(problems))
        else:
            admitted.append(rec)
    if not breakdown:
        return Cohort(tuple(admitted), tuple(rejected))

    classes = sorted({c for holdings in breakdown.values() for c in holdings})
    mat = np.zeros((len(admitted), len(classes)))
    col = {c: k for k, c in enumerate(classes)}
    for i, rec in enumerate(admitted):
        holdings = breakdown.get(rec.bank_id)
        if holdings is None:
            raise ValidationError(f"bank {rec.bank_id!r} has no external-asset breakdown")
        for c, amount in holdings.items():
            mat[i, col[c]] = amount
        if not _close(mat[i].sum(), rec.external_assets, 1e-6):
            raise ValidationError(
                f"bank {rec.bank_id!r}: breakdown sums to {mat[i].sum():g}, "
                f"external assets are {rec.external_assets:g}"
            )
    return Cohort(tuple(admitted), tuple(rejected), tuple(classes), mat)


def ingest_cohort(path: str | Path, period: int, breakdown_path: str | Path | None = None) -> Cohort:
    """Load one period of a balance-sheet CSV, filling gaps from neighbouring years."""
    raw = read_records(path)
    if not any(r.period == period for r in raw):
        raise ValidationError(f"no records for period {period} in {path}")
    records, excluded = preprocess_series(raw)
    chosen = [r for r in records if r.period == period]
    breakdown = read_breakdown(breakdown_path) if breakdown_path else None
    cohort = build_cohort(chosen, breakdown)
    in_period = {r.bank_id for r in raw if r.period == period}
    extra = tuple(
        Rejection(b, period, "interbank data missing in every period") for b in excluded if b in in_period
    )
    return replace(cohort, rejected=cohort.rejected + extra) if extra else cohort


def periods_in(path: str | Path) -> list[int]:
    return sorted({r.period for r in read_records(path)})


# --- series preprocessing -------------------------------------------------

_SIDES = ("interbank_assets", "interbank_liabilities")
MAX_INTERPOLATED_GAP = 2


def _runs(values: Sequence[float | None]) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive ``None`` entries."""
    runs, start = [], None
    for k, v in enumerate(values):
        if v is None and start is None:
            start = k
        elif v is not None and start is not None:
            runs.append((start, k))
            start = None
    if start is not None:
        runs.append((start, len(values)))
    return runs


def _fill_pass(periods: list[int], cols: dict[str, list], imputed: list[set]) -> bool:
    changed = False
    filled = {side: list(vals) for side, vals in cols.items()}
    for side in _SIDES:
        vals = cols[side]
        for a, b in _runs(vals):
            if b - a > MAX_INTERPOLATED_GAP or a == 0 or b == len(vals):
                continue
            p0, p1 = periods[a - 1], periods[b]
            v0, v1 = vals[a - 1], vals[b]
            for k in range(a, b):
                filled[side][k] = v0 + (v1 - v0) * (periods[k] - p0) / (p1 - p0)
                imputed[k].add(side)
                changed = True
    # long gaps (and gaps at the ends of the series) copy the opposite side
    for side, other in (_SIDES, _SIDES[::-1]):
        for k, v in enumerate(filled[side]):
            if v is None and cols[other][k] is not None:
                filled[side][k] = cols[other][k]
                imputed[k].add(side)
                changed = True
    cols.update(filled)
    return changed


def preprocess_series(records: Iterable[BankRecord]) -> tuple[list[BankRecord], list[str]]:
    """Fill missing interbank lending/borrowing across years.

    Gaps of one or two consecutive years bounded by known values are linearly
    interpolated; longer gaps (and unbounded ones) take the value of the
    opposite side for that year. The procedure repeats to a fixed point, so
    applying it twice is the same as applying it once.

    Returns the completed records (sorted by bank then period) and the ids of
    banks whose interbank data are missing on both sides in every period.
    """
    by_bank: dict[str, list[BankRecord]] = {}
    for rec in records:
        by_bank.setdefault(rec.bank_id, []).append(rec)

    out, excluded = [], []
    for bank_id in sorted(by_bank):
        series = sorted(by_bank[bank_id], key=lambda r: r.period)
        cols = {side: [getattr(r, side) for r in series] for side in _SIDES}
        if all(v is None for side in _SIDES for v in cols[side]):
            excluded.append(bank_id)
            logger.info("excluding %s: no interbank data in any period", bank_id)
            continue
        periods = [r.period for r in series]
        imputed: list[set] = [set(r.imputed) for r in series]
        while _fill_pass(periods, cols, imputed):
            pass
        for k, rec in enumerate(series):
            out.append(
                replace(
                    rec,
                    interbank_assets=cols["interbank_assets"][k],
                    interbank_liabilities=cols["interbank_liabilities"][k],
                    imputed=frozenset(imputed[k]),
                )
            )
    return out, excluded


# --- leverage networks ----------------------------------------------------


@dataclass(frozen=True)
class LeverageNetworks:
    """Interbank and external leverage of each bank relative to initial equity.

    ``interbank[i, j]`` is what ``i`` lends to ``j`` over ``E_i(0)``.
    ``external`` is either a vector or an ``n x m`` matrix (per asset class).
    """

    interbank: np.ndarray
    external: np.ndarray
    equity: np.ndarray

    def __post_init__(self):
        for name in ("interbank", "external", "equity"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.equity.shape[0]
        if self.interbank.shape != (n, n) or self.external.shape[0] != n:
            raise ValueError("leverage shapes do not match the number of banks")

    @property
    def n(self) -> int:
        return self.equity.shape[0]

    @property
    def external_total(self) -> np.ndarray:
        """Total external leverage per bank."""
        return self.external if self.external.ndim == 1 else self.external.sum(axis=1)

    @property
    def interbank_total(self) -> np.ndarray:
        return self.interbank.sum(axis=1)

    @property
    def total(self) -> np.ndarray:
        return self.external_total + self.interbank_total

    @property
    def weights(self) -> np.ndarray:
        return self.equity / self.equity.sum()

    @property
    def external_assets(self) -> np.ndarray:
        return self.external_total * self.equity

    @classmethod
    def from_arrays(cls, equity, external_assets, exposures) -> "LeverageNetworks":
        equity = np.asarray(equity, dtype=float)
        if np.any(equity <= 0):
            raise ValueError("all equities must be positive")
        ext = np.asarray(external_assets, dtype=float)
        scale = equity if ext.ndim == 1 else equity[:, None]
        return cls(np.asarray(exposures, dtype=float) / equity[:, None], ext / scale, equity)


def derive_leverage(cohort: Cohort, exposures) -> LeverageNetworks:
    """Leverage networks for ``cohort`` given an exposure matrix in the same order."""
    mat = np.asarray(getattr(exposures, "values", exposures), dtype=float)
    n = len(cohort)
    if mat.shape != (n, n):
        raise ValueError(f"exposure matrix is {mat.shape}, cohort has {n} banks")
    ext = cohort.external_breakdown if cohort.external_breakdown is not None else cohort.external_assets
    return LeverageNetworks.from_arrays(cohort.equity, ext, mat)


# --- synthetic cohorts ----------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Distribution settings for synthetic cohorts.

    Total assets are lognormal; leverage (assets over equity) and interbank
    shares of assets/liabilities are uniform within their ranges, with the two
    interbank shares coupled through a Gaussian copula.
    """

    log_assets_mean: float = 10.0
    log_assets_sigma: float = 1.0
    leverage_range: tuple[float, float] = (8.0, 30.0)
    interbank_asset_share: tuple[float, float] = (0.03, 0.2)
    interbank_liability_share: tuple[float, float] = (0.03, 0.2)
    lending_borrowing_corr: float = 0.7
    period: int = 2013


def synthesize_cohort(n: int, seed: int, params: SynthParams | None = None) -> Cohort:
    if n < 2:
        raise ValueError("a cohort needs at least two banks")
    p = params or SynthParams()
    lev_lo, lev_hi = p.leverage_range
    if not 1.0 <= lev_lo <= lev_hi:
        raise ValueError("leverage range must satisfy 1 <= low <= high")
    for lo, hi in (p.interbank_asset_share, p.interbank_liability_share):
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("interbank shares must lie in [0, 1]")
    if not -1.0 <= p.lending_borrowing_corr <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    # equity share 1/leverage plus interbank liability share must leave D^e >= 0
    if p.interbank_liability_share[1] + 1.0 / lev_lo > 1.0:
        raise ValueError(
            "infeasible parameters: interbank liabilities plus equity can exceed total assets "
            "(negative external liabilities)"
        )

    rng = np.random.default_rng(seed)
    assets = np.exp(rng.normal(p.log_assets_mean, p.log_assets_sigma, n))
    leverage = rng.uniform(lev_lo, lev_hi, n)
    rho = p.lending_borrowing_corr
    z1 = rng.standard_normal(n)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    u1, u2 = norm.cdf(z1), norm.cdf(z2)
    a_lo, a_hi = p.interbank_asset_share
    l_lo, l_hi = p.interbank_liability_share
    ib_assets = assets * (a_lo + (a_hi - a_lo) * u1)
    ib_liabs = assets * (l_lo + (l_hi - l_lo) * u2)
    width = len(str(n - 1))
    banks = tuple(
        BankRecord(
            bank_id=f"B{i:0{width}d}",
            name=f"Synthetic bank {i}",
            period=p.period,
            equity=float(assets[i] / leverage[i]),
            total_assets=float(assets[i]),
            interbank_assets=float(ib_assets[i]),
            interbank_liabilities=float(ib_liabs[i]),
        )
        for i in range(n)
    )
    return Cohort(banks)


def write_cohort_csv(cohort: Cohort | Sequence[BankRecord], path: str | Path) -> None:
    banks = cohort.banks if isinstance(cohort, Cohort) else cohort
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for b in banks:
            w.writerow(
                [
                    b.bank_id,
                    b.name,
                    b.period,
                    repr(b.equity),
                    repr(b.total_assets),
                    "" if b.interbank_assets is None else repr(b.interbank_assets),
                    "" if b.interbank_liabilities is None else repr(b.interbank_liabilities),
                ]
            )


def write_breakdown_csv(cohort: Cohort, path: str | Path) -> None:
    if cohort.external_breakdown is None:
        raise ValueError("cohort has no external-asset breakdown")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BREAKDOWN_COLUMNS)
        for i, b in enumerate(cohort.banks):
            for k, cls in enumerate(cohort.asset_classes):
                w.writerow([b.bank_id, cls, repr(float(cohort.external_breakdown[i, k]))])
