"""Ensembles of interbank exposure matrices consistent with lending/borrowing totals.

Pipeline per ensemble: rebalance the two sides of the market, give every bank
a fitness equal to its mean lending/borrowing propensity, calibrate the fitness
model to a target density, then for each member sample a directed support and
fill it with iterative proportional fitting.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .balance_sheet import Cohort

logger = logging.getLogger(__name__)

MARGIN_TOL = 0.01
MAX_IPF_ITER = 10_000
MAX_RESAMPLES = 100
CALIBRATION_RTOL = 1e-8


class ReconstructionError(Exception):
    pass


class InfeasibleDensityError(ReconstructionError):
    pass


def rebalance_totals(cohort_or_assets, liabilities=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Total interbank volume and lending/borrowing propensities.

    Accepts a :class:`Cohort` or the two vectors of interbank assets and
    liabilities. The volume is the smaller of the two market sides.
    """
    if isinstance(cohort_or_assets, Cohort):
        assets = cohort_or_assets.interbank_assets
        liabilities = cohort_or_assets.interbank_liabilities
    else:
        assets = np.asarray(cohort_or_assets, dtype=float)
        liabilities = np.asarray(liabilities, dtype=float)
    total_a, total_l = assets.sum(), liabilities.sum()
    if total_a <= 0 or total_l <= 0:
        raise ReconstructionError("interbank market is empty on at least one side")
    return float(min(total_a, total_l)), assets / total_a, liabilities / total_l


def compute_fitness(lending, borrowing) -> np.ndarray:
    return (np.asarray(lending, dtype=float) + np.asarray(borrowing, dtype=float)) / 2.0


def link_probabilities(fitness, link_scale: float) -> np.ndarray:
    x = np.asarray(fitness, dtype=float)
    zxx = link_scale * np.outer(x, x)
    p = zxx / (1.0 + zxx)
    np.fill_diagonal(p, 0.0)
    return p


def expected_links(fitness, link_scale: float) -> float:
    """Expected number of sampled (undirected) pairs, each giving one directed link."""
    x = np.asarray(fitness, dtype=float)
    i, j = np.triu_indices(x.size, 1)
    zxx = link_scale * x[i] * x[j]
    return math.fsum(zxx / (1.0 + zxx))


def target_link_count(density: float, n: int) -> float:
    return density * n * (n - 1)


def calibrate_link_scale(fitness, density: float, n: int | None = None) -> float:
    """Solve for the fitness-model constant that yields ``density * n * (n-1)`` links.

    The expected link count is strictly increasing in the constant; the root
    is bracketed by doubling/halving and refined by geometric bisection.
    """
    x = np.asarray(fitness, dtype=float)
    n = x.size if n is None else n
    if not 0.0 < density < 1.0:
        raise ValueError("density must lie in (0, 1)")
    positive = int(np.count_nonzero(x > 0))
    if positive < 2:
        raise InfeasibleDensityError("fewer than two banks with positive fitness")
    target = target_link_count(density, n)
    supremum = positive * (positive - 1) / 2
    if target >= supremum:
        raise InfeasibleDensityError(
            f"target of {target:g} links is not below the {supremum:g} linkable pairs"
        )

    def excess(z):
        return expected_links(x, z) - target

    lo = hi = 1.0
    if excess(hi) < 0:
        while excess(hi) < 0:
            lo, hi = hi, hi * 2.0
    else:
        while excess(lo) > 0:
            lo, hi = lo / 2.0, lo
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        e = excess(mid)
        if abs(e) <= 1e-13 * target or not lo < mid < hi:
            break
        if e < 0:
            lo = mid
        else:
            hi = mid
    residual = abs(excess(mid)) / target
    if residual > CALIBRATION_RTOL:
        raise ReconstructionError(f"z calibration stalled with relative residual {residual:.2e}")
    return mid


@dataclass(frozen=True)
class ReconstructionModel:
    fitness: np.ndarray
    link_scale: float
    link_probabilities: np.ndarray
    target_links: float
    lending: np.ndarray
    borrowing: np.ndarray
    total_volume: float
    density: float

    @property
    def n(self) -> int:
        return self.fitness.size

    @property
    def calibration_residual(self) -> float:
        return abs(expected_links(self.fitness, self.link_scale) - self.target_links) / self.target_links


def build_model(cohort: Cohort, density: float = 0.05) -> ReconstructionModel:
    volume, lending, borrowing = rebalance_totals(cohort)
    x = compute_fitness(lending, borrowing)
    z = calibrate_link_scale(x, density, len(cohort))
    return ReconstructionModel(
        fitness=x,
        link_scale=z,
        link_probabilities=link_probabilities(x, z),
        target_links=target_link_count(density, len(cohort)),
        lending=lending,
        borrowing=borrowing,
        total_volume=volume,
        density=density,
    )


def sample_adjacency(model_or_p, seed) -> np.ndarray:
    """Directed 0/1 matrix: each pair present w.p. ``p_ij``, oriented by a fair coin."""
    p = np.asarray(getattr(model_or_p, "link_probabilities", model_or_p), dtype=float)
    rng = np.random.default_rng(seed)
    i, j = np.triu_indices(p.shape[0], 1)
    present = rng.random(i.size) < p[i, j]
    forward = rng.random(i.size) < 0.5
    adj = np.zeros(p.shape, dtype=np.int8)
    src = np.where(forward, i, j)[present]
    dst = np.where(forward, j, i)[present]
    adj[src, dst] = 1
    return adj


@dataclass(frozen=True)
class ExposureMatrix:
    """Bilateral interbank exposures; ``values[i, j]`` is lent by ``i`` to ``j``."""

    values: np.ndarray
    converged: bool = True
    row_residual: float = 0.0
    col_residual: float = 0.0
    iterations: int = 0
    seed: int | None = None
    attempts: int = 1

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("exposure matrix must be square")
        if np.any(vals < 0):
            raise ValueError("exposures must be nonnegative")
        if np.any(np.diag(vals) != 0):
            raise ValueError("a bank cannot lend to itself")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def link_count(self) -> int:
        return int(np.count_nonzero(self.values))

    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "row_residual": self.row_residual,
            "col_residual": self.col_residual,
            "iterations": self.iterations,
            "seed": self.seed,
            "attempts": self.attempts,
            "links": self.link_count,
        }


def unreachable_banks(adjacency, lending, borrowing, min_margin: float = 0.0) -> list[int]:
    """Banks with a margin above ``min_margin`` that the support cannot carry.

    A bank needs an out-link to some borrower when it lends and an in-link
    from some lender when it borrows.
    """
    adj = np.asarray(adjacency) > 0
    lending = np.asarray(lending, dtype=float)
    borrowing = np.asarray(borrowing, dtype=float)
    lend = lending > min_margin
    borrow = borrowing > min_margin
    adj = adj & (lending > 0)[:, None] & (borrowing > 0)[None, :]
    out_ok = adj.any(axis=1)
    in_ok = adj.any(axis=0)
    return sorted(set(np.flatnonzero(lend & ~out_ok)) | set(np.flatnonzero(borrow & ~in_ok)))


def fit_weights(
    adjacency,
    lending,
    borrowing,
    total_volume: float,
    tol: float = MARGIN_TOL,
    max_iter: int = MAX_IPF_ITER,
) -> ExposureMatrix:
    """Iterative proportional fitting of link weights to the two propensity vectors.

    Starts from uniform weights on the support and alternates row and column
    scaling until both maximum absolute margin errors are below ``tol``.
    """
    lending = np.asarray(lending, dtype=float)
    borrowing = np.asarray(borrowing, dtype=float)
    bad = unreachable_banks(adjacency, lending, borrowing, tol)
    if bad:
        raise ReconstructionError(f"banks {bad} cannot reach their margins on this support")
    w = (np.asarray(adjacency) > 0).astype(float)
    w /= w.sum()
    row_res = col_res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        rs = w.sum(axis=1)
        w *= np.divide(lending, rs, out=np.zeros_like(rs), where=rs > 0)[:, None]
        cs = w.sum(axis=0)
        w *= np.divide(borrowing, cs, out=np.zeros_like(cs), where=cs > 0)[None, :]
        row_res = float(np.abs(w.sum(axis=1) - lending).max())
        col_res = float(np.abs(w.sum(axis=0) - borrowing).max())
        if row_res < tol and col_res < tol:
            break
    converged = row_res < tol and col_res < tol
    if not converged:
        logger.warning("IPF stopped after %d iterations with residuals %.3g/%.3g", it, row_res, col_res)
    return ExposureMatrix(w * total_volume, converged, row_res, col_res, it)


def derive_seed(master_seed: int, *labels: int) -> int:
    """Stable 64-bit seed for a (member, attempt, ...) slot."""
    ss = np.random.SeedSequence([int(master_seed), *map(int, labels)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class NetworkEnsemble:
    members: tuple[ExposureMatrix, ...]
    master_seed: int
    model: ReconstructionModel
    bank_ids: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, k) -> ExposureMatrix:
        return self.members[k]

    @property
    def convergence_rate(self) -> float:
        return sum(m.converged for m in self.members) / len(self.members)

    def diagnostics(self) -> list[dict]:
        return [m.diagnostics() for m in self.members]


def _generate_member(model: ReconstructionModel, master_seed: int, index: int, bank_ids) -> ExposureMatrix:
    misses: dict[int, int] = {}
    for attempt in range(MAX_RESAMPLES):
        seed = derive_seed(master_seed, index, attempt)
        adj = sample_adjacency(model, seed)
        bad = unreachable_banks(adj, model.lending, model.borrowing, MARGIN_TOL)
        if not bad:
            mat = fit_weights(adj, model.lending, model.borrowing, model.total_volume)
            return ExposureMatrix(
                mat.values, mat.converged, mat.row_residual, mat.col_residual, mat.iterations, seed, attempt + 1
            )
        for b in bad:
            misses[b] = misses.get(b, 0) + 1
    worst = max(misses, key=lambda b: (misses[b], -b))
    name = bank_ids[worst] if bank_ids else str(worst)
    raise ReconstructionError(
        f"member {index}: no feasible support after {MAX_RESAMPLES} samples; "
        f"bank {name} was unreachable in {misses[worst]} of them"
    )


def generate_ensemble(
    cohort: Cohort,
    density: float = 0.05,
    count: int = 100,
    master_seed: int = 0,
    workers: int = 1,
) -> NetworkEnsemble:
    """Sample ``count`` exposure matrices; member ``k`` depends only on ``(master_seed, k)``."""
    if count < 1:
        raise ValueError("count must be positive")
    if master_seed < 0:
        raise ValueError("master_seed must be nonnegative")
    model = build_model(cohort, density)
    ids = tuple(cohort.bank_ids)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            members = tuple(pool.map(lambda k: _generate_member(model, master_seed, k, ids), range(count)))
    else:
        members = tuple(_generate_member(model, master_seed, k, ids) for k in range(count))
    return NetworkEnsemble(members, master_seed, model, ids)
