"""On-disk formats for ensembles, stress results and run manifests.

All text output is UTF-8 with ``\\n`` line endings; floats are written with
``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .balance_sheet import Cohort, build_cohort, read_breakdown, read_records, write_breakdown_csv, write_cohort_csv
from .reconstruction import ExposureMatrix, NetworkEnsemble

MANIFEST = "manifest.json"
COHORT_FILE = "cohort.csv"
BREAKDOWN_FILE = "breakdown.csv"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(x: float) -> str:
    return repr(float(x))


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class RunManifest:
    """What produced a directory of outputs.

    ``run_id`` hashes the command, its configuration and input digests; it
    excludes timings and output locations so identical runs share it.
    """

    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        blob = json.dumps({"command": self.command, "config": self.config, "inputs": self.inputs}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "tool": {"name": "debtrank-stress", "version": __version__, "python": platform.python_version()},
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timing_seconds": self.timing,
            **self.extra,
        }

    def record_outputs(self, directory: Path) -> None:
        for p in sorted(directory.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                self.outputs[p.relative_to(directory).as_posix()] = sha256_file(p)

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        self.record_outputs(directory)
        path = directory / MANIFEST
        dump_json(self.to_dict(), path)
        return path


# --- ensembles ------------------------------------------------------------


def network_filename(k: int) -> str:
    return f"network_{k:03d}.csv"


def write_exposures(path: str | Path, exposures: ExposureMatrix, bank_ids: Sequence[str]) -> None:
    vals = exposures.values
    rows = ((bank_ids[i], bank_ids[j], fmt(vals[i, j])) for i, j in zip(*np.nonzero(vals)))
    write_rows(path, ("lender_id", "borrower_id", "amount"), rows)


def read_exposures(path: str | Path, bank_ids: Sequence[str]) -> np.ndarray:
    index = {b: k for k, b in enumerate(bank_ids)}
    mat = np.zeros((len(bank_ids), len(bank_ids)))
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                i, j = index[row["lender_id"]], index[row["borrower_id"]]
            except KeyError as exc:
                raise ValueError(f"{path}: unknown bank {exc.args[0]!r}") from None
            mat[i, j] = float(row["amount"])
    return mat


def write_ensemble(directory: str | Path, cohort: Cohort, ensemble: NetworkEnsemble) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cohort_csv(cohort, directory / COHORT_FILE)
    if cohort.external_breakdown is not None:
        write_breakdown_csv(cohort, directory / BREAKDOWN_FILE)
    paths = []
    for k, member in enumerate(ensemble):
        p = directory / network_filename(k)
        write_exposures(p, member, cohort.bank_ids)
        paths.append(p)
    return paths


def ensemble_summary(ensemble: NetworkEnsemble) -> dict:
    m = ensemble.model
    return {
        "master_seed": ensemble.master_seed,
        "density": m.density,
        "link_scale": m.link_scale,
        "target_links": m.target_links,
        "calibration_residual": m.calibration_residual,
        "total_volume": m.total_volume,
        "members": len(ensemble),
        "convergence_rate": ensemble.convergence_rate,
        "diagnostics": ensemble.diagnostics(),
    }


def load_cohort_dir(directory: str | Path) -> Cohort:
    directory = Path(directory)
    breakdown = read_breakdown(directory / BREAKDOWN_FILE) if (directory / BREAKDOWN_FILE).exists() else None
    return build_cohort(read_records(directory / COHORT_FILE), breakdown)


def read_ensemble(directory: str | Path) -> tuple[Cohort, list[np.ndarray], dict]:
    directory = Path(directory)
    if not (directory / COHORT_FILE).exists():
        raise FileNotFoundError(f"{directory} is not an ensemble directory (no {COHORT_FILE})")
    cohort = load_cohort_dir(directory)
    manifest = load_json(directory / MANIFEST) if (directory / MANIFEST).exists() else {}
    files = sorted(directory.glob("network_*.csv"))
    if not files:
        raise FileNotFoundError(f"no network files in {directory}")
    return cohort, [read_exposures(f, cohort.bank_ids) for f in files], manifest


def write_fire_sales(path: str | Path, cells, bank_ids: Sequence[str]) -> None:
    """Per-bank sale fractions and final distress, one block of rows per scenario."""
    rows = (
        (cell.scenario, b, fmt(s), fmt(h))
        for cell in cells
        if cell.fire_sales is not None
        for b, s, h in zip(bank_ids, cell.fire_sales.sale_fractions, cell.fire_sales.final_distress)
    )
    write_rows(path, ("scenario", "bank_id", "sale_fraction", "final_distress"), rows)


# --- stress results ---------------------------------------------------------

LOSSES_DIR = "losses"
FIRE_SALES_DIR = "fire_sales"


def write_losses(path: str | Path, cells, bank_ids: Sequence[str]) -> None:
    """Per-network loss samples: one row per (scenario, round) with system and per-bank distress."""
    rows = []
    for cell in cells:
        H = cell.system_distress
        for label, h in cell.distress.items():
            rows.append([cell.scenario, label, fmt(H[label]), *map(fmt, h)])
    write_rows(path, ("scenario", "round", "system_distress", *bank_ids), rows)


def read_losses(directory: str | Path):
    """Load every loss file under ``directory/losses`` as :class:`LossSample` objects."""
    from .risk import LossSample

    samples = []
    bank_ids: list[str] = []
    files = sorted((Path(directory) / LOSSES_DIR).glob("network_*.csv"))
    if not files:
        raise FileNotFoundError(f"no loss files in {directory}")
    for f in files:
        network = int(f.stem.split("_")[1])
        cells: dict[int, tuple[dict, dict]] = {}
        with f.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            bank_ids = header[3:]
            for row in reader:
                h, H = cells.setdefault(int(row[0]), ({}, {}))
                H[row[1]] = float(row[2])
                h[row[1]] = np.array(row[3:], dtype=float)
        samples.extend(LossSample(network, k, h, H) for k, (h, H) in sorted(cells.items()))
    return samples, bank_ids


def read_impacts(path: str | Path) -> tuple[list[np.ndarray], list[str]]:
    by_net: dict[int, list[float]] = {}
    ids: dict[int, list[str]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            k = int(row["network"])
            by_net.setdefault(k, []).append(float(row["impact"]))
            ids.setdefault(k, []).append(row["bank_id"])
    keys = sorted(by_net)
    return [np.array(by_net[k]) for k in keys], (ids[keys[0]] if keys else [])
