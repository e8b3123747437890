"""Command-line pipeline: synth -> reconstruct -> stress -> report.

Exit codes: 0 success, 1 runtime failure, 2 usage error or missing input.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .balance_sheet import CohortError, SynthParams, ingest_cohort, periods_in, synthesize_cohort, write_cohort_csv
from .contagion import DYNAMICS
from .persistence import (
    BREAKDOWN_FILE,
    COHORT_FILE,
    FIRE_SALES_DIR,
    LOSSES_DIR,
    MANIFEST,
    RunManifest,
    dump_json,
    ensemble_summary,
    fmt,
    load_cohort_dir,
    load_json,
    network_filename,
    read_ensemble,
    read_impacts,
    read_losses,
    sha256_file,
    write_ensemble,
    write_fire_sales,
    write_losses,
    write_rows,
)
from .pipeline import run_stress, stage_seed
from .reconstruction import ReconstructionError, generate_ensemble
from .risk import RiskError, aggregate_ensemble
from .scenario import ScenarioError, ScenarioSpec, draw_shocks, parse_shock, scenario_from_dict, scenario_to_dict

logger = logging.getLogger("debtrank_stress")

DENSITY_BINS = 50


class UsageError(Exception):
    """Bad flags or missing inputs (exit code 2)."""


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# --- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    _require(args, "out")
    cohort = synthesize_cohort(args.banks, args.seed, SynthParams(period=args.period))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cohort_csv(cohort, out)
    logger.info("wrote %d banks to %s", len(cohort), out)
    return 0


# --- reconstruct ---------------------------------------------------------------


def cmd_reconstruct(args) -> int:
    _require(args, "input", "out")
    src = _existing(args.input, "input file")
    breakdown = _existing(args.breakdown, "breakdown file") if args.breakdown else None
    t0 = time.perf_counter()
    period = args.period
    if period is None:
        period = max(periods_in(src))
    cohort = ingest_cohort(src, period, breakdown)
    t1 = time.perf_counter()
    master = stage_seed(args.seed, "reconstruct")
    ensemble = generate_ensemble(cohort, args.density, args.samples, master, args.workers)
    t2 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("network_*.csv"):
        old.unlink()
    write_ensemble(out, cohort, ensemble)
    t3 = time.perf_counter()
    inputs = {"input": sha256_file(src)}
    if breakdown:
        inputs["breakdown"] = sha256_file(breakdown)
    manifest = RunManifest(
        command="reconstruct",
        config={"seed": args.seed, "period": period, "density": args.density, "samples": args.samples},
        inputs=inputs,
        timing={"ingest": t1 - t0, "reconstruct": t2 - t1, "write": t3 - t2},
        extra={
            "ensemble": ensemble_summary(ensemble),
            "rejected": [{"bank_id": r.bank_id, "period": r.period, "reason": r.reason} for r in cohort.rejected],
        },
    )
    manifest.write(out)
    logger.info(
        "wrote %d networks for %d banks (period %s, convergence %.0f%%) to %s",
        len(ensemble), len(cohort), period, 100 * ensemble.convergence_rate, out,
    )
    return 0


# --- stress ------------------------------------------------------------------------


def _scenario_from_args(args) -> ScenarioSpec:
    seed = stage_seed(args.seed, "scenario")
    shock = args.shock
    if isinstance(shock, dict):
        cfg = dict(shock)
        cfg.setdefault("dynamics", args.dynamics)
        cfg["seed"] = seed
        return scenario_from_dict(cfg)
    return ScenarioSpec(parse_shock(shock), args.dynamics, None, seed)


def _ensemble_inputs(directory: Path) -> dict[str, str]:
    return {
        p.relative_to(directory).as_posix(): sha256_file(p)
        for p in sorted(directory.glob("*.csv"))
    }


def cmd_stress(args) -> int:
    _require(args, "networks", "out")
    if args.dynamics not in DYNAMICS:
        raise UsageError(f"--dynamics must be one of {sorted(DYNAMICS)}")
    if args.eta is not None and not 0.0 <= args.eta <= 1.0:
        raise UsageError("--eta must lie in [0, 1]")
    src = _existing(args.networks, "ensemble directory")
    try:
        spec = _scenario_from_args(args)
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    cohort, networks, ens_manifest = read_ensemble(src)
    shocks = draw_shocks(spec, cohort.asset_classes)
    t1 = time.perf_counter()
    cells, impacts = run_stress(cohort, networks, shocks, spec.dynamics, args.eta, args.impact, args.workers)
    t2 = time.perf_counter()

    out = Path(args.out)
    for sub in (LOSSES_DIR, FIRE_SALES_DIR, "trajectories"):
        if (out / sub).exists():
            shutil.rmtree(out / sub)
    (out / LOSSES_DIR).mkdir(parents=True, exist_ok=True)
    ids = cohort.bank_ids
    shutil.copyfile(src / COHORT_FILE, out / COHORT_FILE)
    if (src / BREAKDOWN_FILE).exists():
        shutil.copyfile(src / BREAKDOWN_FILE, out / BREAKDOWN_FILE)

    if shocks and shocks[0].is_common:
        write_rows(out / "shocks.csv", ("scenario", "level"), ((k, fmt(s.level)) for k, s in enumerate(shocks)))
    else:
        classes = shocks[0].asset_classes
        write_rows(
            out / "shocks.csv",
            ("scenario", *classes),
            ((k, *map(fmt, s.values)) for k, s in enumerate(shocks)),
        )
    decomposition = []
    for k, net_cells in enumerate(cells):
        write_losses(out / LOSSES_DIR / network_filename(k), net_cells, ids)
        for c in net_cells:
            decomposition.extend((k, c.scenario, r, fmt(v)) for r, v in c.contributions.items())
    write_rows(out / "decomposition.csv", ("network", "scenario", "round", "contribution"), decomposition)
    if args.eta is not None:
        (out / FIRE_SALES_DIR).mkdir(exist_ok=True)
        for k, net_cells in enumerate(cells):
            write_fire_sales(out / FIRE_SALES_DIR / network_filename(k), net_cells, ids)
    if impacts is not None:
        write_rows(
            out / "impacts.csv",
            ("network", "bank_id", "impact"),
            ((k, b, fmt(d)) for k, vec in enumerate(impacts) for b, d in zip(ids, vec)),
        )
    elif (out / "impacts.csv").exists():
        (out / "impacts.csv").unlink()
    if args.trajectories:
        (out / "trajectories").mkdir(exist_ok=True)
        for k, net_cells in enumerate(cells):
            rows = (
                (c.scenario, ids[i], t + 1, fmt(h[i]))
                for c in net_cells
                for i in range(len(ids))
                for t, h in enumerate(c.state.history)
            )
            write_rows(out / "trajectories" / network_filename(k), ("scenario", "bank_id", "round", "distress"), rows)
    flags = sorted({f for net_cells in cells for c in net_cells if c.fire_sales for f in c.fire_sales.flags})
    t3 = time.perf_counter()

    config = {
        "seed": args.seed,
        "scenario": scenario_to_dict(spec),
        "dynamics": spec.dynamics,
        "eta": args.eta,
        "impact": bool(args.impact),
        "trajectories": bool(args.trajectories),
        "ensemble_run_id": ens_manifest.get("run_id"),
        "ensemble_config": ens_manifest.get("config"),
    }
    manifest = RunManifest(
        command="stress",
        config=config,
        inputs=_ensemble_inputs(src),
        timing={"load": t1 - t0, "simulate": t2 - t1, "write": t3 - t2},
        extra={"networks": len(networks), "scenarios": len(shocks), "fire_sale_flags": flags},
    )
    manifest.write(out)
    logger.info("stressed %d networks x %d scenarios into %s", len(networks), len(shocks), out)
    return 0


# --- report ----------------------------------------------------------------------------


def quadrant(vulnerability: float, impact: float, threshold: tuple[float, float] = (0.5, 0.5)) -> str:
    """Category of a bank in the vulnerability/impact plane."""
    v = "high" if vulnerability >= threshold[0] else "low"
    i = "high" if impact >= threshold[1] else "low"
    return f"{v} vulnerability / {i} impact"


def _results_label(directory: Path, cohort) -> str:
    periods = sorted({b.period for b in cohort.banks})
    return str(periods[0]) if len(periods) == 1 else directory.name


def _load_results(directory: Path):
    if not (directory / LOSSES_DIR).is_dir():
        raise UsageError(f"not a results directory (no {LOSSES_DIR}/): {directory}")
    cohort = load_cohort_dir(directory)
    samples, ids = read_losses(directory)
    impacts = None
    if (directory / "impacts.csv").exists():
        impacts, _ = read_impacts(directory / "impacts.csv")
    manifest = load_json(directory / MANIFEST) if (directory / MANIFEST).exists() else {}
    return cohort, samples, ids, impacts, manifest


def _interbank_leverage(cohort) -> np.ndarray:
    return cohort.interbank_assets / cohort.equity


def cmd_report(args) -> int:
    _require(args, "results", "out")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    thr = tuple(args.quadrant_threshold)
    dirs = [_existing(d, "results directory") for d in args.results]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    runs = []
    for d in dirs:
        cohort, samples, ids, impacts, manifest = _load_results(d)
        report = aggregate_ensemble(samples, args.alpha, impacts, args.literal_quantile, ids)
        runs.append((d, _results_label(d, cohort), cohort, samples, report, manifest))

    bank_rows, dec_rows, scatter_rows, fs_rows, dens_rows, marker_rows, period_rows, traj_rows = ([] for _ in range(8))
    for d, label, cohort, samples, rep, _ in runs:
        ids = rep.bank_ids
        for r in rep.rounds:
            for i, b in enumerate(ids):
                bank_rows.append((b, r, fmt(rep.bank_var[r][i]), fmt(rep.bank_cvar[r][i]), fmt(rep.median_distress[r][i]), label))
        contrib = {}
        for s in samples:
            prev = 0.0
            for r in s.rounds:
                contrib.setdefault(r, []).append(s.system_distress[r] - prev)
                prev = s.system_distress[r]
        for r in rep.rounds:
            dec_rows.append((label, r, fmt(np.median(contrib[r])), fmt(rep.median_system_distress[r])))
        period_rows.append((label, *(fmt(rep.median_system_distress.get(r, np.nan)) for r in ("first", "second", "third"))))
        # vulnerability is read after the interbank round, before fire sales
        vuln_round = "second" if "second" in rep.rounds else rep.rounds[-1]
        lev_b = _interbank_leverage(cohort)
        index = {b: k for k, b in enumerate(cohort.bank_ids)}
        for i, b in enumerate(ids):
            k = index[b]
            h = float(rep.median_distress[vuln_round][i])
            if rep.median_impact is not None:
                dr = float(rep.median_impact[i])
                cells = (fmt(dr), quadrant(h, dr, thr))
            else:
                cells = ("", "")
            scatter_rows.append(
                (label, b, fmt(h), cells[0], fmt(cohort.total_assets[k]), fmt(lev_b[k]), cells[1])
            )
            if rep.median_impact is not None:
                traj_rows.append((label, b, cells[0]))
            if "first" in rep.rounds and "second" in rep.rounds:
                fs_rows.append((label, b, fmt(rep.median_distress["first"][i]), fmt(rep.median_distress["second"][i])))
        for r in rep.rounds:
            H = np.sort(np.array([s.system_distress[r] for s in samples]))
            lo, hi = float(H[0]), float(H[-1])
            if hi <= lo:
                hi = lo + 1e-12
            density, edges = np.histogram(H, bins=DENSITY_BINS, range=(lo, hi), density=True)
            dens_rows.extend((label, r, fmt(edges[j]), fmt(edges[j + 1]), fmt(density[j])) for j in range(DENSITY_BINS))
            marker_rows.append((label, r, fmt(args.alpha), fmt(rep.global_var[r]), fmt(rep.global_cvar[r])))

    write_rows(out / "bank_risk.csv", ("bank_id", "round", "var", "cvar", "median_distress", "label"), bank_rows)
    write_rows(out / "decomposition.csv", ("label", "round", "median_contribution", "median_system_distress"), dec_rows)
    write_rows(
        out / "scatter.csv",
        ("label", "bank_id", "vulnerability", "impact", "total_assets", "interbank_leverage", "quadrant"),
        scatter_rows,
    )
    write_rows(out / "first_second.csv", ("label", "bank_id", "distress_first", "distress_second"), fs_rows)
    write_rows(out / "loss_density.csv", ("label", "round", "bin_lo", "bin_hi", "density"), dens_rows)
    write_rows(out / "loss_markers.csv", ("label", "round", "alpha", "var", "cvar"), marker_rows)
    for name in ("periods.csv", "impact_trajectories.csv"):
        if (out / name).exists():
            (out / name).unlink()
    if len(runs) > 1:
        write_rows(out / "periods.csv", ("label", "system_distress_first", "system_distress_second", "system_distress_third"), period_rows)
        if traj_rows:
            write_rows(out / "impact_trajectories.csv", ("label", "bank_id", "impact"), traj_rows)

    config = {
        "alpha": args.alpha,
        "literal_quantile": bool(args.literal_quantile),
        "quadrant_threshold": list(thr),
        "sources": [m.get("run_id") for *_, m in runs],
    }
    manifest = RunManifest(
        command="report",
        config=config,
        inputs={f"{label}/{MANIFEST}": m.get("run_id", "") for _, label, *_rest, m in runs},
        timing={"report": time.perf_counter() - t0},
    )
    dump_json(
        {
            "run_id": manifest.run_id,
            "tool_version": __version__,
            "runs": [{"label": label, "source_run_id": m.get("run_id"), **rep.to_dict()} for _, label, _, _, rep, m in runs],
        },
        out / "report.json",
    )
    manifest.write(out)
    logger.info("wrote report for %d run(s) to %s", len(runs), out)
    return 0


# --- argument parsing ---------------------------------------------------------------


def _threshold(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("threshold must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="debtrank-stress", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file whose keys supply defaults for the subcommand's options")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic balance-sheet CSV")
    s.add_argument("--banks", type=int, default=183)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--period", type=int, default=2013)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("reconstruct", help="sample an ensemble of interbank exposure networks")
    r.add_argument("--input")
    r.add_argument("--breakdown", help="optional CSV bank_id,asset_class,amount")
    r.add_argument("--period", type=int, help="reporting period (default: latest in the file)")
    r.add_argument("--density", type=float, default=0.05)
    r.add_argument("--samples", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_reconstruct)

    t = sub.add_parser("stress", help="run the three-round stress test over an ensemble")
    t.add_argument("--networks")
    t.add_argument("--shock", default="fixed:0.01", help="fixed:R | beta:A,B,MIN,MAX,N[,SAMPLER] | asset:CLS=R,...")
    t.add_argument("--dynamics", choices=sorted(DYNAMICS), default="debtrank")
    t.add_argument("--eta", type=float, default=0.1, help="price impact of fire sales")
    t.add_argument("--impact", action="store_true", help="also compute each bank's impact")
    t.add_argument("--trajectories", action="store_true", help="write round-by-round distress")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out")
    t.set_defaults(func=cmd_stress)

    q = sub.add_parser("report", help="risk metrics and plot-ready tables")
    q.add_argument("--results", nargs="+")
    q.add_argument("--alpha", type=float, default=0.95)
    q.add_argument("--literal-quantile", action="store_true", help="use 1 - alpha as the quantile level")
    q.add_argument(
        "--quadrant-threshold", type=_threshold, nargs=2, default=(0.5, 0.5),
        metavar=("VULNERABILITY", "IMPACT"),
    )
    q.add_argument("--out")
    q.set_defaults(func=cmd_report)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    section = cfg.get(args.command, cfg)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(section) - known - set(sub_names(parser)))
    if unknown:
        raise UsageError(f"unknown config key(s) for {args.command}: {unknown}")
    subparser.set_defaults(**{k.replace("-", "_"): v for k, v in section.items() if k in known})
    return parser.parse_args(argv)


def sub_names(parser: argparse.ArgumentParser) -> list[str]:
    return list(parser._subparsers._group_actions[0].choices)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CohortError, ReconstructionError, ScenarioError, RiskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
