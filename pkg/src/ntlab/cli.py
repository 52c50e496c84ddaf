"""Command-line entry point: ``ntlab <command> [--config FILE] [--seed N] [--out DIR]``.

Commands chain through files in the output directory, so ``generate``,
``inject``, ``simulate``, ``scan-lines``, ``mine`` and ``evaluate`` can be run
one after the other; ``pipeline`` runs them all in one process.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import polars as pl

from . import artifacts, evaluate, feeder, linescan, theft
from .config import ConfigError, RunConfig, dump_config, load_config
from .pipeline import mine
from .profilegen import build_population, consumer_seed

log = logging.getLogger("ntlab")

POPULATION = "population.csv"
PROFILES = "profiles.csv"
ASSIGNMENTS = "assignments.csv"
GROUND_TRUTH = "ground_truth.csv"
TAMPERED = "tampered.csv"
TOPOLOGY = "topology.yaml"
TELEMETRY = "telemetry"
VERDICTS = "verdicts.csv"
REDUCED = "reduced.csv"
CLUSTERS = "clusters.csv"
VERIFY = "verify_habitation.csv"
MINING_SUMMARY = "mining.json"
BANDWIDTH_TRACE = "bandwidth_trace.csv"
METRICS = "metrics.csv"
SUSPECTS = "suspects.csv"
SWEEP_NAMES = {2: "sweep_theft.csv", 4: "sweep_overload.csv"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class _stage:
    """Re-raise any failure inside the block tagged with the stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            log.info("stage %s done in %.2f s", self.name, time.perf_counter() - self.t0)
            return False
        if isinstance(exc, StageError):
            return False
        raise StageError(self.name, f"{type(exc).__name__}: {exc}") from exc


def _seed(cfg: RunConfig, salt: int) -> int:
    return consumer_seed(cfg.master_seed, 0, salt=salt)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("output", f"cannot create {out}: {exc.strerror}") from None
    return out


# -- stages on in-memory data ---------------------------------------------------------


def stage_generate(cfg: RunConfig, out: Path):
    p = cfg.population
    population = build_population(
        p.n_residential, p.n_commercial, p.scenario_mix, cfg.master_seed, cfg.calendar,
        appliances=cfg.appliances(), jitter=cfg.jitter(),
    )
    artifacts.write_population(out / POPULATION, population)
    artifacts.write_series(out / PROFILES, {q.consumer_id: q.flat for q in population})
    return population


def _draw(cfg: RunConfig, population, topo: feeder.FeederTopology) -> list[theft.TheftAssignment]:
    t = cfg.theft
    if t.assignments is not None:
        return [theft.TheftAssignment(**a) for a in t.assignments]
    candidates = theft.residential_candidates(population)
    hosts = None
    if t.line is not None:
        if not 0 <= t.line < len(topo.lines):
            raise ValueError(f"theft line {t.line} not in topology with {len(topo.lines)} lines")
        on_line = set(topo.lines[t.line].consumers)
        candidates = [c for c in candidates if c in on_line]
        hosts = [c for c in topo.lines[t.line].consumers]
    out: list[theft.TheftAssignment] = []
    taken: set[str] = set()
    for sc in sorted(t.counts):
        n = t.counts[sc]
        if n <= 0:
            continue
        severity = t.theta if sc == 2 else t.rho if sc == 4 else 0.0
        free = [c for c in candidates if c not in taken]
        drawn = theft.draw_assignments(
            free, sc, n, severity, rng_seed=_seed(cfg, 32), onset_day=t.onset_day, hosts=hosts,
        )
        taken |= {a.consumer_id for a in drawn}
        out += drawn
    return out


def stage_inject(cfg: RunConfig, out: Path, population):
    tp = cfg.topology
    topo = feeder.default_topology(
        [p.consumer_id for p in population], tp.lines, _seed(cfg, 31),
        tp.length_range, tp.r_per_km, tp.x_per_km, tp.v_nominal,
    )
    assignments = _draw(cfg, population, topo)
    actual, metered, truth = theft.inject(
        population, assignments, _seed(cfg, 33), cfg.calendar, cfg.appliances(), topology=topo,
    )
    artifacts.write_assignments(out / ASSIGNMENTS, truth.assignments)
    artifacts.write_ground_truth(out / GROUND_TRUTH, truth)
    artifacts.write_tampered(out / TAMPERED, actual, metered, [a.consumer_id for a in truth.assignments])
    artifacts.write_topology(out / TOPOLOGY, topo)
    return topo, actual, metered, truth


def stage_simulate(cfg: RunConfig, out: Path, topo, actual, metered):
    telemetry = feeder.simulate(topo, actual, metered, cfg.topology.loss_noise, _seed(cfg, 34))
    tdir = out / TELEMETRY
    for stale in tdir.glob("line_*.csv") if tdir.exists() else ():
        stale.unlink()
    artifacts.write_telemetry(tdir, telemetry)
    return telemetry


def stage_scan(cfg: RunConfig, out: Path, telemetry):
    verdicts = linescan.scan_lines(telemetry, cfg.noise_floor)
    artifacts.write_verdicts(out / VERDICTS, verdicts)
    return verdicts


def stage_mine(cfg: RunConfig, out: Path, population, metered):
    classes = {p.consumer_id: p.kind for p in population}
    # unmetered (scenario-3) households never reach the utility's data
    metered = {cid: v for cid, v in metered.items() if cid in classes}
    result = mine(metered, classes, cfg.mining, cfg.calendar, cfg.algorithms)
    artifacts.write_reduced(out / REDUCED, result.row_ids, result.scores)
    artifacts.write_clusters(out / CLUSTERS, result.reports)
    artifacts.write_id_list(out / VERIFY, result.verify_habitation)
    artifacts.write_rows(
        out / BANDWIDTH_TRACE,
        [{"bandwidth": h, "clusters": c} for h, c in result.bandwidth_trace],
        {"bandwidth": pl.Float64, "clusters": pl.Int64},
    )
    summary = {
        "n_consumers": len(result.row_ids),
        "n_columns": int(result.features.values.shape[1]),
        "pca_components": int(result.pca.k),
        "pca_error_ratio": float(result.pca.error_ratio),
        "retained_variance_ratio": float(result.pca.retained_variance_ratio),
        "verify_habitation": len(result.verify_habitation),
        "algorithms": {
            algo: {
                "params": {k: _jsonable(v) for k, v in rep.params.items()},
                "clusters": int(len(rep.cluster_sizes)),
                "major_clusters": len(rep.major_clusters),
                "suspects": len(rep.suspects),
                "bandwidth_fallback": rep.diagnostics.get("bandwidth_fallback"),
            }
            for algo, rep in result.reports.items()
        },
        "errors": result.errors,
    }
    artifacts.write_manifest(out / MINING_SUMMARY, summary)
    for algo, err in result.errors.items():
        log.warning("%s produced no clustering: %s", algo, err)
    return result


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def flagged_from_files(out: Path) -> dict[str, list[str]]:
    clusters = artifacts.read_clusters(out / CLUSTERS)
    verify = set(artifacts.read_id_list(out / VERIFY))
    return {
        algo: sorted({cid for cid, (_, s) in rows.items() if s} | verify)
        for algo, rows in clusters.items()
    }


def stage_evaluate(cfg: RunConfig, out: Path, flagged: dict[str, list[str]], truth: theft.GroundTruth,
                   verify: Sequence[str] = ()):
    scenarios = sorted({s for s in truth.consumer_labels.values() if s is not None})
    verify = set(verify)
    rows, suspects = [], []
    for algo in cfg.algorithms:
        if algo not in flagged:
            continue
        for sc in scenarios + [None]:
            try:
                m = evaluate.score(flagged[algo], truth, sc)
                hit = m.hit_rate
            except evaluate.UndefinedMetric:
                honest = {c for c, s in truth.consumer_labels.items() if s is None}
                m = evaluate.Metrics(0, 0, len(honest & set(flagged[algo])))
                hit = math.nan
            rows.append({"algorithm": algo, "scenario": "all" if sc is None else str(sc),
                         "tp": m.tp, "fn": m.fn, "fp": m.fp, "hit_rate": hit})
        for cid in flagged[algo]:
            label = truth.consumer_labels.get(cid)
            suspects.append({"consumer_id": cid, "algorithm": algo,
                             "source": "verify_habitation" if cid in verify else "cluster",
                             "outcome": "FP" if label is None else "TP"})
    artifacts.write_rows(
        out / METRICS, rows,
        {"algorithm": pl.Utf8, "scenario": pl.Utf8, "tp": pl.Int64, "fn": pl.Int64, "fp": pl.Int64,
         "hit_rate": pl.Float64},
        decimals={"hit_rate": artifacts.RATIO_DECIMALS},
    )
    artifacts.write_rows(
        out / SUSPECTS, suspects,
        {"consumer_id": pl.Utf8, "algorithm": pl.Utf8, "source": pl.Utf8, "outcome": pl.Utf8},
    )
    return rows


# -- commands ------------------------------------------------------------------------


def _load_population(out: Path):
    return artifacts.read_population(out / POPULATION, out / PROFILES)


def cmd_generate(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("generate"):
        population = stage_generate(cfg, out)
        artifacts.write_manifest(out / "manifest.json", {
            "command": "generate",
            "master_seed": cfg.master_seed,
            "n_profiles": len(population),
            "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
            "files": {n: artifacts.sha256(out / n) for n in (POPULATION, PROFILES)},
        })


def cmd_inject(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("inject"):
        stage_inject(cfg, out, _load_population(out))


def cmd_simulate(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("simulate"):
        population = _load_population(out)
        actual, metered = artifacts.apply_tampering(population, out / TAMPERED)
        stage_simulate(cfg, out, artifacts.read_topology(out / TOPOLOGY), actual, metered)


def cmd_scan_lines(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("scan-lines"):
        stage_scan(cfg, out, artifacts.read_telemetry(out / TELEMETRY))


def cmd_mine(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("mine"):
        population = _load_population(out)
        tampered = out / TAMPERED
        if tampered.exists():
            _, metered = artifacts.apply_tampering(population, tampered)
        else:
            metered = {p.consumer_id: p.flat for p in population}
        stage_mine(cfg, out, population, metered)


def cmd_evaluate(cfg: RunConfig) -> None:
    out = _out(cfg)
    with _stage("evaluate"):
        truth = artifacts.read_ground_truth(out / GROUND_TRUTH)
        stage_evaluate(cfg, out, flagged_from_files(out), truth, artifacts.read_id_list(out / VERIFY))


def cmd_pipeline(cfg: RunConfig) -> None:
    out = _out(cfg)
    # the output directory is left out so runs elsewhere stay byte-identical
    (out / "config.yaml").write_text(dump_config(cfg, exclude=("out",)))
    with _stage("generate"):
        population = stage_generate(cfg, out)
    with _stage("inject"):
        topo, actual, metered, truth = stage_inject(cfg, out, population)
    with _stage("simulate"):
        telemetry = stage_simulate(cfg, out, topo, actual, metered)
    with _stage("scan-lines"):
        verdicts = stage_scan(cfg, out, telemetry)
    with _stage("mine"):
        result = stage_mine(cfg, out, population, metered)
    with _stage("evaluate"):
        flagged = {algo: result.flagged(algo) for algo in result.reports}
        stage_evaluate(cfg, out, flagged, truth, result.verify_habitation)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    artifacts.write_manifest(out / "manifest.json", {
        "command": "pipeline",
        "master_seed": cfg.master_seed,
        "flagged_lines": [v.line_id for v in verdicts if v.flagged],
        "files": {str(p.relative_to(out)): artifacts.sha256(p) for p in files},
    })


def _sweep_file(sc: int) -> str:
    return SWEEP_NAMES.get(sc, f"sweep_s{sc}.csv")


SWEEP_SCHEMA = {
    "scenario": pl.Int64, "severity": pl.Float64, "algorithm": pl.Utf8, "rep": pl.Int64,
    "hit_rate": pl.Float64, "fp": pl.Int64, "n_thieves": pl.Int64, "seed": pl.Int64,
}


def cmd_sweep(cfg: RunConfig) -> None:
    out = _out(cfg)
    s = cfg.sweep
    populations: dict = {}
    combined = evaluate.SweepResult()
    for sc in s.scenarios:
        with _stage(f"sweep scenario {sc}"):
            res = evaluate.run_sweep(
                cfg.master_seed, sc, s.severities, s.repetitions, cfg.algorithms,
                cfg.population.n_residential, cfg.population.n_commercial, s.thief_fraction,
                cfg.population.scenario_mix, cfg.topology.lines, cfg.mining, cfg.calendar,
                cfg.jitter(), cfg.theft.onset_day, populations,
            )
            rows = [{k: getattr(r, k) for k in SWEEP_SCHEMA} for r in res.rows]
            artifacts.write_rows(out / _sweep_file(sc), rows, SWEEP_SCHEMA,
                                 decimals={"hit_rate": artifacts.RATIO_DECIMALS})
            combined.rows += res.rows
    with _stage("sweep summary"):
        d = artifacts.RATIO_DECIMALS
        artifacts.write_rows(
            out / "sweep_plot.csv", combined.summary(),
            {"scenario": pl.Int64, "severity": pl.Float64, "algorithm": pl.Utf8, "mean_hit_rate": pl.Float64,
             "min_hit_rate": pl.Float64, "max_hit_rate": pl.Float64, "mean_fp": pl.Float64, "n_reps": pl.Int64},
            decimals={"mean_hit_rate": d, "min_hit_rate": d, "max_hit_rate": d, "mean_fp": d},
        )
        if set(cfg.algorithms) == {"meanshift", "dbscan"}:
            artifacts.write_rows(
                out / "sweep_comparison.csv", combined.comparison(),
                {"scenario": pl.Int64, "severity": pl.Float64, "meanshift": pl.Float64, "dbscan": pl.Float64,
                 "better": pl.Utf8, "crossover_reproduced": pl.Boolean},
                decimals={"meanshift": d, "dbscan": d},
            )
        artifacts.write_rows(
            out / "sweep_diagnostics.csv",
            [{"scenario": r.scenario, "severity": r.severity, "algorithm": r.algorithm, "rep": r.rep,
              "diagnostic": r.diagnostic} for r in combined.rows if r.diagnostic],
            {"scenario": pl.Int64, "severity": pl.Float64, "algorithm": pl.Utf8, "rep": pl.Int64,
             "diagnostic": pl.Utf8},
        )


COMMANDS = {
    "generate": cmd_generate,
    "inject": cmd_inject,
    "simulate": cmd_simulate,
    "scan-lines": cmd_scan_lines,
    "mine": cmd_mine,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--algorithm", choices=("meanshift", "dbscan", "both"))
    common.add_argument("-v", "--verbose", action="store_true", help="log stage progress")

    parser = argparse.ArgumentParser(prog="ntlab", description="Electricity-theft detection laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "synthesize the consumer population",
        "inject": "apply theft scenarios and lay out the feeder",
        "simulate": "compute meter readings and line losses",
        "scan-lines": "flag lines with non-technical losses",
        "mine": "filter, reduce and cluster the metered consumption",
        "evaluate": "score suspects against the ground truth",
        "sweep": "hit rate over a severity grid",
        "pipeline": "run every stage end to end",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            print("error: [config] seed must be >= 0", file=sys.stderr)
            return 2
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.algorithm is not None:
        overrides["algorithm"] = args.algorithm
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
