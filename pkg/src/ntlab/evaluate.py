"""Hit-rate scoring and severity sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import feeder, theft
from .pipeline import ALGORITHMS, MiningConfig, mine
from .profilegen import (
    DEFAULT_JITTER,
    HorizonCalendar,
    JitterModel,
    LoadProfile,
    build_population,
    consumer_seed,
)

log = logging.getLogger(__name__)

DEFAULT_MIX = {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0, 5: 1.0, 6: 0.15, 7: 0.1}
CROSSOVER_SEVERITY = 0.4


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    tp: int
    fn: int
    fp: int

    @property
    def hit_rate(self) -> float:
        if self.tp + self.fn == 0:
            raise UndefinedMetric("hit rate undefined without thieves")
        return self.tp / (self.tp + self.fn)


def score(suspects: Iterable[str], truth: theft.GroundTruth, scenario: int | None = None) -> Metrics:
    """TP/FN over thieves of ``scenario`` (all thieves when None); FP over honest consumers."""
    suspects = set(suspects)
    unknown = suspects - set(truth.consumer_labels)
    if unknown:
        raise KeyError(f"suspects missing from ground truth: {sorted(unknown)[:5]}")
    thieves = truth.thieves(scenario)
    if not thieves:
        raise UndefinedMetric(f"no thieves of scenario {scenario} to score against")
    honest = {c for c, s in truth.consumer_labels.items() if s is None}
    return Metrics(
        tp=len(thieves & suspects),
        fn=len(thieves - suspects),
        fp=len(honest & suspects),
    )


@dataclass
class SweepRow:
    scenario: int
    severity: float
    algorithm: str
    rep: int
    hit_rate: float
    fp: int
    n_thieves: int
    seed: int
    tp: int = 0
    fn: int = 0
    diagnostic: str = ""


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def mean_hit_rate(self, scenario: int, algorithm: str) -> dict[float, float]:
        out = {}
        for sev in sorted({r.severity for r in self.rows if r.scenario == scenario}):
            vals = [r.hit_rate for r in self.rows
                    if r.scenario == scenario and r.algorithm == algorithm and r.severity == sev]
            out[sev] = float(np.mean(vals)) if vals else math.nan
        return out

    def summary(self) -> list[dict]:
        """Mean/min/max hit rate per (scenario, severity, algorithm)."""
        keys = sorted({(r.scenario, r.severity, r.algorithm) for r in self.rows},
                      key=lambda k: (k[0], k[1], ALGORITHMS.index(k[2]) if k[2] in ALGORITHMS else 9))
        out = []
        for sc, sev, algo in keys:
            cell = [r for r in self.rows if (r.scenario, r.severity, r.algorithm) == (sc, sev, algo)]
            hits = np.array([r.hit_rate for r in cell], dtype=float)
            ok = hits[~np.isnan(hits)]
            out.append({
                "scenario": sc,
                "severity": sev,
                "algorithm": algo,
                "mean_hit_rate": float(ok.mean()) if ok.size else math.nan,
                "min_hit_rate": float(ok.min()) if ok.size else math.nan,
                "max_hit_rate": float(ok.max()) if ok.size else math.nan,
                "mean_fp": float(np.mean([r.fp for r in cell])),
                "n_reps": int(ok.size),
            })
        return out

    def comparison(self) -> list[dict]:
        """Mean shift against DBSCAN per severity, with the crossover check.

        The expected pattern is mean shift ahead below 40% severity and DBSCAN
        ahead above it.  It is reported, never enforced.
        """
        out = []
        for sc in sorted({r.scenario for r in self.rows}):
            ms = self.mean_hit_rate(sc, "meanshift")
            db = self.mean_hit_rate(sc, "dbscan")
            low = [s for s in ms if s < CROSSOVER_SEVERITY]
            high = [s for s in ms if s > CROSSOVER_SEVERITY]
            reproduced = (
                bool(low) and bool(high)
                and all(ms[s] >= db.get(s, math.nan) for s in low)
                and all(db.get(s, math.nan) >= ms[s] for s in high)
            )
            for sev in sorted(ms):
                d = db.get(sev, math.nan)
                if math.isnan(ms[sev]) or math.isnan(d):
                    better = "n/a"
                else:
                    better = "meanshift" if ms[sev] > d else "dbscan" if d > ms[sev] else "tie"
                out.append({
                    "scenario": sc,
                    "severity": sev,
                    "meanshift": ms[sev],
                    "dbscan": d,
                    "better": better,
                    "crossover_reproduced": reproduced,
                })
        return out


def run_cell(
    population: Sequence[LoadProfile],
    scenario: int,
    severity: float,
    n_thieves: int,
    theft_seed: int,
    algorithms: Sequence[str] = ALGORITHMS,
    lines: int = 30,
    mining_cfg: MiningConfig | None = None,
    calendar: HorizonCalendar | None = None,
    onset_day: int = theft.DEFAULT_ONSET_DAY,
) -> dict[str, theft.GroundTruth | object]:
    """Inject, simulate, mine and score one sweep cell."""
    ids = [p.consumer_id for p in population]
    topo = feeder.default_topology(ids, lines, rng_seed=theft_seed)
    candidates = theft.residential_candidates(population)
    assignments = theft.draw_assignments(
        candidates, scenario, n_thieves, severity, rng_seed=theft_seed, onset_day=onset_day
    )
    actual, metered, truth = theft.inject(population, assignments, theft_seed, calendar, topology=topo)
    feeder.simulate(topo, actual, metered)
    classes = {p.consumer_id: p.kind for p in population}
    result = mine(metered, classes, mining_cfg, calendar, algorithms)
    metrics = {}
    for algo in algorithms:
        if algo in result.reports:
            metrics[algo] = score(result.flagged(algo), truth, scenario)
        else:
            metrics[algo] = result.errors.get(algo, "not run")
    return {"truth": truth, "mining": result, "metrics": metrics}


def _fallback_notes(result) -> dict[str, str]:
    notes = {}
    for algo, rep in result.reports.items():
        fb = rep.diagnostics.get("bandwidth_fallback")
        if fb:
            notes[algo] = f"bandwidth fallback: {fb['used']} clusters instead of {fb['target']}"
    return notes


def run_sweep(
    master_seed: int,
    scenario: int,
    severities: Sequence[float],
    repetitions: int = 3,
    algorithms: Sequence[str] = ALGORITHMS,
    n_residential: int = 1000,
    n_commercial: int = 100,
    thief_fraction: float = 0.1,
    scenario_mix: Mapping[int, float] | None = None,
    lines: int = 30,
    mining_cfg: MiningConfig | None = None,
    calendar: HorizonCalendar | None = None,
    jitter: JitterModel = DEFAULT_JITTER,
    onset_day: int = theft.DEFAULT_ONSET_DAY,
    populations: dict | None = None,
) -> SweepResult:
    """Hit rate of every algorithm over a severity grid.

    Repetition ``r`` uses the same population and the same thieves for every
    severity, so curves compare like with like.  A failing cell yields rows
    with a NaN hit rate and the error text instead of aborting the sweep.
    """
    if not severities:
        raise ValueError("severity grid is empty")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    mix = DEFAULT_MIX if scenario_mix is None else scenario_mix
    populations = {} if populations is None else populations
    n_thieves = int(round(thief_fraction * n_residential))
    result = SweepResult()
    for sev in severities:
        for rep in range(repetitions):
            pop_seed = consumer_seed(master_seed, rep, salt=21)
            theft_seed = consumer_seed(master_seed, rep * 10 + scenario, salt=22)
            key = (pop_seed, n_residential, n_commercial, tuple(sorted(mix.items())), jitter)
            if key not in populations:
                populations[key] = build_population(
                    n_residential, n_commercial, mix, pop_seed, calendar, jitter=jitter
                )
            try:
                cell = run_cell(
                    populations[key], scenario, sev, n_thieves, theft_seed,
                    algorithms, lines, mining_cfg, calendar, onset_day,
                )
                outcome = cell["metrics"]
                notes = _fallback_notes(cell["mining"])
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                log.warning("sweep cell scenario=%s severity=%s rep=%s failed: %s", scenario, sev, rep, exc)
                outcome = {a: f"{type(exc).__name__}: {exc}" for a in algorithms}
                notes = {}
            for algo in algorithms:
                m = outcome[algo]
                if isinstance(m, Metrics):
                    row = SweepRow(scenario, float(sev), algo, rep, m.hit_rate, m.fp,
                                   m.tp + m.fn, theft_seed, m.tp, m.fn, notes.get(algo, ""))
                else:
                    row = SweepRow(scenario, float(sev), algo, rep, math.nan, 0, n_thieves,
                                   theft_seed, diagnostic=str(m))
                result.rows.append(row)
    result.rows.sort(key=lambda r: (r.scenario, r.severity, r.rep, ALGORITHMS.index(r.algorithm)
                                    if r.algorithm in ALGORITHMS else 9))
    return result
