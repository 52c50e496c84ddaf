"""End-to-end acceptance criteria, one test per criterion.

Every test records a one-line verdict that is printed in the terminal summary
(see conftest.py), then asserts.  Run with ``pytest tests/test_acceptance.py``.
"""

import shutil
import time
from collections import Counter
from pathlib import Path

import numpy as np
import polars as pl
import pytest
import yaml

from conftest import ACCEPTANCE
from ntlab import artifacts, feeder
from ntlab.cli import main
from ntlab.evaluate import run_sweep
from ntlab.mining import (
    MeanShiftConfig,
    dbscan_cluster,
    filter_consumers,
    kde,
    meanshift_cluster,
    meanshift_step,
)
from ntlab.pipeline import mine
from ntlab.profilegen import LoadProfile, build_population
from ntlab.theft import TheftAssignment, inject

from oracles import dbscan_bruteforce, random_dbscan_instance
from test_pca import check_against_oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
RESIDENTIAL_MIX = {1: 1, 2: 1, 3: 1, 4: 1, 5: 1}
SWEEP_SEED = 42


def record(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, detail


def tree_hashes(root):
    root = Path(root)
    return {str(p.relative_to(root)): artifacts.sha256(p) for p in sorted(root.rglob("*")) if p.is_file()}


# -- 1: line screening at the scale of the two-line example feeder ---------------------


def test_c01_line_screening(tmp_path):
    t0 = time.perf_counter()
    rc = main(["pipeline", "--config", str(CONFIGS / "two_line_feeder.yaml"), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    verdicts = {v.line_id: v for v in artifacts.read_verdicts(tmp_path / "verdicts.csv")}
    ok = rc == 0 and verdicts[0].flagged and not verdicts[1].flagged and elapsed < 5.0
    record(1, ok, f"line 1 ratio {verdicts[0].ratio:.3f} flagged={verdicts[0].flagged}, "
                  f"line 2 ratio {verdicts[1].ratio:.3f} flagged={verdicts[1].flagged}, {elapsed:.2f} s (< 5 s)")


# -- 2: clean ledger and the with/without loss oracle ------------------------------------


def test_c02_clean_ledger_identity():
    pop = build_population(60, 6, RESIDENTIAL_MIX, 8)
    p_kw = 1.7
    pop.append(LoadProfile("THIEF", "residential", np.full((183, 96), p_kw), scenario_id=4))
    ids = [p.consumer_id for p in pop]
    topo = feeder.default_topology(ids, 3, rng_seed=5)
    honest = {p.consumer_id: p.flat for p in pop}

    clean = feeder.simulate(topo, honest, honest)
    worst = max(float(np.abs(line.ntl).max()) for line in clean.lines)

    actual, metered, _ = inject(pop, [TheftAssignment("THIEF", 1)], topology=topo)
    li = topo.line_of("THIEF")
    stolen_line = feeder.simulate(topo, actual, metered).lines[li]
    # oracle: the same line with the thief honest, and with the thief removed
    without_topo = feeder.FeederTopology([feeder.Line([
        feeder.Tap(t.segment, [c for c in t.consumers if c != "THIEF"]) for t in line.taps
    ]) for line in topo.lines])
    without = {k: v for k, v in honest.items() if k != "THIEF"}
    no_thief = feeder.simulate(without_topo, without, without).lines[li]
    loss_delta = clean.lines[li].technical_losses.sum() - no_thief.technical_losses.sum()
    expected = p_kw * 0.25 * 17568 + loss_delta
    got = stolen_line.ntl.sum()
    rel = abs(got - expected) / expected
    ok = worst < 1e-9 and rel < 1e-6
    record(2, ok, f"clean max |NTL| {worst:.2e} kWh (< 1e-9); S1 horizon NTL {got:.4f} vs "
                  f"stolen+loss delta {expected:.4f}, rel err {rel:.1e} (< 1e-6)")


# -- 3: five clusters on a theft-free population ------------------------------------------


@pytest.fixture(scope="module")
def clean_500():
    pop = build_population(500, 0, RESIDENTIAL_MIX, 1)
    t0 = time.perf_counter()
    result = mine({p.consumer_id: p.flat for p in pop}, {p.consumer_id: p.kind for p in pop},
                  algorithms=("meanshift",))
    return pop, result, time.perf_counter() - t0


def test_c03_five_cluster_recovery(clean_500):
    pop, result, elapsed = clean_500
    rep = result.reports.get("meanshift")
    if rep is None:
        record(3, False, f"bandwidth search failed: {result.errors.get('meanshift')}")
    truth = {p.consumer_id: p.scenario_id for p in pop}
    majority = 0
    for c in np.unique(rep.labels):
        members = [truth[rep.row_ids[i]] for i in np.flatnonzero(rep.labels == c)]
        majority += Counter(members).most_common(1)[0][1]
    purity = majority / len(rep.row_ids)
    ok = len(rep.major_clusters) == 5 and purity >= 0.9 and elapsed < 30.0
    record(3, ok, f"{len(rep.major_clusters)} clusters at h={rep.params['bandwidth']:.3f}, "
                  f"purity {purity:.3f} (>= 0.9), {elapsed:.1f} s (< 30 s)")


# -- 4 and 5: severity sweeps --------------------------------------------------------------


@pytest.fixture(scope="module")
def sweeps():
    cache: dict = {}
    s2 = run_sweep(SWEEP_SEED, 2, [0.2, 0.4, 0.6, 0.65, 0.8], 3, populations=cache)
    s4 = run_sweep(SWEEP_SEED, 4, [0.2, 0.4, 0.6, 0.8], 3, populations=cache)
    return {2: s2, 4: s4}


@pytest.mark.slow
def test_c04_high_severity_hit_rate(sweeps):
    parts, ok = [], True
    for sc, sev in ((2, 0.65), (4, 0.6)):
        res = sweeps[sc]
        ms = res.mean_hit_rate(sc, "meanshift")[sev]
        db = res.mean_hit_rate(sc, "dbscan")[sev]
        best, worst = max(ms, db), min(ms, db)
        cell_ok = best >= 0.9 and worst >= 0.8
        ok &= cell_ok
        parts.append(f"S{sc}@{sev}: meanshift {ms:.3f} dbscan {db:.3f}")
    record(4, ok, "; ".join(parts) + " (best >= 0.9, both >= 0.8)")


@pytest.mark.slow
def test_c05_monotone_severity_curves(sweeps):
    grid = [0.2, 0.4, 0.6, 0.8]
    parts, ok = [], True
    for sc, res in sweeps.items():
        for algo in ("meanshift", "dbscan"):
            means = res.mean_hit_rate(sc, algo)
            curve = [means[s] for s in grid]
            mono = all(b >= a for a, b in zip(curve, curve[1:]))
            ok &= mono
            parts.append(f"S{sc} {algo} [{', '.join(f'{v:.2f}' for v in curve)}]")
    table = [row for res in sweeps.values() for row in res.comparison()]
    lines = ["    scenario severity meanshift dbscan better"]
    lines += [f"    S{r['scenario']:<7} {r['severity']:<8} {r['meanshift']:<9.3f} {r['dbscan']:<6.3f} {r['better']}"
              for r in table]
    crossover = {r["scenario"]: r["crossover_reproduced"] for r in table}
    lines.append(f"    crossover near 40% reproduced (reported only): {crossover}")
    detail = "; ".join(parts) + "\n" + "\n".join(lines)
    record(5, ok, detail)


# -- 6: mean-shift numerics -------------------------------------------------------------------


def test_c06_meanshift_numerics():
    rng = np.random.default_rng(2024)
    worst_drop, worst_grad, bad = 0.0, 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        d = int(rng.integers(1, 4))
        pts = rng.normal(size=(n, d)) * rng.uniform(0.5, 5)
        if rng.random() < 0.5:
            pts[: n // 2] += rng.uniform(5, 15)
        h = float(rng.uniform(0.2, 3.0))
        x = pts.copy()
        f = kde(x, pts, h)
        for _ in range(40):
            x = meanshift_step(x, pts, h)
            f_new = kde(x, pts, h)
            worst_drop = max(worst_drop, float(np.max(f - f_new)))
            f = f_new
        rep = meanshift_cluster(pts, MeanShiftConfig(h, min_cluster_size=1))
        for mode in rep.modes:
            fm = kde(mode, pts, h)[0]
            step = 1e-5 * h
            g = np.array([(kde(mode + e, pts, h)[0] - kde(mode - e, pts, h)[0]) / (2 * step)
                          for e in np.eye(d) * step])
            rel = float(np.abs(g).max() / (fm / h))
            worst_grad = max(worst_grad, rel)
            bad += rel >= 1e-4
    ok = worst_drop <= 1e-12 and bad == 0
    record(6, ok, f"largest KDE drop {worst_drop:.1e} (<= 1e-12), "
                  f"largest gradient {worst_grad:.1e} x f/h (< 1e-4), {bad} bad modes")


# -- 9 (and the pipeline half of 7): full-size pipeline ------------------------------------------


@pytest.fixture(scope="module")
def full_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    t0 = time.perf_counter()
    rc = main(["pipeline", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    yield out, rc, elapsed
    shutil.rmtree(out, ignore_errors=True)


def test_c07_pca_oracle_equivalence(full_pipeline):
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(2, 31))
        x = rng.normal(size=(n, 3)) @ rng.normal(size=(3, m)) * rng.uniform(1, 5) + 0.1 * rng.normal(size=(n, m))
        # raises on any disagreement beyond 1e-8
        check_against_oracle(x, budget=float(rng.choice([0.01, 0.05, 0.2])))

    out, rc, _ = full_pipeline
    assert rc == 0
    ids, scores = artifacts.read_reduced(out / "reduced.csv")
    population = artifacts.read_population(out / "population.csv", out / "profiles.csv")
    _, metered = artifacts.apply_tampering(population, out / "tampered.csv")
    classes = {p.consumer_id: p.kind for p in population}
    features = filter_consumers({c: v for c, v in metered.items() if c in classes}, classes)
    assert features.row_ids == ids
    x = features.values - features.values.mean(axis=1, keepdims=True)
    total = float(np.sum(x * x))
    # orthonormal directions: the squared scores are the captured energy
    retained = float(np.sum(scores ** 2)) / total
    retained_less = float(np.sum(scores[:, :-1] ** 2)) / total
    k = scores.shape[1]
    ok = retained >= 0.95 and retained_less < 0.95
    record(7, ok, f"50 random matrices match the covariance oracle within 1e-8; pipeline k={k}, "
                  f"retained {retained:.4f} (>= 0.95), with k-1 {retained_less:.4f} (< 0.95, minimal)")


def test_c08_dbscan_oracle_equivalence():
    rng = np.random.default_rng(808)
    mismatches = 0
    for _ in range(500):
        pts, eps, min_pts = random_dbscan_instance(rng)
        mismatches += dbscan_cluster(pts, eps, min_pts).labels.tolist() != dbscan_bruteforce(pts, eps, min_pts)
    record(8, mismatches == 0, f"{500 - mismatches}/500 instances identical to the brute-force oracle")


def test_c09_runtime_budget(full_pipeline):
    out, rc, elapsed = full_pipeline
    n = pl.read_csv(out / "population.csv").height
    ok = rc == 0 and n == 1100 and elapsed < 60.0
    record(9, ok, f"pipeline on {n} consumers x 17568 slots finished in {elapsed:.1f} s (< 60 s), exit {rc}")


# -- 10: determinism -------------------------------------------------------------------------------


def test_c10_determinism(tmp_path):
    cfg = CONFIGS / "two_line_feeder.yaml"
    sweep_cfg = tmp_path / "sweep.yaml"
    sweep_cfg.write_text(yaml.safe_dump({
        "master_seed": 9,
        "population": {"n_residential": 60, "n_commercial": 6},
        "topology": {"lines": 3},
        "sweep": {"scenarios": [2, 4], "severities": [0.4, 0.8], "repetitions": 1},
    }))
    stepwise = ["generate", "inject", "simulate", "scan-lines", "mine", "evaluate"]
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        for cmd in stepwise:
            assert main([cmd, "--config", str(cfg), "--out", str(root / "steps")]) == 0, cmd
        assert main(["pipeline", "--config", str(cfg), "--out", str(root / "pipeline")]) == 0
        assert main(["sweep", "--config", str(sweep_cfg), "--out", str(root / "sweep")]) == 0
        trees.append(tree_hashes(root))
    differing = sorted(k for k in trees[0] if trees[0][k] != trees[1].get(k))
    ok = trees[0] == trees[1] and len(trees[0]) > 30
    record(10, ok, f"{len(trees[0])} files from 8 commands rerun byte-identical"
                   + (f"; differing: {differing[:5]}" if differing else ""))
