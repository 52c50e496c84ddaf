import numpy as np
import pytest

from ntlab.mining import (
    BandwidthNotFound,
    MeanShiftConfig,
    bandwidth_search,
    extract_suspects,
    kde,
    meanshift_cluster,
    meanshift_step,
)

from oracles import grid_maxima, kde_1d


def fd_gradient(x, pts, h, step):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (kde(x + e, pts, h)[0] - kde(x - e, pts, h)[0]) / (2 * step)
    return g


def test_kde_matches_oracle():
    data = np.array([-0.1, 0.0, 0.1, 9.9, 10.0, 10.1])
    grid = np.linspace(-2, 12, 50)
    np.testing.assert_allclose(kde(grid[:, None], data, 1.0), kde_1d(grid, data, 1.0), rtol=1e-12)


def test_single_point():
    rep = meanshift_cluster(np.array([[5.0]]), MeanShiftConfig(1.0, min_cluster_size=1))
    assert rep.labels.tolist() == [0]
    assert rep.modes[0, 0] == pytest.approx(5.0)


def test_symmetric_pair_merges_at_midpoint():
    rep = meanshift_cluster(np.array([[0.0], [10.0]]), MeanShiftConfig(100.0, min_cluster_size=1))
    assert len(rep.modes) == 1
    assert rep.modes[0, 0] == pytest.approx(5.0, abs=1e-6)


def test_two_groups_match_grid_oracle():
    data = np.array([-0.1, 0.0, 0.1, 9.9, 10.0, 10.1])
    rep = meanshift_cluster(data[:, None], MeanShiftConfig(1.0))
    grid = np.linspace(-2, 12, 14001)
    expected = grid_maxima(grid, kde_1d(grid, data, 1.0))
    assert len(expected) == 2
    assert sorted(rep.modes[:, 0]) == pytest.approx(expected, abs=2e-3)
    assert rep.labels.tolist() == [0, 0, 0, 1, 1, 1]
    assert rep.suspects == []


def trajectories_ascend(pts, h, steps=60):
    x = pts.copy()
    f = kde(x, pts, h)
    for _ in range(steps):
        x = meanshift_step(x, pts, h)
        f_new = kde(x, pts, h)
        if np.any(f_new < f - 1e-12):
            return False
        f = f_new
    return True


def test_ascent_and_stationary_modes_on_random_data():
    rng = np.random.default_rng(0)
    for run in range(200):
        n = int(rng.integers(2, 25))
        d = int(rng.integers(1, 4))
        pts = rng.normal(size=(n, d)) * rng.uniform(0.5, 5)
        h = float(rng.uniform(0.2, 3.0))
        assert trajectories_ascend(pts, h, steps=30), run
        rep = meanshift_cluster(pts, MeanShiftConfig(h, min_cluster_size=1))
        for mode in rep.modes:
            f = kde(mode, pts, h)[0]
            g = fd_gradient(mode, pts, h, 1e-5 * h)
            assert np.abs(g).max() < 1e-4 * f / h, run


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    pts = np.concatenate([rng.normal(0, 0.3, (8, 2)), rng.normal(5, 0.3, (8, 2)), [[20.0, 20.0]]])
    perm = rng.permutation(len(pts))
    a = meanshift_cluster(pts, MeanShiftConfig(1.0))
    b = meanshift_cluster(pts[perm], MeanShiftConfig(1.0))
    # same partition up to renaming
    pairs = {(a.labels[perm[i]], b.labels[i]) for i in range(len(pts))}
    assert len(pairs) == len(set(a.labels)) == len(set(b.labels))
    assert set(a.suspects) == {str(i) for i in range(len(pts)) if i == 16}
    assert sorted(b.suspects) == [str(int(np.flatnonzero(perm == 16)[0]))]


def test_modes_are_distinct_beyond_merge_tolerance():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(60, 2)) * 3
    cfg = MeanShiftConfig(0.8)
    rep = meanshift_cluster(pts, cfg)
    for i in range(len(rep.modes)):
        for j in range(i):
            assert np.linalg.norm(rep.modes[i] - rep.modes[j]) > cfg.merge_tol


def test_non_convergence_is_reported():
    pts = np.array([[0.0], [1.0], [2.5], [7.0]])
    rep = meanshift_cluster(pts, MeanShiftConfig(1.5, max_iterations=1, min_cluster_size=1))
    assert len(rep.labels) == 4
    assert "non_converged" in rep.diagnostics


def test_bandwidth_search_five_blobs():
    rng = np.random.default_rng(3)
    centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10], [5, 20]], dtype=float)
    sigma = 0.5
    pts = np.concatenate([c + sigma * rng.normal(size=(30, 2)) for c in centers])
    found = bandwidth_search(pts, 5, (0.1, 20.0), 30)
    assert len(found.report.major_clusters) == 5
    true_means = np.array([pts[i * 30:(i + 1) * 30].mean(0) for i in range(5)])
    for m in found.report.modes[found.report.major_clusters]:
        assert np.linalg.norm(true_means - m, axis=1).min() < 0.5 * sigma
    assert [h for h, _ in found.trace] == sorted(h for h, _ in found.trace)
    hits = [h for h, c in found.trace if c == 5]
    assert min(hits) < found.config.bandwidth < max(hits)
    largest = bandwidth_search(pts, 5, (0.1, 20.0), 30, choice="largest")
    assert largest.config.bandwidth == max(hits)


def test_bandwidth_search_singletons_and_failure():
    pts = np.array([[0.0], [3.0], [6.0], [9.0]])
    found = bandwidth_search(pts, 4, (1e-3, 100.0), 12, min_cluster_size=1)
    assert found.trace[0] == (pytest.approx(1e-3), 4)
    single = bandwidth_search(pts, 4, (1e-3, 1e-3), 5, min_cluster_size=1)
    assert len(single.trace) == 1
    with pytest.raises(BandwidthNotFound) as err:
        bandwidth_search(pts, 7, (0.1, 10.0), 5, min_cluster_size=1)
    assert len(err.value.trace) == 5
    with pytest.raises(ValueError):
        bandwidth_search(pts, 2, (5.0, 1.0))
    with pytest.raises(ValueError):
        bandwidth_search(pts, 2, (1.0, 5.0), choice="widest")


def test_bandwidth_search_nearest_fallback():
    pts = np.array([[0.0], [3.0], [6.0], [9.0]])
    found = bandwidth_search(pts, 7, (0.1, 10.0), 5, nearest=True, min_cluster_size=1)
    assert len(found.report.major_clusters) == 4
    assert found.report.diagnostics["bandwidth_fallback"] == {"target": 7, "used": 4}
    # fewer clusters win a tie: 2 and 4 are both one away from 3
    pairs = np.array([[0.0], [0.1], [10.0], [10.1]])
    tied = bandwidth_search(pairs, 3, (0.01, 100.0), 30, nearest=True, min_cluster_size=1)
    assert {c for _, c in tied.trace} >= {4, 2}
    assert len(tied.report.major_clusters) == 2
    exact = bandwidth_search(pts, 4, (1e-3, 100.0), 12, nearest=True, min_cluster_size=1)
    assert "bandwidth_fallback" not in exact.report.diagnostics


def test_extract_suspects():
    pts = np.concatenate([np.zeros((5, 1)), np.full((5, 1), 10.0), [[50.0]]])
    rep = meanshift_cluster(pts, MeanShiftConfig(1.0))
    assert extract_suspects(rep) == ["10"]
    truth = {str(i): None for i in range(11)}
    truth["10"] = 2
    assert extract_suspects(rep, truth) == [("10", "TP")]
    clean = meanshift_cluster(pts[:10], MeanShiftConfig(1.0))
    assert extract_suspects(clean) == []


def test_relative_cluster_size_rule():
    pts = np.concatenate([np.zeros((20, 1)), np.full((4, 1), 10.0)])
    rep = meanshift_cluster(pts, MeanShiftConfig(1.0, min_cluster_fraction=0.2))
    # 4 < ceil(0.2 * 24) = 5, so the small group is suspect
    assert rep.min_cluster_size == 5
    assert len(rep.suspects) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        MeanShiftConfig(0.0)
    with pytest.raises(ValueError):
        MeanShiftConfig(1.0, convergence_tol=0.0)
    cfg = MeanShiftConfig(2.0)
    assert cfg.tol == pytest.approx(2e-6) and cfg.merge_tol == 1.0
