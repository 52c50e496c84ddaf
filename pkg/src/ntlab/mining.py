"""Consumer filtering, mean normalization, PCA and clustering.

The pipeline is: ``filter_consumers`` keeps residential weekday data of
consumers that actually consume, ``mean_normalize`` removes each consumer's own
mean, ``pca_fit``/``pca_project`` reduce the dimension while keeping the
reconstruction error within a budget, and either ``meanshift_cluster`` or
``dbscan_cluster`` groups the consumers.  Members of small clusters and DBSCAN
noise are the suspects.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .profilegen import SLOTS_PER_DAY, HorizonCalendar

log = logging.getLogger(__name__)

NOISE = -1


class MiningError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (n consumers, retained slots) kW
    row_ids: list[str]
    per_row_mean: np.ndarray | None = None
    retained_days: np.ndarray | None = None
    verify_habitation: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class PcaModel:
    components: np.ndarray  # (k, m) orthonormal rows
    singular_values: np.ndarray  # all of them, descending
    k: int
    error_ratio: float  # reconstruction error / total, the quantity bounded by the budget

    @property
    def retained_variance_ratio(self) -> float:
        return 1.0 - self.error_ratio

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth: float
    convergence_tol: float | None = None  # default 1e-6 * bandwidth
    max_iterations: int = 500
    mode_merge_tol: float | None = None  # default bandwidth / 2
    min_cluster_size: int = 3
    min_cluster_fraction: float = 0.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if self.convergence_tol is not None and not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if self.mode_merge_tol is not None and not self.mode_merge_tol > 0:
            raise ValueError("mode_merge_tol must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")

    @property
    def tol(self) -> float:
        return self.convergence_tol if self.convergence_tol is not None else 1e-6 * self.bandwidth

    @property
    def merge_tol(self) -> float:
        return self.mode_merge_tol if self.mode_merge_tol is not None else self.bandwidth / 2


@dataclass
class ClusterReport:
    algorithm: str  # "meanshift" | "dbscan"
    row_ids: list[str]
    labels: np.ndarray  # cluster index per row, NOISE for DBSCAN noise
    modes: np.ndarray  # (n_clusters, k) centers
    min_cluster_size: int
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def assignments(self) -> dict[str, int]:
        return {cid: int(lab) for cid, lab in zip(self.row_ids, self.labels)}

    @property
    def cluster_sizes(self) -> np.ndarray:
        n_clusters = len(self.modes)
        return np.bincount(self.labels[self.labels >= 0], minlength=n_clusters)

    @property
    def major_clusters(self) -> list[int]:
        return [c for c, s in enumerate(self.cluster_sizes) if s >= self.min_cluster_size]

    @property
    def suspect_mask(self) -> np.ndarray:
        small = self.cluster_sizes < self.min_cluster_size
        return np.array([lab == NOISE or small[lab] for lab in self.labels], dtype=bool)

    @property
    def suspects(self) -> list[str]:
        return [cid for cid, s in zip(self.row_ids, self.suspect_mask) if s]


# -- filtering and normalization ---------------------------------------------


def filter_consumers(
    metered: Mapping[str, np.ndarray],
    classes: Mapping[str, str],
    calendar: HorizonCalendar | None = None,
    low_consumption_fraction: float = 0.15,
) -> FeatureMatrix:
    """Keep residential consumers on weekdays, dropping low consumers.

    A consumer is low if its median daily energy over the retained days is
    below ``low_consumption_fraction`` of the population median.  Those ids go
    to ``verify_habitation`` rather than silently disappearing.
    """
    calendar = calendar or HorizonCalendar()
    days = calendar.weekday_mask()
    ids = [cid for cid in metered if classes.get(cid) == "residential"]
    if not ids:
        raise MiningError("no residential consumers with metered data")
    rows = []
    for cid in ids:
        grid = np.asarray(metered[cid], dtype=float).reshape(-1, SLOTS_PER_DAY)
        if grid.shape[0] != calendar.n_days:
            raise MiningError(f"{cid}: series covers {grid.shape[0]} days, calendar has {calendar.n_days}")
        rows.append(grid[days])
    data = np.stack(rows)  # (n, days, 96)
    daily = np.median(data.sum(axis=2), axis=1)
    floor = low_consumption_fraction * np.median(daily)
    keep = daily >= floor
    if floor <= 0:
        keep &= daily > 0
    kept = [cid for cid, k in zip(ids, keep) if k]
    if not kept:
        raise MiningError(
            f"every one of {len(ids)} residential consumers fell below the "
            f"low-consumption floor ({floor:.4f} kWh/4 per day)"
        )
    return FeatureMatrix(
        values=data[keep].reshape(len(kept), -1),
        row_ids=kept,
        retained_days=np.flatnonzero(days),
        verify_habitation=[cid for cid, k in zip(ids, keep) if not k],
    )


def mean_normalize(matrix: FeatureMatrix) -> FeatureMatrix:
    x = np.asarray(matrix.values, dtype=float)
    if x.size == 0:
        raise MiningError("cannot normalize an empty matrix")
    mu = x.mean(axis=1)
    return replace(matrix, values=x - mu[:, None], per_row_mean=mu)


# -- PCA -----------------------------------------------------------------------


def pca_fit(
    matrix: FeatureMatrix | np.ndarray,
    variance_budget: float = 0.05,
    max_components: int | None = None,
    expected_components: int | None = 10,
) -> PcaModel:
    """Smallest k whose reconstruction error ratio is within ``variance_budget``.

    The rows are used as given (no column centering).  With far more columns
    than rows the eigenproblem is solved on the n x n Gram matrix and the
    directions are lifted back to feature space.
    """
    x = _values(matrix)
    n, m = x.shape
    if n < 2:
        raise MiningError("PCA needs at least 2 rows")
    if not 0 <= variance_budget < 1:
        raise ValueError("variance_budget must lie in [0, 1)")

    if m > n:
        gram = x @ x.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals, evecs = np.clip(evals[order], 0, None), evecs[:, order]
        scale = math.sqrt(evals[0]) if evals[0] > 0 else 0.0
        rank = int(np.sum(evals > (1e-12 * scale) ** 2 * max(n, m))) if scale else 0
        sv = np.sqrt(evals)
        comps = (evecs[:, :rank].T @ x) / sv[:rank, None]
    else:
        cov = x.T @ x
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals, evecs = np.clip(evals[order], 0, None), evecs[:, order]
        scale = math.sqrt(evals[0]) if evals[0] > 0 else 0.0
        rank = int(np.sum(evals > (1e-12 * scale) ** 2 * max(n, m))) if scale else 0
        sv = np.sqrt(evals)
        comps = evecs[:, :rank].T
    if rank == 0:
        raise MiningError("degenerate matrix: all rows are zero")

    power = sv[:rank] ** 2
    total = power.sum()
    # tail[k] = error ratio when keeping k components
    tail = np.concatenate([[total], total - np.cumsum(power)]) / total
    tail = np.clip(tail, 0.0, None)
    k = int(np.argmax(tail <= variance_budget + 1e-15))
    k = max(k, 1)
    if max_components is not None:
        k = min(k, max_components)
    if expected_components is not None and k != expected_components:
        log.info("PCA keeps %d components for a %.0f%% budget", k, variance_budget * 100)
    comps = _fix_signs(comps[:k])
    return PcaModel(components=comps, singular_values=sv[:min(n, m)], k=k, error_ratio=float(tail[k]))


def _fix_signs(comps: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every direction is positive
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), idx])
    signs[signs == 0] = 1
    return comps * signs[:, None]


def pca_project(model: PcaModel, matrix: FeatureMatrix | np.ndarray) -> np.ndarray:
    x = _values(matrix)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise MiningError(f"matrix has {x.shape[-1]} columns, model expects {model.n_features}")
    return x @ model.components.T


def pca_reconstruct(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores) @ model.components


def reconstruction_error_ratio(x: np.ndarray, x_approx: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    num = np.mean(np.sum((x - x_approx) ** 2, axis=1))
    den = np.mean(np.sum(x ** 2, axis=1))
    return float(num / den)


def _values(matrix) -> np.ndarray:
    x = matrix.values if isinstance(matrix, FeatureMatrix) else matrix
    return np.asarray(x, dtype=float)


# -- mean shift ------------------------------------------------------------------


def kde(x: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    """Gaussian kernel density at each row of ``x``."""
    points = _as_2d(points)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = points.shape
    sq = _sqdist(x, points)
    return np.exp(-sq / (2 * h * h)).sum(axis=1) / (n * h ** d)


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # direct differences; the |a|^2 + |b|^2 - 2ab expansion cancels badly far from the origin
    return cdist(a, b, "sqeuclidean")


def _as_2d(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    return p


def meanshift_step(x: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    """One fixed-point update: Gaussian-weighted mean of the data around each row of ``x``."""
    sq = _sqdist(x, points)
    logw = -sq / (2 * h * h)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return (w @ points) / w.sum(axis=1, keepdims=True)


def meanshift_cluster(
    points: np.ndarray,
    config: MeanShiftConfig,
    row_ids: Sequence[str] | None = None,
) -> ClusterReport:
    """Move every point uphill on the Gaussian KDE and group the end points."""
    pts = _as_2d(points)
    n = len(pts)
    if n == 0:
        raise MiningError("no points to cluster")
    h = config.bandwidth
    row_ids = list(row_ids) if row_ids is not None else [str(i) for i in range(n)]

    x = pts.copy()
    active = np.ones(n, dtype=bool)
    iterations = np.zeros(n, dtype=int)
    for _ in range(config.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        new = meanshift_step(x[idx], pts, h)
        shift = np.sqrt(((new - x[idx]) ** 2).sum(axis=1))
        x[idx] = new
        iterations[idx] += 1
        active[idx[shift < config.tol]] = False
    converged = ~active

    # polish a little further so that end points sit on the modes
    x = _polish(x, pts, h, config.tol * 1e-2, 50)

    anchor = np.flatnonzero(converged) if converged.any() else np.arange(n)
    groups = _single_linkage(x[anchor], config.merge_tol)
    n_groups = groups.max() + 1
    modes = np.empty((n_groups, pts.shape[1]))
    dens = kde(x[anchor], pts, h)
    for g in range(n_groups):
        members = np.flatnonzero(groups == g)
        modes[g] = x[anchor[members[np.argmax(dens[members])]]]
    modes = _polish(modes, pts, h, config.tol * 1e-3, 200)

    labels = np.full(n, -1, dtype=int)
    labels[anchor] = groups
    stragglers = np.flatnonzero(labels < 0)
    if stragglers.size:
        labels[stragglers] = np.argmin(_sqdist(x[stragglers], modes), axis=1)

    min_size = _min_size(config, n)
    return ClusterReport(
        algorithm="meanshift",
        row_ids=row_ids,
        labels=labels,
        modes=modes,
        min_cluster_size=min_size,
        params={"bandwidth": h, "merge_tol": config.merge_tol},
        diagnostics={
            "non_converged": [row_ids[i] for i in stragglers],
            "max_iterations_used": int(iterations.max()),
        },
    )


def _min_size(config: MeanShiftConfig, n: int) -> int:
    return max(config.min_cluster_size, int(math.ceil(config.min_cluster_fraction * n)))


def _polish(x: np.ndarray, pts: np.ndarray, h: float, tol: float, max_iter: int) -> np.ndarray:
    x = x.copy()
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        new = meanshift_step(x[idx], pts, h)
        shift = np.sqrt(((new - x[idx]) ** 2).sum(axis=1))
        x[idx] = new
        active[idx[shift < tol]] = False
    return x


def _single_linkage(x: np.ndarray, tol: float) -> np.ndarray:
    """Connected components of the 'closer than tol' graph, numbered by first member."""
    tree = cKDTree(x)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(x))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(x))])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


@dataclass
class BandwidthSearch:
    config: MeanShiftConfig
    report: ClusterReport
    trace: list[tuple[float, int]]


class BandwidthNotFound(MiningError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _run_middle(indices: Sequence[int]) -> int:
    runs: list[list[int]] = []
    for i in sorted(indices):
        if runs and runs[-1][-1] == i - 1:
            runs[-1].append(i)
        else:
            runs.append([i])
    # longest run, the later one on ties
    run = max(reversed(runs), key=len)
    return run[len(run) // 2]


def bandwidth_search(
    points: np.ndarray,
    target_clusters: int = 5,
    h_range: tuple[float, float] | None = None,
    steps: int = 24,
    row_ids: Sequence[str] | None = None,
    choice: str = "stable",
    nearest: bool = False,
    **config_kwargs,
) -> BandwidthSearch:
    """Geometric sweep over the bandwidth for ``target_clusters`` major clusters.

    The cluster count need not be monotone in h, so every candidate is run and
    the whole (h, count) trace is kept.  With ``choice="largest"`` the largest
    hitting h wins.  ``"stable"`` takes the middle of the longest run of
    consecutive hits (the upper middle for even runs): at the top of a run two
    clusters are about to merge and their modes are pulled toward each other.

    When no h hits the target, ``BandwidthNotFound`` is raised unless
    ``nearest`` is set; then the closest non-zero count is used instead (fewer
    clusters on ties) and the report's diagnostics say so.
    """
    if choice not in ("stable", "largest"):
        raise ValueError(f"unknown bandwidth choice {choice!r}")
    pts = _as_2d(points)
    if h_range is None:
        h_range = default_h_range(pts)
    h_lo, h_hi = map(float, h_range)
    if not (h_lo > 0 and h_hi > 0) or h_lo > h_hi:
        raise ValueError(f"bad bandwidth range ({h_lo}, {h_hi})")
    candidates = [h_lo] if h_lo == h_hi else list(np.geomspace(h_lo, h_hi, max(steps, 2)))

    trace = []
    runs: list[tuple[MeanShiftConfig, ClusterReport]] = []
    for h in candidates:
        cfg = MeanShiftConfig(bandwidth=float(h), **config_kwargs)
        report = meanshift_cluster(pts, cfg, row_ids)
        trace.append((float(h), len(report.major_clusters)))
        runs.append((cfg, report))

    counts = [c for _, c in trace]
    goal = target_clusters
    if goal not in counts:
        listing = ", ".join(f"{h:.4g}:{c}" for h, c in trace)
        msg = f"no bandwidth in [{h_lo:.4g}, {h_hi:.4g}] gives {target_clusters} clusters (h:count {listing})"
        usable = [c for c in counts if c > 0]
        if not nearest or not usable:
            raise BandwidthNotFound(msg, trace)
        goal = min(usable, key=lambda c: (abs(c - target_clusters), c))
        log.info("%s; using %d clusters instead", msg, goal)
    hits = [i for i, c in enumerate(counts) if c == goal]
    pick = max(hits) if choice == "largest" else _run_middle(hits)
    cfg, report = runs[pick]
    if goal != target_clusters:
        report.diagnostics["bandwidth_fallback"] = {"target": target_clusters, "used": goal}
    return BandwidthSearch(cfg, report, trace)


def default_h_range(points: np.ndarray) -> tuple[float, float]:
    pts = _as_2d(points)
    spread = float(np.sqrt(((pts - pts.mean(0)) ** 2).sum(1).mean()))
    if spread == 0:
        return (1.0, 1.0)
    return (spread * 0.01, spread * 1.0)


# -- DBSCAN ---------------------------------------------------------------------


def dbscan_cluster(
    points: np.ndarray,
    eps: float | None = None,
    min_pts: int = 4,
    row_ids: Sequence[str] | None = None,
    min_cluster_size: int = 1,
) -> ClusterReport:
    """Density-based clustering; noise points are labeled ``NOISE``.

    Neighborhoods are closed balls (distance <= eps) and include the point
    itself.  Core points that reach each other form a cluster; clusters are
    numbered by their lowest-index core point.  A border point reachable from
    several clusters joins the one of its lowest-index core neighbor.
    """
    pts = _as_2d(points)
    n = len(pts)
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    if eps is None:
        eps = knee_eps(pts, min_pts)
    if not eps > 0:
        raise ValueError("eps must be > 0")
    row_ids = list(row_ids) if row_ids is not None else [str(i) for i in range(n)]

    tree = cKDTree(pts)
    neighbors = tree.query_ball_point(pts, r=eps)
    neighbors = [np.sort(np.asarray(nb, dtype=int)) for nb in neighbors]
    core = np.array([len(nb) >= min_pts for nb in neighbors], dtype=bool)

    labels = np.full(n, NOISE, dtype=int)
    n_clusters = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = n_clusters
        stack = [i]
        while stack:
            j = stack.pop()
            for q in neighbors[j]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = n_clusters
                    stack.append(q)
        n_clusters += 1
    for i in np.flatnonzero(~core):
        core_nb = [q for q in neighbors[i] if core[q]]
        if core_nb:
            labels[i] = labels[min(core_nb)]

    modes = np.array([pts[labels == c].mean(axis=0) for c in range(n_clusters)]).reshape(n_clusters, pts.shape[1])
    return ClusterReport(
        algorithm="dbscan",
        row_ids=row_ids,
        labels=labels,
        modes=modes,
        min_cluster_size=min_cluster_size,
        params={"eps": float(eps), "min_pts": int(min_pts)},
    )


def k_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Distance of every point to its k-th nearest point, itself counted first."""
    pts = _as_2d(points)
    k = min(k, len(pts))
    d, _ = cKDTree(pts).query(pts, k=k)
    d = np.asarray(d).reshape(len(pts), -1)
    return d[:, k - 1]


def knee_eps(points: np.ndarray, min_pts: int = 4) -> float:
    """Knee of the sorted k-distance curve: the point farthest below its chord."""
    d = np.sort(k_distances(points, min_pts))
    if len(d) < 3 or d[-1] == d[0]:
        return float(d[-1]) if d[-1] > 0 else 1.0
    x = np.linspace(0.0, 1.0, len(d))
    y = (d - d[0]) / (d[-1] - d[0])
    knee = int(np.argmax(x - y))
    eps = float(d[knee])
    return eps if eps > 0 else float(d[d > 0][0])


# -- suspects ---------------------------------------------------------------------


def extract_suspects(report: ClusterReport, ground_truth: Mapping[str, object] | None = None):
    """Noise points and members of clusters below ``min_cluster_size``.

    With ``ground_truth`` (consumer id -> theft scenario or None) every suspect
    is paired with "TP" or "FP".
    """
    suspects = report.suspects
    if ground_truth is None:
        return suspects
    return [(cid, "TP" if ground_truth.get(cid) else "FP") for cid in suspects]
