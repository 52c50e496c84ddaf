"""The detection chain shared by the CLI and the sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import mining
from .profilegen import HorizonCalendar

ALGORITHMS = ("meanshift", "dbscan")


@dataclass
class MiningConfig:
    low_consumption_fraction: float = 0.15
    variance_budget: float = 0.05
    max_components: int | None = None
    target_clusters: int = 5
    h_range: tuple[float, float] | None = None
    bandwidth_steps: int = 20
    bandwidth: float | None = None  # skip the search when set
    bandwidth_choice: str = "stable"  # or "largest"
    # when no h gives target_clusters, cluster at the nearest count reached
    bandwidth_fallback: bool = True
    max_iterations: int = 500
    min_cluster_size: int = 3
    # a cluster smaller than this share of the consumers is an outlier cluster
    min_cluster_fraction: float = 0.12
    dbscan_eps: float | None = None
    # None: twice the reduced dimension, so neighbourhoods stay dense in k-d space
    dbscan_min_pts: int | None = None

    def __post_init__(self):
        if self.h_range is not None:
            self.h_range = tuple(float(v) for v in self.h_range)
        if not 0 <= self.min_cluster_fraction < 1:
            raise ValueError("min_cluster_fraction must lie in [0, 1)")


@dataclass
class MiningResult:
    features: mining.FeatureMatrix
    normalized: mining.FeatureMatrix
    pca: mining.PcaModel
    scores: np.ndarray
    reports: dict[str, mining.ClusterReport] = field(default_factory=dict)
    bandwidth_trace: list[tuple[float, int]] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def row_ids(self) -> list[str]:
        return self.features.row_ids

    @property
    def verify_habitation(self) -> list[str]:
        return self.features.verify_habitation

    def flagged(self, algorithm: str) -> list[str]:
        """Clustering suspects plus the low-consumption cases sent for verification."""
        return sorted(set(self.reports[algorithm].suspects) | set(self.verify_habitation))


def min_size(cfg: MiningConfig, n: int) -> int:
    return max(cfg.min_cluster_size, int(np.ceil(cfg.min_cluster_fraction * n)))


def mine(
    metered: Mapping[str, np.ndarray],
    classes: Mapping[str, str],
    cfg: MiningConfig | None = None,
    calendar: HorizonCalendar | None = None,
    algorithms=ALGORITHMS,
) -> MiningResult:
    cfg = cfg or MiningConfig()
    features = mining.filter_consumers(metered, classes, calendar, cfg.low_consumption_fraction)
    normalized = mining.mean_normalize(features)
    model = mining.pca_fit(normalized, cfg.variance_budget, cfg.max_components)
    scores = mining.pca_project(model, normalized)
    result = MiningResult(features, normalized, model, scores)
    ids = features.row_ids

    for algo in algorithms:
        if algo == "meanshift":
            kwargs = dict(
                max_iterations=cfg.max_iterations,
                min_cluster_size=cfg.min_cluster_size,
                min_cluster_fraction=cfg.min_cluster_fraction,
            )
            if cfg.bandwidth is not None:
                report = mining.meanshift_cluster(scores, mining.MeanShiftConfig(cfg.bandwidth, **kwargs), ids)
            else:
                try:
                    found = mining.bandwidth_search(
                        scores, cfg.target_clusters, cfg.h_range, cfg.bandwidth_steps, ids,
                        cfg.bandwidth_choice, cfg.bandwidth_fallback, **kwargs,
                    )
                except mining.BandwidthNotFound as exc:
                    result.bandwidth_trace = exc.trace
                    result.errors[algo] = str(exc)
                    continue
                result.bandwidth_trace = found.trace
                report = found.report
        elif algo == "dbscan":
            min_pts = cfg.dbscan_min_pts if cfg.dbscan_min_pts is not None else 2 * scores.shape[1]
            report = mining.dbscan_cluster(
                scores, cfg.dbscan_eps, min_pts, ids, min_cluster_size=min_size(cfg, len(ids))
            )
        else:
            raise ValueError(f"unknown algorithm {algo!r}")
        result.reports[algo] = report
    return result
