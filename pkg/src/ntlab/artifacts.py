"""CSV/YAML/JSON readers and writers for every intermediate artifact.

kW values are written with 4 decimals; they are quantized to 4 decimals when
generated, so reading a file back reproduces the arrays exactly.  Energies,
PCA scores and losses are written with the shortest round-trip repr; ratios
use 6 decimals.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import polars as pl
import yaml

from .feeder import FeederTelemetry, FeederTopology, Line, LineSegment, LineTelemetry, Tap
from .linescan import LineVerdict
from .mining import ClusterReport
from .profilegen import KW_DECIMALS, LoadProfile
from .theft import GroundTruth, TheftAssignment

RATIO_DECIMALS = 6


class ArtifactError(ValueError):
    pass


def _path(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _read_csv(path, **kwargs) -> pl.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing input file {path}")
    return pl.read_csv(path, **kwargs)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- profiles -----------------------------------------------------------------------


def write_series(path, series: Mapping[str, np.ndarray]) -> None:
    """Long format ``consumer_id,slot_index,kw``, consumers in mapping order."""
    ids = list(series)
    if not ids:
        pl.DataFrame(schema={"consumer_id": pl.Utf8, "slot_index": pl.Int64, "kw": pl.Float64}).write_csv(
            _path(path)
        )
        return
    arrays = [np.asarray(series[c], dtype=float).reshape(-1) for c in ids]
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ArtifactError("series of unequal length")
    df = pl.DataFrame({
        "consumer_id": pl.Series(ids, dtype=pl.Utf8).gather(np.repeat(np.arange(len(ids)), n)),
        "slot_index": np.tile(np.arange(n, dtype=np.int64), len(ids)),
        "kw": np.concatenate(arrays),
    })
    df.write_csv(_path(path), float_precision=KW_DECIMALS)


def read_series(path) -> dict[str, np.ndarray]:
    df = _read_csv(path, schema={"consumer_id": pl.Utf8, "slot_index": pl.Int64, "kw": pl.Float64})
    out: dict[str, np.ndarray] = {}
    for (cid,), part in df.group_by("consumer_id", maintain_order=True):
        idx = part["slot_index"].to_numpy()
        vals = np.full(idx.max() + 1 if idx.size else 0, np.nan)
        vals[idx] = part["kw"].to_numpy()
        if np.isnan(vals).any():
            raise ArtifactError(f"{path}: consumer {cid} has missing slots")
        out[cid] = vals
    return out


def write_population(path, population: Sequence[LoadProfile]) -> None:
    pl.DataFrame(
        {
            "consumer_id": [p.consumer_id for p in population],
            "class": [p.kind for p in population],
            "scenario": [p.scenario_id for p in population],
            "business": [p.business for p in population],
        },
        schema={"consumer_id": pl.Utf8, "class": pl.Utf8, "scenario": pl.Int64, "business": pl.Utf8},
    ).write_csv(_path(path))


def read_population(path, profiles_path) -> list[LoadProfile]:
    meta = _read_csv(path, schema={"consumer_id": pl.Utf8, "class": pl.Utf8, "scenario": pl.Int64, "business": pl.Utf8})
    series = read_series(profiles_path) if meta.height else {}
    out = []
    for row in meta.iter_rows(named=True):
        cid = row["consumer_id"]
        if cid not in series:
            raise ArtifactError(f"{profiles_path}: no profile for {cid}")
        out.append(LoadProfile(cid, row["class"], series[cid].reshape(-1, 96), row["scenario"], row["business"]))
    return out


def write_manifest(path, payload: dict) -> None:
    _path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


# -- theft --------------------------------------------------------------------------

_ASSIGN_SCHEMA = {
    "consumer_id": pl.Utf8, "scenario": pl.Int64, "theta": pl.Float64,
    "rho": pl.Float64, "onset_day": pl.Int64, "host": pl.Utf8,
}


def write_assignments(path, assignments: Iterable[TheftAssignment]) -> None:
    rows = [(a.consumer_id, a.scenario, a.theta, a.rho, a.onset_day, a.host) for a in assignments]
    pl.DataFrame(rows, schema=_ASSIGN_SCHEMA, orient="row").write_csv(_path(path))


def read_assignments(path) -> list[TheftAssignment]:
    df = _read_csv(path, schema=_ASSIGN_SCHEMA)
    return [TheftAssignment(**row) for row in df.iter_rows(named=True)]


def write_ground_truth(path, truth: GroundTruth) -> None:
    by_id = {a.consumer_id: a for a in truth.assignments}
    rows = []
    for cid in truth.consumer_labels:
        a = by_id.get(cid)
        if a is None:
            rows.append((cid, None, None, None, None, None, "honest"))
        else:
            rows.append((cid, a.scenario, a.theta, a.rho, a.onset_day, a.host, "thief"))
    pl.DataFrame(rows, schema={**_ASSIGN_SCHEMA, "label": pl.Utf8}, orient="row").write_csv(_path(path))


def read_ground_truth(path) -> GroundTruth:
    df = _read_csv(path, schema={**_ASSIGN_SCHEMA, "label": pl.Utf8})
    labels: dict[str, int | None] = {}
    assignments = []
    for row in df.iter_rows(named=True):
        label = row.pop("label")
        if label == "thief":
            a = TheftAssignment(**row)
            labels[a.consumer_id] = a.scenario
            assignments.append(a)
        elif label == "honest":
            labels[row["consumer_id"]] = None
        else:
            raise ArtifactError(f"{path}: unknown label {label!r}")
    return GroundTruth(labels, assignments)


def write_tampered(path, actual: Mapping[str, np.ndarray], metered: Mapping[str, np.ndarray],
                   consumer_ids: Sequence[str]) -> None:
    """Actual and metered series of the consumers whose series differ from their profile.

    Unmetered consumers get an empty ``metered_kw``.
    """
    frames = []
    for cid in consumer_ids:
        a = np.asarray(actual[cid], dtype=float)
        m = metered.get(cid)
        frames.append(pl.DataFrame({
            "consumer_id": pl.Series([cid] * a.size, dtype=pl.Utf8),
            "slot_index": np.arange(a.size, dtype=np.int64),
            "actual_kw": a,
            "metered_kw": pl.Series([None] * a.size if m is None else np.asarray(m, dtype=float), dtype=pl.Float64),
        }))
    schema = {"consumer_id": pl.Utf8, "slot_index": pl.Int64, "actual_kw": pl.Float64, "metered_kw": pl.Float64}
    df = pl.concat(frames) if frames else pl.DataFrame(schema=schema)
    df.write_csv(_path(path), float_precision=KW_DECIMALS)


def read_tampered(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray | None]]:
    df = _read_csv(path, schema={"consumer_id": pl.Utf8, "slot_index": pl.Int64,
                                 "actual_kw": pl.Float64, "metered_kw": pl.Float64})
    actual, metered = {}, {}
    for (cid,), part in df.group_by("consumer_id", maintain_order=True):
        part = part.sort("slot_index")
        actual[cid] = part["actual_kw"].to_numpy()
        m = part["metered_kw"]
        metered[cid] = None if m.null_count() == m.len() else m.to_numpy()
    return actual, metered


def apply_tampering(population: Sequence[LoadProfile], tampered_path):
    """Rebuild (actual, metered) load maps from the profiles plus the overlay."""
    actual = {p.consumer_id: p.flat for p in population}
    metered = dict(actual)
    t_actual, t_metered = read_tampered(tampered_path)
    for cid, a in t_actual.items():
        actual[cid] = a
        if t_metered[cid] is None:
            metered.pop(cid, None)
        else:
            metered[cid] = t_metered[cid]
    return actual, metered


# -- feeder -------------------------------------------------------------------------


def topology_to_dict(topo: FeederTopology) -> dict:
    return {
        "v_nominal": topo.v_nominal,
        "lines": [
            {"taps": [
                {"length": t.segment.length, "r_per_km": t.segment.r_per_km,
                 "x_per_km": t.segment.x_per_km, "consumers": list(t.consumers)}
                for t in line.taps
            ]}
            for line in topo.lines
        ],
    }


def write_topology(path, topo: FeederTopology) -> None:
    _path(path).write_text(yaml.safe_dump(topology_to_dict(topo), sort_keys=False))


def read_topology(path) -> FeederTopology:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing input file {path}")
    data = yaml.safe_load(path.read_text())
    lines = [
        Line([Tap(LineSegment(t["length"], t["r_per_km"], t["x_per_km"]), list(t["consumers"]))
              for t in line["taps"]])
        for line in data["lines"]
    ]
    return FeederTopology(lines, v_nominal=data["v_nominal"])


def line_file(directory, i: int) -> Path:
    return Path(directory) / f"line_{i:03d}.csv"


def write_telemetry(directory, telemetry: FeederTelemetry) -> list[Path]:
    paths = []
    for i, line in enumerate(telemetry.lines):
        p = _path(line_file(directory, i))
        pl.DataFrame({
            "slot_index": np.arange(line.sum_meter.size, dtype=np.int64),
            "sum_meter_kwh": line.sum_meter,
            "consumers_kwh": line.consumers_kwh,
            "technical_kwh": line.technical_losses,
            "total_loss_kwh": line.total_losses,
            "ntl_kwh": line.ntl,
        }).write_csv(p)
        paths.append(p)
    return paths


def read_telemetry(directory) -> FeederTelemetry:
    directory = Path(directory)
    paths = sorted(directory.glob("line_*.csv"))
    if not paths:
        raise ArtifactError(f"no line telemetry under {directory}")
    lines = []
    for p in paths:
        df = _read_csv(p, schema={"slot_index": pl.Int64, "sum_meter_kwh": pl.Float64, "consumers_kwh": pl.Float64,
                                  "technical_kwh": pl.Float64, "total_loss_kwh": pl.Float64, "ntl_kwh": pl.Float64})
        lt = LineTelemetry(df["sum_meter_kwh"].to_numpy(), df["consumers_kwh"].to_numpy(), df["technical_kwh"].to_numpy())
        # keep the recorded derived columns rather than recomputing them
        lt.total_losses = df["total_loss_kwh"].to_numpy()
        lt.ntl = df["ntl_kwh"].to_numpy()
        lines.append(lt)
    return FeederTelemetry(lines)


def write_verdicts(path, verdicts: Sequence[LineVerdict]) -> None:
    pl.DataFrame(
        {
            "line_id": [v.line_id for v in verdicts],
            "ntl_kwh": [v.ntl_energy_total for v in verdicts],
            "technical_kwh": [v.technical_energy_total for v in verdicts],
            "ratio": [v.ratio for v in verdicts],
            "flagged": [v.flagged for v in verdicts],
        },
        schema={"line_id": pl.Int64, "ntl_kwh": pl.Float64, "technical_kwh": pl.Float64,
                "ratio": pl.Float64, "flagged": pl.Boolean},
    ).with_columns(
        pl.col("ratio").map_elements(lambda r: "inf" if math.isinf(r) else f"{r:.{RATIO_DECIMALS}f}",
                                     return_dtype=pl.Utf8)
    ).write_csv(_path(path))


def read_verdicts(path) -> list[LineVerdict]:
    df = _read_csv(path, schema={"line_id": pl.Int64, "ntl_kwh": pl.Float64, "technical_kwh": pl.Float64,
                                 "ratio": pl.Float64, "flagged": pl.Boolean})
    return [LineVerdict(r["line_id"], r["ntl_kwh"], r["technical_kwh"], r["ratio"], r["flagged"])
            for r in df.iter_rows(named=True)]


# -- mining -------------------------------------------------------------------------


def write_reduced(path, row_ids: Sequence[str], scores: np.ndarray) -> None:
    scores = np.asarray(scores, dtype=float).reshape(len(row_ids), -1)
    cols = {"consumer_id": pl.Series(list(row_ids), dtype=pl.Utf8)}
    for j in range(scores.shape[1]):
        cols[f"pc{j + 1}"] = scores[:, j]
    pl.DataFrame(cols).write_csv(_path(path))


def read_reduced(path) -> tuple[list[str], np.ndarray]:
    df = _read_csv(path, infer_schema_length=0)
    ids = df["consumer_id"].to_list()
    pcs = [c for c in df.columns if c != "consumer_id"]
    scores = df.select([pl.col(c).cast(pl.Float64) for c in pcs]).to_numpy() if pcs else np.zeros((len(ids), 0))
    return ids, scores


def write_clusters(path, reports: Mapping[str, ClusterReport]) -> None:
    ids, algos, labels, suspect = [], [], [], []
    for algo, rep in reports.items():
        mask = rep.suspect_mask
        ids += list(rep.row_ids)
        algos += [algo] * len(rep.row_ids)
        labels += [int(x) for x in rep.labels]
        suspect += [bool(x) for x in mask]
    pl.DataFrame(
        {"consumer_id": ids, "algorithm": algos, "cluster": labels, "suspect": suspect},
        schema={"consumer_id": pl.Utf8, "algorithm": pl.Utf8, "cluster": pl.Int64, "suspect": pl.Boolean},
    ).write_csv(_path(path))


def read_clusters(path) -> dict[str, dict[str, tuple[int, bool]]]:
    """algorithm -> consumer id -> (cluster, suspect)."""
    df = _read_csv(path, schema={"consumer_id": pl.Utf8, "algorithm": pl.Utf8, "cluster": pl.Int64, "suspect": pl.Boolean})
    out: dict[str, dict[str, tuple[int, bool]]] = {}
    for r in df.iter_rows(named=True):
        out.setdefault(r["algorithm"], {})[r["consumer_id"]] = (r["cluster"], r["suspect"])
    return out


def write_id_list(path, ids: Iterable[str], column: str = "consumer_id") -> None:
    pl.DataFrame({column: list(ids)}, schema={column: pl.Utf8}).write_csv(_path(path))


def read_id_list(path, column: str = "consumer_id") -> list[str]:
    return _read_csv(path, schema={column: pl.Utf8})[column].to_list()


def write_rows(path, rows: Sequence[Mapping], schema: Mapping[str, pl.DataType],
               decimals: Mapping[str, int] | None = None) -> None:
    """Generic table writer; ``decimals`` fixes the precision of selected float columns."""
    df = pl.DataFrame({k: [r[k] for r in rows] for k in schema}, schema=dict(schema))
    for col, d in (decimals or {}).items():
        df = df.with_columns(
            pl.col(col).map_elements(lambda v, d=d: "nan" if v is None or math.isnan(v) else f"{v:.{d}f}",
                                     return_dtype=pl.Utf8)
        )
    df.write_csv(_path(path))
