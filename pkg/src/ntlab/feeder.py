"""Radial low-voltage feeder: technical losses and meter readings.

Each line is a chain of taps fed from the head.  A tap is reached through its
own line segment, and every consumer hangs off exactly one tap.  The power
flow uses the nominal-voltage approximation at unity power factor: the current
in a segment is the sum of the actual power drawn downstream divided by the
nominal voltage, and the segment dissipates I^2 R.  The head-end sum meter
reads the actual consumption plus those losses.

The technical losses entered in the loss ledger are what the utility can
compute: the same power flow driven by the metered loads.  Energy that is
taken without being metered therefore shows up as non-technical loss together
with the extra I^2 R it causes, and a line without theft balances exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

SLOT_HOURS = 0.25
R_ACSR50 = 0.381  # ohm / km
X_ACSR50 = 0.294  # ohm / km
V_NOMINAL = 230.0


class FeederError(ValueError):
    pass


@dataclass(frozen=True)
class LineSegment:
    length: float  # m
    r_per_km: float = R_ACSR50
    x_per_km: float = X_ACSR50

    def __post_init__(self):
        if not self.length > 0:
            raise FeederError(f"segment length must be > 0, got {self.length}")
        if self.r_per_km < 0 or self.x_per_km < 0:
            raise FeederError("segment impedance must be >= 0")

    @property
    def resistance(self) -> float:
        return self.r_per_km * self.length / 1000.0


@dataclass
class Tap:
    segment: LineSegment
    consumers: list[str]


@dataclass
class Line:
    taps: list[Tap]

    @property
    def consumers(self) -> list[str]:
        return [c for tap in self.taps for c in tap.consumers]

    @property
    def length(self) -> float:
        return sum(t.segment.length for t in self.taps)


@dataclass
class FeederTopology:
    lines: list[Line]
    v_nominal: float = V_NOMINAL

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, line in enumerate(self.lines):
            for cid in line.consumers:
                if cid in seen:
                    raise FeederError(f"consumer {cid} appears on more than one tap")
                seen[cid] = i
        if not self.v_nominal > 0:
            raise FeederError("nominal voltage must be > 0")

    def line_of(self, consumer_id: str) -> int:
        for i, line in enumerate(self.lines):
            if consumer_id in line.consumers:
                return i
        raise KeyError(consumer_id)

    @property
    def consumers(self) -> list[str]:
        return [c for line in self.lines for c in line.consumers]

    def attach(self, consumer_id: str, host: str) -> None:
        """Connect ``consumer_id`` at the same tap as ``host``."""
        for line in self.lines:
            for tap in line.taps:
                if host in tap.consumers:
                    if consumer_id in self.consumers:
                        raise FeederError(f"consumer {consumer_id} already on the feeder")
                    tap.consumers.append(consumer_id)
                    return
        raise FeederError(f"host consumer {host} not on the feeder")


@dataclass
class LineTelemetry:
    """Per-slot energies of one line, all in kWh.

    ``consumers_kwh`` is the sum of the smart-meter readings on the line;
    ``consumer_meters`` keeps the individual readings when they are known.
    ``technical_losses`` is the loss estimate computed from metered loads,
    ``physical_losses`` the I^2 R actually dissipated (simulation only).
    """

    sum_meter: np.ndarray
    consumers_kwh: np.ndarray
    technical_losses: np.ndarray
    consumer_meters: dict[str, np.ndarray] = field(default_factory=dict)
    physical_losses: np.ndarray | None = None
    total_losses: np.ndarray = field(init=False)
    ntl: np.ndarray = field(init=False)

    def __post_init__(self):
        self.total_losses = self.sum_meter - self.consumers_kwh
        self.ntl = self.total_losses - self.technical_losses


@dataclass
class FeederTelemetry:
    lines: list[LineTelemetry]

    @property
    def n_slots(self) -> int:
        return len(self.lines[0].sum_meter) if self.lines else 0


def _sum_series(series, shape) -> np.ndarray:
    total = np.zeros(shape)
    for s in series:
        total = total + s
    return total


def _tap_loads(line: Line, loads: Mapping[str, np.ndarray], n_slots: int) -> list[np.ndarray]:
    """Total kW drawn at every tap; consumers missing from ``loads`` count as zero."""
    out = []
    for tap in line.taps:
        p = np.zeros(n_slots)
        for cid in tap.consumers:
            if cid in loads:
                p = p + np.asarray(loads[cid], dtype=float).reshape(-1)
        out.append(p)
    return out


def _line_losses(line: Line, tap_kw: Sequence[np.ndarray], v_nominal: float, n_slots: int) -> np.ndarray:
    """I^2 R in kW; the current through a segment carries every tap at or beyond it."""
    loss = np.zeros(n_slots)
    downstream = np.zeros(n_slots)
    for tap, p in zip(reversed(line.taps), reversed(tap_kw)):
        downstream = downstream + p
        amps = downstream * 1000.0 / v_nominal
        loss = loss + amps * amps * tap.segment.resistance / 1000.0
    return loss


def default_topology(
    population: Sequence[str],
    lines: int = 1,
    rng_seed: int = 0,
    length_range: tuple[float, float] = (250.0, 300.0),
    r_per_km: float = R_ACSR50,
    x_per_km: float = X_ACSR50,
    v_nominal: float = V_NOMINAL,
) -> FeederTopology:
    """Round-robin consumers over ``lines``; one evenly spaced tap per consumer."""
    if lines < 1:
        raise FeederError("need at least one line")
    if not population:
        raise FeederError("no consumers to connect")
    rng = np.random.default_rng(rng_seed)
    members: list[list[str]] = [[] for _ in range(lines)]
    for i, cid in enumerate(population):
        members[i % lines].append(cid)
    out = []
    for ids in members:
        length = float(rng.uniform(*length_range))
        if not ids:
            out.append(Line(taps=[]))
            continue
        step = length / len(ids)
        out.append(Line(taps=[Tap(LineSegment(step, r_per_km, x_per_km), [cid]) for cid in ids]))
    return FeederTopology(out, v_nominal=v_nominal)


def simulate(
    topology: FeederTopology,
    actual_loads: Mapping[str, np.ndarray],
    metered_loads: Mapping[str, np.ndarray],
    loss_noise: float = 0.0,
    rng_seed: int = 0,
) -> FeederTelemetry:
    """Meter readings and losses for every line and slot.

    ``actual_loads`` holds what each consumer really draws (kW per slot) and
    must cover every consumer on the feeder; ``metered_loads`` holds what the
    smart meters record and omits unmetered connections.  ``loss_noise`` > 0
    multiplies the reported technical losses by a uniform factor in
    1 +/- loss_noise, emulating an imperfect loss calculation.
    """
    consumers = topology.consumers
    missing = [c for c in consumers if c not in actual_loads]
    if missing:
        raise FeederError(f"no actual load series for {missing[:5]}")
    lengths = {np.asarray(actual_loads[c]).size for c in consumers}
    lengths |= {np.asarray(v).size for v in metered_loads.values()}
    if len(lengths) > 1:
        raise FeederError(f"series lengths differ: {sorted(lengths)}")
    n_slots = lengths.pop() if lengths else 0
    unknown = [c for c in metered_loads if c not in set(consumers)]
    if unknown:
        raise FeederError(f"metered series for consumers not on the feeder: {unknown[:5]}")
    rng = np.random.default_rng(rng_seed)

    out = []
    for line in topology.lines:
        actual_kw = _tap_loads(line, actual_loads, n_slots)
        actual_total = _sum_series(actual_kw, (n_slots,))
        physical = _line_losses(line, actual_kw, topology.v_nominal, n_slots) * SLOT_HOURS
        sum_meter = actual_total * SLOT_HOURS + physical
        metered_kw = _tap_loads(line, metered_loads, n_slots)
        technical = _line_losses(line, metered_kw, topology.v_nominal, n_slots) * SLOT_HOURS
        if loss_noise > 0:
            technical = technical * (1.0 + rng.uniform(-loss_noise, loss_noise, n_slots))
        meters = {
            cid: np.asarray(metered_loads[cid], dtype=float).reshape(-1) * SLOT_HOURS
            for cid in line.consumers
            if cid in metered_loads
        }
        out.append(
            LineTelemetry(
                sum_meter=sum_meter,
                consumers_kwh=_sum_series(meters.values(), (n_slots,)),
                technical_losses=technical,
                consumer_meters=meters,
                physical_losses=physical,
            )
        )
    return FeederTelemetry(out)
