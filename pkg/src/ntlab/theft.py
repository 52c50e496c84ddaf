"""Power-theft injection.

Four kinds of theft are modelled:

1. the meter is bypassed completely and reads zero;
2. the meter is partly bypassed and reads a fraction ``1 - theta`` of the load;
3. an unmetered household is connected illegally to a line;
4. the metered consumption jumps by ``rho`` from ``onset_day`` on.

Kinds 1-3 create non-technical losses on the line.  Kind 4 does not (the meter
records everything) and can only be caught from the consumption pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .feeder import FeederTopology
from .profilegen import (
    DEFAULT_APPLIANCES,
    DEFAULT_SCENARIOS,
    FREQUENT_SCENARIOS,
    KW_DECIMALS,
    SLOTS_PER_DAY,
    ApplianceSpec,
    HorizonCalendar,
    LoadProfile,
    consumer_seed,
    generate_residential,
)

DEFAULT_ONSET_DAY = 60
SEVERITY_GRID = tuple(round(0.1 * i, 2) for i in range(1, 10))


class TheftError(ValueError):
    pass


@dataclass(frozen=True)
class TheftAssignment:
    consumer_id: str
    scenario: int
    theta: float = 0.0
    rho: float = 0.0
    onset_day: int = DEFAULT_ONSET_DAY
    host: str | None = None  # scenario 3: tap shared with this consumer

    def validate(self, n_days: int = 183) -> None:
        if self.scenario not in (1, 2, 3, 4):
            raise TheftError(f"{self.consumer_id}: unknown theft scenario {self.scenario}")
        if self.scenario == 2 and not 0.0 < self.theta < 1.0:
            raise TheftError(f"{self.consumer_id}: theta must lie in (0, 1), got {self.theta}")
        if self.scenario == 4 and not self.rho > 0.0:
            raise TheftError(f"{self.consumer_id}: rho must be > 0, got {self.rho}")
        if not 0 <= self.onset_day < n_days:
            raise TheftError(f"{self.consumer_id}: onset_day {self.onset_day} outside [0, {n_days})")


@dataclass
class GroundTruth:
    consumer_labels: dict[str, int | None]  # None = honest, otherwise theft scenario
    assignments: list[TheftAssignment] = field(default_factory=list)

    def thieves(self, scenario: int | None = None) -> set[str]:
        return {
            c for c, s in self.consumer_labels.items()
            if s is not None and (scenario is None or s == scenario)
        }

    def line_labels(self, topology: FeederTopology) -> list[bool]:
        """True for a line hosting a thief of scenario 1, 2 or 3."""
        loss_making = {c for c, s in self.consumer_labels.items() if s in (1, 2, 3)}
        return [bool(loss_making & set(line.consumers)) for line in topology.lines]


def _q(values: np.ndarray) -> np.ndarray:
    return np.round(values, KW_DECIMALS) + 0.0


def inject(
    population: Sequence[LoadProfile],
    assignments: Sequence[TheftAssignment],
    rng_seed: int = 0,
    calendar: HorizonCalendar | None = None,
    appliances: Sequence[ApplianceSpec] = DEFAULT_APPLIANCES,
    topology: FeederTopology | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], GroundTruth]:
    """Apply theft assignments to a population.

    Returns flat (n_slots,) kW series keyed by consumer id: what every
    consumer actually draws, what the meters record, and the labels.  When a
    ``topology`` is given, scenario-3 households are attached to it in place
    (next to their ``host``, or next to a random metered consumer).
    """
    calendar = calendar or HorizonCalendar()
    by_id = {p.consumer_id: p for p in population}
    actual = {cid: p.flat.copy() for cid, p in by_id.items()}
    metered = {cid: p.flat.copy() for cid, p in by_id.items()}
    labels: dict[str, int | None] = {cid: None for cid in by_id}
    rng = np.random.default_rng(consumer_seed(rng_seed, 0, salt=11))

    seen: set[str] = set()
    resolved = []
    for k, a in enumerate(assignments):
        a.validate(calendar.n_days)
        if a.consumer_id in seen:
            raise TheftError(f"duplicate assignment for {a.consumer_id}")
        seen.add(a.consumer_id)
        if a.scenario == 3:
            if a.consumer_id in by_id:
                raise TheftError(f"{a.consumer_id}: scenario 3 needs a fresh consumer id")
            sid = int(rng.choice(FREQUENT_SCENARIOS))
            profile = generate_residential(
                DEFAULT_SCENARIOS[sid], appliances, calendar,
                rng_seed=consumer_seed(rng_seed, k, salt=12), consumer_id=a.consumer_id,
            )
            actual[a.consumer_id] = profile.flat.copy()
            host = a.host
            if host is None:
                host = str(rng.choice(sorted(by_id))) if by_id else None
            if host is not None and host not in by_id:
                raise TheftError(f"{a.consumer_id}: host {host} is not in the population")
            if topology is not None:
                if host is None:
                    raise TheftError(f"{a.consumer_id}: no host to connect the illegal line to")
                topology.attach(a.consumer_id, host)
            a = TheftAssignment(a.consumer_id, 3, host=host, onset_day=a.onset_day)
        else:
            if a.consumer_id not in by_id:
                raise TheftError(f"{a.consumer_id}: no such consumer")
            base = by_id[a.consumer_id].flat
            if a.scenario == 1:
                metered[a.consumer_id] = np.zeros_like(base)
            elif a.scenario == 2:
                metered[a.consumer_id] = _q((1.0 - a.theta) * base)
            else:
                start = a.onset_day * SLOTS_PER_DAY
                boosted = base.copy()
                boosted[start:] = _q(base[start:] * (1.0 + a.rho))
                actual[a.consumer_id] = boosted
                metered[a.consumer_id] = boosted.copy()
        labels[a.consumer_id] = a.scenario
        resolved.append(a)

    return actual, metered, GroundTruth(labels, resolved)


def draw_assignments(
    candidates: Sequence[str],
    scenario: int,
    count: int,
    severity: float = 0.0,
    rng_seed: int = 0,
    onset_day: int = DEFAULT_ONSET_DAY,
    hosts: Sequence[str] | None = None,
) -> list[TheftAssignment]:
    """Pick ``count`` thieves among ``candidates`` (or new ids for scenario 3)."""
    rng = np.random.default_rng(consumer_seed(rng_seed, scenario, salt=13))
    if scenario == 3:
        pool = list(hosts if hosts is not None else candidates)
        return [
            TheftAssignment(f"U{i:04d}", 3, host=str(rng.choice(pool)) if pool else None)
            for i in range(count)
        ]
    if count > len(candidates):
        raise TheftError(f"asked for {count} thieves among {len(candidates)} candidates")
    picked = sorted(rng.choice(len(candidates), size=count, replace=False).tolist())
    theta = severity if scenario == 2 else 0.0
    rho = severity if scenario == 4 else 0.0
    return [
        TheftAssignment(candidates[i], scenario, theta=theta, rho=rho, onset_day=onset_day)
        for i in picked
    ]


def residential_candidates(population: Sequence[LoadProfile], scenarios: Sequence[int] = FREQUENT_SCENARIOS) -> list[str]:
    return [p.consumer_id for p in population if p.kind == "residential" and p.scenario_id in scenarios]


def stolen_energy(actual: Mapping[str, np.ndarray], metered: Mapping[str, np.ndarray], consumer_id: str) -> float:
    """kWh taken without being recorded over the horizon."""
    m = metered.get(consumer_id)
    a = np.asarray(actual[consumer_id])
    return float((a - (0 if m is None else m)).sum() / 4.0)
