"""Synthetic 15-minute load profiles for residential and commercial consumers.

Every profile covers a 183-day horizon (April 1 to September 30) at 96 slots
per day.  A slot stores the average active power over its 15 minutes in kW, so
the energy of a slot is ``value / 4`` kWh.  Values are quantized to 4 decimals
at generation time so that CSV export is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

N_DAYS = 183
SLOTS_PER_DAY = 96
N_SLOTS = N_DAYS * SLOTS_PER_DAY
KW_DECIMALS = 4

CATEGORIES = (
    "personal_hygiene",
    "food_preparation",
    "watching_tv",
    "heat_cooling",
    "household_chores",
    "study",
    "base_load",
    "lighting",
)

WEEKDAY, WEEKEND, HOLIDAY = "weekday", "weekend", "holiday"


def slot(hour: int, minute: int = 0) -> int:
    return hour * 4 + minute // 15


@dataclass(frozen=True)
class ApplianceSpec:
    name: str
    category: str
    rated_power: float
    usage_windows: tuple[tuple[int, int], ...]
    duty_jitter: float = 0.15
    seasonal: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown load category {self.category!r} for {self.name}")
        # zero disables an appliance without removing it from a catalogue
        if self.rated_power < 0:
            raise ValueError(f"{self.name}: rated_power must be >= 0")
        if not 0.0 <= self.duty_jitter <= 1.0:
            raise ValueError(f"{self.name}: duty_jitter must lie in [0, 1]")
        for start, end in self.usage_windows:
            if not (0 <= start < end <= SLOTS_PER_DAY):
                raise ValueError(f"{self.name}: usage window ({start}, {end}) outside [0, 96)")
        object.__setattr__(self, "usage_windows", tuple(tuple(w) for w in self.usage_windows))

    @property
    def is_base(self) -> bool:
        return self.category == "base_load"


@dataclass(frozen=True)
class ScenarioSpec:
    """Presence pattern of a household; absence windows are (start, end) slots."""

    id: int
    absence_windows: tuple[tuple[int, int], ...]
    weekend_variant: tuple[tuple[int, int], ...]
    description: str = ""

    def __post_init__(self):
        if self.id not in range(1, 8):
            raise ValueError(f"unknown scenario id {self.id}; expected 1-7")
        if self.id == 4 and self.absence_windows:
            raise ValueError("scenario 4 is full presence and takes no absence windows")


@dataclass(frozen=True)
class HorizonCalendar:
    """Day tags for the horizon.  Day 0 is April 1; ``start_weekday`` 0 is Monday."""

    n_days: int = N_DAYS
    start_weekday: int = 0
    public_holidays: tuple[int, ...] = ()
    cooling_window: tuple[int, int] = (90, 150)
    cooling_taper: tuple[int, int] = (150, 183)
    cooling_uplift: float = 1.4
    taper_end_factor: float = 1.1
    holiday_window: tuple[int, int] = (60, 90)

    def __post_init__(self):
        if not 0 <= self.start_weekday < 7:
            raise ValueError("start_weekday must be in 0..6")
        for d in self.public_holidays:
            if not 0 <= d < self.n_days:
                raise ValueError(f"public holiday day {d} outside horizon")

    @property
    def day_type(self) -> tuple[str, ...]:
        holidays = set(self.public_holidays)
        tags = []
        for d in range(self.n_days):
            if d in holidays:
                tags.append(HOLIDAY)
            elif (self.start_weekday + d) % 7 >= 5:
                tags.append(WEEKEND)
            else:
                tags.append(WEEKDAY)
        return tuple(tags)

    def weekday_mask(self) -> np.ndarray:
        return np.array([t == WEEKDAY for t in self.day_type])

    def weekend_mask(self) -> np.ndarray:
        return np.array([t == WEEKEND for t in self.day_type])

    def cooling_factor(self) -> np.ndarray:
        """Per-day multiplier on cooling appliances."""
        f = np.ones(self.n_days)
        a, b = self.cooling_window
        f[a:b] = self.cooling_uplift
        t0, t1 = self.cooling_taper
        if t1 > t0:
            days = np.arange(t0, min(t1, self.n_days))
            frac = (days - t0) / max(t1 - t0 - 1, 1)
            f[days] = self.cooling_uplift + (self.taper_end_factor - self.cooling_uplift) * frac
        return f


@dataclass
class LoadProfile:
    consumer_id: str
    kind: str  # "residential" | "commercial"
    values: np.ndarray  # (n_days, 96) kW
    scenario_id: int | None = None
    business: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("residential", "commercial"):
            raise ValueError(f"unknown consumer class {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != SLOTS_PER_DAY:
            raise ValueError(f"profile grid must be (days, 96), got {self.values.shape}")

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def energy_kwh(self) -> float:
        return float(self.values.sum() / 4.0)


def _w(*pairs: tuple[str, str]) -> tuple[tuple[int, int], ...]:
    out = []
    for a, b in pairs:
        ha, ma = map(int, a.split(":"))
        hb, mb = map(int, b.split(":"))
        out.append((slot(ha, ma), slot(hb, mb) if hb < 24 else SLOTS_PER_DAY))
    return tuple(out)


DEFAULT_APPLIANCES: tuple[ApplianceSpec, ...] = (
    ApplianceSpec("refrigerator_freezer", "base_load", 0.15, _w(("00:00", "24:00")), duty_jitter=0.0),
    ApplianceSpec("water_heater", "personal_hygiene", 4.0, _w(("06:30", "07:30"), ("21:00", "22:00"))),
    ApplianceSpec("hair_dryer", "personal_hygiene", 1.2, _w(("07:30", "07:45"))),
    ApplianceSpec("electric_oven", "food_preparation", 2.0, _w(("12:00", "13:00"), ("19:00", "20:00"))),
    ApplianceSpec("microwave", "food_preparation", 0.9, _w(("07:45", "08:00"), ("16:00", "16:30"))),
    ApplianceSpec("television", "watching_tv", 0.12, _w(("10:00", "12:00"), ("14:00", "16:00"), ("20:00", "23:30"))),
    ApplianceSpec("heat_pump", "heat_cooling", 1.5, _w(("11:00", "23:00")), seasonal=True),
    ApplianceSpec("electric_heating", "heat_cooling", 0.6, _w(("06:00", "08:00"))),
    ApplianceSpec("vacuum_cleaner", "household_chores", 0.8, _w(("10:00", "10:30"))),
    ApplianceSpec("dishwasher", "household_chores", 1.2, _w(("20:30", "21:30"))),
    ApplianceSpec("washing_machine", "household_chores", 0.5, _w(("09:30", "11:00"))),
    ApplianceSpec("computer", "study", 0.15, _w(("10:00", "13:00"), ("14:00", "18:00"), ("21:00", "23:00"))),
    ApplianceSpec("electric_lamps", "lighting", 0.2, _w(("06:00", "08:00"), ("19:30", "23:30"))),
)

_WEEKEND_OUTING = _w(("11:00", "15:00"))

DEFAULT_SCENARIOS: dict[int, ScenarioSpec] = {
    1: ScenarioSpec(1, _w(("09:00", "13:00")), _WEEKEND_OUTING, "absent 09:00-13:00"),
    2: ScenarioSpec(2, _w(("09:00", "18:00")), _WEEKEND_OUTING, "absent 09:00-18:00"),
    3: ScenarioSpec(3, _w(("09:00", "16:00")), _WEEKEND_OUTING, "absent 09:00-16:00"),
    4: ScenarioSpec(4, (), (), "full presence"),
    5: ScenarioSpec(5, _w(("13:00", "18:00")), _WEEKEND_OUTING, "absent 13:00-18:00"),
    6: ScenarioSpec(6, _w(("00:00", "24:00")), (), "absent on weekdays, present on weekends"),
    7: ScenarioSpec(7, _w(("00:00", "24:00")), _w(("00:00", "24:00")), "absent except a holiday week"),
}

FREQUENT_SCENARIOS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class BusinessSpec:
    name: str
    open_windows: tuple[tuple[int, int], ...]
    open_weekdays: tuple[int, ...]  # 0 = Monday
    appliances: tuple[ApplianceSpec, ...]


DEFAULT_BUSINESSES: dict[str, BusinessSpec] = {
    "restaurant": BusinessSpec(
        "restaurant",
        _w(("11:00", "24:00")),
        (0, 1, 2, 3, 4, 5, 6),
        (
            ApplianceSpec("cold_storage", "base_load", 2.0, _w(("00:00", "24:00")), duty_jitter=0.0),
            ApplianceSpec("kitchen", "food_preparation", 8.0, _w(("12:00", "15:00"), ("19:00", "23:00"))),
            ApplianceSpec("dishwashing", "household_chores", 3.0, _w(("15:00", "16:00"), ("22:30", "24:00"))),
            ApplianceSpec("air_conditioning", "heat_cooling", 6.0, _w(("12:00", "24:00")), seasonal=True),
            ApplianceSpec("lighting", "lighting", 1.5, _w(("11:00", "24:00"))),
        ),
    ),
    "office": BusinessSpec(
        "office",
        _w(("08:00", "17:00")),
        (0, 1, 2, 3, 4),
        (
            ApplianceSpec("servers", "base_load", 0.8, _w(("00:00", "24:00")), duty_jitter=0.0),
            ApplianceSpec("workstations", "study", 3.0, _w(("08:30", "17:00"))),
            ApplianceSpec("air_conditioning", "heat_cooling", 5.0, _w(("08:00", "17:00")), seasonal=True),
            ApplianceSpec("lighting", "lighting", 2.0, _w(("08:00", "17:00"))),
        ),
    ),
    "retail": BusinessSpec(
        "retail",
        _w(("09:00", "21:00")),
        (0, 1, 2, 3, 4, 5),
        (
            ApplianceSpec("refrigerated_display", "base_load", 1.0, _w(("00:00", "24:00")), duty_jitter=0.0),
            ApplianceSpec("air_conditioning", "heat_cooling", 5.0, _w(("09:00", "21:00")), seasonal=True),
            ApplianceSpec("lighting", "lighting", 3.0, _w(("09:00", "21:00"))),
            ApplianceSpec("tills_and_signage", "study", 0.6, _w(("09:00", "21:00"))),
        ),
    ),
}


def _window_mask(windows: Sequence[tuple[int, int]]) -> np.ndarray:
    mask = np.zeros(SLOTS_PER_DAY, dtype=bool)
    for a, b in windows:
        mask[a:b] = True
    return mask


@dataclass(frozen=True)
class JitterModel:
    """How much a household's days differ from its template.

    ``day_*`` terms are redrawn every day; ``consumer_*`` terms are drawn once
    per household and give it an individual pattern.  Edge offsets are in
    slots and may be fractional: a partly covered slot gets the average power.
    """

    day_magnitude: float = 0.15
    day_edge: float = 2.0
    consumer_magnitude: float = 0.0
    consumer_edge: float = 0.0

    def __post_init__(self):
        for name in ("day_magnitude", "day_edge", "consumer_magnitude", "consumer_edge"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


DEFAULT_JITTER = JitterModel(day_magnitude=0.15, day_edge=0.5, consumer_magnitude=0.1, consumer_edge=0.5)


def _appliance_power(
    app: ApplianceSpec,
    presence: np.ndarray,
    season: np.ndarray,
    rng: np.random.Generator,
    jitter: JitterModel,
) -> np.ndarray:
    """Per-day appliance power grid (n_days, 96), gated by ``presence``."""
    n_days = presence.shape[0]
    lower = np.arange(SLOTS_PER_DAY)
    jitters = app.duty_jitter > 0
    # jitter magnitudes scale with the appliance's own duty_jitter
    rel = app.duty_jitter / 0.15 if jitters else 0.0
    cover = np.zeros((n_days, SLOTS_PER_DAY))
    for a, b in app.usage_windows:
        start = np.full(n_days, float(a))
        end = np.full(n_days, float(b))
        if jitters:
            ce = jitter.consumer_edge * rel
            de = jitter.day_edge * rel
            start += rng.uniform(-ce, ce) + rng.uniform(-de, de, n_days)
            end += rng.uniform(-ce, ce) + rng.uniform(-de, de, n_days)
        start = np.clip(start, 0.0, SLOTS_PER_DAY - 0.25)
        end = np.clip(end, start + 0.25, SLOTS_PER_DAY)
        cover += np.clip(np.minimum(end[:, None], lower + 1) - np.maximum(start[:, None], lower), 0.0, 1.0)
    cover = np.minimum(cover, 1.0)
    scale = np.ones(n_days)
    if jitters:
        cm = jitter.consumer_magnitude * rel
        dm = jitter.day_magnitude * rel
        scale = scale * (1.0 + rng.uniform(-cm, cm)) * (1.0 + rng.uniform(-dm, dm, n_days))
    if app.seasonal:
        scale = scale * season
    if not app.is_base:
        cover = cover * presence
    return cover * (app.rated_power * scale)[:, None]


def _presence_grid(scenario: ScenarioSpec, calendar: HorizonCalendar) -> np.ndarray:
    weekday = ~_window_mask(scenario.absence_windows)
    weekend = ~_window_mask(scenario.weekend_variant)
    is_weekend = calendar.weekend_mask()
    return np.where(is_weekend[:, None], weekend[None, :], weekday[None, :])


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(values, KW_DECIMALS) + 0.0


def generate_residential(
    scenario: ScenarioSpec | int,
    appliances: Sequence[ApplianceSpec] = DEFAULT_APPLIANCES,
    calendar: HorizonCalendar | None = None,
    rng_seed: int = 0,
    consumer_id: str = "R0000",
    jitter: JitterModel = DEFAULT_JITTER,
) -> LoadProfile:
    """Build one household profile.

    Base-load appliances always run.  Everything else runs inside its usage
    windows only while somebody is home; on weekends the scenario's weekend
    variant decides presence.  One holiday of 5 to 15 days leaves only the base
    load running (scenarios 1-6); scenario 7 is instead present for a single
    random week.
    """
    if isinstance(scenario, int):
        if scenario not in DEFAULT_SCENARIOS:
            raise ValueError(f"unknown scenario id {scenario}; expected 1-7")
        scenario = DEFAULT_SCENARIOS[scenario]
    if not appliances:
        raise ValueError("appliance list is empty")
    calendar = calendar or HorizonCalendar()
    rng = np.random.default_rng(rng_seed)

    presence = _presence_grid(scenario, calendar)
    n_days = calendar.n_days
    lo, hi = calendar.holiday_window
    if scenario.id == 7:
        # present for one random week, otherwise away
        start = int(rng.integers(0, n_days - 7 + 1))
        presence = np.zeros_like(presence)
        presence[start:start + 7] = True
        holiday = (start, start + 7)
    else:
        length = int(rng.integers(5, 16))
        start = int(rng.integers(lo, max(lo, hi - length) + 1))
        start = min(start, n_days - length)
        presence[start:start + length] = False
        holiday = (start, start + length)

    season = calendar.cooling_factor()
    values = np.zeros((n_days, SLOTS_PER_DAY))
    for app in appliances:
        values += _appliance_power(app, presence, season, rng, jitter)
    return LoadProfile(
        consumer_id,
        "residential",
        _quantize(values),
        scenario_id=scenario.id,
        meta={"holiday": holiday},
    )


def generate_commercial(
    business: str,
    calendar: HorizonCalendar | None = None,
    rng_seed: int = 0,
    consumer_id: str = "C0000",
    catalogue: Mapping[str, BusinessSpec] | None = None,
    jitter: JitterModel = DEFAULT_JITTER,
) -> LoadProfile:
    catalogue = DEFAULT_BUSINESSES if catalogue is None else catalogue
    if not catalogue:
        raise ValueError("business catalogue is empty")
    if business not in catalogue:
        raise ValueError(f"unknown business {business!r}; known: {sorted(catalogue)}")
    spec = catalogue[business]
    calendar = calendar or HorizonCalendar()
    rng = np.random.default_rng(rng_seed)

    weekday_of = (calendar.start_weekday + np.arange(calendar.n_days)) % 7
    open_day = np.isin(weekday_of, spec.open_weekdays)
    open_day &= np.array([t != HOLIDAY for t in calendar.day_type])
    presence = open_day[:, None] & _window_mask(spec.open_windows)[None, :]

    season = calendar.cooling_factor()
    values = np.zeros((calendar.n_days, SLOTS_PER_DAY))
    for app in spec.appliances:
        values += _appliance_power(app, presence, season, rng, jitter)
    return LoadProfile(consumer_id, "commercial", _quantize(values), business=business)


def consumer_seed(master_seed: int, index: int, salt: int = 0) -> int:
    """Seed for one consumer, independent of generation order."""
    ss = np.random.SeedSequence([int(master_seed), int(salt), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_population(
    n_residential: int,
    n_commercial: int,
    scenario_mix: Sequence[float] | Mapping[int, float] | None = None,
    rng_seed: int = 0,
    calendar: HorizonCalendar | None = None,
    appliances: Sequence[ApplianceSpec] = DEFAULT_APPLIANCES,
    scenarios: Mapping[int, ScenarioSpec] | None = None,
    businesses: Mapping[str, BusinessSpec] | None = None,
    jitter: JitterModel = DEFAULT_JITTER,
) -> list[LoadProfile]:
    """Residential consumers first (``R0000``...), then commercial (``C0000``...)."""
    if n_residential < 0 or n_commercial < 0:
        raise ValueError("consumer counts must be >= 0")
    weights = _mix_weights(scenario_mix)
    scenarios = DEFAULT_SCENARIOS if scenarios is None else scenarios
    businesses = DEFAULT_BUSINESSES if businesses is None else businesses
    calendar = calendar or HorizonCalendar()

    rng = np.random.default_rng(consumer_seed(rng_seed, 0, salt=1))
    ids = np.arange(1, 8)
    drawn = rng.choice(ids, size=n_residential, p=weights / weights.sum())
    names = sorted(businesses)
    if n_commercial and not names:
        raise ValueError("business catalogue is empty")
    kinds = rng.integers(0, max(len(names), 1), size=n_commercial)

    population = []
    for i, sid in enumerate(drawn):
        population.append(
            generate_residential(
                scenarios[int(sid)], appliances, calendar,
                rng_seed=consumer_seed(rng_seed, i, salt=2), consumer_id=f"R{i:04d}", jitter=jitter,
            )
        )
    for i, k in enumerate(kinds):
        population.append(
            generate_commercial(
                names[int(k)], calendar, rng_seed=consumer_seed(rng_seed, i, salt=3),
                consumer_id=f"C{i:04d}", catalogue=businesses, jitter=jitter,
            )
        )
    return population


def _mix_weights(scenario_mix) -> np.ndarray:
    if scenario_mix is None:
        w = np.ones(7)
    elif isinstance(scenario_mix, Mapping):
        w = np.zeros(7)
        for k, v in scenario_mix.items():
            if int(k) not in range(1, 8):
                raise ValueError(f"scenario mix names unknown scenario {k}")
            w[int(k) - 1] = float(v)
    else:
        w = np.asarray(scenario_mix, dtype=float)
        if w.shape != (7,):
            raise ValueError("scenario mix needs exactly 7 weights")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("scenario weights must be non-negative")
    if w.sum() <= 0:
        raise ValueError("scenario weights are all zero")
    return w
