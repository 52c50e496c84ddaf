"""Line-level screening for non-technical losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .feeder import FeederTelemetry

DEFAULT_NOISE_FLOOR = 0.10


@dataclass(frozen=True)
class LineVerdict:
    line_id: int
    ntl_energy_total: float  # kWh, clipped at 0
    technical_energy_total: float  # kWh
    ratio: float  # ntl / technical, inf when technical is 0 and ntl > 0
    flagged: bool


def scan_lines(telemetry: FeederTelemetry, noise_floor: float = DEFAULT_NOISE_FLOOR) -> list[LineVerdict]:
    """Flag lines whose horizon NTL exceeds ``noise_floor`` times their technical losses.

    The comparison is strict, so NTL of exactly the noise floor is not
    flagged.  Verdicts come back sorted by descending ratio (ties by line id).
    """
    if not 0.0 <= noise_floor < 1.0:
        raise ValueError(f"noise_floor must lie in [0, 1), got {noise_floor}")
    verdicts = []
    for i, line in enumerate(telemetry.lines):
        ntl = max(float(np.sum(line.ntl)), 0.0)
        tech = float(np.sum(line.technical_losses))
        if tech > 0:
            ratio = ntl / tech
        else:
            ratio = math.inf if ntl > 0 else 0.0
        verdicts.append(LineVerdict(i, ntl, tech, ratio, ratio > noise_floor))
    verdicts.sort(key=lambda v: (-v.ratio, v.line_id))
    return verdicts
