import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntlab.feeder import FeederTelemetry, LineTelemetry
from ntlab.linescan import scan_lines


def line(ntl, technical):
    """Telemetry whose horizon NTL and technical totals are the given arrays' sums."""
    technical = np.asarray(technical, dtype=float)
    ntl = np.asarray(ntl, dtype=float)
    consumers = np.full(technical.shape, 10.0)
    return LineTelemetry(consumers + technical + ntl, consumers, technical)


def test_boundary_is_strict():
    tel = FeederTelemetry([line([0.25, 0.25], [2.5, 2.5]), line([0.26, 0.25], [2.5, 2.5])])
    v = {x.line_id: x for x in scan_lines(tel, 0.10)}
    assert v[0].ratio == pytest.approx(0.10)
    assert not v[0].flagged
    assert v[1].flagged


def test_exact_ten_percent_with_representable_values():
    # 0.5 / 5.0 is exactly 0.1 in floating point
    tel = FeederTelemetry([line([0.5], [5.0])])
    (v,) = scan_lines(tel)
    assert v.ratio == 0.1 and not v.flagged


def test_no_ntl_not_flagged_and_negative_clipped():
    tel = FeederTelemetry([line([0.0, 0.0], [1.0, 1.0]), line([-0.3, 0.1], [1.0, 1.0])])
    for v in scan_lines(tel):
        assert v.ntl_energy_total == 0.0
        assert not v.flagged


def test_zero_technical():
    tel = FeederTelemetry([line([0.2], [0.0]), line([0.0], [0.0])])
    v = {x.line_id: x for x in scan_lines(tel)}
    assert math.isinf(v[0].ratio) and v[0].flagged
    assert v[1].ratio == 0.0 and not v[1].flagged


def test_sorted_by_ratio():
    tel = FeederTelemetry([line([0.1], [1.0]), line([0.9], [1.0]), line([0.5], [1.0])])
    assert [v.line_id for v in scan_lines(tel)] == [1, 2, 0]


def test_noise_floor_range():
    with pytest.raises(ValueError):
        scan_lines(FeederTelemetry([]), 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.integers(0, 2),
    st.floats(0, 2),
)
def test_monotone_in_ntl(ntl, slot, bump):
    tech = [1.0, 1.0, 1.0]
    before = scan_lines(FeederTelemetry([line(ntl, tech)]))[0]
    raised = list(ntl)
    raised[slot] += bump
    after = scan_lines(FeederTelemetry([line(raised, tech)]))[0]
    assert after.ratio >= before.ratio - 1e-12
    assert after.flagged or not before.flagged
