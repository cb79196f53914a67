import math

import numpy as np
import pytest
from scipy.integrate import quad

from neckflow.errors import BallExceedsStrip, InsufficientCoverage, InvalidTime, ZeroDistance
from neckflow.geometry import SQRT2, CylinderGraph, FlowState, FrameTag
from neckflow.metrics import (GAUSSIAN_AREA, DistanceTrace, ScheduleParams, distance_to_cylinder,
                              frequency_ratio, gaussian_norm, radius_schedule, tail_bound_check,
                              trace_row)


def test_gaussian_area_of_cylinder():
    # closed form: 2 pi sqrt2 e^{-1/2} * sqrt(4 pi)
    exact = 2 * math.pi * SQRT2 * math.exp(-0.5) * math.sqrt(4 * math.pi)
    assert GAUSSIAN_AREA == pytest.approx(exact, rel=1e-14)
    g = CylinderGraph.cylinder(-16, 16, 321)
    assert gaussian_norm(np.ones(g.values.shape), g) ** 2 == pytest.approx(exact, rel=1e-8)


def test_gaussian_norm_ball_against_quad():
    g = CylinderGraph.cylinder(-12, 12, 2401)
    R = 5.0
    v = (g.y**2)[:, None]
    ymax = math.sqrt(R * R - 2)
    ref = quad(lambda y: y**4 * math.exp(-(y * y + 2) / 4), -ymax, ymax)[0] * 2 * math.pi * SQRT2
    assert gaussian_norm(v, g, R) ** 2 == pytest.approx(ref, rel=2e-3)  # indicator cut on the grid
    with pytest.raises(BallExceedsStrip):
        gaussian_norm(v, g, 20.0)


def test_distance_to_cylinder_uniform_offset():
    c = 0.01
    g = CylinderGraph.cylinder(-16, 16, 321, 1, c)
    r = SQRT2 + c
    exact = c * c * 2 * math.pi * r * math.exp(-r * r / 4) * math.sqrt(4 * math.pi)
    assert distance_to_cylinder(g) ** 2 == pytest.approx(exact, rel=1e-8)
    assert distance_to_cylinder(CylinderGraph.cylinder(-8, 8, 81)) == 0.0


def test_distance_truncation():
    g = CylinderGraph.cylinder(-16, 16, 321, 1, 3.0)
    capped = distance_to_cylinder(g)
    r = SQRT2 + 3.0
    assert capped**2 == pytest.approx(2 * math.pi * r * math.exp(-r * r / 4) * math.sqrt(4 * math.pi), rel=1e-8)
    assert distance_to_cylinder(g, truncation="max") > capped
    with pytest.raises(ValueError):
        distance_to_cylinder(g, truncation="mid")


def test_radius_schedule():
    p = ScheduleParams()
    assert radius_schedule(0.0, p) == pytest.approx((2 + 0.25) * math.sqrt(10))
    with pytest.raises(InvalidTime):
        radius_schedule(-11.0, p)
    with pytest.raises(ValueError):
        ScheduleParams(lam1=0.5, lam2=0.49)
    with pytest.raises(ValueError):
        ScheduleParams(kappa=1.5)


def test_frequency_ratio():
    assert frequency_ratio(math.e, 1.0) == pytest.approx(1.0)
    with pytest.raises(ZeroDistance):
        frequency_ratio(0.0, 1.0)


def test_trace_csv_roundtrip(tmp_path):
    tr = DistanceTrace()
    for k in range(4):
        g = CylinderGraph.cylinder(-12, 12, 121, 1, 0.01 * math.exp(-k / 2))
        tr.append(trace_row(FlowState(g, FrameTag("rescaled"), float(k)), ScheduleParams()))
    tr.stop_reason = "tau_max"
    tr.finalize()
    assert tr.rows[0]["freq_ratio"] == pytest.approx(0.5, abs=1e-3)
    assert math.isnan(tr.rows[-1]["freq_ratio"])
    tr.to_csv(tmp_path / "t.csv")
    back = DistanceTrace.from_csv(tmp_path / "t.csv")
    assert back.stop_reason == "tau_max"
    assert np.array_equal(back.d_C, tr.d_C)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[1].split(",")[-1] == "" and text[-1].endswith("tau_max")
    with pytest.raises(ValueError):
        tr.append(dict(tr.rows[-1]))
    assert tr.unit_samples() == [0, 1, 2, 3]


def test_tail_bound_check():
    snaps = []
    for tau in (0.0, 1.0, 1.5, 2.0):
        g = CylinderGraph.from_function(lambda y, t: 1e-3 * math.exp(tau / 2) * np.exp(-y**2 / 16) + 0 * t,
                                        -16, 16, 321)
        snaps.append((tau, g))
    rep = tail_bound_check(snaps, R=6.0, kappa3=0.125)
    assert rep.passed and rep.samples == 3
    with pytest.raises(InsufficientCoverage):
        tail_bound_check(snaps[1:], R=6.0, kappa3=0.125)
