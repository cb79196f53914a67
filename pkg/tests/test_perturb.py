import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neckflow.errors import ChartExit, DegenerateFit, HypothesisFailed, NoSignChange, NonGraphical, TimeShiftTooLarge
from neckflow.flow import StepParams, evolve_linearized
from neckflow.geometry import SQRT2, CylinderGraph, FlowState, FrameTag, StripGrid
from neckflow.metrics import ScheduleParams
from neckflow.perturb import (SpacetimeTransform, apply_seed_perturbation, cutoff, dumbbell_family,
                              jacobi_fit, jacobi_series, lattice_pairs, neck_location_bisection,
                              parse_a_grid, run_escape_experiment, separation_audit, synthetic_base,
                              transform_state, write_aggregate)
from neckflow.spectral import project


@pytest.fixture(scope="module")
def cyl16():
    return FlowState(CylinderGraph.cylinder(-8, 8, 161, 16), FrameTag("rescaled"), 0.0)


@pytest.fixture(scope="module")
def escape_base():
    base = synthetic_base(eta=1e-4, y_max=16.0, n_y=321)
    base.params = StepParams()
    return base


def _z(g):
    th = g.theta[None, :]
    return SQRT2 * np.cos(th), SQRT2 * np.sin(th), g.y[:, None]


# -- seed ------------------------------------------------------------------


def test_cutoff_is_c2_ramp():
    rho = np.array([0.0, 8.9, 9.0, 9.5, 10.0, 11.0])
    assert np.allclose(cutoff(rho, 10.0), [1, 1, 1, 0.5, 0, 0])
    x = np.linspace(8.5, 10.5, 2001)
    d2 = np.diff(cutoff(x, 10.0), 2) / (x[1] - x[0]) ** 2
    assert np.abs(np.diff(d2)).max() < 0.05  # no jumps in the second derivative
    assert abs(d2[0]) < 1e-6 and abs(d2[-1]) < 1e-6


def test_seed_identity_and_projection():
    st = FlowState(CylinderGraph.cylinder(-16, 16, 321), FrameTag("rescaled"), 0.0)
    assert apply_seed_perturbation(st, 0.0, 10.0).graph.values is st.graph.values
    a = 1e-3
    g = apply_seed_perturbation(st, a, 10.0).graph
    c = project(g.values, g.grid, (4, 0))
    # h_1 = y / sqrt2, so a y has coefficient a sqrt2
    tail = 1.0 - c[(1, 0)] / (a * SQRT2)
    assert 0 <= tail < 1e-3
    with pytest.raises(NonGraphical):
        apply_seed_perturbation(st, 1.0, 10.0)


def test_seed_linear_growth():
    grid = StripGrid(-16, 16, 321)
    a = 1e-3
    st = FlowState(CylinderGraph.cylinder(-16, 16, 321), FrameTag("rescaled"), 0.0)
    v0 = apply_seed_perturbation(st, a, 10.0).graph.values
    v, _ = evolve_linearized(v0, grid, 2.0)
    c = project(v, grid, (4, 0))
    assert c[(1, 0)] == pytest.approx(a * SQRT2 * math.e, rel=0.02)


# -- transforms ------------------------------------------------------------


def test_identity_transform(cyl16):
    out = transform_state(cyl16, SpacetimeTransform(), 0.0)
    assert np.abs(out.graph.values).max() < 1e-13


def test_transform_properties():
    phi = SpacetimeTransform(s=0.01, x0=(0.0, 0.3, -0.4), d1=0.002, d2=-0.001)
    Q = phi.Q
    assert np.allclose(Q @ Q.T, np.eye(3)) and np.linalg.det(Q) == pytest.approx(1.0)
    from scipy.linalg import expm
    assert np.allclose(Q, expm(phi.generator))
    assert phi.magnitude == pytest.approx(0.7 + 0.1 + 0.003)


def test_time_shift_on_cylinder(cyl16):
    s = 1e-3
    out = transform_state(cyl16, SpacetimeTransform(s=s), 0.0)
    exact = math.sqrt(2 * (1 - s)) - SQRT2
    assert np.allclose(out.graph.values, exact, atol=1e-12)
    assert np.allclose(out.graph.values, -SQRT2 / 2 * s, rtol=1e-3)


def test_rotation_on_cylinder(cyl16):
    d2 = 1e-3
    g = transform_state(cyl16, SpacetimeTransform(d2=d2), 0.0).graph
    z1, z2, y = _z(g)
    pred = 2**-0.5 * d2 * z1 * y
    assert np.abs(g.values - pred).max() < 5e-5  # second order in d2 y


def test_translation_on_cylinder(cyl16):
    b = 1e-3
    g = transform_state(cyl16, SpacetimeTransform(x0=(0, b, 0)), 1.0).graph
    z1, _, _ = _z(g)
    assert np.abs(g.values - 2**-0.5 * b * math.e**0.5 * z1).max() < 1e-5


def test_transform_errors(cyl16):
    with pytest.raises(TimeShiftTooLarge):
        transform_state(cyl16, SpacetimeTransform(s=0.5), 1.0)
    with pytest.raises(ChartExit):
        transform_state(cyl16, SpacetimeTransform(x0=(1.0, 0, 0)), 0.0)


def test_time_shift_group_property():
    cyl = FlowState(CylinderGraph.cylinder(-8, 8, 161), FrameTag("rescaled"), 0.0)
    s1, s2, tau = 0.004, 0.006, 0.5
    first = lambda t: transform_state(cyl, SpacetimeTransform(s=s1), t)
    two = transform_state(first, SpacetimeTransform(s=s2), tau).graph.values
    one = transform_state(cyl, SpacetimeTransform(s=s1 + s2), tau).graph.values
    assert np.abs(two - one).max() < (16 / 160) ** 2


def test_transform_bound_recorded(cyl16):
    out = transform_state(cyl16, SpacetimeTransform(s=1e-4, x0=(0, 1e-4, 0)), 0.0, R=4.0)
    assert out.transform_bound == pytest.approx(4e-4 + 1e-4)


# -- jacobi fits -----------------------------------------------------------


def test_jacobi_zero_series():
    grid = StripGrid(-8, 8, 81, 8)
    fit = jacobi_fit([(0.0, np.zeros(grid.shape)), (1.0, np.zeros(grid.shape))], grid)
    assert all(getattr(fit, k) == 0 for k in ("b", "c1", "c2", "d1", "d2")) and fit.residual == 0


def test_jacobi_degenerate_on_axisymmetric_grid():
    grid = StripGrid(-8, 8, 81, 1)
    with pytest.raises(DegenerateFit):
        jacobi_fit([(0.0, np.zeros(grid.shape))], grid)


def test_jacobi_accepts_graphs(cyl16):
    ser = jacobi_series(cyl16, SpacetimeTransform(s=1.0), 1e-3, [0.0, 0.5])
    graphs = [(t, CylinderGraph(-8, 8, v)) for t, v in ser]
    assert jacobi_fit(graphs).b == pytest.approx(-SQRT2 / 2, rel=1e-3)


def test_jacobi_linear_in_gamma(cyl16):
    phi = SpacetimeTransform(s=0.5, x0=(0, 0.3, 0.2), d1=0.1, d2=-0.2)
    taus = [0.0, 0.5, 1.0]
    raw = []
    for gamma in (1e-4, 1e-3, 1e-2):
        ser = jacobi_series(cyl16, phi, gamma, taus, central=False)
        # un-normalize to get the response itself, then the slope in gamma
        fit = jacobi_fit([(t, v * gamma) for t, v in ser], cyl16.graph.grid)
        raw.append(np.array([fit.b, fit.c1, fit.c2, fit.d1, fit.d2]) / gamma)
    for r in raw[1:]:
        assert np.allclose(r, raw[0], rtol=0.02)


# -- escape ----------------------------------------------------------------


def test_escape_zero_seed(escape_base):
    with pytest.raises(HypothesisFailed) as exc:
        run_escape_experiment(escape_base, 0.0)
    assert exc.value.condition == "iii" and exc.value.T == 0


def test_escape_report_fields(escape_base, tmp_path):
    rep = run_escape_experiment(escape_base, 1e-3)
    log = rep.conditions_log
    assert all(row["ii"] and row["iii"] for row in log[: rep.T_eps + 1])
    assert not log[rep.T_eps + 1]["iv"]
    assert rep.excluded_interval == pytest.approx(rep.eps**0.75)
    s = rep.to_json(tmp_path / "r.json")
    assert '"T_eps"' in s
    # ceiling hypothesis only applies while R0 R eps e^tau < 1/100; never here
    assert rep.ceiling_log == []


def test_excluded_interval_monotone():
    e = 1e-3
    assert (e / 2) ** 0.75 / e**0.75 == pytest.approx(2**-0.75)


# -- bisection ---------------------------------------------------------------


def test_bisection_dumbbell():
    res = neck_location_bisection(dumbbell_family(), (0.2, 1.2), 0.05)
    assert res.verdict_lo == "pinch" and res.verdict_hi == "no-pinch"
    assert 0.2 < res.a_star < 1.2 and res.hi - res.lo <= 0.05


def test_bisection_no_sign_change():
    with pytest.raises(NoSignChange):
        neck_location_bisection(dumbbell_family(), (0.2, 0.3), 0.05)


def test_bisection_degenerate_tolerance():
    res = neck_location_bisection(dumbbell_family(), (0.2, 1.2), 1.0)
    assert res.a_star == pytest.approx(0.7) and res.evaluations == 2


# -- audit -------------------------------------------------------------------


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_lattice_audit(eps):
    t = 1e-3
    rep = separation_audit(lattice_pairs(t, 1.5 * t ** (2 / 3), 60), eps)
    assert rep.ok and rep.violations == []
    assert rep.max_count <= math.ceil(eps ** (-2 / 3))
    assert rep.measure_bound == pytest.approx(2 * eps ** (1 / 3))


def test_audit_detects_violation():
    rep = separation_audit([(0.0, 0.0), (0.5, 0.9), (1e-2, 1e-3)], 1e-2)
    assert rep.violations == [(0, 2)]
    assert not rep.ok


def test_audit_empty():
    rep = separation_audit([], 1e-2)
    assert rep.max_count == 0 and rep.violations == [] and rep.measure_bound == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=12), st.floats(1e-3, 0.5))
def test_audit_greedy_subset_is_separated(pairs, eps):
    rep = separation_audit(pairs, eps)
    n = len(pairs)
    bad = {(i, j) for i in range(n) for j in range(i + 1, n)
           if abs(pairs[i][1] - pairs[j][1]) < abs(pairs[i][0] - pairs[j][0]) ** (2 / 3)}
    assert set(rep.violations) == bad
    assert rep.measure == pytest.approx(2 * eps * rep.max_count)


# -- sweep helpers -----------------------------------------------------------


def test_parse_a_grid():
    assert parse_a_grid("1e-4:1e-2:log10") == pytest.approx([1e-4, 1e-3, 1e-2])
    assert len(parse_a_grid("1e-4:1e-2:5")) == 5
    with pytest.raises(ValueError):
        parse_a_grid("1e-4:1e-2")


def test_write_aggregate(tmp_path):
    write_aggregate([{"a": 1e-3, "T_eps": 5, "growth_exponent": 0.5, "verdict": "escaped"},
                     {"a": 1e-4, "T_eps": None, "growth_exponent": None, "verdict": "hypothesis:iii"}],
                    tmp_path / "agg.csv")
    lines = (tmp_path / "agg.csv").read_text().splitlines()
    assert lines[0] == "a,T_eps,exponent,verdict"
    assert lines[1].startswith("0.0001,,")
