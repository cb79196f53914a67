import math

import numpy as np
import pytest

from neckflow.classify import (PROFILE_COEFF, check_discrete_monotonicity, classify_dichotomy,
                               profile_residual, shape_residual, three_annulus_check,
                               trace_from_values)
from neckflow.errors import InsufficientCoverage, LostGraphicality, TooShort
from neckflow.geometry import SQRT2, CylinderGraph, StripGrid
from neckflow.metrics import DistanceTrace
from neckflow.spectral import hermite


def test_monotonicity():
    d = [1.0, 1.1, 1.3, 1.6, 2.0]
    r = check_discrete_monotonicity(d, 0.1)
    assert r.holds_from == 1 and not r.counterexample
    r = check_discrete_monotonicity([1.0, 2.0, 2.1, 2.2], 0.3)
    assert r.counterexample and r.holds_from is None
    with pytest.raises(TooShort):
        check_discrete_monotonicity([1.0, 2.0], 0.1)
    with pytest.raises(ValueError):
        check_discrete_monotonicity(d, 0.5)


def _decaying_trace(rate, grid, mode_y, taus):
    vals = [1e-5 * math.exp(-rate * t) * mode_y[:, None] for t in taus]
    return trace_from_values(taus, vals, grid), vals


def test_degenerate_verdict():
    grid = StripGrid(-12, 12, 121)
    taus = np.arange(0.0, 10.5, 0.5)
    tr, _ = _decaying_trace(0.5, grid, hermite(3, grid.y), taus)
    v = classify_dichotomy(tr)
    assert v.kind == "Degenerate" and v.fitted_rate == pytest.approx(0.5, abs=1e-6)


def test_nondegenerate_verdict_on_exact_profile():
    grid = StripGrid(-12, 12, 121)
    taus = np.arange(4.0, 16.5, 0.5)
    vals = [PROFILE_COEFF * (grid.y**2 - 2)[:, None] / t for t in taus]
    tr = trace_from_values(taus, vals, grid)
    snaps = [(t, CylinderGraph(-12, 12, v)) for t, v in zip(taus, vals)]
    out = classify_dichotomy(tr, snaps)
    assert out.fitted_rate < 0.15
    assert out.neck_constant == pytest.approx(-2 * PROFILE_COEFF)
    assert profile_residual(snaps[-1][1], taus[-1]) < 1e-12
    assert shape_residual(snaps[-1][1], taus[-1]) < 1e-12


def test_inconclusive_middle_rate():
    grid = StripGrid(-12, 12, 121)
    tr, _ = _decaying_trace(0.25, grid, hermite(3, grid.y), np.arange(0.0, 10.5, 0.5))
    assert classify_dichotomy(tr).kind == "Inconclusive"


def test_classify_errors():
    grid = StripGrid(-12, 12, 121)
    tr, _ = _decaying_trace(0.5, grid, grid.y, np.arange(0.0, 3.0, 0.5))
    with pytest.raises(TooShort):
        classify_dichotomy(tr)
    tr, _ = _decaying_trace(0.5, grid, grid.y, np.arange(0.0, 8.0, 0.5))
    tr.stop_reason = "graphicality"
    with pytest.raises(LostGraphicality):
        classify_dichotomy(tr)


def test_verdict_json(tmp_path):
    grid = StripGrid(-12, 12, 121)
    tr, _ = _decaying_trace(0.5, grid, hermite(3, grid.y), np.arange(0.0, 10.5, 0.5))
    s = classify_dichotomy(tr).to_json(tmp_path / "v.json")
    assert '"kind": "Degenerate"' in s and (tmp_path / "v.json").exists()


def test_three_annulus_single_growing_mode():
    grid = StripGrid(-12, 12, 241)
    res = three_annulus_check(1e-4 * grid.y[:, None], grid)
    assert res.premise_holds and res.conclusion_holds
    assert res.growth1 == pytest.approx(math.exp(0.5), rel=1e-3)


def test_three_annulus_decaying_mode_fails_premise():
    grid = StripGrid(-12, 12, 241)
    res = three_annulus_check(1e-5 * hermite(3, grid.y)[:, None], grid)
    assert not res.premise_holds and res.implication_holds
    with pytest.raises(InsufficientCoverage):
        three_annulus_check(np.zeros((81, 1)), StripGrid(-8, 8, 81), R=10.0)
