"""Decision procedures on distance traces: frequency monotonicity, the
degenerate / nondegenerate dichotomy and the three-annulus property."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientCoverage, LostGraphicality, TooShort
from .geometry import SQRT2, CylinderGraph, StripGrid, domain_radius
from .metrics import DistanceTrace, distance_to_cylinder, gaussian_norm

# Neck profile v ~ PROFILE_COEFF * (y^2 - 2) / tau.  Projecting the quadratic
# term of the rescaled graph equation onto y^2 - 2 gives a' = -2 sqrt2 a^2,
# hence a = 1 / (2 sqrt2 tau); confirmed by the shooting runs.
PROFILE_COEFF = 1.0 / (2.0 * SQRT2)
NONDEGENERATE_BAND = 0.15
DEGENERATE_THRESHOLD = 0.35


@dataclass
class MonotonicityResult:
    holds_from: Optional[int]
    counterexample: bool
    ratios: list

    def to_dict(self):
        return dict(self.__dict__)


def check_discrete_monotonicity(seq: Sequence[float], gamma: float) -> MonotonicityResult:
    """First index from which d[j+1] >= e^gamma d[j] holds to the end.

    ``counterexample`` marks sequences that met the growth bound and later
    lost it, the pattern monotonicity forbids.
    """
    d = np.asarray(seq, dtype=float)
    if d.size < 3:
        raise TooShort("need at least 3 unit-spaced values")
    if abs(2.0 * gamma - round(2.0 * gamma)) < 1e-6:
        raise ValueError("gamma must not be a half-integer")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    ratios = np.log(d[1:] / d[:-1])
    ok = ratios >= gamma
    holds = None
    if ok[-1]:
        j = len(ok) - 1
        while j > 0 and ok[j - 1]:
            j -= 1
        holds = j
    first = np.argmax(ok) if ok.any() else None
    counter = first is not None and not ok[first:].all()
    return MonotonicityResult(holds, bool(counter), ratios.tolist())


@dataclass
class SingularityVerdict:
    kind: str
    fitted_rate: float
    profile_residual: float
    window: tuple
    neck_constant: float = float("nan")
    residual_trend: float = float("nan")

    def to_dict(self):
        return {"kind": self.kind, "fitted_rate": self.fitted_rate,
                "profile_residual": self.profile_residual, "window": list(self.window),
                "neck_constant": self.neck_constant, "residual_trend": self.residual_trend}

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def _slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def profile_residual(g: CylinderGraph, tau: float, coeff: float = PROFILE_COEFF):
    """Gaussian norm of tau*v - coeff*(y^2 - 2) on the strip."""
    target = coeff * (g.y**2 - 2.0)[:, None]
    cyl = CylinderGraph(g.y_min, g.y_max, np.zeros_like(g.values))
    return gaussian_norm(tau * g.values - target, cyl)


def shape_residual(g: CylinderGraph, tau: float):
    """Gaussian norm of tau*v after removing its best multiple of y^2 - 2.

    Unlike ``profile_residual`` this ignores the slow (logarithmic) drift of
    the neck constant and measures only convergence of the shape.
    """
    cyl = CylinderGraph(g.y_min, g.y_max, np.zeros_like(g.values))
    q = np.broadcast_to((g.y**2 - 2.0)[:, None], g.values.shape)
    w = tau * g.values
    qq = gaussian_norm(q, cyl) ** 2
    c = 0.5 * (gaussian_norm(w + q, cyl) ** 2 - gaussian_norm(w, cyl) ** 2 - qq) / qq
    return gaussian_norm(w - c * q, cyl)


def classify_dichotomy(trace: DistanceTrace, v_snapshots: Sequence = (), min_tau: float = 6.0,
                       band: float = NONDEGENERATE_BAND, threshold: float = DEGENERATE_THRESHOLD,
                       profile_coeff: float = PROFILE_COEFF) -> SingularityVerdict:
    """Fit the tail frequency and decide Nondegenerate / Degenerate / Inconclusive.

    ``v_snapshots`` is a sequence of (tau, CylinderGraph) in the rescaled
    frame; the profile test uses those in the fitting window.  The
    verdict needs the shape residual to decrease there; the reported
    ``profile_residual`` is the one against the fixed neck coefficient.
    """
    if len(trace) < 3:
        raise TooShort(f"trace has {len(trace)} rows")
    tau = trace.tau
    if tau[-1] < min_tau:
        raise TooShort(f"trace ends at tau={tau[-1]:.3g} < {min_tau}")
    if trace.stop_reason in ("graphicality", "min_radius", "chart_exit"):
        raise LostGraphicality(f"run stopped by {trace.stop_reason}")
    d = trace.d_C
    start = tau[0] + (tau[-1] - tau[0]) * 2.0 / 3.0
    sel = tau >= start - 1e-9
    window = (float(tau[sel][0]), float(tau[-1]))
    if np.any(d[sel] <= 0) or sel.sum() < 2:
        return SingularityVerdict("Inconclusive", float("nan"), float("nan"), window)
    rate = -_slope(tau[sel], np.log(d[sel]))

    snaps = [(t, g) for t, g in v_snapshots if window[0] - 1e-9 <= t <= window[1] + 1e-9]
    res = [profile_residual(g, t, profile_coeff) for t, g in snaps]
    shape = [shape_residual(g, t) for t, g in snaps]
    trend = _slope([t for t, _ in snaps], shape) if len(shape) >= 2 else float("nan")
    final_res = res[-1] if res else float("nan")
    neck = float("nan")
    if snaps:
        vals = []
        for t, g in snaps:
            i0 = int(np.argmin(np.abs(g.y)))
            vals.append(t * float(g.values[i0].mean()))
        neck = float(np.mean(vals))

    if rate >= threshold:
        kind = "Degenerate"
    elif abs(rate) <= band and (not res or trend < 0):
        kind = "Nondegenerate"
    else:
        kind = "Inconclusive"
    return SingularityVerdict(kind, rate, final_res, window, neck, trend)


def trace_from_values(times, values, grid: StripGrid, stop_reason="tau_max") -> DistanceTrace:
    """Distance trace of graphs with the given values (e.g. a linearized run)."""
    tr = DistanceTrace()
    for t, v in zip(times, values):
        g = CylinderGraph(grid.y_min, grid.y_max, v)
        tr.append({"tau": float(t), "t": -math.exp(-t), "d_C": distance_to_cylinder(g),
                   "norm_BR": float("nan"), "R_of_tau": float("nan"),
                   "min_radius": float(g.radius.min()), "graph_radius": float("nan")})
    tr.stop_reason = stop_reason
    return tr.finalize()


# -- three annulus ---------------------------------------------------------


@dataclass
class AnnulusResult:
    premise_holds: bool
    conclusion_holds: bool
    growth1: float
    growth2: float
    premise: dict = field(default_factory=dict)
    flagged: bool = False

    @property
    def implication_holds(self):
        return (not self.premise_holds) or self.conclusion_holds


def three_annulus_check(v0, grid: StripGrid, lam1: float = 0.25, lam2: float = 0.3, kappa3: float = 0.01,
                        R: float = 10.0, delta: float = 1.0, series=None) -> AnnulusResult:
    """Evaluate hypotheses (a)-(c) and the conclusion on tau = 0, 1, 2.

    ``series`` may supply the three slices (differences of two flows);
    otherwise ``v0`` is evolved by the linearized flow, where the base flow
    is the cylinder itself.
    """
    cyl = CylinderGraph(grid.y_min, grid.y_max, np.zeros(grid.shape))
    if R > domain_radius(cyl):
        raise InsufficientCoverage(f"ball B_{R} exceeds the strip")
    if series is None:
        from .flow import evolve_linearized
        _, samp = evolve_linearized(np.asarray(v0, dtype=float).reshape(grid.shape), grid, 2.0, (0.0, 1.0, 2.0))
        series = [samp[0.0], samp[1.0], samp[2.0]]
    n0, n1, n2 = (gaussian_norm(np.asarray(s).reshape(grid.shape), cyl, R) for s in series)
    inside = cyl.position_norm() < R
    sup = max(float(np.abs(np.asarray(s).reshape(grid.shape)[inside]).max()) for s in series)
    a = sup < delta
    b = n1 >= math.exp(lam1) * n0
    c = n1 >= delta * math.exp(-R * R / (8.0 + 2.0 * kappa3))
    g1 = n1 / n0 if n0 > 0 else float("inf")
    g2 = n2 / n1 if n1 > 0 else float("inf")
    concl = n2 >= math.exp(lam2) * n1
    flagged = math.exp(lam1) < g1 < math.exp(lam2)
    return AnnulusResult(a and b and c, concl, g1, g2, {"a": a, "b": b, "c": c}, flagged)
