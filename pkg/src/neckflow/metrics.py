"""Gaussian-weighted norms, the truncated distance to the cylinder, the
radius schedule and frequency ratios.

All integrals are over the numerical surface: composite Simpson in y,
uniform (spectrally accurate) rule in theta, area element of the graph.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import BallExceedsStrip, InsufficientCoverage, InvalidTime, ZeroDistance
from .geometry import SQRT2, CylinderGraph, FlowState, area_element, domain_radius, graphical_radius

GAUSSIAN_AREA = 4.0 * SQRT2 * math.pi**1.5 * math.exp(-0.5)
TRACE_COLUMNS = ["tau", "t", "d_C", "norm_BR", "R_of_tau", "freq_ratio", "min_radius", "graph_radius", "stop_reason"]
GRAPH_DELTA = 0.1


@dataclass(frozen=True)
class ScheduleParams:
    """Small parameters of the escape argument; kappa_i = kappa**i."""

    kappa: float = 0.5
    R0: float = 10.0
    c1: float = 1.0
    eta0: float = 0.01
    lam1: float = 0.45
    lam2: float = 0.47

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.R0 <= 0 or self.c1 <= 0 or self.eta0 <= 0:
            raise ValueError("R0, c1, eta0 must be positive")
        if not self.lam1 < self.lam2 < 0.5:
            raise ValueError("need lam1 < lam2 < 1/2")
        if abs(2.0 * self.lam1 - round(2.0 * self.lam1)) < 1e-9:
            raise ValueError("lam1 must not be a half-integer")

    def k(self, i):
        return self.kappa**i

    @property
    def kappa1(self):
        return self.kappa

    @property
    def kappa2(self):
        return self.kappa**2

    @property
    def kappa3(self):
        return self.kappa**3

    @property
    def kappa4(self):
        return self.kappa**4

    @property
    def lam15(self):
        return 0.5 * (self.lam1 + self.lam2)

    def to_dict(self):
        return {"kappa": self.kappa, "R0": self.R0, "c1": self.c1, "eta0": self.eta0,
                "lam1": self.lam1, "lam2": self.lam2}


def radius_schedule(tau, params=None, kappa2=None, R0=None):
    """R(tau) = (2 + kappa2) sqrt(tau + R0)."""
    if params is not None:
        kappa2 = params.kappa2 if kappa2 is None else kappa2
        R0 = params.R0 if R0 is None else R0
    if kappa2 is None or R0 is None:
        raise ValueError("need params or (kappa2, R0)")
    s = tau + R0
    if np.any(np.asarray(s) <= 0):
        raise InvalidTime(f"tau + R0 must be positive, got {s}")
    return (2.0 + kappa2) * np.sqrt(s)


# -- integrals -------------------------------------------------------------


def _surface_integral(g: CylinderGraph, integrand):
    """Integrate ``integrand`` (grid array) against dA over the graph."""
    da = area_element(g)
    row = (integrand * da).mean(axis=1) * 2.0 * math.pi
    return float(simpson(row, x=g.y))


def _sq_gauss(g: CylinderGraph, offset=(0.0, 0.0, 0.0)):
    x = g.cartesian()
    d = x - np.asarray(offset, dtype=float)
    return (d**2).sum(axis=-1)


def gaussian_norm(v, g: CylinderGraph, R: Optional[float] = None):
    """sqrt of the Gaussian integral of v^2 over the graph inside B_R.

    ``R=None`` integrates over the whole strip.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != g.values.shape:
        raise ValueError("v must live on the graph's grid")
    xx = _sq_gauss(g)
    w = np.exp(-xx / 4.0)
    if R is not None and math.isfinite(R):
        if R > domain_radius(g) + 1e-12:
            raise BallExceedsStrip(f"ball radius {R} exceeds strip half-length {domain_radius(g)}")
        w = np.where(xx < R * R, w, 0.0)
    return math.sqrt(max(_surface_integral(g, v * v * w), 0.0))


def distance_to_cylinder(g: CylinderGraph, offset=(0.0, 0.0, 0.0), cap: float = 1.0,
                         truncation: str = "min"):
    """Truncated Gaussian L^2 distance to the cylinder.

    The Gaussian is centred at ``offset``; ``truncation='max'`` is the
    literal max{dist, cap} variant, kept for comparison.
    """
    off = np.asarray(offset, dtype=float)
    x = g.cartesian() - off
    rho = np.sqrt(x[..., 1] ** 2 + x[..., 2] ** 2)
    dist = np.abs(rho - SQRT2)
    if truncation == "min":
        dist = np.minimum(dist, cap)
    elif truncation == "max":
        dist = np.maximum(dist, cap)
    else:
        raise ValueError("truncation must be min|max")
    w = np.exp(-(x**2).sum(axis=-1) / 4.0)
    return math.sqrt(max(_surface_integral(g, dist * dist * w), 0.0))


def frequency_ratio(d_now, d_next):
    if not (d_now > 0 and d_next > 0):
        raise ZeroDistance(f"distances must be positive, got {d_now}, {d_next}")
    return math.log(d_now / d_next)


# -- traces ----------------------------------------------------------------


def _fmt(x):
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return f"{float(x):.17g}"


@dataclass
class DistanceTrace:
    rows: list = field(default_factory=list)
    schedule: Optional[ScheduleParams] = None
    stop_reason: Optional[str] = None

    def append(self, row):
        if self.rows and not row["tau"] > self.rows[-1]["tau"]:
            raise ValueError("trace times must increase strictly")
        self.rows.append(dict(row))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    @property
    def tau(self):
        return self.column("tau")

    @property
    def d_C(self):
        return self.column("d_C")

    def finalize(self):
        """Fill freq_ratio = log d(tau)/d(tau+1), interpolating log d in tau."""
        tau = self.tau
        d = self.d_C
        for i, row in enumerate(self.rows):
            row["freq_ratio"] = float("nan")
            t1 = tau[i] + 1.0
            if len(tau) < 2 or t1 > tau[-1] + 1e-9 or not np.all(d > 0):
                continue
            ld = np.interp(t1, tau, np.log(d))
            row["freq_ratio"] = math.log(d[i]) - ld
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for i, row in enumerate(self.rows):
                out = [_fmt(row.get(c, float("nan"))) for c in TRACE_COLUMNS[:-1]]
                last = i == len(self.rows) - 1
                out.append((self.stop_reason or "") if last else "")
                w.writerow(out)

    @classmethod
    def from_csv(cls, path):
        tr = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = {c: float(rec[c]) if rec[c] != "" else float("nan") for c in TRACE_COLUMNS[:-1]}
                tr.rows.append(row)
                if rec.get("stop_reason"):
                    tr.stop_reason = rec["stop_reason"]
        return tr

    def unit_samples(self):
        """Indices of rows closest to integer-spaced tau starting at the first row."""
        tau = self.tau
        if len(tau) == 0:
            return []
        out = []
        k = 0
        while tau[0] + k <= tau[-1] + 1e-9:
            j = int(np.argmin(np.abs(tau - (tau[0] + k))))
            if abs(tau[j] - tau[0] - k) < 1e-6:
                out.append(j)
            k += 1
        return out


def trace_row(state: FlowState, schedule: Optional[ScheduleParams] = None, graph_delta: float = GRAPH_DELTA):
    g = state.graph
    if state.rescaled:
        tau = state.time
        t = state.frame.center_t - math.exp(-tau)
    else:
        tau = t = state.time
    R = float("nan")
    norm = float("nan")
    if state.rescaled and schedule is not None and tau + schedule.R0 > 0:
        R = float(radius_schedule(tau, schedule))
        norm = gaussian_norm(g.values, g, min(R, domain_radius(g)))
    elif state.rescaled:
        norm = gaussian_norm(g.values, g)
    return {
        "tau": tau, "t": t,
        "d_C": distance_to_cylinder(g) if state.rescaled else float("nan"),
        "norm_BR": norm, "R_of_tau": R, "freq_ratio": float("nan"),
        "min_radius": float(g.radius.min()),
        "graph_radius": graphical_radius(g, graph_delta).radius,
    }


# -- non-concentration diagnostic -----------------------------------------


@dataclass
class TailReport:
    C_measured: float
    rhs_base: float
    p0: float
    samples: int
    near_violation: bool
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def tail_bound_check(snapshots: Sequence[tuple], R: float, kappa3: float, C1: float = 0.0,
                     delta: float = 0.1, p0: float = 1.4, C_allowed: float = 100.0,
                     flag_at: float = 10.0) -> TailReport:
    """Measure the smallest C with |v| <= C * base * e^{|x|^2 / (8 p0)}.

    ``snapshots`` is a sequence of (tau, CylinderGraph) over tau in [0, 2];
    v is read as the graph function.  The bound is checked on the balls
    B_{e^{tau/2}(R - C1 - 2)} for tau in [1, 2].
    """
    snaps = sorted(snapshots, key=lambda s: s[0])
    if not snaps or snaps[0][0] > 1e-12:
        raise InsufficientCoverage("need the tau = 0 slice")
    g0 = snaps[0][1]
    if R > domain_radius(g0):
        raise InsufficientCoverage("initial ball exceeds the strip")
    v0 = gaussian_norm(g0.values, g0, R)
    base = math.sqrt(v0**2 + delta**2 * math.exp(-((R - C1 - 1.0) ** 2) / (4.0 + kappa3)))
    c_meas = 0.0
    used = 0
    for tau, g in snaps:
        if not 1.0 <= tau <= 2.0:
            continue
        rad = math.exp(tau / 2.0) * (R - C1 - 2.0)
        if rad > domain_radius(g) + 1e-12:
            raise InsufficientCoverage(f"strip does not cover B_{rad:.3g} at tau={tau}")
        xx = g.position_norm() ** 2
        mask = xx < rad * rad
        if not mask.any():
            continue
        ratio = np.abs(g.values[mask]) * np.exp(-xx[mask] / (8.0 * p0))
        c_meas = max(c_meas, float(ratio.max()) / base)
        used += 1
    if used == 0:
        raise InsufficientCoverage("no slices with tau in [1, 2]")
    return TailReport(c_meas, base, p0, used, c_meas > flag_at, c_meas <= C_allowed)
