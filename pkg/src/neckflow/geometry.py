"""Radial graphs over the cylinder of radius sqrt(2) and frame changes.

A surface is stored as r(y, theta) = sqrt(2) + v(y, theta) on a uniform
strip grid.  ``n_theta == 1`` is the axisymmetric path, where theta
derivatives vanish identically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .errors import ChartExit, InvalidTime, NonGraphical

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FrameTag:
    """Frame of a flow slice.

    ``center`` is the spacetime point (X, T) used for Huisken rescaling,
    X a 3-vector.  The radial chart only supports centers on the y-axis.
    """

    kind: str = "rescaled"
    center: tuple = ((0.0, 0.0, 0.0), 0.0)

    def __post_init__(self):
        if self.kind not in ("rescaled", "unrescaled"):
            raise ValueError(f"frame kind must be rescaled|unrescaled, got {self.kind!r}")
        x, t = self.center
        x = tuple(float(c) for c in x)
        if len(x) != 3:
            raise ValueError("center point must be a 3-vector")
        object.__setattr__(self, "center", (x, float(t)))

    @property
    def center_x(self):
        return self.center[0]

    @property
    def center_t(self):
        return self.center[1]

    def to_dict(self):
        return {"kind": self.kind, "center_x": list(self.center_x), "center_t": self.center_t}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], (tuple(d["center_x"]), d["center_t"]))


@dataclass(frozen=True)
class StripGrid:
    """Uniform grid on [y_min, y_max] x S^1; theta periodic."""

    y_min: float
    y_max: float
    n_y: int
    n_theta: int = 1

    @property
    def h_y(self):
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def h_theta(self):
        return 2.0 * np.pi / self.n_theta

    @property
    def y(self):
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def theta(self):
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def shape(self):
        return (self.n_y, self.n_theta)

    def sample(self, f):
        vals = f(self.y[:, None], self.theta[None, :])
        return np.array(np.broadcast_to(vals, self.shape), dtype=float)


@dataclass(frozen=True, eq=False)
class CylinderGraph:
    y_min: float
    y_max: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 5:
            raise ValueError("values must be (n_y >= 5, n_theta)")
        if not self.y_max > self.y_min:
            raise ValueError("y_max must exceed y_min")
        if not np.all(np.isfinite(vals)):
            raise NonGraphical("non-finite graph values")
        if np.any(SQRT2 + vals <= 0.0):
            raise NonGraphical("radius sqrt(2)+v <= 0: surface left the radial chart")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "y_min", float(self.y_min))
        object.__setattr__(self, "y_max", float(self.y_max))

    @classmethod
    def from_function(cls, f, y_min, y_max, n_y, n_theta=1):
        """Sample ``f(y, theta)`` (broadcasting) on the grid."""
        y = np.linspace(y_min, y_max, n_y)
        th = 2.0 * np.pi * np.arange(n_theta) / n_theta
        vals = np.broadcast_to(f(y[:, None], th[None, :]), (n_y, n_theta))
        return cls(y_min, y_max, np.array(vals, dtype=float))

    @classmethod
    def from_radius(cls, r, y_min, y_max):
        r = np.asarray(r, dtype=float)
        return cls(y_min, y_max, r - SQRT2)

    @classmethod
    def cylinder(cls, y_min=-12.0, y_max=12.0, n_y=241, n_theta=1, offset=0.0):
        return cls(y_min, y_max, np.full((n_y, n_theta), float(offset)))

    @property
    def grid(self):
        return StripGrid(self.y_min, self.y_max, self.n_y, self.n_theta)

    @property
    def n_y(self):
        return self.values.shape[0]

    @property
    def n_theta(self):
        return self.values.shape[1]

    @property
    def axisymmetric(self):
        return self.n_theta == 1

    @property
    def h_y(self):
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def h_theta(self):
        return 2.0 * np.pi / self.n_theta

    @property
    def y(self):
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def theta(self):
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def radius(self):
        return SQRT2 + self.values

    def with_values(self, values):
        return CylinderGraph(self.y_min, self.y_max, values)

    def same_grid(self, other, tol=1e-12):
        return (self.values.shape == other.values.shape
                and abs(self.y_min - other.y_min) <= tol
                and abs(self.y_max - other.y_max) <= tol)

    def position_norm(self):
        """|x| for every grid point of the surface."""
        return np.sqrt(self.y[:, None] ** 2 + self.radius ** 2)

    def cartesian(self):
        y = np.broadcast_to(self.y[:, None], self.values.shape)
        r = self.radius
        th = self.theta[None, :]
        return np.stack([y, r * np.cos(th), r * np.sin(th)], axis=-1)


@dataclass(frozen=True, eq=False)
class GraphicalityCertificate:
    radius: float
    delta: float
    # the bound is tested on the radial graph; the normal graph agrees up to (1 + O(delta))
    chart_factor: float = 1.0

    def __post_init__(self):
        if self.radius < 0 or self.delta < 0:
            raise ValueError("radius and delta must be non-negative")


@dataclass(eq=False)
class FlowState:
    graph: CylinderGraph
    frame: FrameTag
    time: float
    params: Any = None

    @property
    def rescaled(self):
        return self.frame.kind == "rescaled"


# -- derivatives ---------------------------------------------------------


def derivatives(g: CylinderGraph):
    """Second-order finite differences of r = sqrt(2)+v.

    Returns a dict with r, r_y, r_yy, r_t, r_tt, r_yt (t = theta).  Central
    in the interior, one-sided second order at the strip ends, periodic in
    theta.
    """
    r = g.radius
    h = g.h_y
    r_y = np.gradient(r, h, axis=0, edge_order=2)
    r_yy = np.empty_like(r)
    r_yy[1:-1] = (r[2:] - 2 * r[1:-1] + r[:-2]) / h**2
    r_yy[0] = (2 * r[0] - 5 * r[1] + 4 * r[2] - r[3]) / h**2
    r_yy[-1] = (2 * r[-1] - 5 * r[-2] + 4 * r[-3] - r[-4]) / h**2
    if g.n_theta > 1:
        ht = g.h_theta
        rp = np.roll(r, -1, axis=1)
        rm = np.roll(r, 1, axis=1)
        r_t = (rp - rm) / (2 * ht)
        r_tt = (rp - 2 * r + rm) / ht**2
        r_yt = np.gradient(r_t, h, axis=0, edge_order=2)
    else:
        r_t = np.zeros_like(r)
        r_tt = np.zeros_like(r)
        r_yt = np.zeros_like(r)
    return {"r": r, "r_y": r_y, "r_yy": r_yy, "r_t": r_t, "r_tt": r_tt, "r_yt": r_yt}


def _shape_data(d, theta):
    r, p, rt = d["r"], d["r_y"], d["r_t"]
    big_q = np.sqrt(1.0 + p**2 + (rt / r) ** 2)
    g11 = 1.0 + p**2
    g12 = p * rt
    g22 = rt**2 + r**2
    h11 = d["r_yy"] / big_q
    h12 = (d["r_yt"] - rt * p / r) / big_q
    h22 = (d["r_tt"] - r - 2.0 * rt**2 / r) / big_q
    det = g11 * g22 - g12**2
    i11, i12, i22 = g22 / det, -g12 / det, g11 / det
    # shape operator S = -g^{-1} h
    s11 = -(i11 * h11 + i12 * h12)
    s12 = -(i11 * h12 + i12 * h22)
    s21 = -(i12 * h11 + i22 * h12)
    s22 = -(i12 * h12 + i22 * h22)
    mean = s11 + s22
    norm_a2 = s11**2 + 2.0 * s12 * s21 + s22**2
    th = np.broadcast_to(theta[None, :], r.shape)
    normal = np.stack([-p, np.cos(th) + (rt / r) * np.sin(th), np.sin(th) - (rt / r) * np.cos(th)], axis=-1)
    normal = normal / big_q[..., None]
    return mean, norm_a2, normal, big_q


def curvature_quantities(g: CylinderGraph, at: Optional[tuple] = None):
    """Mean curvature (outward normal, cylinder positive), |A|^2 and unit normal.

    With ``at=(i, j)`` returns scalars at that grid point, otherwise full arrays.
    """
    if np.any(g.radius <= 0):
        raise NonGraphical("radius <= 0 in stencil")
    d = derivatives(g)
    mean, norm_a2, normal, _ = _shape_data(d, g.theta)
    if at is None:
        return {"H": mean, "normA2": norm_a2, "normal": normal}
    i, j = at
    return {"H": float(mean[i, j]), "normA2": float(norm_a2[i, j]), "normal": normal[i, j].copy()}


def revolution_mean_curvature(r, r_y, r_yy):
    """Closed form H for a surface of revolution r(y)."""
    w = np.sqrt(1.0 + r_y**2)
    return -r_yy / w**3 + 1.0 / (r * w)


def area_element(g: CylinderGraph):
    """dA = r * sqrt(1 + r_y^2 + (r_theta/r)^2) dy dtheta."""
    d = derivatives(g)
    r = d["r"]
    return r * np.sqrt(1.0 + d["r_y"] ** 2 + (d["r_t"] / r) ** 2)


# -- frames --------------------------------------------------------------


def _check_axis_center(frame: FrameTag):
    x = frame.center_x
    if abs(x[1]) > 0 or abs(x[2]) > 0:
        raise ChartExit("rescaling center off the y-axis is not representable as a radial graph")


def change_frame(state: FlowState, target: FrameTag) -> FlowState:
    """Convert a slice between the unrescaled flow and a rescaled flow.

    The rescaled flow about (X, T) is M_tau = e^{tau/2} (L_{T - e^{-tau}} - X).
    """
    src = state.frame
    if src.kind == target.kind and src.center == target.center:
        return replace(state)
    g = state.graph
    if src.kind == "rescaled":
        _check_axis_center(src)
        tau = state.time
        s = math.exp(-0.5 * tau)
        xy = src.center_x[0]
        g = CylinderGraph(xy + g.y_min * s, xy + g.y_max * s, g.radius * s - SQRT2)
        state = FlowState(g, FrameTag("unrescaled", src.center), src.center_t - math.exp(-tau), state.params)
        if target.kind == "unrescaled":
            return FlowState(state.graph, target, state.time, state.params)
    # unrescaled -> rescaled about target.center
    _check_axis_center(target)
    t = state.time
    big_t = target.center_t
    if not t < big_t:
        raise InvalidTime(f"t={t} is not before the rescaling time T={big_t}")
    lam = 1.0 / math.sqrt(big_t - t)
    xy = target.center_x[0]
    g = state.graph
    out = CylinderGraph((g.y_min - xy) * lam, (g.y_max - xy) * lam, g.radius * lam - SQRT2)
    return FlowState(out, target, -math.log(big_t - t), state.params)


# -- graphicality --------------------------------------------------------


def c2_size(g: CylinderGraph):
    """|v| + |grad v| + |Hess v| pointwise, measured with the metric of the cylinder."""
    d = derivatives(g)
    v = g.values
    grad = np.sqrt(d["r_y"] ** 2 + 0.5 * d["r_t"] ** 2)
    hess = np.sqrt(d["r_yy"] ** 2 + d["r_yt"] ** 2 + 0.25 * d["r_tt"] ** 2)
    return np.abs(v) + grad + hess


def domain_radius(g: CylinderGraph):
    """Radius of the largest ball whose intersection with the graph stays inside the strip."""
    return float(min(abs(g.y_min), abs(g.y_max)))


def graphical_radius(g: CylinderGraph, delta: float) -> GraphicalityCertificate:
    if delta <= 0:
        return GraphicalityCertificate(0.0, max(float(delta), 0.0))
    size = c2_size(g)
    xn = g.position_norm()
    bad = size >= delta
    full = domain_radius(g)
    if not bad.any():
        return GraphicalityCertificate(full, float(delta), 1.0 + float(delta))
    r_fail = float(xn[bad].min())
    if r_fail <= float(xn.min()):
        r_fail = 0.0
    return GraphicalityCertificate(min(r_fail, full), float(delta), 1.0 + float(delta))


# -- serialization -------------------------------------------------------


def _fmt(x):
    return f"{x:.17g}"


def write_snapshot(state: FlowState, stem):
    """Write ``stem.csv`` (y, theta, v) and ``stem.json`` (grid + frame)."""
    g = state.graph
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "theta", "v"])
        for i, yy in enumerate(g.y):
            for j, th in enumerate(g.theta):
                w.writerow([_fmt(yy), _fmt(th), _fmt(g.values[i, j])])
    header = {
        "y_min": g.y_min, "y_max": g.y_max, "n_y": g.n_y, "n_theta": g.n_theta,
        "axisymmetric": g.axisymmetric, "frame": state.frame.to_dict(), "time": state.time,
    }
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def read_snapshot(stem) -> FlowState:
    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    vals = np.empty((header["n_y"], header["n_theta"]))
    with open(f"{stem}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != vals.size:
        raise ValueError("snapshot CSV row count does not match header")
    vals.flat[:] = [float(r["v"]) for r in rows]
    g = CylinderGraph(header["y_min"], header["y_max"], vals)
    return FlowState(g, FrameTag.from_dict(header["frame"]), header["time"])
