"""Time-shift barriers around an axisymmetric neck and a sandwich monitor.

Inside the neck region U1 the barriers are the time-shifted slices
F_{t-eps} (outside) and F_{t+eps} (inside).  Away from the neck they are
normal-ish graphs r +- eps (V + K (t - t0)) over the flow, and in the
annulus U2 \\ U1 the minimum of the two offsets is taken.  Everything is
on the radial chart of a fixed-step unrescaled run, so t +- eps are exact
history slices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import GridMismatch, MatchingFailed, MeanConvexityFailed, NonGraphical
from .flow import _graph_rate, _rk4, close_ends, stable_dt
from .geometry import SQRT2, CylinderGraph, FlowState, StripGrid, revolution_mean_curvature

DEFAULT_REGIONS = (1.0, 2.0)
R_FLOOR = 0.05


@dataclass
class FlowHistory:
    """Fixed-step axisymmetric unrescaled run: radii[k] at times[k]."""

    times: np.ndarray
    radii: np.ndarray
    grid: StripGrid
    dt: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        if self.radii.ndim != 2 or self.radii.shape != (self.times.size, self.grid.n_y):
            raise ValueError("radii must have shape (n_times, n_y)")

    @property
    def y(self):
        return self.grid.y

    def __len__(self):
        return self.times.size

    def index(self, t):
        k = int(round((t - self.times[0]) / self.dt))
        if k < 0 or k >= len(self) or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise GridMismatch(f"t={t} is not a stored step")
        return k

    @property
    def pinch_time(self):
        """Extrapolated singular time from r^2 ~ 2 (T - t) at the thinnest point."""
        r = float(self.radii[-1].min())
        return float(self.times[-1] + 0.5 * r * r)


def record_history(state: Union[FlowState, np.ndarray], grid: Optional[StripGrid] = None, dt: Optional[float] = None,
                   t_end: float = math.inf, r_floor: float = R_FLOOR, t0: float = 0.0,
                   max_steps: int = 1_000_000) -> FlowHistory:
    """Run the unrescaled axisymmetric flow with a fixed step until ``t_end``
    or until the neck radius drops below ``r_floor``."""
    if isinstance(state, FlowState):
        if state.rescaled or not state.graph.axisymmetric:
            raise ValueError("need an axisymmetric unrescaled state")
        grid = state.graph.grid
        u = np.array(state.graph.radius)
        t0 = state.time
    else:
        u = np.asarray(state, dtype=float).reshape(grid.n_y, 1).copy()
    if dt is None:
        dt = stable_dt(grid, r_floor)
    rate = _graph_rate(grid, False)
    close_ends(u)
    times = [t0]
    radii = [u[:, 0].copy()]
    k = 0
    while u.min() >= r_floor and times[-1] < t_end - 0.5 * dt and k < max_steps:
        u = _rk4(u, dt, rate)
        k += 1
        times.append(t0 + k * dt)
        radii.append(u[:, 0].copy())
    return FlowHistory(np.array(times), np.array(radii), grid, dt)


def continue_history(radius0, history: FlowHistory, t_start: float, t_stop: float) -> FlowHistory:
    """Evolve ``radius0`` from ``t_start`` with the same grid and step as ``history``."""
    n = int(round((t_stop - t_start) / history.dt))
    u = np.asarray(radius0, dtype=float).reshape(history.grid.n_y, 1).copy()
    rate = _graph_rate(history.grid, False)
    close_ends(u)
    radii = [u[:, 0].copy()]
    for _ in range(n):
        u = _rk4(u, history.dt, rate)
        radii.append(u[:, 0].copy())
    return FlowHistory(t_start + history.dt * np.arange(n + 1), np.array(radii), history.grid, history.dt)


# -- construction ----------------------------------------------------------


def smoothstep_V(y, regions, C1):
    """2 C1 on |y| <= y1 falling (C^2 quintic) to 1/(2 C1) at |y| >= y2."""
    y1, y2 = regions
    s = np.clip((np.abs(y) - y1) / (y2 - y1), 0.0, 1.0)
    S = s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
    return 2.0 * C1 + (0.5 / C1 - 2.0 * C1) * S


@dataclass
class SupersolutionCertificate:
    min_margin: float
    min_margin_scaled: float
    points: int

    @property
    def holds(self):
        return self.min_margin > 0


@dataclass
class BarrierPair:
    times: np.ndarray
    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eps: float
    V: Optional[np.ndarray]
    K: float
    C1: float
    regions: tuple
    t0: float
    t_end: float
    certificate: Optional[SupersolutionCertificate] = None
    matching: dict = field(default_factory=dict)

    @property
    def gap(self):
        return self.upper - self.lower

    def inner_mask(self):
        return np.abs(self.y) < self.regions[0]

    def to_csv(self, stem):
        """Write ``<stem>_lower.csv`` and ``<stem>_upper.csv`` (t, y, theta, v)."""
        paths = []
        for name, arr in (("lower", self.lower), ("upper", self.upper)):
            path = f"{stem}_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "y", "theta", "v"])
                for t, row in zip(self.times, arr):
                    for yy, r in zip(self.y, row):
                        w.writerow([f"{t:.17g}", f"{yy:.17g}", "0", f"{r - SQRT2:.17g}"])
            paths.append(path)
        return paths


def _rhs(r, grid):
    """Unrescaled normal-graph speed of radial profiles, one row per time."""
    out = np.empty_like(r)
    for k in range(r.shape[0]):
        out[k] = kernels.graph_rhs(r[k][:, None], grid.y, grid.h_y, grid.h_theta, False)[:, 0]
    return out


def _mean_curvature(r, h):
    r_y = np.gradient(r, h, axis=-1, edge_order=2)
    r_yy = np.gradient(r_y, h, axis=-1, edge_order=2)
    return revolution_mean_curvature(r, r_y, r_yy)


def _margins(r, W, eps, K, grid, mask):
    """Supersolution / subsolution defects of r +- eps W on ``mask``."""
    base = _rhs(r, grid)
    up = base + eps * K - _rhs(r + eps * W, grid)
    lo = _rhs(r - eps * W, grid) - base + eps * K
    return np.minimum(up, lo)[:, mask]


def build_barrier_pair(history: FlowHistory, eps: float, V_spec: Optional[Callable] = None,
                       K: Optional[float] = None, regions: tuple = DEFAULT_REGIONS,
                       t0: Optional[float] = None, t_end: Optional[float] = None,
                       max_shrink: int = 30) -> BarrierPair:
    """Assemble the barrier pair over [t0, t_end].

    ``eps`` must be a whole number of history steps.  ``V_spec(y, C1)``
    overrides the smoothstep transition.  With ``K`` unset it is taken as
    twice the smallest slope making the offset graphs super/subsolutions.
    With ``t0`` unset the window is shortened (t0 moved towards t_end)
    until the matching inequalities hold; an explicit ``t0`` raises
    MatchingFailed instead.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    y1, y2 = regions
    if not 0 < y1 < y2:
        raise ValueError("regions must satisfy 0 < y1 < y2")
    m = int(round(eps / history.dt))
    if abs(m * history.dt - eps) > 1e-9 * max(eps, history.dt):
        raise ValueError(f"eps={eps} is not a multiple of the history step {history.dt}")
    y = history.y
    grid = history.grid
    ay = np.abs(y)
    inner = ay < y1
    annulus = (ay >= y1) & (ay <= y2)
    outer_pts = ay >= y1
    interior = np.zeros(y.size, dtype=bool)
    interior[1:-1] = True

    k_last = len(history) - 1 - m
    k_end = k_last if t_end is None else history.index(t_end)
    if k_end > k_last:
        raise ValueError("t_end + eps exceeds the recorded history")
    auto = t0 is None
    k0 = m if auto else history.index(t0)
    if k0 < m:
        raise ValueError("t0 - eps precedes the recorded history")
    if k0 > k_end:
        raise ValueError("empty window")

    r_all = history.radii
    if eps == 0:
        sl = slice(k0, k_end + 1)
        return BarrierPair(history.times[sl], y, r_all[sl].copy(), r_all[sl].copy(), 0.0, None, 0.0,
                           float("nan"), (y1, y2), float(history.times[k0]), float(history.times[k_end]))

    ks = np.arange(k0, k_end + 1)
    region = ay <= y2
    Hmin = _mean_curvature(r_all[ks], grid.h_y)[:, region].min(axis=1)
    # the time-shifted slices must be strictly ordered on U2 as well
    umin = np.minimum(r_all[ks - m] - r_all[ks], r_all[ks] - r_all[ks + m])[:, region].min(axis=1)
    good = (Hmin > 0) & (umin > 0)
    if auto and good[-1]:
        # earliest start after which the neck stays mean-convex
        bad = np.flatnonzero(~good)
        k0 += 0 if bad.size == 0 else int(bad[-1]) + 1
    elif not good.all():
        raise MeanConvexityFailed(f"H = {Hmin.min():.3g}, min shift gap = {umin.min():.3g} inside |y| <= {y2}")
    if not good[-1]:
        raise MeanConvexityFailed(f"H = {Hmin[-1]:.3g} <= 0 inside |y| <= {y2} at t_end")

    for attempt in range(max_shrink + 1):
        ks = np.arange(k0, k_end + 1)
        t = history.times[ks]
        r = r_all[ks]
        u_up = r_all[ks - m] - r
        u_lo = r - r_all[ks + m]
        ratios = np.concatenate([(u_up[:, annulus] / eps).ravel(), (u_lo[:, annulus] / eps).ravel()])
        C1 = 1.01 * max(ratios.max(), 1.0 / ratios.min())
        V = V_spec(y, C1) if V_spec is not None else smoothstep_V(y, regions, C1)
        V = np.asarray(V, dtype=float)
        mask = outer_pts & interior
        if K is None:
            W0 = np.broadcast_to(V, r.shape)
            need = -_margins(r, W0, eps, 0.0, grid, mask) / eps
            K_use = 2.0 * max(float(need.max()), 0.0)
            if K_use == 0.0:
                K_use = 1.0
            for _ in range(20):
                W = V[None, :] + K_use * (t - t[0])[:, None]
                if _margins(r, W, eps, K_use, grid, mask).min() > 0:
                    break
                K_use *= 2.0
        else:
            K_use = float(K)
        W = V[None, :] + K_use * (t - t[0])[:, None]
        v_off = eps * W

        # matching: v > u at the inner edge, v < u at the outer edge
        e1 = np.flatnonzero(annulus & (ay <= ay[annulus].min() + 1e-12))
        e2 = np.flatnonzero(annulus & (ay >= ay[annulus].max() - 1e-12))
        inner_ok = bool(np.all(v_off[:, e1] > u_up[:, e1]) and np.all(v_off[:, e1] > u_lo[:, e1]))
        outer_ok = bool(np.all(v_off[:, e2] < u_up[:, e2]) and np.all(v_off[:, e2] < u_lo[:, e2]))
        if inner_ok and outer_ok:
            break
        if not auto or attempt == max_shrink or k_end - k0 < 2:
            raise MatchingFailed(
                f"window [{history.times[k0]:.6g}, {history.times[k_end]:.6g}] too long for K={K_use:.4g}"
                f" (inner {inner_ok}, outer {outer_ok})")
        k0 = k_end - (k_end - k0) // 2

    upper = r + np.where(inner[None, :], u_up, np.where(annulus[None, :], np.minimum(u_up, v_off), v_off))
    lower = r - np.where(inner[None, :], u_lo, np.where(annulus[None, :], np.minimum(u_lo, v_off), v_off))
    marg = _margins(r, W, eps, K_use, grid, mask)
    cert = SupersolutionCertificate(float(marg.min()), float(marg.min() / (eps * K_use)), int(marg.size))
    return BarrierPair(t, y, lower, upper, float(eps), V, K_use, float(C1), (y1, y2),
                       float(t[0]), float(t[-1]), cert, {"inner": inner_ok, "outer": outer_ok})


# -- monitor ---------------------------------------------------------------


@dataclass
class MonitorResult:
    violated_at: Optional[tuple]
    max_excess: float
    checked: int

    @property
    def ok(self):
        return self.violated_at is None


def sandwich_monitor(test: FlowHistory, pair: BarrierPair, tol: Optional[float] = None) -> MonitorResult:
    """First (t, y) where ``test`` leaves [lower, upper] by more than ``tol``
    (default h^2 / 100); only the pair's times covered by ``test`` are checked."""
    if test.y.size != pair.y.size or np.max(np.abs(test.y - pair.y)) > 1e-12:
        raise GridMismatch("test flow and barriers live on different y grids")
    h = float(pair.y[1] - pair.y[0])
    tol = 0.01 * h * h if tol is None else tol
    excess = -math.inf
    checked = 0
    for k, t in enumerate(pair.times):
        if t < test.times[0] - 1e-12 or t > test.times[-1] + 1e-12:
            continue
        j = int(round((t - test.times[0]) / test.dt))
        if abs(test.times[j] - t) > 1e-9:
            raise GridMismatch(f"test flow has no slice at t={t}")
        r = test.radii[j]
        e = np.maximum(r - pair.upper[k], pair.lower[k] - r)
        checked += 1
        i = int(np.argmax(e))
        excess = max(excess, float(e[i]))
        if e[i] > tol:
            return MonitorResult((float(t), float(pair.y[i])), float(e[i]), checked)
    if checked == 0:
        raise GridMismatch("test flow does not overlap the barrier window")
    return MonitorResult(None, excess, checked)


def random_perturbation(rng: np.random.Generator, y, amplitude: float, modes: int = 6):
    """Smooth random profile with sup-norm exactly ``amplitude``."""
    L = y[-1] - y[0]
    s = (y - y[0]) / L
    p = np.zeros_like(y)
    for k in range(1, modes + 1):
        a, b = rng.normal(size=2) / k
        p += a * np.cos(k * np.pi * s) + b * np.sin(k * np.pi * s)
    return amplitude * p / np.abs(p).max()
