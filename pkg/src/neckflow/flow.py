"""Time stepping for rescaled / unrescaled MCF of cylinder graphs.

The radial graph r = u(y, theta) moves by

    u_t   = -Q H                                   (unrescaled)
    u_tau = -Q H + (u - y u_y) / 2                 (rescaled)

with Q = sqrt(1 + u_y^2 + (u_theta/u)^2); its linearization at u = sqrt(2)
is  v_tau = v_yy + v_thth/2 - y v_y/2 + v.  The strip ends are closed by
quadratic extrapolation (third difference zero).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import NonGraphical, StepRejected
from .geometry import SQRT2, CylinderGraph, FlowState, FrameTag, StripGrid, graphical_radius

log = logging.getLogger(__name__)

__all__ = [
    "StepParams", "StopCondition", "FlowState", "EvolveResult",
    "step_rescaled", "step_unrescaled", "step_linearized", "evolve", "evolve_linearized",
    "close_ends", "stable_dt", "dumbbell", "shoot_rescaled", "ShootingRun",
]


@dataclass(frozen=True)
class StepParams:
    dt_init: Optional[float] = None
    dt_safety: float = 0.25
    scheme: str = "rk4"
    boundary: str = "quadratic"
    max_halvings: int = 40

    def __post_init__(self):
        if self.scheme not in ("rk4", "imex"):
            raise ValueError(f"scheme must be rk4|imex, got {self.scheme!r}")
        if not 0 < self.dt_safety <= 0.25:
            raise ValueError("dt_safety must lie in (0, 0.25]")
        if self.dt_init is not None and self.dt_init <= 0:
            raise ValueError("dt_init must be positive")
        if not 0 <= self.max_halvings <= 40:
            raise ValueError("max_halvings must lie in [0, 40]")


@dataclass(frozen=True)
class StopCondition:
    tau_max: Optional[float] = None
    min_radius_floor: Optional[float] = 1e-3 * SQRT2
    graph_delta: Optional[float] = None
    graph_radius: Optional[float] = None
    max_steps: Optional[int] = None
    max_radius: Optional[float] = None

    def __post_init__(self):
        if all(getattr(self, k) is None for k in ("tau_max", "min_radius_floor", "graph_delta", "max_steps", "max_radius")):
            raise ValueError("at least one stop condition must be set")
        if (self.graph_delta is None) != (self.graph_radius is None):
            raise ValueError("graph_delta and graph_radius go together")


def close_ends(u):
    """Quadratic continuation at both strip ends (in place)."""
    u[0] = 3.0 * u[1] - 3.0 * u[2] + u[3]
    u[-1] = 3.0 * u[-2] - 3.0 * u[-3] + u[-4]
    return u


def stable_dt(grid: StripGrid, r_min: float, safety: float = 0.25, linear: bool = False):
    """Explicit step bound ~ safety * h^2, tightened by thin necks and the drift."""
    inv = 1.0 / grid.h_y**2
    ymax = max(abs(grid.y_min), abs(grid.y_max))
    inv += ymax / (4.0 * grid.h_y)
    if linear:
        if grid.n_theta > 1:
            inv += 0.5 / grid.h_theta**2
        inv += 1.0
    else:
        if grid.n_theta > 1:
            inv += 1.0 / (r_min * grid.h_theta) ** 2
        inv += 1.0 / r_min**2 + 0.5
    return safety / inv


def _rk4(u, dt, rate):
    k1 = rate(u)
    u2 = close_ends(u + 0.5 * dt * k1)
    k2 = rate(u2)
    u3 = close_ends(u + 0.5 * dt * k2)
    k3 = rate(u3)
    u4 = close_ends(u + dt * k3)
    k4 = rate(u4)
    return close_ends(u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def _graph_rate(grid: StripGrid, rescaled: bool):
    y = grid.y
    h_y, h_t = grid.h_y, grid.h_theta
    buf = np.empty(grid.shape)

    def rate(u):
        if np.any(u <= 0.0) or not np.all(np.isfinite(u)):
            raise NonGraphical("radius left the chart during a stage")
        return kernels.graph_rhs(u, y, h_y, h_t, rescaled, out=buf).copy()

    return rate


def _imex_step(u, dt, grid: StripGrid, rescaled: bool):
    """Linearly implicit Euler: frozen second-derivative terms implicit, rest explicit."""
    rate = _graph_rate(grid, rescaled)
    ny, nt = grid.shape
    h, ht = grid.h_y, grid.h_theta
    u_y = np.zeros_like(u)
    u_y[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    if nt > 1:
        u_t = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) / (2 * ht)
    else:
        u_t = np.zeros_like(u)
    q2 = (u_t / u) ** 2
    qq = 1.0 + u_y**2 + q2
    a_yy = (1.0 + q2) / qq
    a_tt = (1.0 + u_y**2) / (qq * u**2)
    idx = np.arange(ny * nt).reshape(ny, nt)
    rows, cols, vals = [], [], []

    def add(r_, c_, v_):
        rows.append(r_.ravel())
        cols.append(c_.ravel())
        vals.append(np.broadcast_to(v_, r_.shape).ravel())

    inner = idx[1:-1]
    ai = a_yy[1:-1] / h**2
    add(inner, idx[2:], ai)
    add(inner, idx[:-2], ai)
    add(inner, inner, -2.0 * ai)
    if nt > 1:
        at = a_tt[1:-1] / ht**2
        add(inner, np.roll(idx, -1, 1)[1:-1], at)
        add(inner, np.roll(idx, 1, 1)[1:-1], at)
        add(inner, inner, -2.0 * at)
    dmat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ny * nt, ny * nt))
    explicit = rate(u) - (dmat @ u.ravel()).reshape(ny, nt)
    rhs = u + dt * explicit
    # boundary rows of dmat are empty, so the identity supplies the 1 of the closure row
    b = rhs.ravel().copy()
    ends = np.concatenate([idx[0], idx[-1]])
    nb = [idx[1], idx[-2]], [idx[2], idx[-3]], [idx[3], idx[-4]]
    crow = np.concatenate([ends] * 3)
    ccol = np.concatenate([np.concatenate(c) for c in nb])
    cval = np.repeat([-3.0, 3.0, -1.0], ends.size)
    closure = sp.csr_matrix((cval, (crow, ccol)), shape=dmat.shape)
    a = sp.eye(ny * nt, format="csr") - dt * dmat + closure
    b[ends] = 0.0
    out = spla.spsolve(a.tocsc(), b).reshape(ny, nt)
    return out


def _advance(state: FlowState, dt: float, rescaled: bool) -> FlowState:
    if rescaled != state.rescaled:
        raise ValueError(f"state frame is {state.frame.kind}")
    params = state.params if isinstance(state.params, StepParams) else StepParams()
    g = state.graph
    u = np.array(g.radius)
    if params.scheme == "imex":
        new = _imex_step(u, dt, g.grid, rescaled)
    else:
        new = _rk4(u, dt, _graph_rate(g.grid, rescaled))
    if not np.all(np.isfinite(new)):
        raise StepRejected("non-finite values after step", time=state.time)
    if np.any(new <= 0.0):
        raise NonGraphical("neck pinched: radius <= 0 after step")
    return FlowState(CylinderGraph(g.y_min, g.y_max, new - SQRT2), state.frame, state.time + dt, state.params)


def step_rescaled(state: FlowState, dt: float) -> FlowState:
    return _advance(state, dt, True)


def step_unrescaled(state: FlowState, dt: float) -> FlowState:
    return _advance(state, dt, False)


def step_linearized(v, dt: float, grid: StripGrid):
    """One RK4 step of  v_tau = L v  on the strip."""
    v = np.array(v, dtype=float)
    y = grid.y

    def rate(w):
        return kernels.lc_apply(w, y, grid.h_y, grid.h_theta)

    out = _rk4(close_ends(v), dt, rate)
    if not np.all(np.isfinite(out)):
        raise StepRejected("non-finite values in linearized step")
    return out


def evolve_linearized(v0, grid: StripGrid, tau_end: float, sample_times: Sequence[float] = (),
                      safety: float = 0.25, dt: Optional[float] = None):
    """Integrate the linear flow to ``tau_end``; returns (v_end, {t: v(t)})."""
    v = close_ends(np.array(v0, dtype=float))
    dt_max = dt or stable_dt(grid, SQRT2, safety, linear=True)
    marks = sorted(set(float(t) for t in sample_times if 0 <= t <= tau_end))
    samples = {}
    tau = 0.0
    for mark in marks + [tau_end]:
        if abs(mark - tau) < 1e-14 and mark in marks:
            samples[mark] = v.copy()
            continue
        n = max(1, int(math.ceil((mark - tau) / dt_max - 1e-12)))
        h = (mark - tau) / n
        for _ in range(n):
            v = step_linearized(v, h, grid)
        tau = mark
        if mark in marks:
            samples[mark] = v.copy()
    return v, samples


@dataclass
class EvolveResult:
    trace: "object"
    state: FlowState
    stop_reason: str
    steps: int
    snapshots: list = field(default_factory=list)


def _min_radius(state: FlowState):
    return float(state.graph.radius.min())


def _check_stop(state, stop: StopCondition, steps, t0):
    if stop.min_radius_floor is not None and _min_radius(state) < stop.min_radius_floor:
        return "min_radius"
    if stop.max_radius is not None and float(state.graph.radius.max()) > stop.max_radius:
        return "chart_exit"
    if stop.tau_max is not None and state.time >= stop.tau_max - 1e-12:
        return "tau_max"
    if stop.max_steps is not None and steps >= stop.max_steps:
        return "max_steps"
    return None


def evolve(state: FlowState, stop: StopCondition, observers: Sequence[Callable] = (),
           sample_dt: float = 1.0, keep_snapshots: bool = False, schedule=None):
    """Step until a stop condition fires, sampling observers every ``sample_dt``.

    Observers receive the state and return a dict merged into the trace row.
    The default row (time, distance, norms, radii) is always recorded.
    """
    from .metrics import DistanceTrace, trace_row

    params = state.params if isinstance(state.params, StepParams) else StepParams()
    if not isinstance(state.params, StepParams):
        state = replace(state, params=params)
    trace = DistanceTrace(schedule=schedule)
    snaps = []
    if stop.max_steps is not None and stop.max_steps <= 0:
        return EvolveResult(trace, state, "max_steps", 0, snaps)

    def record(st):
        row = trace_row(st, schedule)
        for obs in observers:
            row.update(obs(st))
        trace.append(row)
        if keep_snapshots:
            snaps.append(st)

    step = step_rescaled if state.rescaled else step_unrescaled
    steps = 0
    next_sample = state.time
    reason = None
    while True:
        if state.time >= next_sample - 1e-12:
            record(state)
            next_sample = state.time + sample_dt
            if stop.graph_delta is not None:
                cert = graphical_radius(state.graph, stop.graph_delta)
                if cert.radius < stop.graph_radius:
                    reason = "graphicality"
        reason = reason or _check_stop(state, stop, steps, None)
        if reason:
            break
        dt = stable_dt(state.graph.grid, _min_radius(state), params.dt_safety)
        if params.scheme == "imex":
            dt = 20.0 * dt
        if params.dt_init is not None:
            dt = min(dt, params.dt_init)
        dt = min(dt, next_sample - state.time)
        if stop.tau_max is not None:
            dt = min(dt, stop.tau_max - state.time)
        new = None
        for _ in range(params.max_halvings + 1):
            try:
                new = step(state, dt)
                break
            except (NonGraphical, StepRejected):
                dt *= 0.5
        if new is None:
            if stop.min_radius_floor is not None and _min_radius(state) < 4 * stop.min_radius_floor:
                reason = "min_radius"
                break
            raise StepRejected(f"step rejected after {params.max_halvings} halvings", time=state.time)
        state = new
        steps += 1
    if trace.rows and trace.rows[-1]["tau"] != state.time:
        record(state)
    trace.stop_reason = reason
    trace.finalize()
    return EvolveResult(trace, state, reason, steps, snaps)


# -- initial data and shooting ---------------------------------------------


def dumbbell(y, neck=1.0, bulb=2.0, outer=None, a=1.5, c=4.5, width=0.5):
    """Symmetric neck profile: radius ``neck`` at y=0 rising to ``bulb`` past |y|=a.

    With ``outer`` set, the radius drops back to ``outer`` beyond |y|=c, so
    the surface has a second pair of necks that compete with the central one.
    """
    y = np.abs(np.asarray(y, dtype=float))
    rise = 0.5 * (np.tanh((y - a) / width) + 1.0)
    r = neck + (bulb - neck) * rise
    if outer is not None:
        r = r - (bulb - outer) * 0.5 * (np.tanh((y - c) / width) + 1.0)
    return r


def _neck_outcome(v, grid, tau, dur, band, params, samples=None, sample_dt=0.5):
    """Run the rescaled flow from (v, tau); +1 if the neck value rises by
    more than ``band``, -1 if it falls by more (or pinches), 0 otherwise."""
    i0 = int(np.argmin(np.abs(grid.y)))
    v0 = v[i0, 0]
    st = FlowState(CylinderGraph(grid.y_min, grid.y_max, v), FrameTag("rescaled"), tau, params)
    n_seg = max(1, int(round(dur / sample_dt))) if samples is not None else 1
    n = max(1, int(math.ceil(dur / stable_dt(grid, 1.0, params.dt_safety) / n_seg))) * n_seg
    dt = dur / n
    every = n // n_seg
    for k in range(n):
        try:
            st = step_rescaled(st, dt)
        except NonGraphical:
            return -1, st
        if samples is not None and (k + 1) % every == 0:
            samples.append(st)
        w = st.graph.values[i0, 0]
        if w > v0 + band:
            return 1, st
        if w < v0 - band:
            return -1, st
    return 0, st


@dataclass
class ShootingRun:
    states: list
    shifts: list
    stop_reason: str

    @property
    def final(self):
        return self.states[-1]


def shoot_rescaled(state: FlowState, tau_end: float, segment: float = 2.0, lookahead: float = 8.0,
                   band: float = 0.1, width: float = 0.3, tol: float = 1e-15, sample_dt: float = 0.5,
                   callback=None) -> ShootingRun:
    """Follow a rescaled neckpinch by tuning the singular time segment by segment.

    The rescaled flow about the true singular time is unstable only in the
    constant mode (eigenvalue 1; the y mode is killed by symmetry).  At the
    start of each segment a constant c is added, bisected so that the neck
    neither collapses nor opens over ``lookahead``; to first order this is a
    shift of the rescaling time.  The chosen shifts are recorded.
    """
    if not state.rescaled:
        raise ValueError("shooting runs in the rescaled frame")
    params = state.params if isinstance(state.params, StepParams) else StepParams()
    grid = state.graph.grid
    v = np.array(state.graph.values)
    tau = state.time
    states = [FlowState(state.graph, state.frame, tau, params)]
    shifts = []
    reason = "tau_max"
    while tau < tau_end - 1e-9:
        lo, hi = -width, width
        for _ in range(40):
            s_lo = _neck_outcome(v + lo, grid, tau, lookahead, band, params)[0]
            s_hi = _neck_outcome(v + hi, grid, tau, lookahead, band, params)[0]
            if s_lo < 0 < s_hi:
                break
            lo, hi = 4.0 * lo, 4.0 * hi
        else:
            reason = "no_bracket"
            break
        c = 0.0
        while hi - lo > tol:
            c = 0.5 * (lo + hi)
            sgn = _neck_outcome(v + c, grid, tau, lookahead, band, params)[0]
            if sgn > 0:
                hi = c
            elif sgn < 0:
                lo = c
            else:
                break
        width = max(8.0 * abs(c), 1e-7)
        seg = min(segment, tau_end - tau)
        got = []
        sgn, st = _neck_outcome(v + c, grid, tau, seg, np.inf, params, got, sample_dt)
        states.extend(got)
        shifts.append(c)
        if abs(st.time - (tau + seg)) > 1e-6:
            reason = "min_radius"
            break
        v = np.array(st.graph.values)
        tau = st.time
        if callback is not None:
            callback(st)
    return ShootingRun(states, shifts, reason)
