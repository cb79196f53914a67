"""Seed perturbations, spacetime transformations of rescaled flows,
Jacobi-field fits, the escape experiment, near-threshold data by bisection,
and the separation / covering audit."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.spatial.transform import Rotation

from .errors import (ChartExit, DegenerateFit, HypothesisFailed, LostGraphicality, NoSignChange,
                     NonGraphical, TimeShiftTooLarge)
from .geometry import (SQRT2, CylinderGraph, FlowState, FrameTag, StripGrid, c2_size,
                       domain_radius)
from .metrics import ScheduleParams, distance_to_cylinder, gaussian_norm, radius_schedule

R1_DEFAULT = 8.0


# -- seed ------------------------------------------------------------------


def cutoff(rho, R0):
    """C^2 ramp: 1 for rho <= R0-1, 0 for rho >= R0.

    chi = 1 - s + sin(2 pi s) / (2 pi) on the ramp, so chi' and chi''
    vanish at both ends.
    """
    rho = np.asarray(rho, dtype=float)
    s = np.clip(rho - (R0 - 1.0), 0.0, 1.0)
    return 1.0 - s + np.sin(2.0 * np.pi * s) / (2.0 * np.pi)


def apply_seed_perturbation(state: FlowState, a: float, R0: float = 10.0) -> FlowState:
    """v <- v + a * chi_{R0}(|x|) * y."""
    if a == 0:
        return FlowState(state.graph, state.frame, state.time, state.params)
    g = state.graph
    seed = a * cutoff(g.position_norm(), R0) * g.y[:, None]
    if abs(a) * R0 >= SQRT2:
        raise NonGraphical(f"seed amplitude |a| R0 = {abs(a) * R0:.3g} leaves the radial chart")
    return FlowState(g.with_values(g.values + seed), state.frame, state.time, state.params)


# -- spacetime transforms --------------------------------------------------


@dataclass(frozen=True)
class SpacetimeTransform:
    """Time shift s, translation x0, rotation exp(A) with axis orthogonal to y.

    A = [[0, -d2, d1], [d2, 0, 0], [-d1, 0, 0]] in (y, z1, z2) coordinates.
    """

    s: float = 0.0
    x0: tuple = (0.0, 0.0, 0.0)
    d1: float = 0.0
    d2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(c) for c in self.x0))

    @property
    def generator(self):
        return np.array([[0.0, -self.d2, self.d1], [self.d2, 0.0, 0.0], [-self.d1, 0.0, 0.0]])

    @property
    def Q(self):
        # rotation vector of the skew matrix above: (0, d1, d2)
        return Rotation.from_rotvec([0.0, self.d1, self.d2]).as_matrix()

    @property
    def rotation_size(self):
        return abs(self.d1) + abs(self.d2)

    @property
    def magnitude(self):
        return abs(self.x0[1]) + abs(self.x0[2]) + math.sqrt(abs(self.s)) + self.rotation_size

    def smallness(self, R, tau):
        return R * math.exp(tau) * abs(self.s) + math.exp(tau / 2) * np.linalg.norm(self.x0) + R * self.rotation_size

    def scaled(self, gamma):
        return SpacetimeTransform(gamma * self.s, tuple(gamma * c for c in self.x0), gamma * self.d1, gamma * self.d2)


def _radius_interpolant(g: CylinderGraph):
    r = g.radius
    if g.axisymmetric:
        spl = CubicSpline(g.y, r[:, 0])
        return lambda yy, th: spl(yy)
    # periodic extension by three columns each side
    th = g.theta
    nt = g.n_theta
    ext = np.concatenate([th[-3:] - 2 * np.pi, th, th[:3] + 2 * np.pi])
    rr = np.concatenate([r[:, -3:], r, r[:, :3]], axis=1)
    spl = RectBivariateSpline(g.y, ext, rr, kx=3, ky=3)
    return lambda yy, tt: spl.ev(yy, np.mod(tt, 2 * np.pi))


def transform_state(source, phi: SpacetimeTransform, tau: float, n_theta: Optional[int] = None,
                    R: Optional[float] = None, tol: float = 1e-13) -> FlowState:
    """Slice at ``tau`` of N = (1 - e^tau s)^{1/2} Q M_{tau'} + e^{tau/2} x0, tau' = tau - log(1 - e^tau s).

    ``source`` is either a callable tau' -> FlowState (the rescaled flow M)
    or a FlowState, which is then taken as a time-independent flow (e.g.
    the cylinder).  The result is re-sampled as a radial graph on the same
    strip by an exact root solve along each grid ray.
    """
    es = math.exp(tau) * phi.s
    if es >= 1.0:
        raise TimeShiftTooLarge(f"e^tau s = {es:.3g} >= 1")
    tau_src = tau - math.log1p(-es)
    base = source(tau_src) if callable(source) else source
    g = base.graph
    if R is None:
        R = domain_radius(g)
    bound = phi.smallness(R, tau)
    lam = math.sqrt(1.0 - es)
    shift = math.exp(tau / 2.0) * np.asarray(phi.x0)
    Q = phi.Q
    need_theta = phi.rotation_size > 0 or phi.x0[1] != 0 or phi.x0[2] != 0
    nt = n_theta if n_theta is not None else (g.n_theta if (g.n_theta > 1 or not need_theta) else 32)
    out_grid = StripGrid(g.y_min, g.y_max, g.n_y, nt)
    Y = np.broadcast_to(out_grid.y[:, None], out_grid.shape)
    TH = np.broadcast_to(out_grid.theta[None, :], out_grid.shape)
    r_of = _radius_interpolant(g)
    ct, st = np.cos(TH), np.sin(TH)
    h = g.h_y

    def residual(rho):
        P = np.stack([Y, rho * ct, rho * st], axis=-1) - shift
        X = (P @ Q) / lam  # Q^T (P - shift) / lam
        rx = np.hypot(X[..., 1], X[..., 2])
        ang = np.arctan2(X[..., 2], X[..., 1])
        return rx - r_of(X[..., 0], ang), X[..., 0]

    rho = np.array(r_of(Y, TH), dtype=float) * lam
    for _ in range(60):
        f, xy = residual(rho)
        if np.max(np.abs(f)) < tol:
            break
        dr = 1e-7 * np.maximum(rho, 1.0)
        f2, _ = residual(rho + dr)
        slope = (f2 - f) / dr
        if np.any(np.abs(slope) < 1e-8):
            raise ChartExit("ray tangent to the transformed surface")
        rho = rho - f / slope
        if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
            raise ChartExit("transformed surface is not a radial graph")
    f, xy = residual(rho)
    if np.max(np.abs(f)) > 1e3 * tol:
        raise ChartExit("root solve for the transformed radius did not converge")
    if np.any(xy < g.y_min - 2 * h) or np.any(xy > g.y_max + 2 * h):
        raise ChartExit("transformed strip samples outside the source strip")
    new = CylinderGraph(g.y_min, g.y_max, rho - SQRT2)
    out = FlowState(new, FrameTag("rescaled", base.frame.center), tau, base.params)
    out.params = base.params
    out.transform_bound = bound
    return out


# -- Jacobi fit --------------------------------------------------------------


JACOBI_NAMES = ("b", "c1", "c2", "d1", "d2")


@dataclass
class JacobiFit:
    b: float
    c1: float
    c2: float
    d1: float
    d2: float
    residual: float
    cond: float

    def as_dict(self):
        return {k: getattr(self, k) for k in JACOBI_NAMES + ("residual", "cond")}


def _ansatz(tau, grid: StripGrid):
    y = grid.y[:, None]
    th = grid.theta[None, :]
    z1 = SQRT2 * np.cos(th)
    z2 = SQRT2 * np.sin(th)
    one = np.ones(grid.shape)
    return [math.exp(tau) * one, math.exp(tau / 2) * z1 * one, math.exp(tau / 2) * z2 * one,
            z1 * y * one, z2 * y * one]


def jacobi_fit(series: Sequence[tuple], grid: Optional[StripGrid] = None, R: float = 8.0,
               max_cond: float = 1e10) -> JacobiFit:
    """Least-squares fit of b e^tau + (c1 z1 + c2 z2) e^{tau/2} + (d1 z1 + d2 z2) y.

    ``series`` holds (tau, values) pairs already divided by the transform
    size; values may be CylinderGraphs, in which case ``grid`` is optional.
    Inner products are Gaussian-weighted on B_R of the cylinder.
    """
    series = list(series)
    if grid is None:
        graphs = [v for _, v in series if isinstance(v, CylinderGraph)]
        if not graphs:
            raise ValueError("grid is required for raw value arrays")
        grid = graphs[0].grid
    series = [(t, v.values if isinstance(v, CylinderGraph) else v) for t, v in series]
    cyl = CylinderGraph(grid.y_min, grid.y_max, np.zeros(grid.shape))
    if R > domain_radius(cyl):
        R = domain_radius(cyl)
    xx = cyl.position_norm() ** 2
    w = np.where(xx < R * R, np.exp(-xx / 4.0), 0.0)
    wy = np.full(grid.n_y, grid.h_y)
    wy[0] = wy[-1] = 0.5 * grid.h_y
    wt = w * wy[:, None] * SQRT2 * grid.h_theta
    G = np.zeros((5, 5))
    rhs = np.zeros(5)
    vv = 0.0
    for tau, v in series:
        v = np.asarray(v, dtype=float).reshape(grid.shape)
        phis = _ansatz(tau, grid)
        for i, a in enumerate(phis):
            rhs[i] += np.sum(wt * a * v)
            for j, b in enumerate(phis):
                G[i, j] += np.sum(wt * a * b)
        vv += np.sum(wt * v * v)
    diag = np.sqrt(np.diag(G))
    if np.any(diag == 0):
        raise DegenerateFit("ansatz function vanishes on the grid (need n_theta >= 3)")
    Gn = G / np.outer(diag, diag)
    cond = float(np.linalg.cond(Gn))
    if not np.isfinite(cond) or cond > max_cond:
        raise DegenerateFit(f"ansatz Gram matrix condition {cond:.3g}")
    coef = np.linalg.solve(Gn, rhs / diag) / diag
    res2 = vv - 2 * coef @ rhs + coef @ G @ coef
    res = math.sqrt(max(res2, 0.0) / max(len(series), 1))
    return JacobiFit(*map(float, coef), residual=res, cond=cond)


def jacobi_series(source, phi: SpacetimeTransform, gamma: float, taus: Sequence[float],
                  n_theta: int = 16, central: bool = True):
    """Normalized differences (N_gamma - M) / gamma at the given times.

    With ``central`` the symmetric quotient (N_gamma - N_{-gamma}) / (2 gamma)
    is used, which removes the quadratic part of the response.
    """
    out = []
    for tau in taus:
        base = source(tau) if callable(source) else source
        plus = transform_state(source, phi.scaled(gamma), tau, n_theta=n_theta).graph.values
        if central:
            minus = transform_state(source, phi.scaled(-gamma), tau, n_theta=n_theta).graph.values
            v = (plus - minus) / (2.0 * gamma)
        else:
            bv = np.broadcast_to(base.graph.values, plus.shape)
            v = (plus - bv) / gamma
        out.append((tau, v))
    return out


# -- escape experiment -----------------------------------------------------


def synthetic_base(eta: float = 1e-4, y_max: float = 16.0, n_y: int = 321, m: int = 3) -> FlowState:
    """Cylinder plus a decaying Hermite mode: a near-degenerate rescaled base."""
    from .spectral import hermite
    g = CylinderGraph.from_function(lambda y, th: eta * hermite(m, y) * np.ones_like(th), -y_max, y_max, n_y)
    return FlowState(g, FrameTag("rescaled"), 0.0)


@dataclass
class EscapeReport:
    a: float
    eps: float
    conditions_log: list
    T_eps: Optional[int]
    T_bound: float
    crossing_bound_check: bool
    growth_exponent: float
    excluded_interval: float
    escape: list = field(default_factory=list)
    ceiling_log: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    D: list = field(default_factory=list)

    @property
    def escaped(self):
        return bool(self.escape) and all(e["escaped"] for e in self.escape)

    def to_dict(self):
        return {
            "a": self.a, "eps": self.eps, "conditions_log": self.conditions_log, "T_eps": self.T_eps,
            "T_bound": self.T_bound, "crossing_bound_check": self.crossing_bound_check,
            "growth_exponent": self.growth_exponent, "excluded_interval": self.excluded_interval,
            "escape": self.escape, "ceiling_log": self.ceiling_log, "params": self.params, "D": self.D,
            "escaped": self.escaped,
        }

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def _co_evolve(base: FlowState, pert: FlowState, tau_end: float, on_unit: Callable):
    from .flow import StepParams, stable_dt, step_rescaled
    grid = base.graph.grid
    params = base.params if isinstance(base.params, StepParams) else StepParams()
    b = FlowState(base.graph, base.frame, base.time, params)
    p = FlowState(pert.graph, pert.frame, pert.time, params)
    T = 0
    if on_unit(T, b, p) is False:
        return b, p
    while b.time < tau_end - 1e-9:
        r_min = min(float(b.graph.radius.min()), float(p.graph.radius.min()))
        dt0 = stable_dt(grid, r_min, params.dt_safety)
        n = int(math.ceil(1.0 / dt0))
        dt = 1.0 / n
        for _ in range(n):
            b = step_rescaled(b, dt)
            p = step_rescaled(p, dt)
        T += 1
        b.time = p.time = base.time + T
        if on_unit(T, b, p) is False:
            break
    return b, p


def run_escape_experiment(base: FlowState, a: float, params: ScheduleParams = ScheduleParams(),
                          R0: Optional[float] = None, delta1: float = 0.5, R1: float = R1_DEFAULT,
                          tau_max: float = 30.0, n_offsets: int = 5, strict: bool = True) -> EscapeReport:
    """Co-evolve base and seeded flows and track D(T) = ||v||_{B_R(T)} at integer T.

    Conditions (i)-(iv) are logged at every T; T_eps is the last T at which
    (iv) holds.  Translated flows with |e^{(T_eps+2)/2} y0| < r1 are then
    tested for growth of the offset Gaussian distance over [T_eps+1, T_eps+2].
    """
    if not base.rescaled:
        raise ValueError("base flow must be in the rescaled frame")
    R0 = params.R0 if R0 is None else R0
    pert = apply_seed_perturbation(base, a, R0)
    k1, k4 = params.kappa1, params.kappa4
    rows = []
    D = []
    slices = {}

    def ball(T, g):
        return min(float(radius_schedule(T, params)), domain_radius(g))

    def on_unit(T, b, p):
        diff = p.graph.values - b.graph.values
        D.append(gaussian_norm(diff, b.graph, ball(T, b.graph)))
        slices[T] = p.graph
        rows.append({"T": T, "D": D[-1], "graph_c2": _diff_c2(b, p, ball(T, b.graph)),
                     "sup_v": float(np.abs(diff).max())})
        if T == 0 and D[0] <= 0.0:
            return False
        if len(D) >= 2 and T >= 1:
            # stop two units after (iv) first fails
            eps_ = D[0] / params.c1
            fails = [t for t, d in enumerate(D) if d > math.sqrt(params.eta0) * math.exp(-(0.5 - k1) * t)]
            if fails and T >= fails[0] + 1:
                return False
        return T < tau_max

    _co_evolve(base, pert, tau_max, on_unit)
    if D[0] <= 0.0:
        raise HypothesisFailed("seed has zero size: D(0) = 0", condition="iii", T=0)
    eps = D[0] / params.c1
    if len(D) < 2 or D[1] < math.exp(0.5 - k4) * D[0]:
        g1 = math.log(D[1] / D[0]) if len(D) >= 2 and D[1] > 0 else float("nan")
        raise HypothesisFailed(f"growth hypothesis fails: log D(1)/D(0) = {g1:.4g}", condition="growth", T=1)

    log = []
    T_eps = None
    for T in range(len(D)):
        c_i = rows[T]["graph_c2"] < delta1
        c_ii = T + 1 < len(D) and D[T + 1] >= math.exp(params.lam15) * D[T]
        c_iii = D[T] >= params.c1 * eps * math.exp((0.5 - k4) * T) * (1 - 1e-12)
        c_iv = D[T] <= math.sqrt(params.eta0) * math.exp(-(0.5 - k1) * T)
        log.append({"T": T, "D": D[T], "i": bool(c_i), "ii": bool(c_ii), "iii": bool(c_iii), "iv": bool(c_iv)})
        if T_eps is None and not c_iv:
            T_eps = T - 1
    if T_eps is None or T_eps < 0:
        if strict:
            raise HypothesisFailed("condition (iv) never holds or never fails within tau_max",
                                   condition="iv", T=0 if T_eps is None else T_eps)
    if strict:
        for row in log[: (T_eps or 0) + 1]:
            for key in ("i", "ii", "iii"):
                if not row[key]:
                    raise HypothesisFailed(f"condition ({key}) fails at T={row['T']}", condition=key, T=row["T"])

    ratio = math.sqrt(params.eta0) / (params.c1 * eps)
    T_bound = math.log(ratio) / (1.0 - k4 - k1) if ratio > 0 else float("nan")
    Tfit = np.arange(0, (T_eps or 0) + 1)
    growth = float(np.polyfit(Tfit, np.log(np.asarray(D)[Tfit]), 1)[0]) if len(Tfit) >= 2 else float("nan")

    escape = []
    if T_eps is not None and T_eps + 2 in slices:
        r1 = R1**-2
        ymax = r1 * math.exp(-(T_eps + 2) / 2.0)
        for y0 in np.linspace(-ymax, ymax, n_offsets + 2)[1:-1]:
            d = []
            for T in (T_eps + 1, T_eps + 2):
                off = (-math.exp(T / 2.0) * y0, 0.0, 0.0)
                d.append(distance_to_cylinder(slices[T], offset=off))
            ratio_g = d[1] / d[0] if d[0] > 0 else float("inf")
            escape.append({"y0": float(y0), "d_next": d[0], "d_last": d[1], "growth": math.log(ratio_g),
                           "escaped": bool(ratio_g >= math.exp(params.lam1))})

    ceiling = []
    for T, row in enumerate(rows):
        bound = R0 * float(radius_schedule(T, params)) * eps * math.exp(T)
        if bound >= 0.01:
            break
        ceiling.append({"T": T, "bound": bound, "sup_v": row["sup_v"], "holds": row["sup_v"] <= bound})

    return EscapeReport(
        a=float(a), eps=eps, conditions_log=log, T_eps=T_eps, T_bound=T_bound,
        crossing_bound_check=bool(T_eps is not None and T_eps <= T_bound + 1.0),
        growth_exponent=growth, excluded_interval=eps**0.75, escape=escape, ceiling_log=ceiling,
        params=params.to_dict(), D=D)


def _diff_c2(b: FlowState, p: FlowState, R):
    g = b.graph
    diff = CylinderGraph(g.y_min, g.y_max, p.graph.values - g.values)
    size = c2_size(diff)
    inside = g.position_norm() < R
    return float(size[inside].max()) if inside.any() else 0.0


# -- near-threshold data ---------------------------------------------------


def pinch_verdict(state: FlowState, center_tol: float = 0.5, t_max: float = 10.0, floor: float = 0.05):
    """Evolve the unrescaled flow until the thinnest neck reaches ``floor``;
    'pinch' if it sits at y ~ 0."""
    from .flow import StopCondition, evolve
    res = evolve(state, StopCondition(tau_max=state.time + t_max, min_radius_floor=floor), sample_dt=t_max)
    g = res.state.graph
    i = np.unravel_index(np.argmin(g.radius), g.radius.shape)[0]
    where = float(g.y[i])
    kind = "pinch" if abs(where) <= center_tol else "no-pinch"
    return kind, {"t": res.state.time, "y": where, "stop": res.stop_reason}


@dataclass
class BisectionResult:
    a_star: float
    lo: float
    hi: float
    verdict_lo: str
    verdict_hi: str
    evaluations: int


def neck_location_bisection(family: Callable[[float], FlowState], interval, tol: float,
                            verdict: Callable = pinch_verdict) -> BisectionResult:
    lo, hi = float(interval[0]), float(interval[1])
    v_lo = verdict(family(lo))[0]
    v_hi = verdict(family(hi))[0]
    n = 2
    if v_lo == v_hi:
        raise NoSignChange(f"both ends give {v_lo!r}")
    while hi - lo > tol:  # tol >= width: no interior evaluation
        mid = 0.5 * (lo + hi)
        v = verdict(family(mid))[0]
        n += 1
        if v == v_lo:
            lo = mid
        else:
            hi = mid
    return BisectionResult(0.5 * (lo + hi), lo, hi, v_lo, v_hi, n)


def dumbbell_family(y_max=8.0, n_y=161, bulb=2.0, outer=1.0):
    """neck radius -> unrescaled state; the outer tube competes with the central neck."""
    from .flow import dumbbell

    def make(neck):
        y = np.linspace(-y_max, y_max, n_y)
        r = dumbbell(y, neck=neck, bulb=bulb, outer=outer)
        return FlowState(CylinderGraph.from_radius(r[:, None], -y_max, y_max), FrameTag("unrescaled"), 0.0)

    return make


# -- separation / covering audit -------------------------------------------


@dataclass
class AuditReport:
    eps: float
    max_count: int
    count_bound: int
    measure: float
    measure_bound: float
    violations: list

    @property
    def ok(self):
        return not self.violations and self.max_count <= self.count_bound and self.measure <= self.measure_bound + 1e-15

    def to_dict(self):
        d = dict(self.__dict__)
        d["violations"] = [list(p) for p in self.violations]
        d["ok"] = self.ok
        return d


def separation_audit(pairs, eps: float, exponent: float = 2.0 / 3.0) -> AuditReport:
    """Check |alpha_i - alpha_j| >= |a_i - a_j|^{2/3} on all pairs and count an
    eps-separated subset in a (greedy, which is maximal on the line)."""
    if not pairs:
        return AuditReport(eps, 0, 0, 0.0, 0.0, [])
    arr = np.asarray(pairs, dtype=float)
    a, al = arr[:, 0], arr[:, 1]
    da = np.abs(a[:, None] - a[None, :])
    dal = np.abs(al[:, None] - al[None, :])
    bad = dal < da**exponent
    iu = np.triu_indices(len(a), 1)
    viol = [(int(i), int(j)) for i, j in zip(*iu) if bad[i, j]]
    order = np.argsort(a, kind="stable")
    chosen = []
    for k in order:
        if not chosen or a[k] - a[chosen[-1]] > eps:
            chosen.append(int(k))
    count = len(chosen)
    bound = math.ceil(eps ** (-exponent) - 1e-12)
    return AuditReport(eps, count, bound, 2.0 * eps * count, 2.0 * eps ** (1.0 - exponent), viol)


def lattice_pairs(t: float, s: float, n: int):
    """a_i = i t, alpha_i = i s; obeys the separation predicate when s >= t^{2/3}."""
    return [(i * t, i * s) for i in range(n)]


# -- sweeps ----------------------------------------------------------------


def parse_a_grid(spec: str):
    """'lo:hi:log10' -> decades from lo to hi; 'lo:hi:n' -> n log-spaced values."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"a-grid must be lo:hi:step, got {spec!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if lo <= 0 or hi <= 0 or hi < lo:
        raise ValueError("a-grid bounds must be positive with lo <= hi")
    if parts[2] == "log10":
        k0, k1 = math.log10(lo), math.log10(hi)
        n = int(round(k1 - k0)) + 1
        return [float(10 ** (k0 + i)) for i in range(n)]
    n = int(parts[2])
    return [float(x) for x in np.geomspace(lo, hi, n)]


def param_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


def write_aggregate(reports: Sequence[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "T_eps", "exponent", "verdict"])
        for r in sorted(reports, key=lambda r: r["a"]):
            t = r.get("T_eps")
            w.writerow([f"{r['a']:.17g}", "" if t is None else t,
                        "" if r.get("growth_exponent") is None else f"{r['growth_exponent']:.17g}",
                        r.get("verdict", "")])
