"""Hermite-Fourier eigenbasis of the drift operator L = Lap - (y/2) d_y + 1 on
the cylinder of radius sqrt(2), and Gaussian projections onto it.

Basis: h_m(y) trig(n theta) with h_m(y) = He_m(y / sqrt 2), eigenvalue
1 - m/2 - n^2/2.  Inner products use the weight e^{-|x|^2/4} on the
cylinder, |x|^2 = y^2 + 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import hermite_e as He
from scipy.interpolate import CubicSpline

from .errors import QuadratureUnderresolved
from .geometry import SQRT2, CylinderGraph, StripGrid

GAUSSIAN_AREA = 4.0 * SQRT2 * math.pi**1.5 * math.exp(-0.5)
DEFAULT_CUTOFF = (8, 4)
Y_QUAD_MIN = 12.0
N_GAUSS = 96


@dataclass(frozen=True, order=True)
class EigenIndex:
    m: int
    n: int = 0
    parity: str = "cos"

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ValueError("m and n must be non-negative")
        if self.parity not in ("cos", "sin"):
            raise ValueError("parity must be cos|sin")
        if self.n == 0 and self.parity != "cos":
            object.__setattr__(self, "parity", "cos")

    @property
    def eigenvalue(self):
        return eigenvalue(self)

    def __str__(self):
        return f"({self.m},{self.n},{self.parity})" if self.n else f"({self.m},0)"


def eigenvalue(idx: EigenIndex) -> Fraction:
    return Fraction(1) - Fraction(idx.m, 2) - Fraction(idx.n * idx.n, 2)


def hermite(m, y):
    """h_m(y) = He_m(y / sqrt 2)."""
    c = np.zeros(m + 1)
    c[m] = 1.0
    return He.hermeval(np.asarray(y, dtype=float) / SQRT2, c)


def eigenfunction_eval(idx: EigenIndex, y, theta=0.0):
    trig = np.cos if idx.parity == "cos" else np.sin
    return hermite(idx.m, y) * trig(idx.n * np.asarray(theta, dtype=float))


def basis_norm2(idx: EigenIndex):
    """Gaussian L^2 norm squared of the basis function on the cylinder."""
    ang = 1.0 if idx.n == 0 else 0.5
    return GAUSSIAN_AREA * math.factorial(idx.m) * ang


def basis(cutoff=DEFAULT_CUTOFF, n_theta: Optional[int] = None):
    """All indices with m <= M, n <= N (n < n_theta/2 when given)."""
    big_m, big_n = cutoff
    out = []
    for n in range(big_n + 1):
        if n_theta is not None and 2 * n >= n_theta:
            break
        for m in range(big_m + 1):
            out.append(EigenIndex(m, n, "cos"))
            if n > 0:
                out.append(EigenIndex(m, n, "sin"))
    return out


# -- quadrature ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussQuadrature:
    """Gauss-Hermite nodes in y (weight e^{-y^2/4}) restricted to a strip."""

    y: np.ndarray
    w: np.ndarray

    @classmethod
    def for_strip(cls, y_min, y_max, n_nodes=N_GAUSS, y_quad_min=Y_QUAD_MIN):
        if y_min > -y_quad_min or y_max < y_quad_min:
            raise QuadratureUnderresolved(
                f"strip [{y_min}, {y_max}] does not cover |y| <= {y_quad_min}")
        x, w = He.hermegauss(n_nodes)
        y = SQRT2 * x
        keep = (y >= y_min) & (y <= y_max)
        # int f e^{-y^2/4} dy = sqrt2 * sum w_k f(sqrt2 x_k)
        return cls(y[keep], SQRT2 * w[keep])

    def surface_weights(self):
        """Weights for int_C f e^{-|x|^2/4} dA per unit of theta-mean."""
        return self.w * math.exp(-0.5) * SQRT2 * 2.0 * math.pi


def _values_at_nodes(values, y_grid, quad: GaussQuadrature):
    spline = CubicSpline(y_grid, values, axis=0, bc_type="not-a-knot")
    return spline(quad.y)


def _theta_moment(vals, theta, idx: EigenIndex):
    trig = np.cos if idx.parity == "cos" else np.sin
    return (vals * trig(idx.n * theta)[None, :]).mean(axis=1)


@dataclass
class SpectralCoeffs:
    cutoff: Tuple[int, int]
    coeffs: Dict[EigenIndex, float] = field(default_factory=dict)
    residual_norm: float = 0.0
    total_norm: float = 0.0

    def __getitem__(self, key):
        if not isinstance(key, EigenIndex):
            key = EigenIndex(*key)
        return self.coeffs.get(key, 0.0)

    def items(self):
        return sorted(self.coeffs.items())

    def parseval_defect(self):
        s = sum(c * c * basis_norm2(k) for k, c in self.coeffs.items())
        return s + self.residual_norm**2 - self.total_norm**2

    def synthesize(self, y, theta):
        y = np.asarray(y, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros((y.size, theta.size))
        for k, c in self.coeffs.items():
            out += c * eigenfunction_eval(k, y[:, None], theta[None, :])
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "parity", "lambda", "coeff"])
            for k, c in self.items():
                w.writerow([k.m, k.n, k.parity, f"{float(eigenvalue(k)):.17g}", f"{c:.17g}"])

    @classmethod
    def from_csv(cls, path):
        out = cls(cutoff=(0, 0))
        mm = nn = 0
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                k = EigenIndex(int(rec["m"]), int(rec["n"]), rec["parity"])
                out.coeffs[k] = float(rec["coeff"])
                mm, nn = max(mm, k.m), max(nn, k.n)
        out.cutoff = (mm, nn)
        return out


def project(v, grid, cutoff=DEFAULT_CUTOFF, y_quad_min=Y_QUAD_MIN, n_nodes=N_GAUSS) -> SpectralCoeffs:
    """Gaussian projection of grid values onto the basis up to ``cutoff``.

    ``grid`` is a StripGrid or a CylinderGraph (its strip is used; values
    are always integrated on the cylinder itself).
    """
    if isinstance(grid, CylinderGraph):
        grid = grid.grid
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != grid.shape:
        raise ValueError(f"values shape {v.shape} does not match grid {grid.shape}")
    quad = GaussQuadrature.for_strip(grid.y_min, grid.y_max, n_nodes, y_quad_min)
    at = _values_at_nodes(v, grid.y, quad)
    sw = quad.surface_weights()
    theta = grid.theta
    out = SpectralCoeffs(tuple(cutoff))
    for k in basis(cutoff, grid.n_theta):
        mom = _theta_moment(at, theta, k)
        out.coeffs[k] = float(np.sum(sw * mom * hermite(k.m, quad.y)) / basis_norm2(k))
    rem = at - out.synthesize(quad.y, theta)
    out.residual_norm = math.sqrt(max(float(np.sum(sw * (rem**2).mean(axis=1))), 0.0))
    out.total_norm = math.sqrt(max(float(np.sum(sw * (at**2).mean(axis=1))), 0.0))
    return out


def synthesize(coeffs: SpectralCoeffs, grid: StripGrid):
    return coeffs.synthesize(grid.y, grid.theta)


def gram_matrix(indices: Iterable[EigenIndex], grid: Optional[StripGrid] = None, n_nodes=N_GAUSS):
    """Normalized Gram matrix of basis functions under the projection quadrature."""
    idx = list(indices)
    if grid is None:
        grid = StripGrid(-16.0, 16.0, 321, 16)
    quad = GaussQuadrature.for_strip(grid.y_min, grid.y_max, n_nodes)
    sw = quad.surface_weights()
    th = grid.theta
    cols = [eigenfunction_eval(k, quad.y[:, None], th[None, :]) / math.sqrt(basis_norm2(k)) for k in idx]
    g = np.empty((len(idx), len(idx)))
    for i, a in enumerate(cols):
        for j, b in enumerate(cols):
            g[i, j] = np.sum(sw * (a * b).mean(axis=1))
    return g


# -- discrete operator -----------------------------------------------------


def lc_block_matrix(grid: StripGrid, n: int):
    """Finite-difference L restricted to the angular frequency n.

    Acts on interior y-values; the end values are eliminated through the
    quadratic extrapolation closure.  The theta part uses the discrete
    symbol of the periodic second difference.
    """
    y = grid.y
    h = grid.h_y
    ny = grid.n_y
    if grid.n_theta > 1:
        ht = grid.h_theta
        sym = (2.0 * math.cos(n * ht) - 2.0) / ht**2
    else:
        if n:
            raise ValueError("axisymmetric grid has only n = 0")
        sym = 0.0
    a = np.zeros((ny, ny))
    i = np.arange(1, ny - 1)
    a[i, i - 1] = 1.0 / h**2 + y[i] / (4.0 * h)
    a[i, i + 1] = 1.0 / h**2 - y[i] / (4.0 * h)
    a[i, i] = -2.0 / h**2 + 1.0 + 0.5 * sym
    b = a[1:-1, 1:-1].copy()
    b[0, 0:3] += a[1, 0] * np.array([3.0, -3.0, 1.0])
    b[-1, -3:] += a[-2, -1] * np.array([1.0, -3.0, 3.0])
    return b


def discrete_eigenvalues(grid: StripGrid, n: int, count: int = 6):
    """Largest ``count`` eigenvalues (by real part) of the n-th block."""
    ev = sla.eigvals(lc_block_matrix(grid, n))
    ev = ev[np.argsort(-ev.real)]
    return ev[:count].real


def discrete_eigenvalue(grid: StripGrid, idx: EigenIndex):
    """Eigenvalue of the discretized operator closest to the exact one for ``idx``."""
    ev = discrete_eigenvalues(grid, idx.n, count=idx.m + 6)
    target = float(eigenvalue(idx))
    return float(ev[np.argmin(np.abs(ev - target))])
