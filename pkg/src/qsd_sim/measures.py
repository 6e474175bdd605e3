"""Empirical-measure analytics.

Exact 1-d Wasserstein-1 distances (between weighted empirical laws, and
between an empirical law and a closed-form or tabulated reference), a
sliced surrogate for d >= 2, test-function integration, reference
quasistationary laws, and Skorokhod-type path reflection maps.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .dynamics import RngStream

__all__ = [
    "EmpiricalLaw",
    "ReferenceQsd",
    "BmIntervalQsd",
    "NumericTableQsd",
    "dirichlet_qsd_1d",
    "wasserstein1_1d",
    "wasserstein1_sliced",
    "integrate",
    "reflect_path_pos",
    "reflect_path_neg",
    "MeasureError",
]


class MeasureError(ValueError):
    pass


class EmpiricalLaw:
    """Weighted empirical probability measure.

    In one dimension atoms are kept sorted with their cumulative weights; in
    higher dimension the raw point cloud is stored.
    """

    def __init__(self, points: np.ndarray, weights: Optional[np.ndarray] = None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            self.d = 1
        elif pts.ndim == 2:
            self.d = pts.shape[1]
        else:
            raise MeasureError("points must be a vector or an (n, d) array")
        n = pts.shape[0]
        if n == 0:
            raise MeasureError("empty sample")
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (n,) or np.any(w < 0):
                raise MeasureError("weights must be nonnegative, one per point")
            tot = w.sum()
            if tot <= 0:
                raise MeasureError("total weight must be positive")
            w = w / tot
        if self.d == 1:
            order = np.argsort(pts, kind="stable")
            self.atoms = pts[order]
            self.weights = w[order]
            self.cumweights = np.cumsum(self.weights)
            self.cumweights[-1] = 1.0
        else:
            self.atoms = pts
            self.weights = w
            self.cumweights = np.cumsum(w)
            self.cumweights[-1] = 1.0

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def integrate(self, f: Callable) -> float:
        vals = np.asarray(f(self.atoms), dtype=np.float64)
        return float(np.dot(self.weights, vals))

    def mass_where(self, predicate: Callable) -> float:
        mask = np.asarray(predicate(self.atoms), dtype=bool)
        return float(self.weights[mask].sum())

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        u = rng.uniforms(n)
        idx = np.searchsorted(self.cumweights, u, side="right")
        idx = np.minimum(idx, self.n_atoms - 1)
        return self.atoms[idx]

    def cdf(self, x) -> np.ndarray:
        if self.d != 1:
            raise MeasureError("cdf is one-dimensional only")
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.atoms, x, side="right")
        cw = np.concatenate([[0.0], self.cumweights])
        return cw[idx]


class ReferenceQsd:
    """Closed-form or tabulated reference law on an interval."""

    lambda_star: Optional[float] = None

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def inv_cdf(self, u) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def cdf_integral(self, lo, hi) -> np.ndarray:
        """Integral of the CDF over [lo, hi] (componentwise)."""
        raise NotImplementedError

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return self.inv_cdf(rng.uniforms(n))

    def integrate(self, f: Callable, npts: int = 20001) -> float:
        a, b = self.support()
        xs = np.linspace(a, b, npts)
        return float(np.trapezoid(np.asarray(f(xs)) * self.pdf(xs), xs))


class BmIntervalQsd(ReferenceQsd):
    """QSD of scaled Brownian motion killed at the ends of an interval.

    Density proportional to sin(pi (x-a) / (b-a)); the survival rate is
    scale^2 pi^2 / (2 (b-a)^2).
    """

    def __init__(self, a: float, b: float, scale: float = 1.0):
        if not a < b:
            raise MeasureError("need a < b")
        self.a = float(a)
        self.b = float(b)
        self.scale = float(scale)
        self.w = self.b - self.a
        self.lambda_star = self.scale**2 * math.pi**2 / (2.0 * self.w**2)

    def support(self):
        return self.a, self.b

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.a) & (x <= self.b)
        val = (math.pi / (2 * self.w)) * np.sin(math.pi * (x - self.a) / self.w)
        return np.where(inside, val, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=np.float64), self.a, self.b)
        return (1.0 - np.cos(math.pi * (x - self.a) / self.w)) / 2.0

    def inv_cdf(self, u):
        u = np.asarray(u, dtype=np.float64)
        return self.a + (self.w / math.pi) * np.arccos(1.0 - 2.0 * u)

    def _antideriv(self, x):
        # Antiderivative of the CDF, valid on [a, b].
        x = np.asarray(x, dtype=np.float64)
        return (x - self.a) / 2.0 - (self.w / (2 * math.pi)) * np.sin(
            math.pi * (x - self.a) / self.w
        )

    def cdf_integral(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        lo_c = np.clip(lo, self.a, self.b)
        hi_c = np.clip(hi, self.a, self.b)
        core = self._antideriv(hi_c) - self._antideriv(lo_c)
        # CDF is 0 left of a and 1 right of b.
        right_tail = np.maximum(hi - self.b, 0.0) - np.maximum(lo - self.b, 0.0)
        return core + right_tail


class NumericTableQsd(ReferenceQsd):
    """Reference law tabulated on a grid with piecewise-linear CDF."""

    def __init__(self, grid: np.ndarray, density: np.ndarray, lambda_star: Optional[float] = None):
        grid = np.asarray(grid, dtype=np.float64)
        density = np.asarray(density, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != density.shape or grid.size < 3:
            raise MeasureError("grid and density must be matching vectors")
        if np.any(np.diff(grid) <= 0) or np.any(density < -1e-12):
            raise MeasureError("grid must increase and density be nonnegative")
        density = np.maximum(density, 0.0)
        mass = np.trapezoid(density, grid)
        if mass <= 0:
            raise MeasureError("density integrates to zero")
        self.grid = grid
        self.density = density / mass
        seg = np.diff(grid) * (self.density[:-1] + self.density[1:]) / 2.0
        self._cdf = np.concatenate([[0.0], np.cumsum(seg)])
        self._cdf /= self._cdf[-1]
        # Antiderivative of the piecewise-linear CDF at the nodes.
        seg_int = np.diff(grid) * (self._cdf[:-1] + self._cdf[1:]) / 2.0
        self._cdf_anti = np.concatenate([[0.0], np.cumsum(seg_int)])
        self.lambda_star = lambda_star

    def support(self):
        return float(self.grid[0]), float(self.grid[-1])

    def pdf(self, x):
        return np.interp(np.asarray(x, dtype=np.float64), self.grid, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        return np.interp(np.asarray(x, dtype=np.float64), self.grid, self._cdf, left=0.0, right=1.0)

    def inv_cdf(self, u):
        return np.interp(np.asarray(u, dtype=np.float64), self._cdf, self.grid)

    def _antideriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        x_c = np.clip(x, self.grid[0], self.grid[-1])
        idx = np.clip(np.searchsorted(self.grid, x_c, side="right") - 1, 0, self.grid.size - 2)
        x0 = self.grid[idx]
        f0 = self._cdf[idx]
        f1 = self._cdf[idx + 1]
        h = self.grid[idx + 1] - x0
        t = x_c - x0
        # CDF linear on the segment: integral is f0*t + slope*t^2/2.
        return self._cdf_anti[idx] + f0 * t + (f1 - f0) / h * t**2 / 2.0

    def cdf_integral(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        a, b = self.support()
        core = self._antideriv(np.clip(hi, a, b)) - self._antideriv(np.clip(lo, a, b))
        right_tail = np.maximum(hi - b, 0.0) - np.maximum(lo - b, 0.0)
        return core + right_tail


def dirichlet_qsd_1d(
    drift: Callable[[np.ndarray], np.ndarray],
    sigma: float,
    a: float,
    b: float,
    n: int = 600,
) -> NumericTableQsd:
    """Finite-difference principal eigenpair of the killed generator's adjoint.

    Solves (1/2) (sigma^2 phi)'' - (b phi)' = -lambda phi with zero boundary
    values on a uniform grid, returning the normalized positive eigenvector
    as a tabulated reference law with its survival rate.
    """
    xs = np.linspace(a, b, n + 2)
    h = xs[1] - xs[0]
    interior = xs[1:-1]
    bvals = np.asarray(drift(interior), dtype=np.float64)
    s2 = sigma**2
    m = interior.size
    mat = np.zeros((m, m))
    # Second-difference part of (1/2) d^2/dx^2 (s2 * phi).
    for i in range(m):
        mat[i, i] += -2.0 * 0.5 * s2 / h**2
        if i > 0:
            mat[i, i - 1] += 0.5 * s2 / h**2
        if i < m - 1:
            mat[i, i + 1] += 0.5 * s2 / h**2
    # Central-difference part of -d/dx (b * phi).
    for i in range(m):
        if i > 0:
            mat[i, i - 1] += bvals[i - 1] / (2 * h)
        if i < m - 1:
            mat[i, i + 1] += -bvals[i + 1] / (2 * h)
    eigvals, eigvecs = np.linalg.eig(mat)
    k = int(np.argmax(eigvals.real))
    lam = -float(eigvals[k].real)
    phi = eigvecs[:, k].real
    if phi.sum() < 0:
        phi = -phi
    phi = np.maximum(phi, 0.0)
    density = np.concatenate([[0.0], phi, [0.0]])
    return NumericTableQsd(xs, density, lambda_star=lam)


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------


def _w1_empirical_empirical(p: EmpiricalLaw, q: EmpiricalLaw) -> float:
    xs = np.concatenate([p.atoms, q.atoms])
    xs.sort(kind="stable")
    fp = p.cdf(xs[:-1])
    fq = q.cdf(xs[:-1])
    return float(np.sum(np.abs(fp - fq) * np.diff(xs)))


def _w1_empirical_reference(p: EmpiricalLaw, ref: ReferenceQsd) -> float:
    a, b = ref.support()
    lo = min(a, float(p.atoms[0]))
    hi = max(b, float(p.atoms[-1]))
    # Breakpoints: empirical CDF is constant between consecutive atoms.
    pts = np.concatenate([[lo], p.atoms, [hi]])
    levels = np.concatenate([[0.0], p.cumweights])  # level on [pts[i], pts[i+1])
    left = pts[:-1]
    right = pts[1:]
    # Crossing abscissa of the reference CDF with each constant level,
    # clipped into the segment so the split is a no-op when outside.
    cross = np.clip(ref.inv_cdf(np.clip(levels, 0.0, 1.0)), left, right)
    # On [left, cross] F <= level; on [cross, right] F >= level.
    int_left = ref.cdf_integral(left, cross)
    int_right = ref.cdf_integral(cross, right)
    total = np.sum(levels * (cross - left) - int_left) + np.sum(
        int_right - levels * (right - cross)
    )
    return float(total)


def wasserstein1_1d(p, q) -> float:
    """Exact 1-Wasserstein distance via the CDF formula.

    Accepts weighted empirical laws and reference laws in either argument.
    """
    if isinstance(p, ReferenceQsd) and isinstance(q, EmpiricalLaw):
        return _w1_empirical_reference(q, p)
    if isinstance(p, EmpiricalLaw) and isinstance(q, ReferenceQsd):
        return _w1_empirical_reference(p, q)
    if isinstance(p, EmpiricalLaw) and isinstance(q, EmpiricalLaw):
        if p.d != 1 or q.d != 1:
            raise MeasureError("use wasserstein1_sliced for d > 1")
        return _w1_empirical_empirical(p, q)
    if isinstance(p, ReferenceQsd) and isinstance(q, ReferenceQsd):
        a0, b0 = p.support()
        a1, b1 = q.support()
        xs = np.linspace(min(a0, a1), max(b0, b1), 20001)
        return float(np.trapezoid(np.abs(p.cdf(xs) - q.cdf(xs)), xs))
    raise MeasureError(f"unsupported operand types: {type(p)}, {type(q)}")


def wasserstein1_sliced(
    p: EmpiricalLaw, q: EmpiricalLaw, n_projections: int, rng: RngStream
) -> tuple[float, float]:
    """Sliced W1 for point clouds in d >= 2: average over random directions.

    This is a surrogate (a lower-bound-flavored proxy, not the true W1);
    returns (estimate, standard error).
    """
    if p.d < 2 or p.d != q.d:
        raise MeasureError("sliced W1 needs matching clouds with d >= 2")
    dirs = rng.normals(n_projections * p.d).reshape(n_projections, p.d)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.empty(n_projections)
    for i, u in enumerate(dirs):
        lp = EmpiricalLaw(p.atoms @ u, p.weights)
        lq = EmpiricalLaw(q.atoms @ u, q.weights)
        vals[i] = _w1_empirical_empirical(lp, lq)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_projections))


def integrate(measure, f: Callable) -> float:
    """mu(f) for an empirical or reference measure."""
    if isinstance(measure, EmpiricalLaw):
        return measure.integrate(f)
    if isinstance(measure, ReferenceQsd):
        return measure.integrate(f)
    raise MeasureError(f"cannot integrate against {type(measure)}")


# ---------------------------------------------------------------------------
# Reflection maps
# ---------------------------------------------------------------------------


def reflect_path_pos(path: np.ndarray, z: float) -> np.ndarray:
    """Keep a discrete path at or above z by adding the running deficit."""
    beta = np.asarray(path, dtype=np.float64)
    if beta.size == 0:
        raise MeasureError("empty path")
    deficit = np.maximum.accumulate(np.maximum(z - beta, 0.0))
    return beta + deficit


def reflect_path_neg(path: np.ndarray, z: float) -> np.ndarray:
    """Keep a discrete path at or below z by removing the running excess."""
    beta = np.asarray(path, dtype=np.float64)
    if beta.size == 0:
        raise MeasureError("empty path")
    excess = np.maximum.accumulate(np.maximum(beta - z, 0.0))
    return beta - excess
