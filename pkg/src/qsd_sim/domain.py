"""Bounded open domains with exact signed distance, and grid partitions.

Supported geometries all have a closed-form signed distance to the boundary
(positive inside, zero on the boundary, negative outside), which keeps the
kill test exact.  Partitions are axis-aligned grids used by the quantized
redistribution policy; every cell has diameter at most the requested mesh.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

__all__ = ["Domain", "Interval", "Box", "Ball", "Partition", "DomainError"]


class DomainError(ValueError):
    pass


class Domain:
    """Base class: bounded, connected, open subset of R^d."""

    d: int

    def contains(self, x) -> bool:
        """True iff x lies in the open set (boundary points excluded)."""
        return self.signed_distance(x) > 0.0

    def signed_distance(self, x) -> float:
        raise NotImplementedError

    def signed_distance_many(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized signed distance; pts has shape (n,) in 1-d or (n, d)."""
        raise NotImplementedError

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return self.signed_distance_many(pts) > 0.0

    def compact_core(self, eta: float) -> Callable:
        """Membership predicate of the depth-eta core {psi >= eta}."""
        if eta <= 0:
            raise DomainError("eta must be positive")
        return lambda x: self.signed_distance(x) >= eta

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))

    def build_partition(self, eps: float) -> "Partition":
        if eps <= 0:
            raise DomainError("partition mesh must be positive")
        if eps >= self.diameter():
            raise DomainError("partition mesh must be smaller than the domain diameter")
        return Partition(self, eps)

    def smooth_boundary(self) -> bool:
        """Whether the boundary is C^2 (boxes have corners and are not)."""
        return True

    def validation_warnings(self) -> list[str]:
        out = []
        if not self.smooth_boundary():
            out.append(
                f"{type(self).__name__} has a non-smooth boundary (corners); "
                "the scheme is well defined but outside the smooth-domain hypotheses"
            )
        return out

    def to_config(self) -> dict:
        raise NotImplementedError


def _as_point(x, d):
    a = np.asarray(x, dtype=np.float64)
    if d == 1 and a.ndim == 0:
        return a.reshape(1)
    if a.shape != (d,):
        raise DomainError(f"expected a point in R^{d}, got shape {a.shape}")
    return a


class Interval(Domain):
    """Open interval (a, b) in R^1."""

    def __init__(self, a: float, b: float):
        if not (math.isfinite(a) and math.isfinite(b) and a < b):
            raise DomainError(f"need finite a < b, got ({a}, {b})")
        self.a = float(a)
        self.b = float(b)
        self.d = 1

    def signed_distance(self, x) -> float:
        v = float(np.asarray(x).reshape(-1)[0])
        return min(v - self.a, self.b - v)

    def signed_distance_many(self, pts):
        p = np.asarray(pts, dtype=np.float64).reshape(-1)
        return np.minimum(p - self.a, self.b - p)

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])

    def width(self) -> float:
        return self.b - self.a

    def to_config(self):
        return {"kind": "interval", "a": self.a, "b": self.b}

    def __repr__(self):
        return f"Interval({self.a}, {self.b})"


class Box(Domain):
    """Open axis-aligned box; admitted as a pragmatic test geometry."""

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.ndim != 1 or lo.shape != hi.shape or not np.all(lo < hi):
            raise DomainError("need vectors lo < hi componentwise")
        self.lo = lo
        self.hi = hi
        self.d = lo.size

    def signed_distance(self, x) -> float:
        p = _as_point(x, self.d)
        # Distance to the complement of the box: inside, min face distance;
        # outside, minus the Euclidean distance to the box.
        inside_gap = np.minimum(p - self.lo, self.hi - p)
        if np.all(inside_gap > 0):
            return float(inside_gap.min())
        outer = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        return -float(np.linalg.norm(outer)) if np.any(outer > 0) else float(inside_gap.min())

    def signed_distance_many(self, pts):
        p = np.asarray(pts, dtype=np.float64).reshape(-1, self.d)
        gap = np.minimum(p - self.lo, self.hi - p)
        inner = gap.min(axis=1)
        outer = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        dist_out = np.linalg.norm(outer, axis=1)
        return np.where(dist_out > 0, -dist_out, inner)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def smooth_boundary(self):
        return False

    def to_config(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"


class Ball(Domain):
    """Open Euclidean ball."""

    def __init__(self, center, radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        if radius <= 0:
            raise DomainError("radius must be positive")
        self.center = center
        self.radius = float(radius)
        self.d = center.size

    def signed_distance(self, x) -> float:
        p = _as_point(x, self.d)
        return self.radius - float(np.linalg.norm(p - self.center))

    def signed_distance_many(self, pts):
        p = np.asarray(pts, dtype=np.float64).reshape(-1, self.d)
        return self.radius - np.linalg.norm(p - self.center, axis=1)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def to_config(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"


class Partition:
    """Axis-aligned grid partition of a domain with cell diameter <= eps.

    The grid step is eps / sqrt(d) per axis so that each cell's diagonal is
    at most eps.  Cells that do not meet the domain are dropped.  The
    representative point of a cell is its center when the center lies in the
    domain; otherwise it stays unset until the occupation estimator records
    the first in-domain sample falling in the cell.
    """

    def __init__(self, domain: Domain, eps: float):
        self.domain = domain
        self.eps = float(eps)
        lo, hi = domain.bounding_box()
        d = domain.d
        target = eps / math.sqrt(d)
        self.counts = np.maximum(np.ceil((hi - lo) / target - 1e-12).astype(int), 1)
        self.steps = (hi - lo) / self.counts
        self.lo = lo
        self.hi = hi
        # Enumerate retained cells (those meeting the domain).
        grids = [np.arange(c) for c in self.counts]
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, d)
        keep = np.array([self._cell_meets_domain(idx) for idx in mesh])
        self._multi = mesh[keep]
        self._flat_to_cell = -np.ones(int(np.prod(self.counts)), dtype=np.int64)
        flat = np.ravel_multi_index(self._multi.T, self.counts)
        self._flat_to_cell[flat] = np.arange(self._multi.shape[0])
        self.n_cells = self._multi.shape[0]
        # Representatives: cell center when in the domain, else NaN.
        centers = self.lo + (self._multi + 0.5) * self.steps
        in_d = domain.contains_many(centers)
        self.representatives = np.where(
            in_d[:, None] if d > 1 else in_d.reshape(-1, 1), centers, np.nan
        )
        if d == 1:
            self.representatives = self.representatives.reshape(-1)

    def _cell_meets_domain(self, idx) -> bool:
        lo = self.lo + idx * self.steps
        hi = lo + self.steps
        dom = self.domain
        if isinstance(dom, (Interval, Box)):
            return True
        if isinstance(dom, Ball):
            nearest = np.clip(dom.center, lo, hi)
            return float(np.linalg.norm(nearest - dom.center)) < dom.radius
        # Fallback: sample the center and corners.
        center = (lo + hi) / 2
        pts = [center] + [
            lo + np.array(bits) * (hi - lo)
            for bits in np.ndindex(*([2] * self.domain.d))
        ]
        return any(dom.contains(p) for p in pts)

    def cell_index(self, x) -> int:
        """Cell id containing x; raises for points outside the domain."""
        p = _as_point(x, self.domain.d)
        idx = np.floor((p - self.lo) / self.steps).astype(int)
        idx = np.clip(idx, 0, self.counts - 1)
        flat = int(np.ravel_multi_index(idx, self.counts))
        cell = int(self._flat_to_cell[flat])
        if cell < 0:
            raise DomainError(f"point {x} maps to a discarded cell")
        return cell

    def cell_indices_many(self, pts: np.ndarray) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64).reshape(-1, self.domain.d)
        idx = np.floor((p - self.lo) / self.steps).astype(int)
        idx = np.clip(idx, 0, self.counts - 1)
        flat = np.ravel_multi_index(idx.T, self.counts)
        return self._flat_to_cell[flat]

    def cell_bounds(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self._multi[cell]
        lo = self.lo + idx * self.steps
        return lo, lo + self.steps

    def cell_diameter(self) -> float:
        return float(np.linalg.norm(self.steps))

    def representative(self, cell: int) -> Optional[np.ndarray]:
        r = self.representatives[cell]
        if np.any(np.isnan(r)):
            return None
        return np.atleast_1d(np.asarray(r, dtype=np.float64))

    def set_representative(self, cell: int, x) -> None:
        """Record the first in-domain sample of a center-outside cell."""
        p = _as_point(x, self.domain.d)
        if self.domain.d == 1:
            self.representatives[cell] = p[0]
        else:
            self.representatives[cell] = p
