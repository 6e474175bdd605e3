"""SDE coefficient models, the one-step Euler map, and reproducible noise.

The models provided here all have globally Lipschitz drift and a constant,
uniformly elliptic diffusion matrix.  The Euler map is a pure function of
(state, dt, noise); randomness is produced separately by counter-based
Philox streams so coarse and fine discretizations can be coupled on the
same Brownian increments.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

__all__ = [
    "SdeModel",
    "BrownianMotion",
    "OrnsteinUhlenbeck",
    "CustomAffine",
    "RngStream",
    "euler_step",
    "reference_path",
    "DynamicsError",
]

_ELLIPTICITY_FLOOR = 1e-12


class DynamicsError(ValueError):
    pass


class SdeModel:
    """Base: dX = b(X) dt + sigma(X) dB with constant sigma."""

    d: int

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def drift_many(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sigma(self) -> np.ndarray:
        """Constant diffusion matrix (d x d)."""
        raise NotImplementedError

    def affine_coefficients_1d(self) -> Optional[tuple[float, float, float]]:
        """(a, c, s) with b(x) = a*x + c and sigma = s, when d == 1."""
        return None

    def _check_elliptic(self):
        sig = self.sigma()
        eigs = np.linalg.eigvalsh(sig @ sig.T)
        if eigs.min() < _ELLIPTICITY_FLOOR:
            raise DynamicsError(
                f"diffusion matrix is not uniformly elliptic (min eig {eigs.min():.3e})"
            )

    def to_config(self) -> dict:
        raise NotImplementedError


class BrownianMotion(SdeModel):
    """Zero drift, sigma = scale * I."""

    def __init__(self, scale: float = 1.0, d: int = 1):
        if scale <= 0:
            raise DynamicsError("scale must be positive")
        self.scale = float(scale)
        self.d = d
        self._check_elliptic()

    def drift(self, x):
        return np.zeros(self.d)

    def drift_many(self, pts):
        return np.zeros_like(np.asarray(pts, dtype=np.float64))

    def sigma(self):
        return self.scale * np.eye(self.d)

    def affine_coefficients_1d(self):
        if self.d == 1:
            return (0.0, 0.0, self.scale)
        return None

    def to_config(self):
        return {"kind": "brownian", "scale": self.scale, "d": self.d}


class OrnsteinUhlenbeck(SdeModel):
    """b(x) = theta * (mean - x), sigma = scale * I."""

    def __init__(self, theta: float, mean=0.0, scale: float = 1.0, d: int = 1):
        if theta <= 0 or scale <= 0:
            raise DynamicsError("theta and scale must be positive")
        self.theta = float(theta)
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        if self.mean.size == 1 and d > 1:
            self.mean = np.full(d, self.mean[0])
        self.scale = float(scale)
        self.d = d
        self._check_elliptic()

    def drift(self, x):
        return self.theta * (self.mean - np.atleast_1d(x))

    def drift_many(self, pts):
        p = np.asarray(pts, dtype=np.float64)
        if self.d == 1:
            return self.theta * (self.mean[0] - p)
        return self.theta * (self.mean - p)

    def sigma(self):
        return self.scale * np.eye(self.d)

    def affine_coefficients_1d(self):
        if self.d == 1:
            return (-self.theta, self.theta * self.mean[0], self.scale)
        return None

    def to_config(self):
        return {
            "kind": "ou",
            "theta": self.theta,
            "mean": self.mean.tolist(),
            "scale": self.scale,
            "d": self.d,
        }


class CustomAffine(SdeModel):
    """b(x) = A x + v with a constant diffusion matrix."""

    def __init__(self, a_matrix, v_vector, sigma_matrix):
        a = np.atleast_2d(np.asarray(a_matrix, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v_vector, dtype=np.float64))
        s = np.atleast_2d(np.asarray(sigma_matrix, dtype=np.float64))
        d = v.size
        if a.shape != (d, d) or s.shape != (d, d):
            raise DynamicsError("A and sigma must be d x d, v length d")
        self.a = a
        self.v = v
        self._sigma = s
        self.d = d
        self._check_elliptic()

    def drift(self, x):
        return self.a @ np.atleast_1d(x) + self.v

    def drift_many(self, pts):
        p = np.asarray(pts, dtype=np.float64)
        if self.d == 1:
            return self.a[0, 0] * p + self.v[0]
        return p @ self.a.T + self.v

    def sigma(self):
        return self._sigma.copy()

    def affine_coefficients_1d(self):
        if self.d == 1:
            return (float(self.a[0, 0]), float(self.v[0]), float(self._sigma[0, 0]))
        return None

    def to_config(self):
        return {
            "kind": "affine",
            "a": self.a.tolist(),
            "v": self.v.tolist(),
            "sigma": self._sigma.tolist(),
        }


def euler_step(model: SdeModel, x, dt: float, noise) -> np.ndarray:
    """One Euler update: x + b(x) dt + sigma @ noise.

    The caller supplies noise ~ N(0, dt * I); keeping the randomness outside
    makes the step a pure function and allows noise coupling across grids.
    """
    if dt <= 0:
        raise DynamicsError("dt must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    noise = np.atleast_1d(np.asarray(noise, dtype=np.float64))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(noise))):
        raise DynamicsError("non-finite state or noise")
    out = x + model.drift(x) * dt + model.sigma() @ noise
    if model.d == 1:
        return out
    return out


class RngStream:
    """Counter-based Gaussian/uniform stream keyed by (seed, stream id).

    Identical keys reproduce identical sequences across platforms and thread
    counts.  Streams with distinct ids are statistically independent, which
    is how parallel replicas get disjoint randomness.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array(
            [self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
            dtype=np.uint64,
        )
        self._bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self._bitgen)

    def normals(self, n: int) -> np.ndarray:
        return self.generator.standard_normal(n)

    def uniforms(self, n: int) -> np.ndarray:
        return self.generator.random(n)

    def child(self, stream: int) -> "RngStream":
        """A fresh stream under the same seed with a different id."""
        return RngStream(self.seed, stream)

    def state_digest(self) -> str:
        import hashlib
        import json

        st = self._bitgen.state
        return hashlib.sha256(
            json.dumps(st, sort_keys=True, default=lambda o: o.tolist()).encode()
        ).hexdigest()


def reference_path(
    model: SdeModel,
    x0,
    t_end: float,
    fine_dt: float,
    rng: RngStream,
    return_increments: bool = True,
):
    """Euler path on a uniform fine grid, exposing its Brownian increments.

    Aggregating consecutive increments reproduces exactly the noise a
    coarser Euler path would see on the merged grid, enabling same-noise
    (strong) comparisons.
    """
    if fine_dt <= 0 or t_end <= 0:
        raise DynamicsError("t_end and fine_dt must be positive")
    n = int(round(t_end / fine_dt))
    times = np.arange(n + 1) * fine_dt
    d = model.d
    incs = rng.normals(n * d).reshape(n, d) * math.sqrt(fine_dt)
    path = np.empty((n + 1, d))
    path[0] = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    sig = model.sigma()
    x = path[0]
    for k in range(n):
        x = x + model.drift(x) * fine_dt + sig @ incs[k]
        path[k + 1] = x
    if d == 1:
        path = path.reshape(-1)
    if return_increments:
        return times, path, (incs.reshape(-1) if d == 1 else incs)
    return times, path
