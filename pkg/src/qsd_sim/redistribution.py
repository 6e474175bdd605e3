"""Redistribution policies: where the chain restarts after a kill.

Four policies are provided: the full occupation measure, a sliding-window
truncation of it, a grid-quantized compression, and a fixed external
measure.  All support O(log n) weighted sampling and O(1) amortized
incremental update of the recorded history.
"""

from __future__ import annotations

import bisect
import math
from typing import Callable, Optional, Union

import numpy as np

from .domain import Domain, Partition
from .dynamics import RngStream
from .measures import BmIntervalQsd, EmpiricalLaw, ReferenceQsd

__all__ = [
    "WeightedEmpiricalMeasure",
    "RedistributionPolicy",
    "FullOccupationPolicy",
    "SlidingWindowPolicy",
    "QuantizedPolicy",
    "FixedPolicy",
    "EmptyMeasureError",
    "h4_discrepancy",
    "window_rule",
]


class EmptyMeasureError(RuntimeError):
    """Restart requested before any in-domain visit was recorded."""


class WeightedEmpiricalMeasure:
    """Append-only (point, weight) history with cumulative-weight sampling.

    Weights are appended once and never change, so a plain cumulative-sum
    array gives O(1) update and O(log n) weighted sampling; the total weight
    equals the step schedule's running clock by construction.
    """

    def __init__(self, d: int = 1):
        self.d = d
        self._points: list = []
        self._cum: list[float] = []

    def __len__(self) -> int:
        return len(self._points)

    @property
    def total_weight(self) -> float:
        return self._cum[-1] if self._cum else 0.0

    def append(self, x, w: float) -> None:
        if w <= 0:
            raise ValueError("weight must be positive")
        self._points.append(float(x) if self.d == 1 else np.asarray(x, dtype=np.float64))
        self._cum.append((self._cum[-1] if self._cum else 0.0) + w)

    def point(self, k: int):
        return self._points[k]

    def weight(self, k: int) -> float:
        return self._cum[k] - (self._cum[k - 1] if k > 0 else 0.0)

    def sample_index(self, u: float, lo: int = 0) -> int:
        """Index drawn with probability proportional to its weight.

        ``lo`` restricts the draw to indices >= lo (the sliding window).
        """
        if not self._points or lo >= len(self._points):
            raise EmptyMeasureError("no recorded mass to sample from")
        base = self._cum[lo - 1] if lo > 0 else 0.0
        v = base + u * (self._cum[-1] - base)
        k = bisect.bisect_right(self._cum, v, lo=lo)
        return min(k, len(self._points) - 1)

    def points_array(self) -> np.ndarray:
        return np.asarray(self._points, dtype=np.float64)

    def weights_array(self) -> np.ndarray:
        cum = np.asarray(self._cum)
        return np.diff(cum, prepend=0.0)

    def as_law(self, start: int = 0) -> EmpiricalLaw:
        pts = self.points_array()[start:]
        w = self.weights_array()[start:]
        return EmpiricalLaw(pts, w)


class RedistributionPolicy:
    """Interface shared by all restart policies."""

    def record_visit(self, x, weight: float) -> None:
        raise NotImplementedError

    def sample_restart(self, rng: RngStream):
        """A restart point drawn from the policy's current law.

        The law only involves history recorded so far, never the step being
        decided, which preserves the predictability of the restart measure.
        """
        u = float(rng.uniforms(1)[0])
        return self.restart_from_uniform(u, rng)

    def restart_from_uniform(self, u: float, rng: Optional[RngStream] = None):
        raise NotImplementedError

    def current_law(self) -> EmpiricalLaw:
        raise NotImplementedError

    def kernel_descriptor(self) -> Optional[dict]:
        """Parameters for the jitted 1-d fast path; None if unsupported."""
        return None

    def to_config(self) -> dict:
        raise NotImplementedError


class FullOccupationPolicy(RedistributionPolicy):
    """Restart from the full time-weighted occupation measure."""

    def __init__(self, d: int = 1):
        self.measure = WeightedEmpiricalMeasure(d)

    def record_visit(self, x, weight):
        self.measure.append(x, weight)

    def restart_from_uniform(self, u, rng=None):
        k = self.measure.sample_index(u)
        return self.measure.point(k)

    def current_law(self):
        if len(self.measure) == 0:
            raise EmptyMeasureError("no recorded mass")
        return self.measure.as_law()

    def kernel_descriptor(self):
        return {"policy_code": 0}

    def to_config(self):
        return {"kind": "full"}


def window_rule(rule: str, param: float = 0.5) -> Callable[[int], int]:
    """Window start index t(n) for named rules.

    ``sqrt``: t(n) = floor(sqrt(n)); ``fraction``: t(n) = floor(param * n).
    Both are nondecreasing with 0 <= t(n) <= n - 1.
    """
    if rule == "sqrt":
        return lambda n: min(int(math.isqrt(n)), n - 1)
    if rule == "fraction":
        if not 0 <= param < 1:
            raise ValueError("fraction rule needs param in [0, 1)")
        return lambda n: min(int(param * n), n - 1)
    raise ValueError(f"unknown window rule {rule!r}")


class SlidingWindowPolicy(RedistributionPolicy):
    """Restart from the recent-history window of the occupation measure.

    The window keeps records with index >= t(n) where n is the number of
    recorded points; retirement is a moving left pointer (the rule is
    nondecreasing), with physical compaction once the retired prefix
    dominates the buffer.
    """

    def __init__(self, rule: Union[str, Callable[[int], int]] = "sqrt", param: float = 0.5, d: int = 1):
        self.measure = WeightedEmpiricalMeasure(d)
        if callable(rule):
            self.t_of_n = rule
            self.rule_name, self.param = "custom", param
        else:
            self.t_of_n = window_rule(rule, param)
            self.rule_name, self.param = rule, param
        self._offset = 0  # records dropped by compaction

    def record_visit(self, x, weight):
        self.measure.append(x, weight)

    def _left_pointer(self) -> int:
        n = self._offset + len(self.measure)
        t = self.t_of_n(n)
        if not 0 <= t <= n - 1:
            raise ValueError(f"window rule produced t({n}) = {t} outside [0, {n - 1}]")
        return max(t - self._offset, 0)

    def _maybe_compact(self, left: int) -> int:
        if left > len(self.measure) // 2 and left > 1024:
            m = WeightedEmpiricalMeasure(self.measure.d)
            pts = self.measure.points_array()[left:]
            ws = self.measure.weights_array()[left:]
            for x, w in zip(pts, ws):
                m.append(x, w)
            self._offset += left
            self.measure = m
            return 0
        return left

    def restart_from_uniform(self, u, rng=None):
        left = self._maybe_compact(self._left_pointer())
        k = self.measure.sample_index(u, lo=left)
        return self.measure.point(k)

    def current_law(self):
        if len(self.measure) == 0:
            raise EmptyMeasureError("no recorded mass")
        return self.measure.as_law(start=self._left_pointer())

    def kernel_descriptor(self):
        if self.rule_name == "sqrt":
            return {"policy_code": 1, "window_rule_code": 0, "window_param": 0.0}
        if self.rule_name == "fraction":
            return {"policy_code": 1, "window_rule_code": 1, "window_param": self.param}
        return None

    def to_config(self):
        return {"kind": "window", "rule": self.rule_name, "param": self.param}


class QuantizedPolicy(RedistributionPolicy):
    """Restart from the grid-quantized occupation measure.

    Keeps one running mass per partition cell (exactly the occupation mass
    of the cell) and a per-cell restart law: a Dirac at the representative
    point, or uniform over the cell for interval/box domains.
    """

    def __init__(self, partition: Partition, cell_law: str = "dirac"):
        if cell_law not in ("dirac", "uniform"):
            raise ValueError("cell_law must be 'dirac' or 'uniform'")
        from .domain import Ball

        if cell_law == "uniform" and isinstance(partition.domain, Ball):
            raise ValueError("uniform cell law is supported for interval/box domains only")
        self.partition = partition
        self.cell_law = cell_law
        self.cell_weights = np.zeros(partition.n_cells)
        self._total = 0.0
        self._cum: Optional[np.ndarray] = None  # rebuilt lazily

    def record_visit(self, x, weight):
        cell = self.partition.cell_index(x)
        if self.partition.representative(cell) is None:
            self.partition.set_representative(cell, x)
        self.cell_weights[cell] += weight
        self._total += weight
        self._cum = None

    def _cumulative(self) -> np.ndarray:
        if self._cum is None:
            self._cum = np.cumsum(self.cell_weights)
        return self._cum

    def restart_from_uniform(self, u, rng=None, u2=None):
        if self._total <= 0:
            raise EmptyMeasureError("no recorded mass")
        cum = self._cumulative()
        v = u * cum[-1]
        cell = min(int(np.searchsorted(cum, v, side="right")), self.partition.n_cells - 1)
        if self.cell_law == "dirac":
            rep = self.partition.representative(cell)
            assert rep is not None  # set when the cell first received mass
            return float(rep[0]) if self.partition.domain.d == 1 else rep
        if u2 is not None and self.partition.domain.d == 1:
            # Same expression as the jitted kernel, bit for bit.
            return float(self.partition.lo[0] + (cell + u2) * self.partition.steps[0])
        if rng is None:
            raise ValueError("uniform cell law needs an rng for the in-cell draw")
        lo, hi = self.partition.cell_bounds(cell)
        v2 = rng.uniforms(self.partition.domain.d)
        pt = lo + v2 * (hi - lo)
        return float(pt[0]) if self.partition.domain.d == 1 else pt

    def current_law(self):
        if self._total <= 0:
            raise EmptyMeasureError("no recorded mass")
        mask = self.cell_weights > 0
        reps = np.array(
            [self.partition.representative(i)[0] if self.partition.domain.d == 1
             else self.partition.representative(i)
             for i in np.nonzero(mask)[0]]
        )
        return EmpiricalLaw(reps, self.cell_weights[mask])

    def kernel_descriptor(self):
        from .domain import Interval

        if not isinstance(self.partition.domain, Interval):
            return None
        return {
            "policy_code": 2,
            "n_cells": self.partition.n_cells,
            "cell_width": float(self.partition.steps[0]),
            "cell_lo": float(self.partition.lo[0]),
            "cell_law_code": 0 if self.cell_law == "dirac" else 1,
            "cell_weights": self.cell_weights,
            "cell_reps": self.partition.representatives,
        }

    def to_config(self):
        return {"kind": "quantized", "eps": self.partition.eps, "cell_law": self.cell_law}


class FixedPolicy(RedistributionPolicy):
    """Restart from a fixed external measure; history is ignored."""

    def __init__(self, measure: Union[EmpiricalLaw, ReferenceQsd, Domain]):
        self.fixed = measure

    def record_visit(self, x, weight):
        pass

    def restart_from_uniform(self, u, rng=None):
        if isinstance(self.fixed, EmpiricalLaw):
            idx = min(
                int(np.searchsorted(self.fixed.cumweights, u, side="right")),
                self.fixed.n_atoms - 1,
            )
            a = self.fixed.atoms[idx]
            return float(a) if self.fixed.d == 1 else a
        if isinstance(self.fixed, BmIntervalQsd):
            # Same scalar expression as the jitted kernel so both engines
            # produce bit-identical draws.
            return self.fixed.a + (self.fixed.b - self.fixed.a) / math.pi * math.acos(
                1.0 - 2.0 * u
            )
        if isinstance(self.fixed, ReferenceQsd):
            return float(self.fixed.inv_cdf(u))
        # Domain: uniform over an interval.
        from .domain import Interval

        if isinstance(self.fixed, Interval):
            return self.fixed.a + u * (self.fixed.b - self.fixed.a)
        raise ValueError(f"unsupported fixed measure {type(self.fixed)}")

    def current_law(self):
        if isinstance(self.fixed, EmpiricalLaw):
            return self.fixed
        raise ValueError("fixed analytic measures have no empirical law snapshot")

    def kernel_descriptor(self):
        from .domain import Interval
        from .measures import BmIntervalQsd

        if isinstance(self.fixed, EmpiricalLaw) and self.fixed.d == 1:
            return {
                "policy_code": 3,
                "fixed_code": 0,
                "fixed_atoms": self.fixed.atoms,
                "fixed_cumw": self.fixed.cumweights,
            }
        if isinstance(self.fixed, BmIntervalQsd):
            return {"policy_code": 3, "fixed_code": 1,
                    "fixed_a": self.fixed.a, "fixed_b": self.fixed.b}
        if isinstance(self.fixed, Interval):
            return {"policy_code": 3, "fixed_code": 2,
                    "fixed_a": self.fixed.a, "fixed_b": self.fixed.b}
        return None

    def to_config(self):
        return {"kind": "fixed", "measure": type(self.fixed).__name__}


def h4_discrepancy(
    policy: RedistributionPolicy,
    full_measure: Union[WeightedEmpiricalMeasure, EmpiricalLaw],
    test_fns: list[Callable],
) -> list[float]:
    """Signed gaps mu_n(f) - p_n(f) between occupation and restart laws."""
    mu = full_measure.as_law() if isinstance(full_measure, WeightedEmpiricalMeasure) else full_measure
    pn = policy.current_law()
    return [mu.integrate(f) - pn.integrate(f) for f in test_fns]
