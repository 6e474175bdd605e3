"""Euler schemes with redistribution toward a fixed measure.

Simulates the discretized return process (restart from a fixed law on every
grid exit), Monte Carlo estimators for the expected-occupation operator and
its renormalized form, the weak-consistency curve against a fine-step
reference, and exit-time tail diagnostics.  Replica batches are advanced
vectorized with a single counter-based stream per batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .domain import Domain, Interval
from .dynamics import RngStream, SdeModel
from .measures import (
    EmpiricalLaw,
    NumericTableQsd,
    ReferenceQsd,
    wasserstein1_1d,
    wasserstein1_sliced,
)
from .schedules import StepSchedule

__all__ = [
    "ReturnProcessConfig",
    "simulate_return_chain",
    "estimate_A",
    "estimate_A_multi",
    "estimate_Pi",
    "weak_error_curve",
    "exit_time_tail",
    "measure_sampler",
    "ReturnProcessError",
    "AEstimate",
    "PiEstimate",
    "WeakErrorRow",
    "WeakErrorResult",
    "ExitTailResult",
    "BatchTrace",
]


class ReturnProcessError(ValueError):
    pass


MeasureLike = Union[EmpiricalLaw, ReferenceQsd, Domain, float]


def measure_sampler(measure: MeasureLike, domain: Domain) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized inverse-transform sampler u in [0,1) -> point in D."""
    if isinstance(measure, EmpiricalLaw):
        atoms, cumw, d = measure.atoms, measure.cumweights, measure.d

        def from_atoms(u):
            idx = np.minimum(np.searchsorted(cumw, u, side="right"), atoms.shape[0] - 1)
            return atoms[idx]

        return from_atoms
    if isinstance(measure, ReferenceQsd):
        return measure.inv_cdf
    if isinstance(measure, Interval):
        a, b = measure.a, measure.b
        return lambda u: a + u * (b - a)
    if isinstance(measure, (int, float)) and domain.d == 1:
        x = float(measure)
        if not domain.contains(x):
            raise ReturnProcessError(f"Dirac point {x} is outside the domain")
        return lambda u: np.full_like(np.asarray(u, dtype=np.float64), x)
    raise ReturnProcessError(f"cannot sample from {type(measure)}")


def _mixture_sampler(base, other, weight: float):
    """Single-uniform mixture: probability ``weight`` of the other law."""

    def sample(u):
        u = np.asarray(u, dtype=np.float64)
        out = np.empty_like(u)
        lo = u < weight
        if np.any(lo):
            out[lo] = other(u[lo] / weight)
        if np.any(~lo):
            out[~lo] = base((u[~lo] - weight) / (1.0 - weight))
        return out

    return sample


@dataclass
class ReturnProcessConfig:
    """A redistribution law, a step schedule, a horizon and sample times."""

    mu: MeasureLike
    eta: StepSchedule
    horizon: float
    instants: np.ndarray

    def __post_init__(self):
        self.instants = np.asarray(self.instants, dtype=np.float64)
        if self.horizon <= 0:
            raise ReturnProcessError("horizon must be positive")
        if np.any(self.instants < 0) or np.any(self.instants > self.horizon):
            raise ReturnProcessError("sampling instants must lie in [0, horizon]")


@dataclass
class BatchTrace:
    """Vectorized replica batch: states at the sampling instants."""

    instants: np.ndarray
    states: np.ndarray        # (n_instants, n_replicas) or (n_instants, R, d)
    first_jump: np.ndarray    # +inf where the replica never jumped
    jump_counts: np.ndarray


def simulate_return_chain(model: SdeModel, domain: Domain, cfg: ReturnProcessConfig,
                          x0, rng: RngStream):
    """Single chain on the step grid with a jump log.

    Between jumps this is a plain Euler path; whenever the grid proposal
    leaves the domain the state is redrawn from the configured measure.
    Returns (grid times, states, jump times).
    """
    if np.ndim(x0) == 0 and domain.d == 1:
        x = np.atleast_1d(float(x0))
    else:
        x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if not domain.contains(x if domain.d > 1 else x[0]):
        raise ReturnProcessError("start point outside the domain")
    sampler = measure_sampler(cfg.mu, domain)
    n_total = cfg.eta.index_of_time(cfg.horizon)
    t_grid = cfg.eta.big_gamma_array(n_total)
    etas = cfg.eta.gamma_array(n_total)
    sig = model.sigma()
    states = np.empty((n_total + 1, domain.d))
    states[0] = x
    jumps = []
    for k in range(n_total):
        dt = etas[k]
        z = rng.normals(domain.d)
        prop = x + model.drift(x) * dt + sig @ (z * math.sqrt(dt))
        if domain.signed_distance(prop) <= 0:
            u = rng.uniforms(1)
            drawn = sampler(u)
            prop = np.atleast_1d(np.asarray(drawn, dtype=np.float64)).reshape(-1)[: domain.d]
            if domain.d == 1:
                prop = np.atleast_1d(prop[0])
            jumps.append(float(t_grid[k + 1]))
        states[k + 1] = prop
        x = prop
    if domain.d == 1:
        return t_grid, states.reshape(-1), np.asarray(jumps)
    return t_grid, states, np.asarray(jumps)


def _batch_return(
    model: SdeModel,
    domain: Domain,
    eta: StepSchedule,
    horizon: float,
    sampler: Callable,
    x0s: np.ndarray,
    rng: RngStream,
    instants: np.ndarray,
) -> BatchTrace:
    """Advance a replica batch of the redistribution scheme to the horizon.

    States at each instant are the grid-left values (the scheme's value at
    the last grid time not exceeding the instant).
    """
    d = domain.d
    r = x0s.shape[0]
    n_total = eta.index_of_time(horizon)
    t_grid = eta.big_gamma_array(n_total)
    etas = eta.gamma_array(n_total)
    instants = np.asarray(instants, dtype=np.float64)
    rec_idx = np.minimum(
        np.searchsorted(t_grid, instants, side="right") - 1, n_total
    )
    shape = (instants.size, r) if d == 1 else (instants.size, r, d)
    states = np.empty(shape)
    first_jump = np.full(r, np.inf)
    jump_counts = np.zeros(r, dtype=np.int64)
    x = np.array(x0s, dtype=np.float64)
    sig = model.sigma()
    s_scalar = float(sig[0, 0]) if d == 1 else None
    for i in np.nonzero(rec_idx == 0)[0]:
        states[i] = x
    for k in range(n_total):
        dt = etas[k]
        sq = math.sqrt(dt)
        if d == 1:
            z = rng.normals(r)
            prop = x + model.drift_many(x) * dt + s_scalar * sq * z
        else:
            z = rng.normals(r * d).reshape(r, d)
            prop = x + model.drift_many(x) * dt + (z * sq) @ sig.T
        psi = domain.signed_distance_many(prop)
        out = psi <= 0.0
        m = int(out.sum())
        if m:
            u = rng.uniforms(m)
            prop[out] = sampler(u)
            jump_counts[out] += 1
            newly = out & np.isinf(first_jump)
            first_jump[newly] = t_grid[k + 1]
        x = prop
        for i in np.nonzero(rec_idx == k + 1)[0]:
            states[i] = x
    return BatchTrace(instants=instants, states=states, first_jump=first_jump,
                      jump_counts=jump_counts)


@dataclass
class AEstimate:
    value: float
    stderr: float

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr)


@dataclass
class PiEstimate:
    value: float
    stderr: float
    numerator: AEstimate = None
    denominator: AEstimate = None
    unreliable: bool = False


def _exit_integrals(
    model: SdeModel,
    domain: Domain,
    eta: StepSchedule,
    fs: Sequence[Callable],
    x0s: np.ndarray,
    rng: RngStream,
    t_cap: float = 1000.0,
):
    """Per-replica pre-exit integrals sum_k eta_{k+1} f(state_k), and exit times.

    All functions share the same paths.  Replicas still alive at t_cap are
    truncated there (counted and reported).
    """
    d = domain.d
    r = x0s.shape[0]
    n_cap = eta.index_of_time(t_cap) + 1
    t_grid = eta.big_gamma_array(n_cap)
    etas = eta.gamma_array(n_cap)
    acc = np.zeros((len(fs), r))
    taus = np.full(r, np.nan)
    alive = np.arange(r)
    x = np.array(x0s, dtype=np.float64)
    sig = model.sigma()
    s_scalar = float(sig[0, 0]) if d == 1 else None
    k = 0
    while alive.size and k < n_cap:
        dt = etas[k]
        for i, f in enumerate(fs):
            acc[i, alive] += dt * np.asarray(f(x), dtype=np.float64)
        sq = math.sqrt(dt)
        if d == 1:
            z = rng.normals(alive.size)
            prop = x + model.drift_many(x) * dt + s_scalar * sq * z
        else:
            z = rng.normals(alive.size * d).reshape(alive.size, d)
            prop = x + model.drift_many(x) * dt + (z * sq) @ sig.T
        out = domain.signed_distance_many(prop) <= 0.0
        if np.any(out):
            taus[alive[out]] = t_grid[k + 1]
        keep = ~out
        alive = alive[keep]
        x = prop[keep]
        k += 1
    truncated = alive.size
    if truncated:
        taus[alive] = t_grid[min(k, n_cap)]
    return acc, taus, truncated


def estimate_A_multi(
    model: SdeModel,
    domain: Domain,
    eta: StepSchedule,
    fs: Sequence[Callable],
    x,
    n_replicas: int,
    rng: RngStream,
    t_cap: float = 1000.0,
) -> list[AEstimate]:
    """Monte Carlo estimates of the expected pre-exit occupation of each f.

    All functions are evaluated on shared replica paths started at x, so
    linear combinations of the estimates are exact.
    """
    if domain.d == 1:
        if not domain.contains(float(np.asarray(x).reshape(-1)[0])):
            raise ReturnProcessError(f"start {x} outside the domain")
        x0s = np.full(n_replicas, float(np.asarray(x).reshape(-1)[0]))
    else:
        x0s = np.tile(np.asarray(x, dtype=np.float64), (n_replicas, 1))
    acc, _, truncated = _exit_integrals(model, domain, eta, fs, x0s, rng, t_cap)
    if truncated:
        raise ReturnProcessError(f"{truncated} replicas still alive at t_cap={t_cap}")
    return [
        AEstimate(float(a.mean()), float(a.std(ddof=1) / math.sqrt(n_replicas)))
        for a in acc
    ]


def estimate_A(
    model: SdeModel,
    domain: Domain,
    eta: StepSchedule,
    f: Callable,
    x,
    n_replicas: int,
    rng: RngStream,
    t_cap: float = 1000.0,
) -> AEstimate:
    return estimate_A_multi(model, domain, eta, [f], x, n_replicas, rng, t_cap)[0]


def estimate_Pi(
    model: SdeModel,
    domain: Domain,
    mu: MeasureLike,
    f: Callable,
    eta: StepSchedule,
    n_replicas: int,
    rng: RngStream,
    t_cap: float = 1000.0,
) -> PiEstimate:
    """Renormalized operator estimate mu(Af) / mu(A 1) on shared replicas.

    Start points are drawn from mu; numerator and denominator use the same
    paths, so f = 1 gives exactly 1.
    """
    sampler = measure_sampler(mu, domain)
    x0s = np.asarray(sampler(rng.uniforms(n_replicas)), dtype=np.float64)

    def ones(v):
        return np.ones(np.asarray(v).shape[0])

    acc, _, truncated = _exit_integrals(model, domain, eta, [f, ones], x0s, rng, t_cap)
    if truncated:
        raise ReturnProcessError(f"{truncated} replicas still alive at t_cap={t_cap}")
    num = acc[0]
    den = acc[1]
    mnum, mden = num.mean(), den.mean()
    value = mnum / mden
    # Delta-method standard error for the ratio of means.
    n = n_replicas
    cov = np.cov(num, den, ddof=1)
    var = (
        cov[0, 0] / mden**2
        - 2 * mnum * cov[0, 1] / mden**3
        + mnum**2 * cov[1, 1] / mden**4
    ) / n
    se = math.sqrt(max(var, 0.0))
    den_se = math.sqrt(cov[1, 1] / n)
    unreliable = abs(mden) <= 3 * den_se
    return PiEstimate(
        float(value),
        float(se),
        numerator=AEstimate(float(mnum), float(math.sqrt(cov[0, 0] / n))),
        denominator=AEstimate(float(mden), float(den_se)),
        unreliable=bool(unreliable),
    )


@dataclass
class WeakErrorRow:
    eta: float
    sup_w1: float
    w1_by_t: np.ndarray


@dataclass
class WeakErrorResult:
    instants: np.ndarray
    rows: list[WeakErrorRow]
    eta_ref: float
    noise_floor: float
    noise_floor_by_t: np.ndarray = None


def _laws_at_instants(states: np.ndarray, d: int) -> list[EmpiricalLaw]:
    return [EmpiricalLaw(states[i]) for i in range(states.shape[0])]


def weak_error_curve(
    model: SdeModel,
    domain: Domain,
    mu: MeasureLike,
    mu0: MeasureLike,
    horizon: float,
    eta_list: Sequence[float],
    rho_perturbation: float,
    n_replicas: int,
    rng: RngStream,
    n_instants: int = 20,
    eta_ref: Optional[float] = None,
    sliced_projections: int = 200,
) -> WeakErrorResult:
    """Distance between coarse redistribution schemes and a fine reference.

    For each step size the scheme restarts from mu (optionally perturbed by
    a uniform admixture of transport radius rho); the reference is the same
    scheme at a much finer step.  Reported per sampling instant, with the
    sup over instants and a noise floor from splitting the reference batch.
    """
    eta_list = list(eta_list)
    if any(e2 >= e1 for e1, e2 in zip(eta_list, eta_list[1:])):
        raise ReturnProcessError("eta_list must be strictly decreasing")
    if eta_ref is None:
        eta_ref = min(eta_list) / 20.0
    instants = np.linspace(0.0, horizon, n_instants + 1)[1:]
    base = measure_sampler(mu, domain)
    x0_sampler = measure_sampler(mu0, domain)
    x0s = np.asarray(x0_sampler(rng.uniforms(n_replicas)), dtype=np.float64)
    if domain.d > 1 and x0s.ndim == 1:
        x0s = x0s.reshape(n_replicas, -1)

    sampler = base
    if rho_perturbation > 0:
        if domain.d != 1 or not isinstance(domain, Interval):
            raise ReturnProcessError("perturbation radius is computed for 1-d intervals only")
        uniform_law = NumericTableQsd(
            np.linspace(domain.a, domain.b, 3), np.ones(3)
        )
        mu_law = mu if isinstance(mu, (EmpiricalLaw, ReferenceQsd)) else None
        if mu_law is None:
            raise ReturnProcessError("perturbation needs an empirical or reference mu")
        gap = wasserstein1_1d(mu_law, uniform_law)
        weight = min(1.0, rho_perturbation / gap) if gap > 0 else 0.0
        sampler = _mixture_sampler(base, measure_sampler(Interval(domain.a, domain.b), domain), weight)

    ref_trace = _batch_return(
        model, domain, StepSchedule.constant(eta_ref), horizon, base, x0s, rng, instants
    )
    ref_laws = _laws_at_instants(ref_trace.states, domain.d)
    # Noise floor: distance between the two halves of the reference batch.
    half = n_replicas // 2
    floor_by_t = np.empty(instants.size)
    for i in range(instants.size):
        a_law = EmpiricalLaw(ref_trace.states[i][:half])
        b_law = EmpiricalLaw(ref_trace.states[i][half:])
        if domain.d == 1:
            floor_by_t[i] = wasserstein1_1d(a_law, b_law)
        else:
            floor_by_t[i] = wasserstein1_sliced(a_law, b_law, sliced_projections, rng)[0]
    rows = []
    for eta in eta_list:
        trace = _batch_return(
            model, domain, StepSchedule.constant(eta), horizon, sampler, x0s, rng, instants
        )
        w1s = np.empty(instants.size)
        for i in range(instants.size):
            law = EmpiricalLaw(trace.states[i])
            if domain.d == 1:
                w1s[i] = wasserstein1_1d(law, ref_laws[i])
            else:
                w1s[i] = wasserstein1_sliced(law, ref_laws[i], sliced_projections, rng)[0]
        rows.append(WeakErrorRow(eta=eta, sup_w1=float(w1s.max()), w1_by_t=w1s))
    return WeakErrorResult(
        instants=instants,
        rows=rows,
        eta_ref=eta_ref,
        noise_floor=float(floor_by_t.max()),
        noise_floor_by_t=floor_by_t,
    )


@dataclass
class ExitTailResult:
    taus: np.ndarray
    grid: np.ndarray
    survival: np.ndarray
    slope: float
    fit_window: tuple[float, float]
    truncated: int = 0


def exit_time_tail(
    model: SdeModel,
    domain: Domain,
    eta: StepSchedule,
    n_replicas: int,
    rng: RngStream,
    starts: Optional[np.ndarray] = None,
    t_cap: float = 1000.0,
    n_grid: int = 200,
) -> ExitTailResult:
    """Empirical survival function of the grid exit time, with a tail fit.

    Replicas are split evenly across a grid of start points; the tail slope
    is a least-squares fit of log-survival over the window where between
    half and a handful of replicas survive.
    """
    if domain.d != 1:
        raise ReturnProcessError("exit-time tail diagnostics are 1-d only")
    if starts is None:
        lo, hi = domain.bounding_box()
        starts = np.linspace(lo[0], hi[0], 11)[1:-1]
    starts = np.asarray(starts, dtype=np.float64)
    per = n_replicas // starts.size
    x0s = np.repeat(starts, per)
    acc, taus, truncated = _exit_integrals(
        model, domain, eta, [], x0s, rng, t_cap
    )
    tmax = np.quantile(taus, 0.9995)
    grid = np.linspace(0.0, tmax, n_grid)
    survival = np.array([(taus > t).mean() for t in grid])
    smin = max(50.0 / taus.size, 1e-4)
    mask = (survival <= 0.5) & (survival >= smin)
    if mask.sum() < 5:
        mask = survival > 0
    slope = float(np.polyfit(grid[mask], np.log(survival[mask]), 1)[0])
    return ExitTailResult(
        taus=taus,
        grid=grid,
        survival=survival,
        slope=slope,
        fit_window=(float(grid[mask][0]), float(grid[mask][-1])),
        truncated=truncated,
    )
