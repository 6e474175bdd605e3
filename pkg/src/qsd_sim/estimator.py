"""The main algorithm: self-interacting Euler chain with redistribution.

Runs the scheme, maintains the occupation measure and kill indicators,
logs renewal times, and produces a run result with the survival-rate
trajectory and measure diagnostics.  A jitted fast path covers
one-dimensional affine-drift models on intervals; a generic Python loop
with identical semantics covers everything else.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .domain import Domain, Interval
from .dynamics import RngStream, SdeModel
from .measures import EmpiricalLaw
from .redistribution import (
    EmptyMeasureError,
    FixedPolicy,
    QuantizedPolicy,
    RedistributionPolicy,
)
from .schedules import StepSchedule

__all__ = [
    "QsdRunResult",
    "run",
    "survival_rate",
    "renewal_measure",
    "tightness_profile",
    "default_checkpoints",
    "replay_check",
    "RunError",
]

DEFAULT_TIGHTNESS_ETAS = (0.01, 0.02, 0.05, 0.1, 0.2)


class RunError(RuntimeError):
    pass


def default_checkpoints(n_steps: int, base: int = 10, factor: float = 1.5) -> list[int]:
    """Geometric checkpoint indices, always ending at n_steps."""
    out = []
    x = float(base)
    while x < n_steps:
        n = int(math.ceil(x))
        if not out or n > out[-1]:
            out.append(n)
        x *= factor
    if not out or out[-1] != n_steps:
        out.append(n_steps)
    return out


@dataclass
class QsdRunResult:
    """Everything a finished chain leaves behind."""

    points: np.ndarray          # recorded states, length n_steps + 1
    theta: np.ndarray           # kill flags theta_1 .. theta_{n_steps}
    kill_steps: np.ndarray      # step indices n_j with theta = 1
    kill_src: np.ndarray        # restart source (point index / cell id / -1)
    step_weights: np.ndarray    # gamma_1 .. gamma_{n_steps + 1}
    clock: np.ndarray           # Gamma_0 .. Gamma_{n_steps + 1}
    checkpoints: list[int]
    lambda_traj: np.ndarray     # columns: n, Gamma_n, lambda_hat
    tightness_etas: tuple
    tightness: np.ndarray
    config: dict
    seed: int
    stream: int
    wall_time: float = 0.0
    discard_prefix: int = 0

    @property
    def n_steps(self) -> int:
        return self.theta.shape[0]

    @property
    def kill_count(self) -> int:
        return int(self.kill_steps.shape[0])

    @property
    def end_state(self):
        return self.points[-1]

    def occupation_law(self, upto: Optional[int] = None) -> EmpiricalLaw:
        """The normalized occupation measure after ``upto`` steps.

        Point k carries the weight of the step it opened, so the measure
        after n steps involves points 0 .. n-1.
        """
        n = self.n_steps if upto is None else upto
        if not 1 <= n <= self.n_steps:
            raise RunError(f"checkpoint {n} outside [1, {self.n_steps}]")
        lo = min(self.discard_prefix, n - 1)
        return EmpiricalLaw(self.points[lo:n], self.step_weights[lo:n])

    def survival_rate_at(self, n: Optional[int] = None) -> float:
        n = self.n_steps if n is None else n
        kills = int(np.count_nonzero(self.theta[:n]))
        gamma_n = float(self.clock[n])
        if gamma_n <= 0:
            raise RunError("survival rate undefined before the clock starts")
        return kills / gamma_n

    def renewal_law(self) -> Optional[EmpiricalLaw]:
        """Uniform empirical measure over post-kill landing points."""
        if self.kill_count == 0:
            return None
        return EmpiricalLaw(self.points[self.kill_steps])

    def renewal_clock_times(self) -> np.ndarray:
        return self.clock[self.kill_steps]

    def canonical_digest(self) -> str:
        """Hash of everything deterministic about the run (no wall time)."""
        h = hashlib.sha256()
        h.update(json.dumps(self.config, sort_keys=True).encode())
        for arr in (self.points, self.theta, self.kill_steps, self.kill_src,
                    self.lambda_traj, self.tightness):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def survival_rate(result: QsdRunResult) -> float:
    return result.survival_rate_at()


def renewal_measure(result: QsdRunResult) -> EmpiricalLaw:
    law = result.renewal_law()
    if law is None:
        raise RunError("no renewal occurred")
    return law


def tightness_profile(measure: EmpiricalLaw, domain: Domain, etas: Sequence[float]) -> np.ndarray:
    """Mass within distance eta of the boundary, for each eta."""
    psi = domain.signed_distance_many(measure.atoms)
    return np.array([float(measure.weights[psi < eta].sum()) for eta in etas])


def _policy_kernel_args(desc: dict, n_steps: int):
    """Fill kernel arguments from a policy descriptor, with dummies."""
    cell_weights = np.zeros(1)
    cell_reps = np.full(1, np.nan)
    fixed_atoms = np.zeros(1)
    fixed_cumw = np.ones(1)
    args = dict(
        policy_code=desc["policy_code"],
        wrule_code=desc.get("window_rule_code", 0),
        wparam=desc.get("window_param", 0.0),
        cell_lo=desc.get("cell_lo", 0.0),
        cell_w=desc.get("cell_width", 1.0),
        cell_law_code=desc.get("cell_law_code", 0),
        fixed_code=desc.get("fixed_code", 0),
        fixed_a=desc.get("fixed_a", 0.0),
        fixed_b=desc.get("fixed_b", 1.0),
    )
    if desc["policy_code"] == _kernels.POLICY_QUANTIZED:
        cell_weights = np.array(desc["cell_weights"], dtype=np.float64)
        cell_reps = np.array(desc["cell_reps"], dtype=np.float64)
    if desc["policy_code"] == _kernels.POLICY_FIXED and desc.get("fixed_code") == 0:
        fixed_atoms = np.ascontiguousarray(desc["fixed_atoms"], dtype=np.float64)
        fixed_cumw = np.ascontiguousarray(desc["fixed_cumw"], dtype=np.float64)
    args.update(
        cell_weights=cell_weights,
        cell_reps=cell_reps,
        fixed_atoms=fixed_atoms,
        fixed_cumw=fixed_cumw,
    )
    return args


def _sync_policy_from_kernel(policy: RedistributionPolicy, kargs: dict,
                             pts: np.ndarray, gam: np.ndarray) -> None:
    """Mirror the kernel's occupation state back into the policy object."""
    if isinstance(policy, QuantizedPolicy):
        policy.cell_weights[:] = kargs["cell_weights"]
        policy._total = float(kargs["cell_weights"].sum())
        policy._cum = None
        reps = kargs["cell_reps"]
        for i in range(reps.shape[0]):
            if not math.isnan(reps[i]) and policy.partition.representative(i) is None:
                policy.partition.set_representative(i, reps[i])
    elif not isinstance(policy, FixedPolicy):
        for x, w in zip(pts, gam):
            policy.record_visit(x, w)


def run(
    model: SdeModel,
    domain: Domain,
    schedule: StepSchedule,
    policy: RedistributionPolicy,
    x0,
    n_steps: int,
    *,
    checkpoints: Optional[Sequence[int]] = None,
    rng: Optional[RngStream] = None,
    seed: int = 0,
    stream: int = 0,
    tightness_etas: Sequence[float] = DEFAULT_TIGHTNESS_ETAS,
    discard_prefix: int = 0,
    sync_policy: bool = False,
) -> QsdRunResult:
    """Run the self-interacting chain for n_steps steps.

    Per step: draw the Gaussian increment, propose the Euler update, kill if
    the proposal leaves the domain and land on a restart point drawn from
    the policy's current law (which only involves earlier history), then
    record the landing point with the weight of the next step.  Deterministic
    given (seed, stream, configuration).
    """
    if n_steps < 1:
        raise RunError("n_steps must be >= 1")
    if not domain.contains(x0):
        raise RunError(f"start point {x0} is not inside the domain")
    if model.d != domain.d:
        raise RunError("model and domain dimensions differ")
    if rng is None:
        rng = RngStream(seed, stream)
    else:
        seed, stream = rng.seed, rng.stream
    cps = sorted(set(checkpoints)) if checkpoints else default_checkpoints(n_steps)
    if cps[-1] > n_steps or cps[0] < 1:
        raise RunError("checkpoints must lie in [1, n_steps]")

    gam = schedule.gamma_array(n_steps + 1)
    cumgam = schedule.big_gamma_array(n_steps + 1)
    if domain.d == 1:
        z = rng.normals(n_steps)
    else:
        z = rng.normals(n_steps * domain.d).reshape(n_steps, domain.d)
    u1 = rng.uniforms(n_steps)
    u2 = rng.uniforms(n_steps)

    pts = np.empty(n_steps + 1) if domain.d == 1 else np.empty((n_steps + 1, domain.d))
    theta = np.zeros(n_steps, dtype=np.uint8)
    kill_steps = np.empty(n_steps, dtype=np.int64)
    kill_src = np.empty(n_steps, dtype=np.int64)

    t0 = time.perf_counter()
    affine = model.affine_coefficients_1d()
    desc = policy.kernel_descriptor()
    used_kernel = False
    if affine is not None and isinstance(domain, Interval) and desc is not None:
        a, c, s = affine
        kargs = _policy_kernel_args(desc, n_steps)
        nk = _kernels.qsd_chain_1d(
            float(np.asarray(x0).reshape(-1)[0]),
            n_steps,
            gam,
            cumgam,
            z,
            u1,
            u2,
            a,
            c,
            s,
            domain.a,
            domain.b,
            kargs["policy_code"],
            kargs["wrule_code"],
            kargs["wparam"],
            kargs["cell_lo"],
            kargs["cell_w"],
            kargs["cell_law_code"],
            kargs["cell_weights"],
            kargs["cell_reps"],
            kargs["fixed_code"],
            kargs["fixed_atoms"],
            kargs["fixed_cumw"],
            kargs["fixed_a"],
            kargs["fixed_b"],
            pts,
            theta,
            kill_steps,
            kill_src,
        )
        kill_steps = kill_steps[:nk].copy()
        kill_src = kill_src[:nk].copy()
        if sync_policy:
            _sync_policy_from_kernel(policy, kargs, pts, gam)
        used_kernel = True
    else:
        kill_steps, kill_src = _run_python(
            model, domain, policy, x0, n_steps, gam, z, u1, u2, rng, pts, theta
        )
    if not np.all(np.isfinite(pts)):
        bad = int(np.argmax(~np.isfinite(pts)))
        raise RunError(f"non-finite state at step {bad}")
    wall = time.perf_counter() - t0

    cum_theta = np.cumsum(theta)
    lam = np.array(
        [[n, cumgam[n], cum_theta[n - 1] / cumgam[n]] for n in cps], dtype=np.float64
    )
    final_law = EmpiricalLaw(
        pts[min(discard_prefix, n_steps - 1):n_steps],
        gam[min(discard_prefix, n_steps - 1):n_steps],
    )
    tight = tightness_profile(final_law, domain, tightness_etas)

    config = {
        "model": model.to_config(),
        "domain": domain.to_config(),
        "schedule": _schedule_config(schedule),
        "redistribution": policy.to_config(),
        "x0": float(np.asarray(x0).reshape(-1)[0]) if domain.d == 1 else list(np.asarray(x0)),
        "n_steps": n_steps,
        "seed": seed,
        "stream": stream,
        "discard_prefix": discard_prefix,
        "engine": "kernel" if used_kernel else "python",
    }
    return QsdRunResult(
        points=pts,
        theta=theta,
        kill_steps=kill_steps,
        kill_src=kill_src,
        step_weights=gam,
        clock=cumgam,
        checkpoints=cps,
        lambda_traj=lam,
        tightness_etas=tuple(tightness_etas),
        tightness=tight,
        config=config,
        seed=seed,
        stream=stream,
        wall_time=wall,
        discard_prefix=discard_prefix,
    )


def _schedule_config(schedule: StepSchedule) -> dict:
    if schedule.kind == "polynomial":
        return {"kind": "polynomial", "c": schedule.c, "rho": schedule.rho}
    if schedule.kind == "constant":
        return {"kind": "constant", "gamma": schedule.constant_gamma}
    return {"kind": "custom"}


def _run_python(model, domain, policy, x0, n_steps, gam, z, u1, u2, rng, pts, theta):
    """Generic loop; identical decisions to the jitted kernel."""
    d = model.d
    sig = model.sigma()
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    pts[0] = x[0] if d == 1 else x
    policy.record_visit(x[0] if d == 1 else x, gam[0])
    kill_steps = []
    kill_src = []
    for k in range(n_steps):
        dt = gam[k]
        if d == 1:
            noise = np.array([z[k] * math.sqrt(dt)])
        else:
            noise = z[k] * math.sqrt(dt)
        prop = x + model.drift(x) * dt + sig @ noise
        if domain.signed_distance(prop) > 0:
            theta[k] = 0
            land = prop
        else:
            theta[k] = 1
            try:
                if isinstance(policy, QuantizedPolicy):
                    restart = policy.restart_from_uniform(
                        float(u1[k]), rng, u2=float(u2[k])
                    )
                else:
                    restart = policy.restart_from_uniform(float(u1[k]), rng)
            except EmptyMeasureError:
                restart = x0
            land = np.atleast_1d(np.asarray(restart, dtype=np.float64))
            kill_steps.append(k + 1)
            kill_src.append(-1)
        pts[k + 1] = land[0] if d == 1 else land
        policy.record_visit(land[0] if d == 1 else land, gam[k + 1])
        x = land
    return np.asarray(kill_steps, dtype=np.int64), np.asarray(kill_src, dtype=np.int64)


def replay_check(result: QsdRunResult, model: SdeModel, domain: Domain,
                 schedule: StepSchedule) -> bool:
    """Re-derive every decision of a recorded 1-d run from its trace.

    Regenerates the noise from (seed, stream), recomputes each Euler
    proposal and kill flag, and checks every landing: non-kill landings must
    equal the proposal exactly; kill landings must match a restart redrawn
    from the recorded history with the recorded uniform.
    """
    n = result.n_steps
    rng = RngStream(result.seed, result.stream)
    z = rng.normals(n)
    u1 = rng.uniforms(n)
    u2 = rng.uniforms(n)
    gam = result.step_weights
    cumgam = result.clock
    pts = result.points
    affine = model.affine_coefficients_1d()
    if affine is None or not isinstance(domain, Interval):
        raise RunError("replay is implemented for 1-d interval runs")
    a, c, s = affine
    props = pts[:-1] + (a * pts[:-1] + c) * gam[:n] + s * np.sqrt(gam[:n]) * z
    killed = ~((domain.a < props) & (props < domain.b))
    if not np.array_equal(killed.astype(np.uint8), result.theta):
        return False
    if not np.allclose(pts[1:][~killed], props[~killed], rtol=0, atol=0):
        return False
    pol = result.config["redistribution"]["kind"]
    for j, n_j in enumerate(result.kill_steps):
        k = int(n_j) - 1
        u = float(u1[k])
        if pol == "full":
            v = u * cumgam[k + 1]
            idx = int(np.searchsorted(cumgam[: k + 2], v, side="right")) - 1
            idx = min(max(idx, 0), k)
            if result.kill_src[j] != idx or pts[k + 1] != pts[idx]:
                return False
        elif pol == "window":
            m = k + 1
            rule = result.config["redistribution"]["rule"]
            par = result.config["redistribution"]["param"]
            t = min(int(math.isqrt(m)) if rule == "sqrt" else int(par * m), m - 1)
            base = cumgam[t]
            v = base + u * (cumgam[k + 1] - base)
            idx = int(np.searchsorted(cumgam[: k + 2], v, side="right")) - 1
            idx = min(max(idx, t), k)
            if result.kill_src[j] != idx or pts[k + 1] != pts[idx]:
                return False
        elif pol == "quantized":
            continue  # handled by the sequential reconstruction below
        else:
            continue
    if pol == "quantized":
        return _replay_quantized(result, domain, u1)
    return True


def _replay_quantized(result: QsdRunResult, domain: Domain, u1: np.ndarray) -> bool:
    """Rebuild the per-cell occupation mass step by step and re-derive each
    quantized restart (cell choice and representative) from the trace."""
    eps = result.config["redistribution"]["eps"]
    cell_law = result.config["redistribution"]["cell_law"]
    part = domain.build_partition(eps)
    n_cells = part.n_cells
    lo = float(part.lo[0])
    width = float(part.steps[0])
    reps = np.array(part.representatives, dtype=np.float64)
    weights = np.zeros(n_cells)
    pts = result.points
    gam = result.step_weights
    kills = set(int(k) for k in result.kill_steps)
    src = {int(k): int(s) for k, s in zip(result.kill_steps, result.kill_src)}

    def cell_of(x):
        c = int((x - lo) / width)
        return min(max(c, 0), n_cells - 1)

    c0 = cell_of(pts[0])
    if math.isnan(reps[c0]):
        reps[c0] = pts[0]
    weights[c0] += gam[0]
    total = weights[c0]
    for k in range(result.n_steps):
        step = k + 1
        if step in kills:
            v = float(u1[k]) * total
            acc = 0.0
            cell = n_cells - 1
            for i in range(n_cells):
                acc += weights[i]
                if v < acc:
                    cell = i
                    break
            if src[step] != cell:
                return False
            if cell_law == "dirac":
                if pts[step] != reps[cell]:
                    return False
            else:
                clo = lo + cell * width
                if not (clo <= pts[step] <= clo + width):
                    return False
        land = pts[step]
        c = cell_of(land)
        if math.isnan(reps[c]):
            reps[c] = land
        weights[c] += gam[step]
        total += gam[step]
    return True
