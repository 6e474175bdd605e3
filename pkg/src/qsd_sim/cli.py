"""Command-line front end: experiment orchestration and file outputs.

Each subcommand reads a TOML/JSON config, runs the experiment, and writes
CSV tables plus ``meta.json`` (resolved config, hash, versions) and
``summary.json`` (headline numbers) into the output directory.  CSV content
is deterministic for a fixed (config, seed); timestamps live only in the
metadata file.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_domain,
    build_model,
    build_policy,
    build_schedule,
    config_hash,
    load_config,
    resolve_config,
)
from .domain import Interval
from .dynamics import BrownianMotion, RngStream
from .estimator import RunError, run
from .measures import BmIntervalQsd, EmpiricalLaw, wasserstein1_1d
from .redistribution import QuantizedPolicy
from .return_process import (
    ReturnProcessError,
    estimate_A,
    exit_time_tail,
    weak_error_curve,
)
from .schedules import ScheduleError, StepSchedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) else str(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(str(type(obj)))


def _versions() -> dict:
    import numba
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "qsd_sim": __version__,
    }


def _write_meta(out: Path, cfg: dict, outputs: list[str], wall: float) -> None:
    _write_json(
        out / "meta.json",
        {
            "config": cfg,
            "config_hash": config_hash(cfg),
            "versions": _versions(),
            "outputs": outputs,
            "wall_time_s": wall,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
    )


def _reference_for(cfg: dict):
    """Closed-form stationary reference when the run admits one."""
    model = cfg["model"]
    dom = cfg["domain"]
    if model["kind"] == "brownian" and model.get("d", 1) == 1 and dom["kind"] == "interval":
        return BmIntervalQsd(dom["a"], dom["b"], scale=model.get("scale", 1.0))
    return None


def _build_all(cfg: dict):
    domain = build_domain(cfg["domain"])
    model = build_model(cfg["model"])
    schedule = build_schedule(cfg["schedule"])
    policy = build_policy(cfg["redistribution"], domain)
    return model, domain, schedule, policy


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_run(cfg: dict, out: Path, args) -> int:
    model, domain, schedule, policy = _build_all(cfg)
    seed = cfg["seeds"][0]
    t0 = time.perf_counter()
    result = run(
        model, domain, schedule, policy, cfg["x0"], int(cfg["steps"]),
        checkpoints=cfg["checkpoints"], seed=seed,
        discard_prefix=int(cfg["discard_prefix"]), sync_policy=True,
    )
    outputs = ["lambda.csv", "renewals.csv"]
    _write_csv(
        out / "lambda.csv",
        ["checkpoint", "big_gamma", "lambda_hat"],
        ((int(n), g, l) for n, g, l in result.lambda_traj),
    )
    _write_csv(
        out / "renewals.csv",
        ["step", "clock_time", "landing_point"],
        (
            (int(k), result.clock[k], result.points[k])
            for k in result.kill_steps
        ),
    )
    if isinstance(policy, QuantizedPolicy):
        outputs.append("cells.csv")
        reps = policy.partition.representatives
        weights = np.asarray(policy.cell_weights, dtype=float)
        tot = weights.sum()
        _write_csv(
            out / "cells.csv",
            ["cell", "representative", "weight"],
            (
                (int(i), reps[i], weights[i] / tot)
                for i in range(weights.size)
                if weights[i] > 0
            ),
        )
    else:
        outputs.append("measure.csv")
        law = result.occupation_law()
        _write_csv(
            out / "measure.csv",
            ["point", "weight"],
            zip(law.atoms, law.weights),
        )
    lam = result.survival_rate_at()
    summary = {
        "lambda_hat": lam,
        "kills": int(result.kill_count),
        "final_clock": float(result.clock[result.n_steps]),
        "seed": seed,
    }
    ref = _reference_for(cfg)
    check_ok = True
    if ref is not None:
        w1 = wasserstein1_1d(result.occupation_law(), ref)
        summary["w1_to_reference"] = w1
        summary["lambda_reference"] = ref.lambda_star
        if args.check:
            check_ok = abs(lam - ref.lambda_star) <= 0.05 * ref.lambda_star
            summary["check_passed"] = check_ok
    outputs.append("summary.json")
    _write_json(out / "summary.json", summary)
    _write_meta(out, cfg, outputs, time.perf_counter() - t0)
    print(f"lambda_hat = {lam:.6f} ({result.kill_count} kills, {result.n_steps} steps)")
    return EXIT_OK if check_ok else EXIT_CHECK


def _cmd_replica_histogram(cfg: dict, out: Path, args) -> int:
    from scipy import stats

    seeds = cfg["seeds"]
    n_rep = int(cfg["experiment_params"].get("n_replicas", len(seeds)))
    if n_rep > len(seeds):
        seeds = list(range(seeds[0], seeds[0] + n_rep))
    steps = int(cfg["steps"])
    t0 = time.perf_counter()

    def one(seed):
        model, domain, schedule, policy = _build_all(cfg)
        res = run(model, domain, schedule, policy, cfg["x0"], steps, seed=seed)
        return float(np.atleast_1d(res.end_state)[0]), res.survival_rate_at()

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        pairs = list(pool.map(one, seeds))
    ends = np.array([p[0] for p in pairs])
    lams = np.array([p[1] for p in pairs])
    ref = _reference_for(cfg)
    summary = {
        "n_replicas": len(seeds),
        "lambda_hat_mean": float(lams.mean()),
        "lambda_hat_std": float(lams.std(ddof=1)) if len(seeds) > 1 else 0.0,
    }
    outputs = ["hist.csv", "summary.json"]
    if ref is not None:
        # Equal-mass bins under the reference density.
        n_bins = 10
        edges = ref.inv_cdf(np.linspace(0.0, 1.0, n_bins + 1))
        counts, _ = np.histogram(ends, bins=edges)
        chi2, pval = stats.chisquare(counts)
        summary["chi2"] = float(chi2)
        summary["chi2_pvalue"] = float(pval)
        _write_csv(
            out / "hist.csv",
            ["bin_left", "bin_right", "mass"],
            (
                (edges[i], edges[i + 1], counts[i] / len(seeds))
                for i in range(n_bins)
            ),
        )
    else:
        counts, edges = np.histogram(ends, bins=20)
        _write_csv(
            out / "hist.csv",
            ["bin_left", "bin_right", "mass"],
            (
                (edges[i], edges[i + 1], counts[i] / len(seeds))
                for i in range(len(counts))
            ),
        )
    _write_json(out / "summary.json", summary)
    _write_meta(out, cfg, outputs, time.perf_counter() - t0)
    if "chi2_pvalue" in summary:
        print(f"chi2 p-value = {summary['chi2_pvalue']:.4f} over {len(seeds)} replicas")
    return EXIT_OK


def _cmd_operator_a(cfg: dict, out: Path, args) -> int:
    model, domain, _, _ = _build_all(cfg)
    if domain.d != 1:
        raise ConfigError("domain", "operator-a is one-dimensional")
    params = cfg["experiment_params"]
    etas = [float(e) for e in params.get("etas", [1e-2, 1e-3])]
    n_grid = int(params.get("grid_points", 9))
    n_rep = int(params.get("replicas", 10_000))
    lo, hi = domain.bounding_box()
    xs = np.linspace(lo[0], hi[0], n_grid + 2)[1:-1]
    ref_fn = None
    if isinstance(model, BrownianMotion) and isinstance(domain, Interval):
        s2 = float(model.sigma()[0, 0]) ** 2
        ref_fn = lambda x: (x - domain.a) * (domain.b - x) / s2
    t0 = time.perf_counter()
    rows = []
    for eta in etas:
        sched = StepSchedule.constant(eta)
        for i, x in enumerate(xs):
            rng = RngStream(cfg["seeds"][0], stream=hash((round(math.log10(eta), 6), i)) % (2**31))
            est = estimate_A(model, domain, sched, lambda v: np.ones_like(v), x, n_rep, rng)
            row = [eta, x, est.value, est.stderr]
            if ref_fn is not None:
                row += [ref_fn(x), abs(est.value - ref_fn(x))]
            rows.append(row)
    header = ["eta", "x", "estimate", "stderr"]
    if ref_fn is not None:
        header += ["reference", "abs_error"]
    _write_csv(out / "operator_a.csv", header, rows)
    _write_json(out / "summary.json", {"etas": etas, "grid_points": n_grid, "replicas": n_rep})
    _write_meta(out, cfg, ["operator_a.csv", "summary.json"], time.perf_counter() - t0)
    return EXIT_OK


def _cmd_weak_error(cfg: dict, out: Path, args) -> int:
    model, domain, _, _ = _build_all(cfg)
    params = cfg["experiment_params"]
    etas = [float(e) for e in params.get("etas", [0.05, 0.01, 0.002])]
    horizon = float(params.get("horizon", 1.0))
    n_rep = int(params.get("replicas", 10_000))
    rho = float(params.get("rho", 0.0))
    mu_kind = params.get("mu", "dirac")
    if mu_kind == "dirac":
        mu = float(params.get("mu_point", cfg["x0"]))
        mu0 = mu
    elif mu_kind == "sin" and isinstance(domain, Interval):
        mu = BmIntervalQsd(domain.a, domain.b)
        mu0 = mu
    elif mu_kind == "uniform" and isinstance(domain, Interval):
        mu = domain
        mu0 = domain
    else:
        raise ConfigError("experiment_params.mu", f"unsupported mu '{mu_kind}'")
    eta_ref = params.get("eta_ref")
    t0 = time.perf_counter()
    rng = RngStream(cfg["seeds"][0], stream=1)
    res = weak_error_curve(
        model, domain, mu, mu0, horizon, etas, rho, n_rep, rng,
        eta_ref=float(eta_ref) if eta_ref is not None else None,
    )
    rows = []
    for row in res.rows:
        for t, w in zip(res.instants, row.w1_by_t):
            rows.append((row.eta, t, w))
    _write_csv(out / "weak_error.csv", ["eta", "t", "w1"], rows)
    _write_json(
        out / "summary.json",
        {
            "sup_w1_by_eta": {str(r.eta): r.sup_w1 for r in res.rows},
            "eta_ref": res.eta_ref,
            "noise_floor": res.noise_floor,
        },
    )
    _write_meta(out, cfg, ["weak_error.csv", "summary.json"], time.perf_counter() - t0)
    return EXIT_OK


def _cmd_exit_tail(cfg: dict, out: Path, args) -> int:
    model, domain, _, _ = _build_all(cfg)
    params = cfg["experiment_params"]
    eta = float(params.get("eta", 1e-3))
    n_rep = int(params.get("replicas", 20_000))
    t0 = time.perf_counter()
    rng = RngStream(cfg["seeds"][0], stream=2)
    res = exit_time_tail(model, domain, StepSchedule.constant(eta), n_rep, rng)
    _write_csv(out / "exit_tail.csv", ["t", "survival"], zip(res.grid, res.survival))
    summary = {
        "slope": res.slope,
        "fit_window": list(res.fit_window),
        "replicas": n_rep,
        "eta": eta,
    }
    ref = _reference_for(cfg)
    if ref is not None:
        summary["slope_reference"] = -ref.lambda_star
    _write_json(out / "summary.json", summary)
    _write_meta(out, cfg, ["exit_tail.csv", "summary.json"], time.perf_counter() - t0)
    print(f"tail slope = {res.slope:.4f}")
    return EXIT_OK


def _cmd_policy_compare(cfg: dict, out: Path, args) -> int:
    params = cfg["experiment_params"]
    eps = float(params.get("eps", 0.01))
    policy_specs = [
        ("full", {"kind": "full"}),
        (f"quantized_eps_{eps:g}", {"kind": "quantized", "eps": eps}),
        ("window_sqrt", {"kind": "window", "rule": "sqrt"}),
    ]
    ref = _reference_for(cfg)
    t0 = time.perf_counter()

    def one(item):
        name, spec = item
        model, domain, schedule, _ = _build_all(cfg)
        policy = build_policy(spec, domain)
        res = run(model, domain, schedule, policy, cfg["x0"], int(cfg["steps"]),
                  seed=cfg["seeds"][0])
        w1 = wasserstein1_1d(res.occupation_law(), ref) if ref is not None else float("nan")
        return name, res.survival_rate_at(), w1

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        rows = list(pool.map(one, policy_specs))
    _write_csv(out / "policy_compare.csv", ["policy", "lambda_hat", "w1_to_reference"], rows)
    _write_json(
        out / "summary.json",
        {name: {"lambda_hat": lam, "w1": w1} for name, lam, w1 in rows},
    )
    _write_meta(out, cfg, ["policy_compare.csv", "summary.json"], time.perf_counter() - t0)
    for name, lam, w1 in rows:
        print(f"{name}: lambda_hat = {lam:.4f}, w1 = {w1:.4f}")
    return EXIT_OK


_COMMANDS = {
    "run": ("qsd_run", _cmd_run),
    "replica-histogram": ("replica_histogram", _cmd_replica_histogram),
    "operator-a": ("operator_a", _cmd_operator_a),
    "weak-error": ("weak_error", _cmd_weak_error),
    "exit-tail": ("exit_tail", _cmd_exit_tail),
    "policy-compare": ("policy_compare", _cmd_policy_compare),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsd-sim",
        description="Monte Carlo estimation of quasistationary distributions "
        "of killed diffusions via self-interacting Euler schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the first seed")
        p.add_argument("--steps", type=int, default=None, help="override the step count")
        p.add_argument("--out", type=str, default="results", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument(
            "--discard-prefix", type=int, default=None,
            help="drop this many initial records from the reported occupation "
            "measure (burn-in heuristic, not part of the estimator's theory)",
        )
        p.add_argument("--check", action="store_true",
                       help="exit 4 if headline numbers miss their reference bands")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        raw.setdefault("experiment", _COMMANDS[args.command][0])
        if args.seed is not None:
            raw["seeds"] = [args.seed]
        if args.steps is not None:
            raw["steps"] = args.steps
        if args.discard_prefix is not None:
            raw["discard_prefix"] = args.discard_prefix
        cfg = resolve_config(raw)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command][1](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, ReturnProcessError, ScheduleError, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
