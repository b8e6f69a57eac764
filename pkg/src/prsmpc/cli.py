"""``prsmpc`` command-line tool.

Subcommands::

    prsmpc prs      --config C [--out DIR]
    prsmpc simulate --config C [--out DIR] [--seed N] [--trials N] [--steps N] [--threads N]
    prsmpc compare  --config A --config B [...]
    prsmpc validate --config C [...]

Exit codes: 0 success, 1 internal error, 2 empty tightening,
3 initial infeasibility, 4 invalid or mismatched config, 5 validation
failure.
"""
import argparse
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_setup, load_config, sim_config, tighten
from .errors import ConfigError, EmptyTightening, InitialInfeasible
from .numerics import lyapunov_certificate
from .reachability import Polytope, gaussian_prs, set_to_json
from .simulator import (
    CostBoundEstimate,
    cost_bound_report,
    empirical_satisfaction,
    estimate_lipschitz_c,
    run_ensemble,
)
from .uncertainty import RngStream, expected_p_norm
from .validation import (
    closed_loop_level_check,
    nestedness_check,
    predictive_check,
    scaled_prs,
    shift_dominance_check,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_EMPTY_TIGHTENING = 2
EXIT_INITIAL_INFEASIBLE = 3
EXIT_CONFIG = 4
EXIT_VALIDATION = 5

SCHEMA_VERSION = 1
BAND_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


# -- output helpers ----------------------------------------------------------------

def fmt(x) -> str:
    """Float with 17 significant digits, so it parses back bit-exactly."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(doc) -> str:
    doc = dict(_jsonable(doc))
    doc["schema"] = SCHEMA_VERSION
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def ensemble_csv(result) -> str:
    """One row per (trial, step) for steps ``0 .. T``.

    The last row of each trial carries the final state ``x(T)`` with mode 0
    and ``nan`` in the control columns.
    """
    n, m = result.x.shape[2], result.u.shape[2]
    vs, vu = result.violations()
    vs_last = ~result.config.setup.state_set.contains(result.x[:, -1], tol=0.0)
    cols = (["trial", "step", "mode"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + [f"z{i + 1}" for i in range(n)] + [f"e{i + 1}" for i in range(n)]
            + ["cost", "violated_state", "violated_input"])
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    nan_u, nan_n = ["nan"] * m, ["nan"] * n
    for t in range(result.trials):
        for k in range(result.steps + 1):
            if k < result.steps:
                row = ([str(t), str(k), str(int(result.mode[t, k]))] + [fmt(v) for v in result.x[t, k]]
                       + [fmt(v) for v in result.u[t, k]] + [fmt(v) for v in result.z[t, k]]
                       + [fmt(v) for v in result.e[t, k]]
                       + [fmt(result.cost[t, k]), str(int(vs[t, k])), str(int(vu[t, k]))])
            else:
                row = ([str(t), str(k), "0"] + [fmt(v) for v in result.x[t, k]] + nan_u + nan_n + nan_n
                       + ["nan", str(int(vs_last[t])), "0"])
            out.write(",".join(row) + "\n")
    return out.getvalue()


def quantile_bands(result, label) -> list:
    rows = []
    for comp in range(result.x.shape[2]):
        data = result.x[:, :, comp]
        qs = np.quantile(data, BAND_QUANTILES, axis=0)
        mean = data.mean(axis=0)
        for k in range(data.shape[1]):
            rows.append([label, f"x{comp + 1}", str(k), fmt(mean[k])] + [fmt(q) for q in qs[:, k]])
    return rows


def bands_csv(rows) -> str:
    head = ["controller", "component", "step", "mean"] + [f"q{int(round(q * 100)):02d}" for q in BAND_QUANTILES]
    return ",".join(head) + "\n" + "".join(",".join(r) + "\n" for r in rows)


# -- summaries ---------------------------------------------------------------------

def burst_steps(cfg: ExperimentConfig, steps: int):
    period = cfg["disturbance"].get("burst_period")
    if "burst_covariance" not in cfg["disturbance"]:
        return []
    return [k for k in range(period, steps, period)]


def post_burst_steps(cfg, steps):
    """Realized-state indices ``kb + 1 .. kb + window`` after each burst step ``kb``."""
    window = cfg["analysis"]["post_burst_window"]
    out = []
    for kb in burst_steps(cfg, steps):
        out.extend(kb + off for off in range(1, window + 1) if kb + off <= steps)
    return out


def satisfaction_summary(cfg, result) -> dict:
    setup = result.config.setup
    lo, hi = cfg["analysis"]["satisfaction_steps"]
    x_steps = range(lo, hi + 1)
    u_steps = range(lo, min(hi, result.steps - 1) + 1)
    x_set, u_set = setup.state_set, setup.input_set
    faces = []
    for i in range(x_set.n_faces):
        face = Polytope(x_set.normals[i : i + 1], x_set.offsets[i : i + 1])
        faces.append({"normal": x_set.normals[i], "offset": x_set.offsets[i],
                      **empirical_satisfaction(result, face, x_steps).as_dict()})
    out = {
        "steps": [lo, hi],
        "state_joint": empirical_satisfaction(result, x_set, x_steps).as_dict(),
        "state_faces": faces,
        "input_joint": empirical_satisfaction(result, u_set, u_steps, signal="u").as_dict(),
    }
    pb = post_burst_steps(cfg, result.steps)
    if pb:
        out["post_burst_state_joint"] = empirical_satisfaction(result, x_set, pb).as_dict()
        out["post_burst_steps"] = pb
    return out


def _nominal_ok(result):
    setup = result.config.setup
    if result.config.variant != "smpc-prs":
        return None
    z_ok = setup.problem.state_set.contains(result.z, tol=1e-6).all()
    v_ok = setup.problem.input_set.contains(result.v, tol=1e-6).all()
    return bool(z_ok and v_ok)


def ensemble_summary(cfg, result, cost_bound=None) -> dict:
    return {
        "kind": "simulate",
        "config": cfg.echo(),
        "variant": result.config.variant,
        "trials": result.trials,
        "steps": result.steps,
        "satisfaction": satisfaction_summary(cfg, result),
        "modes": {
            "mode1_fraction": result.mode1_fraction(),
            "mode1_fraction_per_step": (result.mode == 1).mean(axis=0),
        },
        "violations": {
            "state": int(result.violations()[0].sum()),
            "input": int(result.violations()[1].sum()),
        },
        "nominal_constraints_hold": _nominal_ok(result),
        "dynamics_residual": result.dynamics_residual(),
        "cost_bound": cost_bound,
    }


def run_cost_bound(cfg, result) -> dict:
    setup = result.config.setup
    eps = cfg["controller"]["epsilon"]
    a_k = setup.system.a + setup.system.b @ np.atleast_2d(setup.k_gain)
    p_cert = lyapunov_certificate(a_k, eps)
    root = RngStream(cfg["simulation"]["seed"], 0)
    c_est = estimate_lipschitz_c(setup.problem, p_cert, cfg["analysis"]["lipschitz_samples"], root.child(1))
    w_norm = expected_p_norm(result.config.schedule.base, p_cert, cfg["analysis"]["mc_samples"], root.child(2))
    if c_est <= 0.0:
        return {"lipschitz_c": c_est, "skipped": "feasible set is a single point"}
    est = CostBoundEstimate(c_est, p_cert, eps, w_norm)
    return cost_bound_report(result, est)


# -- commands ----------------------------------------------------------------------

def _out_dir(args, cfg):
    return Path(args.out if args.out else cfg["outputs"]["directory"])


def _formats(cfg):
    return set(cfg["outputs"]["formats"])


def _load(args, index=0) -> ExperimentConfig:
    paths = args.config or []
    if len(paths) <= index:
        raise ConfigError("missing --config")
    cfg = load_config(paths[index])
    return cfg.with_overrides(seed=args.seed, trials=args.trials, steps=args.steps, threads=args.threads)


def cmd_prs(args) -> int:
    cfg = _load(args)
    setup = build_setup(cfg)
    prs_x, prs_u, z_set, v_set, _, _ = tighten(cfg, setup.k_gain, setup.sigma)
    p_x, p_u = cfg["constraints"]["p_x"], cfg["constraints"]["p_u"]
    ellipsoids = {"state": set_to_json(gaussian_prs(setup.sigma, p_x)),
                  "input_error": set_to_json(gaussian_prs(setup.sigma, p_u))}
    doc = {
        "kind": "prs",
        "config": cfg.echo(),
        "k_gain": setup.k_gain,
        "stationary_covariance": setup.sigma,
        "riccati": setup.riccati,
        "state_prs": set_to_json(prs_x),
        "input_prs": set_to_json(prs_u) if prs_u is not None else None,
        "state_tightened": set_to_json(z_set),
        "input_tightened": set_to_json(v_set),
        "ellipsoids": ellipsoids,
    }
    out = _out_dir(args, cfg)
    write_atomic(out / "prs.json", dumps_json(doc))
    hw_x = getattr(prs_x, "half_width", None)
    hw_u = getattr(prs_u, "half_width", None)
    if hw_x is not None:
        print(f"state PRS half-width: {hw_x:.6g}")
    if hw_u is not None:
        print(f"input PRS half-width: {hw_u:.6g}")
    for name, e in ellipsoids.items():
        print(f"{name} ellipsoid (level {e['level']}): radius^2 {e['radius']:.6g}, shape {np.round(e['shape'], 6).tolist()}")
    print(f"tightened state offsets: {np.round(z_set.offsets, 6).tolist()}")
    print(f"tightened input offsets: {np.round(v_set.offsets, 6).tolist()}")
    return EXIT_OK


def _simulate(cfg):
    sc = sim_config(cfg)
    return run_ensemble(sc, workers=cfg["simulation"]["threads"])


def cmd_simulate(args) -> int:
    cfg = _load(args)
    result = _simulate(cfg)
    cost = run_cost_bound(cfg, result) if cfg["analysis"]["cost_bound"] else None
    summary = ensemble_summary(cfg, result, cost)
    out = _out_dir(args, cfg)
    if "csv" in _formats(cfg):
        write_atomic(out / "trajectories.csv", ensemble_csv(result))
    if "json" in _formats(cfg):
        write_atomic(out / "summary.json", dumps_json(summary))
    sat = summary["satisfaction"]["state_joint"]
    print(f"{result.config.variant}: state satisfaction {sat['rate']:.4f} "
          f"[{sat['ci95'][0]:.4f}, {sat['ci95'][1]:.4f}] over steps {summary['satisfaction']['steps']}")
    if "post_burst_state_joint" in summary["satisfaction"]:
        print(f"post-burst state satisfaction {summary['satisfaction']['post_burst_state_joint']['rate']:.4f}")
    print(f"mode-1 fraction {summary['modes']['mode1_fraction']:.4f}")
    return EXIT_OK


_SHARED = ("system", "disturbance")


def check_compatible(a: ExperimentConfig, b: ExperimentConfig):
    for sec in _SHARED:
        if a[sec] != b[sec]:
            raise ConfigError(f"configs differ in [{sec}]; a comparison needs them identical")
    for key in ("trials", "steps", "x0"):
        if a["simulation"][key] != b["simulation"][key]:
            raise ConfigError(f"configs differ in simulation.{key}")


def cmd_compare(args) -> int:
    if not args.config or len(args.config) != 2:
        raise ConfigError("compare needs exactly two --config arguments")
    cfg_a, cfg_b = _load(args, 0), _load(args, 1)
    check_compatible(cfg_a, cfg_b)
    # common random numbers: both runs draw from config A's seed
    cfg_b = cfg_b.with_overrides(seed=cfg_a["simulation"]["seed"])
    res_a, res_b = _simulate(cfg_a), _simulate(cfg_b)
    sat_a, sat_b = satisfaction_summary(cfg_a, res_a), satisfaction_summary(cfg_b, res_b)
    label_a, label_b = f"a:{res_a.config.variant}", f"b:{res_b.config.variant}"

    def diff(key):
        if key in sat_a and key in sat_b:
            return sat_a[key]["rate"] - sat_b[key]["rate"]
        return None

    doc = {
        "kind": "compare",
        "configs": {"a": cfg_a.echo(), "b": cfg_b.echo()},
        "labels": [label_a, label_b],
        "satisfaction": {"a": sat_a, "b": sat_b},
        "difference": {k: diff(k) for k in ("state_joint", "input_joint", "post_burst_state_joint")},
        "mode1_fraction": {"a": res_a.mode1_fraction(), "b": res_b.mode1_fraction()},
        "identical_trajectories": bool(np.array_equal(res_a.x, res_b.x)),
    }
    out = _out_dir(args, cfg_a)
    if "csv" in _formats(cfg_a):
        write_atomic(out / "trajectories_a.csv", ensemble_csv(res_a))
        write_atomic(out / "trajectories_b.csv", ensemble_csv(res_b))
        write_atomic(out / "bands.csv", bands_csv(quantile_bands(res_a, label_a) + quantile_bands(res_b, label_b)))
    if "json" in _formats(cfg_a):
        write_atomic(out / "compare.json", dumps_json(doc))
    for key in ("state_joint", "post_burst_state_joint"):
        if key in sat_a:
            print(f"{key}: {label_a} {sat_a[key]['rate']:.4f}  {label_b} {sat_b[key]['rate']:.4f}")
    return EXIT_OK


def run_validation(cfg: ExperimentConfig):
    setup = build_setup(cfg)
    an = cfg["analysis"]
    scale = an["validation_prs_scale"]
    samples = an["mc_samples"]
    root = RngStream(cfg["simulation"]["seed"], 0)
    a_k = setup.system.a + setup.system.b @ np.atleast_2d(setup.k_gain)
    w_cov = setup.w_cov
    p_x = cfg["constraints"]["p_x"]

    vcfg = cfg.with_overrides(trials=an["validation_trials"], steps=an["validation_steps"])
    sc = sim_config(vcfg, setup)
    result = run_ensemble(sc, workers=cfg["simulation"]["threads"])
    prs_x = scaled_prs(setup.prs_x, scale)
    checks = [
        nestedness_check(a_k, w_cov, p_x, 10, samples, root.child(10)),
        shift_dominance_check(w_cov, 20, samples, root.child(11)),
        closed_loop_level_check(result, prs_x, "e", "closed_loop_state_prs"),
        predictive_check(result, prs_x, 5, root.child(12), "predictive_state_prs"),
    ]
    if setup.prs_u is not None:
        prs_u = scaled_prs(setup.prs_u, scale)
        checks.append(closed_loop_level_check(result, prs_u, "ke", "closed_loop_input_prs"))
    return checks


def cmd_validate(args) -> int:
    cfg = _load(args)
    checks = run_validation(cfg)
    doc = {"kind": "validate", "config": cfg.echo(), "passed": all(c.passed for c in checks),
           "checks": [c.as_dict() for c in checks]}
    out = _out_dir(args, cfg)
    write_atomic(out / "validation.json", dumps_json(doc))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}")
    return EXIT_OK if doc["passed"] else EXIT_VALIDATION


# -- entry point -------------------------------------------------------------------

COMMANDS = {"prs": cmd_prs, "simulate": cmd_simulate, "compare": cmd_compare, "validate": cmd_validate}


def build_parser():
    parser = argparse.ArgumentParser(prog="prsmpc", description="Stochastic MPC with reachable-set tightening.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", metavar="PATH",
                       help="experiment config (give twice for compare)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides outputs.directory)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--threads", type=int, help="worker processes for the ensemble")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for flag in ("trials", "steps", "threads"):
        val = getattr(args, flag)
        if val is not None and val < 1:
            print(f"error: --{flag} must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except EmptyTightening as exc:
        print(f"empty tightening: {exc}", file=sys.stderr)
        return EXIT_EMPTY_TIGHTENING
    except InitialInfeasible as exc:
        print(f"initial state infeasible: {exc}", file=sys.stderr)
        return EXIT_INITIAL_INFEASIBLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostics
        import traceback

        traceback.print_exc()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
