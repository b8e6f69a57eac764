"""Experiment configuration: TOML documents, schema validation and setup.

A config has the sections ``system``, ``disturbance``, ``constraints``,
``costs``, ``controller``, ``simulation``, ``analysis`` and ``outputs``.
Everything is validated against :data:`SCHEMA` before any computation
runs; unknown keys are rejected. ``load_config`` returns an
:class:`ExperimentConfig`; :func:`build_setup` turns it into the
matrices, sets and problems the controllers need.
"""
import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .controller import SmpcCDesign
from .errors import ConfigError, EmptyTightening
from .numerics import lqr_gain, solve_discrete_lyapunov
from .optimizer import LinearSystem, MpcProblem, maximal_invariant_terminal_set
from .reachability import (
    IntervalPrs,
    Polytope,
    chebyshev_prs,
    gaussian_prs,
    linear_image,
    marginal_interval_prs,
    pontryagin_tighten,
    support_function,
)
from .simulator import ControllerSetup, SimConfig
from .uncertainty import DisturbanceSchedule, GaussianDisturbance

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "SCHEMA",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "bundled_config",
    "build_setup",
    "sim_config",
    "tighten",
]

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_level = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}


def _section(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


SCHEMA = _section(
    {
        "system": _section({"A": _matrix, "B": _matrix}, ["A", "B"]),
        "disturbance": _section(
            {
                "covariance": _matrix,
                "burst_covariance": _matrix,
                "burst_period": {"type": "integer", "minimum": 1},
            },
            ["covariance"],
        ),
        "constraints": _section(
            {
                "state_normals": _matrix,
                "state_offsets": _vector,
                "p_x": _level,
                "input_normals": _matrix,
                "input_offsets": _vector,
                "p_u": _level,
                "method": {"enum": ["marginal", "gaussian", "chebyshev"]},
                # explicit half-widths bypass the computed PRS (marginal method only)
                "state_half_width": {"type": "number", "minimum": 0},
                "input_half_width": {"type": "number", "minimum": 0},
            },
            ["state_normals", "state_offsets", "p_x", "input_normals", "input_offsets", "p_u"],
        ),
        "costs": _section(
            {"Q": _matrix, "R": _matrix, "terminal": {"enum": ["origin", "invariant"]}},
            ["Q", "R"],
        ),
        "controller": _section(
            {
                "variant": {"enum": ["smpc-prs", "smpc-c"]},
                "horizon": {"type": "integer", "minimum": 1},
                "feasibility_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "shifted_backup": {"type": "boolean"},
            },
            ["horizon"],
        ),
        "simulation": _section(
            {
                "trials": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "x0": _vector,
                "seed": {"type": "integer", "minimum": 0},
                "threads": {"type": "integer", "minimum": 1},
            },
            ["trials", "steps", "x0"],
        ),
        "analysis": _section(
            {
                "satisfaction_steps": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                       "minItems": 2, "maxItems": 2},
                "post_burst_window": {"type": "integer", "minimum": 1},
                "cost_bound": {"type": "boolean"},
                "lipschitz_samples": {"type": "integer", "minimum": 1},
                "validation_trials": {"type": "integer", "minimum": 1},
                "validation_steps": {"type": "integer", "minimum": 1},
                "validation_prs_scale": {"type": "number", "exclusiveMinimum": 0},
                "mc_samples": {"type": "integer", "minimum": 1000},
            }
        ),
        "outputs": _section(
            {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "uniqueItems": True},
            }
        ),
    },
    ["system", "disturbance", "constraints", "costs", "controller", "simulation"],
)

DEFAULTS = {
    "constraints": {"method": "marginal"},
    "costs": {"terminal": "origin"},
    "controller": {"variant": "smpc-prs", "feasibility_tolerance": 1e-6, "epsilon": 0.1, "shifted_backup": False},
    "simulation": {"seed": 0, "threads": 1},
    "analysis": {
        "satisfaction_steps": [1, 10],
        "post_burst_window": 3,
        "cost_bound": False,
        "lipschitz_samples": 300,
        "validation_trials": 1000,
        "validation_steps": 10,
        "validation_prs_scale": 1.0,
        "mc_samples": 10000,
    },
    "outputs": {"directory": "out", "formats": ["csv", "json"]},
}


@dataclass(eq=False)
class ExperimentConfig:
    doc: dict  # validated document with defaults filled in
    source: str = "<memory>"

    def __getitem__(self, section):
        return self.doc[section]

    def with_overrides(self, **kw):
        """Copy with simulation fields (seed, trials, steps, threads) replaced."""
        doc = copy.deepcopy(self.doc)
        for key, val in kw.items():
            if val is not None:
                doc["simulation"][key] = val
        return ExperimentConfig(doc, self.source)

    def echo(self):
        """Document as written to artifacts.

        The worker count is left out because results do not depend on it.
        """
        doc = copy.deepcopy(self.doc)
        doc["simulation"].pop("threads", None)
        return doc


def _arr(x, name, ndim):
    if ndim == 2 and len({len(r) for r in x}) != 1:
        raise ConfigError(f"{name} has ragged rows")
    a = np.asarray(x, dtype=float)
    if a.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-dimensional")
    return a


def _check_dims(doc):
    a = _arr(doc["system"]["A"], "system.A", 2)
    b = _arr(doc["system"]["B"], "system.B", 2)
    n, m = a.shape[0], b.shape[1]
    if a.shape != (n, n):
        raise ConfigError(f"system.A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise ConfigError(f"system.B must have {n} rows")
    sq = {"disturbance.covariance": (doc["disturbance"]["covariance"], n),
          "costs.Q": (doc["costs"]["Q"], n), "costs.R": (doc["costs"]["R"], m)}
    if "burst_covariance" in doc["disturbance"]:
        sq["disturbance.burst_covariance"] = (doc["disturbance"]["burst_covariance"], n)
    for name, (mat, dim) in sq.items():
        if _arr(mat, name, 2).shape != (dim, dim):
            raise ConfigError(f"{name} must be {dim}x{dim}")
    c = doc["constraints"]
    for kind, dim in (("state", n), ("input", m)):
        nm = _arr(c[f"{kind}_normals"], f"constraints.{kind}_normals", 2)
        off = _arr(c[f"{kind}_offsets"], f"constraints.{kind}_offsets", 1)
        if nm.shape[1] != dim:
            raise ConfigError(f"constraints.{kind}_normals must have {dim} columns")
        if nm.shape[0] != off.size:
            raise ConfigError(f"constraints.{kind}_offsets must have {nm.shape[0]} entries")
    if len(doc["simulation"]["x0"]) != n:
        raise ConfigError(f"simulation.x0 must have {n} entries")
    if ("burst_covariance" in doc["disturbance"]) != ("burst_period" in doc["disturbance"]):
        raise ConfigError("burst_covariance and burst_period must be given together")
    lo, hi = doc["analysis"]["satisfaction_steps"]
    if lo > hi or hi > doc["simulation"]["steps"]:
        raise ConfigError("analysis.satisfaction_steps must satisfy first <= last <= simulation.steps")


def parse_config(doc: dict, source="<memory>") -> ExperimentConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {exc.message}") from None
    full = copy.deepcopy(doc)
    for sec, vals in DEFAULTS.items():
        full.setdefault(sec, {})
        for key, val in vals.items():
            full[sec].setdefault(key, copy.deepcopy(val))
    _check_dims(full)
    return ExperimentConfig(full, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, str(path))


def bundled_config(name="paper-sec5.cfg") -> ExperimentConfig:
    """Load one of the configs shipped in ``prsmpc/data``."""
    ref = resources.files("prsmpc") / "data" / name
    with ref.open("rb") as fh:
        doc = tomllib.load(fh)
    return parse_config(doc, f"<bundled {name}>")


# -- setup -------------------------------------------------------------------------

def tighten(cfg: ExperimentConfig, k_gain, sigma):
    """Compute the state/input PRSs and the tightened nominal sets.

    Returns ``(prs_x, prs_u_image, Z, V, state_prs_faces, input_prs_faces)``.
    ``prs_u_image`` is the PRS of ``K e`` when it can be represented in
    input space (single input), otherwise ``None``.
    """
    c = cfg["constraints"]
    hx = np.asarray(c["state_normals"], dtype=float)
    hu = np.asarray(c["input_normals"], dtype=float)
    x_set = Polytope(hx, np.asarray(c["state_offsets"], dtype=float))
    u_set = Polytope(hu, np.asarray(c["input_offsets"], dtype=float))
    p_x, p_u = c["p_x"], c["p_u"]
    method = c["method"]
    k_gain = np.atleast_2d(k_gain)
    hk = hu @ k_gain  # input faces written on the error

    if method == "marginal":
        sx = [_slab(row, sigma, p_x, c.get("state_half_width")) for row in hx]
        su = [_slab(row, sigma, p_u, c.get("input_half_width")) for row in hk]
        prs_x, prs_u = sx[0], su[0]
    else:
        build = gaussian_prs if method == "gaussian" else chebyshev_prs
        if "state_half_width" in c or "input_half_width" in c:
            raise ConfigError("explicit half-widths require constraints.method = 'marginal'")
        prs_x, prs_u = build(sigma, p_x), build(sigma, p_u)
        sx, su = prs_x, [prs_u] * hu.shape[0]
    z_set = pontryagin_tighten(x_set, sx)
    # V = U - K R_u, face by face on the error coordinates
    v_off = u_set.offsets.copy()
    for i, (row, s) in enumerate(zip(hk, su)):
        if np.any(row):
            v_off[i] -= support_function(s, row)
    if np.any(v_off < 0):
        i = int(np.argmin(v_off))
        raise EmptyTightening(f"input face {i} tightens to {v_off[i]:g} < 0; the PRS is too large", face=i)
    v_set = Polytope(hu.copy(), v_off)
    image = None
    if hu.shape[1] == 1:
        if isinstance(prs_u, IntervalPrs):
            image = IntervalPrs(np.ones(1), prs_u.half_width, prs_u.level)
        else:
            image = linear_image(prs_u, k_gain)
    return prs_x, image, z_set, v_set, sx, su


def _slab(row, sigma, level, override):
    row = np.asarray(row, dtype=float)
    if override is None:
        return marginal_interval_prs(row, sigma, level)
    return IntervalPrs(row, float(override), level)


def build_setup(cfg: ExperimentConfig) -> ControllerSetup:
    a = np.asarray(cfg["system"]["A"], dtype=float)
    b = np.asarray(cfg["system"]["B"], dtype=float)
    system = LinearSystem(a, b)
    q = np.asarray(cfg["costs"]["Q"], dtype=float)
    r = np.asarray(cfg["costs"]["R"], dtype=float)
    w_cov = np.asarray(cfg["disturbance"]["covariance"], dtype=float)
    k_gain, p_riccati = lqr_gain(a, b, q, r)
    a_k = a + b @ k_gain
    sigma = solve_discrete_lyapunov(a_k, w_cov)
    prs_x, prs_u, z_set, v_set, _, _ = tighten(cfg, k_gain, sigma)

    c = cfg["constraints"]
    x_set = Polytope(np.asarray(c["state_normals"], dtype=float), np.asarray(c["state_offsets"], dtype=float))
    u_set = Polytope(np.asarray(c["input_normals"], dtype=float), np.asarray(c["input_offsets"], dtype=float))
    horizon = cfg["controller"]["horizon"]
    variant = cfg["controller"]["variant"]

    def terminal(state_set, input_set):
        if cfg["costs"]["terminal"] == "origin":
            return Polytope.origin(system.n)
        rows = Polytope(input_set.normals @ k_gain, input_set.offsets)
        return maximal_invariant_terminal_set(a_k, state_set, rows)

    problem = MpcProblem(system, horizon, q, r, p_riccati, z_set, v_set, terminal(z_set, v_set))
    design = None
    if variant == "smpc-c":
        # each half-space at 1 - (1 - p)/2 so the union bound recovers p jointly
        base = MpcProblem(system, horizon, q, r, p_riccati, x_set, u_set, terminal(x_set, u_set))
        design = SmpcCDesign(base, a_k, k_gain, w_cov,
                             1.0 - (1.0 - c["p_x"]) / 2.0, 1.0 - (1.0 - c["p_u"]) / 2.0)
    return ControllerSetup(system, k_gain, x_set, u_set, problem, design, prs_x, prs_u, w_cov,
                           sigma=sigma, riccati=p_riccati)


def _schedule(cfg):
    d = cfg["disturbance"]
    base = GaussianDisturbance.zero_mean(np.asarray(d["covariance"], dtype=float))
    burst = None
    if "burst_covariance" in d:
        burst = GaussianDisturbance.zero_mean(np.asarray(d["burst_covariance"], dtype=float))
    return DisturbanceSchedule(base, burst, d.get("burst_period", 0))


def sim_config(cfg: ExperimentConfig, setup: ControllerSetup = None) -> SimConfig:
    setup = build_setup(cfg) if setup is None else setup
    s = cfg["simulation"]
    return SimConfig(
        setup=setup,
        schedule=_schedule(cfg),
        variant=cfg["controller"]["variant"],
        trials=s["trials"],
        steps=s["steps"],
        x0=np.asarray(s["x0"], dtype=float),
        seed=s["seed"],
        feas_tol=cfg["controller"]["feasibility_tolerance"],
        use_shifted_backup=cfg["controller"]["shifted_backup"],
    )

