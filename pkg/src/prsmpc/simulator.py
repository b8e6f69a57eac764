"""Closed-loop Monte Carlo engine and the statistics computed from it."""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controller import M1, ControllerState, SmpcCDesign, smpc_c_step, smpc_prs_step
from .errors import PrsMpcError
from .numerics import min_eigenvalue
from .optimizer import FEAS_TOL, LinearSystem, MpcProblem, solve_mpc
from .reachability import Polytope
from .uncertainty import DisturbanceSchedule, MonteCarloEstimate, RngStream

__all__ = [
    "ControllerSetup",
    "SimConfig",
    "TrialRecord",
    "EnsembleResult",
    "Rate",
    "CostBoundEstimate",
    "run_trial",
    "run_ensemble",
    "empirical_satisfaction",
    "wilson_interval",
    "closed_loop_prs_check",
    "estimate_lipschitz_c",
    "cost_bound_report",
]

WILSON_Z = 1.959963984540054


@dataclass(eq=False)
class ControllerSetup:
    """Everything a controller variant needs, shared across trials."""

    system: LinearSystem
    k_gain: np.ndarray
    state_set: Polytope  # untightened X
    input_set: Polytope  # untightened U
    problem: MpcProblem  # tightened nominal problem (SMPC-prs)
    design: Optional[SmpcCDesign] = None  # SMPC-c problem family
    prs_x: object = None
    prs_u: object = None
    w_cov: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None  # stationary error covariance
    riccati: Optional[np.ndarray] = None


@dataclass(eq=False)
class SimConfig:
    setup: ControllerSetup
    schedule: DisturbanceSchedule
    variant: str = "smpc-prs"
    trials: int = 500
    steps: int = 10
    x0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    seed: int = 0
    feas_tol: float = FEAS_TOL
    use_shifted_backup: bool = False

    def __post_init__(self):
        if self.variant not in ("smpc-prs", "smpc-c"):
            raise ValueError(f"unknown controller variant {self.variant!r}")
        if self.trials < 1 or self.steps < 1:
            raise ValueError("trials and steps must be positive")
        if self.variant == "smpc-c" and self.setup.design is None:
            raise ValueError("smpc-c needs an SmpcCDesign in the setup")
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.x0.size != self.setup.system.n:
            raise ValueError("x0 dimension does not match the system")


@dataclass(eq=False)
class TrialRecord:
    trial_id: int
    x: np.ndarray  # (T+1, n)
    u: np.ndarray  # (T, m)
    z: np.ndarray  # (T, n)
    v: np.ndarray  # (T, m)
    e: np.ndarray  # (T, n)
    w: np.ndarray  # (T, n)
    mode: np.ndarray  # (T,)
    cost: np.ndarray  # (T,)


def _disturbances(config: SimConfig, trial_id: int):
    gen = RngStream(config.seed, trial_id).generator()
    xi = gen.standard_normal((config.steps, config.setup.system.n))
    return config.schedule.draw_sequence(xi)


def run_trial(config: SimConfig, trial_id: int) -> TrialRecord:
    """Simulate one closed-loop trajectory.

    The trial's disturbances depend only on ``(config.seed, trial_id)``,
    so two configs with the same seed see identical realizations.
    """
    setup = config.setup
    sysm = setup.system
    T, n, m = config.steps, sysm.n, sysm.m
    w = _disturbances(config, trial_id)
    xs = np.zeros((T + 1, n))
    us, vs = np.zeros((T, m)), np.zeros((T, m))
    zs, es = np.zeros((T, n)), np.zeros((T, n))
    modes = np.zeros(T, dtype=np.int8)
    costs = np.zeros(T)
    xs[0] = config.x0
    state = ControllerState()
    for k in range(T):
        if config.variant == "smpc-prs":
            u, state, rec = smpc_prs_step(state, xs[k], setup.problem, setup.k_gain,
                                          config.feas_tol, config.use_shifted_backup)
        else:
            u, state, rec = smpc_c_step(state, xs[k], setup.design, setup.k_gain, config.feas_tol)
        us[k], vs[k], zs[k], es[k] = u, rec.nominal_input, rec.nominal_state, rec.error
        modes[k] = rec.mode
        costs[k] = rec.optimal_cost
        xs[k + 1] = sysm.a @ xs[k] + sysm.b @ u + w[k]
    return TrialRecord(trial_id, xs, us, zs, vs, es, w, modes, costs)


def _run_chunk(args):
    config, ids = args
    out = []
    for t in ids:
        try:
            out.append(run_trial(config, t))
        except PrsMpcError as exc:
            exc.trial_id = t
            raise
    return out


@dataclass(eq=False)
class EnsembleResult:
    config: SimConfig
    x: np.ndarray  # (trials, T+1, n)
    u: np.ndarray
    z: np.ndarray
    v: np.ndarray
    e: np.ndarray
    w: np.ndarray
    mode: np.ndarray
    cost: np.ndarray

    @property
    def trials(self):
        return self.x.shape[0]

    @property
    def steps(self):
        return self.u.shape[1]

    def dynamics_residual(self):
        a, b = self.config.setup.system.a, self.config.setup.system.b
        pred = self.x[:, :-1] @ a.T + self.u @ b.T + self.w
        return float(np.abs(self.x[:, 1:] - pred).max(initial=0.0))

    def violations(self):
        """Per-(trial, step) flags for the untightened state and input sets."""
        setup = self.config.setup
        vs = ~setup.state_set.contains(self.x[:, :-1], tol=0.0)
        vu = ~setup.input_set.contains(self.u, tol=0.0)
        return vs, vu

    def mode1_fraction(self):
        return float((self.mode == M1).mean())


def run_ensemble(config: SimConfig, workers: int = 1) -> EnsembleResult:
    """Run every trial; output is independent of ``workers``."""
    ids = list(range(config.trials))
    if workers > 1 and config.trials > 1:
        chunks = [ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
        records = sorted((r for part in parts for r in part), key=lambda r: r.trial_id)
    else:
        records = _run_chunk((config, ids))
    stack = lambda name: np.stack([getattr(r, name) for r in records])  # noqa: E731
    return EnsembleResult(config, stack("x"), stack("u"), stack("z"), stack("v"), stack("e"),
                          stack("w"), stack("mode"), stack("cost"))


# -- statistics ------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    rate: float
    low: float
    high: float
    successes: int
    total: int
    per_trial_rate: float = math.nan  # fraction of trials with no violation in range

    @property
    def stderr(self):
        return math.sqrt(max(self.rate * (1.0 - self.rate), 0.0) / self.total) if self.total else math.nan

    def as_dict(self):
        return {"rate": self.rate, "ci95": [self.low, self.high], "successes": self.successes,
                "total": self.total, "stderr": self.stderr, "per_trial_rate": self.per_trial_rate}


def wilson_interval(successes, total, z=WILSON_Z):
    if total == 0:
        return math.nan, math.nan
    p = successes / total
    denom = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    # the endpoints are exact at 0 and n successes; avoid rounding residue there
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == total else min(1.0, centre + half)
    return lo, hi


def empirical_satisfaction(result: EnsembleResult, constraint: Polytope, steps, signal="x") -> Rate:
    """Pooled (trial x step) satisfaction rate over ``steps`` with a Wilson interval.

    ``signal`` selects the realized state ``x`` or applied input ``u``.
    """
    steps = np.asarray(list(steps), dtype=int)
    data = (result.x if signal == "x" else result.u)[:, steps]
    ok = constraint.contains(data, tol=0.0)
    succ, tot = int(ok.sum()), int(ok.size)
    lo, hi = wilson_interval(succ, tot)
    per_trial = float(ok.all(axis=1).mean()) if ok.size else math.nan
    return Rate(succ / tot if tot else math.nan, lo, hi, succ, tot, per_trial)


def closed_loop_prs_check(result: EnsembleResult, prs):
    """Per-step empirical ``Pr(e(k) in prs)`` and binomial standard errors."""
    hits = prs.contains(result.e)  # (trials, T)
    rates = hits.mean(axis=0)
    se = np.sqrt(np.maximum(rates * (1 - rates), 0.0) / hits.shape[0])
    return rates, se


# -- cost bound --------------------------------------------------------------------

@dataclass
class CostBoundEstimate:
    lipschitz_c: float
    certificate: np.ndarray
    epsilon: float
    w_norm: MonteCarloEstimate  # E ||w||_P
    lhs_running_average: float = math.nan
    rhs_bound: float = math.nan

    def __post_init__(self):
        if not self.lipschitz_c > 0:
            raise ValueError("lipschitz_c must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def _feasible_box(problem: MpcProblem, tol):
    """Bounding box of feasible initial states, from LPs over (z0, V)."""
    from scipy.optimize import linprog

    c = problem.condensed
    n, m, N = problem.system.n, problem.system.m, problem.horizon
    rows, rhs = [], []
    hx = problem.state_set.normals
    for i in range(N):
        ph = c.phi[i * n : (i + 1) * n]
        gm = c.gamma[i * n : (i + 1) * n]
        rows.append(np.hstack([hx @ ph, hx @ gm]))
        rhs.append(problem.state_offsets[i])
    hu = problem.input_set.normals
    for i in range(N):
        blk = np.zeros((hu.shape[0], n + N * m))
        blk[:, n + i * m : n + (i + 1) * m] = hu
        rows.append(blk)
        rhs.append(problem.input_offsets[i])
    ht = problem.terminal_set.normals
    rows.append(np.hstack([ht @ c.phi[N * n :], ht @ c.gamma[N * n :]]))
    rhs.append(problem.terminal_set.offsets)
    a_ub, b_ub = np.vstack(rows), np.concatenate(rhs)
    lo, hi = np.zeros(n), np.zeros(n)
    for j in range(n):
        obj = np.zeros(n + N * m)
        obj[j] = 1.0
        for sgn, store in ((1.0, lo), (-1.0, hi)):
            res = linprog(sgn * obj, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * (n + N * m), method="highs")
            if res.status != 0:
                raise ValueError("feasible set is empty or unbounded; cost bound requires it bounded")
            store[j] = sgn * res.fun
    return lo, hi


def estimate_lipschitz_c(problem: MpcProblem, certificate, samples, rng, tol=FEAS_TOL):
    """Sampled lower estimate of ``C`` with ``J*(z+e) - J*(z) <= C ||e||_P``.

    Pairs ``(z, z+e)`` are drawn with ``z`` uniform over the bounding box
    of the feasible set (rejecting infeasible points) and ``e`` in a
    random direction with a log-uniform length. Returns 0 when the
    feasible set is a single point.
    """
    p = np.asarray(certificate, dtype=float)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    lo, hi = _feasible_box(problem, tol)
    span = hi - lo
    diam = float(np.linalg.norm(span))
    if diam <= 1e-12:
        return 0.0
    n = problem.system.n
    best = 0.0
    found = 0
    attempts = 0
    cache = {}

    def cost(z):
        key = z.tobytes()
        if key not in cache:
            sol = solve_mpc(problem, z, tol)
            cache[key] = sol.optimal_cost if sol.optimal else None
        return cache[key]

    while found < samples and attempts < 50 * samples:
        attempts += 1
        z = lo + span * gen.random(n)
        jz = cost(z)
        if jz is None:
            continue
        d = gen.standard_normal(n)
        d /= np.linalg.norm(d)
        length = diam * 10.0 ** gen.uniform(-4.0, 0.0)
        ze = z + length * d
        jze = cost(ze)
        if jze is None:
            continue
        found += 1
        e = ze - z
        pn = math.sqrt(float(e @ p @ e))
        if pn > 0:
            best = max(best, abs(jze - jz) / pn)
    return best


def cost_bound_report(result: EnsembleResult, estimate: CostBoundEstimate, sigmas=3.0):
    """Check the average asymptotic cost bound and the expected decrease.

    Returns a dict with the running average of
    ``||z||_Q^2 + ||u||_R^2 + eps C ||e||_P`` (pooled over trials), the
    bound ``C E||w||_P``, their standard errors, and the per-step
    expected-decrease check.
    """
    setup = result.config.setup
    prob = setup.problem
    q, r = prob.q, prob.r
    p = estimate.certificate
    c = estimate.lipschitz_c
    eps = estimate.epsilon

    zq = np.einsum("tki,ij,tkj->tk", result.z, q, result.z)
    ur = np.einsum("tki,ij,tkj->tk", result.u, r, result.u)
    vr = np.einsum("tki,ij,tkj->tk", result.v, r, result.v)
    ep = np.sqrt(np.maximum(np.einsum("tki,ij,tkj->tk", result.e, p, result.e), 0.0))

    stage = zq + ur + eps * c * ep
    per_trial = stage.mean(axis=1)
    lhs = float(per_trial.mean())
    lhs_se = float(per_trial.std(ddof=1) / math.sqrt(len(per_trial))) if len(per_trial) > 1 else 0.0
    rhs = c * estimate.w_norm.value
    rhs_se = c * estimate.w_norm.stderr
    pooled = math.hypot(lhs_se, rhs_se)
    estimate.lhs_running_average = lhs
    estimate.rhs_bound = rhs

    # E[J*(z(k+1)) - J*(z(k))] <= -||z||_Q^2 - ||v||_R^2 - eps C ||e||_P + C E||w||_P
    slack = (result.cost[:, 1:] - result.cost[:, :-1]) + zq[:, :-1] + vr[:, :-1] + eps * c * ep[:, :-1] - rhs
    mean_slack = slack.mean(axis=0)
    se_slack = slack.std(axis=0, ddof=1) / math.sqrt(slack.shape[0]) if slack.shape[0] > 1 else np.zeros_like(mean_slack)
    margin = mean_slack - sigmas * np.hypot(se_slack, rhs_se)
    decrease_ok = bool(np.all(margin <= 0.0))

    return {
        "lipschitz_c": c,
        "epsilon": eps,
        "lambda_min_p": min_eigenvalue(p),
        "expected_w_norm_p": estimate.w_norm.value,
        "expected_w_norm_p_stderr": estimate.w_norm.stderr,
        "lhs_running_average": lhs,
        "lhs_stderr": lhs_se,
        "rhs_bound": rhs,
        "rhs_stderr": rhs_se,
        "bound_holds": bool(lhs <= rhs + sigmas * pooled),
        "decrease_holds": decrease_ok,
        "decrease_worst_margin": float(margin.max(initial=-math.inf)),
        "decrease_mean_slack": mean_slack.tolist(),
    }
