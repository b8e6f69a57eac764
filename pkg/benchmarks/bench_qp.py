"""Time the compiled and pure-Python dual active-set kernels on the same QPs.

Usage: python3 benchmarks/bench_qp.py [--repeat N]

Two workloads are measured: the 30-input benchmark MPC problem condensed at
several initial states, and random dense QPs of growing size. Both kernels
get identical inputs and their solutions are checked to agree.
"""
import argparse
import timeit

import numpy as np

from prsmpc import _core
from prsmpc.config import build_setup, bundled_config
from prsmpc.optimizer import build_qp


def kernel_args(qp):
    j0 = qp.chol_inv if qp.chol_inv is not None else np.linalg.inv(np.linalg.cholesky(qp.hessian)).T
    return (j0, qp.g, qp.e_mat, qp.f_vec, qp.g_mat, qp.h_vec, 1e-6, 10_000)


def random_problem(gen, n, m):
    a = gen.standard_normal((n, n))
    h = a @ a.T + np.eye(n)
    g_mat = gen.standard_normal((m, n))
    h_vec = g_mat @ gen.standard_normal(n) + gen.uniform(0.0, 1.0, m)
    j0 = np.linalg.inv(np.linalg.cholesky(h)).T
    return (j0, gen.standard_normal(n) * 5, np.zeros((0, n)), np.zeros(0), g_mat, h_vec, 1e-6, 10_000)


def time_kernel(fn, problems, repeat):
    def run():
        for args in problems:
            fn(*args)
    return min(timeit.repeat(run, number=1, repeat=repeat)) / len(problems)


def check_agreement(problems):
    for args in problems:
        s1, x1, *_ = _core._qpcore.dual_active_set(*args)
        s2, x2, *_ = _core.qp_py.dual_active_set(*args)
        assert s1 == s2 and np.allclose(np.asarray(x1), x2, rtol=1e-9, atol=1e-10)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _core._qpcore is None:
        raise SystemExit("compiled kernel not built; run `pip install --no-build-isolation -e .` first")

    setup = build_setup(bundled_config("paper-sec5.cfg"))
    states = [[6.0, 0.0], [3.0, -0.3], [-10.0, 0.2], [0.5, 0.1], [20.0, 0.0]]
    workloads = {"benchmark MPC (30 vars, 120 rows)": [kernel_args(build_qp(setup.problem, z)) for z in states]}
    gen = np.random.default_rng(0)
    for n, m in ((10, 20), (30, 60), (60, 120)):
        workloads[f"random dense ({n} vars, {m} rows)"] = [random_problem(gen, n, m) for _ in range(10)]

    print(f"{'workload':40s} {'compiled':>12s} {'python':>12s} {'speed-up':>9s}")
    for name, problems in workloads.items():
        check_agreement(problems)
        t_c = time_kernel(_core._qpcore.dual_active_set, problems, args.repeat)
        t_p = time_kernel(_core.qp_py.dual_active_set, problems, args.repeat)
        print(f"{name:40s} {t_c * 1e3:10.3f}ms {t_p * 1e3:10.3f}ms {t_p / t_c:8.1f}x")


if __name__ == "__main__":
    main()
