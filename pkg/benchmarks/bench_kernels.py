"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time from ``DAEMPC_NUMBA``.  Timings exclude the first call so that
JIT compilation is not counted.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time, dataclasses
import numpy as np
from daempc import numlin
from daempc._accel import backend_name
from daempc.mpc import MpcConfig, build_pipeline, run_closed_loop
from daempc.cli import load_system
from daempc.ocp import discretize, solve_ocp

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
mats = [rng.standard_normal((40, 30)) for _ in range(20)]
syms = [(lambda M: M + M.T)(rng.standard_normal((30, 30))) for _ in range(20)]
sd = load_system("builtin:singular5")
pl = build_pipeline(sd["system"], sd["constraints"], sd["S"])
red = pl.reduced
tight = dataclasses.replace(pl.terminal, rho=0.25)
docp = discretize(red, 0.3, 30, terminal=tight, gain=tight.K_gain)
z0 = red.z1_from_state(sd["x0"])
cfg = MpcConfig(0.1, 0.3, 10, 100)

def svd_work():
    return sum(float(numlin.svd(M)[1][0]) for M in mats)

def eig_work():
    return sum(float(numlin.sym_eigvals(S)[-1]) for S in syms)

def admm_work():
    return solve_ocp(docp, z0).cost

def loop_work():
    return float(run_closed_loop(sd["system"], sd["constraints"], sd["S"], sd["x0"], cfg, pipeline=pl).stage_costs.sum())

out = {"backend": backend_name()}
for name, fn in [("svd_40x30_x20", svd_work), ("eigh_30_x20", eig_work),
                 ("admm_singular5_tight", admm_work), ("closed_loop_singular5", loop_work)]:
    value = fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    out[name] = {"best_s": min(times), "value": value}
print(json.dumps(out))
"""


def run(flag: str, repeat: int) -> dict:
    env = dict(os.environ, DAEMPC_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast = run("1", args.repeat)
    slow = run("0", args.repeat)
    print(f"{'workload':<24}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'|diff|':>12}")
    for key in fast:
        if key == "backend":
            continue
        a, b = fast[key], slow[key]
        diff = abs(a["value"] - b["value"])
        print(f"{key:<24}{a['best_s']:>12.4f}{b['best_s']:>12.4f}{b['best_s'] / a['best_s']:>10.1f}{diff:>12.2e}")
    print(f"backends: {fast['backend']} vs {slow['backend']}; wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
