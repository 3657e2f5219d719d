"""Time the numba and numpy kernel paths side by side.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``DELAYSPACE_NO_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from delayspace import _kernels as K
from delayspace.rpca import decompose
from delayspace.synthetic import fr_like_spec, generate

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
M = rng.normal(size=(400, 400))
m, n = 300, 300
rows = rng.integers(0, m, 200_000)
cols = rng.integers(0, n, 200_000)
vals = rng.uniform(1, 300, 200_000)
values = rng.uniform(1, 50, (470, 800))
observed = rng.random((470, 800)) < 0.85
rg = rng.integers(0, 26, 470)
cg = rng.integers(0, 26, 800)
# trie over 5000 random prefixes
from delayspace.prefixes import PrefixTable
import ipaddress
nets = [ipaddress.IPv4Network((int(a), int(p)), strict=False)
        for a, p in zip(rng.integers(0, 2**32, 5000), rng.integers(8, 25, 5000))]
table = PrefixTable((x, None) for x in nets)
ips = rng.integers(0, 2**32, 200_000).astype(np.uint32)
X, _ = generate(fr_like_spec(0))

cases = {
    "shrink 400x400": lambda: K.shrink(M, 0.3),
    "group_min 200k records": lambda: K.group_min(rows, cols, vals, m, n),
    "block_min 470x800": lambda: K.block_min(values, observed, rg, cg, 26, 26),
    "two_sigma 470x800": lambda: K.loo_two_sigma(values, observed, 3),
    "trie_lookup 200k ips": lambda: table.lookup_many(ips),
    "decompose 47x80": lambda: decompose(X),
}
out = {"backend": K.BACKEND}
for name, fn in cases.items():
    fn()  # warm-up, includes JIT compilation
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
print(json.dumps(out))
"""


def run(no_numba, repeat):
    env = dict(os.environ)
    env.pop("DELAYSPACE_NO_NUMBA", None)
    if no_numba:
        env["DELAYSPACE_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':<26}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for name in fast:
        if name == "backend":
            continue
        print(f"{name:<26}{fast[name] * 1e3:>10.2f}ms{slow[name] * 1e3:>10.2f}ms"
              f"{slow[name] / fast[name]:>9.1f}x")


if __name__ == "__main__":
    main()
