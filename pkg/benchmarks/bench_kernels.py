"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times single-frame Lennard-Jones energy+forces (the inner call of every MALA
step), batched pair distances (the h(r) metric) and a short LJ-13 MALA chain
end to end, and checks that both backends agree before reporting.
"""
import argparse
import time

import numpy as np

from psmlab import kernels
from psmlab.potential import LennardJonesCluster, lattice_cluster
from psmlab.sampler import MalaConfig, mala_sample


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    for n in (13, 55):
        x = lattice_cluster(n, 1.1) + rng.normal(scale=0.05, size=(n, 3))
        calls = 2000

        def lj(x=x, calls=calls):
            for _ in range(calls):
                kernels.lj_energy_forces(x, 1.0, 1.0, True)

        yield f"lj_energy_forces n={n} (x{calls})", lj
    frames = lattice_cluster(13, 1.1)[None] + rng.normal(scale=0.05, size=(5000, 13, 3))
    yield "pair_distances 5000 x LJ-13", lambda: kernels.pair_distances(frames)
    system = LennardJonesCluster(13)
    init = lattice_cluster(13, 1.0).reshape(-1)
    cfg = MalaConfig(step_size=1e-3, n_samples=5000, init=init, zero_com=True)
    yield "MALA LJ-13, 5000 steps", lambda: mala_sample(system, cfg)


def check_parity(rng):
    x = lattice_cluster(55, 1.1) + rng.normal(scale=0.05, size=(55, 3))
    frames = x[None] + rng.normal(scale=0.01, size=(20, 55, 3))
    out = {}
    for name in ("python", "cython"):
        kernels.use_backend(name)
        out[name] = (kernels.lj_energy_forces(x, 1.0, 1.0, True), kernels.pair_distances(frames))
    (ep, fp, *_), dp = out["python"]
    (ec, fc, *_), dc = out["cython"]
    assert abs(ep - ec) <= 1e-10 * max(1.0, abs(ep)), (ep, ec)
    assert np.allclose(fp, fc, rtol=1e-10, atol=1e-10)
    assert np.allclose(dp, dc, rtol=1e-12, atol=0)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled kernels are not built; install with 'pip install --no-build-isolation -e .' first")
        return 1
    rng = np.random.default_rng(0)
    check_parity(rng)
    print(f"{'case':38s} {'python [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s}")
    for label, fn in cases(rng):
        timing = {}
        for name in ("python", "cython"):
            kernels.use_backend(name)
            timing[name] = best_of(fn, args.repeat)
        print(f"{label:38s} {timing['python']:11.4f} {timing['cython']:11.4f} {timing['python'] / timing['cython']:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
