"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--scale 0.25] [--steps 50] [--grid 24x12]

Steps one coupled-cell batch (the msDEM inner loop) and one whole-domain DEM
with each backend and reports the mean wall time per fine step.
"""

import argparse
import time

import numpy as np

from msdem import _kernels_py, dem
from msdem.core import CoarseGrid, PhysParams
from msdem.coupling import build_cells
from msdem.harness import make_scenario


def _time(batch, ocean, params, steps):
    batch.step(ocean, params, 1e-4)  # warm-up
    t0 = time.perf_counter()
    for _ in range(steps):
        batch.step(ocean, params, 1e-4)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=0.25)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--grid", default="24x12")
    ap.add_argument("--scenario", default="s42")
    args = ap.parse_args()

    try:
        from msdem import _kernels as compiled
    except ImportError:
        compiled = None
        print("compiled kernels not built; timing the fallback only")
    spec = make_scenario(args.scenario, args.scale)
    params = PhysParams()
    grid = CoarseGrid.parse(args.grid)
    spec.check_grid(grid)
    floes = spec.floes()
    x0, x1, y0, y1 = spec.domain

    print(f"{spec.id} scale {args.scale}: {spec.nfloes} floes, {args.steps} steps")
    print(f"{'case':<22}{'backend':<10}{'ms/step':>10}")
    backends = [("python", _kernels_py)] + ([("cython", compiled)] if compiled else [])
    results = {}
    for case in ("cells " + args.grid, "global dem"):
        for name, mod in backends:
            dem.kernels = mod
            if case == "global dem":
                batch = dem.DemCell.from_arrays(r=floes["r"], x=floes["x"], y=floes["y"],
                                                vx=floes["vx"], vy=floes["vy"], box=(x0, y0, x1, y1),
                                                params=params, periodic=spec.periodic).as_batch()
            else:
                batch = build_cells(floes, grid, params)
            ms = 1e3 * _time(batch, spec.ocean, params, args.steps)
            results[case, name] = (ms, batch.x.copy())
            print(f"{case:<22}{name:<10}{ms:>10.3f}")
        if compiled:
            py, cy = results[case, "python"], results[case, "cython"]
            same = np.array_equal(py[1], cy[1])
            print(f"{'':<22}speed-up {py[0] / cy[0]:.1f}x, identical states: {same}")


if __name__ == "__main__":
    main()
