"""Time the compiled RK4 kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--starts 256] [--repeat 3]

Two measurements: the bare ``rk4_affine`` call on a batch of random
Heisenberg and SU(2) extremals, and a full ``volume_series`` on the
paraboloid scene with each kernel swapped in.  Results are also checked
for agreement so a fast-but-wrong build shows up here.
"""
import argparse
import timeit

import numpy as np

from srtube import _backend, _kernels_py
from srtube import contact_core as cc
from srtube import geodesic_flow as gf
from srtube import surface_geom as sg
from srtube import tube_volume as tv
from srtube import cli


def starts(model, n, rng):
    x = cc.sample_points(model, n, rng)
    ang = rng.uniform(0, 2 * np.pi, n)
    comps = np.stack([np.cos(ang), np.sin(ang), rng.uniform(-3, 3, n)], 1)
    return x, gf.ambient_covector(model, x, comps)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernel(name, n, repeat, kernels):
    model = cc.by_name(name)
    x0, p0 = starts(model, n, np.random.default_rng(0))
    b, A = model.affine
    times = np.linspace(0.01, 0.1, 10)
    proj = gf._PROJ[model.projection]
    out = {}
    for label, kern in kernels.items():
        out[label] = kern(b[:2], A[:2], x0, p0, times, gf.STEP, proj)
        t = best_of(lambda: kern(b[:2], A[:2], x0, p0, times, gf.STEP, proj), repeat)
        print(f"  rk4_affine  {name:<10} {label:<7} {n:>5} starts  {t * 1e3:9.1f} ms")
    if len(out) == 2:
        (xa, _), (xb, _) = out.values()
        print(f"  max |x_cython - x_python| = {np.max(np.abs(xa - xb)):.1e}")


def bench_volume(repeat, kernels, threads):
    cfg = cli.validate(cli.load_scene("heisenberg-paraboloid-band"))
    model = cli.build_model(cfg)
    surface, patch = cli.build_surface_patch(cfg, model)
    patch = sg.SurfacePatch(patch.chart, patch.bounds, (16, 16), patch.name)
    eps = [0.005, 0.01, 0.02]
    vols = {}
    saved = _backend.rk4_affine
    try:
        for label, kern in kernels.items():
            _backend.rk4_affine = kern
            vols[label] = tv.volume_series(surface, model, patch, eps, threads=threads).vol
            t = best_of(lambda: tv.volume_series(surface, model, patch, eps, threads=threads), repeat)
            print(f"  volume_series paraboloid 16x16 {label:<7} {t:8.2f} s")
    finally:
        _backend.rk4_affine = saved
    if len(vols) == 2:
        a, b = vols.values()
        print(f"  max relative volume difference = {np.max(np.abs(a - b) / b):.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--starts", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--skip-volume", action="store_true")
    args = ap.parse_args()

    kernels = {"python": _kernels_py.rk4_affine}
    if _backend.BACKEND == "cython":
        kernels = {"cython": _backend.rk4_affine, **kernels}
    else:
        print("compiled kernel not available; timing the numpy fallback only")
    print(f"active backend: {_backend.BACKEND}")
    for name in ("heisenberg", "su2"):
        bench_kernel(name, args.starts, args.repeat, kernels)
    if not args.skip_volume:
        bench_volume(args.repeat, kernels, args.threads)


if __name__ == "__main__":
    main()
