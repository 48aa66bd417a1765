"""Half-tube volumes from the tube-map Jacobian, the coarea check and a Heisenberg distance oracle."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import contact_core as cc
from . import field_expr as fe
from . import geodesic_flow as gf
from . import surface_geom as sg

T_NODES = 16
CHUNK = 256
T_MAX = 0.3


@dataclass
class VolumeSeries:
    eps: np.ndarray
    vol: np.ndarray
    quad_err: np.ndarray
    meta: dict = field(default_factory=dict)


def _segment_nodes(eps, n_nodes):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.concatenate([[0.0], eps])
    times, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        times.append(0.5 * (b - a) * x + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(times), np.stack(weights), x


def _chunk_integrals(surface, model, patch, u, area, times, step, fd_step):
    ts = gf.tube_samples(surface, model, patch, u, times, step, fd_step)
    C = ts.C
    if np.any(C <= 0):
        j = int(np.argmin(np.min(C, 0) > 0))     # earliest bad time
        k = int(np.argmin(C[:, j]))
        raise gf.TubeValidityError(
            f"C(t, p) = {C[k, j]:.3e} <= 0 at t = {times[j]:.4g}, p = {patch.chart(u[k:k + 1])[0][0].tolist()}: "
            "the tube map is not a diffeomorphism there; lower eps",
            t=float(times[j]), point=u[k])
    if model.has_density:
        dim = ts.point.shape[-1]
        h_t = fe.evaluate(model.density, ts.point.reshape(-1, dim)).reshape(C.shape)
        h_0 = fe.evaluate(model.density, patch.chart(u)[0])
        C = C * h_t / h_0[:, None]
    # node-weighted integrand, summed over this chunk in node order
    return np.einsum("n,nm->m", area, C)


def volume_series(surface, model, patch, eps_list, t_nodes=T_NODES, step=gf.STEP,
                  fd_step=gf.FD_STEP, chunk=CHUNK, threads=1, t_max=T_MAX, shrink=True):
    """mu(U_eps) = int_0^eps int_U C(t,p) h(G(t,p))/h(p) dA dt for each eps.

    The t-integral uses Gauss-Legendre on the segments [eps_{k-1}, eps_k],
    accumulated.  quad_err is the size of the trailing Legendre coefficients
    of the t-integrand on each segment, accumulated the same way.

    All eps must be <= t_max.  If C <= 0 shows up at some t and shrink is on,
    t_max drops to t/2, larger eps are discarded and the series is redone;
    meta records the final t_max and the dropped eps.
    """
    eps = np.asarray(eps_list, dtype=float)
    if np.any(eps > t_max):
        raise ValueError(f"eps up to {eps.max():.4g} exceeds t_max = {t_max:.4g}")
    dropped = []
    while True:
        try:
            vs = _volume_series(surface, model, patch, eps, t_nodes, step, fd_step, chunk, threads)
        except gf.TubeValidityError as exc:
            t_max = 0.5 * exc.t
            keep = eps <= t_max
            if not shrink or not np.any(keep & (eps > 0)):
                raise
            dropped.extend(float(e) for e in eps[~keep])
            eps = eps[keep]
            continue
        vs.meta.update(t_max=float(t_max), dropped_eps=sorted(dropped))
        return vs


def _volume_series(surface, model, patch, eps, t_nodes, step, fd_step, chunk, threads):
    order = np.argsort(eps)
    eps_sorted = eps[order]
    if np.any(eps_sorted < 0):
        raise ValueError("eps must be nonnegative")
    positive = eps_sorted[eps_sorted > 0]
    vol_sorted = np.zeros_like(eps_sorted)
    err_sorted = np.zeros_like(eps_sorted)
    if len(positive):
        uniq = np.unique(positive)
        times, seg_w, x = _segment_nodes(uniq, t_nodes)
        area = np.abs(sg.area_element(surface, model, patch)) * patch.weights
        starts = range(0, len(patch.nodes), chunk)

        def work(s):
            sl = slice(s, s + chunk)
            return _chunk_integrals(surface, model, patch, patch.nodes[sl], area[sl],
                                    times, step, fd_step)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(work, starts))
        else:
            parts = [work(s) for s in starts]
        g = np.zeros(len(times))
        for part in parts:          # fixed reduction order
            g += part
        g = g.reshape(len(uniq), t_nodes)
        seg = np.einsum("km,km->k", seg_w, g)
        # Legendre coefficients of the integrand on each segment
        P = np.polynomial.legendre.legvander(x, t_nodes - 1)
        _, w = np.polynomial.legendre.leggauss(t_nodes)
        coef = (g * w) @ P * (2 * np.arange(t_nodes) + 1) / 2
        half = 0.5 * np.diff(np.concatenate([[0.0], uniq]))
        seg_err = half * (np.abs(coef[:, -1]) + np.abs(coef[:, -2]))
        cum = np.cumsum(seg)
        cum_err = np.cumsum(seg_err)
        idx = np.searchsorted(uniq, eps_sorted)
        mask = eps_sorted > 0
        vol_sorted[mask] = cum[idx[mask]]
        err_sorted[mask] = cum_err[idx[mask]]
    vol = np.empty_like(eps)
    err = np.empty_like(eps)
    vol[order] = vol_sorted
    err[order] = err_sorted
    meta = {"t_nodes": t_nodes, "surface_nodes": len(patch.nodes), "grid": list(patch.grid),
            "step": step, "fd_step": fd_step}
    return VolumeSeries(eps, vol, err, meta)


# ------------------------------------------------------------------- coarea

def _box_nodes(box, n):
    x, w = np.polynomial.legendre.leggauss(n)
    axes, weights = [], []
    for lo, hi in box:
        axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return axes, weights


def _check_horizontal_gradient(model, phi, start, box, node_min):
    """Raise if |grad_H Phi| vanishes somewhere in the box (not only at nodes)."""
    def sq(p):
        d1 = cc.eval_jet(phi, model, p).d1
        return float(d1[0] ** 2 + d1[1] ** 2)

    res = minimize(sq, start, method="L-BFGS-B", bounds=box,
                   options={"ftol": 1e-20, "gtol": 1e-14})
    low = min(node_min, np.sqrt(max(res.fun, 0.0)))
    if low < sg.CHAR_TOL:
        where = start if node_min < sg.CHAR_TOL else res.x
        raise sg.CharacteristicPointError(
            f"horizontal gradient of Phi vanishes in the box near {np.round(where, 12).tolist()}")


def coarea_check(model, phi, f, box, t_range=None, n=24):
    """Both sides of int f |grad_H Phi| dmu = int_t int_{Phi=t} f dA_t dt over a box.

    The left side is a tensor Gauss-Legendre volume integral with the Popp
    density 1/|det frame|.  The right side parametrizes each level set by two
    coordinates, solving Phi = t for the remaining one, and integrates the
    induced area form; t runs over Phi's range on the box (clipped to t_range).
    """
    if model.chart_dim != 3:
        raise ValueError("coarea_check works in 3-dimensional charts")
    phi = fe.parse(phi) if isinstance(phi, str) else phi
    f = fe.parse(f) if isinstance(f, str) else f
    box = [tuple(map(float, b)) for b in box]
    axes, weights = _box_nodes(box, n)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], 1)
    wts = np.einsum("i,j,k->ijk", *weights).ravel()
    F, _, _ = cc.frame_jets(model, pts)
    det = cc.check_frame(F)
    jet = cc.eval_jet(phi, model, pts)
    gh = np.hypot(jet.d1[:, 0], jet.d1[:, 1])
    _check_horizontal_gradient(model, phi, pts[np.argmin(gh)], box, gh.min())
    h = fe.evaluate(model.density, pts) if model.has_density else 1.0
    lhs = float(np.sum(wts * fe.evaluate(f, pts) * gh * h / det))

    # right side: pick the coordinate along which Phi is monotone
    _, grad, _ = fe.derivatives(phi, pts, order=1)
    k = int(np.argmax([np.min(np.abs(grad[:, i])) for i in range(3)]))
    if np.min(np.abs(grad[:, k])) < 1e-12:
        raise ValueError("Phi is not monotone in any coordinate on the box")
    free = [i for i in range(3) if i != k]
    A, B = np.meshgrid(axes[free[0]], axes[free[1]], indexing="ij")
    ab = np.stack([A.ravel(), B.ravel()], 1)
    wab = np.outer(weights[free[0]], weights[free[1]]).ravel()
    m = len(ab)

    def at(svals):
        p = np.empty((m, 3))
        p[:, free[0]], p[:, free[1]], p[:, k] = ab[:, 0], ab[:, 1], svals
        return p

    t_lo = fe.evaluate(phi, at(np.full(m, box[k][0])))
    t_hi = fe.evaluate(phi, at(np.full(m, box[k][1])))
    lo, hi = np.minimum(t_lo, t_hi), np.maximum(t_lo, t_hi)
    if t_range is not None:
        lo, hi = np.maximum(lo, t_range[0]), np.minimum(hi, t_range[1])
    hi = np.maximum(hi, lo)
    xt, wt = np.polynomial.legendre.leggauss(n)
    rhs = 0.0
    for xj, wj in zip(xt, wt):
        t = 0.5 * (hi - lo) * xj + 0.5 * (hi + lo)
        s = np.full(m, 0.5 * (box[k][0] + box[k][1]))
        for _ in range(60):
            val, g, _ = fe.derivatives(phi, at(s), order=1)
            ds = (val - t) / g[:, k]
            s = s - ds
            if np.max(np.abs(ds)) < 1e-14:
                break
        p = at(s)
        val, g, _ = fe.derivatives(phi, p, order=1)
        t1 = np.zeros((m, 3))
        t2 = np.zeros((m, 3))
        t1[:, free[0]] = 1.0
        t1[:, k] = -g[:, free[0]] / g[:, k]
        t2[:, free[1]] = 1.0
        t2[:, k] = -g[:, free[1]] / g[:, k]
        Fp, _, _ = cc.frame_jets(model, p)
        jp = cc.eval_jet(phi, model, p)
        W = np.hypot(jp.d1[:, 0], jp.d1[:, 1])
        N = np.stack([jp.d1[:, 0] / W, jp.d1[:, 1] / W, np.zeros(m)], 1)
        dA = np.abs(np.linalg.det(np.stack([N, cc.frame_components(Fp, t1),
                                            cc.frame_components(Fp, t2)], 2)))
        hp = fe.evaluate(model.density, p) if model.has_density else 1.0
        rhs += float(np.sum(wab * 0.5 * (hi - lo) * wj * fe.evaluate(f, p) * hp * dA))
    scale = max(abs(lhs), abs(rhs))
    rel = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
    return lhs, rhs, rel


# ------------------------------------------------------ Heisenberg distance

def heisenberg_product(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    z = a[..., 2] + b[..., 2] + 0.5 * (a[..., 1] * b[..., 0] - a[..., 0] * b[..., 1])
    return np.stack([a[..., 0] + b[..., 0], a[..., 1] + b[..., 1], z], -1)


def _mu(phi):
    return (phi - np.sin(phi)) / (4.0 * (1.0 - np.cos(phi)))


def _dmu(phi):
    c, s = np.cos(phi), np.sin(phi)
    return ((1 - c) * (1 - c) - (phi - s) * s) / (4.0 * (1 - c) ** 2)


def heisenberg_norm(g):
    """Sub-Riemannian distance from the origin to points g = (x, y, z)."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    rho = np.hypot(g[:, 0], g[:, 1])
    z = np.abs(g[:, 2])
    out = np.empty(len(g))
    vert = rho < 1e-300
    out[vert] = np.sqrt(4 * np.pi * z[vert])
    flat = ~vert & (z <= 1e-15 * rho ** 2)
    out[flat] = rho[flat]
    rest = ~vert & ~flat
    if rest.any():
        target = z[rest] / rho[rest] ** 2
        lo = np.zeros_like(target)
        hi = np.full_like(target, 2 * np.pi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            with np.errstate(invalid="ignore", divide="ignore"):
                val = np.where(mid < 1e-4, mid / 12.0, _mu(mid))
            below = val < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        phi = 0.5 * (lo + hi)
        for _ in range(3):
            big = phi > 1e-3
            step = np.where(big, (_mu(np.where(big, phi, 1.0)) - target) / _dmu(np.where(big, phi, 1.0)), 0.0)
            phi = np.clip(phi - step, lo, hi)
        small = phi < 1e-8
        half = np.where(small, 1.0, phi / 2)
        ratio = np.where(small, 1.0, half / np.sin(half))
        out[rest] = rho[rest] * ratio
    return out


def heisenberg_distance(a, b):
    """d(a, b) = |a^{-1} b| for the Heisenberg frame X1 = d_x + y/2 d_z."""
    a = np.atleast_2d(a)
    return heisenberg_norm(heisenberg_product(-a, np.atleast_2d(b)))


def heisenberg_distance_oracle(model, x, patch, grid=64, margin=0.25):
    """Distance from points x to the surface near the patch: grid minimum then Nelder-Mead polish.

    The search runs over the parameter rectangle enlarged by ``margin`` times its
    size on each side, so feet just past the patch edge (or across a periodic
    seam) are still found.
    """
    if model.name != "heisenberg":
        raise ValueError("the distance oracle exists only for the Heisenberg model")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    bounds = np.asarray(patch.bounds, dtype=float)
    pad = margin * (bounds[:, 1] - bounds[:, 0])
    lo, hi = bounds[:, 0] - pad, bounds[:, 1] + pad
    if isinstance(patch.chart, sg.PolarGraphChart):
        lo[0] = max(lo[0], 0.5 * bounds[0, 0])      # keep the polar radius positive
    g1, g2 = np.meshgrid(np.linspace(lo[0], hi[0], grid), np.linspace(lo[1], hi[1], grid), indexing="ij")
    uu = np.stack([g1.ravel(), g2.ravel()], 1)
    surf = patch.chart(uu)[0]
    out = np.empty(len(x))

    def dist(u, xi):
        uc = np.clip(u, lo, hi)
        return float(heisenberg_distance(patch.chart(uc[None])[0], xi[None])[0])

    for i, xi in enumerate(x):
        d = heisenberg_distance(surf, np.broadcast_to(xi, surf.shape))
        j = int(np.argmin(d))
        res = minimize(dist, uu[j], args=(xi,), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000})
        out[i] = min(d[j], res.fun)
    return out
