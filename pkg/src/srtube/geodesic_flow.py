"""Normal extremals, the tube map G(t, p) and its Jacobian determinant C(t, p).

Hamilton's equations for H = (h1^2 + h2^2)/2, h_a = <p, X_a(x)>, are
integrated in ambient coordinates with fixed-step RK4:

    x' = h1 X1 + h2 X2,    p' = -(h1 DX1^T p + h2 DX2^T p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from . import contact_core as cc
from . import surface_geom as sg

STEP = 1e-3
DRIFT_RATE = 1e-9      # allowed |2H(t) - 2H(0)| per unit time
DRIFT_ABORT = 100.0    # abort when the drift exceeds this multiple of the bound
FD_STEP = 1e-4


class IntegrationError(RuntimeError):
    pass


class TubeValidityError(RuntimeError):
    def __init__(self, message, t=None, point=None):
        super().__init__(message)
        self.t = t
        self.point = point


@dataclass
class ExtremalState:
    x: np.ndarray
    p: np.ndarray
    h: np.ndarray        # (h1, h2, h0)

    @property
    def two_H(self):
        return self.h[..., 0] ** 2 + self.h[..., 1] ** 2


@dataclass
class ExtremalPath:
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    h: np.ndarray

    @property
    def two_H(self):
        return self.h[:, 0] ** 2 + self.h[:, 1] ** 2

    def state(self, i):
        return ExtremalState(self.x[i], self.p[i], self.h[i])


def frame_pairings(model, x, p):
    """(h1, h2, h0) = <p, X_a(x)> for batches x, p of shape (n, dim)."""
    F, _, _ = cc.frame_jets(model, np.atleast_2d(x))
    return np.einsum("ni,nia->na", np.atleast_2d(p), F)


def ambient_covector(model, x, comps):
    """Covector p with <p, X_a> = comps_a (minimum norm in 4D charts)."""
    x = np.atleast_2d(x)
    F, _, _ = cc.frame_jets(model, x)
    comps = np.atleast_2d(comps)
    if F.shape[1] == 3:
        return np.linalg.solve(np.swapaxes(F, 1, 2), comps[..., None])[..., 0]
    FtF = np.einsum("nia,nib->nab", F, F)
    return np.einsum("nia,na->ni", F, np.linalg.solve(FtF, comps[..., None])[..., 0])


def transversality_covector(surface, model, p):
    """Frame components (X1 delta, X2 delta, X0 delta) of the initial covector."""
    pts, single = cc._batch(p)
    d = sg._point_data(surface, model, pts)
    comps = np.stack([d.n[:, 0], d.n[:, 1], d.q], 1)
    return comps[0] if single else comps


def initial_state(surface, model, p):
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    comps = transversality_covector(surface, model, pts)
    return ExtremalState(pts, ambient_covector(model, pts, comps), comps)


def _generic_rk4(model, x0, p0, times, step):
    def rhs(x, p):
        F, DF, _ = cc.frame_jets(model, x)
        h = np.einsum("ni,nia->na", p, F)[:, :2]
        dx = np.einsum("nia,na->ni", F[:, :, :2], h)
        dp = -np.einsum("na,naij,ni->nj", h, DF[:, :2], p)
        return dx, dp

    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    xs = np.empty((len(x), len(times), x.shape[1]))
    ps = np.empty_like(xs)
    t = 0.0
    for m, target in enumerate(times):
        dt = target - t
        nsub = 0 if dt == 0.0 else max(1, math.ceil(abs(dt) / step - 1e-9))
        for _ in range(nsub):
            hs = dt / nsub
            k1x, k1p = rhs(x, p)
            k2x, k2p = rhs(x + 0.5 * hs * k1x, p + 0.5 * hs * k1p)
            k3x, k3p = rhs(x + 0.5 * hs * k2x, p + 0.5 * hs * k2p)
            k4x, k4p = rhs(x + hs * k3x, p + hs * k3p)
            x = x + hs / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            p = p + hs / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            x = cc.project(model, x)
        t = target
        xs[:, m] = x
        ps[:, m] = p
    return xs, ps


_PROJ = {None: 0, "sphere": 1, "sl2": 2}


def flow(model, x0, p0, times, step=STEP, check_drift=True):
    """Integrate a batch of extremals; returns xs, ps, hs with shape (n, m, .)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    aff = model.affine
    if aff is not None and model.projection in _PROJ:
        b, A = aff
        xs, ps = _backend.rk4_affine(b[:2], A[:2], x0, p0, times, step, _PROJ[model.projection])
    else:
        xs, ps = _generic_rk4(model, x0, p0, times, step)
    n, m, dim = xs.shape
    hs = frame_pairings(model, xs.reshape(-1, dim), ps.reshape(-1, dim)).reshape(n, m, 3)
    if check_drift:
        h0 = frame_pairings(model, x0, p0)
        two_h0 = h0[:, 0] ** 2 + h0[:, 1] ** 2
        drift = np.abs(hs[:, :, 0] ** 2 + hs[:, :, 1] ** 2 - two_h0[:, None])
        bound = DRIFT_ABORT * DRIFT_RATE * np.maximum(np.abs(times), step)
        if np.any(drift > bound[None, :]):
            k, j = np.unravel_index(np.argmax(drift / bound[None, :]), drift.shape)
            raise IntegrationError(
                f"Hamiltonian drift {drift[k, j]:.3e} at t={times[j]:.4g} exceeds "
                f"{bound[j]:.3e} (start {x0[k].tolist()}, step {step})")
    return xs, ps, hs


def integrate_extremal(model, state0, t_end, step=STEP, times=None):
    """Path of one extremal, sampled at `times` (default: every step up to t_end)."""
    if step <= 0:
        raise ValueError("step must be positive")
    if times is None:
        nsteps = max(1, math.ceil(abs(t_end) / step - 1e-9))
        times = np.linspace(0.0, t_end, nsteps + 1)
    times = np.asarray(times, dtype=float)
    x0 = np.asarray(state0.x, dtype=float).reshape(1, -1)
    p0 = np.asarray(state0.p, dtype=float).reshape(1, -1)
    h = frame_pairings(model, x0, p0)
    if h[0, 0] ** 2 + h[0, 1] ** 2 <= 0:
        raise ValueError("initial covector has zero Hamiltonian")
    xs, ps, hs = flow(model, x0, p0, times, step)
    return ExtremalPath(times, xs[0], ps[0], hs[0])


def tube_map(surface, model, p, t, step=STEP):
    """G(t, p): endpoints of extremals leaving surface points p; t scalar or array.

    Returns (n, dim) for scalar t and (n, m, dim) for an array of times.
    """
    pts, single = cc._batch(p)
    st = initial_state(surface, model, pts)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    xs, _, _ = flow(model, st.x, st.p, times, step)
    out = xs[:, 0] if np.ndim(t) == 0 else xs
    return out[0] if single else out


# ----------------------------------------------------------- Jacobian C(t,p)

@dataclass
class TubeSamples:
    """Tube map data at patch nodes u (n, 2) and times t (m,)."""
    t: np.ndarray
    u: np.ndarray
    point: np.ndarray     # G(t, p), (n, m, dim)
    h: np.ndarray         # (h1, h2, h0) along the central extremal, (n, m, 3)
    V1: np.ndarray        # dG(X_S) in frame components at G(t, p), (n, m, 3)
    V2: np.ndarray        # dG(Y_S)
    C: np.ndarray         # (n, m)
    extra: dict = None


def _solve_tangent(t1, t2, v):
    T = np.stack([t1, t2], 2)
    TtT = np.einsum("nia,nib->nab", T, T)
    return np.linalg.solve(TtT, np.einsum("nia,ni->na", T, v)[..., None])[..., 0]


def tube_directions(surface, model, patch, u):
    """Parameter-plane directions a1, a2 with dphi(a1) = X_S and dphi(a2) = Y_S."""
    pts, t1, t2 = patch.chart(u)
    d = sg._point_data(surface, model, pts)
    zero = np.zeros_like(d.q)
    xs = np.stack([d.n[:, 1], -d.n[:, 0], zero], 1)
    ys = np.stack([d.q * d.n[:, 0], d.q * d.n[:, 1], -np.ones_like(d.q)], 1)
    a1 = _solve_tangent(t1, t2, np.einsum("nia,na->ni", d.F, xs))
    a2 = _solve_tangent(t1, t2, np.einsum("nia,na->ni", d.F, ys))
    return pts, a1, a2


def _pair(h, v):
    """<V, JN> and <V, X0> with N = (h1, h2) read from the extremal."""
    return -h[..., 1] * v[..., 0] + h[..., 0] * v[..., 1], v[..., 2]


def tube_samples(surface, model, patch, u, times, step=STEP, fd_step=FD_STEP,
                 with_theta=False):
    """Tube map and Jacobian determinant C at nodes u and times t.

    V_i are central differences of G along the surface curves with tangents
    X_S, Y_S, with one Richardson level (steps fd_step and fd_step/2).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = len(u)
    _, a1, a2 = tube_directions(surface, model, patch, u)
    offsets = [0.0, fd_step, -fd_step, 0.5 * fd_step, -0.5 * fd_step]
    params = [u]
    for a in (a1, a2):
        for off in offsets[1:]:
            params.append(u + off * a)
    allu = np.concatenate(params)
    pts, _, _ = patch.chart(allu)
    st = initial_state(surface, model, pts)
    xs, ps, hs = flow(model, st.x, st.p, times, step)
    dim = xs.shape[-1]
    blocks = xs.reshape(9, n, len(times), dim)
    center = blocks[0]
    hc = hs[:n]
    Fc, _, _ = cc.frame_jets(model, center.reshape(-1, dim))

    def richardson(i0):
        full = (blocks[i0] - blocks[i0 + 1]) / (2 * fd_step)
        half = (blocks[i0 + 2] - blocks[i0 + 3]) / fd_step
        return (4.0 * half - full) / 3.0

    V = []
    for i0 in (1, 5):
        amb = richardson(i0).reshape(-1, dim)
        V.append(cc.frame_components(Fc, amb).reshape(n, len(times), 3))
    V1, V2 = V
    j1, z1 = _pair(hc, V1)
    j2, z2 = _pair(hc, V2)
    C = j1 * z2 - j2 * z1
    extra = None
    if with_theta:
        # derivative of the angle of (h1, h2) along the same surface curves
        hb = hs.reshape(9, n, len(times), 3)

        def dtheta(i0):
            def diff(a, b, step_):
                dn = (hb[a, ..., :2] - hb[b, ..., :2]) / step_
                return hc[..., 0] * dn[..., 1] - hc[..., 1] * dn[..., 0]
            return (4.0 * diff(i0 + 2, i0 + 3, fd_step) - diff(i0, i0 + 1, 2 * fd_step)) / 3.0

        extra = {"dtheta1": dtheta(1), "dtheta2": dtheta(5), "frame": Fc}
    return TubeSamples(times, u, center, hc, V1, V2, C, extra)


def tube_jacobian(surface, model, patch, u, t, step=STEP, fd_step=FD_STEP):
    """C(t, p) at patch parameters u for time(s) t."""
    ts = tube_samples(surface, model, patch, u, np.atleast_1d(t), step, fd_step)
    C = ts.C
    if np.ndim(t) == 0:
        C = C[:, 0]
    return C[0] if np.ndim(u) == 1 else C


def parallel_mean_curvature(surface, model, patch, u, times, step=STEP, fd_step=FD_STEP):
    """Mean curvature of the parallel surfaces G(t, U) at G(t, p) (Popp measure).

    With N = (cos th, sin th) read off the extremals, -H = JN(th) + div X1 cos th
    + div X2 sin th, and JN(th) is assembled from derivatives along V1, V2.
    """
    ts = tube_samples(surface, model, patch, u, times, step, fd_step, with_theta=True)
    n, m = ts.C.shape
    dim = ts.point.shape[-1]
    nrm = np.hypot(ts.h[..., 0], ts.h[..., 1])
    n1, n2 = ts.h[..., 0] / nrm, ts.h[..., 1] / nrm
    jn = np.stack([-n2, n1, np.zeros_like(n1)], -1)
    Vs = np.stack([ts.V1, ts.V2], -1)            # (n, m, 3, 2)
    VtV = np.einsum("nmia,nmib->nmab", Vs, Vs)
    coef = np.linalg.solve(VtV, np.einsum("nmia,nmi->nma", Vs, jn)[..., None])[..., 0]
    jn_theta = coef[..., 0] * ts.extra["dtheta1"] + coef[..., 1] * ts.extra["dtheta2"]
    pts = ts.point.reshape(-1, dim)
    F, DF, _ = cc.frame_jets(model, pts)
    div1, div2, _ = cc.popp_divergence(model, pts, F, DF, "mu")
    div1, div2 = div1.reshape(n, m), div2.reshape(n, m)
    return -(jn_theta + n1 * div1 + n2 * div2), ts


def _fd(fn, tau):
    """Central first and second t-derivatives at 0 with one Richardson level."""
    times = np.array([-tau, -0.5 * tau, 0.0, 0.5 * tau, tau])
    vals = fn(times)
    d1_full = (vals[..., 4] - vals[..., 0]) / (2 * tau)
    d1_half = (vals[..., 3] - vals[..., 1]) / tau
    d2_full = (vals[..., 4] - 2 * vals[..., 2] + vals[..., 0]) / tau ** 2
    d2_half = (vals[..., 3] - 2 * vals[..., 2] + vals[..., 1]) / (0.5 * tau) ** 2
    return vals[..., 2], (4 * d1_half - d1_full) / 3, (4 * d2_half - d2_full) / 3


def _split_flow(fn, times):
    """Evaluate fn on nonnegative and negative times separately (flow starts at 0)."""
    times = np.asarray(times)
    neg = times < 0
    out = None
    for mask in (~neg, neg):
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        order = idx[np.argsort(np.abs(times[idx]))]
        vals = fn(times[order])
        if out is None:
            out = np.empty(vals.shape[:-1] + (len(times),))
        out[..., order] = vals
    return out


@dataclass
class DerivativeIdentities:
    C0: np.ndarray
    dC: np.ndarray
    d2C: np.ndarray
    H: np.ndarray
    NH: np.ndarray

    @property
    def rhs2(self):
        return self.H ** 2 - self.NH


def derivative_identities(surface, model, patch, u, tau=1e-2, step=STEP, fd_step=FD_STEP):
    """FD values of C(0), dC/dt(0), d2C/dt2(0), H(p) and N(H) at nodes u.

    H comes from the surface formula; N(H) is the t-derivative at 0 of the
    mean curvature of the parallel surfaces through G(t, p).
    """
    u = np.atleast_2d(u)
    C0, dC, d2C = _fd(lambda ts: _split_flow(
        lambda tt: tube_samples(surface, model, patch, u, tt, step, fd_step).C, ts), tau)
    _, NH, _ = _fd(lambda ts: _split_flow(
        lambda tt: parallel_mean_curvature(surface, model, patch, u, tt, step, fd_step)[0], ts), tau)
    pts = patch.chart(u)[0]
    H = sg.mean_curvature(surface, model, pts)
    return DerivativeIdentities(C0, dC, d2C, H, NH)


def pairing_rates(surface, model, patch, u, t, tau=1e-3, step=STEP, fd_step=FD_STEP):
    """(d/dt <V_i, X0>, <V_i, JN>) at (u, t) for i = 1, 2, derivative by central FD."""
    u = np.atleast_2d(u)
    times = np.array([t - tau, t, t + tau])
    ts = _split_flow(lambda tt: np.stack(_pairing_raw(surface, model, patch, u, tt, step, fd_step)), times)
    z1, z2, j1, j2 = ts
    dz1 = (z1[:, 2] - z1[:, 0]) / (2 * tau)
    dz2 = (z2[:, 2] - z2[:, 0]) / (2 * tau)
    return np.stack([dz1, dz2], 1), np.stack([j1[:, 1], j2[:, 1]], 1)


def _pairing_raw(surface, model, patch, u, times, step, fd_step):
    s = tube_samples(surface, model, patch, u, times, step, fd_step)
    j1, z1 = _pair(s.h, s.V1)
    j2, z2 = _pair(s.h, s.V2)
    return z1, z2, j1, j2
