"""Implicit surfaces, quadrature patches and pointwise surface invariants.

Everything is computed from a defining function f and its frame jets; the
signed distance is never needed on the surface because

    X_i(delta) = X_i f / |grad_H f|.

Conventions (frame components w.r.t. X1, X2, X0, with F_a = s * X_a f and
W = |grad_H f|):

    N   = (F1, F2) / W           horizontal unit normal
    X_S = (F2, -F1, 0) / W       characteristic direction, JN = -X_S
    q   = F0 / W                 the Reeb derivative X0(delta)
    Y_S = q N - X0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import contact_core as cc
from . import field_expr as fe

CHAR_TOL = 1e-6
ON_SURFACE_TOL = 1e-8


class CharacteristicPointError(ValueError):
    pass


class NotOnSurfaceError(ValueError):
    pass


class UnsupportedMeasureError(ValueError):
    pass


@dataclass(frozen=True)
class ImplicitSurface:
    f: fe.Expr
    orientation: int = 1

    def __post_init__(self):
        if isinstance(self.f, str):
            object.__setattr__(self, "f", fe.parse(self.f))
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    def flipped(self):
        return ImplicitSurface(self.f, -self.orientation)

    def value(self, pts):
        return fe.evaluate(self.f, pts)


# ------------------------------------------------------------------- charts

class PolarGraphChart:
    """(r, theta) -> (r cos theta, r sin theta, g(r)) for g(r) = sum a_i r^i."""

    def __init__(self, g_coeffs):
        self.g = np.polynomial.Polynomial(np.asarray(g_coeffs, dtype=float))
        self.dg = self.g.deriv()
        self.dim = 3

    def __call__(self, u):
        r, th = u[:, 0], u[:, 1]
        c, s = np.cos(th), np.sin(th)
        pts = np.stack([r * c, r * s, self.g(r)], 1)
        t1 = np.stack([c, s, self.dg(r)], 1)
        t2 = np.stack([-r * s, r * c, np.zeros_like(r)], 1)
        return pts, t1, t2


class SU2BandChart:
    """(phi, z) -> (rho cos phi, rho sin phi, z, 0) on w = 0, rho = sqrt(1 - z^2)."""

    dim = 4

    def __call__(self, u):
        ph, z = u[:, 0], u[:, 1]
        rho = np.sqrt(1.0 - z * z)
        c, s = np.cos(ph), np.sin(ph)
        zero = np.zeros_like(z)
        pts = np.stack([rho * c, rho * s, z, zero], 1)
        t1 = np.stack([-rho * s, rho * c, zero, zero], 1)
        t2 = np.stack([-z / rho * c, -z / rho * s, np.ones_like(z), zero], 1)
        return pts, t1, t2


class SL2Chart:
    """(x, y) -> (x, y, y, (1 + y^2)/x) on the surface y = z of xw - yz = 1."""

    dim = 4

    def __call__(self, u):
        x, y = u[:, 0], u[:, 1]
        zero = np.zeros_like(x)
        one = np.ones_like(x)
        pts = np.stack([x, y, y, (1.0 + y * y) / x], 1)
        t1 = np.stack([one, zero, zero, -(1.0 + y * y) / (x * x)], 1)
        t2 = np.stack([zero, one, one, 2.0 * y / x], 1)
        return pts, t1, t2


class GraphChart:
    """Level set of f in R^3 solved for one coordinate by Newton's method."""

    def __init__(self, f, solve_for=2, guess=0.0, tol=1e-13, max_iter=50):
        self.f = fe.parse(f) if isinstance(f, str) else f
        self.k = solve_for
        self.free = [i for i in range(3) if i != solve_for]
        self.guess = guess
        self.tol = tol
        self.max_iter = max_iter
        self.dim = 3

    def __call__(self, u):
        n = len(u)
        pts = np.empty((n, 3))
        pts[:, self.free[0]] = u[:, 0]
        pts[:, self.free[1]] = u[:, 1]
        pts[:, self.k] = self.guess
        for _ in range(self.max_iter):
            val, grad, _ = fe.derivatives(self.f, pts, order=1)
            step = val / grad[:, self.k]
            pts[:, self.k] -= step
            if np.max(np.abs(step)) < self.tol:
                break
        else:
            raise NotOnSurfaceError("graph chart: Newton iteration did not converge")
        _, grad, _ = fe.derivatives(self.f, pts, order=1)
        tangents = []
        for j in self.free:
            t = np.zeros((n, 3))
            t[:, j] = 1.0
            t[:, self.k] = -grad[:, j] / grad[:, self.k]
            tangents.append(t)
        return pts, tangents[0], tangents[1]


@dataclass
class SurfacePatch:
    """Chart on a rectangle with tensor Gauss-Legendre nodes."""
    chart: object
    bounds: tuple
    grid: tuple = (32, 32)
    name: str = "patch"

    def __post_init__(self):
        (a1, b1), (a2, b2) = self.bounds
        if not (b1 > a1 and b2 > a2):
            raise ValueError(f"empty parameter range {self.bounds}")
        if min(self.grid) < 1:
            raise ValueError("grid sizes must be positive")
        x1, w1 = np.polynomial.legendre.leggauss(self.grid[0])
        x2, w2 = np.polynomial.legendre.leggauss(self.grid[1])
        u1 = 0.5 * (b1 - a1) * x1 + 0.5 * (b1 + a1)
        u2 = 0.5 * (b2 - a2) * x2 + 0.5 * (b2 + a2)
        U1, U2 = np.meshgrid(u1, u2, indexing="ij")
        self.nodes = np.stack([U1.ravel(), U2.ravel()], 1)
        self.weights = np.outer(w1 * 0.5 * (b1 - a1), w2 * 0.5 * (b2 - a2)).ravel()

    @property
    def dim(self):
        return self.chart.dim

    def points(self, u=None):
        return self.chart(self.nodes if u is None else np.atleast_2d(u))[0]

    def refined(self, factor=2):
        return SurfacePatch(self.chart, self.bounds,
                            (self.grid[0] * factor, self.grid[1] * factor), self.name)

    def coarsened(self, factor=2):
        return SurfacePatch(self.chart, self.bounds,
                            (max(1, self.grid[0] // factor), max(1, self.grid[1] // factor)),
                            self.name)

    def boundary(self, n=64):
        """Parameter samples along the four edges of the rectangle."""
        (a1, b1), (a2, b2) = self.bounds
        s1, s2 = np.linspace(a1, b1, n), np.linspace(a2, b2, n)
        return np.concatenate([np.c_[s1, np.full(n, a2)], np.c_[s1, np.full(n, b2)],
                               np.c_[np.full(n, a1), s2], np.c_[np.full(n, b1), s2]])

    def validate(self, surface, model, char_tol=CHAR_TOL):
        """Check the nodes lie on f = 0 and that the closed patch avoids characteristic points."""
        pts = self.points()
        resid = np.max(np.abs(surface.value(pts)))
        if resid > 1e-10:
            raise NotOnSurfaceError(f"patch nodes off the surface by {resid:.3e}")
        if model.constraint is not None:
            cres = np.max(np.abs(cc.constraint_residual(model, pts)))
            if cres > 1e-10:
                raise NotOnSurfaceError(f"patch nodes off the model manifold by {cres:.3e}")
        jet = cc.eval_jet(surface.f, model, np.concatenate([pts, self.points(self.boundary())]))
        W = np.hypot(jet.d1[:, 0], jet.d1[:, 1])
        if not W.min() >= 10 * char_tol:
            raise CharacteristicPointError(
                f"patch comes within |grad_H f| = {W.min():.3e} of a characteristic point")
        return {"max_residual": float(resid), "min_horizontal_gradient": float(W.min())}


def rotational_patch(g_coeffs, r_range, theta_range=(0.0, 2 * np.pi), grid=(32, 32)):
    return SurfacePatch(PolarGraphChart(g_coeffs), (tuple(r_range), tuple(theta_range)), tuple(grid),
                        "rotational")


def su2_band_patch(z_range, phi_range=(0.0, 2 * np.pi), grid=(32, 32)):
    if max(abs(z_range[0]), abs(z_range[1])) >= 1.0:
        raise ValueError("band must stay away from the poles z = +-1")
    return SurfacePatch(SU2BandChart(), (tuple(phi_range), tuple(z_range)), tuple(grid), "su2_band")


def sl2_patch(x_range, y_range, grid=(32, 32)):
    if x_range[0] <= 0 < x_range[1] or x_range[0] < 0 <= x_range[1]:
        raise ValueError("the SL(2) chart needs x bounded away from 0")
    return SurfacePatch(SL2Chart(), (tuple(x_range), tuple(y_range)), tuple(grid), "sl2")


def graph_patch(f, solve_for, ranges, grid=(32, 32), guess=0.0):
    return SurfacePatch(GraphChart(f, solve_for, guess), tuple(tuple(r) for r in ranges),
                        tuple(grid), "graph")


# ------------------------------------------------------- pointwise geometry

@dataclass
class SurfaceFrame:
    """Frame-component data of the surface at a point (or batch)."""
    n: np.ndarray        # (X1 delta, X2 delta)
    x_s: np.ndarray      # X_S in (X1, X2, X0) components
    y_s: np.ndarray      # Y_S in (X1, X2, X0) components
    jn: np.ndarray       # JN = -X_S
    q: np.ndarray        # X0 delta
    grad_h_norm: np.ndarray


@dataclass
class _PointData:
    pts: np.ndarray
    F: np.ndarray
    DF: np.ndarray
    jet: cc.ScalarJet    # jets of s*f
    W: np.ndarray
    n: np.ndarray
    q: np.ndarray
    dW: np.ndarray       # X_a(W), a = 1, 2, 0
    dq: np.ndarray       # X_a(q)
    dn: np.ndarray       # dn[:, a, b] = X_a(n_b)


def _point_data(surface, model, pts, char_tol=CHAR_TOL):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    val, grad, hess = fe.derivatives(surface.f, pts, order=2)
    s = surface.orientation
    F, DF, _ = cc.frame_jets(model, pts)
    cc.check_frame(F)
    jet = cc.jets_from_coordinates(s * val, s * grad, s * hess, F, DF)
    d1, d2 = jet.d1, jet.d2
    W = np.hypot(d1[:, 0], d1[:, 1])
    if np.any(W < char_tol):
        bad = pts[np.argmin(W)]
        raise CharacteristicPointError(f"characteristic point near {bad.tolist()}")
    n = d1[:, :2] / W[:, None]
    q = d1[:, 2] / W
    dW = (d1[:, 0, None] * d2[:, :, 0] + d1[:, 1, None] * d2[:, :, 1]) / W[:, None]
    dq = d2[:, :, 2] / W[:, None] - d1[:, 2, None] * dW / (W ** 2)[:, None]
    dn = d2[:, :, :2] / W[:, None, None] - d1[:, None, :2] * (dW / (W ** 2)[:, None])[:, :, None]
    return _PointData(pts, F, DF, jet, W, n, q, dW, dq, dn)


def _out(x, single):
    return float(x[0]) if single else x


def _check_on_surface(surface, pts, tol=ON_SURFACE_TOL):
    resid = np.abs(surface.value(pts))
    if np.any(resid > tol):
        raise NotOnSurfaceError(f"point off the surface (|f| = {resid.max():.3e})")


def is_characteristic(surface, model, p, char_tol=CHAR_TOL):
    """True where the horizontal gradient of f vanishes to char_tol."""
    pts, single = cc._batch(p)
    _check_on_surface(surface, pts)
    jet = cc.eval_jet(surface.f, model, pts)
    result = np.hypot(jet.d1[:, 0], jet.d1[:, 1]) < char_tol
    return bool(result[0]) if single else result


def surface_frame(surface, model, p):
    pts, single = cc._batch(p)
    d = _point_data(surface, model, pts)
    zero = np.zeros_like(d.q)
    x_s = np.stack([d.n[:, 1], -d.n[:, 0], zero], 1)
    y_s = np.stack([d.q * d.n[:, 0], d.q * d.n[:, 1], -np.ones_like(d.q)], 1)
    fr = SurfaceFrame(d.n, x_s, y_s, -x_s, d.q, d.W)
    if single:
        return SurfaceFrame(*(getattr(fr, k)[0] for k in fr.__dataclass_fields__))
    return fr


def area_element(surface, model, patch, u=None):
    """Pulled-back area density h * det[N, d_u1 phi, d_u2 phi] (frame components).

    Signed: it flips with the orientation of the surface or of the chart.
    """
    u = patch.nodes if u is None else np.atleast_2d(u)
    pts, t1, t2 = patch.chart(u)
    d = _point_data(surface, model, pts)
    c1 = cc.frame_components(d.F, t1)
    c2 = cc.frame_components(d.F, t2)
    N = np.stack([d.n[:, 0], d.n[:, 1], np.zeros_like(d.q)], 1)
    det = np.linalg.det(np.stack([N, c1, c2], 2))
    h = fe.evaluate(model.density, pts) if model.has_density else 1.0
    weight = h * det
    if np.any(np.abs(det) < 1e-14):
        raise ValueError("degenerate parametrization (area density ~ 0)")
    return weight


def _mean_curvature(model, d, measure):
    div1, div2, _ = cc.popp_divergence(model, d.pts, d.F, d.DF, measure)
    return -(d.dn[:, 0, 0] + d.dn[:, 1, 1] + d.n[:, 0] * div1 + d.n[:, 1] * div2)


def mean_curvature(surface, model, p, measure="mu"):
    """H = -div(N) for mu = h * Popp (measure="mu") or Popp itself ("popp")."""
    if measure not in ("mu", "popp"):
        raise ValueError(f"unknown measure {measure!r}")
    pts, single = cc._batch(p)
    return _out(_mean_curvature(model, _point_data(surface, model, pts), measure), single)


def _require_popp(model):
    if model.has_density:
        raise UnsupportedMeasureError("the third coefficient integrand needs the Popp measure (h = 1)")


def _xs_q(d):
    return d.n[:, 1] * d.dq[:, 0] - d.n[:, 0] * d.dq[:, 1]


def a3_integrand(surface, model, p):
    """2 X_S(q) - q^2 - kappa - <Tor(X0, X_S), N> at surface points (Popp measure)."""
    _require_popp(model)
    pts, single = cc._batch(p)
    d = _point_data(surface, model, pts)
    sc = cc._structure_batch(d.F, d.DF)
    kappa = cc._kappa_batch(model, d.pts, sc)
    tau = cc.torsion_from_constants(sc)
    xs = np.stack([d.n[:, 1], -d.n[:, 0]], 1)
    pairing = np.einsum("na,nab,nb->n", xs, tau, d.n)
    return _out(2.0 * _xs_q(d) - d.q ** 2 - kappa - pairing, single)


def a3_integrand_leftinvariant(surface, model, p):
    """Same integrand for canonical left-invariant frames: the torsion term is chi (n1^2 - n2^2)."""
    _require_popp(model)
    if not model.left_invariant:
        raise cc.InvalidStructureError("model is not declared left-invariant")
    pts, single = cc._batch(p)
    d = _point_data(surface, model, pts)
    sc = cc._structure_batch(d.F, d.DF)
    cc.check_canonical(sc)
    kappa = 0.5 * (sc.c2_01 - sc.c1_02)
    chi = cc.signed_chi(sc)
    return _out(2.0 * _xs_q(d) - d.q ** 2 - kappa + chi * (d.n[:, 0] ** 2 - d.n[:, 1] ** 2), single)


def gaussian_curvature(surface, model, p):
    """Diagnostic K_S = X_S(q) - q^2."""
    pts, single = cc._batch(p)
    d = _point_data(surface, model, pts)
    return _out(_xs_q(d) - d.q ** 2, single)


def riemannian_mean_curvature(surface, model, p, eps):
    """Mean curvature for the metric making X1, X2, eps X_theta orthonormal.

    Tends to the sub-Riemannian mean curvature as eps -> 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts, single = cc._batch(p)
    val, grad, hess = fe.derivatives(surface.f, pts, order=2)
    s = surface.orientation
    Ft, DFt = cc.transverse_frame(model, pts)
    cc.check_frame(Ft)
    jet = cc.jets_from_coordinates(s * val, s * grad, s * hess, Ft, DFt)
    d1, d2 = jet.d1, jet.d2
    if np.any(np.hypot(d1[:, 0], d1[:, 1]) < CHAR_TOL):
        raise CharacteristicPointError("characteristic point")
    e2 = eps * eps
    wts = np.array([1.0, 1.0, e2])
    S = np.sqrt(d1[:, 0] ** 2 + d1[:, 1] ** 2 + e2 * d1[:, 2] ** 2)
    dS = np.einsum("b,nb,nab->na", wts, d1, d2) / S[:, None]
    comps = wts * d1 / S[:, None]
    # X_a of the a-th component of the normal, summed over a
    trace = sum(wts[a] * (d2[:, a, a] / S - d1[:, a] * dS[:, a] / S ** 2) for a in range(3))
    sct = cc._structure_batch(Ft, DFt)
    div = np.stack([sct.c2_12 - sct.c0_01, -sct.c1_12 - sct.c0_02, sct.c1_01 + sct.c2_02], 1)
    H = -(trace + np.einsum("na,na->n", comps, div))
    return _out(H, single)
