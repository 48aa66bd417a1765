"""Three-dimensional contact sub-Riemannian structures given by coordinate frames.

A model is an orthonormal horizontal frame X1, X2 plus the Reeb field X0,
each a tuple of coordinate-component expressions.  Frame derivatives come
from symbolic differentiation of those expressions, so every pointwise
quantity here is exact up to rounding.

Structure constants follow c^k_ij = <w^k, [X_j, X_i]>, so that

    [X2, X1] = c1_12 X1 + c2_12 X2 + X0
    [X1, X0] = c1_01 X1 + c2_01 X2
    [X2, X0] = c1_02 X1 + c2_02 X2

Frame-indexed arrays are always ordered (X1, X2, X0).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import field_expr as fe

STRUCT_TOL = 1e-9
DET_TOL = 1e-12


class DegenerateFrameError(ValueError):
    pass


class InvalidStructureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ContactModel:
    name: str
    chart_dim: int
    frame: tuple
    constraint: fe.Expr = None
    projection: str = None
    density: fe.Expr = fe.Const(1.0)
    h_min: float = 1e-8
    transverse: tuple = None
    declared: dict = None
    left_invariant: bool = False
    params: dict = field(default_factory=dict)

    @property
    def has_density(self):
        return not (isinstance(self.density, fe.Const) and self.density.value == 1.0)

    @property
    def affine(self):
        """(b, A) with X_a(x) = b_a + A_a x when every frame component is affine."""
        try:
            return self.__dict__["_affine"]
        except KeyError:
            pass
        dim = self.chart_dim
        result = None
        if all(all(isinstance(h, fe.Const) and h.value == 0.0
                   for row in fe.hessian_exprs(comp, dim) for h in row)
               for fld in self.frame for comp in fld):
            zero = np.zeros((1, dim))
            b = np.empty((3, dim))
            A = np.empty((3, dim, dim))
            for a, fld in enumerate(self.frame):
                for i, comp in enumerate(fld):
                    val, grad, _ = fe.derivatives(comp, zero, order=1)
                    b[a, i] = val[0]
                    A[a, i] = grad[0]
            result = (b, A)
        object.__setattr__(self, "_affine", result)
        return result

    def describe(self):
        out = {"name": self.name, "chart_dim": self.chart_dim}
        out.update(self.params)
        if self.has_density:
            out["density"] = fe.to_source(self.density)
        return out


def _exprs(components):
    return tuple(c if isinstance(c, fe.Expr) else fe.parse(str(c)) for c in components)


def heisenberg():
    """First Heisenberg group, X1 = d_x + (y/2) d_z, X2 = d_y - (x/2) d_z."""
    frame = (_exprs(["1", "0", "y/2"]), _exprs(["0", "1", "-x/2"]), _exprs(["0", "0", "1"]))
    return ContactModel("heisenberg", 3, frame, declared=_declared(), left_invariant=True)


def su2(k=1.0):
    """SU(2) on the unit sphere of R^4 with horizontal scale k."""
    k = float(k)
    kk = 2.0 * k * k
    frame = (
        _exprs([f"{k!r}*z", f"-{k!r}*w", f"-{k!r}*x", f"{k!r}*y"]),
        _exprs([f"{k!r}*w", f"{k!r}*z", f"-{k!r}*y", f"-{k!r}*x"]),
        _exprs([f"-{kk!r}*y", f"{kk!r}*x", f"-{kk!r}*w", f"{kk!r}*z"]),
    )
    return ContactModel(
        "su2", 4, frame,
        constraint=fe.parse("x^2 + y^2 + z^2 + w^2 - 1"), projection="sphere",
        declared=_declared(c2_01=4 * k * k, c1_02=-4 * k * k),
        left_invariant=True, params={"k": k},
    )


def sl2(k=1.0):
    """SL(2) on the quadric xw - yz = 1 with horizontal scale k."""
    k = float(k)
    kk = 2.0 * k * k
    frame = (
        _exprs([f"{k!r}*y", f"{k!r}*x", f"{k!r}*w", f"{k!r}*z"]),
        _exprs([f"{k!r}*x", f"-{k!r}*y", f"{k!r}*z", f"-{k!r}*w"]),
        _exprs([f"-{kk!r}*y", f"{kk!r}*x", f"-{kk!r}*w", f"{kk!r}*z"]),
    )
    return ContactModel(
        "sl2", 4, frame,
        constraint=fe.parse("x*w - y*z - 1"), projection="sl2",
        declared=_declared(c2_01=-4 * k * k, c1_02=4 * k * k),
        left_invariant=True, params={"k": k},
    )


def custom(frame, constraint=None, density=None, transverse=None,
           left_invariant=False, declared=None, name="custom"):
    """Model from expression strings: frame = [X1, X2, X0], each a component list."""
    if len(frame) != 3:
        raise ValueError("frame needs exactly three fields X1, X2, X0")
    fields_ = tuple(_exprs(f) for f in frame)
    dim = len(fields_[0])
    if dim not in (3, 4) or any(len(f) != dim for f in fields_):
        raise ValueError("frame fields must all have 3 or 4 components")
    if dim == 4 and constraint is None:
        raise ValueError("a 4-dimensional chart needs a constraint")
    kwargs = {}
    if constraint is not None:
        kwargs["constraint"] = _exprs([constraint])[0]
        kwargs["projection"] = "newton"
    if density is not None:
        kwargs["density"] = _exprs([density])[0]
    if transverse is not None:
        kwargs["transverse"] = _exprs(transverse)
    return ContactModel(name, dim, fields_, declared=declared,
                        left_invariant=left_invariant, **kwargs)


def _declared(**overrides):
    d = {f.name: 0.0 for f in fields(StructureConstants)}
    d["c0_12"] = 1.0
    d.update(overrides)
    return d


def by_name(name, k=1.0):
    if name == "heisenberg":
        return heisenberg()
    if name == "su2":
        return su2(k)
    if name == "sl2":
        return sl2(k)
    raise ValueError(f"unknown built-in model {name!r}")


# ------------------------------------------------------------ frame algebra

def _batch(p):
    pts = np.asarray(p, dtype=float)
    return np.atleast_2d(pts), pts.ndim == 1


def frame_jets(model, pts, order=1):
    """Frame values and coordinate derivatives at a batch of points.

    Returns F (n, dim, 3) with columns X1, X2, X0, DF (n, 3, dim, dim) with
    DF[:, a, i, j] = d_j X_a^i, and D2F (n, 3, dim, dim, dim) with
    D2F[:, a, i, j, k] = d_k d_j X_a^i (None unless order == 2).
    """
    pts = np.atleast_2d(pts)
    n, dim = pts.shape
    F = np.empty((n, dim, 3))
    DF = np.empty((n, 3, dim, dim))
    D2F = np.empty((n, 3, dim, dim, dim)) if order >= 2 else None
    for a, fld in enumerate(model.frame):
        for i, comp in enumerate(fld):
            val, grad, hess = fe.derivatives(comp, pts, order=max(order, 1))
            F[:, i, a] = val
            DF[:, a, i] = grad
            if D2F is not None:
                D2F[:, a, i] = hess
    return F, DF, D2F


def check_frame(F):
    if F.shape[1] == 3:
        det = np.abs(np.linalg.det(F))
    else:
        det = np.sqrt(np.abs(np.linalg.det(np.einsum("nia,nib->nab", F, F))))
    if np.any(det < DET_TOL):
        raise DegenerateFrameError(f"frame matrix is singular (|det| = {det.min():.3e})")
    return det


def frame_components(F, v):
    """Components of ambient vectors v (n, dim) in the frame F (n, dim, 3)."""
    if F.shape[1] == 3:
        return np.linalg.solve(F, v[..., None])[..., 0]
    FtF = np.einsum("nia,nib->nab", F, F)
    Ftv = np.einsum("nia,ni->na", F, v)
    return np.linalg.solve(FtF, Ftv[..., None])[..., 0]


def frame_pseudoinverse(F):
    if F.shape[1] == 3:
        return np.linalg.inv(F)
    FtF = np.einsum("nia,nib->nab", F, F)
    return np.linalg.solve(FtF, np.swapaxes(F, 1, 2))


def _bracket(DF, F, j, i):
    """[X_j, X_i] = DX_i X_j - DX_j X_i in ambient components."""
    return (np.einsum("nkl,nl->nk", DF[:, i], F[:, :, j])
            - np.einsum("nkl,nl->nk", DF[:, j], F[:, :, i]))


def _bracket_derivative(DF, D2F, F, j, i, v):
    """Derivative of [X_j, X_i] along ambient vectors v."""
    d2i = np.einsum("nklm,nm->nkl", D2F[:, i], v)
    d2j = np.einsum("nklm,nm->nkl", D2F[:, j], v)
    dXj = np.einsum("nkl,nl->nk", DF[:, j], v)
    dXi = np.einsum("nkl,nl->nk", DF[:, i], v)
    return (np.einsum("nkl,nl->nk", d2i, F[:, :, j]) + np.einsum("nkl,nl->nk", DF[:, i], dXj)
            - np.einsum("nkl,nl->nk", d2j, F[:, :, i]) - np.einsum("nkl,nl->nk", DF[:, j], dXi))


# bracket slots: (j, i) with c^k_ij = <w^k, [X_j, X_i]>; frame indices X1=0, X2=1, X0=2
_SLOTS = {"12": (1, 0), "01": (0, 2), "02": (1, 2)}


@dataclass(frozen=True)
class StructureConstants:
    c1_12: np.ndarray
    c2_12: np.ndarray
    c0_12: np.ndarray
    c1_01: np.ndarray
    c2_01: np.ndarray
    c0_01: np.ndarray
    c1_02: np.ndarray
    c2_02: np.ndarray
    c0_02: np.ndarray

    def c(self, k, ij):
        """Accessor by upper index and lower pair, e.g. c(2, "01") for c^2_01."""
        return getattr(self, f"c{k}_{ij}")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _structure_batch(F, DF):
    Finv = frame_pseudoinverse(F)
    out = {}
    for ij, (j, i) in _SLOTS.items():
        comps = np.einsum("nak,nk->na", Finv, _bracket(DF, F, j, i))
        out[f"c1_{ij}"] = comps[:, 0]
        out[f"c2_{ij}"] = comps[:, 1]
        out[f"c0_{ij}"] = comps[:, 2]
    return StructureConstants(**out)


def _squeeze(obj, single):
    if not single:
        return obj
    if isinstance(obj, StructureConstants):
        return StructureConstants(**{k: float(v[0]) for k, v in obj.as_dict().items()})
    return obj[0]


def structure_constants(model, p):
    """Structure constants at a point (dim,) or a batch (n, dim)."""
    pts, single = _batch(p)
    F, DF, _ = frame_jets(model, pts)
    check_frame(F)
    return _squeeze(_structure_batch(F, DF), single)


def structure_derivatives(model, pts, ij="12"):
    """Frame derivatives X_a(c^k_ij) as (n, 3 directions, 3 components k=1,2,0)."""
    pts = np.atleast_2d(pts)
    F, DF, D2F = frame_jets(model, pts, order=2)
    check_frame(F)
    Finv = frame_pseudoinverse(F)
    j, i = _SLOTS[ij]
    b = _bracket(DF, F, j, i)
    c = np.einsum("nak,nk->na", Finv, b)
    out = np.empty((len(pts), 3, 3))
    for a in range(3):
        v = F[:, :, a]
        db = _bracket_derivative(DF, D2F, F, j, i, v)
        dF = np.einsum("nbkl,nl->nkb", DF, v)
        out[:, a] = np.einsum("nak,nk->na", Finv, db - np.einsum("nkb,nb->nk", dF, c))
    return out


def torsion_from_constants(sc):
    off = 0.5 * (np.asarray(sc.c1_02) + np.asarray(sc.c2_01))
    return np.stack([np.stack([np.asarray(sc.c1_01, dtype=float), off], -1),
                     np.stack([off, np.asarray(sc.c2_02, dtype=float)], -1)], -2)


def torsion_matrix(model, p):
    """Symmetric 2x2 matrix of X -> Tor(X0, X) in the frame X1, X2."""
    return torsion_from_constants(structure_constants(model, p))


def _kappa_batch(model, pts, sc=None):
    if sc is None:
        F, DF, _ = frame_jets(model, pts)
        sc = _structure_batch(F, DF)
    dc = structure_derivatives(model, pts, "12")
    return (dc[:, 1, 0] - dc[:, 0, 1] - sc.c1_12 ** 2 - sc.c2_12 ** 2
            + 0.5 * (sc.c2_01 - sc.c1_02))


def _chi_from_constants(sc, tol):
    tau = torsion_from_constants(sc)
    m = -np.linalg.det(tau)
    if np.any(m < -tol):
        raise InvalidStructureError(f"-det(tau) = {m.min():.3e} < 0: chi undefined")
    return np.sqrt(np.where(np.abs(m) <= tol, 0.0, np.maximum(m, 0.0)))


def metric_invariants(model, p, tol=STRUCT_TOL):
    """Torsion norm chi >= 0 and horizontal sectional curvature kappa."""
    pts, single = _batch(p)
    F, DF, _ = frame_jets(model, pts)
    check_frame(F)
    sc = _structure_batch(F, DF)
    chi = _chi_from_constants(sc, tol)
    kappa = _kappa_batch(model, pts, sc)
    if single:
        return float(chi[0]), float(kappa[0])
    return chi, kappa


def signed_chi(sc):
    """(c2_01 + c1_02)/2, the signed torsion invariant of a canonical left-invariant frame."""
    return 0.5 * (np.asarray(sc.c2_01) + np.asarray(sc.c1_02))


def check_canonical(sc, tol=STRUCT_TOL):
    """Raise unless the frame has the bracket shape of a canonical left-invariant basis."""
    bad = {name: np.max(np.abs(np.asarray(getattr(sc, name))))
           for name in ("c1_12", "c2_12", "c1_01", "c2_02", "c0_01", "c0_02")}
    bad = {k: v for k, v in bad.items() if v > tol}
    if bad:
        raise InvalidStructureError(f"model is not in canonical form: {bad}")


# --------------------------------------------------------------- densities

def density_jets(model, pts):
    """h and its coordinate gradient at a batch of points."""
    val, grad, _ = fe.derivatives(model.density, np.atleast_2d(pts), order=1)
    if np.any(val < model.h_min):
        raise fe.DomainError(f"density below h_min={model.h_min} (min {val.min():.3e})")
    return val, grad


def transverse_jets(model, pts, F=None, DF=None):
    """Transverse field X_theta with mu(X1, X2, X_theta) = 1, and its Jacobian."""
    pts = np.atleast_2d(pts)
    if model.transverse is not None:
        n, dim = pts.shape
        T = np.empty((n, dim))
        DT = np.empty((n, dim, dim))
        for i, comp in enumerate(model.transverse):
            val, grad, _ = fe.derivatives(comp, pts, order=1)
            T[:, i] = val
            DT[:, i] = grad
        return T, DT
    if F is None:
        F, DF, _ = frame_jets(model, pts)
    h, gh = density_jets(model, pts)
    X0 = F[:, :, 2]
    T = X0 / h[:, None]
    DT = DF[:, 2] / h[:, None, None] - np.einsum("ni,nj->nij", X0, gh) / (h ** 2)[:, None, None]
    return T, DT


def transverse_frame(model, pts):
    """Frame (X1, X2, X_theta) with Jacobians, in the layout of frame_jets."""
    pts = np.atleast_2d(pts)
    F, DF, _ = frame_jets(model, pts)
    T, DT = transverse_jets(model, pts, F, DF)
    Ft = F.copy()
    Ft[:, :, 2] = T
    DFt = DF.copy()
    DFt[:, 2] = DT
    return Ft, DFt


def divergence_frame(model, p, method="density"):
    """(div_mu X1, div_mu X2).

    method="density" adds X_i(h)/h to the Popp divergences (c2_12, -c1_12);
    method="transverse" reads c2_12 - c^th_th1 and -c1_12 - c^th_th2 off the
    frame (X1, X2, X_theta).  Both must agree.
    """
    pts, single = _batch(p)
    F, DF, _ = frame_jets(model, pts)
    check_frame(F)
    if method == "density":
        sc = _structure_batch(F, DF)
        div1, div2 = sc.c2_12.copy(), -sc.c1_12
        if model.has_density:
            h, gh = density_jets(model, pts)
            div1 = div1 + np.einsum("ni,ni->n", gh, F[:, :, 0]) / h
            div2 = div2 + np.einsum("ni,ni->n", gh, F[:, :, 1]) / h
    elif method == "transverse":
        Ft, DFt = transverse_frame(model, pts)
        check_frame(Ft)
        sct = _structure_batch(Ft, DFt)
        # in the theta frame the "0" slot is X_theta: c0_01 = c^th_th1, c0_02 = c^th_th2
        div1 = sct.c2_12 - sct.c0_01
        div2 = -sct.c1_12 - sct.c0_02
    else:
        raise ValueError(f"unknown divergence method {method!r}")
    if single:
        return float(div1[0]), float(div2[0])
    return div1, div2


def popp_divergence(model, pts, F, DF, measure="mu"):
    """Divergences of X1, X2 for jets already evaluated (batch helper)."""
    sc = _structure_batch(F, DF)
    div1, div2 = sc.c2_12.copy(), -sc.c1_12
    if measure == "mu" and model.has_density:
        h, gh = density_jets(model, pts)
        div1 = div1 + np.einsum("ni,ni->n", gh, F[:, :, 0]) / h
        div2 = div2 + np.einsum("ni,ni->n", gh, F[:, :, 1]) / h
    return div1, div2, sc


# --------------------------------------------------------------------- jets

@dataclass(frozen=True)
class ScalarJet:
    """Value, first frame derivatives d1[a] = X_a f and ordered d2[a][b] = X_a(X_b f).

    Frame index order is (X1, X2, X0).
    """
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def jets_from_coordinates(val, grad, hess, F, DF):
    """Frame jets from coordinate derivatives of a scalar and frame Jacobians."""
    d1 = np.einsum("ni,nia->na", grad, F)
    d2 = (np.einsum("nia,nij,njb->nab", F, hess, F)
          + np.einsum("nk,nbkl,nla->nab", grad, DF, F))
    return ScalarJet(val, d1, d2)


def eval_jet(e, model, p):
    """ScalarJet of expression e at a point (dim,) or batch (n, dim)."""
    pts, single = _batch(p)
    val, grad, hess = fe.derivatives(e, pts, order=2)
    F, DF, _ = frame_jets(model, pts)
    jet = jets_from_coordinates(val, grad, hess, F, DF)
    if single:
        return ScalarJet(float(jet.value[0]), jet.d1[0], jet.d2[0])
    return jet


# ---------------------------------------------------------------- embedding

def constraint_residual(model, pts):
    if model.constraint is None:
        return np.zeros(len(np.atleast_2d(pts)))
    return fe.evaluate(model.constraint, np.atleast_2d(pts))


def project(model, x):
    """Map points back onto the constraint level set (no-op for 3D charts)."""
    if model.constraint is None:
        return x
    if model.projection == "sphere":
        return x / np.linalg.norm(x, axis=-1, keepdims=True)
    if model.projection == "sl2":
        g = x[..., 0] * x[..., 3] - x[..., 1] * x[..., 2] - 1.0
        grad = np.stack([x[..., 3], -x[..., 2], -x[..., 1], x[..., 0]], -1)
        return x - (g / np.sum(grad * grad, -1))[..., None] * grad
    pts = np.atleast_2d(x)
    g, grad, _ = fe.derivatives(model.constraint, pts, order=1)
    out = pts - (g / np.sum(grad * grad, -1))[:, None] * grad
    return out.reshape(np.shape(x))


# ------------------------------------------------------------- self-check

@dataclass
class SelfCheckReport:
    n_points: int
    max_normalization_error: float
    max_declared_error: float
    max_tangency: float
    min_frame_det: float
    violations: list
    ok: bool

    def as_dict(self):
        return dict(self.__dict__)


def bracket_selfcheck(model, points, declared=None, tol=STRUCT_TOL):
    """Compare brackets from differentiated frames with declared constants."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    declared = model.declared if declared is None else declared
    F, DF, _ = frame_jets(model, pts)
    det = check_frame(F)
    sc = _structure_batch(F, DF)
    violations = []
    norm_err = float(np.max(np.abs(sc.c0_12 - 1.0)))
    if norm_err > tol:
        violations.append(f"[X2,X1] has X0-component off 1 by {norm_err:.3e}")
    decl_err = 0.0
    if declared:
        for name, val in declared.items():
            err = float(np.max(np.abs(getattr(sc, name) - val)))
            decl_err = max(decl_err, err)
            if err > tol:
                violations.append(f"{name}: declared {val}, computed differs by {err:.3e}")
    tangency = 0.0
    if model.constraint is not None:
        _, grad, _ = fe.derivatives(model.constraint, pts, order=1)
        tangency = float(np.max(np.abs(np.einsum("ni,nia->na", grad, F))))
        if tangency > tol:
            violations.append(f"frame not tangent to the constraint ({tangency:.3e})")
        resid = float(np.max(np.abs(constraint_residual(model, pts))))
        if resid > tol:
            violations.append(f"sample points off the constraint ({resid:.3e})")
    return SelfCheckReport(len(pts), norm_err, decl_err, tangency, float(det.min()),
                           violations, not violations)


def sample_points(model, n, rng, scale=1.0):
    """Random points on the model manifold (for self-checks and property tests)."""
    if model.chart_dim == 3:
        return rng.uniform(-scale, scale, size=(n, 3))
    if model.projection == "sphere":
        x = rng.normal(size=(n, 4))
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    if model.projection == "sl2":
        x = rng.uniform(0.5, 2.0, n) * rng.choice([-1.0, 1.0], n)
        y = rng.uniform(-scale, scale, n)
        z = rng.uniform(-scale, scale, n)
        w = (1.0 + y * z) / x
        return np.stack([x, y, z, w], 1)
    x = rng.uniform(-scale, scale, size=(n, model.chart_dim))
    for _ in range(50):
        x = project(model, x)
    return x
