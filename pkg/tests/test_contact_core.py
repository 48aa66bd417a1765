import time

import numpy as np
import pytest
import sympy

from srtube import contact_core as cc
from srtube import field_expr as fe

SE2_FRAME = [["cos(z)", "sin(z)", "0"], ["0", "0", "1"], ["-sin(z)", "cos(z)", "0"]]
SOLV_FRAME = [["cosh_z", "sinh_z", "0"], ["0", "0", "1"], ["sinh_z", "cosh_z", "0"]]


def solv_model():
    ch, sh = "((exp(z) + exp(-z))/2)", "((exp(z) - exp(-z))/2)"
    frame = [[c.replace("cosh_z", ch).replace("sinh_z", sh) for c in f] for f in SOLV_FRAME]
    return cc.custom(frame, left_invariant=True)


def rotated(model, phi):
    """Same metric, horizontal frame turned by the angle field phi."""
    c, s = fe.call("cos", phi), fe.call("sin", phi)
    X1, X2, X0 = model.frame
    R1 = tuple(fe.add(fe.mul(c, a), fe.mul(s, b)) for a, b in zip(X1, X2))
    R2 = tuple(fe.sub(fe.mul(c, b), fe.mul(s, a)) for a, b in zip(X1, X2))
    return cc.ContactModel(model.name + "-rot", model.chart_dim, (R1, R2, X0),
                           model.constraint, model.projection)


MODELS = {
    "heisenberg": cc.heisenberg(),
    "su2": cc.su2(1.0),
    "su2_k07": cc.su2(0.7),
    "sl2": cc.sl2(1.0),
    "sl2_k05": cc.sl2(0.5),
    "se2": cc.custom(SE2_FRAME, left_invariant=True),
    "solv": solv_model(),
    "heis_rot": rotated(cc.heisenberg(), fe.parse("x*y + z/3")),
    "su2_rot": rotated(cc.su2(1.0), fe.parse("x - 2*w*y")),
}


def points(model, n, rng):
    return cc.sample_points(model, n, rng)


# ---------------------------------------------------------------- oracle

def sympy_structure(model, p):
    """c^k_ij at p by symbolic brackets; 4D charts solve with the constraint normal appended."""
    X = sympy.symbols("x y z w")[:model.chart_dim]
    loc = {str(s): s for s in X}
    fields_ = [[sympy.sympify(fe.to_source(c).replace("^", "**"), locals=loc) for c in f]
               for f in model.frame]

    def bracket(A, B):          # [A, B] = DB A - DA B
        return [sum(sympy.diff(B[k], X[l]) * A[l] - sympy.diff(A[k], X[l]) * B[l]
                    for l in range(len(X))) for k in range(len(X))]

    subs = dict(zip(X, p))
    cols = [[float(c.subs(subs)) for c in f] for f in fields_]
    if model.chart_dim == 4:
        g = sympy.sympify(fe.to_source(model.constraint).replace("^", "**"), locals=loc)
        cols.append([float(sympy.diff(g, s).subs(subs)) for s in X])
    M = np.array(cols).T
    out = {}
    for ij, (j, i) in {"12": (1, 0), "01": (0, 2), "02": (1, 2)}.items():
        b = np.array([float(e.subs(subs)) for e in bracket(fields_[j], fields_[i])])
        comps = np.linalg.solve(M, b)
        if model.chart_dim == 4:
            assert abs(comps[3]) < 1e-12      # bracket stays tangent
        out[f"c1_{ij}"], out[f"c2_{ij}"], out[f"c0_{ij}"] = comps[:3]
    return out


@pytest.mark.parametrize("name", ["su2", "sl2_k05", "se2", "solv", "heis_rot"])
def test_structure_constants_match_symbolic_brackets(name, rng):
    model = MODELS[name]
    for p in points(model, 4, rng):
        got = cc.structure_constants(model, p).as_dict()
        ref = sympy_structure(model, p)
        for key, val in ref.items():
            assert got[key] == pytest.approx(val, abs=1e-11), key


# ---------------------------------------------------------- self-check

def test_selfcheck_heisenberg(rng):
    model = cc.heisenberg()
    rep = cc.bracket_selfcheck(model, points(model, 100, rng))
    assert rep.ok and rep.max_declared_error < 1e-12


@pytest.mark.parametrize("name", ["su2", "su2_k07", "sl2", "sl2_k05"])
def test_selfcheck_embedded(name, rng):
    model = MODELS[name]
    rep = cc.bracket_selfcheck(model, points(model, 100, rng))
    assert rep.ok, rep.violations
    assert rep.max_declared_error < 1e-10
    assert rep.max_tangency < 1e-10


def test_selfcheck_flags_corrupted_declaration(rng):
    model = cc.heisenberg()
    declared = dict(model.declared, c0_12=2.0)
    rep = cc.bracket_selfcheck(model, points(model, 20, rng), declared=declared)
    assert not rep.ok
    assert any("c0_12" in v for v in rep.violations)


def test_selfcheck_flags_off_constraint_points():
    model = cc.su2(1.0)
    rep = cc.bracket_selfcheck(model, [[1.1, 0.0, 0.0, 0.0]])
    assert not rep.ok


@pytest.mark.parametrize("name", list(MODELS))
def test_contact_normalization(name, rng):
    model = MODELS[name]
    sc = cc.structure_constants(model, points(model, 50, rng))
    assert np.max(np.abs(sc.c0_12 - 1.0)) < 1e-9


# ---------------------------------------------------------- invariants

@pytest.mark.parametrize("model, chi, kappa", [
    (cc.heisenberg(), 0.0, 0.0),
    (cc.su2(1.0), 0.0, 4.0),
    (cc.su2(0.7), 0.0, 4 * 0.49),
    (cc.sl2(1.0), 0.0, -4.0),
    (cc.sl2(0.5), 0.0, -1.0),
])
def test_model_invariants(model, chi, kappa, rng):
    pts = points(model, 30, rng)
    t0 = time.perf_counter()
    c, k = cc.metric_invariants(model, pts)
    assert time.perf_counter() - t0 < 1.0
    assert np.allclose(c, chi, atol=1e-9)
    assert np.allclose(k, kappa, atol=1e-9)


@pytest.mark.parametrize("base, name", [("heisenberg", "heis_rot"), ("su2", "su2_rot")])
def test_invariants_do_not_depend_on_frame_rotation(base, name, rng):
    pts = points(MODELS[base], 30, rng)
    chi0, k0 = cc.metric_invariants(MODELS[base], pts)
    chi1, k1 = cc.metric_invariants(MODELS[name], pts)
    sc = cc.structure_constants(MODELS[name], pts)
    assert np.max(np.abs(sc.c1_12)) > 0.1        # the rotated frame is far from canonical
    assert np.allclose(chi1, chi0, atol=1e-9)
    assert np.allclose(k1, k0, atol=1e-9)


def test_torsion_zero_for_heisenberg_and_su2(rng):
    for model in (cc.heisenberg(), cc.su2(1.0)):
        tau = cc.torsion_matrix(model, points(model, 10, rng))
        assert np.allclose(tau, 0.0, atol=1e-12)


@pytest.mark.parametrize("name, c201, c102", [("se2", 0.0, -1.0), ("solv", 0.0, 1.0)])
def test_left_invariant_torsion(name, c201, c102, rng):
    model = MODELS[name]
    pts = points(model, 10, rng)
    sc = cc.structure_constants(model, pts)
    assert np.allclose(sc.c2_01, c201, atol=1e-12)
    assert np.allclose(sc.c1_02, c102, atol=1e-12)
    tau = cc.torsion_matrix(model, pts)
    assert np.allclose(tau[:, 0, 1], (c201 + c102) / 2, atol=1e-12)
    assert np.allclose(tau[:, 0, 1], tau[:, 1, 0])
    chi, _ = cc.metric_invariants(model, pts)
    assert np.allclose(chi, abs(c201 + c102) / 2, atol=1e-12)
    assert np.allclose(cc.signed_chi(sc), (c201 + c102) / 2, atol=1e-12)


@pytest.mark.parametrize("name", list(MODELS))
def test_tau_consistency(name, rng):
    model = MODELS[name]
    pts = points(model, 30, rng)
    chi, _ = cc.metric_invariants(model, pts)
    tau = cc.torsion_matrix(model, pts)
    assert np.max(np.abs(chi ** 2 + np.linalg.det(tau))) < 1e-9


def test_chi_undefined_for_definite_torsion():
    one = np.array([1.0])
    zero = np.zeros(1)
    sc = cc.StructureConstants(zero, zero, one, one, zero, zero, zero, one, zero)
    with pytest.raises(cc.InvalidStructureError):
        cc._chi_from_constants(sc, 1e-9)


def test_check_canonical():
    cc.check_canonical(cc.structure_constants(MODELS["se2"], [0.1, 0.2, 0.3]))
    with pytest.raises(cc.InvalidStructureError):
        cc.check_canonical(cc.structure_constants(MODELS["heis_rot"], [0.4, 0.2, 0.3]))


def test_degenerate_frame():
    model = cc.custom([["1", "0", "y/2"], ["0", "1", "-x/2"], ["1", "0", "y/2"]])
    with pytest.raises(cc.DegenerateFrameError):
        cc.structure_constants(model, [0.1, 0.2, 0.3])


# ---------------------------------------------------------- divergences

@pytest.mark.parametrize("model", [cc.heisenberg(), cc.su2(1.0)])
def test_popp_divergence_vanishes(model, rng):
    div1, div2 = cc.divergence_frame(model, points(model, 20, rng))
    assert np.allclose(div1, 0.0, atol=1e-12) and np.allclose(div2, 0.0, atol=1e-12)


def test_density_divergence_heisenberg_exp_z(rng):
    model = cc.custom(cc.heisenberg().frame, density="exp(z)")
    pts = rng.uniform(-1, 1, size=(20, 3))
    for method in ("density", "transverse"):
        div1, div2 = cc.divergence_frame(model, pts, method=method)
        assert np.allclose(div1, pts[:, 1] / 2, atol=1e-12)
        assert np.allclose(div2, -pts[:, 0] / 2, atol=1e-12)


@pytest.mark.parametrize("base, density", [
    ("heisenberg", "exp(x/3 + z/2)"),
    ("heis_rot", "2 + sin(x*y) + z^2"),
    ("se2", "1 + x^2 + y^2/4"),
])
def test_divergence_paths_agree(base, density, rng):
    m = MODELS[base]
    model = cc.ContactModel(m.name, m.chart_dim, m.frame, density=fe.parse(density))
    pts = rng.uniform(-1, 1, size=(30, 3))
    a = np.array(cc.divergence_frame(model, pts, "density"))
    b = np.array(cc.divergence_frame(model, pts, "transverse"))
    assert np.allclose(a, b, atol=1e-11)


def test_divergence_by_coordinate_oracle(rng):
    # div_mu X = (1/rho) d_i (rho X^i) with rho = h / |det F| the coordinate density of mu
    model = cc.custom(cc.heisenberg().frame, density="exp(x*y/2 - z/5)")
    h = lambda p: np.exp(p[0] * p[1] / 2 - p[2] / 5)
    X1 = lambda p: np.array([1.0, 0.0, p[1] / 2])
    eps = 1e-5
    for p in rng.uniform(-1, 1, size=(5, 3)):
        div = sum((h(p + eps * e) * X1(p + eps * e)[i] - h(p - eps * e) * X1(p - eps * e)[i]) / (2 * eps)
                  for i, e in enumerate(np.eye(3))) / h(p)
        assert cc.divergence_frame(model, p)[0] == pytest.approx(div, abs=1e-8)


# -------------------------------------------------------------- jets

FIELDS3 = ["z - (x^2+y^2)/2", "sin(x*y) + z^3", "exp(x/3 + z/2)", "x*y*z - y"]
FIELDS4 = ["w", "y - z", "x*w + z^2", "sin(x + y) - w*z"]


@pytest.mark.parametrize("name", list(MODELS))
def test_jet_commutator_identity(name, rng):
    model = MODELS[name]
    pts = points(model, 100, rng)
    sc = cc.structure_constants(model, pts)
    for src in (FIELDS3 if model.chart_dim == 3 else FIELDS4):
        jet = cc.eval_jet(fe.parse(src), model, pts)
        lhs = jet.d2[:, 1, 0] - jet.d2[:, 0, 1]          # X2 X1 f - X1 X2 f
        rhs = sc.c1_12 * jet.d1[:, 0] + sc.c2_12 * jet.d1[:, 1] + jet.d1[:, 2]
        assert np.max(np.abs(lhs - rhs)) < 1e-9, src


def test_jet_second_derivatives_by_finite_differences(rng):
    # X_a (X_b f) along the flow of X_a, an independent check of the ordering convention
    model = MODELS["heis_rot"]
    e = fe.parse("sin(x*y) + z^3")
    eps = 1e-5
    for p in rng.uniform(-1, 1, size=(5, 3)):
        jet = cc.eval_jet(e, model, p)
        F, _, _ = cc.frame_jets(model, p)
        for a in range(3):
            step = F[0, :, a] * eps
            plus = cc.eval_jet(e, model, p + step).d1
            minus = cc.eval_jet(e, model, p - step).d1
            assert np.allclose((plus - minus) / (2 * eps), jet.d2[a], atol=1e-7)


# ------------------------------------------------------------ embedding

@pytest.mark.parametrize("name", ["su2", "sl2", "sl2_k05"])
def test_sampling_and_projection(name, rng):
    model = MODELS[name]
    pts = points(model, 50, rng)
    assert np.max(np.abs(cc.constraint_residual(model, pts))) < 1e-12
    off = pts + 1e-4 * rng.normal(size=pts.shape)
    back = cc.project(model, off)
    assert np.max(np.abs(cc.constraint_residual(model, back))) < 1e-7


def test_newton_projection_for_custom_constraint(rng):
    m = cc.su2(1.0)
    model = cc.custom([[fe.to_source(c) for c in f] for f in m.frame],
                      constraint="x^2 + y^2 + z^2 + w^2 - 1")
    assert model.projection == "newton"
    pts = cc.sample_points(model, 10, rng)
    assert np.max(np.abs(cc.constraint_residual(model, pts))) < 1e-12
    rep = cc.bracket_selfcheck(model, pts, declared=m.declared)
    assert rep.ok, rep.violations


def test_affine_detection():
    assert cc.heisenberg().affine is not None
    assert cc.su2(1.0).affine is not None
    assert MODELS["se2"].affine is None


def test_by_name():
    assert cc.by_name("sl2", 0.5).params == {"k": 0.5}
    with pytest.raises(ValueError):
        cc.by_name("nil")
