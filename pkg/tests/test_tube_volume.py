import numpy as np
import pytest

from srtube import contact_core as cc
from srtube import geodesic_flow as gf
from srtube import steiner as st
from srtube import surface_geom as sg
from srtube import tube_volume as tv

from conftest import scene

HEIS = cc.heisenberg()
HEIS_SCENES = ["heisenberg-plane-annulus", "heisenberg-paraboloid-band", "heisenberg-cubic-band"]


# ------------------------------------------------------------- volumes

def test_plane_annulus_volume_is_linear():
    _, model, surface, patch = scene("heisenberg-plane-annulus")
    a1 = st.coefficients(surface, model, patch).a[0]
    vs = tv.volume_series(surface, model, patch, [0.05])
    assert vs.vol[0] == pytest.approx(0.05 * a1, abs=1e-6)


def test_zero_eps_gives_zero():
    _, model, surface, patch = scene("heisenberg-paraboloid-band", "patch.grid=[6,6]")
    vs = tv.volume_series(surface, model, patch, [0.0, 0.01, 0.0])
    assert vs.vol[0] == 0.0 and vs.vol[2] == 0.0 and vs.vol[1] > 0


def test_eps_order_does_not_matter():
    _, model, surface, patch = scene("heisenberg-cubic-band", "patch.grid=[6,6]")
    a = tv.volume_series(surface, model, patch, [0.01, 0.03, 0.02])
    b = tv.volume_series(surface, model, patch, [0.01, 0.02, 0.03])
    assert np.allclose(a.vol, b.vol[[0, 2, 1]], rtol=1e-14)


@pytest.mark.parametrize("name", HEIS_SCENES + ["su2-equator-band", "sl2-plane-patch"])
def test_monotone_and_slope_at_zero(name):
    _, model, surface, patch = scene(name)
    eps = np.geomspace(1e-4, 0.05, 8)
    vs = tv.volume_series(surface, model, patch, eps)
    assert np.all(vs.vol >= 0) and np.all(np.diff(vs.vol) > 0)
    a1 = st.coefficients(surface, model, patch, with_a3=False).a[0]
    assert vs.vol[0] / eps[0] == pytest.approx(a1, rel=1e-4)
    assert np.all(vs.quad_err < 1e-10 * np.maximum(vs.vol, 1e-300) + 1e-14)


@pytest.mark.parametrize("name", HEIS_SCENES)
def test_quadrature_refinement(name):
    _, model, surface, patch = scene(name)
    eps = [0.01, 0.02]
    base = tv.volume_series(surface, model, patch, eps)
    fine = tv.volume_series(surface, model, patch.refined(), eps, t_nodes=2 * tv.T_NODES)
    assert np.max(np.abs(fine.vol - base.vol) / base.vol) < 1e-8


def test_thread_count_does_not_change_result():
    _, model, surface, patch = scene("su2-equator-band", "patch.grid=[20,20]")
    eps = [0.01, 0.03]
    one = tv.volume_series(surface, model, patch, eps, chunk=64, threads=1)
    many = tv.volume_series(surface, model, patch, eps, chunk=64, threads=4)
    assert np.array_equal(one.vol, many.vol) and np.array_equal(one.quad_err, many.quad_err)


def test_paraboloid_volume_has_no_cubic_term():
    _, model, surface, patch = scene("heisenberg-paraboloid-band")
    a1, a2, _ = st.coefficients(surface, model, patch).a
    eps = np.array([0.04, 0.02])
    vs = tv.volume_series(surface, model, patch, eps)
    rem = vs.vol - a1 * eps - a2 * eps ** 2 / 2
    # a zero eps^3 coefficient leaves an eps^4 remainder: halving eps divides it by ~16
    assert rem[0] / rem[1] == pytest.approx(16, rel=0.1)


def test_density_volume_slope():
    _, model, surface, patch = scene("heisenberg-paraboloid-band", "model.density=\"exp(x/3 + z/2)\"",
                                     "patch.grid=[16,16]")
    a1 = st.coefficients(surface, model, patch, with_a3=False).a[0]
    vs = tv.volume_series(surface, model, patch, [1e-4])
    assert vs.vol[0] / 1e-4 == pytest.approx(a1, rel=1e-4)


def test_orientation_flip_changes_side():
    _, model, surface, patch = scene("heisenberg-paraboloid-band", "patch.grid=[8,8]")
    eps = np.array([0.02])
    out = tv.volume_series(surface, model, patch, eps).vol[0]
    inn = tv.volume_series(surface.flipped(), model, patch, eps).vol[0]
    a1, a2, _ = st.coefficients(surface, model, patch).a
    assert out - inn == pytest.approx(a2 * eps[0] ** 2, rel=1e-3)


# ------------------------------------------------------- tube validity

def near_focal():
    return scene("heisenberg-paraboloid-band", "surface.g=[0,0,20]", "patch.grid=[6,6]",
                 "patch.r_range=[0.1,0.3]")


def test_nonpositive_jacobian_is_reported():
    _, model, surface, patch = near_focal()
    with pytest.raises(gf.TubeValidityError) as info:
        tv.volume_series(surface, model, patch, [0.2], shrink=False)
    assert 0 < info.value.t <= 0.2
    assert info.value.point is not None


def test_t_max_shrinks_on_invalid_tube():
    _, model, surface, patch = near_focal()
    vs = tv.volume_series(surface, model, patch, [0.02, 0.04, 0.1, 0.2])
    assert vs.meta["t_max"] < 0.1
    assert vs.meta["dropped_eps"] == [0.1, 0.2]
    assert list(vs.eps) == [0.02, 0.04]
    with pytest.raises(gf.TubeValidityError):
        tv.volume_series(surface, model, patch, [0.2])


def test_eps_beyond_t_max_rejected():
    _, model, surface, patch = scene("heisenberg-plane-annulus", "patch.grid=[4,4]")
    with pytest.raises(ValueError, match="t_max"):
        tv.volume_series(surface, model, patch, [0.5])


# ------------------------------------------------------------- coarea

def test_coarea_x_on_unit_box():
    lhs, rhs, rel = tv.coarea_check(HEIS, "x", "1", [(0, 1), (0, 1), (0, 1)])
    assert lhs == pytest.approx(1.0, rel=1e-12)
    assert rel < 1e-6


def test_coarea_odd_integrand():
    lhs, rhs, _ = tv.coarea_check(HEIS, "x", "x*y", [(-1, 1), (-1, 1), (-1, 1)])
    assert abs(lhs) < 1e-9 and abs(rhs) < 1e-9


@pytest.mark.parametrize("phi, f, box", [
    ("x+z", "1", [(0.1, 1), (0.2, 1), (0, 1)]),
    ("z - x*y/2", "exp(x)", [(0.5, 1), (0.2, 0.7), (-0.3, 0.3)]),
    ("y + x^3/3", "1 + z^2", [(-1, 1), (-1, 1), (0, 1)]),
])
def test_coarea_general(phi, f, box):
    _, _, rel = tv.coarea_check(HEIS, phi, f, box)
    assert rel < 1e-5


def test_coarea_with_density():
    model = cc.custom(HEIS.frame, density="1 + x^2")
    _, _, rel = tv.coarea_check(model, "y + z", "1", [(0, 1), (0.5, 1), (0, 1)])
    assert rel < 1e-6


def test_coarea_rejects_horizontal_critical_points():
    with pytest.raises(sg.CharacteristicPointError):
        tv.coarea_check(HEIS, "z", "1", [(-1, 1), (-1, 1), (0, 1)], n=8)


def test_coarea_t_range_clips():
    lhs, rhs, _ = tv.coarea_check(HEIS, "x", "1", [(0, 1), (0, 1), (0, 1)], t_range=(0, 0.5))
    assert rhs == pytest.approx(0.5, rel=1e-12)


# ------------------------------------------------------ Heisenberg distance

def test_heisenberg_norm_closed_forms():
    assert tv.heisenberg_norm([0.3, -0.4, 0.0])[0] == pytest.approx(0.5, rel=1e-14)
    assert tv.heisenberg_norm([0.0, 0.0, 0.2])[0] == pytest.approx(np.sqrt(4 * np.pi * 0.2), rel=1e-14)


@pytest.mark.parametrize("angle, theta, t", [(0.3, 2.0, 0.5), (1.0, -5.0, 1.0), (2.0, 12.0, 0.5), (5.0, 0.5, 0.1)])
def test_heisenberg_norm_along_minimizing_extremals(angle, theta, t):
    # closed-form unit-speed extremal from the origin; minimizing while |theta t| < 2 pi
    w = np.exp(1j * angle) * (1 - np.exp(-1j * theta * t)) / (1j * theta)
    end = [w.real, w.imag, (theta * t - np.sin(theta * t)) / (2 * theta ** 2)]
    assert tv.heisenberg_norm(end)[0] == pytest.approx(t, abs=1e-12)


def test_heisenberg_norm_of_integrated_extremal():
    x0 = np.zeros(3)
    p0 = gf.ambient_covector(HEIS, x0, [0.6, 0.8, 3.0])
    xs, _, _ = gf.flow(HEIS, x0, p0, [0.7])
    assert tv.heisenberg_norm(xs[0, 0])[0] == pytest.approx(0.7, abs=1e-10)


def test_heisenberg_distance_from_offset_start():
    x0 = np.array([1.3, -0.7, 0.4])
    p0 = gf.ambient_covector(HEIS, x0, [0.6, 0.8, 3.0])
    xs, _, _ = gf.flow(HEIS, x0[None], p0, [0.3, 0.7])
    assert np.allclose(tv.heisenberg_distance(x0, xs[0]), [0.3, 0.7], atol=1e-10)


def test_heisenberg_distance_is_left_invariant_and_symmetric(rng):
    a, b, g = rng.uniform(-1, 1, size=(3, 5, 3))
    d = tv.heisenberg_distance(a, b)
    assert np.allclose(d, tv.heisenberg_distance(b, a), rtol=1e-12)
    assert np.allclose(d, tv.heisenberg_distance(tv.heisenberg_product(g, a), tv.heisenberg_product(g, b)),
                       rtol=1e-10)


def test_distance_oracle_on_tube_points(rng):
    _, model, surface, patch = scene("heisenberg-paraboloid-band")
    u = patch.nodes[rng.choice(len(patch.nodes), 10, replace=False)]
    t = rng.uniform(0.01, 0.1, 10)
    pts = patch.chart(u)[0]
    G = np.array([gf.tube_map(surface, model, p, ti) for p, ti in zip(pts, t)])
    d = tv.heisenberg_distance_oracle(model, G, patch)
    assert np.max(np.abs(d - t)) <= 3e-3


@pytest.mark.parametrize("u, t", [((1.48238113, 4.18418862), 0.0809463979022521),
                                  ((1.29385788, 6.27458948), 0.0738357854616711)])
def test_distance_oracle_near_patch_edge(u, t):
    # the feet of these points sit just past r = 1.5 and across the theta = 2 pi seam
    _, model, surface, patch = scene("heisenberg-paraboloid-band")
    G = gf.tube_map(surface, model, patch.points(np.array(u))[0], t)
    assert tv.heisenberg_distance_oracle(model, G, patch)[0] == pytest.approx(t, abs=1e-9)


def test_distance_oracle_monotone_and_on_surface():
    _, model, surface, patch = scene("heisenberg-plane-annulus")
    p = patch.points()[len(patch.nodes) // 2 + 5]
    ts = np.linspace(0.01, 0.1, 10)
    G = gf.tube_map(surface, model, p, ts)
    d = tv.heisenberg_distance_oracle(model, G, patch)
    assert np.all(np.diff(d) > 0)
    assert abs(d[4] - 0.05) < 2e-3
    assert tv.heisenberg_distance_oracle(model, p, patch)[0] < 1e-6


def test_distance_oracle_only_for_heisenberg():
    patch = sg.su2_band_patch((-0.5, 0.5), grid=(4, 4))
    with pytest.raises(ValueError):
        tv.heisenberg_distance_oracle(cc.su2(1.0), [1.0, 0, 0, 0], patch)
