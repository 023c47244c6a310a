import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pwflow.annulus import alternating_itinerary, constant_itinerary
from pwflow.modelmap import (PI_Q, L1Point, ModelMapError, ModelMapSpec, all_fixed_points,
                             circle_images, fixed_point_rays, fixed_points_on_ray, l1_position,
                             l1_rotate, model_map_inverse, model_map_step, model_orbit,
                             realize_model_itinerary, verify_model_witness)

F = Fraction
EXACT = ModelMapSpec(exact=True)


# -- rotation -------------------------------------------------------------------

def test_full_turn_is_identity():
    assert l1_rotate((1.0, 0.0), 2 * math.pi).z == pytest.approx((1.0, 0.0), abs=1e-15)
    assert l1_rotate((F(1), F(0)), 2 * PI_Q).z == (1, 0)


def test_half_turn_is_antipode():
    assert l1_rotate((F(1), F(0)), PI_Q).z == (-1, 0)
    quarter = l1_rotate((F(1), F(0)), PI_Q / 2)
    assert quarter.z == (0, 1)
    assert l1_rotate(quarter, PI_Q / 2).z == (-1, 0)


def test_norm_kept_for_sample_angles():
    z = (F(3, 10), F(-7, 10))
    for th in (F(1, 10), F(1), F(5)):
        assert l1_rotate(z, th).norm1 == 1


@given(st.fractions(-5, 5, max_denominator=1000), st.fractions(-5, 5, max_denominator=1000),
       st.fractions(-20, 20, max_denominator=1000))
def test_rotation_norm_exact(a, b, th):
    if a == 0 and b == 0:
        return
    assert l1_rotate((a, b), th).norm1 == abs(a) + abs(b)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-20, 20), st.floats(0.01, 100))
def test_rotation_scales(a, b, th, c):
    if abs(a) + abs(b) < 1e-3:
        return
    lhs = np.array(l1_rotate((c * a, c * b), th).z)
    rhs = c * np.array(l1_rotate((a, b), th).z)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * c * (abs(a) + abs(b)) * 10


def test_position_quarters():
    assert [l1_position(z) for z in ((1, 0), (0, 1), (-1, 0), (0, -1))] == [0, 1, 2, 3]


def test_origin_excluded():
    with pytest.raises(ModelMapError):
        l1_rotate((0.0, 0.0), 1.0)
    with pytest.raises(ModelMapError):
        model_map_step((0.0, 0.0))


# -- the map --------------------------------------------------------------------

def test_default_saddle_preserves_area():
    assert ModelMapSpec().det == 1 and EXACT.det == 1


def test_norm_bounds(rng):
    pts = rng.uniform(-1, 1, (10 ** 4, 2))
    for z in pts:
        n0 = abs(z[0]) + abs(z[1])
        n1 = model_map_step(z).norm1
        assert 0.5 * n0 * (1 - 1e-15) <= n1 <= 2 * n0 * (1 + 1e-15)


def test_annulus_index_moves_by_at_most_one(rng):
    it = constant_itinerary(0, 1, 0.5, outer=64.0)
    for z in rng.uniform(-1, 1, (2000, 2)):
        assert abs(it.index_of(model_map_step(z).array()) - it.index_of(z)) <= 1


def test_inverse_round_trip(rng):
    pts = rng.uniform(-1, 1, (10 ** 4, 2))
    worst = 0.0
    for z in pts:
        back = model_map_inverse(model_map_step(z)).array()
        worst = max(worst, float(np.max(np.abs(back - z))))
    assert worst <= 1e-12


def test_exact_step_and_inverse():
    z = (F(1, 3), F(-1, 5))
    w = model_map_step(z, EXACT)
    assert isinstance(w.z[0], Fraction)
    assert model_map_inverse(w, EXACT).z == z


def test_small_radius_winds_faster():
    # one step from (rho, 0) travels 2 / (pi rho) quarter turns before the saddle
    for rho in (F(1, 10), F(1, 100)):
        w = model_map_step((rho, F(0)), EXACT)
        v = (w.z[0] / 2, w.z[1] * 2)
        assert l1_position(v) == (2 / (PI_Q * rho)) % 4


def test_orbit_and_circle_images():
    orb = model_orbit((0.5, 0.25), 4)
    assert len(orb) == 5 and orb[1] == model_map_step(orb[0])
    imgs = circle_images(1.0, 6, 400)
    assert len(imgs) == 7 and imgs[0].shape == (400, 2)
    assert np.allclose(np.abs(imgs[0]).sum(axis=1), 1.0)


# -- fixed points ---------------------------------------------------------------

def test_fixed_point_rays_balance_the_saddle():
    for d in fixed_point_rays():
        assert math.isclose(abs(d[0]) / 2 + 2 * abs(d[1]), 1.0)


def test_fixed_points_in_unit_interval():
    pts = all_fixed_points((1e-3, 1.0))
    assert len(pts) >= 10
    for x in pts:
        fx = model_map_step(tuple(x)).array()
        assert np.max(np.abs(fx - x)) <= 1e-10


def test_fixed_point_radii_shrink_geometrically_along_a_ray():
    d = fixed_point_rays()[0]
    radii = [np.abs(x).sum() for x in fixed_points_on_ray(d, (1e-3, 1.0))]
    assert len(radii) >= 3 and all(a > b for a, b in zip(radii, radii[1:]))


def test_interval_must_avoid_zero():
    with pytest.raises(ModelMapError):
        fixed_points_on_ray((1, 0), (0, 1))


# -- itinerary realization --------------------------------------------------------

@pytest.mark.parametrize("name", ["constant", "alternating"])
def test_realize_depth_30(name):
    it = constant_itinerary(1, 30, 0.5) if name == "constant" else alternating_itinerary(0, 30, 0.5)
    w = realize_model_itinerary(it, 30)
    assert verify_model_witness(w, it, 30)
    # independent check of the annulus bounds along the orbit
    cur = L1Point((float(w[0]), float(w[1])))
    for n in it.indices:
        assert 0.5 ** (n + 1) < cur.norm1 <= 0.5 ** n
        cur = model_map_step(cur)
