import numpy as np
import pytest

from pwflow.annulus import (AnnulusItinerary, RefinementFailure, alternating_itinerary,
                            constant_itinerary, match_depth, monotone_itinerary, radial_curves,
                            refine, refine_along)


def _rotation(theta, scale=1.0):
    c, s = np.cos(theta), np.sin(theta)
    R = scale * np.array([[c, -s], [s, c]])
    return lambda u: R @ np.asarray(u, dtype=float)


def test_index_bands():
    it = AnnulusItinerary((0,), 0.5)
    assert it.index_of((0.8, 0.0)) == 0
    assert it.index_of((0.3, 0.1)) == 1
    assert it.index_of((2.0, 0.0)) == -1
    assert it.index_of((0.0, 0.0)) == -1


def test_builders():
    assert constant_itinerary(2, 3, 0.5).indices == (2, 2, 2, 2)
    assert alternating_itinerary(0, 3, 0.5).indices == (0, 1, 0, 1)
    assert monotone_itinerary(3, 3, 0.5, step=-1).indices == (3, 2, 1, 0)


def test_precondition_errors():
    with pytest.raises(ValueError):
        AnnulusItinerary((1, 3), 0.5)
    with pytest.raises(ValueError):
        AnnulusItinerary((-1, 0), 0.5)
    with pytest.raises(ValueError):
        refine_along(constant_itinerary(0, 2, 0.5), 5, lambda u: u, [])


def test_match_depth_counts_prefix():
    it = AnnulusItinerary((0, 1, 2, 2), 0.5)
    halve = lambda u: 0.5 * np.asarray(u)
    # halving walks inward one band per step: matches n = 0, 1, 2 then fails
    assert match_depth(np.array([0.75, 0.0]), it, halve, 3) == 3


def test_contraction_realizes_monotone_itinerary():
    it = monotone_itinerary(0, 8, 0.5)
    step = _rotation(0.3, 0.5)
    w, d, _ = refine_along(it, 8, step, radial_curves(it, 4))
    assert w is not None and match_depth(w, it, step, 8) == 9


def test_identity_cannot_change_band():
    it = monotone_itinerary(0, 3, 0.5)
    w, d, _ = refine_along(it, 3, _rotation(0.0), radial_curves(it, 4))
    assert w is None and d == 1


def test_box_refinement_agrees():
    it = constant_itinerary(0, 6, 0.5)
    step = _rotation(0.7)
    w, d, _ = refine(it, 6, step, budget=2000)
    assert w is not None and match_depth(w, it, step, 6) == 7


def test_failure_carries_depth():
    err = RefinementFailure("dry", 4)
    assert err.depth == 4 and "dry" in str(err)
