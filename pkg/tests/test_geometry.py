import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import annulus_distance_to_boundary, ball_distance_to_boundary, fd_gradient
from pdscbf.errors import DomainError, EstimationError, EvaluationError
from pdscbf.geometry import (
    Classification,
    ConeData,
    ConstraintSet,
    annulus_set,
    ball_set,
    classify,
    distance_to_boundary,
    interval_set,
    nearest_boundary_point,
    sample_boundary,
    sample_in_set,
    tangent_halfspace,
    validate_set,
)

INTERVAL = interval_set(0.6)
DISK = ball_set([0.0, 0.0], 1.0)
SYNC_DISK = ball_set([0.0, 4000.0], 500.0)
ANNULUS = annulus_set(0.5, 1.5)


def test_classify_examples():
    assert classify(INTERVAL, [0.0]).classification is Classification.INTERIOR
    cone = classify(INTERVAL, [0.6])
    assert cone.classification is Classification.BOUNDARY
    assert cone.normal_generator == pytest.approx([-1.2])
    assert classify(DISK, [2.0, 0.0]).classification is Classification.OUTSIDE


def test_classify_uses_tolerance_exactly():
    tol = INTERVAL.boundary_tol
    # h(0.6 - e) ~ 1.2 e
    inside = classify(INTERVAL, [0.6 - 2 * tol])
    assert inside.classification is Classification.INTERIOR
    on = classify(INTERVAL, [0.6 - 0.4 * tol])
    assert on.classification is Classification.BOUNDARY
    assert abs(INTERVAL.h(np.array([0.6 - 0.4 * tol]))) <= tol


def test_classify_non_finite_raises_with_state():
    bad = ConstraintSet(1, lambda x: float("nan"), lambda x: np.zeros(1), lambda s: s, ([-1.0], [1.0]))
    with pytest.raises(EvaluationError) as info:
        classify(bad, [0.2])
    assert info.value.x is not None and info.value.x[0] == 0.2
    with pytest.raises(EvaluationError):
        classify(INTERVAL, [math.inf])


def test_classify_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        classify(DISK, [1.0, 2.0, 3.0])


def test_cone_data_invariant():
    with pytest.raises(ValueError):
        ConeData(Classification.BOUNDARY)
    with pytest.raises(ValueError):
        ConeData(Classification.INTERIOR, np.ones(2))


def test_tangent_halfspace_examples():
    assert tangent_halfspace(classify(DISK, [0.1, 0.2])) is None
    assert tangent_halfspace(classify(INTERVAL, [0.6])) == pytest.approx([-1.2])
    w = tangent_halfspace(classify(DISK, [1.0, 0.0]))
    assert w == pytest.approx([-2.0, 0.0])
    # v1 <= 0 is tangent
    assert w @ np.array([-0.3, 5.0]) >= 0 and w @ np.array([0.1, 0.0]) < 0
    with pytest.raises(DomainError):
        tangent_halfspace(classify(DISK, [3.0, 0.0]))


def test_distance_examples():
    assert distance_to_boundary(INTERVAL, [0.1]) == pytest.approx(0.5, abs=1e-12)
    assert distance_to_boundary(DISK, [0.5, 0.0]) == pytest.approx(0.5, abs=1e-12)
    assert distance_to_boundary(SYNC_DISK, [0.0, 4000.0]) == pytest.approx(500.0, abs=1e-9)
    with pytest.raises(DomainError):
        distance_to_boundary(DISK, [2.0, 0.0])


def test_generic_search_matches_analytic_annulus():
    pts = sample_in_set(ANNULUS, 300)
    for p in pts:
        d = distance_to_boundary(ANNULUS, p)
        exact = annulus_distance_to_boundary(0.5, 1.5, p)
        assert d >= exact - 1e-9
        assert d == pytest.approx(exact, abs=1e-6)


def test_generic_search_matches_ball_without_closed_form():
    bare = ConstraintSet(2, DISK.h, DISK.grad_h, DISK.gamma, DISK.bounding_box)
    for p in sample_in_set(bare, 200):
        assert distance_to_boundary(bare, p) == pytest.approx(1.0 - np.linalg.norm(p), abs=1e-6)


def test_boundary_search_failure_is_estimation_error():
    everywhere = ConstraintSet(1, lambda x: 1.0 + 0.0 * float(x[0]), lambda x: np.zeros(1), lambda s: s,
                               ([-1.0], [1.0]))
    with pytest.raises(EstimationError):
        nearest_boundary_point(everywhere, [0.0])


@pytest.mark.parametrize("cset", [INTERVAL, DISK, SYNC_DISK, ANNULUS, ball_set([0, 0, 0], 1.0)],
                         ids=["interval", "disk", "sync-disk", "annulus", "ball3"])
def test_gradient_matches_finite_differences(cset):
    lo, hi = cset.bounding_box
    rng = np.random.default_rng(1)
    for p in rng.uniform(lo, hi, size=(1000, cset.dim)):
        g = cset.grad_h(p)
        fd = fd_gradient(cset.h, p)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("cset,center,radius", [(INTERVAL, [0.0], 0.6), (DISK, [0.0, 0.0], 1.0),
                                                (SYNC_DISK, [0.0, 4000.0], 500.0)],
                         ids=["interval", "disk", "sync-disk"])
def test_ball_gamma_bounds_distance(cset, center, radius):
    pts = sample_in_set(cset, 10_000)
    assert len(pts) == 10_000
    d = np.array([ball_distance_to_boundary(center, radius, p) for p in pts])
    g = np.array([cset.gamma(cset.h(p)) for p in pts])
    assert np.all(d <= g + 1e-9 * radius)


def test_annulus_gamma_bounds_distance():
    for p in sample_in_set(ANNULUS, 2000):
        assert annulus_distance_to_boundary(0.5, 1.5, p) <= ANNULUS.gamma(ANNULUS.h(p)) + 1e-12


@pytest.mark.parametrize("cset", [INTERVAL, DISK, ANNULUS], ids=["interval", "disk", "annulus"])
def test_validate_set_passes_shipped_sets(cset):
    checks = validate_set(cset, 300)
    assert all(ok for ok, _ in checks.values()), checks


def test_validate_set_detects_flipped_gradient():
    flipped = ConstraintSet(2, DISK.h, lambda x: -DISK.grad_h(x), DISK.gamma, DISK.bounding_box)
    checks = validate_set(flipped, 50)
    assert not checks["grad_fd"][0]


def test_validate_set_detects_bad_gamma():
    tight = ConstraintSet(2, DISK.h, DISK.grad_h, lambda s: 0.1 * s, DISK.bounding_box,
                          nearest_boundary=DISK.nearest_boundary)
    assert not validate_set(tight, 100)["distance_bound"][0]


def test_samplers_are_deterministic_and_on_boundary():
    a = sample_boundary(DISK, 64)
    b = sample_boundary(DISK, 64)
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    ann = sample_boundary(ANNULUS, 100)
    assert np.allclose([abs(ANNULUS.h(p)) for p in ann], 0.0, atol=1e-12)
    assert sample_boundary(INTERVAL, 1000).ravel().tolist() == [-0.6, 0.6]
    pts = sample_in_set(ball_set([0, 0, 0], 1.0), 100)
    assert pts.shape == (100, 3) and np.all(np.linalg.norm(pts, axis=1) <= 1.0)


def test_bounding_box_validation():
    with pytest.raises(ValueError):
        ConstraintSet(1, INTERVAL.h, INTERVAL.grad_h, INTERVAL.gamma, ([1.0], [0.0]))
    with pytest.raises(ValueError):
        ball_set([0.0], -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.7, 0.7))
def test_classification_consistent_with_h(u):
    cone = classify(INTERVAL, [u])
    hv = 0.36 - u * u
    tol = INTERVAL.boundary_tol
    expected = (Classification.INTERIOR if hv > tol else
                Classification.OUTSIDE if hv < -tol else Classification.BOUNDARY)
    assert cone.classification is expected
    assert (cone.normal_generator is not None) == (expected is Classification.BOUNDARY)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 0.999))
def test_disk_distance_property(theta, rho):
    p = rho * np.array([math.cos(theta), math.sin(theta)])
    assert distance_to_boundary(DISK, p) == pytest.approx(1.0 - np.linalg.norm(p), abs=1e-12)
