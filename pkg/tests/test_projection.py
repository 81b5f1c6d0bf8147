import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import brute_halfspace_2d, disk_metric_projection, hyperplane_qp, pg_qp
from pdscbf.errors import DomainError, InfeasibleError, ProjectionError, RegularityError
from pdscbf.geometry import ConstraintSet, annulus_set, ball_set, interval_set, sample_in_set
from pdscbf.projection import (
    MetricMatrix,
    cbf_field_value,
    metric_projector,
    project_iterative,
    project_point_to_set,
    project_tangent,
    qp_oracle,
    qp_projected_gradient,
    tangent_kkt_residuals,
)

INTERVAL = interval_set(0.6)
DISK = ball_set([0.0, 0.0], 1.0)
ANNULUS = annulus_set()
I1, I2 = MetricMatrix.identity(1), MetricMatrix.identity(2)


def test_metric_validation():
    m = MetricMatrix.from_matrix([[2.0, 0.5], [0.5, 1.0]])
    assert np.max(np.abs(m.P @ m.P_inv - np.eye(2))) <= 1e-10
    assert m.lambda_min == pytest.approx(np.linalg.eigvalsh(m.P)[0])
    assert m.condition_ratio == pytest.approx(m.lambda_max / m.lambda_min)
    assert not m.P.flags.writeable
    with pytest.raises(ValueError):
        MetricMatrix.from_matrix([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValueError):
        MetricMatrix.from_matrix([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        MetricMatrix.from_matrix([[1.0, 0.0, 0.0]])
    assert MetricMatrix.identity(3).is_identity


def test_project_tangent_examples():
    v = np.array([0.3, -2.0])
    assert np.array_equal(project_tangent(DISK, I2, [0.1, 0.1], v), v)
    assert project_tangent(INTERVAL, I1, [0.6], [1.0]) == pytest.approx([0.0], abs=1e-15)
    assert project_tangent(INTERVAL, I1, [0.6], [-1.0]) == pytest.approx([-1.0])
    mu = project_tangent(DISK, I2, [1.0, 0.0], [1.0, 1.0])
    assert mu == pytest.approx(brute_halfspace_2d(np.eye(2), np.array([1.0, 1.0]), np.array([-2.0, 0.0])), abs=1e-6)
    assert mu == pytest.approx([0.0, 1.0], abs=1e-14)


def test_project_tangent_errors():
    with pytest.raises(DomainError):
        project_tangent(DISK, I2, [2.0, 0.0], [1.0, 0.0])
    flat = ConstraintSet(1, lambda x: 0.0 * float(x[0]), lambda x: np.zeros(1), lambda s: s, ([-1.0], [1.0]))
    with pytest.raises(RegularityError):
        project_tangent(flat, I1, [0.0], [1.0])


def test_cbf_field_examples():
    f = np.array([1.0])
    # inactive branch returns f itself
    assert cbf_field_value(INTERVAL, I1, f, -0.1, 0.3, np.array([-0.2]), 5.0) is f
    u = 0.5
    h, g = 0.36 - u * u, np.array([-2 * u])
    val = cbf_field_value(INTERVAL, I1, f, float(g @ f), h, g, 1.0)
    assert val == pytest.approx([0.11], abs=1e-14)
    assert val == pytest.approx(pg_qp(np.eye(1), f, g, 1.0 * h), abs=1e-12)
    # large alpha: constraint inactive at the interior point
    assert cbf_field_value(INTERVAL, I1, f, float(g @ f), h, g, 1e6) == pytest.approx(f)
    with pytest.raises(RegularityError):
        cbf_field_value(INTERVAL, I1, f, -1.0, 0.0, np.zeros(1), 1.0)
    with pytest.raises(ValueError):
        cbf_field_value(INTERVAL, I1, f, -1.0, 0.0, g, 0.0)


def test_qp_oracle_examples():
    f = np.array([1.0, 1.0])
    assert np.array_equal(qp_oracle(I2, f, [1.0, 0.0], 0.0), f)
    assert qp_oracle(I2, f, [-1.0, 0.0], 0.0) == pytest.approx(pg_qp(np.eye(2), f, np.array([-1.0, 0.0]), 0.0), abs=1e-10)
    assert qp_oracle(I2, f, [-1.0, 0.0], 0.0) == pytest.approx([0.0, 1.0], abs=1e-15)
    m = MetricMatrix.from_matrix(np.diag([1.0, 4.0]))
    sol = qp_oracle(m, [1.0, 0.0], [-1.0, 0.0], 0.0)
    assert sol == pytest.approx(pg_qp(np.diag([1.0, 4.0]), np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 0.0), abs=1e-10)
    assert sol == pytest.approx([0.0, 0.0], abs=1e-15)
    with pytest.raises(InfeasibleError):
        qp_oracle(I2, f, [0.0, 0.0], -1.0)
    assert np.array_equal(qp_oracle(I2, f, [0.0, 0.0], 1.0), f)


def _random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.5 * np.eye(n)


def test_qp_oracle_against_iterative_solvers():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(1, 5))
        P = _random_spd(rng, n)
        m = MetricMatrix.from_matrix(P)
        f, w = rng.normal(size=n) * 3, rng.normal(size=n)
        b = float(rng.normal())
        sol = qp_oracle(m, f, w, b)
        assert sol == pytest.approx(hyperplane_qp(P, f, w, b), abs=1e-9 * (1 + np.linalg.norm(f)))
        ref = pg_qp(P, f, w, b, tol=1e-14)
        assert np.linalg.norm(sol - ref) <= 1e-6 * (1 + np.linalg.norm(f))
        assert np.linalg.norm(sol - qp_projected_gradient(m, f, w, b)) <= 1e-6 * (1 + np.linalg.norm(f))
        assert float(w @ sol) + b >= -1e-10 * (1 + np.linalg.norm(w) * np.linalg.norm(sol))


def test_kkt_certificate_sign_convention():
    x, v = np.array([1.0, 0.0]), np.array([1.0, 1.0])
    mu = project_tangent(DISK, I2, x, v)
    feas, stat, lam = tangent_kkt_residuals(DISK, I2, x, v, mu)
    assert feas == 0 and stat <= 1e-14 and lam <= 0
    # a wrong answer fails stationarity or sign
    _, stat_bad, lam_bad = tangent_kkt_residuals(DISK, I2, x, v, np.array([0.0, 0.5]))
    assert stat_bad > 1e-3 or lam_bad > 0


@pytest.mark.parametrize("P", [np.eye(2), np.diag([1.0, 4.0]), np.array([[2.0, 0.7], [0.7, 1.0]])],
                         ids=["identity", "diag", "full"])
def test_tangent_projection_certificate_random(P):
    m = MetricMatrix.from_matrix(P)
    rng = np.random.default_rng(3)
    for th in rng.uniform(0, 2 * np.pi, 500):
        x = np.array([np.cos(th), np.sin(th)])
        v = rng.normal(size=2) * 5
        mu = project_tangent(DISK, m, x, v)
        assert mu == pytest.approx(hyperplane_qp(P, v, DISK.grad_h(x), 0.0), abs=1e-9 * (1 + np.linalg.norm(v)))
        feas, stat, lam = tangent_kkt_residuals(DISK, m, x, v, mu)
        scale = 1 + np.linalg.norm(v)
        assert feas <= 1e-10 * scale and stat <= 1e-8 * scale and lam <= 1e-8 * scale
        assert DISK.grad_h(x) @ mu >= -1e-10 * np.linalg.norm(DISK.grad_h(x)) * np.linalg.norm(mu)


def test_project_point_examples():
    x = np.array([0.3])
    assert np.array_equal(project_point_to_set(INTERVAL, x), x)
    assert project_point_to_set(INTERVAL, [0.62]) == pytest.approx([0.6])
    sync = ball_set([0.0, 4000.0], 500.0)
    assert project_point_to_set(sync, [0.0, 4550.0]) == pytest.approx([0.0, 4500.0])
    with pytest.raises(DomainError):
        project_point_to_set(INTERVAL, [0.9])  # beyond the 10% box inflation
    with pytest.raises(DomainError):
        project_point_to_set(sync, [0.0, 5000.0])


def test_project_point_iterative_annulus():
    rng = np.random.default_rng(11)
    for _ in range(200):
        r = rng.choice([rng.uniform(0.0, 0.5), rng.uniform(1.5, 1.6)])
        th = rng.uniform(0, 2 * np.pi)
        x = r * np.array([np.cos(th), np.sin(th)])
        if np.linalg.norm(x) < 1e-3:
            continue
        y, res, _ = project_iterative(ANNULUS, x)
        target = 0.5 if np.linalg.norm(x) < 1.0 else 1.5
        assert ANNULUS.h(y) >= -ANNULUS.boundary_tol
        assert res <= 1e-8
        assert y == pytest.approx(target * x / np.linalg.norm(x), abs=1e-7)
        assert project_point_to_set(ANNULUS, y) == pytest.approx(y, abs=1e-10)


def test_project_iterative_failure_raises():
    hole = ConstraintSet(2, lambda x: -1.0 - float(x @ x), lambda x: -2 * x, lambda s: s, ([-1.0, -1.0], [1.0, 1.0]))
    with pytest.raises(ProjectionError):
        project_iterative(hole, np.array([0.5, 0.5]))


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(float, 2, elements=st.floats(-1.1, 1.1)))
def test_projection_idempotent(x):
    y = project_point_to_set(DISK, x)
    assert DISK.h(y) >= -DISK.boundary_tol
    assert np.linalg.norm(project_point_to_set(DISK, y) - y) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 2 * np.pi), hnp.arrays(float, 2, elements=st.floats(-10, 10)),
       st.floats(0.5, 4.0), st.floats(-0.9, 0.9))
def test_cbf_matches_oracle_property(theta, f, p11, p01):
    P = np.array([[p11, p01], [p01, 1.0]])
    if np.linalg.eigvalsh(P)[0] <= 0.05:
        return
    m = MetricMatrix.from_matrix(P)
    x = 0.9 * np.array([np.cos(theta), np.sin(theta)])
    g = DISK.grad_h(x)
    for alpha in (0.1, 1.0, 30.0):
        val = cbf_field_value(DISK, m, f, float(g @ f), DISK.h(x), g, alpha)
        ref = hyperplane_qp(P, f, g, alpha * DISK.h(x))
        assert np.linalg.norm(val - ref) <= 1e-8 * (1 + np.linalg.norm(f))


def test_sample_points_all_in_annulus():
    pts = sample_in_set(ANNULUS, 100)
    assert all(ANNULUS.h(p) >= 0 for p in pts)


def test_metric_projection_disk():
    P = [[1.0, 0.3], [0.3, 4.0]]
    proj = metric_projector(DISK, MetricMatrix.from_matrix(P))
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = rng.uniform(-1.05, 1.05, 2)
        y = proj(x)
        assert DISK.h(y) >= 0.0
        assert y == pytest.approx(disk_metric_projection(P, x), abs=1e-8)
    inside = np.array([0.2, -0.3])
    assert np.array_equal(proj(inside), inside)
    with pytest.raises(DomainError):
        proj([9.0, 0.0])


def test_metric_projection_identity_is_euclidean():
    proj = metric_projector(ANNULUS, I2)
    assert proj([0.1, 0.0]) == pytest.approx(project_iterative(ANNULUS, [0.1, 0.0])[0])
