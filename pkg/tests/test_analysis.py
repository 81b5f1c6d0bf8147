import numpy as np
import pytest

from pdscbf.analysis import (
    certificate_samples,
    lemma_checks,
    perturbation_certificate,
    run_sweep,
    sigma_perturbation_member,
    sup_distance,
    worker_count,
)
from pdscbf.bounds import estimate_for_config
from pdscbf.dynamics import FieldKind, Interconnection, eval_field
from pdscbf.errors import ConfigError, PreconditionError
from pdscbf.geometry import interval_set
from pdscbf.integrate import IntegrationConfig, Scheme, integrate
from pdscbf.projection import MetricMatrix, project_tangent
from pdscbf.scenarios import build_scenario


@pytest.fixture(scope="module")
def sat():
    sys, cfg = build_scenario("saturating-1d")
    return sys, cfg, estimate_for_config(sys, cfg)


@pytest.fixture(scope="module")
def fopt():
    sys, cfg = build_scenario("feedback-opt")
    return sys, cfg, estimate_for_config(sys, cfg)


def test_zero_field_sweep():
    sys = Interconnection(1, 1, lambda z, x: np.zeros(1), lambda z, x: np.zeros(1), interval_set(0.6),
                          MetricMatrix.identity(1), ([-1.0], [1.0]))
    res = run_sweep(sys, [0.0], [0.3], IntegrationConfig(1.0, 1e-2), [1.0, 10.0, 100.0])
    assert res.sup_distances == [0.0, 0.0, 0.0]
    assert res.reference_scheme_gap == 0.0
    assert all(res.containment)
    assert res.t_prime == pytest.approx(0.95)


def test_saturating_sweep_decreases(sat):
    sys, cfg, rep = sat
    res = run_sweep(sys, cfg.z0, cfg.x0, cfg.integration(Scheme.PROJECTED_EULER), cfg.alpha_grid, report=None)
    d = res.sup_distances
    assert all(b < a for a, b in zip(d, d[1:]))
    assert all(m >= -1e-6 for m in res.invariance_margins)
    assert res.reference_scheme_gap <= 0.1 * d[-1]
    text = res.to_csv()
    assert text.splitlines()[0] == "alpha,sup_distance,invariance_margin,containment"
    assert len(text.splitlines()) == len(cfg.alpha_grid) + 1


def test_sweep_threads_match_serial(sat):
    sys, cfg, _ = sat
    icfg = cfg.integration(Scheme.PROJECTED_EULER, t_end=0.5)
    a = run_sweep(sys, cfg.z0, cfg.x0, icfg, [1.0, 10.0], workers=1)
    b = run_sweep(sys, cfg.z0, cfg.x0, icfg, [1.0, 10.0], workers=3)
    assert a.to_json() == b.to_json()


def test_sweep_validation(sat):
    sys, cfg, rep = sat
    icfg = cfg.integration(Scheme.PROJECTED_EULER, t_end=0.2)
    for bad in ([], [10.0, 1.0], [1.0, 1.0], [0.0, 1.0], [1.0, float("inf")]):
        with pytest.raises(ConfigError):
            run_sweep(sys, cfg.z0, cfg.x0, icfg, bad)
    with pytest.raises(ConfigError):
        run_sweep(sys, cfg.z0, cfg.x0, icfg, [1.0], t_prime=0.5)
    with pytest.warns(UserWarning, match="below alpha_star"):
        res = run_sweep(sys, cfg.z0, cfg.x0, icfg, [1.0, 100.0], report=rep)
    assert res.below_alpha_star == [True, False]


def test_sup_distance_needs_shared_grid(sat):
    sys, cfg, _ = sat
    a = integrate(sys, FieldKind.pds(), cfg.z0, cfg.x0, IntegrationConfig(0.1, 1e-3, Scheme.PROJECTED_EULER))
    b = integrate(sys, FieldKind.pds(), cfg.z0, cfg.x0, IntegrationConfig(0.1, 2e-3, Scheme.PROJECTED_EULER))
    with pytest.raises(ConfigError):
        sup_distance(a, b, 0.1)
    assert sup_distance(a, a, 0.1) == 0.0


def test_worker_count(monkeypatch):
    monkeypatch.delenv("PDSCBF_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("PDSCBF_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("PDSCBF_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("PDSCBF_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count()


def test_certificate_inactive_sample(sat):
    sys, _, rep = sat
    rec = perturbation_certificate(sys, rep.alpha_star, rep, [([0.0], [0.0])])[0]
    assert not rec.active
    assert rec.residual == 0.0 and rec.passed


def test_certificate_near_boundary(sat):
    sys, _, rep = sat
    a = rep.alpha_star
    rec = perturbation_certificate(sys, a, rep, [([0.0], [0.59])])[0]
    assert rec.active
    assert rec.distance == pytest.approx(0.01, abs=1e-10)
    # witness: y = 0.6, f(y) = 1, c = -2(0.59) + a (0.36 - 0.59^2)
    c = -1.18 + a * (0.36 - 0.59**2)
    p_eta = c * (-1.2) / 1.44
    assert rec.eta_norm == pytest.approx(abs(p_eta), rel=1e-9)
    f_cbf = eval_field(sys, FieldKind.cbf(a), [0.0], [0.59])[1][0]
    assert rec.residual == pytest.approx(abs(f_cbf - (1.0 - p_eta)), abs=1e-12)
    assert rec.passed and rec.sigma1_ok


def test_certificate_feedback_opt(fopt):
    sys, cfg, rep = fopt
    a = 2 * rep.alpha_star
    samples = certificate_samples(sys, a, 100, grid_res=cfg.grid_res)
    assert len(samples) == 100
    recs = perturbation_certificate(sys, a, rep, samples)
    assert sum(r.active for r in recs) >= 40
    assert all(r.passed and r.sigma1_ok for r in recs)


def test_certificate_below_alpha_star(fopt):
    sys, _, rep = fopt
    with pytest.raises(PreconditionError):
        perturbation_certificate(sys, 0.5 * rep.alpha_star, rep, [([0.0, 0.0], [0.0])])


def test_sigma_member_zero_sigma(fopt):
    sys, _, rep = fopt
    z, x = np.zeros(2), np.array([0.6])
    pds = project_tangent(sys.set, sys.metric, x, sys.f(z, x))
    m = sigma_perturbation_member(sys, rep, 0.0, z, x, pds)
    assert m and m.residual <= 1e-8


def test_sigma_member_cbf_value(sat):
    sys, _, rep = sat
    a = 2 * rep.alpha_star
    sigma = rep.sigma_table.get(a) or (rep.L_f + rep.L1 * rep.max_abs_lfh) * sys.set.gamma(rep.max_abs_lfh / a)
    for x in (0.5, 0.58, 0.6):
        z = np.zeros(1)
        cand = eval_field(sys, FieldKind.cbf(a), z, [x])[1]
        assert sigma_perturbation_member(sys, rep, sigma, z, [x], cand)


def test_sigma_member_rejects_outward(fopt):
    sys, _, rep = fopt
    z, x = np.zeros(2), np.array([0.6])
    sigma = 1e-3
    outward = -sys.set.grad_h(x) / np.linalg.norm(sys.set.grad_h(x))
    cand = sys.f(z, x) + 10 * (sigma + rep.delta) * outward
    m = sigma_perturbation_member(sys, rep, sigma, z, x, cand)
    assert not m
    assert m.residual > sigma
    assert m.witnesses > 1
    with pytest.raises(ValueError):
        sigma_perturbation_member(sys, rep, -1.0, z, x, cand)


@pytest.mark.parametrize("name", ["feedback-opt", "saturating-1d", "disk-rotation", "ellipse-metric"])
def test_lemma_checks_clean(name, scenario_cache):
    sys, cfg = scenario_cache(name)
    rep = estimate_for_config(sys, cfg)
    a = max(rep.alpha_star, 1e-3)
    checks = lemma_checks(sys, rep, [a, 2 * a, 10 * a], grid_res=cfg.grid_res)
    assert set(checks) == {"neighbourhood", "gradient_bounds", "normal_lipschitz"}
    for c in checks.values():
        assert c.checked > 0
        assert c.violations == 0, c.to_dict()


def test_lemma_checks_precondition(fopt):
    sys, cfg, rep = fopt
    with pytest.raises(PreconditionError):
        lemma_checks(sys, rep, [rep.alpha_star / 2], grid_res=cfg.grid_res)
