"""Convergence sweeps over alpha, the perturbation-membership certificate,
the sigma-perturbation membership test and pointwise checks of the
auxiliary inequalities on the active region ``U = {L_f h + alpha h <= 0}``."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .bounds import BoundsReport, Lattice, build_lattice, sigma_of_alpha
from .dynamics import FieldKind, Interconnection, di_residual, eval_field
from .errors import ConfigError, EstimationError, PreconditionError
from .geometry import distance_to_boundary, nearest_boundary_point
from .integrate import IntegrationConfig, Scheme, Trajectory, integrate, refine_check
from .projection import project_point_to_set


def worker_count(default: int = 1) -> int:
    """Thread cap from ``PDSCBF_THREADS`` (at least 1)."""
    raw = os.environ.get("PDSCBF_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"PDSCBF_THREADS must be an integer, got {raw!r}") from exc


@dataclass
class SweepResult:
    alphas: list
    sup_distances: list
    invariance_margins: list
    containment: list
    reference_scheme_gap: float
    t_prime: float
    reference_min_h: float
    below_alpha_star: list = field(default_factory=list)
    reference: Trajectory | None = field(default=None, repr=False)
    trajectories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        k = len(self.alphas)
        if not (len(self.sup_distances) == len(self.invariance_margins) == len(self.containment) == k):
            raise ValueError("sweep result lists must have equal lengths")

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "sup_distances": list(self.sup_distances),
            "invariance_margins": list(self.invariance_margins),
            "containment": list(self.containment),
            "reference_scheme_gap": self.reference_scheme_gap,
            "t_prime": self.t_prime,
            "reference_min_h": self.reference_min_h,
            "below_alpha_star": list(self.below_alpha_star),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "sup_distance", "invariance_margin", "containment"])
        for row in zip(self.alphas, self.sup_distances, self.invariance_margins, self.containment):
            w.writerow([format(row[0], ".17g"), format(row[1], ".17g"), format(row[2], ".17g"),
                        "true" if row[3] else "false"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def sup_distance(a: Trajectory, b: Trajectory, t_prime: float) -> float:
    """``max_t |(z, x)_a(t) - (z, x)_b(t)|`` over the shared record grid restricted to ``[0, t_prime]``."""
    if a.config.dt != b.config.dt or a.config.record_stride != b.config.record_stride:
        raise ConfigError("trajectories must share dt and record_stride")
    k = min(len(a.times), len(b.times))
    keep = a.times[:k] <= t_prime * (1 + 1e-12)
    diff = a.states[:k][keep] - b.states[:k][keep]
    return float(np.max(np.linalg.norm(diff, axis=1))) if len(diff) else 0.0


def run_sweep(sys: Interconnection, z0, x0, cfg: IntegrationConfig, alphas, t_prime: float | None = None,
              report: BoundsReport | None = None, reference_scheme: Scheme = Scheme.PROJECTED_EULER,
              workers: int | None = None) -> SweepResult:
    """PDS reference plus one CBF run per alpha, compared on ``[0, t_prime]``.

    ``t_prime`` defaults to ``0.95 * t_end``. CBF runs use RK4 with the same
    ``dt`` and stride as the reference; they run on a thread pool capped by
    ``PDSCBF_THREADS`` and are reduced in alpha order.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigError("alpha list is empty")
    if any(a <= 0 or not math.isfinite(a) for a in alphas):
        raise ConfigError("alphas must be finite and positive")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigError("alphas must be strictly increasing")
    t_prime = 0.95 * cfg.t_end if t_prime is None else float(t_prime)
    if not 0 < t_prime <= cfg.t_end:
        raise ConfigError("t_prime must lie in (0, t_end]")
    below = []
    if report is not None:
        below = [a < report.alpha_star for a in alphas]
        low = [a for a, b in zip(alphas, below) if b]
        if low:
            warnings.warn(f"alphas {low} are below alpha_star={report.alpha_star:g}; "
                          "the perturbation bound does not cover them", stacklevel=2)

    ref_cfg = IntegrationConfig(cfg.t_end, cfg.dt, reference_scheme, cfg.record_stride, cfg.invariance_tol)
    cbf_cfg = IntegrationConfig(cfg.t_end, cfg.dt, Scheme.RK4, cfg.record_stride, cfg.invariance_tol)

    def run_cbf(a):
        return integrate(sys, FieldKind.cbf(a), z0, x0, cbf_cfg)

    n_workers = worker_count() if workers is None else max(1, int(workers))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            fut_ref = pool.submit(integrate, sys, FieldKind.pds(), z0, x0, ref_cfg)
            trajs = list(pool.map(run_cbf, alphas))
            ref = fut_ref.result()
    else:
        ref = integrate(sys, FieldKind.pds(), z0, x0, ref_cfg)
        trajs = [run_cbf(a) for a in alphas]

    gap = refine_check(sys, FieldKind.pds(), z0, x0, ref_cfg)
    tol = cfg.invariance_tol
    return SweepResult(
        alphas=alphas,
        sup_distances=[sup_distance(tr, ref, t_prime) for tr in trajs],
        invariance_margins=[tr.min_h for tr in trajs],
        containment=[bool(tr.in_zbox and tr.min_h >= -tol) for tr in trajs],
        reference_scheme_gap=gap,
        t_prime=t_prime,
        reference_min_h=ref.min_h,
        below_alpha_star=below,
        reference=ref,
        trajectories=trajs,
    )


# ---------------------------------------------------------------------------
# perturbation certificate


@dataclass(frozen=True)
class CertificateRecord:
    z: np.ndarray
    x: np.ndarray
    active: bool
    distance: float
    eta_norm: float
    residual: float
    sigma: float
    sigma1: float
    delta: float
    slack: float

    @property
    def distance_ok(self) -> bool:
        return self.distance <= self.sigma + self.slack

    @property
    def eta_ok(self) -> bool:
        return self.eta_norm <= self.delta + self.slack

    @property
    def residual_ok(self) -> bool:
        return self.residual <= self.sigma + self.slack

    @property
    def sigma1_ok(self) -> bool:
        return self.residual <= self.sigma1 + self.slack

    @property
    def passed(self) -> bool:
        return self.distance_ok and self.eta_ok and self.residual_ok


def perturbation_certificate(sys: Interconnection, alpha: float, report: BoundsReport, samples,
                             slack: float = 1e-8) -> list:
    """Evaluate the explicit witness of the CBF-as-perturbation inclusion at each ``(z, x)``.

    For ``x`` in the active region the witness is the nearest boundary point
    ``y`` and ``eta = (L_f h + alpha h) grad h(y) / |grad h(y)|^2_{P^-1}``;
    otherwise the CBF field equals ``f`` and the residual is zero.
    """
    sigma = sigma_of_alpha(sys.set, report, alpha)
    cset, metric, gamma = sys.set, sys.metric, sys.set.gamma
    out = []
    for z, x in samples:
        z = np.asarray(z, dtype=float).reshape(sys.m)
        x = np.asarray(x, dtype=float).reshape(sys.n)
        fv = sys.eval_f(z, x)
        gx = cset.grad_h(x)
        lfh = float(gx @ fv)
        c = lfh + alpha * cset.h(x)
        sigma1 = (report.L_f + report.L1 * abs(lfh)) * gamma(abs(lfh) / alpha)
        if c > 0:
            out.append(CertificateRecord(z, x, False, 0.0, 0.0, 0.0, sigma, sigma1, report.delta, slack))
            continue
        try:
            y = nearest_boundary_point(cset, x)
        except EstimationError as exc:
            raise EstimationError(f"no boundary witness for x={x}: {exc}") from exc
        gy = cset.grad_h(y)
        p_eta = c * metric.normalized_normal(gy)
        _, f_cbf = eval_field(sys, FieldKind.cbf(alpha), z, x)
        r = float(np.linalg.norm(f_cbf - (sys.eval_f(z, y) - p_eta)))
        out.append(CertificateRecord(z, x, True, float(np.linalg.norm(x - y)), float(np.linalg.norm(p_eta)),
                                     r, sigma, sigma1, report.delta, slack))
    return out


def certificate_samples(sys: Interconnection, alpha: float, count: int, lattice: Lattice | None = None,
                        grid_res=16) -> list:
    """Deterministic lattice samples, half of them (when available) from the active region."""
    lat = lattice if lattice is not None else build_lattice(sys, grid_res)
    pairs = lat.samples()
    mask = np.broadcast_to(lat.x_in_set, lat.lfh.shape)
    lfh = lat.lfh[mask]
    hv = np.broadcast_to(lat.h, lat.lfh.shape)[mask]
    active = np.flatnonzero(lfh + alpha * hv <= 0)
    rest = np.flatnonzero(lfh + alpha * hv > 0)
    n_act = min(len(active), count // 2)
    n_rest = min(len(rest), count - n_act)
    n_act = min(len(active), count - n_rest)

    def pick(idx, k):
        if k <= 0:
            return []
        sel = np.unique(np.linspace(0, len(idx) - 1, k).round().astype(int))
        return [int(i) for i in idx[sel]]

    chosen = sorted(pick(active, n_act) + pick(rest, n_rest))
    return [pairs[i] for i in chosen]


# ---------------------------------------------------------------------------
# sigma-perturbation membership


@dataclass(frozen=True)
class Membership:
    member: bool
    residual: float
    witnesses: int

    def __bool__(self):
        return self.member


def _ball_pattern(dim: int, count: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the closed unit ball."""
    if count <= 0:
        return np.zeros((0, dim))
    if dim == 1:
        u = qmc.Halton(d=1, scramble=False).random(count + 1)[1:]
        return 2.0 * u - 1.0
    u = qmc.Halton(d=dim + 1, scramble=False).random(count + 1)[1:]
    g = ndtri(np.clip(u[:, :dim], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(g, axis=1)
    zero = norms == 0.0
    g[zero, 0], norms[zero] = 1.0, 1.0
    g /= norms[:, None]
    return g * (u[:, dim:] ** (1.0 / dim))


def sigma_perturbation_member(sys: Interconnection, report: BoundsReport, sigma: float, z, x, candidate_xdot,
                              n_samples: int = 256, tol: float = 1e-8) -> Membership:
    """One-sided test of ``candidate in f(y) - (P^-1 N_S(y) cap delta B) + sigma B`` for some ``y``
    in ``(x + sigma B) cap S``.

    Candidate witnesses: ``x`` itself, its nearest boundary point when within
    ``sigma``, and ``n_samples`` low-discrepancy points of the sigma-ball.
    Convex combinations are not explored, so ``False`` means no single
    witness was found, not a proof of non-membership.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    cset = sys.set
    z = np.asarray(z, dtype=float).reshape(sys.m)
    x = np.asarray(x, dtype=float).reshape(sys.n)
    cands = [x]
    try:
        y = nearest_boundary_point(cset, x)
        if np.linalg.norm(y - x) <= sigma + tol:
            cands.append(y)
    except EstimationError:
        pass
    if sigma > 0:
        cands.extend(x + sigma * _ball_pattern(sys.n, n_samples))
    best = math.inf
    used = 0
    for y in cands:
        if cset.h(y) < -cset.boundary_tol:
            continue
        used += 1
        best = min(best, di_residual(sys, z, y, candidate_xdot, report.delta))
        if best <= sigma + tol:
            break
    return Membership(bool(best <= sigma + tol), float(best), used)


# ---------------------------------------------------------------------------
# pointwise lemma checks


@dataclass
class LemmaCheck:
    name: str
    checked: int = 0
    violations: int = 0
    worst: float = -math.inf

    def update(self, excess: float, slack: float):
        self.checked += 1
        self.worst = max(self.worst, float(excess))
        if excess > slack:
            self.violations += 1

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self):
        return {"checked": self.checked, "violations": self.violations,
                "worst_excess": self.worst if self.checked else None, "passed": self.passed}


def lemma_checks(sys: Interconnection, report: BoundsReport, alphas, lattice: Lattice | None = None,
                 grid_res=16, slack: float = 1e-8) -> dict:
    """Check, at every lattice point of the active region for each ``alpha >= alpha_star``:

    * ``distance(x, dS) <= gamma(|L_f h| / alpha)``,
    * ``eps <= |grad h(x)| <= M3``,
    * ``|n(x) - n(y)| <= L1 |x - y|`` with ``n = P^-1 grad h / |grad h|^2_{P^-1}``
      and ``y`` the nearest boundary point.

    Reported excesses are ``lhs - rhs``; a violation is an excess above ``slack``.
    """
    alphas = [float(a) for a in alphas]
    if any(a < report.alpha_star for a in alphas):
        raise PreconditionError("lemma checks need alpha >= alpha_star")
    lat = lattice if lattice is not None else build_lattice(sys, grid_res)
    cset, metric, gamma = sys.set, sys.metric, sys.set.gamma
    checks = {k: LemmaCheck(k) for k in ("neighbourhood", "gradient_bounds", "normal_lipschitz")}
    flat_x = lat.xs.reshape(-1, sys.n)
    flat_h = lat.h.ravel()
    flat_g = lat.grad.reshape(-1, sys.n)
    lfh = lat.lfh.reshape(-1, len(flat_x))
    in_set = lat.x_in_set.ravel()
    cache = {}

    def witness(j):
        if j not in cache:
            y = nearest_boundary_point(cset, flat_x[j])
            cache[j] = (y, distance_to_boundary(cset, flat_x[j]))
        return cache[j]

    for a in alphas:
        active = (lfh + a * flat_h[None, :] <= 0) & in_set[None, :]
        for zi, j in zip(*np.nonzero(active)):
            x = flat_x[j]
            mag = abs(lfh[zi, j])
            y, d = witness(j)
            checks["neighbourhood"].update(d - gamma(mag / a), slack)
            gn = float(np.linalg.norm(flat_g[j]))
            checks["gradient_bounds"].update(max(report.eps - gn, gn - report.M3), slack)
            nx = metric.normalized_normal(flat_g[j])
            ny = metric.normalized_normal(cset.grad_h(y))
            checks["normal_lipschitz"].update(
                float(np.linalg.norm(nx - ny)) - report.L1 * float(np.linalg.norm(x - y)), slack)
    return checks


def pds_consistency(sys: Interconnection, traj: Trajectory, delta: float) -> float:
    """Largest ``di_residual / (1 + |f|)`` of the PDS field along a trajectory's records."""
    worst = 0.0
    pds = FieldKind.pds()
    for z, x in zip(traj.zs, traj.xs):
        if sys.set.h(x) < -sys.set.boundary_tol:
            x = project_point_to_set(sys.set, x)
        _, xdot = eval_field(sys, pds, z, x)
        fv = sys.eval_f(z, x)
        worst = max(worst, di_residual(sys, z, x, xdot, delta) / (1.0 + float(np.linalg.norm(fv))))
    return worst
