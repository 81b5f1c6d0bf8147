"""Constraint sets ``S = {x : h(x) >= 0}`` and their tangent/normal cone data."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .errors import DomainError, EstimationError, EvaluationError

DEFAULT_BOUNDARY_TOL = 1e-9


class Classification(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class ConstraintSet:
    """A smooth single-inequality set with the data needed by the simulators.

    ``gamma`` is the class-K-infinity bound on the boundary distance,
    ``d(x, dS) <= gamma(h(x))``. ``bounding_box`` is a pair ``(lo, hi)`` of
    arrays enclosing the set; every "max over S" is sampled inside it.

    The optional ``nearest_boundary``, ``project`` and ``boundary_sampler``
    callbacks supply closed forms; when absent the generic numerical
    routines in this module are used.
    """

    dim: int
    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray]
    gamma: Callable[[float], float]
    bounding_box: tuple
    boundary_tol: float = DEFAULT_BOUNDARY_TOL
    name: str = "custom"
    shape: str = "custom"
    params: dict = field(default_factory=dict)
    nearest_boundary: Optional[Callable[[np.ndarray], np.ndarray]] = None
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None
    boundary_sampler: Optional[Callable[[int], np.ndarray]] = None

    def __post_init__(self):
        lo, hi = self.bounding_box
        lo = np.asarray(lo, dtype=float).reshape(self.dim)
        hi = np.asarray(hi, dtype=float).reshape(self.dim)
        if np.any(hi <= lo):
            raise ValueError("bounding_box must have hi > lo in every coordinate")
        object.__setattr__(self, "bounding_box", (lo, hi))
        if self.boundary_tol < 0:
            raise ValueError("boundary_tol must be nonnegative")

    def contains(self, x, tol=None) -> bool:
        tol = self.boundary_tol if tol is None else tol
        return self.h(x) >= -tol

    def in_box(self, x, inflate=0.0) -> bool:
        lo, hi = self.bounding_box
        pad = inflate * (hi - lo)
        return bool(np.all(x >= lo - pad) and np.all(x <= hi + pad))


@dataclass(frozen=True)
class ConeData:
    """Classification of a point plus the normal-cone generator on the boundary.

    On the boundary the normal cone is ``{lam * grad_h(x) : lam <= 0}`` and the
    tangent cone is ``{v : grad_h(x) . v >= 0}``.
    """

    classification: Classification
    normal_generator: Optional[np.ndarray] = None

    def __post_init__(self):
        on_boundary = self.classification is Classification.BOUNDARY
        if on_boundary != (self.normal_generator is not None):
            raise ValueError("normal_generator must be present iff the point is on the boundary")


def _as_state(cset: ConstraintSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (cset.dim,):
        raise ValueError(f"expected a state of dimension {cset.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise EvaluationError("non-finite state", x=x)
    return x


def eval_h(cset: ConstraintSet, x) -> float:
    val = float(cset.h(x))
    if not math.isfinite(val):
        raise EvaluationError(f"h evaluated to {val}", x=x)
    return val


def eval_grad(cset: ConstraintSet, x) -> np.ndarray:
    g = np.asarray(cset.grad_h(x), dtype=float).reshape(cset.dim)
    if not np.all(np.isfinite(g)):
        raise EvaluationError("grad_h evaluated to a non-finite vector", x=x)
    return g


def classify(cset: ConstraintSet, x) -> ConeData:
    x = _as_state(cset, x)
    hv = eval_h(cset, x)
    if hv > cset.boundary_tol:
        return ConeData(Classification.INTERIOR)
    if hv < -cset.boundary_tol:
        return ConeData(Classification.OUTSIDE)
    return ConeData(Classification.BOUNDARY, eval_grad(cset, x))


def tangent_halfspace(cone: ConeData) -> Optional[np.ndarray]:
    """Return ``w`` with ``T_S(x) = {v : w.v >= 0}``, or None when ``T_S(x)`` is everything."""
    if cone.classification is Classification.INTERIOR:
        return None
    if cone.classification is Classification.OUTSIDE:
        raise DomainError("tangent cone is undefined outside the constraint set")
    return cone.normal_generator.copy()


# ---------------------------------------------------------------------------
# boundary search


def _ray_crossing(cset: ConstraintSet, x, direction, h0):
    """Smallest bracketed t > 0 with h(x + t*direction) = 0, or None."""
    lo, hi = cset.bounding_box
    diag = float(np.linalg.norm(hi - lo))
    t_prev, h_prev = 0.0, h0
    t = 1e-3 * diag
    while t <= 2.5 * diag:
        h_t = eval_h(cset, x + t * direction)
        if h_t < 0.0:
            if h_prev == 0.0:
                return t_prev
            return optimize.brentq(
                lambda s: cset.h(x + s * direction), t_prev, t, xtol=1e-15, rtol=4 * np.finfo(float).eps
            )
        t_prev, h_prev = t, h_t
        t *= 1.5
    return None


def _snap_to_boundary(cset: ConstraintSet, y, iters=8):
    for _ in range(iters):
        hv = eval_h(cset, y)
        if abs(hv) <= cset.boundary_tol:
            break
        g = eval_grad(cset, y)
        gg = float(g @ g)
        if gg == 0.0:
            break
        y = y - hv * g / gg
    return y


def nearest_boundary_point(cset: ConstraintSet, x) -> np.ndarray:
    """A point of the boundary nearest to ``x`` (closed form when the set provides one).

    The generic search shoots rays along the descent direction of ``h`` and
    the coordinate axes, keeps the closest crossing, then polishes it with a
    constrained least-distance solve. The result lies on the boundary, so its
    distance to ``x`` is an upper bound on ``d(x, dS)``.
    """
    x = _as_state(cset, x)
    if cset.nearest_boundary is not None:
        return np.asarray(cset.nearest_boundary(x), dtype=float).reshape(cset.dim)
    h0 = eval_h(cset, x)
    if abs(h0) <= cset.boundary_tol:
        return x.copy()
    sign = 1.0 if h0 > 0 else -1.0
    directions = []
    g = eval_grad(cset, x)
    gn = float(np.linalg.norm(g))
    if gn > 0:
        directions.extend([-sign * g / gn, sign * g / gn])
    eye = np.eye(cset.dim)
    directions.extend(list(eye) + list(-eye))
    if cset.dim > 1:
        directions.extend(list(_sphere_points(cset.dim, 16)))

    probe = cset if sign > 0 else _negated(cset)
    hits = []
    for d in directions:
        t = _ray_crossing(probe, x, d, sign * h0)
        if t is not None:
            hits.append((t, x + t * d))
    if not hits:
        raise EstimationError(f"no boundary crossing found from {x} inside the bounding box")
    hits.sort(key=lambda item: item[0])

    best = None
    for _, y in hits[:3]:
        y = _snap_to_boundary(cset, y)
        cand = _polish(cset, x, y)
        on_boundary = cand is not None and abs(cset.h(cand)) <= max(cset.boundary_tol, 1e-12)
        for c in (y, cand) if on_boundary else (y,):
            dist = float(np.linalg.norm(c - x))
            if best is None or dist < best[0]:
                best = (dist, c)
    return best[1]


def _polish(cset: ConstraintSet, x, y0):
    """Local least-distance solve on the boundary started at ``y0``; None if it fails."""
    res = optimize.minimize(
        lambda y: float((y - x) @ (y - x)),
        y0,
        jac=lambda y: 2.0 * (y - x),
        constraints=[{"type": "eq", "fun": lambda y: cset.h(y), "jac": lambda y: cset.grad_h(y)}],
        method="SLSQP",
        options={"ftol": 1e-16, "maxiter": 50},
    )
    cand = _snap_to_boundary(cset, np.asarray(res.x, dtype=float))
    return cand if np.all(np.isfinite(cand)) else None


def _negated(cset: ConstraintSet) -> ConstraintSet:
    return ConstraintSet(
        dim=cset.dim,
        h=lambda y: -cset.h(y),
        grad_h=lambda y: -np.asarray(cset.grad_h(y)),
        gamma=cset.gamma,
        bounding_box=cset.bounding_box,
        boundary_tol=cset.boundary_tol,
    )


def distance_to_boundary(cset: ConstraintSet, x) -> float:
    """Estimate of ``d(x, dS)`` for ``x`` in ``S``; exact for the ball and interval sets."""
    x = _as_state(cset, x)
    if eval_h(cset, x) < -cset.boundary_tol:
        raise DomainError(f"point {x} lies outside the constraint set")
    return float(np.linalg.norm(nearest_boundary_point(cset, x) - x))


def sample_in_set(cset: ConstraintSet, count: int) -> np.ndarray:
    """Deterministic low-discrepancy points of the bounding box that lie in S."""
    lo, hi = cset.bounding_box
    sampler = qmc.Halton(d=cset.dim, scramble=False)
    out = []
    drawn = 0
    while len(out) < count and drawn < 200 * count:
        batch = qmc.scale(sampler.random(max(64, count)), lo, hi) if cset.dim > 0 else None
        drawn += len(batch)
        for p in batch:
            if cset.h(p) >= 0.0:
                out.append(p)
                if len(out) == count:
                    break
    return np.array(out).reshape(-1, cset.dim)


def sample_boundary(cset: ConstraintSet, count: int) -> np.ndarray:
    if cset.boundary_sampler is not None:
        return np.asarray(cset.boundary_sampler(count), dtype=float).reshape(-1, cset.dim)
    pts = sample_in_set(cset, count)
    return np.array([nearest_boundary_point(cset, p) for p in pts]).reshape(-1, cset.dim)


# ---------------------------------------------------------------------------
# concrete sets


def _sphere_points(dim: int, count: int) -> np.ndarray:
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    from scipy.special import ndtri

    u = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def ball_set(center, radius: float, boundary_tol: float = DEFAULT_BOUNDARY_TOL, name: str = "ball") -> ConstraintSet:
    """``h(x) = r^2 - |x - c|^2`` with the analytic ``gamma(s) = s / r``."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    r = float(radius)
    if r <= 0:
        raise ValueError("radius must be positive")
    r2 = r * r
    dim = c.size

    def h(x):
        d = x - c
        return r2 - float(d @ d)

    def grad_h(x):
        return -2.0 * (x - c)

    def radial(x):
        d = x - c
        nd = math.sqrt(float(d @ d))
        if nd == 0.0:
            e = np.zeros(dim)
            e[0] = 1.0
            return c + r * e
        return c + (r / nd) * d

    def project(x):
        d = x - c
        if float(d @ d) <= r2:
            return x.copy()
        return radial(x)

    def sampler(count):
        return c + r * _sphere_points(dim, count)

    return ConstraintSet(
        dim=dim,
        h=h,
        grad_h=grad_h,
        gamma=lambda s: s / r,
        bounding_box=(c - r, c + r),
        boundary_tol=boundary_tol,
        name=name,
        shape="ball",
        params={"center": c.tolist(), "radius": r},
        nearest_boundary=radial,
        project=project,
        boundary_sampler=sampler,
    )


def interval_set(radius: float, center: float = 0.0, boundary_tol: float = DEFAULT_BOUNDARY_TOL) -> ConstraintSet:
    """``[c - r, c + r]`` written as ``h(u) = r^2 - (u - c)^2``."""
    s = ball_set([center], radius, boundary_tol=boundary_tol, name="interval")
    return ConstraintSet(
        dim=1,
        h=s.h,
        grad_h=s.grad_h,
        gamma=s.gamma,
        bounding_box=s.bounding_box,
        boundary_tol=boundary_tol,
        name="interval",
        shape="interval",
        params={"center": float(center), "radius": float(radius)},
        nearest_boundary=s.nearest_boundary,
        project=s.project,
        boundary_sampler=s.boundary_sampler,
    )


def annulus_set(inner: float = 0.5, outer: float = 1.5, boundary_tol: float = DEFAULT_BOUNDARY_TOL) -> ConstraintSet:
    """Non-convex planar annulus ``h = (R^2 - |x|^2)(|x|^2 - r^2)``.

    Since ``h >= d * r * (R^2 - r^2)`` on the annulus, ``gamma(s) = s / (r (R^2 - r^2))``.
    No closed-form projection is attached: it exercises the iterative paths.
    """
    r, R = float(inner), float(outer)
    if not 0 < r < R:
        raise ValueError("need 0 < inner < outer")
    k = r * (R * R - r * r)

    def h(x):
        q = float(x @ x)
        return (R * R - q) * (q - r * r)

    def grad_h(x):
        q = float(x @ x)
        return 2.0 * x * ((R * R - q) - (q - r * r))

    def sampler(count):
        half = max(count // 2, 1)
        pts = _sphere_points(2, half)
        return np.vstack([r * pts, R * pts])

    return ConstraintSet(
        dim=2,
        h=h,
        grad_h=grad_h,
        gamma=lambda s: s / k,
        bounding_box=(np.full(2, -R), np.full(2, R)),
        boundary_tol=boundary_tol,
        name="annulus",
        shape="custom",
        params={"inner": r, "outer": R},
        boundary_sampler=sampler,
    )


def validate_set(cset: ConstraintSet, n_points: int = 1000, fd_rtol: float = 1e-5) -> dict:
    """Sample the standing assumptions on ``h`` and ``gamma``.

    Returns a mapping ``check name -> (passed, worst value)`` covering the
    finite-difference gradient check, ``gamma(0) = 0`` and monotonicity,
    the distance bound ``d(x, dS) <= gamma(h(x))`` and nonvanishing boundary
    gradients. The last two are omitted when the gradient check fails.
    """
    pts = sample_in_set(cset, n_points)
    worst_fd = 0.0
    for p in pts:
        g = eval_grad(cset, p)
        fd = np.empty(cset.dim)
        for i in range(cset.dim):
            step = 6e-6 * max(1.0, abs(p[i]))
            e = np.zeros(cset.dim)
            e[i] = step
            fd[i] = (cset.h(p + e) - cset.h(p - e)) / (2 * step)
        scale = max(float(np.linalg.norm(g)), 1.0)
        worst_fd = max(worst_fd, float(np.linalg.norm(fd - g)) / scale)

    hv = np.array([cset.h(p) for p in pts])
    args = np.linspace(0.0, float(hv.max()) if hv.size else 1.0, 257)
    gam = np.array([cset.gamma(a) for a in args])
    gamma_zero = abs(gam[0])
    increasing = bool(np.all(np.diff(gam) > 0))

    out = {
        "grad_fd": (worst_fd <= fd_rtol, worst_fd),
        "gamma_zero": (gamma_zero == 0.0, gamma_zero),
        "gamma_increasing": (increasing, float(np.min(np.diff(gam)))),
    }
    if not out["grad_fd"][0]:
        # the boundary search and sampler rely on grad h; skip the checks built on them
        return out

    worst_gap = -math.inf
    for p, hp in zip(pts[: min(len(pts), 200)], hv):
        worst_gap = max(worst_gap, distance_to_boundary(cset, p) - cset.gamma(hp))
    out["distance_bound"] = (worst_gap <= 1e-8, worst_gap)

    bpts = sample_boundary(cset, 256)
    min_bgrad = min(float(np.linalg.norm(eval_grad(cset, b))) for b in bpts)
    out["boundary_regularity"] = (min_bgrad > 0.0, min_bgrad)
    return out
