"""Minimizations in the P-weighted metric: tangent-cone projection, the CBF
quadratic program, projection of points onto S, and independent QP solvers
used to cross-check the closed forms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, EstimationError, InfeasibleError, ProjectionError, RegularityError
from .geometry import Classification, ConstraintSet, classify, eval_grad, eval_h, nearest_boundary_point


@dataclass(frozen=True)
class MetricMatrix:
    P: np.ndarray
    P_inv: np.ndarray
    lambda_min: float
    lambda_max: float

    @classmethod
    def from_matrix(cls, P) -> "MetricMatrix":
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError("metric matrix must be square")
        scale = max(float(np.linalg.norm(P)), np.finfo(float).tiny)
        if np.linalg.norm(P - P.T) > 1e-12 * scale:
            raise ValueError("metric matrix must be symmetric")
        eig = np.linalg.eigvalsh(P)
        if eig[0] <= 0:
            raise ValueError("metric matrix must be positive definite")
        P_inv = np.linalg.inv(P)
        P_inv = 0.5 * (P_inv + P_inv.T)
        if np.max(np.abs(P @ P_inv - np.eye(P.shape[0]))) > 1e-10:
            raise ValueError("metric matrix is too ill-conditioned to invert reliably")
        for a in (P, P_inv):
            a.setflags(write=False)
        return cls(P, P_inv, float(eig[0]), float(eig[-1]))

    @classmethod
    def identity(cls, n: int) -> "MetricMatrix":
        return cls.from_matrix(np.eye(n))

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.P, np.eye(self.dim)))

    @property
    def condition_ratio(self) -> float:
        return self.lambda_max / self.lambda_min

    def norm(self, v) -> float:
        return math.sqrt(float(v @ self.P @ v))

    def normalized_normal(self, w) -> np.ndarray:
        """``P^-1 w / |w|^2_{P^-1}``, the direction used by every correction step."""
        pw = self.P_inv @ w
        return pw / float(w @ pw)


def _boundary_correction(metric: MetricMatrix, v, w, value):
    """``v - value * P^-1 w / |w|^2_{P^-1}``."""
    if not np.any(w):
        raise RegularityError("constraint gradient vanishes where the correction is active")
    return v - value * metric.normalized_normal(w)


def project_tangent(cset: ConstraintSet, metric: MetricMatrix, x, v) -> np.ndarray:
    """P-projection of ``v`` onto the tangent cone ``T_S(x)``."""
    v = np.asarray(v, dtype=float).reshape(cset.dim)
    cone = classify(cset, x)
    if cone.classification is Classification.OUTSIDE:
        raise DomainError(f"point {x} lies outside the constraint set")
    if cone.classification is Classification.INTERIOR:
        return v.copy()
    w = cone.normal_generator
    if not np.any(w):
        raise RegularityError(f"grad h vanishes on the boundary at {x}")
    a = float(w @ v)
    if a >= 0.0:
        return v.copy()
    return _boundary_correction(metric, v, w, a)


def cbf_field_value(cset, metric: MetricMatrix, f_val, Lfh: float, h_val: float, grad, alpha: float) -> np.ndarray:
    """Closed-form minimizer of ``|mu - f|_P^2`` subject to ``grad.mu + alpha*h >= 0``.

    When the nominal field already satisfies the constraint it is returned
    unchanged.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    f_val = np.asarray(f_val, dtype=float)
    if cset is not None and f_val.shape != (cset.dim,):
        raise ValueError(f"f_val must have shape ({cset.dim},)")
    c = Lfh + alpha * h_val
    if c >= 0.0:
        return f_val
    return _boundary_correction(metric, f_val, np.asarray(grad, dtype=float), c)


def qp_oracle(metric: MetricMatrix, f_val, constraint_w, constraint_b: float) -> np.ndarray:
    """Exact solution of ``min |mu - f|_P^2  s.t.  w.mu + b >= 0`` via its KKT system.

    Solves the bordered linear system ``[[P, -w], [w^T, 0]] [mu; lam] = [P f; -b]``
    when the constraint is violated at ``f``; no explicit inverse of ``P`` is used.
    """
    f_val = np.asarray(f_val, dtype=float)
    w = np.asarray(constraint_w, dtype=float).reshape(f_val.shape)
    b = float(constraint_b)
    if float(w @ f_val) + b >= 0.0:
        return f_val.copy()
    if not np.any(w):
        raise InfeasibleError("w = 0 and b < 0: the constraint can never hold")
    n = f_val.size
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = metric.P
    K[:n, n] = -w
    K[n, :n] = w
    rhs = np.concatenate([metric.P @ f_val, [-b]])
    sol = np.linalg.solve(K, rhs)
    return sol[:n]


def qp_projected_gradient(metric: MetricMatrix, f_val, constraint_w, constraint_b: float,
                          tol: float = 1e-15, max_iter: int = 200_000) -> np.ndarray:
    """Iterative solution of the same QP by projected gradient descent.

    Each iterate takes a gradient step of length ``1/lambda_max`` on the
    P-weighted objective, then projects in the Euclidean metric onto the
    half-space. Used purely as a test oracle.
    """
    f_val = np.asarray(f_val, dtype=float)
    w = np.asarray(constraint_w, dtype=float).reshape(f_val.shape)
    b = float(constraint_b)
    ww = float(w @ w)
    if ww == 0.0:
        if b < 0:
            raise InfeasibleError("w = 0 and b < 0: the constraint can never hold")
        return f_val.copy()

    def halfspace(y):
        r = float(w @ y) + b
        return y if r >= 0 else y - (r / ww) * w

    step = 1.0 / metric.lambda_max
    mu = halfspace(f_val.copy())
    for _ in range(max_iter):
        nxt = halfspace(mu - step * (metric.P @ (mu - f_val)))
        if np.linalg.norm(nxt - mu) <= tol * (1.0 + np.linalg.norm(mu)):
            return nxt
        mu = nxt
    raise ProjectionError("projected-gradient QP oracle did not converge")


def tangent_kkt_residuals(cset: ConstraintSet, metric: MetricMatrix, x, v, mu):
    """KKT residuals of a tangent-cone projection at a boundary point.

    Returns ``(feasibility, stationarity, multiplier)``: the violation of
    ``grad.mu >= 0``, the distance of ``P(v - mu)`` from the line spanned by
    ``grad`` and the multiplier ``lam`` in ``P(v - mu) = lam * grad``. A valid
    projection has zero residuals and ``lam <= 0`` (so ``P(v - mu)`` lies in
    the normal cone), with ``lam * grad.mu = 0``.
    """
    w = eval_grad(cset, x)
    r = metric.P @ (np.asarray(v, dtype=float) - np.asarray(mu, dtype=float))
    ww = float(w @ w)
    lam = float(r @ w) / ww
    feas = max(0.0, -float(w @ mu))
    stat = float(np.linalg.norm(r - lam * w))
    return feas, stat, lam


# ---------------------------------------------------------------------------
# projection of points onto S


def _stationarity(cset, x, y):
    """Tangential part of ``x - y`` relative to the normal at ``y`` (scaled by |x - y|)."""
    g = eval_grad(cset, y)
    d = x - y
    gg = float(g @ g)
    if gg == 0.0:
        return math.inf
    tang = d - (float(d @ g) / gg) * g
    return float(np.linalg.norm(tang)) / max(1.0, float(np.linalg.norm(d)))


def project_iterative(cset: ConstraintSet, x, max_iter: int = 100, tol: float = 1e-12):
    """Project ``x`` onto S by successive linearization of the boundary.

    Each iteration projects ``x`` onto the half-space ``h(y_k) + grad(y_k).(y - y_k) >= 0``.
    Returns ``(y, stationarity_residual, iterations)``; falls back to a
    constrained least-distance solve when the linearization stalls.
    """
    x = np.asarray(x, dtype=float).reshape(cset.dim)
    if eval_h(cset, x) >= 0.0:
        return x.copy(), 0.0, 0
    y, res, k = _linearization(cset, x, x.copy(), max_iter, tol)
    lo, hi = cset.bounding_box
    far = 1e-2 * float(np.linalg.norm(hi - lo))
    if y is not None and np.linalg.norm(y - x) <= far:
        return y, res, k
    # a long jump may land on a stationary point that is not the nearest one
    try:
        seed = nearest_boundary_point(cset, x)
    except EstimationError:
        seed = None
    if seed is not None:
        y2, res2, k2 = _linearization(cset, x, seed, max_iter, tol)
        if y2 is not None and (y is None or np.linalg.norm(y2 - x) < np.linalg.norm(y - x)):
            return y2, res2, k + k2
    if y is not None:
        return y, res, k
    y = seed if seed is not None else x

    sol = optimize.minimize(
        lambda p: float((p - x) @ (p - x)),
        y if np.all(np.isfinite(y)) else x,
        jac=lambda p: 2.0 * (p - x),
        constraints=[{"type": "ineq", "fun": lambda p: cset.h(p), "jac": lambda p: cset.grad_h(p)}],
        method="SLSQP",
        options={"ftol": 1e-16, "maxiter": 500},
    )
    y = _nudge_inside(cset, np.asarray(sol.x, dtype=float))
    res = _stationarity(cset, x, y)
    if res <= 1e-8 and eval_h(cset, y) >= -cset.boundary_tol:
        return y, res, max_iter + sol.nit
    raise ProjectionError(f"projection of {x} onto the constraint set did not converge (residual {res:.3g})")


def _linearization(cset, x, y, max_iter, tol):
    """Project ``x`` onto the half-space linearized at ``y_k`` until ``y_k`` settles; None on failure."""
    for k in range(1, max_iter + 1):
        g = eval_grad(cset, y)
        gg = float(g @ g)
        if gg == 0.0:
            return None, math.inf, k
        t = -(eval_h(cset, y) + float(g @ (x - y))) / gg
        y_new = x + t * g
        if not np.all(np.isfinite(y_new)):
            return None, math.inf, k
        if np.linalg.norm(y_new - y) <= tol * (1.0 + np.linalg.norm(y)):
            y_new = _nudge_inside(cset, y_new)
            res = _stationarity(cset, x, y_new)
            if res <= 1e-8 and eval_h(cset, y_new) >= -cset.boundary_tol:
                return y_new, res, k
            return None, res, k
        y = y_new
    return None, math.inf, max_iter


def _nudge_inside(cset, y):
    for _ in range(5):
        hv = eval_h(cset, y)
        if hv >= 0.0:
            break
        g = eval_grad(cset, y)
        y = y - (1.0 + 1e-9) * hv * g / float(g @ g)
    return y


def project_point_to_set(cset: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection onto S; identity on S."""
    x = np.asarray(x, dtype=float).reshape(cset.dim)
    if not cset.in_box(x, inflate=0.1):
        raise DomainError(f"point {x} lies outside the inflated bounding box")
    if cset.project is not None:
        return np.asarray(cset.project(x), dtype=float)
    return project_iterative(cset, x)[0]


def metric_projector(cset: ConstraintSet, metric: MetricMatrix):
    """Return ``x -> argmin_{y in S} |y - x|_P``.

    With ``R = P^(1/2)`` the map ``u = R y`` turns the P-norm into the
    Euclidean one, so the Euclidean machinery runs on the warped set
    ``{u : h(R^-1 u) >= 0}`` and the result is mapped back.
    """
    if metric.is_identity:
        return lambda x: project_point_to_set(cset, x)
    lam, V = np.linalg.eigh(metric.P)
    R = (V * np.sqrt(lam)) @ V.T
    R_inv = (V / np.sqrt(lam)) @ V.T
    lo, hi = (np.asarray(b, dtype=float) for b in cset.bounding_box)
    mid, half = R @ (0.5 * (lo + hi)), np.abs(R) @ (0.5 * (hi - lo))
    warped = ConstraintSet(
        dim=cset.dim,
        h=lambda u: cset.h(R_inv @ u),
        grad_h=lambda u: R_inv @ cset.grad_h(R_inv @ u),
        gamma=cset.gamma,
        bounding_box=(mid - half, mid + half),
        boundary_tol=cset.boundary_tol,
        name=f"{cset.name}-warped",
    )

    def project(x):
        x = np.asarray(x, dtype=float).reshape(cset.dim)
        if cset.h(x) >= 0.0:
            return x.copy()
        if not cset.in_box(x, inflate=0.1):
            raise DomainError(f"point {x} lies outside the inflated bounding box")
        return _nudge_inside(cset, R_inv @ project_iterative(warped, R @ x)[0])

    return project
