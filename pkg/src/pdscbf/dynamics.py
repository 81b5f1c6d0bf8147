"""Right-hand sides of the interconnection ``zeta' = g(zeta, xi)``, ``xi' = ...``.

The ``xi`` part is either the nominal field ``f``, its tangent-cone
projection (projected dynamical system) or the CBF-filtered field. The
``zeta`` part is never modified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EvaluationError
from .geometry import Classification, ConstraintSet, classify, eval_grad, eval_h
from .projection import MetricMatrix, cbf_field_value, project_tangent


@dataclass(frozen=True)
class Interconnection:
    m: int
    n: int
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    set: ConstraintSet
    metric: MetricMatrix
    z_box: tuple
    name: str = "interconnection"

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("dimensions m and n must be positive")
        if self.set.dim != self.n or self.metric.dim != self.n:
            raise ValueError("set and metric must act on the n-dimensional xi state")
        lo, hi = self.z_box
        lo = np.asarray(lo, dtype=float).reshape(self.m)
        hi = np.asarray(hi, dtype=float).reshape(self.m)
        if np.any(hi < lo):
            raise ValueError("z_box must have hi >= lo")
        object.__setattr__(self, "z_box", (lo, hi))

    def in_zbox(self, z) -> bool:
        lo, hi = self.z_box
        return bool(np.all(z >= lo) and np.all(z <= hi))

    def eval_f(self, z, x) -> np.ndarray:
        v = np.asarray(self.f(z, x), dtype=float).reshape(self.n)
        if not np.all(np.isfinite(v)):
            raise EvaluationError("f returned a non-finite vector", x=x)
        return v

    def eval_g(self, z, x) -> np.ndarray:
        v = np.asarray(self.g(z, x), dtype=float).reshape(self.m)
        if not np.all(np.isfinite(v)):
            raise EvaluationError("g returned a non-finite vector", x=x)
        return v

    def lie_derivative(self, z, x) -> float:
        """``L_f h(z, x) = grad h(x) . f(z, x)``."""
        return float(eval_grad(self.set, x) @ self.eval_f(z, x))


@dataclass(frozen=True)
class FieldKind:
    """Which ``xi`` field to use: ``nominal``, ``pds``, or ``cbf`` with its parameter."""

    kind: str
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("nominal", "pds", "cbf"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "cbf":
            if self.alpha is None or not math.isfinite(self.alpha) or self.alpha <= 0:
                raise ValueError("cbf field needs a finite alpha > 0")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} field takes no alpha")

    @classmethod
    def nominal(cls):
        return cls("nominal")

    @classmethod
    def pds(cls):
        return cls("pds")

    @classmethod
    def cbf(cls, alpha: float):
        return cls("cbf", float(alpha))

    @property
    def label(self) -> str:
        return f"cbf(alpha={self.alpha:g})" if self.kind == "cbf" else self.kind


def eval_field(sys: Interconnection, kind: FieldKind, z, x):
    """Return ``(zeta_dot, xi_dot)`` at ``(z, x)``."""
    z = np.asarray(z, dtype=float).reshape(sys.m)
    x = np.asarray(x, dtype=float).reshape(sys.n)
    zdot = sys.eval_g(z, x)
    fv = sys.eval_f(z, x)
    if kind.kind == "nominal":
        return zdot, fv
    cset = sys.set
    hv = eval_h(cset, x)
    if hv < -cset.boundary_tol:
        raise DomainError(f"point {x} lies outside the constraint set")
    if kind.kind == "pds":
        return zdot, project_tangent(cset, sys.metric, x, fv)
    grad = eval_grad(cset, x)
    return zdot, cbf_field_value(cset, sys.metric, fv, float(grad @ fv), hv, grad, kind.alpha)


def di_residual(sys: Interconnection, z, x, xdot, d_cap: float) -> float:
    """Distance from ``xdot`` to ``f(z, x) - (P^-1 N_S(x) intersect d_cap*B)``.

    On the boundary the truncated normal cone is the segment
    ``{lam * P^-1 grad h : lam in [-d_cap/|P^-1 grad h|, 0]}``, so the
    distance is a one-dimensional least-squares problem clamped to that range.
    """
    if d_cap < 0:
        raise ValueError("d_cap must be nonnegative")
    z = np.asarray(z, dtype=float).reshape(sys.m)
    x = np.asarray(x, dtype=float).reshape(sys.n)
    e = np.asarray(xdot, dtype=float).reshape(sys.n) - sys.eval_f(z, x)
    cone = classify(sys.set, x)
    if cone.classification is Classification.OUTSIDE:
        raise DomainError(f"point {x} lies outside the constraint set")
    if cone.classification is Classification.INTERIOR:
        return float(np.linalg.norm(e))
    w = sys.metric.P_inv @ cone.normal_generator
    ww = float(w @ w)
    if ww == 0.0:
        return float(np.linalg.norm(e))
    lam = -float(e @ w) / ww
    lam_min = -d_cap / math.sqrt(ww) if math.isfinite(d_cap) else -math.inf
    lam = min(0.0, max(lam_min, lam))
    return float(np.linalg.norm(e + lam * w))
