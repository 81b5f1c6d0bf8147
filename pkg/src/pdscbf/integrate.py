"""Fixed-step integrators producing :class:`Trajectory` records.

* ``rk4`` -- classical Runge-Kutta for the nominal and CBF fields, which are
  locally Lipschitz.
* ``projected-euler`` -- ``x+ = proj_S(x + dt f)`` with the projection taken in
  the P-norm, the reference scheme for projected dynamical systems.
* ``tangent-event`` -- explicit Euler on the tangent-cone projected field;
  steps that would leave S are bisected down to the boundary crossing and
  the residual violation is projected away.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import FieldKind, Interconnection, eval_field
from .errors import ConfigError, DomainError, EvaluationError
from .projection import metric_projector, project_iterative


class Scheme(str, enum.Enum):
    RK4 = "rk4"
    PROJECTED_EULER = "projected-euler"
    TANGENT_EVENT = "tangent-event"


@dataclass(frozen=True)
class IntegrationConfig:
    t_end: float
    dt: float
    scheme: Scheme = Scheme.RK4
    record_stride: int = 1
    invariance_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.t_end > 0 and self.dt > 0):
            raise ConfigError("t_end and dt must be positive")
        if self.dt >= self.t_end:
            raise ConfigError("dt must be smaller than t_end")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError("record_stride must be a positive integer")
        if self.invariance_tol < 0:
            raise ConfigError("invariance_tol must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    zs: np.ndarray
    xs: np.ndarray
    hs: np.ndarray
    kind: FieldKind
    config: IntegrationConfig
    min_h: float
    in_zbox: bool

    def __post_init__(self):
        if not (len(self.times) == len(self.zs) == len(self.xs) == len(self.hs)):
            raise ValueError("times, zs, xs and hs must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for a in (self.times, self.zs, self.xs, self.hs):
            a.setflags(write=False)

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.zs, self.xs])

    def to_csv(self, path=None) -> str:
        """Write ``t,z1..zm,x1..xn,h`` rows with 17 significant digits."""
        m, n = self.zs.shape[1], self.xs.shape[1]
        header = ["t"] + [f"z{i + 1}" for i in range(m)] + [f"x{i + 1}" for i in range(n)] + ["h"]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        rows = np.column_stack([self.times, self.zs, self.xs, self.hs])
        for row in rows:
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _check_scheme(kind: FieldKind, scheme: Scheme):
    if scheme is Scheme.RK4 and kind.kind == "pds":
        raise ConfigError("rk4 integrates smooth fields only; use projected-euler or tangent-event for pds")
    if scheme is not Scheme.RK4 and kind.kind != "pds":
        raise ConfigError(f"{scheme.value} is a pds scheme; got field kind {kind.label}")


def _cbf_rhs(sys: Interconnection, alpha: float):
    f, g, h, grad = sys.f, sys.g, sys.set.h, sys.set.grad_h
    P_inv = sys.metric.P_inv
    identity = sys.metric.is_identity

    def rhs(z, x):
        fv = f(z, x)
        gr = grad(x)
        c = float(gr @ fv) + alpha * h(x)
        if c < 0.0:
            if identity:
                fv = fv - (c / float(gr @ gr)) * gr
            else:
                pg = P_inv @ gr
                fv = fv - (c / float(gr @ pg)) * pg
        return g(z, x), fv

    return rhs


def _nominal_rhs(sys: Interconnection):
    f, g = sys.f, sys.g

    def rhs(z, x):
        return g(z, x), f(z, x)

    return rhs


def _projector(sys: Interconnection):
    # the projection must use the same metric as the tangent-cone field
    if not sys.metric.is_identity:
        return metric_projector(sys.set, sys.metric)
    if sys.set.project is not None:
        return sys.set.project
    cset = sys.set
    return lambda y: project_iterative(cset, y)[0]


class _Recorder:
    def __init__(self, sys, n_steps, stride, dt):
        self.count = n_steps // stride + 1
        self.stride = stride
        self.dt = dt
        self.zs = np.empty((self.count, sys.m))
        self.xs = np.empty((self.count, sys.n))
        self.hs = np.empty(self.count)
        self.h = sys.set.h
        self.i = 0

    def record(self, z, x):
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise EvaluationError("integration produced a non-finite state", x=x)
        self.zs[self.i] = z
        self.xs[self.i] = x
        self.hs[self.i] = self.h(x)
        self.i += 1

    def times(self):
        return np.arange(self.count) * (self.stride * self.dt)


def integrate(sys: Interconnection, kind: FieldKind, z0, x0, cfg: IntegrationConfig) -> Trajectory:
    """Integrate the interconnection from ``(z0, x0)`` over ``[0, cfg.t_end]``.

    ``min_h`` is taken over every integration step, not only the recorded ones.
    """
    _check_scheme(kind, cfg.scheme)
    z = np.array(z0, dtype=float).reshape(sys.m)
    x = np.array(x0, dtype=float).reshape(sys.n)
    cset = sys.set
    if cset.h(x) < -cset.boundary_tol:
        raise DomainError(f"initial controller state {x} lies outside the constraint set")
    if not sys.in_zbox(z):
        raise DomainError(f"initial state {z} lies outside the z box")
    if kind.kind != "nominal":
        eval_field(sys, kind, z, x)

    n_steps = cfg.n_steps
    stride = int(cfg.record_stride)
    dt = cfg.dt
    rec = _Recorder(sys, n_steps, stride, dt)
    rec.record(z, x)
    h = cset.h
    min_h = h(x)

    if cfg.scheme is Scheme.RK4:
        rhs = _cbf_rhs(sys, kind.alpha) if kind.kind == "cbf" else _nominal_rhs(sys)
        half, sixth = 0.5 * dt, dt / 6.0
        for k in range(1, n_steps + 1):
            k1z, k1x = rhs(z, x)
            k2z, k2x = rhs(z + half * k1z, x + half * k1x)
            k3z, k3x = rhs(z + half * k2z, x + half * k2x)
            k4z, k4x = rhs(z + dt * k3z, x + dt * k3x)
            z = z + sixth * (k1z + 2.0 * (k2z + k3z) + k4z)
            x = x + sixth * (k1x + 2.0 * (k2x + k3x) + k4x)
            hv = h(x)
            if hv < min_h:
                min_h = hv
            if k % stride == 0:
                rec.record(z, x)
    elif cfg.scheme is Scheme.PROJECTED_EULER:
        f, g = sys.f, sys.g
        proj = _projector(sys)
        for k in range(1, n_steps + 1):
            gz = g(z, x)
            x = proj(x + dt * f(z, x))
            z = z + dt * gz
            hv = h(x)
            if hv < min_h:
                min_h = hv
            if k % stride == 0:
                rec.record(z, x)
    else:
        step = _tangent_event_stepper(sys, cfg)
        for k in range(1, n_steps + 1):
            z, x = step(z, x)
            hv = h(x)
            if hv < min_h:
                min_h = hv
            if k % stride == 0:
                rec.record(z, x)

    zs, xs = rec.zs, rec.xs
    lo, hi = sys.z_box
    in_box = bool(np.all(zs >= lo) and np.all(zs <= hi))
    return Trajectory(rec.times(), zs, xs, rec.hs, kind, cfg, float(min_h), in_box)


def _tangent_event_stepper(sys: Interconnection, cfg: IntegrationConfig, max_substeps: int = 64):
    f, g, h, grad = sys.f, sys.g, sys.set.h, sys.set.grad_h
    btol = sys.set.boundary_tol
    itol = cfg.invariance_tol
    metric = sys.metric
    proj = _projector(sys)
    dt = cfg.dt

    def pds_field(z, x):
        fv = f(z, x)
        if h(x) <= btol:
            gr = grad(x)
            a = float(gr @ fv)
            if a < 0.0:
                fv = fv - a * metric.normalized_normal(gr)
        return fv

    def step(z, x):
        remaining = dt
        for _ in range(max_substeps):
            gz = g(z, x)
            fv = pds_field(z, x)
            s = remaining
            xn = x + s * fv
            hn = h(xn)
            if hn < -itol:
                lo, hi = 0.0, s
                for _ in range(80):
                    s = 0.5 * (lo + hi)
                    xn = x + s * fv
                    hn = h(xn)
                    if hn < -itol:
                        hi = s
                    elif hn > 0.0:
                        lo = s
                    else:
                        break
                if hn < -itol:
                    s = lo
                    xn = x + s * fv
                    hn = h(xn)
            if hn < 0.0:
                xn = proj(xn)
            z = z + s * gz
            x = xn
            remaining -= s
            if remaining <= 1e-12 * dt:
                return z, x
        raise EvaluationError("tangent-event step did not complete within the substep budget", x=x)

    return step


def refine_check(sys: Interconnection, kind: FieldKind, z0, x0, cfg: IntegrationConfig) -> float:
    """Sup-norm gap between runs at ``dt`` and ``dt/2`` on the shared record grid."""
    coarse = integrate(sys, kind, z0, x0, cfg)
    fine_cfg = replace(cfg, dt=cfg.dt / 2.0, record_stride=2 * cfg.record_stride)
    fine = integrate(sys, kind, z0, x0, fine_cfg)
    k = min(len(coarse.times), len(fine.times))
    diff = coarse.states[:k] - fine.states[:k]
    return float(np.max(np.linalg.norm(diff, axis=1))) if k else 0.0
