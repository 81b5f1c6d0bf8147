"""Grid estimates of the constants behind the CBF-as-perturbation bound.

Every max/min over ``Z x S`` is taken over a deterministic nested lattice
(``grid_res`` intervals per dimension, endpoints included), so doubling the
resolution only adds points. Lipschitz constants are sampled lower
estimates: axis-aligned difference quotients at dyadic strides combined with
the spectral norm of a central finite-difference Jacobian at every lattice
point.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import Interconnection
from .errors import ConfigError, DomainError, PreconditionError
from .geometry import ConstraintSet, sample_boundary

LIPSCHITZ_NOTE = ("L_f and L_grad_h are sampled lower estimates of the true Lipschitz constants "
                  "(difference quotients and finite-difference Jacobians on the lattice)")


@dataclass
class BoundsReport:
    eps: float
    alpha_star: float
    M1: float
    M2: float
    M3: float
    L_f: float
    L_grad_h: float
    L1: float
    delta: float
    sigma_table: dict
    max_abs_lfh: float
    max_f_norm: float
    condition_ratio: float
    eps_fraction: float
    grid_resolution: list
    lattice_points: int
    boundary_samples: int
    note: str = LIPSCHITZ_NOTE

    def sigma(self, alpha: float) -> float:
        return self.sigma_table[float(alpha)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_table"] = {format(a, ".17g"): v for a, v in sorted(self.sigma_table.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsReport":
        d = dict(d)
        d["sigma_table"] = {float(k): float(v) for k, v in d["sigma_table"].items()}
        return cls(**d)


@dataclass
class Lattice:
    """Joint ``(z, x)`` lattice restricted to ``x in S``."""

    z_axes: list
    x_axes: list
    zs: np.ndarray = field(repr=False)
    xs: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    lfh: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    grad: np.ndarray = field(repr=False)
    x_in_set: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return tuple(len(a) for a in self.z_axes) + tuple(len(a) for a in self.x_axes)

    def samples(self):
        """``(z, x)`` pairs of the lattice with ``x in S``, in lattice order."""
        m = len(self.z_axes)
        zi = np.stack(np.meshgrid(*self.z_axes, indexing="ij"), axis=-1).reshape(-1, m)
        mask = self.x_in_set.ravel()
        xi = self.xs.reshape(-1, self.xs.shape[-1])[mask]
        return [(z, x) for z in zi for x in xi]


def _resolution(sys: Interconnection, grid_res) -> list:
    k = sys.m + sys.n
    if np.isscalar(grid_res):
        res = [int(grid_res)] * k
    else:
        res = [int(r) for r in grid_res]
    if len(res) != k:
        raise ConfigError(f"grid_res must have {k} entries (m + n)")
    if any(r < 1 for r in res):
        raise ConfigError("grid_res entries must be positive")
    return res


def build_lattice(sys: Interconnection, grid_res=16) -> Lattice:
    res = _resolution(sys, grid_res)
    m, n = sys.m, sys.n
    zlo, zhi = sys.z_box
    xlo, xhi = (np.asarray(b, dtype=float) for b in sys.set.bounding_box)
    z_axes = [np.linspace(zlo[i], zhi[i], res[i] + 1) for i in range(m)]
    x_axes = [np.linspace(xlo[i], xhi[i], res[m + i] + 1) for i in range(n)]
    cset = sys.set

    xs = np.stack(np.meshgrid(*x_axes, indexing="ij"), axis=-1)
    flat_x = xs.reshape(-1, n)
    h = np.array([cset.h(x) for x in flat_x])
    grad = np.array([cset.grad_h(x) for x in flat_x]).reshape(-1, n)
    in_set = h >= 0.0
    if not np.any(in_set):
        raise ConfigError("the x lattice has no point inside the constraint set; increase grid_res")

    zs = np.stack(np.meshgrid(*z_axes, indexing="ij"), axis=-1).reshape(-1, m)
    fv = np.full((len(zs), len(flat_x), n), np.nan)
    for i, z in enumerate(zs):
        for j in np.flatnonzero(in_set):
            fv[i, j] = sys.eval_f(z, flat_x[j])
    lfh = np.einsum("ijk,jk->ij", fv, grad)

    zshape = tuple(res[i] + 1 for i in range(m))
    xshape = tuple(res[m + i] + 1 for i in range(n))
    return Lattice(
        z_axes=z_axes,
        x_axes=x_axes,
        zs=zs.reshape(zshape + (m,)),
        xs=xs,
        f=fv.reshape(zshape + xshape + (n,)),
        lfh=lfh.reshape(zshape + xshape),
        h=h.reshape(xshape),
        grad=grad.reshape(xshape + (n,)),
        x_in_set=in_set.reshape(xshape),
    )


def _axis_quotients(values, mask, axes) -> float:
    """Largest ``|V(p) - V(q)| / |p - q|`` over axis-aligned lattice pairs at strides 1, 2, 4, ..."""
    best = 0.0
    for ax, coords in enumerate(axes):
        size = len(coords)
        if size < 2:
            continue
        step = coords[1] - coords[0]
        if step <= 0:
            continue
        s = 1
        while s < size:
            a = [slice(None)] * mask.ndim
            b = [slice(None)] * mask.ndim
            a[ax] = slice(s, None)
            b[ax] = slice(None, -s)
            valid = mask[tuple(a)] & mask[tuple(b)]
            if np.any(valid):
                diff = values[tuple(a)] - values[tuple(b)]
                norms = np.linalg.norm(diff, axis=-1)[valid]
                best = max(best, float(norms.max()) / (s * step))
            s *= 2
    return best


def _fd_jacobian_norm(fun, points, scales) -> float:
    """Max spectral norm of the central-difference Jacobian of ``fun`` over ``points``."""
    best = 0.0
    k = points.shape[1]
    for p in points:
        cols = []
        for i in range(k):
            hstep = 1e-6 * max(1.0, abs(p[i]), scales[i])
            e = np.zeros(k)
            e[i] = hstep
            cols.append((np.asarray(fun(p + e)) - np.asarray(fun(p - e))) / (2.0 * hstep))
        J = np.column_stack(cols)
        best = max(best, float(np.linalg.norm(J, 2)))
    return best


def lipschitz_f(sys: Interconnection, lat: Lattice) -> float:
    m = sys.m
    full_mask = np.broadcast_to(lat.x_in_set, lat.lfh.shape)
    best = _axis_quotients(lat.f, full_mask, lat.z_axes + lat.x_axes)
    zi = np.stack(np.meshgrid(*lat.z_axes, indexing="ij"), axis=-1).reshape(-1, m)
    xi = lat.xs.reshape(-1, sys.n)[lat.x_in_set.ravel()]
    pts = np.array([np.concatenate([z, x]) for z in zi for x in xi])
    span = np.concatenate([sys.z_box[1] - sys.z_box[0],
                           np.asarray(sys.set.bounding_box[1]) - np.asarray(sys.set.bounding_box[0])])
    jac = _fd_jacobian_norm(lambda p: sys.f(p[:m], p[m:]), pts, 1e-3 * span)
    return max(best, jac)


def lipschitz_grad_h(cset: ConstraintSet, lat: Lattice) -> float:
    best = _axis_quotients(lat.grad, lat.x_in_set, lat.x_axes)
    xi = lat.xs.reshape(-1, cset.dim)[lat.x_in_set.ravel()]
    span = np.asarray(cset.bounding_box[1]) - np.asarray(cset.bounding_box[0])
    return max(best, _fd_jacobian_norm(cset.grad_h, xi, 1e-3 * span))


def gamma_inverse(gamma, value: float, tol: float = 1e-12) -> float:
    """Solve ``gamma(s) = value`` for ``s >= 0`` by bracket growth and bisection."""
    if value < 0 or not math.isfinite(value):
        raise DomainError(f"gamma^-1 needs a finite nonnegative argument, got {value}")
    if value == 0.0:
        return 0.0
    hi = 1.0
    for _ in range(2000):
        if gamma(hi) >= value:
            break
        hi *= 2.0
    else:
        raise DomainError(f"gamma never reaches {value}; choose a different eps_fraction")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gamma(mid) < value:
            lo = mid
        else:
            hi = mid
    return hi


def _sigma_value(gamma, L_f, L1, max_abs_lfh, alpha) -> float:
    # both terms are nondecreasing in |L_f h|, so the lattice maximum sits at max |L_f h|
    g = gamma(max_abs_lfh / alpha)
    return float(max(g, (L_f + L1 * max_abs_lfh) * g))


def sigma_of_alpha(cset: ConstraintSet, report: BoundsReport, alpha: float) -> float:
    """Perturbation radius for ``alpha >= report.alpha_star``."""
    if not alpha > 0:
        raise PreconditionError("alpha must be positive")
    if alpha < report.alpha_star:
        raise PreconditionError(f"alpha={alpha:g} is below alpha_star={report.alpha_star:g}")
    return _sigma_value(cset.gamma, report.L_f, report.L1, report.max_abs_lfh, alpha)


def estimate_constants(sys: Interconnection, eps_fraction: float = 0.5, alpha_grid=(1.0, 10.0, 100.0, 1000.0),
                       grid_res=16, boundary_samples: int = 1024, lattice: Lattice | None = None) -> BoundsReport:
    """Estimate every constant of the perturbation bound on a lattice over ``Z x S``.

    ``sigma_table`` covers every requested alpha, including any below
    ``alpha_star``; only :func:`sigma_of_alpha` enforces the precondition.
    """
    if not 0.0 < eps_fraction < 1.0:
        raise ConfigError("eps_fraction must lie in (0, 1)")
    alphas = [float(a) for a in alpha_grid]
    if not alphas or any(a <= 0 for a in alphas) or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigError("alpha_grid must be a nonempty increasing list of positive values")
    cset = sys.set
    gamma = cset.gamma

    bpts = sample_boundary(cset, boundary_samples)
    if len(bpts) == 0:
        raise ConfigError("boundary sampler returned no points")
    gnorms = np.array([np.linalg.norm(cset.grad_h(y)) for y in bpts])
    M1, M2 = float(gnorms.min()), float(gnorms.max())
    if M1 <= 0:
        raise DomainError("grad h vanishes on the sampled boundary")
    eps = eps_fraction * M1

    lat = lattice if lattice is not None else build_lattice(sys, grid_res)
    valid = np.broadcast_to(lat.x_in_set, lat.lfh.shape)
    abs_lfh = np.abs(lat.lfh[valid])
    fnorm = np.linalg.norm(lat.f, axis=-1)[valid]
    phi = float(abs_lfh.max())
    L_f = lipschitz_f(sys, lat)
    L_gh = lipschitz_grad_h(cset, lat)

    if phi == 0.0 or L_gh == 0.0:
        alpha_star = 0.0
        shift = 0.0
    else:
        alpha_star = phi / gamma_inverse(gamma, (M1 - eps) / L_gh)
        shift = L_gh * gamma(phi / alpha_star)
    M3 = M2 + shift

    lam_ratio = sys.metric.condition_ratio
    L1 = lam_ratio / eps ** 2 * L_gh * (1.0 + M2 * lam_ratio * (M2 + M3) / M1 ** 2)

    if alpha_star > 0:
        gam = np.array([gamma(v / alpha_star) for v in abs_lfh])
    else:
        gam = np.zeros_like(abs_lfh)
    delta = float(np.max((1.0 + L_gh * gam / M1) * lam_ratio * fnorm))

    table = {a: _sigma_value(gamma, L_f, L1, phi, a) for a in alphas}
    return BoundsReport(
        eps=eps, alpha_star=float(alpha_star), M1=M1, M2=M2, M3=float(M3), L_f=float(L_f),
        L_grad_h=float(L_gh), L1=float(L1), delta=delta, sigma_table=table, max_abs_lfh=phi,
        max_f_norm=float(fnorm.max()), condition_ratio=float(lam_ratio), eps_fraction=float(eps_fraction),
        grid_resolution=_resolution(sys, grid_res) if lattice is None else [len(a) - 1 for a in lat.z_axes + lat.x_axes],
        lattice_points=int(valid.sum()), boundary_samples=int(len(bpts)),
    )


def estimate_for_config(sys: Interconnection, cfg, alpha_grid=None, grid_res=None) -> BoundsReport:
    """Convenience wrapper reading ``eps_fraction``, ``grid_res`` and ``alpha_grid`` from a scenario config."""
    return estimate_constants(
        sys,
        eps_fraction=cfg.eps_fraction,
        alpha_grid=cfg.alpha_grid if alpha_grid is None else alpha_grid,
        grid_res=cfg.grid_res if grid_res is None else grid_res,
    )
