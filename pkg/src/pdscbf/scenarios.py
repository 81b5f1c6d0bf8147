"""Scenario catalog: the feedback-optimization and synchronverter experiments
plus small synthetic systems used by the property tests.

Every scenario is described by a JSON-serializable :class:`ScenarioConfig`;
:func:`build_scenario` turns a config (or a catalog name) into an
:class:`~pdscbf.dynamics.Interconnection`.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .dynamics import Interconnection
from .errors import ConfigError
from .geometry import ConstraintSet, annulus_set, ball_set, interval_set
from .integrate import IntegrationConfig, Scheme
from .projection import MetricMatrix


@dataclass
class ScenarioConfig:
    name: str
    builder: str
    params: dict
    set_spec: dict
    z0: list
    x0: list
    z_box: list
    t_end: float
    dt: float
    alpha_grid: list
    P: list | None = None
    record_stride: int = 1
    invariance_tol: float = 1e-6
    t_prime_fraction: float = 0.95
    grid_res: int | list = 16
    eps_fraction: float = 0.5
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        if "builder" not in data:
            raise ConfigError("scenario config needs a 'builder' field")
        if data["builder"] not in BUILDERS:
            raise ConfigError(f"unknown scenario builder {data['builder']!r}")
        base = default_config(data["builder"])
        merged = base.to_dict()
        params = dict(merged["params"])
        params.update(data.pop("params", {}) or {})
        known = set(merged)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        merged.update(data)
        merged["params"] = params
        return cls(**merged)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("scenario config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def integration(self, scheme=Scheme.RK4, **overrides) -> IntegrationConfig:
        kw = dict(t_end=self.t_end, dt=self.dt, scheme=scheme, record_stride=self.record_stride,
                  invariance_tol=self.invariance_tol)
        kw.update(overrides)
        return IntegrationConfig(**kw)

    @property
    def t_prime(self) -> float:
        return self.t_prime_fraction * self.t_end


# ---------------------------------------------------------------------------
# constraint sets from JSON

CUSTOM_SETS: dict[str, Callable[..., ConstraintSet]] = {"annulus": annulus_set}


def register_set(name: str, factory: Callable[..., ConstraintSet]) -> None:
    """Make ``factory(**params)`` available as ``{"shape": "custom", "name": name}``."""
    CUSTOM_SETS[name] = factory


def set_from_spec(spec: dict) -> ConstraintSet:
    spec = dict(spec)
    shape = spec.pop("shape", None)
    tol = spec.pop("boundary_tol", None)
    kw = {} if tol is None else {"boundary_tol": float(tol)}
    try:
        if shape == "interval":
            return interval_set(float(spec["radius"]), float(spec.get("center", 0.0)), **kw)
        if shape == "ball":
            return ball_set(spec["center"], float(spec["radius"]), **kw)
        if shape == "custom":
            name = spec.pop("name")
            if name not in CUSTOM_SETS:
                raise ConfigError(f"unknown custom set {name!r}")
            return CUSTOM_SETS[name](**spec, **kw)
    except KeyError as exc:
        raise ConfigError(f"set spec is missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid set spec: {exc}") from exc
    raise ConfigError(f"unknown set shape {shape!r}")


def _metric(cfg: ScenarioConfig, n: int) -> MetricMatrix:
    if cfg.P is None:
        return MetricMatrix.identity(n)
    try:
        return MetricMatrix.from_matrix(cfg.P)
    except ValueError as exc:
        raise ConfigError(f"invalid metric P: {exc}") from exc


def _finish(cfg: ScenarioConfig, m: int, n: int, g, f, cset: ConstraintSet) -> tuple:
    metric = _metric(cfg, n)
    if metric.dim != n:
        raise ConfigError(f"metric P must be {n}x{n}")
    if len(cfg.z0) != m or len(cfg.x0) != n:
        raise ConfigError(f"initial conditions must have dimensions ({m}, {n})")
    try:
        sys = Interconnection(m, n, g, f, cset, metric, tuple(cfg.z_box), name=cfg.name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cset.h(np.asarray(cfg.x0, dtype=float)) < -cset.boundary_tol:
        raise ConfigError("x0 must lie in the constraint set")
    return sys, cfg


# ---------------------------------------------------------------------------
# feedback optimization


def _feedback_opt_defaults() -> ScenarioConfig:
    return ScenarioConfig(
        name="feedback-opt",
        builder="feedback-opt",
        params={
            "A": [[-1.0, 1.0], [0.0, -2.0]],
            "B": [[0.0], [1.0]],
            "phi_target": [1.0, 1.0],
            "controller_sign": 1.0,
        },
        set_spec={"shape": "interval", "center": 0.0, "radius": 0.6},
        z0=[0.0, 0.0],
        x0=[0.0],
        z_box=[[-2.0, -2.0], [2.0, 2.0]],
        t_end=10.0,
        dt=1e-3,
        alpha_grid=[1.0, 5.0, 20.0, 100.0],
        grid_res=[16, 16, 32],
        notes={
            "controller": "xi' = Pi_S(controller_sign * B^T A^-T grad Phi(zeta)); "
                          "+1 is gradient descent on Phi(-A^-1 B xi)",
            "minimizer": [0.3, 0.3, 0.6],
        },
    )


def build_feedback_opt(cfg: ScenarioConfig | None = None):
    """Plant ``zeta' = A zeta + B xi`` driven by a projected gradient-flow controller.

    The steady-state map is ``zeta = -A^-1 B xi``, so the gradient of
    ``Phi(-A^-1 B xi)`` with respect to ``xi`` is ``-B^T A^-T grad Phi``;
    descent therefore uses ``+B^T A^-T grad Phi(zeta)``, the orientation
    recorded as ``controller_sign = +1``.
    """
    cfg = copy.deepcopy(cfg) if cfg is not None else _feedback_opt_defaults()
    p = cfg.params
    A = np.asarray(p["A"], dtype=float)
    B = np.asarray(p["B"], dtype=float).reshape(A.shape[0], -1)
    target = np.asarray(p["phi_target"], dtype=float)
    sign = float(p.get("controller_sign", 1.0))
    m, n = B.shape
    gain = sign * 2.0 * (B.T @ np.linalg.inv(A).T)

    def g(z, x):
        return A @ z + B @ x

    def f(z, x):
        return gain @ (z - target)

    cset = set_from_spec(cfg.set_spec)
    return _finish(cfg, m, n, g, f, cset)


def feedback_opt_minimizer(cfg: ScenarioConfig | None = None) -> np.ndarray:
    """Constrained minimizer ``(zeta*, xi*)`` of ``Phi`` over the steady-state manifold (1-D input)."""
    sys, cfg = build_feedback_opt(cfg)
    A = np.asarray(cfg.params["A"], dtype=float)
    B = np.asarray(cfg.params["B"], dtype=float)
    target = np.asarray(cfg.params["phi_target"], dtype=float)
    lo, hi = sys.set.bounding_box
    ss = -np.linalg.solve(A, B).ravel()
    res = optimize.minimize_scalar(lambda u: float(np.sum((ss * u - target) ** 2)), bounds=(lo[0], hi[0]),
                                   method="bounded", options={"xatol": 1e-12})
    u = float(res.x)
    return np.concatenate([ss * u, [u]])


# ---------------------------------------------------------------------------
# synchronverter

_SYNC_PARAMS = {
    "V": 230.0 * math.sqrt(3.0),
    "L": 56.75e-3,
    "J": 0.2,
    "R": 1.875,
    "D_p": 3.0,
    "m": 3.5,
    "omega_g": 100.0 * math.pi,
    "omega_n": 100.0 * math.pi,
    "r": [-1385.0, 10738.0],
    "N_diag": [1.0 / 50.0, 1.0 / 5000.0],
    "u_s": [0.0, 0.8],
    "torque_coupling_sign": 1.0,
    "delta_jump": 0.6,
}


def synchronverter_fields(params: dict):
    """Return ``(g, f, output)`` for the synchronverter with PI-like controller.

    State ``zeta = (i_d, i_q, omega, delta)``, input ``u = N xi = (T_m, i_f)``.
    The electrical torque enters the swing equation as
    ``torque_coupling_sign * m * i_f * i_q``; ``+1`` makes the coupling with
    the back-EMF term ``-m * i_f * omega`` skew-symmetric, which is what makes
    the operating point locally asymptotically stable.
    """
    V, L, J, R = params["V"], params["L"], params["J"], params["R"]
    Dp, mu = params["D_p"], params["m"]
    wg, wn = params["omega_g"], params["omega_n"]
    s_te = float(params.get("torque_coupling_sign", 1.0))
    n1, n2 = params["N_diag"]
    r1, r2 = params["r"]
    sin, cos = math.sin, math.cos

    def plant(z, u):
        # plain floats keep the scalar arithmetic cheap inside the integrators
        i_d, i_q, w, d = z.tolist() if isinstance(z, np.ndarray) else z
        Tm, i_f = u
        return np.array([
            (-R * i_d + w * L * i_q + V * sin(d)) / L,
            (-w * L * i_d - R * i_q - mu * i_f * w + V * cos(d)) / L,
            (s_te * mu * i_f * i_q - Dp * w + Tm + Dp * wn) / J,
            w - wg,
        ])

    def output(z):
        i_d, i_q, _, d = z.tolist()
        c, s = cos(d), sin(d)
        return np.array([-V * (c * i_q + s * i_d), -V * (-s * i_q + c * i_d)])

    def g(z, x):
        x1, x2 = x.tolist()
        return plant(z, (n1 * x1, n2 * x2))

    def f(z, x):
        i_d, i_q, _, d = z.tolist()
        c, s = cos(d), sin(d)
        return np.array([r1 + V * (c * i_q + s * i_d), r2 + V * (-s * i_q + c * i_d)])

    return g, f, output, plant


def synchronverter_steady_state(params: dict, u=None) -> np.ndarray:
    """Plant equilibrium for a constant input (defaults to ``u_s``), on the low-angle branch."""
    _, _, _, plant = synchronverter_fields(params)
    u = tuple(params["u_s"] if u is None else u)
    V, R, wg = params["V"], params["R"], params["omega_g"]
    guess = np.array([V * math.sin(-0.1) / R, 0.0, wg, -0.1])
    sol, info, ier, msg = optimize.fsolve(lambda z: plant(z, u), guess, full_output=True, xtol=1e-13)
    if ier != 1 and np.max(np.abs(plant(sol, u))) > 1e-6:
        raise ConfigError(f"no synchronverter equilibrium found for u={u}: {msg}")
    return sol


def _synchronverter_defaults() -> ScenarioConfig:
    params = dict(_SYNC_PARAMS)
    zs = synchronverter_steady_state(params)
    z0 = zs.copy()
    z0[3] += params["delta_jump"]
    n1, n2 = params["N_diag"]
    x0 = [params["u_s"][0] / n1, params["u_s"][1] / n2]
    return ScenarioConfig(
        name="synchronverter",
        builder="synchronverter",
        params=params,
        set_spec={"shape": "ball", "center": [0.0, 4000.0], "radius": 500.0},
        z0=[float(v) for v in z0],
        x0=x0,
        z_box=[[-150.0, -150.0, 290.0, -1.0], [100.0, 150.0, 340.0, 1.0]],
        t_end=2.0,
        dt=1e-5,
        alpha_grid=[10.0, 100.0, 300.0],
        record_stride=100,
        grid_res=[2, 2, 2, 2, 16, 16],
        notes={
            "initial_condition": "plant at the u_s equilibrium with the power angle advanced by "
                                 "delta_jump; controller at N^-1(u_s), the centre of S",
        },
    )


def build_synchronverter(cfg: ScenarioConfig | None = None):
    """Synchronverter with the anti-windup controller ``xi' = Pi_S(xi, r - y)``, ``u = N xi``."""
    cfg = copy.deepcopy(cfg) if cfg is not None else _synchronverter_defaults()
    g, f, _, _ = synchronverter_fields(cfg.params)
    cset = set_from_spec(cfg.set_spec)
    return _finish(cfg, 4, 2, g, f, cset)


def synchronverter_output(cfg: ScenarioConfig, z) -> np.ndarray:
    return synchronverter_fields(cfg.params)[2](np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# synthetic catalog

def _zero_g(z, x):
    return np.zeros(1)


def _synthetic_defaults(name: str) -> ScenarioConfig:
    common = dict(builder=name, name=name, z0=[0.0], z_box=[[-1.0], [1.0]], alpha_grid=[1.0, 10.0, 100.0, 1000.0])
    if name == "saturating-1d":
        return ScenarioConfig(params={"drift": 1.0}, set_spec={"shape": "interval", "radius": 0.6},
                              x0=[0.0], t_end=2.0, dt=1e-3, grid_res=[8, 64], **common)
    if name == "disk-rotation":
        return ScenarioConfig(params={"omega": 1.0, "expansion": 0.5},
                              set_spec={"shape": "ball", "center": [0.0, 0.0], "radius": 1.0},
                              x0=[0.5, 0.0], t_end=6.0, dt=1e-3, grid_res=[4, 32, 32], **common)
    if name == "gradient-flow-nonconvex":
        return ScenarioConfig(params={"target": [0.1, 0.0]},
                              set_spec={"shape": "custom", "name": "annulus", "inner": 0.5, "outer": 1.5},
                              x0=[-1.0, 0.3], t_end=4.0, dt=1e-3, grid_res=[4, 128, 128], **common)
    if name == "coupled-oscillator":
        return ScenarioConfig(params={"stiffness": 4.0, "damping": 0.2, "gain": 2.0},
                              set_spec={"shape": "interval", "radius": 0.5},
                              x0=[0.0], t_end=6.0, dt=1e-3, **dict(common, z0=[1.0, 0.0],
                                                                    z_box=[[-3.0, -6.0], [3.0, 6.0]]),
                              grid_res=[8, 8, 32])
    if name == "ellipse-metric":
        return ScenarioConfig(params={"velocity": [1.0, 0.6]},
                              set_spec={"shape": "ball", "center": [0.0, 0.0], "radius": 1.0},
                              P=[[1.0, 0.0], [0.0, 4.0]], x0=[0.0, 0.0], t_end=3.0, dt=1e-3,
                              grid_res=[4, 32, 32], **common)
    if name == "ball-3d-drift":
        return ScenarioConfig(params={"velocity": [0.8, -0.4, 0.3], "pull": 0.5},
                              set_spec={"shape": "ball", "center": [0.0, 0.0, 0.0], "radius": 1.0},
                              x0=[0.2, 0.1, -0.1], t_end=4.0, dt=1e-3, grid_res=[2, 12, 12, 12], **common)
    if name == "inward-field":
        return ScenarioConfig(params={"rate": 1.0},
                              set_spec={"shape": "ball", "center": [0.0, 0.0], "radius": 1.0},
                              x0=[0.9, 0.0], t_end=3.0, dt=1e-3, grid_res=[4, 32, 32], **common)
    if name == "annulus-orbit":
        return ScenarioConfig(params={"omega": 1.5, "expansion": 0.4},
                              set_spec={"shape": "custom", "name": "annulus", "inner": 0.5, "outer": 1.5},
                              x0=[1.0, 0.0], t_end=4.0, dt=1e-3, grid_res=[4, 32, 32], **common)
    raise ConfigError(f"unknown synthetic scenario {name!r}")


def build_synthetic(name: str, cfg: ScenarioConfig | None = None):
    """Small systems with known qualitative behaviour.

    ``saturating-1d``: constant drift into ``[-0.6, 0.6]``; the projected
    solution is ``min(x0 + t, 0.6)``. ``disk-rotation``: rotation plus outward
    drift in the unit disk, so the projected flow slides along the circle.
    ``gradient-flow-nonconvex``: gradient flow of ``|x - target|^2`` on an
    annulus whose hole contains the target. The remaining entries extend the
    catalog for the invariance and oracle property tests.
    """
    cfg = copy.deepcopy(cfg) if cfg is not None else _synthetic_defaults(name)
    if cfg.builder != name:
        raise ConfigError(f"config builder {cfg.builder!r} does not match {name!r}")
    p = cfg.params
    cset = set_from_spec(cfg.set_spec)
    m = len(cfg.z0)

    if name == "saturating-1d":
        drift = np.array([float(p["drift"])])
        return _finish(cfg, 1, 1, _zero_g, lambda z, x: drift, cset)
    if name == "disk-rotation":
        w, a = float(p["omega"]), float(p["expansion"])
        M = np.array([[a, -w], [w, a]])
        return _finish(cfg, 1, 2, _zero_g, lambda z, x: M @ x, cset)
    if name == "gradient-flow-nonconvex":
        tgt = np.asarray(p["target"], dtype=float)
        return _finish(cfg, 1, 2, _zero_g, lambda z, x: -2.0 * (x - tgt), cset)
    if name == "coupled-oscillator":
        k, c, gain = float(p["stiffness"]), float(p["damping"]), float(p["gain"])

        def g(z, x):
            return np.array([z[1], -k * z[0] - c * z[1] + x[0]])

        def f(z, x):
            return np.array([-gain * z[0]])

        return _finish(cfg, m, 1, g, f, cset)
    if name == "ellipse-metric":
        v = np.asarray(p["velocity"], dtype=float)
        return _finish(cfg, 1, 2, _zero_g, lambda z, x: v, cset)
    if name == "ball-3d-drift":
        v = np.asarray(p["velocity"], dtype=float)
        pull = float(p["pull"])
        return _finish(cfg, 1, 3, _zero_g, lambda z, x: v + pull * x, cset)
    if name == "inward-field":
        rate = float(p["rate"])
        return _finish(cfg, 1, 2, _zero_g, lambda z, x: -rate * x, cset)
    if name == "annulus-orbit":
        w, a = float(p["omega"]), float(p["expansion"])
        M = np.array([[a, -w], [w, a]])
        return _finish(cfg, 1, 2, _zero_g, lambda z, x: M @ x, cset)
    raise ConfigError(f"unknown synthetic scenario {name!r}")


SYNTHETIC = (
    "saturating-1d",
    "disk-rotation",
    "gradient-flow-nonconvex",
    "coupled-oscillator",
    "ellipse-metric",
    "ball-3d-drift",
    "inward-field",
    "annulus-orbit",
)

BUILDERS = {
    "feedback-opt": (lambda cfg=None: build_feedback_opt(cfg), _feedback_opt_defaults),
    "synchronverter": (lambda cfg=None: build_synchronverter(cfg), _synchronverter_defaults),
}
for _name in SYNTHETIC:
    BUILDERS[_name] = (
        (lambda nm: (lambda cfg=None: build_synthetic(nm, cfg)))(_name),
        (lambda nm: (lambda: _synthetic_defaults(nm)))(_name),
    )

SCENARIO_NAMES = tuple(BUILDERS)


def default_config(name: str) -> ScenarioConfig:
    if name not in BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(BUILDERS)}")
    return BUILDERS[name][1]()


def build_scenario(name_or_cfg):
    """Build ``(Interconnection, ScenarioConfig)`` from a catalog name or a config."""
    if isinstance(name_or_cfg, ScenarioConfig):
        cfg = name_or_cfg
        if cfg.builder not in BUILDERS:
            raise ConfigError(f"unknown scenario builder {cfg.builder!r}")
        return BUILDERS[cfg.builder][0](cfg)
    if name_or_cfg not in BUILDERS:
        raise ConfigError(f"unknown scenario {name_or_cfg!r}; choose from {', '.join(BUILDERS)}")
    return BUILDERS[name_or_cfg][0]()
