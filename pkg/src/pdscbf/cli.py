"""Command-line interface: ``pdscbf {simulate,sweep,bounds,verify,experiment}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 a
verification check failed.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import certificate_samples, lemma_checks, perturbation_certificate, run_sweep
from .bounds import build_lattice, estimate_constants
from .dynamics import FieldKind
from .errors import ConfigError, PdsCbfError
from .geometry import sample_boundary, sample_in_set, validate_set
from .integrate import Scheme, integrate
from .projection import cbf_field_value, project_tangent, qp_oracle, tangent_kkt_residuals
from .scenarios import SCENARIO_NAMES, ScenarioConfig, build_scenario, default_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        print(f"{self.prog}: error: {message}", file=_sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _parse_floats(text: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc
    return vals


def _parse_grid(text):
    if text is None:
        return None
    vals = [int(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ConfigError("--grid-res is empty")
    return vals[0] if len(vals) == 1 else vals


def _load_config(args) -> ScenarioConfig:
    if args.config and args.scenario:
        raise ConfigError("give either --scenario or --config, not both")
    if args.config:
        return ScenarioConfig.load(args.config)
    if args.scenario:
        return default_config(args.scenario)
    raise ConfigError("one of --scenario or --config is required")


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _manifest(path: Path, command: str, cfg: ScenarioConfig, started: float, outputs, extra=None) -> Path:
    data = {
        "subcommand": command,
        "config": cfg.to_dict(),
        "version": __version__,
        "duration_s": time.perf_counter() - started,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        data.update(extra)
    return _write_json(path, data)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    if args.kind == "cbf":
        if args.alpha is None:
            raise ConfigError("--alpha is required for --kind cbf")
        kind = FieldKind.cbf(args.alpha)
    else:
        if args.alpha is not None:
            raise ConfigError(f"--alpha is only valid with --kind cbf, not {args.kind}")
        kind = FieldKind(args.kind)
    scheme = Scheme(args.scheme) if args.scheme else (Scheme.PROJECTED_EULER if kind.kind == "pds" else Scheme.RK4)
    sys, cfg = build_scenario(cfg)
    traj = integrate(sys, kind, cfg.z0, cfg.x0, cfg.integration(scheme))
    out = Path(args.out or f"{cfg.name}-{kind.kind}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    man = out.with_suffix(".manifest.json")
    _manifest(man, "simulate", cfg, started, [out, man], {
        "kind": kind.label, "scheme": scheme.value, "min_h": traj.min_h, "in_zbox": traj.in_zbox,
        "terminal_state": traj.states[-1].tolist(),
    })
    print(f"wrote {out} ({len(traj.times)} records, min_h={traj.min_h:.3g})")
    return EXIT_OK


def _sweep_outputs(sys, cfg, alphas, out_dir: Path, report=None):
    from .plotting import distance_vs_alpha, trajectory_overlay

    sweep = run_sweep(sys, cfg.z0, cfg.x0, cfg.integration(), alphas, t_prime=cfg.t_prime, report=report)
    paths = [
        _write_json(out_dir / "sweep.json", sweep.to_dict()),
        out_dir / "sweep.csv",
        out_dir / "distance_vs_alpha.svg",
        out_dir / "trajectories.png",
    ]
    sweep.to_csv(paths[1])
    distance_vs_alpha(sweep, paths[2], title=cfg.name)
    trajectory_overlay(sweep, paths[3], title=cfg.name)
    return sweep, paths


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    alphas = cfg.alpha_grid if args.alphas is None else _parse_floats(args.alphas)
    if not alphas:
        raise ConfigError("the alpha list is empty")
    sys, cfg = build_scenario(cfg)
    out_dir = Path(args.out_dir or f"{cfg.name}-sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep, paths = _sweep_outputs(sys, cfg, alphas, out_dir)
    man = out_dir / "manifest.json"
    _manifest(man, "sweep", cfg, started, paths + [man])
    for a, d in zip(sweep.alphas, sweep.sup_distances):
        print(f"alpha={a:g}\tsup_distance={d:.6g}")
    return EXIT_OK


def _bounds(sys, cfg, args):
    grid = _parse_grid(getattr(args, "grid_res", None))
    alphas = cfg.alpha_grid if getattr(args, "alphas", None) is None else _parse_floats(args.alphas)
    return estimate_constants(sys, cfg.eps_fraction, alphas, cfg.grid_res if grid is None else grid)


def cmd_bounds(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    sys, cfg = build_scenario(cfg)
    report = _bounds(sys, cfg, args)
    out = Path(args.out or f"{cfg.name}-bounds.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report.to_dict())
    man = out.with_suffix(".manifest.json")
    _manifest(man, "bounds", cfg, started, [out, man])
    print(report.to_json())
    return EXIT_OK


def oracle_checks(sys, count: int = 1000, seed: int = 0) -> dict:
    """Closed forms against the KKT oracle plus KKT certificates, on deterministic random instances."""
    rng = np.random.default_rng(seed)
    cset, metric = sys.set, sys.metric
    n = sys.n
    bpts = sample_boundary(cset, count)
    worst_t = worst_kkt = worst_c = 0.0
    for i in range(count):
        x = bpts[i % len(bpts)]
        w = cset.grad_h(x)
        v = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
        mu = project_tangent(cset, metric, x, v)
        ref = qp_oracle(metric, v, w, 0.0)
        worst_t = max(worst_t, float(np.linalg.norm(mu - ref)) / (1.0 + float(np.linalg.norm(v))))
        feas, stat, lam = tangent_kkt_residuals(cset, metric, x, v, mu)
        scale = 1.0 + float(np.linalg.norm(v)) * (1.0 + float(np.linalg.norm(w))) * metric.lambda_max
        worst_kkt = max(worst_kkt, feas / scale, stat / scale, lam / scale)
    ipts = sample_in_set(cset, count)
    for i in range(count):
        x = ipts[i % len(ipts)]
        w = cset.grad_h(x)
        hv = cset.h(x)
        fv = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
        alpha = float(10.0 ** rng.uniform(-1, 3))
        val = cbf_field_value(cset, metric, fv, float(w @ fv), hv, w, alpha)
        ref = qp_oracle(metric, fv, w, alpha * hv)
        worst_c = max(worst_c, float(np.linalg.norm(val - ref)) / (1.0 + float(np.linalg.norm(fv))))
    return {
        "tangent_oracle": (worst_t <= 1e-8, worst_t),
        "tangent_kkt": (worst_kkt <= 1e-8, worst_kkt),
        "cbf_oracle": (worst_c <= 1e-8, worst_c),
    }


def run_verify(sys, cfg, alpha=None, grid_res=None, n_instances: int = 1000) -> tuple:
    """Return ``(checks, notes)``: ``checks`` maps name to ``(passed, detail)``."""
    checks = {}
    notes = []
    for name, (ok, worst) in validate_set(sys.set).items():
        checks[f"set.{name}"] = (bool(ok), float(worst))
    if not all(ok for ok, _ in checks.values()):
        return checks, ["later checks skipped because the set checks failed"]
    for name, val in oracle_checks(sys, n_instances).items():
        checks[f"oracle.{name}"] = (bool(val[0]), float(val[1]))
    if not all(ok for ok, _ in checks.values()):
        return checks, ["later checks skipped because the oracle checks failed"]

    grid = cfg.grid_res if grid_res is None else grid_res
    lat = build_lattice(sys, grid)
    report = estimate_constants(sys, cfg.eps_fraction, cfg.alpha_grid, grid, lattice=lat)
    a_star = report.alpha_star
    base = a_star if a_star > 0 else 1.0
    lemma_alphas = [base, 2 * base, 10 * base]
    for name, chk in lemma_checks(sys, report, lemma_alphas, lattice=lat).items():
        checks[f"lemma.{name}"] = (chk.passed, chk.to_dict())

    cert_alphas = lemma_alphas if alpha is None else [float(alpha)]
    for a in cert_alphas:
        if a < a_star:
            msg = f"certificate skipped: alpha={a:g} is below alpha_star={a_star:g}"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
            continue
        recs = perturbation_certificate(sys, a, report, certificate_samples(sys, a, 200, lat))
        failed = sum(not r.passed for r in recs)
        loose = sum(not r.sigma1_ok for r in recs)
        checks[f"certificate.alpha={a:g}"] = (failed == 0, {"samples": len(recs), "failed": failed})
        checks[f"certificate_sigma1.alpha={a:g}"] = (loose == 0, {"samples": len(recs), "failed": loose})
    return checks, notes


def cmd_verify(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    sys, cfg = build_scenario(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        checks, notes = run_verify(sys, cfg, alpha=args.alpha, grid_res=_parse_grid(args.grid_res))
    for msg in notes:
        print(f"warning: {msg}", file=_sys.stderr)
    failed = [name for name, (ok, _) in checks.items() if not ok]
    for name, (ok, detail) in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {json.dumps(detail, default=_json_default)}")
    outputs = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, {"checks": {k: {"passed": ok, "detail": d} for k, (ok, d) in checks.items()},
                          "notes": notes})
        man = out.with_suffix(".manifest.json")
        outputs = [out, man]
        _manifest(man, "verify", cfg, started, outputs, {"failed": failed})
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=_sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_experiment(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    sys, cfg = build_scenario(cfg)
    out_dir = Path(args.out_dir or f"{cfg.name}-experiment")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = _bounds(sys, cfg, args)
    paths = [_write_json(out_dir / "bounds.json", report.to_dict())]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep, spaths = _sweep_outputs(sys, cfg, cfg.alpha_grid, out_dir, report=report)
    paths += spaths
    ref_csv = out_dir / "pds.csv"
    sweep.reference.to_csv(ref_csv)
    paths.append(ref_csv)
    for a, tr in zip(sweep.alphas, sweep.trajectories):
        p = out_dir / f"cbf-alpha{a:g}.csv"
        tr.to_csv(p)
        paths.append(p)
    man = out_dir / "manifest.json"
    _manifest(man, "experiment", cfg, started, paths + [man], {"alpha_star": report.alpha_star})
    for a, d in zip(sweep.alphas, sweep.sup_distances):
        print(f"alpha={a:g}\tsup_distance={d:.6g}\tsigma={report.sigma_table[a]:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdscbf", description="Projected dynamical systems versus CBF approximations.")
    p.add_argument("--version", action="version", version=f"pdscbf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", choices=SCENARIO_NAMES)
        sp.add_argument("--config", help="scenario config JSON")
        sp.add_argument("--seedless", action="store_true", help="reserved; all sampling is deterministic")

    sp = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    common(sp)
    sp.add_argument("--kind", choices=("nominal", "pds", "cbf"), required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--scheme", choices=[s.value for s in Scheme])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="CBF-versus-PDS distances over an alpha grid")
    common(sp)
    sp.add_argument("--alphas", help="comma-separated alpha values")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bounds", help="estimate the perturbation constants")
    common(sp)
    sp.add_argument("--alphas")
    sp.add_argument("--grid-res", help="intervals per dimension (one value or m+n values)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("verify", help="set, oracle, lemma and certificate checks")
    common(sp)
    sp.add_argument("--alpha", type=float, help="certificate alpha (default: 1, 2 and 10 times alpha_star)")
    sp.add_argument("--grid-res")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("experiment", help="bounds, sweep, plots and trajectories for one scenario")
    common(sp)
    sp.add_argument("--grid-res")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except PdsCbfError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
