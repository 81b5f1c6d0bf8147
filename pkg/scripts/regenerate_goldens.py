"""Rebuild tests/goldens/reference.json from the shipped scenario defaults.

Run from the repository root after an intentional numerical change:

    python3 scripts/regenerate_goldens.py
"""

import json
import sys
import warnings
from pathlib import Path

import numpy as np

import pdscbf
from pdscbf.analysis import run_sweep
from pdscbf.bounds import estimate_for_config
from pdscbf.scenarios import SCENARIO_NAMES, build_scenario, synchronverter_output

OUT = Path(__file__).resolve().parents[1] / "tests" / "goldens" / "reference.json"

# the final sup-distance must stay below golden * THRESHOLD_FACTOR
THRESHOLD_FACTOR = 1.05


def scenario_record(name):
    sys_, cfg = build_scenario(name)
    report = estimate_for_config(sys_, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep = run_sweep(sys_, cfg.z0, cfg.x0, cfg.integration(), cfg.alpha_grid, t_prime=cfg.t_prime)
    rec = {
        "alphas": sweep.alphas,
        "sup_distances": sweep.sup_distances,
        "final_threshold": sweep.sup_distances[-1] * THRESHOLD_FACTOR,
        "reference_scheme_gap": sweep.reference_scheme_gap,
        "invariance_margins": sweep.invariance_margins,
        "pds_terminal_state": sweep.reference.states[-1].tolist(),
        "alpha_star": report.alpha_star,
        "delta": report.delta,
        "sigma_table": {format(a, ".17g"): s for a, s in sorted(report.sigma_table.items())},
    }
    if name == "synchronverter":
        rec["pds_terminal_output"] = synchronverter_output(cfg, sweep.reference.zs[-1]).tolist()
    return rec


def main():
    data = {"version": pdscbf.__version__, "threshold_factor": THRESHOLD_FACTOR, "scenarios": {}}
    for name in SCENARIO_NAMES:
        print(f"{name} ...", file=sys.stderr, flush=True)
        data["scenarios"][name] = scenario_record(name)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main()
