"""``snls`` command-line entry point.

Settings are layered: built-in preset for the subcommand, then the
``--config`` TOML file, then individual flags. Exit codes: 0 success, 1 a
study verdict of FAIL, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import output
from .checks import selftest
from .config import RunConfig, config_from_dict, config_to_dict, load_config, merge
from .experiments import StudySpec, run_study
from .integrator import StepFailure, run_trajectory
from .noise import NoiseStream
from .observables import TEST_FUNCTIONS, record, test_function
from .spectral import ConfigurationError, GridWorkspace, make_spectrum

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# Defaults per subcommand, matching the documented study settings.
PRESETS = {
    "simulate": {"study": {"kind": "ergodicity", "n_steps": 1000}},
    "ergodicity": {
        "model": {"lambda": -1, "n_modes": 32}, "step": {"tau": 2.0**-7},
        "study": {"kind": "ergodicity", "n_replicas": 64, "n_steps": 12800, "burn_in": 1280},
    },
    "spatial-order": {
        "model": {"lambda": -1, "n_modes": 64}, "step": {"tau": 2.0**-8},
        "noise": {"p": 5.5},
        "study": {"kind": "spatial_order", "resolutions": [4, 8, 16, 32], "reference": 64,
                  "n_replicas": 2048, "t_final": 1.0},
    },
    "temporal-order": {
        "model": {"lambda": -1, "n_modes": 32}, "step": {"tau": 2.0**-4},
        "study": {"kind": "temporal_order", "resolutions": [2.0**-j for j in range(4, 9)],
                  "reference": 2.0**-10, "n_replicas": 2048, "t_final": 1.0},
    },
    "invariant-error-temporal": {
        "model": {"lambda": -1, "n_modes": 16}, "step": {"tau": 2.0**-3},
        "study": {"kind": "invariant_error_temporal",
                  "resolutions": [2.0**-j for j in range(3, 7)], "reference": 2.0**-8,
                  "n_replicas": 64, "t_final": 16.0, "burn_in_time": 4.0},
    },
    "invariant-error-spatial": {
        "model": {"lambda": -1, "n_modes": 64}, "step": {"tau": 2.0**-8},
        "noise": {"p": 5.5},
        "study": {"kind": "invariant_error_spatial", "resolutions": [4, 8, 16, 32],
                  "reference": 64, "n_replicas": 64, "t_final": 8.0, "burn_in_time": 2.0},
    },
    "operator-check": {"study": {"kind": "operator_check"}},
    "selftest": {"study": {"kind": "operator_check"}},
}

STUDY_FILES = {
    "spatial_order": "spatial_order", "temporal_order": "temporal_order",
    "invariant_error_spatial": "invariant_error_spatial",
    "invariant_error_temporal": "invariant_error_temporal",
}


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--alpha", type=float)
    common.add_argument("--lambda", dest="lam", type=int)
    common.add_argument("--n-modes", type=int)
    common.add_argument("--tau", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--replicas", type=int, help="Monte Carlo replicas (per initial condition)")
    parser = argparse.ArgumentParser(prog="snls", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="one trajectory to CSV")
    sim.add_argument("--steps", type=int)
    sim.add_argument("--record-every", type=int)
    erg = sub.add_parser("ergodicity", parents=[common], help="initial-condition independence")
    erg.add_argument("--steps", type=int)
    erg.add_argument("--burn-in", type=int)
    sub.add_parser("spatial-order", parents=[common], help="weak order in N")
    sub.add_parser("temporal-order", parents=[common], help="weak order in tau")
    inv = sub.add_parser("invariant-error", parents=[common], help="invariant-measure errors")
    inv.add_argument("--variant", choices=("temporal", "spatial"), default="temporal")
    sub.add_parser("operator-check", parents=[common], help="exact operator bounds")
    sub.add_parser("selftest", parents=[common], help="deterministic invariant suite")
    return parser


def resolve_config(args) -> RunConfig:
    preset_key = args.command
    if args.command == "invariant-error":
        preset_key = f"invariant-error-{args.variant}"
    data = PRESETS[preset_key]
    if args.config is not None:
        data = merge(data, load_config(args.config))
    flags = {}
    for attr, (sec, key) in {"alpha": ("model", "alpha"), "lam": ("model", "lambda"),
                             "n_modes": ("model", "n_modes"), "tau": ("step", "tau"),
                             "out": ("io", "out"), "replicas": ("study", "n_replicas"),
                             "steps": ("study", "n_steps"), "burn_in": ("study", "burn_in"),
                             "record_every": ("study", "record_every")}.items():
        value = getattr(args, attr, None)
        if value is not None:
            flags.setdefault(sec, {})[key] = value
    if args.seed is not None:
        flags["seed"] = args.seed
    return config_from_dict(merge(data, flags))


def _simulate(cfg: RunConfig, out: Path) -> tuple[dict, dict]:
    params = cfg.params
    spectrum = make_spectrum(params)
    ws = GridWorkspace(params.n_modes)
    spec = cfg.study_spec()
    init = spec.default_initial(params.n_modes)
    every = cfg.study.record_every
    tau = cfg.step.tau
    rows = []

    def hook(k, u):
        if k % every == 0:
            rec = record(u, spectrum, ws, params, cfg.study.c0)
            rows.append([k, k * tau, rec.mass, rec.grad_sq, rec.l4_fourth, rec.ham_disc,
                         rec.ham_mod, rec.h2, rec.f_val]
                        + [test_function(kind, u) for kind in TEST_FUNCTIONS])

    stream = NoiseStream(cfg.seed, 0, 0, tau)
    run_trajectory(init, cfg.study.n_steps, stream, params, cfg.noise_spectrum(), cfg.step_config,
                   hooks=(hook,), ws=ws)
    path = output.write_trajectory(out / "trajectory.csv", rows)
    return {"trajectory": str(path)}, {"simulate": "N/A"}


def _study(cfg: RunConfig, out: Path, spec: StudySpec) -> tuple[dict, dict]:
    report = run_study(spec)
    files = {}
    if spec.kind == "ergodicity":
        files["table"] = str(output.write_csv(out / "ergodicity.csv",
                                              ("ic", "observable", "mean", "stderr"), report.table))
        files["details"] = str(output.write_json(out / "ergodicity.json", report.details))
    elif spec.kind == "operator_check":
        files["table"] = str(output.write_rate_table(out / "operator_check.csv", report.table))
        files["details"] = str(output.write_json(out / "operator_check.json", report.details))
    else:
        stem = STUDY_FILES[spec.kind]
        files["table"] = str(output.write_rate_table(out / f"{stem}.csv", report.table))
        files["fit"] = str(output.write_fit(out / f"{stem}_fit.json", report.fit))
        details = {k: v for k, v in report.details.items()}
        files["details"] = str(output.write_json(out / f"{stem}_details.json", details))
    return files, {spec.kind: report.verdict}


def _print_lines(report_lines):
    for line in report_lines:
        print(line)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.io.out)
        if args.command == "selftest":
            ok, lines = selftest(cfg.model.alpha)
            _print_lines(lines)
            files, verdicts = {}, {"selftest": "PASS" if ok else "FAIL"}
        elif args.command == "simulate":
            files, verdicts = _simulate(cfg, out)
        else:
            files, verdicts = _study(cfg, out, cfg.study_spec())
    except ConfigurationError as exc:
        print(f"snls: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        print(f"snls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"snls: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command != "selftest" or args.out is not None:
        manifest = output.write_manifest(
            out / "manifest.json", config=config_to_dict(cfg), version=tool_version(),
            timestamp=stamp, seed=cfg.seed, outputs=files,
            wall_clock=round(time.perf_counter() - t0, 3), verdicts=verdicts)
        files["manifest"] = str(manifest)
    for name, verdict in verdicts.items():
        print(f"{name}: {verdict}")
    for path in files.values():
        print(f"wrote {path}")
    return EXIT_FAIL if "FAIL" in verdicts.values() else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
