"""Command-line entry point: run, check-laws, study, manufactured, mesh-info."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import SCENARIOS, ConfigError
from .integrator import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_STUDY = 0, 2, 3, 4

log = logging.getLogger("hvboussinesq")


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON config file")
    p.add_argument("--scenario", default=d(None), choices=sorted(SCENARIOS),
                   help="named preset used when no --config is given")
    p.add_argument("--out-dir", default=d("out"), help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes for studies")
    p.add_argument("--seed", type=int, default=d(0), help="seed for randomized checks")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvboussinesq", description=__doc__)
    _add_globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario and export results")
    p.add_argument("--format", action="append", choices=("csv", "vtu"),
                   help="field snapshot format (repeatable; default csv and vtu)")

    p = sub.add_parser("check-laws", parents=[common], help="law constants and the smallness check")
    p.add_argument("--catalog", action="store_true", help="report every catalog law instead")

    p = sub.add_parser("study", parents=[common], help="refinement study over dt, m or mesh")
    p.add_argument("--knob", choices=("dt", "m", "mesh"), default="dt")
    p.add_argument("--levels", type=int, default=3)

    p = sub.add_parser("manufactured", parents=[common], help="manufactured-solution rate table")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--knob", choices=("mesh", "dt"), default="mesh")

    p = sub.add_parser("mesh-info", parents=[common], help="mesh, space and trace-norm summary")
    p.add_argument("--dump", help="write the mesh as text to this path")
    p.add_argument("--identities", type=int, default=0, metavar="TRIALS",
                   help="also run the skew-form identity checks")
    return parser


def _config(args, default_scenario="heated-cavity-slip"):
    from .config import parse_config, scenario

    if args.config:
        return parse_config(args.config)
    return scenario(args.scenario or default_scenario)


def _emit(obj, path: Path | None = None) -> None:
    from .io import _jsonable

    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    print(text)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")


def cmd_run(args) -> int:
    from .io import resolve_config, run_scenario

    source = args.config or args.scenario or "heated-cavity-slip"
    cfg = resolve_config(source)
    manifest, _ = run_scenario(cfg, args.out_dir, tuple(args.format or ("csv", "vtu")))
    print(f"verdict: {manifest.verdict['label']} (worst relative slack "
          f"{manifest.verdict['worst_relative_slack']:.3e} at step {manifest.verdict['worst_step']})")
    print(f"manifest: {manifest.outputs['manifest']}")
    return EXIT_OK


def cmd_check_laws(args) -> int:
    from .integrator import compute_estimates, setup
    from .laws import catalog, clarke_bounds, estimate_constants

    out = Path(args.out_dir)
    if args.catalog:
        report = {}
        for name, law in catalog().items():
            c = estimate_constants(law, 10.0)
            report[name] = {
                "growth": c.growth, "m1": c.m1, "notes": list(c.notes),
                "clarke_at_breakpoints": {repr(float(b)): list(clarke_bounds(law, [b])[0])
                                          for b in law.breakpoints},
            }
        _emit(report, out / "laws_catalog.json")
        return EXIT_OK
    cfg = _config(args)
    _, spaces, ops = setup(cfg)
    est = compute_estimates(cfg, spaces, ops)
    report = {
        "friction": {"growth": est.friction.growth, "m1": est.friction.m1, "notes": list(est.friction.notes)},
        "heat_flux": {"growth": est.heat_flux.growth, "m1": est.heat_flux.m1, "notes": list(est.heat_flux.notes)},
        "trace_norms": {"gamma_s": est.norms.gamma_s_norm, "gamma": est.norms.gamma_norm},
        "alpha": cfg.alpha, "delta": cfg.conductivity.delta,
        "h0": est.h0.as_dict(),
    }
    _emit(report, out / "check_laws.json")
    return EXIT_OK if est.h0.passed else EXIT_STUDY


def cmd_study(args) -> int:
    from .harness import convergence_study
    from .io import write_rows

    cfg = _config(args)
    res = convergence_study(cfg, args.knob, args.levels, threads=args.threads)
    path = write_rows(res.rows(), Path(args.out_dir) / f"study_{args.knob}.csv")
    _emit({"knob": args.knob, "values": res.values, "diff_u": res.diff_u, "diff_theta": res.diff_theta,
           "ratios_u": res.ratios_u, "ratios_theta": res.ratios_theta,
           "regularizer_ratios": res.regularizer_ratios, "energy_spread": res.energy_spread,
           "passed": res.passed, "table": str(path)})
    return EXIT_OK if res.passed else EXIT_STUDY


def cmd_manufactured(args) -> int:
    from .harness import manufactured_solution_error, temporal_error_study
    from .io import write_rows

    cfg = _config(args, "manufactured")
    if args.knob == "mesh":
        tab = manufactured_solution_error(cfg, args.levels, "mesh", threads=args.threads)
        ok = min(tab.orders_u + tab.orders_theta) >= 1.8
    else:
        base = max(cfg.n_steps, 1)
        tab = temporal_error_study(cfg, steps=tuple(base * 2 ** i for i in range(args.levels)),
                                   threads=args.threads)
        ok = all(1.7 <= r <= 2.4 for r in tab.ratios_u + tab.ratios_theta)
    path = write_rows(tab.rows, Path(args.out_dir) / f"manufactured_{args.knob}.csv")
    _emit({"rows": tab.rows, "orders_u": tab.orders_u, "orders_theta": tab.orders_theta,
           "ratios_u": tab.ratios_u, "ratios_theta": tab.ratios_theta, "passed": ok, "table": str(path)})
    return EXIT_OK if ok else EXIT_STUDY


def cmd_mesh_info(args) -> int:
    from .harness import identity_tests
    from .integrator import setup
    from .mesh import dump_mesh, validate_mesh
    from .spaces import trace_norms

    cfg = _config(args)
    mesh, spaces, ops = setup(cfg)
    info = {
        "mesh": mesh.descriptor(), "problems": validate_mesh(mesh),
        "dofs": {"velocity_free": spaces.n_u, "pressure": spaces.n_p, "temperature_free": spaces.n_theta},
        "gamma1_length": mesh.gamma1_length(),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        n = trace_norms(spaces)
    info["trace_norms"] = {"gamma_s": n.gamma_s_norm, "gamma": n.gamma_norm}
    if args.identities:
        info["identities"] = identity_tests(spaces, ops, args.identities, seed=args.seed).as_dict()
    if args.dump:
        dump_mesh(mesh, args.dump)
        info["dump"] = args.dump
    _emit(info)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "check-laws": cmd_check_laws, "study": cmd_study,
            "manufactured": cmd_manufactured, "mesh-info": cmd_mesh_info}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
