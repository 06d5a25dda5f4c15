"""Command-line entry point.

    slm-bmpc run         [--config FILE] [--seed N] [--out DIR] [--controllers a,b]
    slm-bmpc compare     --controllers bmpc,proportional ...
    slm-bmpc sweep-sigma --values 0.1,0.8,25 ...
    slm-bmpc tune-kp     [--values 0,0.005,0.01] ...
    slm-bmpc dump-model  ...

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .controllers import MODES, ControllerError
from .estimator import GainScheduleError
from .experiment import ConfigError, ExperimentConfig, build_setup, load_config, run_controller, select_kp
from .plant_sim import PlantError
from .scan_path import write_path_csv
from .thermal_model import DiscretizationError

log = logging.getLogger("slm_bmpc")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _name_list(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    for name in names:
        if name not in MODES:
            raise argparse.ArgumentTypeError(f"unknown controller {name!r}; choose from {', '.join(MODES)}")
    if not names:
        raise argparse.ArgumentTypeError("empty controller list")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--controllers", type=_name_list, help="comma-separated controller list")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = argparse.ArgumentParser(prog="slm-bmpc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured controllers")
    sub.add_parser("compare", parents=[common], help="run controllers on one seeded plant")
    sw = sub.add_parser("sweep-sigma", parents=[common], help="B-MPC for several sigma_vbar values")
    sw.add_argument("--values", type=_float_list, default=[0.1, 0.8, 25.0])
    tk = sub.add_parser("tune-kp", parents=[common], help="grid search for the proportional gain")
    tk.add_argument("--values", type=_float_list, help="gains to try (default: control.kp_grid)")
    sub.add_parser("dump-model", parents=[common], help="export G, y_d and the scan path")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed: must be nonnegative")
        cfg = cfg.replace(run={"seed": args.seed})
    if args.controllers is not None:
        cfg = cfg.replace(run={"controllers": tuple(args.controllers)})
    return cfg


def _run_all(setup, names):
    results, kps = {}, {}
    seed = setup.config.run.seed
    plant = setup.plant(seed)
    for name in names:
        kp = None
        if name == "proportional":
            kp = setup.config.control.kp
            if kp is None:
                kp = select_kp(setup, seed, plant=plant)[0]
            kps[name] = float(kp)
        log.info("running %s (seed %d)", name, seed)
        results[name] = run_controller(setup, name, seed, kp=kp, plant=plant)
    return results, kps


def _baseline(names):
    for cand in ("proportional", "vanilla_mpc"):
        if cand in names and "bmpc" in names:
            return cand
    return None


def cmd_run(args, cfg, compare=False):
    names = list(cfg.run.controllers)
    if compare and args.controllers is None:
        names = ["bmpc", "proportional"]
    setup = build_setup(cfg)
    results, kps = _run_all(setup, names)
    report.write_error_norms(args.out, results)
    report.write_final_layer(args.out, results)
    if compare:
        report.write_comparison(args.out, results)
    extra = {"kp": kps} if kps else None
    report.write_summary(args.out, cfg, report.summarize(results, _baseline(names)), extra)
    if args.figures:
        from . import figures
        figures.error_norms(args.out, results)
        figures.final_layer(args.out, results, setup.yd)
    for name, traces in results.items():
        log.info("%-13s final error norm %.6g", name, traces[-1].err_norm)


def cmd_sweep(args, cfg):
    setup = build_setup(cfg)
    plant = setup.plant(cfg.run.seed)
    sweep = {}
    for sigma in args.values:
        if sigma < 0:
            raise ConfigError(f"--values: sigma_vbar must be nonnegative, got {sigma}")
        log.info("sigma_vbar = %g", sigma)
        sweep[float(sigma)] = run_controller(setup, "bmpc", cfg.run.seed, sigma_vbar=sigma, plant=plant)
    report.write_sweep(args.out, sweep)
    metrics = {f"sigma_vbar={s:g}": report.summarize({"bmpc": t})["bmpc"] for s, t in sweep.items()}
    report.write_summary(args.out, cfg, metrics)
    if args.figures:
        from . import figures
        figures.sweep(args.out, sweep)


def cmd_tune(args, cfg):
    setup = build_setup(cfg)
    kp, table = select_kp(setup, cfg.run.seed, grid=args.values)
    report.write_kp_table(args.out, table)
    report.write_summary(args.out, cfg, {"kp": float(kp)})
    log.info("selected kp = %g", kp)


def cmd_dump(args, cfg):
    setup = build_setup(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_lifted(out, setup.lifted.G)
    report.write_reference(out, setup.yd)
    write_path_csv(out / "path.csv", setup.path, setup.yd)
    report.write_summary(out, cfg, {"nu": setup.nu, "n_nodes": setup.model.n_nodes,
                                    "path_length": float(setup.path.length),
                                    "V": float(setup.V), "W": float(setup.W)})
    if args.figures:
        from . import figures
        figures.model_overview(out, setup.path, setup.yd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handlers = {"run": cmd_run, "compare": lambda a, c: cmd_run(a, c, compare=True),
                "sweep-sigma": cmd_sweep, "tune-kp": cmd_tune, "dump-model": cmd_dump}
    try:
        handlers[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ControllerError, PlantError, GainScheduleError, DiscretizationError,
            np.linalg.LinAlgError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
