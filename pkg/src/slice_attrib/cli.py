"""Command-line entry points: simulate, attribute, fit, experiment, bounds.

Exit status: 0 on success, 1 when an experiment's acceptance checks fail,
2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .core import BoundConstants, ModelParams, SliceAttribError, load_window
from .harness import EXPERIMENTS, ExperimentConfig, run
from .inference import AttributionOptions, attribute, edge_f1, false_edges, path_matches
from .learning import fit
from .segmentation import CusumConfig
from .simulator import ScenarioConfig, generate, load_scenario, load_truth, save_scenario

LOG_ENV = "SLICE_ATTRIB_LOG"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

logger = logging.getLogger("slice_attrib")


class UsageError(Exception):
    pass


def _setup_logging():
    name = os.environ.get(LOG_ENV, "warn").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"{LOG_ENV} must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{p}: expected a JSON object")
    return data


def _need_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"input directory not found: {p}")
    return p


def _write_json(out: Path, name: str, data: dict) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        target = out / name
        target.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    return target


def _params_from(cfg: dict):
    params = ModelParams.from_dict(cfg["params"]) if "params" in cfg else ModelParams()
    constants = BoundConstants(**cfg["constants"]) if "constants" in cfg else BoundConstants()
    cusum = CusumConfig(**cfg["cusum"]) if "cusum" in cfg else CusumConfig()
    options = AttributionOptions(**cfg["options"]) if "options" in cfg else AttributionOptions()
    return params, constants, cusum, options


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    cfg = cfg.get("scenario", cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    scenario = generate(ScenarioConfig.from_dict(cfg))
    out = Path(args.out)
    try:
        save_scenario(scenario, out)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    logger.info("wrote scenario to %s", out)
    return 0


def cmd_attribute(args) -> int:
    src = _need_dir(args.inp)
    cfg = _read_json(args.config) if args.config else {}
    params, constants, cusum, options = _params_from(cfg)
    window = load_window(src)
    report = attribute(window, params, constants, cusum, options)
    data = report.to_dict()
    truth = load_truth(src)
    if truth is not None:
        path, cps, _ = truth
        data["ground_truth"] = {
            "path": path.to_dict(),
            "changepoints": list(cps),
            "path_matches": path_matches(report.path, path),
            "edge_f1": edge_f1(report.path, path),
            "false_edges": false_edges(report.graph, path),
        }
    out = Path(args.out)
    _write_json(out, "report.json", data)
    if args.format == "csv":
        with open(out / "report.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(data["tests"][0]) if data["tests"] else ["source"])
            writer.writeheader()
            writer.writerows(data["tests"])
    print(" -> ".join(str(s) for s in report.path.slices) or "(empty path)")
    return 0


def cmd_fit(args) -> int:
    dirs = [_need_dir(d) for d in args.inp]
    cfg = _read_json(args.config) if args.config else {}
    params, constants, _, _ = _params_from(cfg)
    scenarios = [load_scenario(d) for d in dirs]
    result = fit(scenarios, params, constants=constants)
    _write_json(Path(args.out), "fit.json", result.to_dict())
    return 0


def cmd_experiment(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    name = args.name or cfg.get("experiment")
    if name is None:
        raise UsageError("experiment name required")
    trials = args.trials if args.trials is not None else cfg.get("trials")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = args.out or cfg.get("out") or f"results/{name}"
    try:
        ecfg = ExperimentConfig(name, trials, int(seed), dict(cfg.get("overrides", {})), out)
    except SliceAttribError as exc:
        raise UsageError(str(exc)) from exc
    report, result = run(ecfg, jobs=args.jobs, out_dir=out)
    for c in result.checks:
        mark = "PASS" if c["passed"] else "FAIL"
        tag = "" if c["kind"] == "acceptance" else " (diagnostic)"
        print(f"{mark} {c['name']}{tag}: {c['value']} target {c['target']}")
    print(f"wrote {Path(out) / 'results.json'}")
    if args.format == "csv":
        print(f"wrote {Path(out) / 'results.csv'}")
    return 0 if result.passed else 1


def cmd_bounds(args) -> int:
    out = args.out or "results/bounds"
    report, result = run(ExperimentConfig("bounds", seed=0), out_dir=out)
    print(json.dumps(report["results"], indent=2, sort_keys=True))
    return 0 if result.passed else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slice-attrib", description="Causal attack attribution for sliced-network telemetry.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_out=True):
        sp.add_argument("--config", metavar="PATH", help="JSON configuration file")
        sp.add_argument("--seed", type=_u64, metavar="U64")
        sp.add_argument("--out", metavar="DIR", required=need_out)
        sp.add_argument("--jobs", type=_positive, default=1, metavar="N")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("simulate", help="draw one scenario and save it")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("attribute", help="attribute a saved window")
    sp.add_argument("--in", dest="inp", required=True, metavar="DIR")
    common(sp)
    sp.set_defaults(func=cmd_attribute)

    sp = sub.add_parser("fit", help="fit fusion and contention parameters on labelled scenarios")
    sp.add_argument("--in", dest="inp", required=True, nargs="+", metavar="DIR")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    sp.add_argument("name", nargs="?", choices=EXPERIMENTS)
    sp.add_argument("--trials", type=_positive)
    common(sp, need_out=False)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("bounds", help="print every certificate number")
    common(sp, need_out=False)
    sp.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SliceAttribError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
