"""Command line entry point: ``xorsep <mode> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .ensembles import DimensionCapError
from .experiments import MODES, ConfigError, ExperimentConfig, run

EXIT_USAGE = 2
EXIT_CAP = 3
EXIT_RUNTIME = 1

MODE_DEFAULTS = {
    "control-k2": {"k": 2, "m_list": (2, 3, 4), "D_list": (16,)},
    "simulate": {"m_list": (2,), "D_list": (4,)},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail({"error": "usage", "message": message}, EXIT_USAGE)


def _fail(payload: dict, code: int):
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    sys.exit(code)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xorsep", description="Quantum XOR game separation experiments")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int, nargs="+", dest="m_list")
    p.add_argument("--D", type=int, nargs="+", dest="D_list")
    p.add_argument("--restarts", type=int)
    p.add_argument("--ancilla-dim", type=int, dest="ancilla_dim")
    p.add_argument("--rounds", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--matrix-free", action="store_true", default=None, dest="matrix_free")
    p.add_argument("--dump-dense", action="store_true", default=None, dest="dump_dense")
    return p


def config_from_args(args) -> ExperimentConfig:
    values = dict(MODE_DEFAULTS.get(args.mode, {}))
    if args.config:
        try:
            with open(args.config) as fh:
                values.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for key, val in vars(args).items():
        if key != "config" and val is not None:
            values[key] = val
    return ExperimentConfig.from_dict(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        report = run(cfg)
    except DimensionCapError as exc:
        _fail(exc.report() | {"message": str(exc), "hint": "use --matrix-free"}, EXIT_CAP)
    except (ConfigError, TypeError) as exc:
        _fail({"error": "config", "message": str(exc)}, EXIT_USAGE)
    except ValueError as exc:
        _fail({"error": "value", "message": str(exc)}, EXIT_RUNTIME)
    summary = {"mode": cfg.mode, "out": cfg.out, "wall_clock_s": round(report["wall_clock_s"], 3)}
    if "summary" in report:
        summary["summary"] = report["summary"]
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
