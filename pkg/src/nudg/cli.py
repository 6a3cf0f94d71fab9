"""Command-line front end: ``synth2d``, ``theory``, ``sweep`` and ``verify``.

Values resolve as built-in defaults, then ``--config`` (flat TOML, keys named
like the flags), then explicit flags. The resolved values are echoed to
``<out>/resolved-config.toml``, which can be passed back through ``--config``
to repeat the run.

Exit codes: 0 success, 1 validation or I/O error, 2 numerical failure,
3 a check suite reported a failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import experiments, verifier
from .linalg import SvdConvergenceError
from .sampler import OutOfRegimeError, TheorySpec
from .trainer import TrainingDivergedError, write_trajectory_csv

__all__ = ["main", "build_parser", "resolve_config", "EXIT_OK", "EXIT_INVALID", "EXIT_NUMERIC", "EXIT_CHECKS"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_CHECKS = 0, 1, 2, 3

COMMON_DEFAULTS = {"seed": 0, "threads": 1, "allow_out_of_regime": False}

_SYNTH = experiments.Synth2dSettings()
SYNTH2D_DEFAULTS = {
    "n_train": _SYNTH.n_train,
    "eval_n": _SYNTH.eval_n,
    "learning_rate": _SYNTH.learning_rate,
    "max_steps": _SYNTH.max_steps,
    "grad_tol": _SYNTH.grad_tol,
    "backtracking": _SYNTH.backtracking,
    # 0 means one block over the whole training batch
    "nu_batch_size": _SYNTH.nu_batch_size,
    "flip_prob": _SYNTH.flip_prob,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "synth2d": {**COMMON_DEFAULTS, **SYNTH2D_DEFAULTS, "lambda": 0.01, "resolution": 200},
    "sweep": {**COMMON_DEFAULTS, **SYNTH2D_DEFAULTS, "lambdas": list(experiments.DEFAULT_LAMBDAS)},
    "theory": {
        **COMMON_DEFAULTS,
        "r": 49,
        "d": 300,
        "gamma": 0.45,
        "lambda": 0.05,
        "b_rank": 10,
        "n": 200_000,
        "eval_n": verifier.EVAL_N,
    },
    "verify": {**COMMON_DEFAULTS, "suite": ["all"]},
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-train", type=int, help="training samples (ID)")
    p.add_argument("--eval-n", type=int, help="held-out samples per domain")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--backtracking", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--nu-batch-size", type=int, help="rows per nuclear-norm block; 0 for the whole batch")
    p.add_argument("--flip-prob", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML file with keys named like the flags")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory (default runs/<command>)")
    common.add_argument("--threads", type=int, help="worker threads for independent sweep points and suites")
    common.add_argument("--allow-out-of-regime", action="store_true", default=None)

    parser = _Parser(prog="nudg", description="Nuclear-norm regularized ERM laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth2d", parents=[common], help="ERM vs ERM-NU on the 2-D task, plus boundary grids")
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--resolution", type=int)
    _synth_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="ERM-NU over a lambda grid on the 2-D task")
    p.add_argument("--lambdas", type=_float_list, help="comma-separated, strictly increasing")
    _synth_flags(p)

    p = sub.add_parser("theory", parents=[common], help="ERM-rank vs ERM-l2 accuracy gap on theory data")
    p.add_argument("--r", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--b-rank", type=int)
    p.add_argument("--n", type=int, help="training samples")
    p.add_argument("--eval-n", type=int, help="evaluation samples per domain")

    p = sub.add_parser("verify", parents=[common], help="Monte-Carlo verification suites")
    p.add_argument("--suite", type=_name_list, help=f"comma-separated from: all, {', '.join(verifier.SUITES)}")
    return parser


def _load_config(path: Path) -> dict:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ValueError(f"config must be flat; {key!r} is a table")
        out[key.replace("-", "_")] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    command = args.command
    resolved = dict(DEFAULTS[command])
    resolved["out"] = f"runs/{command}"
    if args.config is not None:
        loaded = _load_config(args.config)
        if loaded.pop("command", command) != command:
            raise ValueError(f"config file is for a different command than {command!r}")
        unknown = set(loaded) - set(resolved)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        resolved.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        resolved["lambda" if key == "lambda_" else key] = value
    resolved["out"] = str(resolved["out"])
    _validate(command, resolved)
    return resolved


def _validate(command: str, cfg: dict) -> None:
    if cfg["threads"] < 1:
        raise ValueError("--threads must be at least 1")
    if "lambda" in cfg and not (isinstance(cfg["lambda"], (int, float)) and cfg["lambda"] >= 0):
        raise ValueError(f"--lambda must be non-negative, got {cfg['lambda']}")
    if "learning_rate" in cfg and not cfg["learning_rate"] > 0:
        raise ValueError("--learning-rate must be positive")
    if "max_steps" in cfg and cfg["max_steps"] < 1:
        raise ValueError("--max-steps must be at least 1")
    if "nu_batch_size" in cfg and cfg["nu_batch_size"] is not None and cfg["nu_batch_size"] < 0:
        raise ValueError("--nu-batch-size must be non-negative")
    if command == "synth2d" and cfg["resolution"] < 50:
        raise ValueError("--resolution must be at least 50")
    if command == "sweep":
        lams = cfg["lambdas"]
        if not lams or any(not v >= 0 for v in lams) or any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("--lambdas must be non-negative and strictly increasing")
    if command == "theory" and not cfg["lambda"] > 0:
        raise ValueError("--lambda must be positive for the ERM-l2 solver")
    if command == "verify":
        unknown = [s for s in cfg["suite"] if s != "all" and s not in verifier.SUITES]
        if unknown:
            raise ValueError(f"unknown suite(s): {', '.join(unknown)}")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_config(command: str, cfg: dict) -> str:
    lines = [f"command = {_toml_value(command)}"]
    # None has no TOML spelling; the whole-batch block size is written as 0
    lines += [f"{k} = {_toml_value(0 if v is None else v)}" for k, v in sorted(cfg.items())]
    return "\n".join(lines) + "\n"


def _synth_settings(cfg: dict) -> experiments.Synth2dSettings:
    return experiments.Synth2dSettings(
        n_train=cfg["n_train"],
        eval_n=cfg["eval_n"],
        learning_rate=float(cfg["learning_rate"]),
        max_steps=cfg["max_steps"],
        grad_tol=float(cfg["grad_tol"]),
        backtracking=bool(cfg["backtracking"]),
        nu_batch_size=cfg["nu_batch_size"] or None,
        flip_prob=float(cfg["flip_prob"]),
    )


def cmd_synth2d(cfg: dict, out: Path) -> tuple[int, str]:
    settings = _synth_settings(cfg)
    result = experiments.run_synthetic2d_comparison(cfg["seed"], float(cfg["lambda"]), settings)
    experiments.write_comparison_csv(result, out / "comparison.csv")
    lines = [f"{'objective':<10} {'id_acc':>8} {'ood_acc':>8} {'angle_deg':>9}"]
    for name, tag in (("ERM", "erm"), ("ERM_NU", "erm_nu")):
        model = result.models[name]
        grid = experiments.export_boundary_grid(model, cfg["resolution"])
        experiments.write_boundary_csv(grid, out / f"boundary_{tag}.csv")
        write_trajectory_csv(result.results[name], out / f"trajectory_{tag}.csv")
    for row in result.rows:
        angle = experiments.boundary_angle_deg(result.models[row.objective])
        lines.append(f"{row.objective:<10} {row.id_acc:>8.5f} {row.ood_acc:>8.5f} {angle:>9.3f}")
    return EXIT_OK, "\n".join(lines)


def cmd_sweep(cfg: dict, out: Path) -> tuple[int, str]:
    result = experiments.run_lambda_sweep(cfg["lambdas"], _synth_settings(cfg), cfg["seed"], cfg["threads"])
    experiments.write_sweep_csv(result, out / "sweep.csv")
    if result.records:
        experiments.plot_sweep_svg(result, out / "plot.svg")
    lines = [f"{'lambda':>10} {'id_acc':>8} {'ood_acc':>8} {'stable_rank':>12} {'nuclear':>12}"]
    for r in result.records:
        lines.append(
            f"{r.lam:>10.4g} {r.id_accuracy:>8.5f} {r.ood_accuracy:>8.5f} {r.stable_rank:>12.8f} {r.nuclear_norm:>12.5g}"
        )
    if result.aborted:
        lines.append(f"aborted at {result.aborted}")
        return EXIT_NUMERIC, "\n".join(lines)
    return EXIT_OK, "\n".join(lines)


def cmd_theory(cfg: dict, out: Path) -> tuple[int, str]:
    spec = TheorySpec(
        cfg["r"], cfg["d"], float(cfg["gamma"]), cfg["n"], cfg["seed"],
        allow_out_of_regime=bool(cfg["allow_out_of_regime"]),
    )
    report = verifier.verify_separation(spec, float(cfg["lambda"]), cfg["b_rank"], eval_n=cfg["eval_n"])
    report.write_csv(out / "report.csv")
    return (EXIT_OK if report.passed else EXIT_CHECKS), report.summary()


def cmd_verify(cfg: dict, out: Path) -> tuple[int, str]:
    report = verifier.run_suite(cfg["suite"], cfg["seed"], cfg["threads"])
    report.write_csv(out / "report.csv")
    return (EXIT_OK if report.passed else EXIT_CHECKS), report.summary()


COMMANDS = {"synth2d": cmd_synth2d, "sweep": cmd_sweep, "theory": cmd_theory, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"nudg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg["out"])
    text = format_config(args.command, cfg)
    print(text, end="")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved-config.toml").write_text(text)
        code, summary = COMMANDS[args.command](cfg, out)
        (out / "report.txt").write_text(summary + "\n")
    except (OutOfRegimeError, ValueError, OSError) as exc:
        print(f"nudg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDivergedError, verifier.SolverNonConvergence, SvdConvergenceError, FloatingPointError) as exc:
        print(f"nudg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
