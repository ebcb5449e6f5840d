"""Command-line entry point: validate, simulate, spikes, converge.

Every stochastic command is a function of (config bytes, flags, seed) and
writes fixed filenames into ``--out`` together with ``manifest.json``.
The manifest is written even when the command fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path


from . import __version__
from .config import bundled_config, config_digest, load_spec
from .errors import ConfigError, SpecError, SteinNetError
from .fpt_reset import run_ou_with_reset, run_stein_with_reset, write_train
from .model import NetworkSpec, check_scheme, limit_params, scale_params
from .ou_sim import fluid_solution, simulate_ou, write_grid
from .rng import CLI, stream
from .stats import fpt_convergence_report
from .stein_sim import simulate_stein, write_path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
PROBE_NS = (1, 10, 100, 1000, 10000)
THREADS_ENV = "STEINNET_THREADS"


class Manifest:
    def __init__(self, command: str, config: str | None, params: dict) -> None:
        self.data: dict = {
            "tool": "steinnet",
            "version": __version__,
            "command": command,
            "config": {"path": config, "sha256": None},
            "parameters": params,
            "outputs": [],
            "error": None,
        }

    def add_output(self, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.data["outputs"].append({"file": path.name, "sha256": digest})

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.data, indent=2, sort_keys=True) + "\n"
        (out / "manifest.json").write_text(text)


def _resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    try:
        return bundled_config(name)
    except FileNotFoundError:
        return path


def _refractory(text: str | None, spec: NetworkSpec) -> NetworkSpec:
    if text is None:
        return spec
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise SpecError(f"--refractory must be a number or comma list, got {text!r}") from None
    if len(values) not in (1, spec.k):
        raise SpecError(f"--refractory needs 1 or {spec.k} values, got {len(values)}")
    return spec.replace(refractory=values if len(values) == spec.k else values * spec.k)


def _n_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise SpecError(f"--n-list must be comma-separated integers, got {text!r}") from None


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _summary(spec: NetworkSpec):
    lp = limit_params(spec)
    check = check_scheme(spec, scale_params, PROBE_NS)
    lines = [
        f"dimension k = {spec.k}, theta = {spec.theta:g}, clusters = "
        + (", ".join("{" + ",".join(map(str, sorted(c.members))) + "}" for c in spec.clusters) or "none"),
        "Gamma = [" + ", ".join(f"{v:.6g}" for v in lp.gamma) + "]",
        "Psi =",
    ]
    lines += ["  [" + ", ".join(f"{v:.6g}" for v in row) + "]" for row in lp.psi]
    for n, ok, err in zip(check.ns, check.admissible, check.errors):
        lines.append(f"n = {n}: " + ("admissible" if ok else f"rejected ({err})"))
    return "\n".join(lines), check


def cmd_validate(args) -> int:
    spec = load_spec(args.config)
    text, check = _summary(spec)
    print(text)
    if not check.ok:
        print("scaling scheme is not admissible at the largest probe n", file=sys.stderr)
        return EXIT_CONFIG
    print("valid")
    return EXIT_OK


def _stein_params_record(p) -> dict:
    d = p.to_dict()
    d["hash"] = p.hash()
    return d


def cmd_simulate(args, manifest: Manifest) -> int:
    spec = _refractory(args.refractory, load_spec(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"path.{args.format}"
    if args.generator == "stein":
        if args.n is None:
            raise SpecError("stein generator needs --n")
        p = scale_params(spec, args.n)
        manifest.data["parameters"]["stein_params"] = _stein_params_record(p)
        path = simulate_stein(p, spec.theta, args.horizon, stream(args.seed, CLI, 0), seed=args.seed)
        write_path(path, target, args.format)
    else:
        lp = limit_params(spec)
        grid = simulate_ou(lp, spec.theta, spec.y0, args.horizon, args.h, stream(args.seed, CLI, 1),
                           seed=args.seed, params_hash=spec.hash())
        fluid = fluid_solution(lp.gamma, spec.theta, spec.y0, grid.times) if args.with_fluid else None
        write_grid(grid, target, args.format, fluid=fluid)
    manifest.add_output(target)
    return EXIT_OK


def cmd_spikes(args, manifest: Manifest) -> int:
    spec = _refractory(args.refractory, load_spec(args.config))
    if args.refractory is not None:
        manifest.data["parameters"]["refractory_applied"] = spec.refractory.tolist()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"train.{args.format}"
    if args.generator == "stein":
        if args.n is None:
            raise SpecError("stein generator needs --n")
        p = scale_params(spec, args.n)
        manifest.data["parameters"]["stein_params"] = _stein_params_record(p)
        train = run_stein_with_reset(spec, p, max_spikes=args.max_spikes, horizon=args.horizon,
                                     seed=args.seed)
    else:
        train = run_ou_with_reset(spec, limit_params(spec), h=args.h, bridge=bool(args.bridge),
                                  max_spikes=args.max_spikes, horizon=args.horizon, seed=args.seed)
    sidecar = write_train(train, target, args.format)
    manifest.data["parameters"]["records"] = len(train)
    manifest.data["parameters"]["status"] = train.status
    manifest.add_output(target)
    manifest.add_output(sidecar)
    return EXIT_OK


def cmd_converge(args, manifest: Manifest) -> int:
    spec = _refractory(args.refractory, load_spec(args.config))
    n_list = _n_list(args.n_list)
    for n in n_list:
        scale_params(spec, n)  # fail fast, naming the offending n
    bridge = True if args.bridge is None else args.bridge
    report = fpt_convergence_report(spec, n_list, ref_h=args.h, bridge=bridge, reps=args.reps,
                                    depth=args.depth, seed=args.seed, horizon=args.horizon,
                                    threads=_threads())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    manifest.add_output(out / "report.json")
    manifest.add_output(out / "report.txt")
    return EXIT_OK


def _positive_float(text: str) -> float:
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steinnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"steinnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stochastic=True):
        p.add_argument("--config", required=True, help="YAML network file or bundled config name")
        p.add_argument("--out", required=stochastic, help="output directory")
        if stochastic:
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
            p.add_argument("--refractory", help="refractory delay, one value or one per component")

    p = sub.add_parser("validate", help="check a config and print Gamma, Psi and scheme admissibility")
    common(p, stochastic=False)

    p = sub.add_parser("simulate", help="write one path of the Stein or OU process")
    common(p)
    p.add_argument("generator", choices=("stein", "ou"))
    p.add_argument("--n", type=int)
    p.add_argument("--h", type=_positive_float, default=1e-3)
    p.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=False,
                   help="accepted for symmetry with spikes; grid paths do not use it")
    p.add_argument("--horizon", type=_positive_float, required=True)
    p.add_argument("--with-fluid", action="store_true", help="append the noise-free solution (ou only)")

    p = sub.add_parser("spikes", help="write a marked spike train")
    common(p)
    p.add_argument("generator", choices=("stein", "ou"))
    p.add_argument("--n", type=int)
    p.add_argument("--h", type=_positive_float, default=1e-3)
    p.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--horizon", type=float)
    p.add_argument("--max-spikes", type=int)

    p = sub.add_parser("converge", help="marked-train convergence report over a list of n")
    common(p)
    p.add_argument("--n-list", required=True, help="comma-separated n values, e.g. 10,50,250")
    p.add_argument("--h", "--ref-h", dest="h", type=_positive_float, default=1e-3,
                   help="grid step of the OU reference")
    p.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=None,
                   help="bridge correction for the reference (default on)")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--horizon", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        args.config = _resolve_config(args.config)
        try:
            return cmd_validate(args)
        except SpecError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    params = {key: value for key, value in sorted(vars(args).items())
              if key not in ("command", "config", "out")}
    manifest = Manifest(args.command, args.config, params)
    config_path = _resolve_config(args.config)
    args.config = config_path
    code = EXIT_OK
    try:
        try:
            manifest.data["config"]["sha256"] = config_digest(config_path)
        except OSError as exc:
            raise ConfigError(f"cannot read {config_path}: {exc.strerror}") from None
        handler = {"simulate": cmd_simulate, "spikes": cmd_spikes, "converge": cmd_converge}[args.command]
        code = handler(args, manifest)
    except SpecError as exc:
        manifest.data["error"] = f"{type(exc).__name__}: {exc}"
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (SteinNetError, OSError, ValueError) as exc:
        manifest.data["error"] = f"{type(exc).__name__}: {exc}"
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_RUNTIME
    manifest.data["exit_code"] = code
    manifest.write(Path(args.out))
    return code


if __name__ == "__main__":
    sys.exit(main())
