"""Command line interface.

Exit codes: 0 ok, 2 input error, 3 oracle or transport error, 4 server error.
Machine-readable JSON goes to stdout; tables and diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from .chroma import DomainError, angular_error_deg
from .evalharness import RunError, export_trajectory_svg, run_protocol, summarize
from .augment import DEFAULT_MAX_DEG, export_finetune_dataset
from .imaging import gray_edge, gray_world, shades_of_gray
from .oracle import OracleError, ground_truth_oracle, noisy_oracle, statistical_oracle
from .scene import META_NAME, Scene, SceneError, list_scene_dirs, read_scene
from .solver import InitMethod, SolveError, SolverConfig, solve
from .synthetic import make_dataset
from .vlmwire import CastClient, RemoteOracle, WireError, mock_server

log = logging.getLogger("castwb")

EXIT_OK, EXIT_INPUT, EXIT_ORACLE, EXIT_SERVER = 0, 2, 3, 4
HELP_WIDTH = 88


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=34)


# ---------------------------------------------------------------- config


def _parse_oracle(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "gt" and not arg:
        return ("gt", None)
    if kind == "noisy":
        p = float(arg)
        if not 0 <= p <= 1:
            raise ValueError
        return ("noisy", p)
    if kind == "statistical":
        return ("statistical", float(arg) if arg else 6.0)
    if kind == "remote" and arg:
        return ("remote", arg)
    raise ValueError


def oracle_type(spec: str):
    try:
        return _parse_oracle(spec)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid oracle {spec!r}; use gt, noisy:P, statistical:PNORM or remote:URL"
        ) from None


def init_type(spec: str) -> InitMethod:
    if spec.startswith("fixed:"):
        try:
            return InitMethod.parse([float(v) for v in spec[6:].split(",")])
        except (ValueError, DomainError):
            raise argparse.ArgumentTypeError(f"invalid fixed initialization {spec!r}") from None
    try:
        return InitMethod.parse(spec)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def reflect_type(spec: str):
    if spec == "off":
        return None
    try:
        n = int(spec)
    except ValueError:
        n = 0
    if n < 2:
        raise argparse.ArgumentTypeError("--reflect-every takes an integer >= 2 or 'off'")
    return n


def read_config_file(path) -> list[str]:
    """Turn ``key = value`` lines into the equivalent flags.

    Blank lines and ``#`` comments are skipped. ``key = true`` becomes a bare
    ``--key``; ``false`` drops it.
    """
    args = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
        else:
            key, _, value = line.partition(" ")
            value = value.strip()
        if not key:
            raise CliError(f"{path}:{n}: missing key")
        flag = "--" + key.lstrip("-").replace("_", "-")
        if value.lower() in ("true", "yes", "on", ""):
            args.append(flag)
        elif value.lower() in ("false", "no"):
            continue
        else:
            args += [flag, value]
    return args


def expand_config(argv: list[str]) -> list[str]:
    """Splice ``--config FILE`` contents in front of the other flags so flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    out, file_args, i = [], [], 0
    while i < len(argv):
        a = argv[i]
        if a == "--config":
            if i + 1 >= len(argv):
                raise CliError("--config needs a file")
            file_args += read_config_file(argv[i + 1])
            i += 2
            continue
        if a.startswith("--config="):
            file_args += read_config_file(a.split("=", 1)[1])
        else:
            out.append(a)
        i += 1
    if not out:
        return file_args
    return out[:1] + file_args + out[1:]


# ---------------------------------------------------------------- parser


def _add_solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--oracle", type=oracle_type, default=("gt", None),
                   help="cast judge: gt | noisy:P | statistical:PNORM | remote:URL (default: gt)")
    g.add_argument("--t-max", type=int, default=20, help="iteration limit (default: 20)")
    g.add_argument("--a-start", type=float, default=3.0, help="first step angle in degrees (default: 3.0)")
    g.add_argument("--a-end", type=float, default=0.1, help="last step angle in degrees (default: 0.1)")
    g.add_argument("--init", type=init_type, default=InitMethod(),
                   help="gray_world | shades_of_gray:P | gray_edge:ORDER:P:SIGMA | neutral | fixed:R,G,B "
                        "(default: gray_world)")
    g.add_argument("--reflect-every", type=reflect_type, default=6, metavar="N|off",
                   help="re-extract color priors every N iterations (default: 6)")
    g.add_argument("--no-gamma", action="store_true", help="skip the sRGB transfer curve")


def _add_run_flags(p: argparse.ArgumentParser, out_default="castwb_out"):
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, default=None, help="random seed (required for noisy oracles)")
    g.add_argument("--jobs", type=int, default=1, help="scenes solved in parallel (default: 1)")
    g.add_argument("--out", type=Path, default=Path(out_default), help=f"output directory (default: {out_default})")
    g.add_argument("--config", metavar="FILE", help="key = value file with defaults for these flags")


def _add_synthetic_flag(p):
    p.add_argument("--synthetic", type=int, metavar="N", default=None,
                   help="use N generated scenes (needs --seed) instead of a dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="castwb",
        description="Cast-feedback color constancy: estimate, evaluate, augment, serve.",
        formatter_class=_formatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("estimate", help="estimate one scene's illuminant", formatter_class=_formatter,
                       description="Run the feedback solver on one scene directory.")
    p.add_argument("scene_dir", type=Path, help="directory with image.png and meta.json")
    _add_solver_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="evaluate the solver on a dataset", formatter_class=_formatter,
                       description="Solve every scene and report angular-error statistics.")
    p.add_argument("dataset_root", type=Path, nargs="?", help="directory of scene directories")
    _add_synthetic_flag(p)
    _add_solver_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("augment", help="export a cast-labelled finetuning set", formatter_class=_formatter,
                       description="Re-tint scenes with perturbed illuminants and write PNGs plus a manifest.")
    p.add_argument("dataset_root", type=Path, nargs="?", help="directory of scene directories")
    p.add_argument("out_dir", type=Path, help="where images/ and manifest.jsonl are written")
    _add_synthetic_flag(p)
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--per-scene", type=int, default=4, help="samples per scene (default: 4)")
    p.add_argument("--max-deg", type=float, default=DEFAULT_MAX_DEG,
                   help=f"largest perturbation angle in degrees (default: {DEFAULT_MAX_DEG})")
    p.add_argument("--jobs", type=int, default=1, help="scenes processed in parallel (default: 1)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("mock-serve", help="serve a ground-truth mock of the cast service",
                       formatter_class=_formatter,
                       description="Answer /v1/cast and /v1/priors from dataset ground truth.")
    p.add_argument("dataset_root", type=Path, help="directory of scene directories")
    p.add_argument("--bind", default="127.0.0.1:8765", metavar="HOST:PORT",
                   help="listen address (default: 127.0.0.1:8765)")
    p.set_defaults(func=cmd_mock_serve)

    p = sub.add_parser("baseline", help="one-shot statistical estimates", formatter_class=_formatter,
                       description="Run a statistical estimator once per scene and report statistics.")
    p.add_argument("path", type=Path, nargs="?", help="a scene directory or a dataset root")
    _add_synthetic_flag(p)
    p.add_argument("--method", choices=["gray_world", "shades_of_gray", "gray_edge"], default="gray_world",
                   help="estimator (default: gray_world)")
    p.add_argument("--p", type=float, default=6.0, help="Minkowski order (default: 6)")
    p.add_argument("--order", type=int, choices=[1, 2], default=1, help="gray-edge derivative order (default: 1)")
    p.add_argument("--sigma", type=float, default=2.0, help="gray-edge smoothing in pixels (default: 2)")
    p.add_argument("--seed", type=int, default=None, help="seed for --synthetic")
    p.set_defaults(func=cmd_baseline)
    return parser


# ---------------------------------------------------------------- helpers


def solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(
            t_max=args.t_max,
            a_start=args.a_start,
            a_end=args.a_end,
            init=args.init,
            reflection_interval=args.reflect_every,
            gamma=not args.no_gamma,
        )
    except DomainError as exc:
        raise CliError(str(exc)) from exc


def oracle_factory(args):
    kind, arg = args.oracle
    if kind == "noisy" and args.seed is None:
        raise CliError("--oracle noisy:P needs --seed")
    if kind == "gt":
        return lambda scene: ground_truth_oracle(scene.meta.illuminant_gt)
    if kind == "noisy":
        return lambda scene: noisy_oracle(ground_truth_oracle(scene.meta.illuminant_gt), arg, args.seed)
    if kind == "statistical":
        return lambda scene: statistical_oracle(arg)
    remote = RemoteOracle(CastClient(arg))
    return lambda scene: remote


def _scenes(args, root) -> list:
    if getattr(args, "synthetic", None) is not None:
        if args.seed is None:
            raise CliError("--synthetic needs --seed")
        if args.synthetic < 1:
            raise CliError("--synthetic needs N >= 1")
        return make_dataset(args.synthetic, args.seed)
    if root is None:
        raise CliError("give a dataset directory or --synthetic N")
    dirs = list_scene_dirs(root)
    if not dirs:
        raise CliError(f"no scenes under {root}")
    return dirs


def _emit(doc: dict):
    sys.stdout.write(json.dumps(doc) + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------- commands


def cmd_estimate(args) -> int:
    cfg = solver_config(args)
    factory = oracle_factory(args)
    scene = read_scene(args.scene_dir)
    try:
        traj = solve(scene.image, scene.meta, factory(scene), cfg, scene_id=scene.scene_id)
    except SolveError as exc:
        raise CliError(f"oracle failed: {exc}", EXIT_ORACLE) from exc
    err = angular_error_deg(traj.final_estimate, scene.meta.illuminant_gt)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / f"{scene.scene_id}.trajectory.json").write_text(traj.dumps())
    export_trajectory_svg(traj, scene.meta.illuminant_gt, args.out / f"{scene.scene_id}.trajectory.svg")
    _emit({
        "scene_id": scene.scene_id,
        "final_estimate": [float(v) for v in traj.final_estimate],
        "error_deg": err,
        "iterations": traj.iterations,
        "stop_reason": traj.stop_reason,
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = solver_config(args)
    factory = oracle_factory(args)
    scenes = _scenes(args, args.dataset_root)
    try:
        result = run_protocol(scenes, factory, cfg, jobs=args.jobs, out_dir=args.out)
    except RunError as exc:
        first = next(iter(exc.failures.values()))
        code = EXIT_ORACLE if exc.oracle_failures_only else EXIT_INPUT
        raise CliError(f"{exc}; first: {first}", code) from exc
    rep = result.report
    print(rep.table(), file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} scenes failed; see {args.out / 'failures.json'}", file=sys.stderr)
    summary = rep.to_json()
    summary.pop("per_scene")
    summary["n_failed"] = len(result.failures)
    _emit(summary)
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.per_scene < 1:
        raise CliError("--per-scene must be >= 1")
    if not 0 < args.max_deg < 90:
        raise CliError("--max-deg must be in (0, 90)")
    scenes = _scenes(args, args.dataset_root)
    manifest = export_finetune_dataset(scenes, args.out_dir, args.per_scene, args.max_deg, args.seed, args.jobs)
    n = sum(1 for _ in manifest.open())
    _emit({"manifest": str(manifest), "samples": n})
    return EXIT_OK


def _parse_bind(bind: str):
    host, sep, port = bind.rpartition(":")
    if not sep or not host:
        raise CliError(f"bad bind address {bind!r}; expected HOST:PORT", EXIT_SERVER)
    try:
        port = int(port)
    except ValueError:
        raise CliError(f"bad port in {bind!r}", EXIT_SERVER) from None
    if not 0 <= port <= 65535:
        raise CliError(f"bad port in {bind!r}", EXIT_SERVER)
    return host, port


def cmd_mock_serve(args) -> int:
    address = _parse_bind(args.bind)
    try:
        server = mock_server(args.dataset_root, address)
    except OSError as exc:
        raise CliError(f"cannot bind {args.bind}: {exc}", EXIT_SERVER) from exc
    stop = threading.Event()

    def _on_signal(signum, frame):
        stop.set()

    previous = {s: signal.signal(s, _on_signal) for s in (signal.SIGINT, signal.SIGTERM)}
    server.start()
    print(f"listening on {server.url}", flush=True)
    try:
        stop.wait()
    finally:
        server.stop()
        for s, h in previous.items():
            signal.signal(s, h)
    print("stopped", file=sys.stderr)
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.path is not None and (args.path / META_NAME).exists():
        items = [args.path]
    else:
        items = _scenes(args, args.path)
    methods = {
        "gray_world": lambda img: gray_world(img),
        "shades_of_gray": lambda img: shades_of_gray(img, args.p),
        "gray_edge": lambda img: gray_edge(img, args.order, args.p, args.sigma),
    }
    estimate = methods[args.method]
    per_scene = []
    for item in items:
        scene = item if isinstance(item, Scene) else read_scene(item)
        est = estimate(scene.image)
        per_scene.append({
            "scene_id": scene.scene_id,
            "error_deg": angular_error_deg(est, scene.meta.illuminant_gt),
            "estimate": [float(v) for v in est],
        })
    rep = summarize([r["error_deg"] for r in per_scene], per_scene)
    print(rep.table(), file=sys.stderr)
    _emit(rep.to_json())
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = expand_config(argv)
    except CliError as exc:
        print(f"castwb: error: {exc}", file=sys.stderr)
        return exc.code
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"castwb: error: {exc}", file=sys.stderr)
        return exc.code
    except (WireError, OracleError) as exc:
        print(f"castwb: oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (SceneError, DomainError) as exc:
        print(f"castwb: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
