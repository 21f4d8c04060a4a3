"""Command-line operator surface.

Subcommands: ``run`` (UCB scheduler on a synthetic suite), ``baseline``
(reference selection policies), ``serve`` (sidecar protocol server),
``replay`` (trace audit), and ``suite`` (emit an aligned-suite config).
Diagnostics go to stderr (verbosity via the ASAP_LOG environment
variable); traces and results are written to files.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import driver, runconfig, traceio
from .environment import make_aligned_suite
from .errors import AsapError
from .protocol import Session, serve_socket, serve_stdio
from .rewards import AlphaSchedule

log = logging.getLogger("asap.cli")


def _setup_logging() -> None:
    level = os.environ.get("ASAP_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_run_config(args) -> driver.RunConfig:
    config = runconfig.load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.trace_path = Path(args.out) / "trace.csv"
    elif config.trace_path is None:
        config.trace_path = Path("trace.csv")
    return config


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    trace = driver.run(config)
    log.info(
        "run complete: %d turns, trace written to %s", len(trace.records), config.trace_path
    )
    return 0


def _cmd_baseline(args) -> int:
    config = _load_run_config(args)
    trace = driver.run_baseline(config, args.policy)
    log.info(
        "baseline %s complete: %d turns, trace written to %s",
        args.policy,
        len(trace.records),
        config.trace_path,
    )
    return 0


def _cmd_serve(args) -> int:
    session = Session(
        beta=args.beta,
        alpha_schedule=AlphaSchedule(
            kind=args.alpha_kind,
            alpha0=args.alpha0,
            alpha_min=args.alpha_min,
            decay=args.alpha_decay,
        ),
        pm_eval=args.pm_eval,
        normalization=args.normalization,
        checkpoint_path=args.checkpoint,
    )
    if args.stdio:
        return serve_stdio(session)
    host, _, port = args.listen.rpartition(":")
    return serve_socket(session, host or "127.0.0.1", int(port))


def _cmd_replay(args) -> int:
    problems = traceio.verify_trace(Path(args.trace))
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 1
    log.info("trace %s verified clean", args.trace)
    return 0


def _cmd_suite(args) -> int:
    if args.name != "aligned":
        raise AsapError(f"unknown suite {args.name!r}; available: aligned")
    env, cert = make_aligned_suite(
        dim=args.dim,
        num_aux=args.arms,
        aligned_index=args.aligned_index,
        alignment_cos=args.cos,
        seed=args.seed,
        learning_rate=args.eta,
        noise_std=args.noise_std,
        curvature=args.curvature,
    )
    config = driver.RunConfig(
        horizon=args.horizon,
        environment=env,
        beta=args.beta,
        alpha_schedule=AlphaSchedule(kind="linear", alpha0=0.5, alpha_min=0.0),
        seed=args.seed,
    )
    runconfig.save_config(
        config,
        args.emit,
        certificate={
            "aligned_index": cert.aligned_index,
            "requested_cos": cert.requested_cos,
            "cosines": list(cert.cosines),
        },
    )
    log.info("suite config written to %s", args.emit)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asap",
        description="Sequential auxiliary-dataset selection with a UCB bandit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the scheduler on a synthetic suite")
    p_run.add_argument("--config", required=True, help="run configuration file (JSON)")
    p_run.add_argument("--out", default=None, help="directory for the trace files")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.set_defaults(func=_cmd_run)

    p_base = sub.add_parser("baseline", help="run a reference selection policy")
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--out", default=None)
    p_base.add_argument("--seed", type=int, default=None)
    p_base.add_argument(
        "--policy", required=True, choices=list(driver.BASELINE_POLICIES)
    )
    p_base.set_defaults(func=_cmd_baseline)

    p_serve = sub.add_parser("serve", help="serve the sidecar protocol")
    transport = p_serve.add_mutually_exclusive_group(required=True)
    transport.add_argument("--stdio", action="store_true", help="speak over stdin/stdout")
    transport.add_argument("--listen", help="listen on host:port for one session")
    p_serve.add_argument("--beta", type=float, default=0.1)
    p_serve.add_argument("--alpha-kind", default="linear", dest="alpha_kind",
                         choices=["linear", "exponential", "constant"])
    p_serve.add_argument("--alpha0", type=float, default=0.5)
    p_serve.add_argument("--alpha-min", type=float, default=0.0, dest="alpha_min")
    p_serve.add_argument("--alpha-decay", type=float, default=0.99, dest="alpha_decay")
    p_serve.add_argument("--pm-eval", default="pre_update", dest="pm_eval",
                         choices=["pre_update", "post_update"])
    p_serve.add_argument("--normalization", default="raw",
                         choices=["raw", "running_minmax"])
    p_serve.add_argument("--checkpoint", default=None,
                         help="write the policy checkpoint here after each turn")
    p_serve.set_defaults(func=_cmd_serve)

    p_replay = sub.add_parser("replay", help="audit a trace for internal consistency")
    p_replay.add_argument("--trace", required=True, help="path to the trace CSV")
    p_replay.set_defaults(func=_cmd_replay)

    p_suite = sub.add_parser("suite", help="emit a synthetic suite configuration")
    p_suite.add_argument("--name", required=True, help="suite family (aligned)")
    p_suite.add_argument("--dim", type=int, required=True)
    p_suite.add_argument("--arms", type=int, required=True)
    p_suite.add_argument("--cos", type=float, required=True)
    p_suite.add_argument("--seed", type=int, default=0)
    p_suite.add_argument("--emit", required=True, help="output configuration path")
    p_suite.add_argument("--aligned-index", type=int, default=0, dest="aligned_index")
    p_suite.add_argument("--horizon", type=int, default=500)
    p_suite.add_argument("--beta", type=float, default=0.1)
    p_suite.add_argument("--eta", type=float, default=0.05)
    p_suite.add_argument("--noise-std", type=float, default=0.0, dest="noise_std")
    p_suite.add_argument("--curvature", type=float, default=1.0)
    p_suite.set_defaults(func=_cmd_suite)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AsapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
