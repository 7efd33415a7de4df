"""Command line interface.

Commands:

* ``run`` executes a configured experiment. ``--mode inprocess`` (default)
  runs the whole grid with in-process swarms; ``--mode coordinator`` serves
  the barrier exchange for one networked run; ``--mode worker`` runs one
  particle process against a coordinator.
* ``verify`` runs the invariant suites and prints one PASS/FAIL line per
  check.
* ``plot-emit`` turns trajectory logs into per-epoch CSV series plus a
  rendered PNG.

Every flag falls back to an environment variable of the same name,
upper-cased and prefixed with ``SWARMGRAD_`` (for example
``SWARMGRAD_CONFIG``).

Exit codes: 0 success, 2 configuration error, 3 protocol failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, ProtocolError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_VERIFY = 4


def _env(name: str, default=None):
    return os.environ.get(f"SWARMGRAD_{name.upper()}", default)


def _split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {addr!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmgrad",
        description="Collaborative swarm-gradient training experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment, coordinator, or worker")
    run.add_argument("--config", default=_env("config"),
                     help="experiment config JSON (or SWARMGRAD_CONFIG)")
    run.add_argument("--mode", default=_env("mode", "inprocess"),
                     choices=["inprocess", "coordinator", "worker"])
    run.add_argument("--listen", default=_env("listen"),
                     help="coordinator bind address HOST:PORT")
    run.add_argument("--connect", default=_env("connect"),
                     help="coordinator address a worker connects to")
    run.add_argument("--seed", type=int,
                     default=int(_env("seed", "0")) if _env("seed") else None,
                     help="base seed (overrides the config seed list)")
    run.add_argument("--out", default=_env("out"), help="output directory")
    run.add_argument("--timeout", type=float, default=None,
                     help="barrier timeout in seconds (overrides config)")
    run.add_argument("--fail-at-epoch", type=int, default=None,
                     help="fault injection: worker exits before publishing this epoch")

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--suite", default="all",
                     choices=["gradients", "dynamics", "protocol", "all"])

    plot = sub.add_parser("plot-emit", help="emit CSV series and figures from logs")
    plot.add_argument("logs", nargs="+", help="trajectory JSONL files")
    plot.add_argument("--out", default=_env("out", "plots"))
    plot.add_argument("--stem", default="series", help="output file stem")
    return parser


def _require_config(args):
    from .config import load_config
    if not args.config:
        raise ConfigError("--config is required (or set SWARMGRAD_CONFIG)")
    return load_config(args.config)


def _cmd_run(args, parser) -> int:
    cfg = _require_config(args)
    if args.mode == "inprocess":
        from .experiment import run_experiment
        if args.seed is not None:
            cfg.raw["seeds"] = [args.seed]
        report = run_experiment(cfg, out_dir=args.out)
        print(f"summary: {report['summary_csv']}")
        print(f"runs:    {report['runs_csv']}")
        print(f"figures: {report['figures_dir']}")
        return EXIT_OK

    if args.mode == "coordinator":
        from .coordinator import CoordinatorServer
        host, port = _split_addr(args.listen) if args.listen else cfg.coordinator_listen
        timeout = args.timeout if args.timeout is not None else cfg.coordinator_timeout
        seed = args.seed if args.seed is not None else cfg.seeds[0]
        run_id = f"{cfg.run_id}-s{seed}"
        out = Path(args.out or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / f"coordinator_{run_id}.jsonl"
        server = CoordinatorServer(host, port, cfg.swarm["num_particles"],
                                   run_id, log_path, barrier_timeout=timeout)
        print(f"coordinator listening on {server.address[0]}:{server.address[1]} "
              f"(run {run_id}, log {log_path})", flush=True)
        try:
            server.serve()
        except KeyboardInterrupt:
            pass
        failed = server.failed
        server.stop()
        print(f"coordinator done (failed={failed})")
        return EXIT_PROTOCOL if failed else EXIT_OK

    # worker
    from .config import build_dynamics, build_model_and_data, learning_rate_for
    from .data import accuracy
    from .worker import CoordinatorClient, run_particle
    addr = args.connect or args.listen
    host, port = _split_addr(addr) if addr else cfg.coordinator_listen
    timeout = args.timeout if args.timeout is not None else cfg.coordinator_timeout
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    run_id = f"{cfg.run_id}-s{seed}"
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model_factory, train, test = build_model_and_data(cfg)
    from .core import Dynamic
    dyn_name = cfg.raw["dynamics"].get("dynamic", "dynamic1")
    dynamics = build_dynamics(cfg, Dynamic(dyn_name))
    model = model_factory()
    eval_fn = None
    if test is not None:
        def eval_fn(params):
            return {"test_accuracy": accuracy(model.predict(params, test.inputs),
                                              test.labels)}

    client = CoordinatorClient(host, port)
    try:
        pid = client.register(run_id, cfg.swarm["num_particles"])
        log_path = out / f"trajectory_{run_id}_p{pid}.jsonl"
        result = run_particle(
            model, train, dynamics, client,
            epochs=int(cfg.swarm["epochs"]),
            batch_size=int(cfg.swarm["batch_size"]),
            learning_rate=learning_rate_for(cfg, seed), base_seed=seed,
            run_id=run_id, expected_particles=cfg.swarm["num_particles"],
            particle_id=pid, log_path=log_path, eval_fn=eval_fn,
            barrier_timeout=timeout,
            exchange_gradient=str(cfg.swarm["exchange_gradient"]),
            fail_at_epoch=args.fail_at_epoch)
    finally:
        client.close()
    print(f"worker {result.particle_id} done: best_loss={result.best_loss!r} "
          f"log={log_path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_suite
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_plot(args) -> int:
    from .experiment import plot_emit
    csv_path, fig_path = plot_emit(args.logs, args.out, stem=args.stem)
    print(f"series:  {csv_path}")
    print(f"figure:  {fig_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, parser)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_plot(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
