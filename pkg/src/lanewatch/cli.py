"""Command-line pipeline: gen -> train -> compile -> serve / simulate -> report.

Every subcommand is deterministic given its flags and seeds and drops a
manifest.json next to its outputs recording the resolved parameters, input
and output paths, the model checksum where applicable, and wall-clock timing.

Exit codes: 0 success, 2 usage, 3 I/O error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, kg, kge, protocol, report, sim, table as table_mod

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONTRACT = 4


class UsageError(ValueError):
    pass


def _write_manifest(out_dir: Path, payload: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _manifest(subcommand: str, params: dict, inputs: dict, outputs: dict,
              started: float, **extra) -> dict:
    return {
        "subcommand": subcommand,
        "parameters": params,
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": time.perf_counter() - started,
        **extra,
    }


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


# --- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    started = time.perf_counter()
    if args.n <= 0:
        raise UsageError("--n must be positive")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = kg.generate_synthetic_corpus(args.n, args.seed, profile=args.profile)
    kg.save_corpus_csv(records, out)
    counts = {label: sum(1 for r in records if r.intention == label) for label in kg.INTENTIONS}
    print(f"wrote {len(records)} records to {out} (LLC={counts['LLC']} LK={counts['LK']} RLC={counts['RLC']})")
    _write_manifest(out.parent, _manifest(
        "gen",
        {"n": args.n, "seed": args.seed, "profile": args.profile},
        {}, {"corpus": str(out)}, started, class_counts=counts,
    ))
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    config = kge.TrainConfig(
        dimension=args.dim,
        epochs=args.epochs,
        learning_rate=args.lr,
        negatives_per_positive=args.negatives,
        margin=args.margin,
        rng_seed=args.seed,
    )
    if args.corpus:
        records = kg.load_corpus_csv(args.corpus)
        graph, held_out = kg.split_for_eval(records, args.holdout, args.seed)
        source = args.corpus
    else:
        graph = kg.load_triples_csv(args.triples)
        held_out = ()
        source = args.triples
    logger.info("training on %d triples (%d entities, %d relations)",
                len(graph), len(graph.entities), len(graph.relations))
    model = kge.train(graph, config)
    kge.save_model(model, out)
    eval_metrics = None
    if held_out:
        metrics = kge.rank_eval(model, held_out, known_true=graph.triples + held_out)
        eval_metrics = dataclasses.asdict(metrics)
        print(f"held-out ranking: MRR={metrics.mrr:.3f} hits@1={metrics.hits_at_1:.3f} "
              f"hits@3={metrics.hits_at_3:.3f} over {metrics.count} ranks")
    print(f"wrote model to {out} (checksum {model.checksum[:12]}...)")
    _write_manifest(out.parent, _manifest(
        "train", dataclasses.asdict(config), {"source": str(source)},
        {"model": str(out)}, started,
        model_checksum=model.checksum, rank_eval=eval_metrics,
    ))
    return EXIT_OK


def cmd_compile(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = kge.load_model(args.model)
    compiled = table_mod.compile_table(model, scope=args.scope)
    table_mod.save_table_csv(compiled, out)
    print(f"compiled {len(compiled)} rows ({args.scope} scope) to {out}")
    _write_manifest(out.parent, _manifest(
        "compile", {"scope": args.scope}, {"model": str(args.model)},
        {"table": str(out)}, started, model_checksum=model.checksum, rows=len(compiled),
    ))
    return EXIT_OK


def _check_table_freshness(loaded: table_mod.PredictionTable, model_path: str | None) -> None:
    if not model_path:
        return
    checksum = kge.load_model(model_path).checksum
    if checksum != loaded.source_model_id:
        logger.warning(
            "table was compiled from model %s... but %s has checksum %s...: stale table?",
            loaded.source_model_id[:12], model_path, checksum[:12],
        )


def cmd_serve(args) -> int:
    host, port = _parse_endpoint(args.endpoint)
    loaded = table_mod.load_table_csv(args.table)
    _check_table_freshness(loaded, args.model)
    actuation = _actuation_sink(args.actuation)
    server = protocol.PredictionServer(loaded, host, port, actuation=actuation)
    bound = server.address
    print(f"serving {len(loaded)} rows on {bound[0]}:{bound[1]} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def _actuation_sink(spec: str | None):
    if not spec:
        return None
    if ":" in spec and spec.rsplit(":", 1)[1].isdigit():
        host, port = _parse_endpoint(spec)
        return protocol.SocketLineSink(host, port)
    return protocol.FileLineSink(spec)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = sim.load_scenario_config(args.config) if args.config else sim.ScenarioConfig()
    config = dataclasses.replace(config, prediction_enabled=args.prediction == "on")
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)

    transport = None
    server_proc = None
    model_checksum = None
    try:
        if config.prediction_enabled:
            if not args.table:
                raise UsageError("--table is required when prediction is on")
            loaded = table_mod.load_table_csv(args.table)
            _check_table_freshness(loaded, args.model)
            model_checksum = loaded.source_model_id
            if args.mode == "inprocess":
                transport = sim.InProcessTransport(loaded)
            else:
                transport, server_proc = _socket_transport(args, loaded)
        trace, metrics = sim.run_scenario(config, transport)
    finally:
        if transport is not None:
            transport.close()
        if server_proc is not None:
            server_proc.terminate()
            server_proc.wait(timeout=10)

    trace_path = out_dir / "trace.csv"
    metrics_path = out_dir / "metrics.txt"
    trace.save_csv(trace_path)
    sim.save_metrics(metrics, metrics_path)
    print(f"simulated {metrics.ticks} ticks (prediction {args.prediction}) -> {trace_path}")
    if metrics.anticipation_horizon is not None:
        print(f"anticipation horizon: {metrics.anticipation_horizon:.2f} s")
    if metrics.tv_emergency_onset_time is not None:
        print(f"TV emergency braking at t={metrics.tv_emergency_onset_time:.2f} s")
    _write_manifest(out_dir, _manifest(
        "simulate",
        {"prediction": args.prediction, "mode": args.mode, "config": config.to_dict()},
        {"table": str(args.table) if args.table else None},
        {"trace": str(trace_path), "metrics": str(metrics_path)},
        started, model_checksum=model_checksum,
    ))
    return EXIT_OK


def _socket_transport(args, loaded):
    """Spawn a serve subprocess and wire client plus actuation stream to it."""
    import subprocess

    host, port = _parse_endpoint(args.endpoint)
    listener = protocol.ActuationListener()
    a_host, a_port = listener.address
    proc = subprocess.Popen(
        [sys.executable, "-m", "lanewatch", "serve",
         "--table", str(args.table),
         "--endpoint", f"{host}:{port}",
         "--actuation", f"{a_host}:{a_port}"],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    listener.accept(timeout_s=15.0)
    client = protocol.PerceptionClient(host, port, retries=10, retry_delay_s=0.3)
    return sim.SocketTransport(client, listener), proc


def cmd_report(args) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    result = report.write_report(args.traces, out_dir)
    print(result["text"], end="")
    print(f"report written to {out_dir}")
    _write_manifest(out_dir, _manifest(
        "report", {}, {"traces": [str(t) for t in args.traces]},
        {k: v for k, v in result.items() if k != "text"}, started,
    ))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanewatch",
        description="Lane-change anticipation pipeline: corpus, embeddings, "
                    "prediction table, serving, and the braking-demo simulator.",
    )
    parser.add_argument("--version", action="version", version=f"lanewatch {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled synthetic corpus CSV")
    p.add_argument("--n", type=int, required=True, help="number of instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("episodic", "uniform"), default="episodic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train embeddings from a corpus or triples CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="corpus CSV from `gen`")
    src.add_argument("--triples", help="raw subject,predicate,object CSV")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=float, default=0.1,
                   help="fraction of instances whose intention edges are held out for ranking eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile", help="precompute the prediction table CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--scope", choices=table_mod.SCOPES, default="scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("serve", help="run the prediction server on a compiled table")
    p.add_argument("--table", required=True)
    p.add_argument("--endpoint", default="127.0.0.1:8707")
    p.add_argument("--actuation", help="actuation channel: host:port or a file path")
    p.add_argument("--model", help="optional model file to verify the table checksum against")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run the braking scenario and write trace + metrics")
    p.add_argument("--table", help="compiled prediction table (required with --prediction on)")
    p.add_argument("--prediction", choices=("on", "off"), required=True)
    p.add_argument("--mode", choices=("inprocess", "socket"), default="inprocess")
    p.add_argument("--endpoint", default="127.0.0.1:8707", help="server endpoint for socket mode")
    p.add_argument("--config", help="scenario config file (key=value lines)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--model", help="optional model file to verify the table checksum against")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize and plot one or more trace files")
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
