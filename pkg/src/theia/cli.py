"""Command-line front end.

Subcommands:

* ``corpus gen`` -- synthesize a planted photo corpus on disk
* ``serve`` -- run the coordinator HTTP server (optionally with an attached
  in-process fleet loaded from a corpus directory)
* ``device run`` -- run one emulated device against a remote server
* ``query submit`` -- submit a query and optionally follow the stream
* ``experiment incremental|partition|dynamic|latency`` -- the runners;
  exit code 0 only if the run's asserted properties hold
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from theia.config import load_config
from theia.corpus import CorpusSpec, generate_corpus
from theia.experiments import (
    UserPolicy,
    incremental_config,
    partition_config,
    run_dynamic_experiment,
    run_incremental_experiment,
    run_latency_experiment,
    run_partition_experiment,
)
from theia.templates import all_accept_query, face_query, sky_query
from theia.query import parse_query, serialize_query


def _cmd_corpus_gen(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        devices=args.devices,
        photos_per_device=args.photos_per_device,
        locality=args.locality,
        relevant_fraction=args.relevant_fraction,
        decoy_fraction=args.decoy_fraction,
        width=args.width,
        height=args.height,
        seed=args.seed,
    )
    manifest = generate_corpus(spec, args.out)
    print(
        f"wrote {manifest.total_photos()} photos on {spec.devices} devices "
        f"({manifest.total_relevant()} relevant, hot={manifest.hot_devices}) to {args.out}"
    )
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from theia.device import DeviceEngine, DirCorpus
    from theia.httpapi import build_app
    from theia.server import TheiaServer

    config = load_config(args.config)
    server = TheiaServer(config)
    if args.corpus:
        corpus_root = Path(args.corpus)
        for device_dir in sorted(p for p in corpus_root.iterdir() if p.is_dir()):
            engine = DeviceEngine(
                device_dir.name,
                DirCorpus(device_dir),
                args.state,
                config.profile(args.profile),
                config,
                seed=args.seed,
            )
            server.attach_engine(engine)
        print(f"attached {len(server.engines)} in-process devices from {corpus_root}")
    app = build_app(server, pace_scale=args.pace)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_device_run(args: argparse.Namespace) -> int:
    from theia.devclient import run_device_loop
    from theia.device import DeviceEngine, DirCorpus

    config = load_config(args.config)
    engine = DeviceEngine(
        args.id,
        DirCorpus(args.corpus),
        args.state,
        config.profile(args.profile),
        config,
        seed=args.seed,
    )
    executed = run_device_loop(args.server, engine, once=args.once)
    print(f"{args.id}: executed {executed} task(s)")
    return 0


TEMPLATES = {
    "all_accept": all_accept_query,
    "sky": sky_query,
    "face": face_query,
}


def _cmd_query_submit(args: argparse.Namespace) -> int:
    import httpx

    if args.xml:
        xml_text = Path(args.xml).read_text()
    elif args.template:
        query_id = args.query_id if args.query_id is not None else int(time.time()) % 2**31
        xml_text = serialize_query(TEMPLATES[args.template](query_id))
    else:
        print("need --xml or --template", file=sys.stderr)
        return 2
    parse_query(xml_text)  # fail fast client-side
    with httpx.Client(base_url=args.server, timeout=60.0) as client:
        resp = client.post(
            "/queries", json={"query_xml": xml_text, "budget": args.budget, "seed": args.seed}
        )
        if resp.status_code != 200:
            print(f"rejected: {resp.status_code} {resp.text}", file=sys.stderr)
            return 1
        body = resp.json()
        print(json.dumps(body))
        if not args.follow:
            return 0
        cursor = 0
        while True:
            page = client.get(f"/queries/{body['session_id']}/results", params={"cursor": cursor})
            for line in page.text.splitlines():
                print(line)
                if json.loads(line).get("type") == "complete":
                    return 0
            cursor = int(page.headers["X-Next-Cursor"])
            time.sleep(0.2)


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else None
    out = args.out
    if args.kind == "incremental":
        spec = CorpusSpec(
            devices=args.devices, photos_per_device=args.photos_per_device,
            locality=args.locality, seed=args.seed,
        )
        report = run_incremental_experiment(
            spec,
            UserPolicy("oracle-feedback", target_relevant=args.target),
            config=config or incremental_config(),
            seed=args.seed,
            out=out,
        )
        t = report["totals"]
        print(
            f"incremental: {t['relevant_found']} relevant in {t['submissions']} submissions, "
            f"{t['cost_per_relevant']:.2f}/relevant vs single-pass "
            f"{report['baselines']['single_pass_per_relevant']:.2f} -> ok={report['ok']}"
        )
    elif args.kind == "partition":
        report = run_partition_experiment(config=config, seed=args.seed, out=out)
        for row in report["table"]:
            print(
                f"{row['query']:7s} {row['profile']:4s} {row['strategy']:11s} "
                f"energy={row['energy_mj']:11.1f} mJ  time={row['time_s']:8.2f} s"
            )
        print(f"partition ok={report['ok']} {report['failures'] or ''}")
    elif args.kind == "dynamic":
        report = run_dynamic_experiment(config=config, seed=args.seed, out=out)
        print(
            f"dynamic: baseline index {report['baseline_offload_index']}, "
            f"shifted at photo {report['shifted_at_photo']}, "
            f"restored at photo {report['restored_at_photo']} -> ok={report['ok']}"
        )
    else:
        report = run_latency_experiment(
            config=config, seed=args.seed, wall_clock=args.wall_clock, out=out
        )
        for row in report["table"]:
            first = row["first_result_virtual_ms"]
            gap = row["inter_result_virtual_ms"]
            print(
                f"{row['query']:10s} fleet={row['fleet']} first={first['median']} ms "
                f"interval={gap['median']} ms"
            )
        print(f"latency ok={report['ok']} {report['failures'] or ''}")
    return 0 if report["ok"] else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="theia")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus tools")
    corpus_sub = corpus.add_subparsers(dest="corpus_cmd", required=True)
    gen = corpus_sub.add_parser("gen", help="generate a planted corpus")
    gen.add_argument("--devices", type=int, default=85)
    gen.add_argument("--photos-per-device", type=int, default=36)
    gen.add_argument("--locality", type=float, default=0.8)
    gen.add_argument("--relevant-fraction", type=float, default=0.08)
    gen.add_argument("--decoy-fraction", type=float, default=0.06)
    gen.add_argument("--width", type=int, default=64)
    gen.add_argument("--height", type=int, default=48)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_corpus_gen)

    serve = sub.add_parser("serve", help="run the coordinator HTTP server")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8787)
    serve.add_argument("--config", default=None)
    serve.add_argument("--corpus", default=None, help="attach an in-process fleet from this corpus dir")
    serve.add_argument("--state", default="state")
    serve.add_argument("--profile", default="wifi")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--pace", type=float, default=2e-5,
                       help="wall seconds per virtual ms for live streaming (0 = instant)")
    serve.set_defaults(func=_cmd_serve)

    device = sub.add_parser("device", help="device tools")
    device_sub = device.add_subparsers(dest="device_cmd", required=True)
    drun = device_sub.add_parser("run", help="run one emulated device against a server")
    drun.add_argument("--id", required=True)
    drun.add_argument("--server", default="http://127.0.0.1:8787")
    drun.add_argument("--corpus", required=True, help="this device's photo directory")
    drun.add_argument("--state", default="state")
    drun.add_argument("--profile", default="wifi")
    drun.add_argument("--config", default=None)
    drun.add_argument("--seed", type=int, default=0)
    drun.add_argument("--once", action="store_true")
    drun.set_defaults(func=_cmd_device_run)

    query = sub.add_parser("query", help="query tools")
    query_sub = query.add_subparsers(dest="query_cmd", required=True)
    qsub = query_sub.add_parser("submit", help="submit a query")
    qsub.add_argument("--server", default="http://127.0.0.1:8787")
    qsub.add_argument("--xml", default=None)
    qsub.add_argument("--template", choices=sorted(TEMPLATES), default=None)
    qsub.add_argument("--query-id", type=int, default=None)
    qsub.add_argument("--budget", type=int, required=True)
    qsub.add_argument("--seed", type=int, default=0)
    qsub.add_argument("--follow", action="store_true")
    qsub.set_defaults(func=_cmd_query_submit)

    exp = sub.add_parser("experiment", help="experiment runners")
    exp.add_argument("kind", choices=["incremental", "partition", "dynamic", "latency"])
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--config", default=None)
    exp.add_argument("--out", default=None)
    exp.add_argument("--wall-clock", action="store_true")
    exp.add_argument("--devices", type=int, default=85)
    exp.add_argument("--photos-per-device", type=int, default=36)
    exp.add_argument("--locality", type=float, default=0.8)
    exp.add_argument("--target", type=int, default=30)
    exp.set_defaults(func=_cmd_experiment)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
