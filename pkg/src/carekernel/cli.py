"""carekernel command line.

  serve        run the HTTP service over a database file
  sim run      drive a scenario against a running server, write a transcript
  sim verify   evaluate declarative assertions against a transcript
  report       render summary/stream reports (CSV + PNG) from a server
  dump         write a versioned JSON archive of the database
  restore      load a dump archive into an empty database
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="carekernel")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--db", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8760)
    serve.add_argument("--simulation", action="store_true",
                       help="manual clock + test-only endpoints (never in production)")
    serve.add_argument("--bootstrap-admin-secret",
                       help="create the root admin with this secret if absent")
    serve.add_argument("--matrix", help="permission matrix file (default: shipped)")
    serve.add_argument("--token-lifetime-hours", type=float, default=24.0)
    serve.add_argument("--webhook-backoff", default="1,4,16",
                       help="comma-separated retry delays in seconds")
    serve.add_argument("--tick-seconds", type=float, default=60.0)

    sim = sub.add_parser("sim", help="participant/device simulator")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    sim_run = sim_sub.add_parser("run")
    sim_run.add_argument("scenario")
    sim_run.add_argument("--server", required=True)
    sim_run.add_argument("--admin-secret", required=True)
    sim_run.add_argument("--speed", default="instant",
                         help="instant | realtime | accelerated:<factor>")
    sim_run.add_argument("--seed", type=int)
    sim_run.add_argument("--out", help="transcript path (JSONL)")
    sim_verify = sim_sub.add_parser("verify")
    sim_verify.add_argument("transcript")
    sim_verify.add_argument("assertions")

    report = sub.add_parser("report", help="render CSV + figure reports")
    report_sub = report.add_subparsers(dest="report_command", required=True)
    rsum = report_sub.add_parser("summary")
    rsum.add_argument("--server", required=True)
    rsum.add_argument("--credential", required=True)
    rsum.add_argument("--study", required=True)
    rsum.add_argument("--date", required=True)
    rsum.add_argument("--out", required=True)
    rstream = report_sub.add_parser("stream")
    rstream.add_argument("--server", required=True)
    rstream.add_argument("--credential", required=True)
    rstream.add_argument("--study", required=True)
    rstream.add_argument("--stream", required=True)
    rstream.add_argument("--from", dest="ts_from", required=True)
    rstream.add_argument("--to", dest="ts_to", required=True)
    rstream.add_argument("--bin", default="1h")
    rstream.add_argument("--fn", default="mean")
    rstream.add_argument("--participant")
    rstream.add_argument("--field")
    rstream.add_argument("--out", required=True)

    dump = sub.add_parser("dump", help="write a JSON archive of the database")
    dump.add_argument("--db", required=True)
    dump.add_argument("--out", required=True)

    restore = sub.add_parser("restore", help="load a JSON archive")
    restore.add_argument("--db", required=True)
    restore.add_argument("--archive", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")

    if args.command == "serve":
        return _serve(args)
    if args.command == "sim":
        return _sim(args)
    if args.command == "report":
        return _report(args)
    if args.command == "dump":
        from .storage import dump_to_file, open_storage

        dump_to_file(open_storage(args.db), args.out)
        print(f"archive written to {args.out}")
        return 0
    if args.command == "restore":
        from .storage import open_storage, restore_from_file

        restore_from_file(open_storage(args.db), args.archive)
        print(f"restored {args.archive} into {args.db}")
        return 0
    return 2


def _serve(args) -> int:
    from .http_api import SchedulerThread, make_server
    from .service import open_kernel

    try:
        backoff = tuple(float(x) for x in args.webhook_backoff.split(","))
        kernel = open_kernel(
            args.db, simulation=args.simulation, matrix_path=args.matrix,
            token_lifetime_hours=args.token_lifetime_hours,
            webhook_backoff=backoff,
        )
    except ConfigError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    if args.bootstrap_admin_secret:
        kernel.gateway.ensure_bootstrap_admin(args.bootstrap_admin_secret)

    server = make_server(kernel, host=args.host, port=args.port)
    scheduler = None
    if not args.simulation:
        scheduler = SchedulerThread(kernel, interval_seconds=args.tick_seconds)
        scheduler.start()
    mode = "simulation" if args.simulation else "production"
    print(f"carekernel serving on http://{args.host}:{server.server_address[1]} "
          f"({mode}, db={args.db})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        if scheduler is not None:
            scheduler.stop()
        server.server_close()
    return 0


def _sim(args) -> int:
    if args.sim_command == "run":
        from .simulator.client import ScenarioAborted
        from .simulator.runner import run_scenario

        try:
            summary = run_scenario(
                args.scenario, args.server, args.admin_secret,
                speed=args.speed, seed=args.seed, out_path=args.out,
            )
        except ScenarioAborted as exc:
            print(f"scenario aborted: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(summary, indent=1))
        return 0
    if args.sim_command == "verify":
        from .simulator.verify import AssertionSyntaxError, verify_transcript

        try:
            failures = verify_transcript(args.transcript, args.assertions)
        except AssertionSyntaxError as exc:
            print(f"bad assertions file: {exc}", file=sys.stderr)
            return 2
        if failures:
            for failure in failures:
                print(f"FAIL {failure}")
            return 1
        print("pass")
        return 0
    return 2


def _report(args) -> int:
    from .report import ReportClient, stream_report, summary_report

    client = ReportClient(args.server, args.credential)
    if args.report_command == "summary":
        result = summary_report(client, args.study, args.date, args.out)
    else:
        result = stream_report(client, args.study, args.stream, args.ts_from,
                               args.ts_to, args.bin, args.fn, args.out,
                               participant=args.participant, field=args.field)
    print(json.dumps(result, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
