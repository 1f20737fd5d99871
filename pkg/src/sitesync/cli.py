"""Operator entry points. The server runs under `serve`; everything else is a
thin client over the library or the HTTP/WebSocket surface.

Exit codes: 0 success, 1 user error (bad flags, unreadable input, bind
failure), 2 internal error (scenario step failures and unexpected crashes).
"""
from __future__ import annotations

import json
import logging
import os
import signal
import socket
import sys

import click

from . import alignment, netsim
from .client import ScenarioError, WsTransport, load_scenario, run_scenario

LOG_ENV = "SITESYNC_LOG"
DATA_DIR_ENV = "SITESYNC_DATA_DIR"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL = 2


class UserError(click.ClickException):
    exit_code = EXIT_USER_ERROR


def _setup_logging():
    level = os.environ.get(LOG_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(asctime)s %(name)s %(levelname)s %(message)s")


@click.group()
def cli():
    """Collaborative structural-inspection sessions."""
    _setup_logging()


@cli.command()
@click.option("--listen", default="127.0.0.1:8750", show_default=True, help="host:port to bind")
@click.option(
    "--data-dir",
    default=lambda: os.environ.get(DATA_DIR_ENV, "./sitesync-data"),
    help=f"state directory (or ${DATA_DIR_ENV})",
)
def serve(listen, data_dir):
    """Run the session server until SIGTERM/SIGINT."""
    import uvicorn

    from .service import DataStore, SessionService
    from .service.app import create_app

    try:
        host, _, port_text = listen.rpartition(":")
        port = int(port_text)
    except ValueError:
        raise UserError(f"--listen must be host:port, got {listen!r}")
    host = host or "127.0.0.1"
    probe = socket.socket()
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise UserError(f"cannot bind {listen}: {exc}")
    finally:
        probe.close()

    service = SessionService(DataStore(data_dir))
    app = create_app(service)
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="info"))

    def handle_sigterm(_signum, _frame):
        server.should_exit = True

    signal.signal(signal.SIGTERM, handle_sigterm)
    try:
        server.run()
    finally:
        service.close()
        logging.getLogger(__name__).info("server stopped; state flushed to %s", data_dir)


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--server", "server_url", required=True, help="base URL, e.g. http://127.0.0.1:8750")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json", show_default=True)
def simulate(scenario_path, profile_path, server_url, seed, fmt):
    """Run a scripted inspection scenario against a server; report to stdout."""
    try:
        scenario = load_scenario(scenario_path)
        profiles = netsim.load_profiles(profile_path)
    except (ValueError, KeyError, OSError) as exc:
        raise UserError(f"cannot load inputs: {exc}")
    profile = profiles[0]

    try:
        report = run_scenario(scenario, lambda client_id: WsTransport(server_url, client_id), profile, seed)
    except ScenarioError as exc:
        click.echo(json.dumps({"error": str(exc), "client_id": exc.client_id, "step_index": exc.step_index}))
        sys.exit(EXIT_INTERNAL)

    if fmt == "json":
        click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        click.echo(f"scenario {report.scenario}: {report.event_accounting['applied']} events applied")
        for op, samples in report.timings.items():
            if samples:
                click.echo(f"  {op}: n={len(samples)} median={alignment.percentile(samples, 50):.1f} ms")
        click.echo(f"  final state hash: {report.final_state_hash}")
    if report.errors:
        click.echo(f"scenario errors: {report.errors}", err=True)
        sys.exit(EXIT_INTERNAL)


@cli.command("eval-alignment")
@click.argument("trial_log", type=click.Path(exists=True, dir_okay=False))
@click.option("--tolerance", "tolerances", multiple=True, type=float, help="compliance tolerance in cm (repeatable)")
@click.option("--format", "fmt", type=click.Choice(["text", "csv", "json"]), default="text", show_default=True)
def eval_alignment(trial_log, tolerances, fmt):
    """Per-distance error statistics, overall CDF, and tolerance compliance."""
    try:
        trials = alignment.load_trials(trial_log)
    except alignment.TrialLogError as exc:
        raise UserError(str(exc))
    if not trials:
        raise UserError("trial log is empty")

    summary = alignment.summarize_by_distance(trials)
    translations = [alignment.compute_trial_errors(t).translation_cm for t in trials]
    cdf_points = alignment.cdf(translations)
    compliance = {f"{tol:g}": alignment.tolerance_compliance(translations, tol) for tol in tolerances}

    if fmt == "json":
        click.echo(
            json.dumps(
                {
                    "per_distance": alignment.summary_rows(summary),
                    "cdf": cdf_points,
                    "compliance": compliance,
                    "n_trials": len(trials),
                },
                indent=2,
            )
        )
        return
    click.echo(alignment.format_summary(summary, fmt=fmt))
    click.echo("")
    click.echo(f"translation error: p50={alignment.percentile(translations, 50):.2f} cm, "
               f"p95={alignment.percentile(translations, 95):.2f} cm over {len(trials)} trials")
    for tol, fraction in compliance.items():
        click.echo(f"compliance at {tol} cm: {fraction * 100:.1f}%")


@cli.command()
@click.option(
    "--data-dir",
    default=lambda: os.environ.get(DATA_DIR_ENV, "./sitesync-data"),
    help=f"state directory (or ${DATA_DIR_ENV})",
)
@click.option("--model-id", required=True)
@click.option("--location-id", required=True, type=int)
@click.option("--label", required=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def ledger(data_dir, model_id, location_id, label, fmt):
    """Measurement history for one location and damage label, oldest first."""
    from .service import DataStore, SessionService, UnknownModelError

    if not os.path.isdir(data_dir):
        raise UserError(f"data dir {data_dir!r} does not exist")
    service = SessionService(DataStore(data_dir))
    try:
        rows = service.ledger_history(model_id, location_id, label)
    except UnknownModelError as exc:
        raise UserError(str(exc))
    finally:
        service.close()

    if fmt == "json":
        click.echo(json.dumps(rows, indent=2))
        return
    if not rows:
        click.echo(f"no records for location {location_id} label {label!r}")
        return
    header = f"{'date':<10}{'id':>6}{'length_m':>12}{'perimeter_m':>14}{'area_m2':>12}"
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        click.echo(f"{row['date']:<10}{row['id']:>6}{row['length']:>12.3f}{row['perimeter']:>14.3f}{row['area']:>12.3f}")


@cli.command("net-bench")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--profiles", "profiles_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", default=5, show_default=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def net_bench(scenario_path, profiles_path, trials, fmt):
    """Load/save timing experiment across network profiles."""
    try:
        scenario = netsim.load_scenario(scenario_path)
        profiles = netsim.load_profiles(profiles_path)
    except (ValueError, KeyError, OSError) as exc:
        raise UserError(f"cannot load inputs: {exc}")
    if trials < 1:
        raise UserError("--trials must be >= 1")
    result = netsim.run_timing_experiment(scenario, profiles, trials)
    if fmt == "json":
        click.echo(json.dumps(netsim.report_dict(result), indent=2, sort_keys=True))
    else:
        click.echo(netsim.format_report(result))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(EXIT_USER_ERROR)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code if isinstance(exc, UserError) else EXIT_USER_ERROR)
    except SystemExit:
        raise
    except Exception as exc:  # internal failure contract
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
