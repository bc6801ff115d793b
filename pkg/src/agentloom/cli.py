"""Command-line entry points.

    agentloom ui     — launch the studio (API + web UI)
    agentloom serve  — deploy one exported workflow as a /predict endpoint
    agentloom run    — run a workflow headlessly against a task

Configuration precedence: flags > environment variables (AGENTLOOM_DB,
AGENTLOOM_PRICING) > config file (AGENTLOOM_CONFIG or
~/.config/agentloom/config.json) > defaults.

Exit codes: 0 success, 1 runtime/server failure, 2 workflow spec errors.
Diagnostics go to stderr; data goes to stdout.
"""

from __future__ import annotations

import json
import os
import socket
import sys
from pathlib import Path

import click

EXIT_RUN_ERROR = 1
EXIT_SPEC_ERROR = 2


def _config_file() -> dict:
    path = os.environ.get("AGENTLOOM_CONFIG")
    if not path:
        base = os.environ.get("XDG_CONFIG_HOME") or os.path.join(os.path.expanduser("~"), ".config")
        path = os.path.join(base, "agentloom", "config.json")
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        return data if isinstance(data, dict) else {}
    except (OSError, ValueError):
        return {}


def _setting(flag_value, env_name: str | None, config_key: str, default=None):
    if flag_value is not None:
        return flag_value
    if env_name and os.environ.get(env_name):
        return os.environ[env_name]
    config = _config_file()
    if config_key in config:
        return config[config_key]
    return default


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _check_port_free(host: str, port: int) -> None:
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError:
        _fail(f"port {port} is already in use on {host}", EXIT_RUN_ERROR)
    finally:
        probe.close()


def _serve_forever(app, host: str, port: int) -> None:
    """Run uvicorn until a shutdown signal; the process then exits 0.

    uvicorn re-raises captured signals after its graceful shutdown, which
    would kill the process with a nonzero status; a no-op handler installed
    beforehand absorbs the re-raise.
    """
    import signal

    import uvicorn

    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda s, f: None)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@click.group()
@click.version_option(package_name="agentloom")
def main():
    """agentloom: declarative multi-agent workflows — define, run, profile, deploy."""


@main.command("ui")
@click.option("--port", type=int, default=None, show_default="8081", help="Port to bind.")
@click.option("--host", default=None, show_default="127.0.0.1", help="Host to bind.")
@click.option("--db", "db_path", default=None,
              help="Database file (default: AGENTLOOM_DB or the user data directory).")
@click.option("--pricing", "pricing_path", default=None,
              help="Pricing table JSON (default: AGENTLOOM_PRICING).")
def cmd_ui(port, host, db_path, pricing_path):
    """Launch the studio: REST+WS API and the bundled web UI."""
    from agentloom.db import StoreError
    from agentloom.server import create_app

    host = _setting(host, None, "host", "127.0.0.1")
    port = int(_setting(port, None, "port", 8081))
    db_path = _setting(db_path, "AGENTLOOM_DB", "db")
    pricing_path = _setting(pricing_path, "AGENTLOOM_PRICING", "pricing")

    _check_port_free(host, port)
    try:
        app = create_app(db_path=db_path, pricing_path=pricing_path)
    except StoreError as e:
        _fail(str(e), EXIT_RUN_ERROR)
    click.echo(f"agentloom ui running at http://{host}:{port}")
    _serve_forever(app, host, port)


@main.command("serve")
@click.option("--workflow", "workflow_path", required=True,
              help="Exported workflow document to deploy.")
@click.option("--port", type=int, default=None, show_default="8000")
@click.option("--host", default=None, show_default="127.0.0.1")
@click.option("--pricing", "pricing_path", default=None)
def cmd_serve(workflow_path, port, host, pricing_path):
    """Serve one exported workflow as an API endpoint (POST /predict {task})."""
    from agentloom.engine import InstantiationError
    from agentloom.schema import SpecError
    from agentloom.server import build_serve_app

    host = _setting(host, None, "host", "127.0.0.1")
    port = int(_setting(port, None, "serve_port", 8000))
    pricing_path = _setting(pricing_path, "AGENTLOOM_PRICING", "pricing")

    try:
        app = build_serve_app(workflow_path, pricing_path=pricing_path)
    except OSError as e:
        _fail(f"cannot read workflow file: {e}", EXIT_SPEC_ERROR)
    except (SpecError, InstantiationError) as e:
        _fail(str(e), EXIT_SPEC_ERROR)

    _check_port_free(host, port)
    click.echo(f"serving workflow at http://{host}:{port}/predict")
    _serve_forever(app, host, port)


@main.command("run")
@click.option("--workflow", "workflow_path", required=True,
              help="Workflow document to execute.")
@click.option("--task", required=True, help="Task text to run.")
@click.option("--format", "fmt", type=click.Choice(["text", "structured"]), default="text",
              show_default=True, help="Print the final message or the full run result.")
@click.option("--pricing", "pricing_path", default=None)
def cmd_run(workflow_path, task, fmt, pricing_path):
    """Run a workflow headlessly and print the outcome."""
    from agentloom.engine import InstantiationError, RuntimeEnv, WorkflowManager
    from agentloom.profiler import PricingTable, load_pricing
    from agentloom.schema import SpecError

    pricing_path = _setting(pricing_path, "AGENTLOOM_PRICING", "pricing")
    pricing = PricingTable()
    if pricing_path and Path(pricing_path).exists():
        pricing = load_pricing(pricing_path)

    try:
        wm = WorkflowManager(Path(workflow_path), env=RuntimeEnv(pricing=pricing))
    except OSError as e:
        _fail(f"cannot read workflow file: {e}", EXIT_SPEC_ERROR)
    except (SpecError, InstantiationError) as e:
        _fail(str(e), EXIT_SPEC_ERROR)

    try:
        result = wm.run(message=task)
    except ValueError as e:
        _fail(str(e), EXIT_SPEC_ERROR)

    if fmt == "structured":
        click.echo(json.dumps(result.to_dict(), indent=2, ensure_ascii=False))
    else:
        click.echo(result.final_message.content if result.final_message else "")

    if result.status == "error":
        click.echo("run failed with status=error", err=True)
        sys.exit(EXIT_RUN_ERROR)


if __name__ == "__main__":
    main()
