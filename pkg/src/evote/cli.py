"""Command line entry points.

``serve`` runs the HTTP service; the remaining commands are operator
tools that work on the same config file and data directory.  ``tally``
can alternatively drive a running server over HTTP with ``--url``.
"""

from __future__ import annotations

import json
import os
import sys

import click

from . import analysis as an
from . import bench as bn
from .config import (
    ConfigError,
    acquire_service_lock,
    build_service,
    load_service_config,
    lock_path,
    release_service_lock,
)
from .election import STATE_CLOSED, STATE_OPEN, STATE_TALLIED, TallyResult
from .he import (
    DEFAULT_BITS,
    SUPPORTED_BITS,
    generate_keypair,
    load_keypair,
    load_public_key,
    save_keypair,
)
from .schema import default_schema, load_schema
from .simulate import run_simulation


@click.group()
def main():
    """Plaintext-ballot e-voting with encrypted voter demographics."""


@main.command()
@click.option("--bits", type=int, default=DEFAULT_BITS, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def keygen(bits, out_dir):
    """Generate an election keypair into OUT/public.json and OUT/secret.json."""
    if bits not in SUPPORTED_BITS:
        raise click.ClickException(f"unsupported bit size {bits}; supported: {SUPPORTED_BITS}")
    click.echo(f"generating {bits}-bit keypair...")
    key = generate_keypair(bits)
    public_path, secret_path = save_keypair(key, out_dir)
    click.echo(f"public key: {public_path}")
    click.echo(f"secret key: {secret_path} (owner-only permissions)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run the election HTTP service."""
    import uvicorn

    from .api import create_app

    cfg = _load_config(config_path)
    service, admin_token = build_service(cfg)
    if not cfg.admin_token:
        click.echo(f"generated admin token: {admin_token}")
    acquire_service_lock(cfg.data_dir)
    try:
        app = create_app(service)
        click.echo(f"serving election {cfg.election_id} on {cfg.listen_host}:{cfg.listen_port}")
        uvicorn.run(app, host=cfg.listen_host, port=cfg.listen_port, log_level="info")
    finally:
        release_service_lock(cfg.data_dir)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--url", default=None, help="Drive a running server instead of the local data dir.")
@click.option("--admin-token", default=None)
def tally(config_path, url, admin_token):
    """Close the election (if open) and produce the plaintext tally."""
    cfg = _load_config(config_path)
    token = admin_token or cfg.admin_token
    if url:
        _tally_remote(url, token)
        return
    if os.path.exists(lock_path(cfg.data_dir)):
        raise click.ClickException(
            "service appears to be running; stop it or use --url to tally over HTTP"
        )
    if not token:
        raise click.ClickException("no admin token in config, environment, or --admin-token")
    service, _ = build_service(cfg)
    if service.config.state == STATE_OPEN:
        service.transition_election(token, STATE_CLOSED)
        click.echo("election closed")
    result = service.tally_vote(token)
    _echo_tally(result)


def _tally_remote(url: str, token: str) -> None:
    import httpx

    base = url.rstrip("/")
    with httpx.Client(base_url=base, timeout=30.0) as client:
        info = client.get("/api/election").json()
        state = info["state"]
        headers = {"X-Admin-Token": token or ""}
        if state == STATE_OPEN:
            client.post("/api/admin/state", json={"target": STATE_CLOSED}, headers=headers).raise_for_status()
            state = STATE_CLOSED
        if state == STATE_CLOSED:
            client.post("/api/admin/state", json={"target": STATE_TALLIED}, headers=headers).raise_for_status()
        response = client.get("/api/tally")
        response.raise_for_status()
        _echo_tally(TallyResult.from_json(response.json()))


def _echo_tally(result: TallyResult) -> None:
    click.echo(f"tally for {result.election_id}: total {result.total}")
    for candidate, count in sorted(result.counts.items()):
        click.echo(f"  {candidate}: {count}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--secret-key", "secret_key_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--csv", "csv_path", default=None, type=click.Path())
def analyze(config_path, secret_key_path, out_path, csv_path):
    """Aggregate encrypted demographics and decrypt the final counts.

    Requires the tally to exist already; the secret key is read from an
    operator-held file and never touches the serving process."""
    from .ledger import Ledger

    cfg = _load_config(config_path)
    key_path = secret_key_path or cfg.secret_key_path
    if not key_path:
        raise click.ClickException("no secret key: pass --secret-key or set keys.secret in config")
    tally_path = os.path.join(cfg.data_dir, "tally.json")
    if not os.path.exists(tally_path):
        raise click.ClickException("no tally yet: run `evote tally` first")
    with open(tally_path, "r", encoding="utf-8") as fh:
        tally_result = TallyResult.from_json(json.load(fh))
    secret_key = load_keypair(key_path)
    public_key = load_public_key(cfg.public_key_path)
    if secret_key.fingerprint != public_key.fingerprint:
        raise click.ClickException("secret key does not match the election public key")
    with open(cfg.schema_path, "r", encoding="utf-8") as fh:
        schema = load_schema(fh.read())
    from .config import build_node_set

    ledger = Ledger(
        os.path.join(cfg.data_dir, "ledger"),
        candidates=cfg.candidates,
        nodes=build_node_set(cfg),
    )
    try:
        report = an.analyze_voters(ledger, secret_key, schema, cfg.candidates, tally_result)
    except an.AnalysisError as exc:
        raise click.ClickException(str(exc))
    default_out = os.path.join(cfg.data_dir, "analysis.json")
    an.write_report(report, default_out)
    click.echo(f"analysis written: {default_out}")
    if out_path:
        an.write_report(report, out_path)
        click.echo(f"analysis written: {out_path}")
    if csv_path:
        an.write_report_csv(report, schema, csv_path)
        click.echo(f"CSV written: {csv_path}")
    for factor_name, counts in report.turnout_by_factor.items():
        click.echo(f"  turnout by {factor_name}: {counts}")


@main.command()
@click.option("--voters", "n_voters", type=int, default=1024, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--bits", type=int, default=1024, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--candidates", default="A,B,C", show_default=True)
def simulate(n_voters, out_dir, bits, seed, candidates):
    """Run a full synthetic election (register, answer, cast, tally)."""
    if bits not in SUPPORTED_BITS:
        raise click.ClickException(f"unsupported bit size {bits}; supported: {SUPPORTED_BITS}")
    candidate_list = tuple(c.strip() for c in candidates.split(",") if c.strip())
    summary = run_simulation(
        out_dir,
        n_voters=n_voters,
        security_bits=bits,
        seed=seed,
        candidates=candidate_list,
    )
    click.echo(f"simulated {summary.n_voters} voters in {summary.out_dir}")
    _echo_tally(summary.tally)
    click.echo(f"config: {summary.config_path}")


@main.command()
@click.option("--voters", "n_voters", type=int, default=1024, show_default=True)
@click.option(
    "--profile",
    "profiles",
    multiple=True,
    type=click.Choice(bn.PROFILES),
    help="Recording payload profiles; defaults to both emulated sizes.",
)
@click.option("--reps", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bits", type=int, default=1024, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="Refuse to run while this config's service is live.")
def bench(n_voters, profiles, reps, seed, bits, out_dir, config_path):
    """Measure ballot recording, homomorphic addition, and tally cost."""
    import tempfile

    if config_path:
        cfg = _load_config(config_path)
        if os.path.exists(lock_path(cfg.data_dir)):
            raise click.ClickException("service is running; benchmarks need an idle process")
    if bits not in SUPPORTED_BITS:
        raise click.ClickException(f"unsupported bit size {bits}; supported: {SUPPORTED_BITS}")
    profiles = profiles or (bn.PROFILE_ATTRS_401B, bn.PROFILE_VOTE_80B)
    schema = default_schema()
    click.echo(f"generating {bits}-bit key...")
    key = generate_keypair(bits, seed=seed)

    recordings = []
    series = _doubling_series(n_voters)
    with tempfile.TemporaryDirectory(prefix="evote-bench-") as tmp:
        for n in series:
            timings = bn.compare_recording_profiles(
                n,
                os.path.join(tmp, f"rec-{n}"),
                profiles=profiles,
                repetitions=reps,
                seed=seed,
                key=key.public,
                schema=schema,
            )
            for profile in profiles:
                timing = timings[profile]
                recordings.append(timing)
                click.echo(
                    f"recording {profile} n={n}: {timing.total_seconds:.3f} s "
                    f"({timing.per_ballot_ms:.3f} ms/ballot)"
                )
        additions = []
        for n in series:
            timing = bn.run_addition_bench(n, key)
            additions.append(timing)
            click.echo(
                f"addition n={n}: {timing.total_seconds:.4f} s ({timing.per_add_us:.1f} us/add)"
            )
        comparison = bn.run_counting_comparison(
            n_voters, key, schema, ("A", "B", "C"), os.path.join(tmp, "cmp"), seed=seed
        )
        click.echo(
            f"counting n={n_voters}: plaintext {comparison.plaintext_seconds:.4f} s, "
            f"encrypted fold {comparison.encrypted_seconds:.4f} s "
            f"(x{comparison.ratio:.1f})"
        )
        if not comparison.counts_match:
            raise click.ClickException("benchmark invalid: counts do not match the recount")
        written = bn.emit_report(
            out_dir, recordings=recordings, additions=additions, comparisons=[comparison]
        )
    for path in written:
        click.echo(f"wrote {path}")


def _doubling_series(n: int):
    series = []
    step = max(n // 8, 1)
    while step < n:
        series.append(step)
        step *= 2
    series.append(n)
    return series


def _load_config(config_path):
    try:
        return load_service_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    sys.exit(main())
