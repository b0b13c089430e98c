"""Command line interface."""

from __future__ import annotations

import json
import sys

import click

from .campaign import CampaignConfig, parse_config, run_campaign
from .report import CampaignReport, render_figures


def _overrides(**kw) -> dict:
    out = {}
    for key, value in kw.items():
        if value is None or value == ():
            continue
        if key == "worker_speeds":
            out[key] = [float(v) for v in value.split(",") if v.strip()]
        else:
            out[key] = value
    return out


_run_options = [
    click.option("--target", "target_spec", help="target spec, e.g. "
                 "synthetic:byte-ladder or external:./harness @@"),
    click.option("--mode", type=click.Choice(
        ["simulated", "distributed", "serial", "static"])),
    click.option("--workers", type=int),
    click.option("--budget-execs", "budget_execs", type=int),
    click.option("--budget-seconds", "budget_seconds", type=float),
    click.option("--master-seed", "master_seed", type=int),
    click.option("--latency-us", "latency_us", type=int),
    click.option("--threshold", type=int,
                 help="update signals between evaluator-pool adjustments"),
    click.option("--min-eval-nodes", "min_eval_nodes", type=int),
    click.option("--eval-cap-divisor", "eval_cap_divisor", type=int),
    click.option("--worker-speeds", "worker_speeds",
                 help="comma-separated relative speeds, simulated mode"),
    click.option("--corpus-dir", "corpus_dir",
                 type=click.Path(exists=True, file_okay=False)),
    click.option("--out", "out_dir", type=click.Path(file_okay=False),
                 help="directory for report.jsonl, summary.txt and figures"),
    click.option("--wal", "wal_path", type=click.Path(dir_okay=False)),
    click.option("--audit", is_flag=True, default=None),
    click.option("--keep-new-bucket", "keep_new_bucket", is_flag=True,
                 default=None),
    click.option("--record-tasks", "record_tasks", is_flag=True,
                 default=None),
]


def _with_run_options(fn):
    for option in reversed(_run_options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Distributed coverage-guided fuzzing with centralized dynamic
    scheduling."""


@main.command()
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False),
              help="key=value campaign config; flags override it")
@_with_run_options
def run(config_path, **kw):
    """Run a campaign and print its summary."""
    text = ""
    if config_path:
        with open(config_path) as fh:
            text = fh.read()
    try:
        cfg = parse_config(text, overrides=_overrides(**kw))
    except (ValueError, TypeError) as exc:
        raise click.ClickException(str(exc))
    report = run_campaign(cfg)
    click.echo(report.summary_text(), nl=False)


@main.command("super-linear")
@click.option("--target", "target_spec", default="synthetic:ladder-branches",
              show_default=True)
@click.option("--budget-execs", "budget_execs", default=200_000,
              show_default=True, type=int)
@click.option("--workers", default=8, show_default=True, type=int)
@click.option("--seeds", default="1,2,3", show_default=True,
              help="comma-separated master seeds")
@click.option("--latency-us", "latency_us", default=200, show_default=True,
              type=int)
def super_linear(target_spec, budget_execs, workers, seeds, latency_us):
    """Compare multi-worker doubling activity against the serial loop."""
    from .campaign import experiment_super_linear

    master_seeds = tuple(int(s) for s in seeds.split(",") if s.strip())
    result = experiment_super_linear(
        target_spec, budget_execs, workers=workers,
        master_seeds=master_seeds, latency_us=latency_us)
    click.echo(json.dumps(result, indent=2, sort_keys=True))


@main.command()
@click.argument("log", type=click.Path(exists=True, dir_okay=False))
@click.option("--figures", "figures_dir", type=click.Path(file_okay=False),
              help="also render figures into this directory")
def stats(log, figures_dir):
    """Summarize a report.jsonl written by an earlier run."""
    report = CampaignReport.from_jsonl(log)
    click.echo(report.summary_text(), nl=False)
    if figures_dir:
        for path in render_figures(report, figures_dir):
            click.echo(f"wrote {path}")


@main.command(hidden=True)
@click.option("--id", "worker_id", required=True)
@click.option("--store", "store_addr", required=True)
@click.option("--sched", "sched_addr", required=True)
@click.option("--target", "target_spec", required=True)
@click.option("--master-seed", "master_seed", type=int, default=1)
@click.option("--metrics", "metrics_path", type=click.Path(dir_okay=False))
@click.option("--no-pace", "pace", is_flag=True, default=True,
              flag_value=False)
@click.option("--keep-new-bucket", "keep_new_bucket", is_flag=True,
              default=False)
def worker(worker_id, store_addr, sched_addr, target_spec, master_seed,
           metrics_path, pace, keep_new_bucket):
    """Worker node subprocess (spawned by distributed campaigns)."""
    from .net import run_worker

    def parse_addr(text: str) -> tuple[str, int]:
        host, _, port = text.rpartition(":")
        return host, int(port)

    run_worker(worker_id, parse_addr(store_addr), parse_addr(sched_addr),
               target_spec, master_seed, metrics_path=metrics_path,
               pace=pace, keep_new_bucket=keep_new_bucket)


if __name__ == "__main__":
    main()
