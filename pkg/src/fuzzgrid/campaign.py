"""Campaign configuration and entry points.

A campaign is described by a flat key=value config (file or CLI flags)
and runs in one of four modes: ``simulated`` (virtual time, one
process), ``distributed`` (real sockets and subprocesses), ``serial``
(the single-node reference loop), or ``static`` (fixed coverage-map
split).  All modes produce the same report schema.
"""

from __future__ import annotations

import os
import statistics
from dataclasses import dataclass, field, fields

from .report import CampaignReport, render_figures


def default_corpus() -> list[bytes]:
    return [b"0000"]


def load_corpus(path: str) -> list[bytes]:
    """Read every regular file under a directory, sorted by name."""
    out = []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isfile(full):
            with open(full, "rb") as fh:
                out.append(fh.read())
    if not out:
        raise ValueError(f"no corpus files in {path}")
    return out


@dataclass
class CampaignConfig:
    target_spec: str = "synthetic:byte-ladder"
    mode: str = "simulated"
    workers: int = 4
    budget_execs: int = 0
    budget_seconds: float = 0.0
    master_seed: int = 1
    threshold: int = 1000
    min_eval_nodes: int = 2
    eval_cap_divisor: int = 2
    latency_us: int = 1000
    worker_speeds: list[float] | None = None
    keep_new_bucket: bool = False
    audit: bool = False
    record_tasks: bool = False
    corpus_dir: str | None = None
    wal_path: str | None = None
    out_dir: str | None = None
    corpus: list[bytes] = field(default_factory=default_corpus)

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.budget_execs and not self.budget_seconds:
            raise ValueError("set budget_execs or budget_seconds")
        if self.corpus_dir:
            self.corpus = load_corpus(self.corpus_dir)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "corpus":
                out["corpus_seeds"] = len(self.corpus)
                continue
            out[f.name] = getattr(self, f.name)
        return out


_BOOL_KEYS = {"keep_new_bucket", "audit", "record_tasks"}
_INT_KEYS = {"workers", "budget_execs", "master_seed", "threshold",
             "min_eval_nodes", "eval_cap_divisor", "latency_us"}
_FLOAT_KEYS = {"budget_seconds"}


def parse_config(text: str, overrides: dict | None = None) -> CampaignConfig:
    """Parse ``key = value`` lines (# starts a comment); ``overrides``
    (already typed) win over file values."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false", "0", "1", "yes", "no"):
                raise ValueError(f"line {lineno}: bad boolean {value!r}")
            values[key] = value.lower() in ("true", "1", "yes")
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key == "worker_speeds":
            values[key] = [float(v) for v in value.split(",") if v.strip()]
        elif key in ("target_spec", "mode", "corpus_dir", "wal_path",
                     "out_dir"):
            values[key] = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return CampaignConfig(**values)


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    from . import baseline, simulate

    if cfg.mode == "simulated":
        report = simulate.run_simulated(cfg)
    elif cfg.mode == "serial":
        report = baseline.run_baseline_serial(cfg)
    elif cfg.mode == "static":
        report = baseline.run_static_partition(cfg)
    elif cfg.mode == "distributed":
        from . import net
        report = net.run_distributed(cfg)
    else:
        raise ValueError(f"unknown mode {cfg.mode!r}")
    if cfg.out_dir:
        write_artifacts(report, cfg.out_dir)
    return report


def write_artifacts(report: CampaignReport, out_dir: str) -> dict:
    """Write the delimited log, a text summary, and the rendered figures
    side by side."""
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "report.jsonl")
    report.to_jsonl(log_path)
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(report.summary_text())
    figures = render_figures(report, out_dir)
    return {"log": log_path, "summary": summary_path, "figures": figures}


def experiment_super_linear(target_spec: str, budget_execs: int,
                            workers: int = 8,
                            master_seeds: tuple[int, ...] = (1, 2, 3),
                            latency_us: int = 200) -> dict:
    """Compare new-path energy-doubling activity of a multi-worker
    campaign against the single-node loop at equal total execution
    budgets, over several seeds."""
    from . import baseline, simulate

    runs = []
    for seed in master_seeds:
        serial_cfg = CampaignConfig(
            target_spec=target_spec, mode="serial", workers=1,
            budget_execs=budget_execs, master_seed=seed)
        sim_cfg = CampaignConfig(
            target_spec=target_spec, mode="simulated", workers=workers,
            budget_execs=budget_execs, master_seed=seed,
            latency_us=latency_us)
        serial = baseline.run_baseline_serial(serial_cfg)
        sim = simulate.run_simulated(sim_cfg)
        s_dbl = serial.totals["doubling_events"]
        d_dbl = sim.totals["doubling_events"]
        runs.append({
            "master_seed": seed,
            "serial_doubling": s_dbl,
            "distributed_doubling": d_dbl,
            "ratio": d_dbl / s_dbl if s_dbl else float("inf"),
            "serial_paths": serial.totals["paths"],
            "distributed_paths": sim.totals["paths"],
        })
    return {
        "target": target_spec,
        "workers": workers,
        "budget_execs": budget_execs,
        "runs": runs,
        "median_ratio": statistics.median(r["ratio"] for r in runs),
    }
