"""Campaign report schema, line-delimited log output, text summaries,
and rendered figures.

All run modes (scheduled campaign, serial baseline, static-partition
baseline) emit the same record schema so reports are machine-diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class CampaignReport:
    mode: str
    target: str
    config: dict
    workers: list[dict]
    totals: dict
    path_series: list[tuple[int, int]]
    crashes: list[dict] = field(default_factory=list)
    task_log: list[dict] = field(default_factory=list)

    def to_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            meta = {"record": "meta", "mode": self.mode, "target": self.target,
                    "config": self.config}
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for worker in self.workers:
                fh.write(json.dumps({"record": "worker", **worker},
                                    sort_keys=True) + "\n")
            for t_us, paths in self.path_series:
                fh.write(json.dumps({"record": "series", "t_us": t_us,
                                     "paths": paths}) + "\n")
            for crash in self.crashes:
                fh.write(json.dumps({"record": "crash", **crash},
                                    sort_keys=True) + "\n")
            for task in self.task_log:
                fh.write(json.dumps({"record": "task", **task},
                                    sort_keys=True) + "\n")
            fh.write(json.dumps({"record": "summary", **self.totals},
                                sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str) -> "CampaignReport":
        meta = {}
        workers, series, crashes, tasks = [], [], [], []
        totals = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                kind = rec.pop("record")
                if kind == "meta":
                    meta = rec
                elif kind == "worker":
                    workers.append(rec)
                elif kind == "series":
                    series.append((rec["t_us"], rec["paths"]))
                elif kind == "crash":
                    crashes.append(rec)
                elif kind == "task":
                    tasks.append(rec)
                elif kind == "summary":
                    totals = rec
        return cls(mode=meta.get("mode", "?"), target=meta.get("target", "?"),
                   config=meta.get("config", {}), workers=workers,
                   totals=totals, path_series=series, crashes=crashes,
                   task_log=tasks)

    def summary_text(self) -> str:
        lines = [
            f"mode:    {self.mode}",
            f"target:  {self.target}",
            "",
            f"{'worker':<12}{'tasks':>8}{'execs':>12}{'new':>7}"
            f"{'dbl':>6}{'crash':>7}{'busy%':>8}",
        ]
        for w in self.workers:
            fuzz = w.get("fuzzing_time_us", 0)
            non = w.get("non_fuzzing_time_us", 0)
            busy = 100.0 * fuzz / (fuzz + non) if fuzz + non else 0.0
            lines.append(
                f"{w['worker_id']:<12}{w.get('tasks', 0):>8}"
                f"{w.get('execs', 0):>12}{w.get('new_seeds', 0):>7}"
                f"{w.get('doubling_events', 0):>6}{w.get('crashes', 0):>7}"
                f"{busy:>8.1f}")
        lines.append("")
        for key in sorted(self.totals):
            lines.append(f"{key}: {self.totals[key]}")
        try:
            lines.append(f"overhead: {compute_overhead(self) * 100:.2f}%")
        except ValueError:
            pass
        return "\n".join(lines) + "\n"


def compute_overhead(report: CampaignReport) -> float:
    """Fraction of worker time spent outside mutation/execution, over all
    worker nodes (the scheduler and store nodes are excluded because they
    never fuzz)."""
    non_fuzz = sum(w.get("non_fuzzing_time_us", 0) for w in report.workers)
    total = non_fuzz + sum(w.get("fuzzing_time_us", 0) for w in report.workers)
    if total <= 0:
        raise ValueError("report has zero total worker time")
    return non_fuzz / total


def busy_fractions(report: CampaignReport) -> dict[str, float]:
    out = {}
    for w in report.workers:
        fuzz = w.get("fuzzing_time_us", 0)
        non = w.get("non_fuzzing_time_us", 0)
        out[w["worker_id"]] = fuzz / (fuzz + non) if fuzz + non else 0.0
    return out


def render_figures(report: CampaignReport, outdir: str) -> list[str]:
    """Render paths-over-time and per-worker busy-fraction figures next to
    the delimited log; returns the written file paths."""
    import os

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(outdir, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    if report.path_series:
        times = [t / 1e6 for t, _ in report.path_series]
        paths = [p for _, p in report.path_series]
        ax.step(times, paths, where="post")
    ax.set_xlabel("campaign time (s)")
    ax.set_ylabel("active seeds (paths)")
    ax.set_title(f"{report.target} - paths over time ({report.mode})")
    path = os.path.join(outdir, "paths_over_time.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    fractions = busy_fractions(report)
    if fractions:
        names = list(fractions)
        ax.bar(range(len(names)), [fractions[n] for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("busy fraction (fuzzing time share)")
    ax.set_title(f"{report.target} - worker load ({report.mode})")
    path = os.path.join(outdir, "worker_busy.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written
