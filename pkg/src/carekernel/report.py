"""Report rendering: CSV tables plus matplotlib figures.

Two report kinds, both fed exclusively by the server's own query endpoints
(daily summaries and server-side aggregation), so every number in a figure is
retrievable from the API:

  summary  one civil date for a whole study: participant x stream coverage
           heatmap (coverage.png) and a delimited table (summary.csv)
  stream   one stream's binned aggregate: line chart (stream_<name>.png) and
           the binned rows (stream_<name>.csv)
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import requests


class ReportClient:
    def __init__(self, server_url: str, credential: str):
        self.base = server_url.rstrip("/")
        resp = requests.post(f"{self.base}/auth/login",
                             json={"credential": credential}, timeout=30)
        resp.raise_for_status()
        self.token = resp.json()["token"]

    def get(self, path: str, params: dict | None = None) -> dict:
        resp = requests.get(f"{self.base}{path}", params=params or {},
                            headers={"Authorization": f"Bearer {self.token}"},
                            timeout=60)
        resp.raise_for_status()
        return resp.json()


def summary_report(client: ReportClient, study_id: str, date: str,
                   out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    participants = client.get(f"/studies/{study_id}/participants")["participants"]
    streams = [s["stream_name"] for s in
               client.get(f"/studies/{study_id}/streams")["streams"]]

    rows = []
    coverage: dict[str, dict[str, float]] = {}
    for p in participants:
        pid = p["participant_id"]
        summary = client.get(f"/participants/{pid}/summary", {"date": date})
        coverage[pid] = {}
        for stream, cell in summary["per_stream"].items():
            rows.append({
                "participant": pid,
                "stream": stream,
                "count": cell["count"],
                "coverage": cell["coverage"],
                "last_seen": cell["last_seen"] or "",
            })
            coverage[pid][stream] = cell["coverage"]

    csv_path = out / "summary.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["participant", "stream", "count", "coverage", "last_seen"]
        )
        writer.writeheader()
        writer.writerows(rows)

    fig_path = out / "coverage.png"
    pids = sorted(coverage)
    if pids and streams:
        grid = [[coverage[pid].get(s, 0.0) for s in streams] for pid in pids]
        fig, ax = plt.subplots(
            figsize=(max(4, 1 + 0.6 * len(streams)), max(3, 1 + 0.4 * len(pids)))
        )
        im = ax.imshow(grid, vmin=0.0, vmax=1.0, aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(streams)), streams, rotation=45, ha="right")
        ax.set_yticks(range(len(pids)), pids)
        ax.set_title(f"coverage {study_id} {date}")
        fig.colorbar(im, ax=ax, label="fraction of hourly bins")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
    else:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.text(0.5, 0.5, "no data", ha="center", va="center")
        ax.set_axis_off()
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)

    return {"csv": str(csv_path), "figure": str(fig_path), "rows": len(rows)}


def stream_report(client: ReportClient, study_id: str, stream: str,
                  ts_from: str, ts_to: str, bin_width: str, fn: str,
                  out_dir: str | Path, participant: str | None = None,
                  field: str | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"from": ts_from, "to": ts_to, "bin": bin_width, "fn": fn}
    if participant:
        params["participant"] = participant
    if field:
        params["field"] = field
    rows = client.get(f"/studies/{study_id}/streams/{stream}/points", params)["rows"]

    csv_path = out / f"stream_{stream}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["bin", "value"])
        writer.writeheader()
        writer.writerows(rows)

    fig_path = out / f"stream_{stream}.png"
    fig, ax = plt.subplots(figsize=(8, 3.5))
    if rows:
        xs = [r["bin"] for r in rows]
        ys = [r["value"] for r in rows]
        ax.plot(range(len(xs)), ys, marker="o", linewidth=1)
        step = max(1, len(xs) // 12)
        ax.set_xticks(range(0, len(xs), step),
                      [x[:16] for x in xs[::step]], rotation=45, ha="right")
    else:
        ax.text(0.5, 0.5, "no data in range", ha="center", va="center")
    ax.set_title(f"{fn}({stream}) per {bin_width}")
    ax.set_ylabel(fn)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": str(csv_path), "figure": str(fig_path), "rows": len(rows)}
