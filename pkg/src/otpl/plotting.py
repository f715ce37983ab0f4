"""Report aggregation and deterministic SVG charts."""

from __future__ import annotations

import csv
import io
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

AGGREGATE_COLUMNS = ("agent", "n_veh", "episodes", "mean_avg_velocity", "completion_rate",
                     "collision_rate", "departure_rate", "mean_driving_time")


def aggregate(rows) -> list:
    """Per (agent, density) means over report rows, sorted by agent then density."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["agent"], int(r["n_veh"]))].append(r)
    out = []
    for (agent, n_veh), rs in sorted(groups.items()):
        n = len(rs)
        out.append({
            "agent": agent, "n_veh": n_veh, "episodes": n,
            "mean_avg_velocity": sum(r["avg_velocity"] for r in rs) / n,
            "completion_rate": sum(r["completed"] for r in rs) / n,
            "collision_rate": sum(r["collided"] for r in rs) / n,
            "departure_rate": sum(r["left_road"] for r in rs) / n,
            "mean_driving_time": sum(r["driving_time"] for r in rs) / n,
        })
    return out


def agent_totals(rows) -> list:
    """Per-agent means over all densities (the bar-chart data)."""
    pooled = [dict(r, n_veh=0) for r in rows]
    return aggregate(pooled)


def aggregate_csv(agg) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for a in agg:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in a.items()})
    return buf.getvalue()


def _save_svg(fig, path, title, description=None):
    plt.rcParams["svg.hashsalt"] = "otpl"
    meta = {"Date": None, "Title": title, "Creator": None}
    if description:
        meta["Description"] = description
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def velocity_chart(agg, path, description=None):
    """Average velocity against traffic density, one line per agent."""
    fig, ax = plt.subplots(figsize=(6, 4))
    agents = sorted({a["agent"] for a in agg})
    for name in agents:
        pts = [(a["n_veh"], a["mean_avg_velocity"]) for a in agg if a["agent"] == name]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_xlabel("vehicles per scenario")
    ax.set_ylabel("average velocity [m/s]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path, "average velocity vs density", description)


def terminal_chart(totals, path, description=None):
    """Collision rate and mean driving time per agent, side by side."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    names = [t["agent"] for t in totals]
    x = range(len(names))
    ax1.bar(x, [t["collision_rate"] + t["departure_rate"] for t in totals], color="tab:red")
    ax1.set_ylabel("failure rate")
    ax2.bar(x, [t["mean_driving_time"] for t in totals], color="tab:blue")
    ax2.set_ylabel("mean driving time [s]")
    for ax in (ax1, ax2):
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=20)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path, "failures and driving time per agent", description)
