"""Per-metric boxplots and a flat CSV of sweep records."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import fields
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METRICS, MetricsRecord  # noqa: E402

log = logging.getLogger(__name__)

LABELS = {"conc_rmse": "concentration RMSE", "vel_rmse": "velocity RMSE [m/s]",
          "vel_range_err": "velocity range error [m/s]", "high_vel_err": "high velocity error [m/s]",
          "low_vel_err": "low velocity error [m/s]", "outlet_ratio": "outlet ratio"}
COLORS = {"fbp": "tab:green", "imageflow": "tab:blue", "sinoflow": "tab:red"}

_FLOATS = {"grs", "theta0", "I0", "cnr", "duty_cycle", "pulse_width", *METRICS}


def write_records_csv(records, path) -> Path:
    path = Path(path)
    names = [f.name for f in fields(MetricsRecord)]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=names)
        w.writeheader()
        for r in records:
            row = r.to_dict()
            row["series"] = json.dumps(row["series"], sort_keys=True)
            w.writerow({k: "" if v is None else v for k, v in row.items()})
    return path


def read_records_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            d = {}
            for k, v in row.items():
                if k == "series":
                    d[k] = json.loads(v) if v else {}
                elif k in _FLOATS:
                    d[k] = None if v == "" else float(v)
                else:
                    d[k] = v
            out.append(MetricsRecord.from_dict(d))
    return out


def emit_plots(records, out_dir) -> list[Path]:
    """One boxplot per metric with data plus ``records.csv``; returns the files written."""
    records = list(records)
    if not records:
        raise ValueError("no records to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = [r for r in records if r.status == "ok"]
    conditions = sorted({r.condition for r in ok}, key=lambda c: (len(c), c))
    methods = [m for m in ("fbp", "imageflow", "sinoflow") if any(r.method == m for r in ok)]
    written = []
    for metric in METRICS:
        groups = {(c, m): [getattr(r, metric) for r in ok if r.condition == c and r.method == m
                           and getattr(r, metric) is not None] for c in conditions for m in methods}
        if not any(groups.values()):
            log.warning("metric %s has no values; plot omitted", metric)
            continue
        fig, ax = plt.subplots(figsize=(1.2 + 1.4 * len(conditions), 3.5))
        width = 0.8 / max(len(methods), 1)
        for j, m in enumerate(methods):
            data = [groups[(c, m)] for c in conditions]
            pos = np.arange(len(conditions)) + (j - 0.5 * (len(methods) - 1)) * width
            keep = [i for i, d in enumerate(data) if d]
            if not keep:
                continue
            bp = ax.boxplot([data[i] for i in keep], positions=pos[keep], widths=0.9 * width, patch_artist=True)
            for box in bp["boxes"]:
                box.set_facecolor(COLORS[m])
                box.set_alpha(0.6)
            ax.plot([], [], color=COLORS[m], lw=6, alpha=0.6, label=m)
        ax.set_xticks(np.arange(len(conditions)))
        ax.set_xticklabels(conditions, rotation=20, fontsize=8)
        ax.set_ylabel(LABELS[metric])
        ax.legend(fontsize=8)
        fig.tight_layout()
        f = out_dir / f"{metric}.png"
        fig.savefig(f, dpi=120)
        plt.close(fig)
        written.append(f)
    written.append(write_records_csv(records, out_dir / "records.csv"))
    return written
