"""Delimited reports and the figures rendered alongside them."""

import csv
import json

import numpy as np

PER_IMAGE_COLUMNS = ("name", "mae", "e_mean", "e_max", "e_adaptive",
                     "s_measure", "weighted_f")
COST_COLUMNS = ("map_id", "mode", "p_threshold", "mac_count", "leaf_count",
                "max_depth")


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metric_report_payload(report):
    return {
        "count": len(report.per_image),
        "aggregate": report.aggregate,
        "per_image": [{"name": name, **row} for name, row in report.per_image],
    }


def write_metric_report(report, json_path, csv_path):
    payload = metric_report_payload(report)
    write_json(json_path, payload)
    write_csv(csv_path, payload["per_image"], PER_IMAGE_COLUMNS)


def write_curves_csv(curves, path):
    rows = [
        {"threshold": f"{curves['threshold'][i]:.6f}",
         "precision": f"{curves['precision'][i]:.6f}",
         "recall": f"{curves['recall'][i]:.6f}",
         "fmeasure": f"{curves['fmeasure'][i]:.6f}"}
        for i in range(len(curves["threshold"]))
    ]
    write_csv(path, rows, ("threshold", "precision", "recall", "fmeasure"))


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_curves(curves, pr_path, fm_path, label="model"):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(curves["recall"], curves["precision"], label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(pr_path, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(curves["threshold"], curves["fmeasure"], label=label)
    ax.set_xlabel("threshold")
    ax.set_ylabel("F-measure")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fm_path, dpi=120)
    plt.close(fig)


def render_cost_figure(rows, path):
    """Mean MAC count per (mode, threshold), log scale."""
    plt = _pyplot()
    groups = {}
    for row in rows:
        groups.setdefault((row["mode"], row["p_threshold"]), []).append(row["mac_count"])
    labels = [f"{mode}\np_t={pt:g}" for mode, pt in sorted(groups)]
    means = [np.mean(groups[k]) for k in sorted(groups)]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), means)
    ax.set_xticks(range(len(labels)), labels, fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("mean MAC count")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
