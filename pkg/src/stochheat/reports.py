"""Machine-readable run artifacts: JSON reports, CSV tables, SVG figures.

Artifact filenames are content-addressed by the config hash and never
overwritten; a rerun that produces a name collision gets an -rN suffix.
Timings live under their own key so reports stay byte-identical across
repeated runs of the same (config, seed).
"""

import csv
import json
import os

import numpy as np

SCHEMA_ID = "stochheat-report-v1"


def make_report(command, config, results, passed=None, timings=None):
    return {
        "schema": SCHEMA_ID,
        "command": command,
        "config_hash": config.hash(),
        "seed": config.seed,
        "config": config.canonical(),
        "results": results,
        "pass": passed,
        "timings": timings or {},
    }


def strip_timings(report):
    out = dict(report)
    out.pop("timings", None)
    return out


def _fresh_path(out_dir, stem, suffix):
    path = os.path.join(out_dir, f"{stem}{suffix}")
    run = 2
    while os.path.exists(path):
        path = os.path.join(out_dir, f"{stem}-r{run}{suffix}")
        run += 1
    return path


def write_report(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{report['command']}_{report['config_hash']}"
    path = _fresh_path(out_dir, stem, ".json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_csv(out_dir, stem, header, rows, config_hash):
    os.makedirs(out_dir, exist_ok=True)
    path = _fresh_path(out_dir, f"{stem}_{config_hash}", ".csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))
    return path


def gram_csv_rows(basis, gram_matrix):
    """Row-major Gram entries; header carries the mode multi-indices."""
    header = ["mode"] + ["/".join(map(str, m)) for m in basis.modes]
    rows = []
    for i, mode in enumerate(basis.modes):
        rows.append(["/".join(map(str, mode))] + list(gram_matrix.entries[i]))
    return header, rows


def theta_csv_rows(density):
    centers = density.grid.centers()
    header = [f"x{i}" for i in range(centers.shape[1])] + ["theta"]
    rows = [list(c) + [t] for c, t in zip(centers, density.theta)]
    return header, rows


def write_theta_figure(out_dir, density, config_hash):
    """Step plot (1D) or heatmap (2D) of the optimal density, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    path = _fresh_path(out_dir, f"theta_{config_hash}", ".svg")
    fig, ax = plt.subplots(figsize=(6, 3.2))
    grid = density.grid
    if grid.domain.dims == 1:
        edges = np.linspace(0.0, grid.domain.lengths[0], grid.shape[0] + 1)
        ax.stairs(density.theta, edges, fill=True, alpha=0.6)
        ax.set_xlabel("x")
        ax.set_ylabel("theta")
        ax.set_ylim(-0.02, 1.02)
    else:
        field = density.theta.reshape(grid.shape)
        im = ax.imshow(
            field.T,
            origin="lower",
            extent=(0, grid.domain.lengths[0], 0, grid.domain.lengths[1]),
            vmin=0.0,
            vmax=1.0,
            aspect="auto",
        )
        fig.colorbar(im, ax=ax, label="theta")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    ax.set_title("relaxed actuator density")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
