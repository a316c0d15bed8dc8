"""Result files: trajectory arrays with text headers, norm CSVs, JSON-lines records,
summary tables and long-format plot data.

Every file name starts with a run id derived from the resolved configuration;
if a run with the same id already left files behind, a numeric suffix keeps
the old ones intact.  File contents never depend on the suffix, so reruns of
the same configuration produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from typing import Iterable, Optional

import numpy as np

from .config import ExperimentConfig
from .dynamics import Trajectory


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


class RunWriter:
    """Serialises all writes of one command invocation into ``directory``."""

    def __init__(self, directory: str, command: str, cfg: Optional[ExperimentConfig] = None,
                 run_id: Optional[str] = None):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        base = run_id or f"{command}-{config_hash(cfg) if cfg is not None else 'noconfig'}"
        self.base_id = base
        self.run_id = self._free_id(base)
        self.written: list = []

    def _free_id(self, base: str) -> str:
        taken = {name.split(".", 1)[0] for name in os.listdir(self.directory)}
        if base not in taken:
            return base
        i = 1
        while f"{base}-{i}" in taken:
            i += 1
        return f"{base}-{i}"

    def path(self, suffix: str) -> str:
        return os.path.join(self.directory, f"{self.run_id}.{suffix}")

    def text(self, suffix: str, content: str) -> str:
        p = self.path(suffix)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        self.written.append(p)
        return p

    def array(self, suffix: str, values: np.ndarray) -> str:
        p = self.path(suffix)
        np.save(p, np.ascontiguousarray(values), allow_pickle=False)
        self.written.append(p)
        return p

    def jsonl(self, suffix: str, records: Iterable[dict]) -> str:
        lines = [json.dumps(_jsonable(r), sort_keys=True) for r in records]
        return self.text(suffix, "\n".join(lines) + ("\n" if lines else ""))

    def json(self, suffix: str, payload: dict) -> str:
        return self.text(suffix, json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def commented(lines: Iterable[str]) -> str:
    return "".join(f"# {line}\n" for line in lines)


def csv_table(header_comments: list, columns: list, rows: Iterable) -> str:
    buf = io.StringIO()
    buf.write(commented(header_comments))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def aligned_table(columns: list, rows: list) -> str:
    cells = [[str(c) for c in columns]] + [[_short(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


# --------------------------------------------------------------------------- trajectories

NORM_COLUMNS = [
    ("step", "time-step index j"),
    ("t", "time t_j = j * dt"),
    ("l2", "||u(t_j)||_{L^2} (discrete, sum |u|^2 dx)^(1/2)"),
    ("l10", "||u(t_j)||_{L^10}"),
    ("theta", "truncation factor used on step j (1 = inactive)"),
    ("x2_acc", "running sum_{i<j} ||u(t_i)||_{L^10}^5 dt"),
]


def trajectory_header(traj: Trajectory, cfg: ExperimentConfig, lineage: tuple) -> str:
    g = traj.grid
    lines = [
        "snlslab trajectory",
        f"grid.half_width: {g.half_width!r}",
        f"grid.n_points: {g.n_points}",
        f"dt: {traj.dt!r}",
        f"n_steps: {traj.n_steps}",
        f"seed_lineage: master_seed={lineage[0]} path_index={lineage[1]}",
        f"snapshots: {len(traj.snapshot_steps)} complex128 rows of length {g.n_points}"
        " (file .snapshots.npy); snapshot steps in .steps.npy",
        "resolved configuration:",
    ]
    return "\n".join(lines) + "\n" + cfg.to_yaml()


def write_trajectory(writer: RunWriter, traj: Trajectory, cfg: ExperimentConfig, lineage: tuple,
                     tag: str = "") -> dict:
    pre = f"{tag}." if tag else ""
    files = {
        "header": writer.text(f"{pre}header.txt", trajectory_header(traj, cfg, lineage)),
        "snapshots": writer.array(f"{pre}snapshots.npy", np.asarray(traj.snapshots, dtype=complex)),
        "steps": writer.array(f"{pre}steps.npy", np.asarray(traj.snapshot_steps, dtype=np.int64)),
    }
    rows = zip(range(traj.n_steps + 1), traj.grid_times, traj.l2, traj.l10, traj.theta, traj.x2_acc)
    files["norms"] = writer.text(
        f"{pre}norms.csv",
        csv_table([f"{c}: {d}" for c, d in NORM_COLUMNS]
                  + [f"seed_lineage: {lineage[0]}/{lineage[1]}"],
                  [c for c, _ in NORM_COLUMNS], rows))
    return files


def mass_report(traj: Trajectory) -> dict:
    m0 = float(traj.l2[0])
    return {"initial_l2": m0, "max_relative_drift": traj.mass_drift(),
            "final_l2": float(traj.l2[-1]), "tolerance": 1e-10,
            "within_tolerance": traj.mass_drift() <= 1e-10}


# --------------------------------------------------------------------------- plot data

PLOT_COLUMNS = ["series", "x_name", "x", "y_name", "y", "lo", "hi"]


def plot_rows_csv(rows: list, comments: list) -> str:
    return csv_table(comments + ["long format: one row per (series, x); lo/hi are the bootstrap 95% interval"],
                     PLOT_COLUMNS, rows)
