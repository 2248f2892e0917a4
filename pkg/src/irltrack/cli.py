"""Command-line front end: run, ablate, plot.

Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure.
CSV cells are written with repr() of the Python float so that reruns with
the same seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import (
    ExperimentConfig,
    build_setup,
    config_from_dict,
    parse_config,
    serialize_config,
)
from .errors import ConfigError, NumericalError
from .sim import RunRecord, run

WORKERS_ENV = "IRLTRACK_WORKERS"

# columns every run.csv must carry regardless of basis sizes
_FIXED_COLUMNS = (
    "t", "x1", "x2", "x1d", "x2d", "u", "z1", "z2", "e_hjb", "sigma", "xi",
    "g_tilde_norm", "lambda_min_P",
)


def write_csv(path: str, record: RunRecord) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(record.header) + "\n")
        for row in record.rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_metrics(path: str, record: RunRecord) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _execute(cfg: ExperimentConfig, out_dir: str) -> RunRecord:
    """Run one config and write its artifacts into out_dir."""
    setup = build_setup(cfg)
    record = run(setup)
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, cfg.output.csv), record)
    write_metrics(os.path.join(out_dir, "metrics.json"), record)
    if cfg.output.plots:
        _emit_plot_script(out_dir, cfg.output.csv)
    return record


def cmd_run(config_path: str, out_dir: str | None) -> int:
    cfg = parse_config(config_path)
    record = _execute(cfg, out_dir if out_dir is not None else cfg.output.dir)
    print(
        f"run complete: {record.metrics['rows']} rows, "
        f"max|u|={record.metrics['max_abs_u']:.4f}, "
        f"runtime={record.metrics['runtime_s']:.2f}s"
    )
    return 0


def _merge(base: dict, overrides: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_variants(path: str) -> list[tuple[str, dict]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict) or set(doc) - {"variants"}:
        raise ConfigError(f"{path}: expected an object with a 'variants' list")
    raw = doc.get("variants", [])
    if not isinstance(raw, list):
        raise ConfigError("variants: expected a list")
    seen = set()
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or set(entry) - {"name", "overrides"}:
            raise ConfigError(f"variants[{i}]: expected name + overrides")
        name = entry.get("name")
        if not isinstance(name, str) or not name or os.sep in name:
            raise ConfigError(f"variants[{i}].name: bad variant name {name!r}")
        if name in seen or name == "base":
            raise ConfigError(f"variants[{i}].name: duplicate name {name!r}")
        seen.add(name)
        overrides = entry.get("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError(f"variants[{i}].overrides: expected an object")
        out.append((name, overrides))
    return out


def _run_variant(job: tuple[str, dict, str]) -> dict:
    """Worker body: one independent run per variant, artifacts in a subdir.

    Returns a table row; failures are captured per row so one bad variant
    cannot take down the rest of the suite.
    """
    name, doc, out_root = job
    row = {"variant": name, "status": "ok", "error": ""}
    try:
        cfg = config_from_dict(doc)
        record = _execute(cfg, os.path.join(out_root, name))
        m = record.metrics
        row["x1_err_ss"] = m["seg_tail_x1_err"][-1]
        row["final_g_err"] = m["final_g_err"]
        settle = m["critic_settling_time"]
        row["critic_settling_time"] = settle if settle is not None else float("nan")
        row["max_abs_u"] = m["max_abs_u"]
    except (ConfigError, OSError, NumericalError) as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        for key in ("x1_err_ss", "final_g_err", "critic_settling_time", "max_abs_u"):
            row[key] = float("nan")
    return row


def cmd_ablate(config_path: str, variants_path: str, out_dir: str | None) -> int:
    base_cfg = parse_config(config_path)
    variants = load_variants(variants_path)
    out_root = out_dir if out_dir is not None else base_cfg.output.dir

    base_doc = serialize_config(base_cfg)
    jobs = [("base", base_doc, out_root)]
    for name, overrides in variants:
        doc = _merge(base_doc, overrides, "config")
        # each variant must validate on its own; report the bad field now
        # rather than from inside a worker
        try:
            config_from_dict(doc)
        except ConfigError as exc:
            raise ConfigError(f"variant {name!r}: {exc}") from exc
        jobs.append((name, doc, out_root))

    workers = os.environ.get(WORKERS_ENV)
    n_workers = int(workers) if workers else min(len(jobs), os.cpu_count() or 1)
    if n_workers < 1:
        raise ConfigError(f"{WORKERS_ENV}: need at least one worker")
    if n_workers == 1:
        rows = [_run_variant(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_run_variant, jobs))

    os.makedirs(out_root, exist_ok=True)
    header = (
        "variant", "status", "x1_err_ss", "final_g_err",
        "critic_settling_time", "max_abs_u", "error",
    )
    with open(os.path.join(out_root, "table.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for key in header:
                val = row[key]
                cells.append(repr(float(val)) if isinstance(val, float) else str(val))
            fh.write(",".join(cells) + "\n")

    ok = [r for r in rows if r["status"] == "ok"]
    for row in rows:
        mark = "ok " if row["status"] == "ok" else "FAIL"
        print(f"{mark} {row['variant']}: {row.get('error') or ''}".rstrip())
    if not ok:
        # every variant failed; surface the dominant failure class
        if any("NumericalError" in r["error"] for r in rows):
            raise NumericalError("all ablation variants failed")
        raise ConfigError("all ablation variants failed")
    return 0


_PLOT_TEMPLATE = '''\
"""Render the five standard panels from {csv}. Generated file; edit freely."""

import csv

import matplotlib.pyplot as plt

with open({csv!r}, "r", encoding="utf-8") as fh:
    reader = csv.reader(fh)
    header = next(reader)
    data = {{name: [] for name in header}}
    for row in reader:
        for name, cell in zip(header, row):
            data[name].append(float(cell))

t = data["t"]
w_cols = [c for c in header if c.startswith("W") and not c.startswith("Wi")]
wi_cols = [c for c in header if c.startswith("Wi")]

fig, axes = plt.subplots(5, 1, figsize=(9, 16), sharex=True)

for c in w_cols:
    axes[0].plot(t, data[c], label=c)
axes[0].set_ylabel("critic weights")
axes[0].legend(ncol=4, fontsize=7)

for c in wi_cols:
    axes[1].plot(t, data[c], label=c)
axes[1].set_ylabel("identifier weights")
axes[1].legend(ncol=4, fontsize=7)

axes[2].plot(t, data["g_tilde_norm"])
axes[2].set_ylabel("|g - g_hat|")

axes[3].plot(t, data["x1"], label="x1")
axes[3].plot(t, data["x2"], label="x2")
axes[3].plot(t, data["x1d"], "--", label="x1d")
axes[3].plot(t, data["x2d"], "--", label="x2d")
axes[3].set_ylabel("states")
axes[3].legend(fontsize=8)

axes[4].plot(t, data["u"])
axes[4].set_ylabel("control")
axes[4].set_xlabel("t [s]")

fig.tight_layout()
fig.savefig("panels.png", dpi=150)
print("wrote panels.png")
'''


def _emit_plot_script(run_dir: str, csv_name: str) -> str:
    path = os.path.join(run_dir, "plot.py")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_PLOT_TEMPLATE.format(csv=csv_name))
    return path


def cmd_plot(run_dir: str) -> int:
    candidates = [f for f in sorted(os.listdir(run_dir)) if f.endswith(".csv")]
    candidates = [f for f in candidates if f != "table.csv"]
    if not candidates:
        raise ConfigError(f"{run_dir}: no run CSV found")
    csv_name = "run.csv" if "run.csv" in candidates else candidates[0]
    csv_path = os.path.join(run_dir, csv_name)
    with open(csv_path, "r", encoding="utf-8") as fh:
        header_line = fh.readline().strip()
        has_rows = bool(fh.readline().strip())
    if not header_line or not has_rows:
        raise ConfigError(f"{csv_path}: no data rows")
    columns = header_line.split(",")
    missing = [c for c in _FIXED_COLUMNS if c not in columns]
    if not any(c.startswith("W") and not c.startswith("Wi") for c in columns):
        missing.append("W1..")
    if not any(c.startswith("Wi") for c in columns):
        missing.append("Wi1..")
    if missing:
        raise ConfigError(f"{csv_path}: missing columns: {', '.join(missing)}")
    path = _emit_plot_script(run_dir, csv_name)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="irltrack",
        description="Saturated optimal tracking with online identification "
                    "and interval Bellman learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configuration")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)

    p_abl = sub.add_parser("ablate", help="run base + named variants")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--variants", required=True)
    p_abl.add_argument("--out", default=None)

    p_plot = sub.add_parser("plot", help="emit a plotting script for a run")
    p_plot.add_argument("--run", required=True, dest="run_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.variants, args.out)
        return cmd_plot(args.run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
