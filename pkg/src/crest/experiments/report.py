"""Aggregate run records into mean ± std tables and CSV files."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from crest.experiments.records import RunRecord

BATCH_SIZE = 512
TABLE1_COLUMNS = ("agg_accuracy", "agg_false_positive", "map_accuracy", "map_false_positive")


def k_samples(updates: float, batch_size: int = BATCH_SIZE) -> float:
    return updates * batch_size / 1000.0


def _stat(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    # population std so that a single record reports 0
    return float(arr.mean()), float(arr.std())


def _key(labels: dict, fields: Sequence[str]) -> tuple:
    return tuple(labels.get(f) for f in fields)


def group(records: Sequence[RunRecord], fields: Sequence[str]) -> dict[tuple, list[RunRecord]]:
    groups: dict[tuple, list[RunRecord]] = defaultdict(list)
    for r in records:
        groups[_key(r.labels, fields)].append(r)
    return dict(sorted(groups.items(), key=lambda kv: tuple(str(k) for k in kv[0])))


def transfer_table(records: Sequence[RunRecord], fields: Sequence[str]) -> list[dict]:
    rows = []
    for key, recs in group(records, fields).items():
        row = dict(zip(fields, key))
        row["n"] = len(recs)
        for name in ("pretrain_updates", "finetune_updates"):
            mean, std = _stat([r.metrics[name] for r in recs])
            row[f"{name}_mean"], row[f"{name}_std"] = mean, std
            row[f"{name}_ksamples_mean"], row[f"{name}_ksamples_std"] = k_samples(mean), k_samples(std)
        row["pretrain_solved_rate"] = float(np.mean([r.metrics["pretrain_solved"] for r in recs]))
        row["zero_shot_rate"] = float(np.mean([r.metrics["zero_shot"] for r in recs]))
        rows.append(row)
    return rows


def table1_table(records: Sequence[RunRecord]) -> list[dict]:
    rows = []
    for key, recs in group(records, ("class", "dim", "noise")).items():
        row = dict(zip(("class", "dim", "noise"), key))
        row["trials"] = len(recs)
        for c in TABLE1_COLUMNS:
            row[c] = float(np.mean([r.metrics[c] for r in recs]))
        rows.append(row)
    return rows


def slope_ci(x: Sequence[float], y: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Least-squares slope of ``y`` on ``x`` with a two-sided t confidence interval."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    res = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + level / 2, len(x) - 2)
    se = 0.0 if not np.isfinite(res.stderr) else res.stderr
    return float(res.slope), float(res.slope - t * se), float(res.slope + t * se)


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0])
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _format(rows: list[dict], fields: Sequence[str]) -> list[str]:
    lines = []
    for row in rows:
        head = ", ".join(f"{f}={row[f]}" for f in fields)
        lines.append(
            f"{head}: pretrain {row['pretrain_updates_mean']:.2f} ± {row['pretrain_updates_std']:.2f} updates "
            f"({row['pretrain_updates_ksamples_mean']:.2f} ± {row['pretrain_updates_ksamples_std']:.2f} k-samples), "
            f"target {row['finetune_updates_mean']:.2f} ± {row['finetune_updates_std']:.2f} updates "
            f"({row['finetune_updates_ksamples_mean']:.2f} ± {row['finetune_updates_ksamples_std']:.2f} k-samples), "
            f"zero-shot {row['zero_shot_rate']:.2f} [n={row['n']}]"
        )
    return lines


TRANSFER_KEYS = {
    "blocks_scaling": ("architecture", "n_blocks", "target"),
    "blocks_color_shift": ("architecture", "target"),
    "crate_color_shift": ("architecture", "target"),
    "crate_nominal": ("architecture", "stiffness"),
    "crate_stiffness": ("architecture", "stiffness"),
}


def report(records: Sequence[RunRecord]) -> tuple[str, dict[str, str]]:
    """Summary text and ``{file name: CSV text}`` for a set of records."""
    if not records:
        raise ValueError("no records to report")
    by_exp: dict[str, list[RunRecord]] = defaultdict(list)
    for r in records:
        by_exp[r.experiment].append(r)
    lines, files = [], {}
    for exp in sorted(by_exp):
        recs = by_exp[exp]
        hashes = sorted({r.config_hash for r in recs})
        lines.append(f"== {exp} ({len(recs)} records, config {', '.join(hashes)})")
        if exp == "table1":
            rows = table1_table(recs)
            for row in rows:
                lines.append(f"{row['class']:>9} {row['dim']:>3} {row['noise']:>8}: " + " ".join(
                    f"{c}={row[c]:.2f}" for c in TABLE1_COLUMNS) + f" [n={row['trials']}]")
        elif exp in TRANSFER_KEYS:
            rows = transfer_table(recs, TRANSFER_KEYS[exp])
            lines.extend(_format(rows, TRANSFER_KEYS[exp]))
            if exp == "blocks_scaling":
                for kind, krecs in group(recs, ("architecture",)).items():
                    s, lo, hi = slope_ci([r.labels["n_blocks"] for r in krecs],
                                         [r.metrics["pretrain_updates"] for r in krecs])
                    lines.append(f"{kind[0]}: pretrain updates vs blocks slope {s:.3f} (95% CI {lo:.3f} .. {hi:.3f})")
        else:
            rows = [{**r.labels, "seed": r.seed, **{k: v for k, v in r.metrics.items() if not isinstance(v, (list, dict))}}
                    for r in sorted(recs, key=lambda r: r.seed)]
            for row in rows:
                lines.append(", ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
        files[f"{exp}.csv"] = to_csv(rows)
    return "\n".join(lines) + "\n", files


def write_report(records: Sequence[RunRecord], out_dir: str | Path) -> str:
    text, files = report(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(text)
    for name, content in files.items():
        (out / name).write_text(content)
    return text
