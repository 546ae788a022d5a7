"""
Exporter - Write pipeline diagnostics and score tables as CSV.

File exporters return (output_path, rows written) like the rest of the
toolkit; table writers take an open text stream so the CLI can print to stdout.
"""
import csv
import os

from config import ABLATION_HEADER, EVAL_HEADER

FP_HEADER = ("tile", "instance_id", "membership", "score", "removed")
RELABEL_HEADER = ("tile", "fg_to_bg", "bg_to_fg", "skipped")
BLOCK_FIT_HEADER = (
    "block", "row", "col", "mode", "t1", "h1", "t2", "h2",
    "t_o", "t_c", "t_prime", "peak_count", "mid_prominence",
)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_rows(output_path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
    count = 0
    with open(output_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            count += 1
    return output_path, count


def export_fp_decisions(decisions, output_path):
    """One row per instance seen by the false-positive filter."""
    rows = (
        (d.tile, d.instance_id, d.membership, d.score, d.removed)
        for d in decisions
    )
    return _write_rows(output_path, FP_HEADER, rows)


def export_relabel_report(report, output_path):
    """Per-tile flip counts of the self-training pass."""
    rows = (
        (t.tile, t.fg_to_bg, t.bg_to_fg, t.skipped or "")
        for t in report.tiles
    )
    return _write_rows(output_path, RELABEL_HEADER, rows)


def export_block_fits(block_fits, output_path):
    """Histogram fit of every threshold block, in block order."""
    rows = (
        (block.index, block.row, block.col, fit.mode, fit.t1, fit.h1, fit.t2, fit.h2,
         fit.t_o, fit.t_c, fit.t_prime, fit.peak_count, fit.mid_prominence)
        for block, fit in block_fits
    )
    return _write_rows(output_path, BLOCK_FIT_HEADER, rows)


# Stage diagnostics written next to the label maps by `segment --stages`
STAGE_REPORTS = {
    "_fp.csv": lambda outputs, path: export_fp_decisions(outputs.fp_decisions, path),
    "_relabel.csv": lambda outputs, path: export_relabel_report(outputs.relabel_report, path),
    "_blocks.csv": lambda outputs, path: export_block_fits(outputs.block_fits, path),
}


# ─── Score tables ─────────────────────────────────────────

def write_eval_table(rows, means, stream):
    """Per-image AJI/Dice followed by a `mean` row."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVAL_HEADER)
    for row in rows:
        writer.writerow([row["image"], _fmt(row["aji"]), _fmt(row["dice"])])
    writer.writerow(["mean", _fmt(means.get("aji")), _fmt(means.get("dice"))])
    return len(rows)


def write_ablation_table(stage_means, stream, label="AJI"):
    """Mean AJI per stage, one row, columns as ABLATION_HEADER."""
    if len(stage_means) != len(ABLATION_HEADER) - 1:
        raise ValueError(
            f"ablation needs {len(ABLATION_HEADER) - 1} stage values, got {len(stage_means)}"
        )
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(ABLATION_HEADER)
    writer.writerow([label, *(_fmt(float(v)) for v in stage_means)])
