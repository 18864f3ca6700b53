"""CSV metric files and a small dependency-free SVG line plot."""
from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

CSV_COLUMNS = ("round", "grad_norm", "train_loss", "eval_accuracy", "alpha", "mean_cos_sim",
               "downlink", "uplink", "backprops")
LEDGER_KEYS = ("downlink_vectors", "uplink_vectors", "backward_passes",
               "stored_vectors_clientside", "stored_vectors_per_client_serverside")


def fmt(v) -> str:
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return format(float(v), ".12g")


def record_row(rec) -> list[str]:
    return [fmt(rec.round), fmt(rec.global_grad_norm), fmt(rec.train_loss),
            fmt(rec.eval_accuracy), fmt(rec.alpha), fmt(rec.mean_cos_sim),
            fmt(rec.downlink), fmt(rec.uplink), fmt(rec.backprops)]


def ledger_comment(ledger) -> str:
    return "# ledger " + " ".join(f"{k}={getattr(ledger, k)}" for k in LEDGER_KEYS)


def emit_csv(records, ledger, path, note: str | None = None) -> None:
    """Header, one row per record, then the ledger totals as a ``#`` comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow(record_row(rec))
        if ledger is not None:
            fh.write(ledger_comment(ledger) + "\n")
        if note:
            fh.write(f"# {note}\n")


def read_csv(path) -> tuple[list[dict], dict]:
    """Rows as ``{column: float}`` plus the ledger totals from the trailing comment."""
    rows, ledger = [], {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# ledger "):
            for item in ln[len("# ledger "):].split():
                k, v = item.split("=")
                ledger[k] = int(v)
    reader = csv.reader(body)
    header = next(reader, None)
    for vals in reader:
        rows.append({k: float(v) for k, v in zip(header, vals)})
    return rows, ledger


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def emit_svg_lines(series, path, title: str = "", xlabel: str = "", ylabel: str = "",
                   width: int = 640, height: int = 400) -> None:
    """Write ``[(label, [(x, y), ...]), ...]`` as polylines with axes and a legend.

    Non-finite points are dropped.  Scales are linear and fitted to the data.
    """
    series = [(lab, [(float(x), float(y)) for x, y in pts
                     if math.isfinite(float(x)) and math.isfinite(float(y))])
              for lab, pts in series]
    if not series or any(not pts for _, pts in series):
        raise ValueError("every series needs at least one finite point")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="14">'
                   f'{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">'
                   f'{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for i, (lab, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        ly = top + 14 * i + 6
        out.append(f'<g class="legend"><line x1="{left + pw + 12}" y1="{ly}" '
                   f'x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{left + pw + 36}" y="{ly + 4}">{escape(str(lab))}</text></g>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
