"""File formats: layouts, edge lists, panels, reports, checkpoints, SVG.

All tabular data is CSV with '\n' line endings; the manifest and nested
reports are JSON with sorted keys.  Floats are written with repr so a
file is a faithful record of the numbers that produced it, and every
writer goes through an atomic temp-file-then-rename so readers never see
a half-written file.  Missing panel cells are empty cells, not sentinel
numbers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile

import numpy as np

from . import __version__
from .errors import InputError
from .estimators import ImputationResult, Panel, Provenance, timestamp_keys
from .evaluation import EvalReport
from .graph import FarmGraph, FarmLayout, Sensor
from .online import RegretCurve, SimilarityTracker

logger = logging.getLogger(__name__)

CHECKPOINT_COLUMNS = (
    "from",
    "to",
    "y",
    "s_hat",
    "cumulative_loss",
    "revealed_count",
    "running_sum_revealed",
)


def atomic_write_text(path, text: str) -> None:
    """Write `text` to `path` through a same-directory temp file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    return repr(float(value))


def _read_rows(path):
    try:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: file is empty")
    return rows


def _parse_float(text: str, path, line: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError(
            f"{path} line {line}: unparsable {what} {text!r}"
        ) from None
    if not math.isfinite(value):
        raise InputError(f"{path} line {line}: {what} must be finite, got {text!r}")
    return value


# ---------------------------------------------------------------------------
# Layout and edge lists.

LAYOUT_HEADER = ("sensor_id", "latitude", "longitude", "nominal_capacity")


def read_layout(path) -> FarmLayout:
    """Layout CSV: sensor_id,latitude,longitude,nominal_capacity."""
    rows = _read_rows(path)
    if tuple(rows[0]) != LAYOUT_HEADER:
        raise InputError(
            f"{path} line 1: expected header {','.join(LAYOUT_HEADER)}, "
            f"got {','.join(rows[0])}"
        )
    sensors = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise InputError(f"{path} line {line}: expected 4 fields, got {len(row)}")
        sensors.append(
            Sensor(
                row[0].strip(),
                _parse_float(row[1], path, line, "latitude"),
                _parse_float(row[2], path, line, "longitude"),
                _parse_float(row[3], path, line, "capacity"),
            )
        )
    return FarmLayout(tuple(sensors))


def write_layout(path, layout: FarmLayout) -> None:
    rows = [LAYOUT_HEADER]
    for s in layout.sensors:
        rows.append(
            (s.sensor_id, _fmt(s.latitude), _fmt(s.longitude), _fmt(s.nominal_capacity))
        )
    atomic_write_text(path, _csv_text(rows))


def read_edge_list(path):
    """Edge CSV: from,to with an optional weight column.

    Returns:
        (pairs, weights): id pairs in file order and a float array, or
        None when the file has no weight column.
    """
    rows = _read_rows(path)
    header = tuple(rows[0])
    if header == ("from", "to"):
        weighted = False
    elif header == ("from", "to", "weight"):
        weighted = True
    else:
        raise InputError(
            f"{path} line 1: expected header from,to or from,to,weight, "
            f"got {','.join(header)}"
        )
    pairs = []
    weights = []
    want = 3 if weighted else 2
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != want:
            raise InputError(
                f"{path} line {line}: expected {want} fields, got {len(row)}"
            )
        pairs.append((row[0].strip(), row[1].strip()))
        if weighted:
            weights.append(_parse_float(row[2], path, line, "edge weight"))
    return pairs, (np.array(weights) if weighted else None)


def edge_list_csv_text(graph: FarmGraph) -> str:
    if graph.weights is None:
        rows = [("from", "to")]
        rows.extend(graph.edge_ids)
    else:
        rows = [("from", "to", "weight")]
        for (a, b), w in zip(graph.edge_ids, graph.weight_array()):
            rows.append((a, b, _fmt(w)))
    return _csv_text(rows)


def write_edge_list(path, graph: FarmGraph) -> None:
    atomic_write_text(path, edge_list_csv_text(graph))


def components_csv_text(partition) -> str:
    """Component membership CSV: node_id,component."""
    rows = [("node_id", "component")]
    for node, label in partition.assignments.items():
        rows.append((node, str(label)))
    return _csv_text(rows)


def write_components(path, partition) -> None:
    atomic_write_text(path, components_csv_text(partition))


# ---------------------------------------------------------------------------
# Panels.


def load_panel(path, layout: FarmLayout):
    """Read a raw panel CSV and normalize it against the layout.

    The header is `timestamp` followed by sensor ids in any order; the
    column set must match the layout exactly.  Empty cells are missing.
    Raw readings are divided by the sensor's capacity; results outside
    [0, 1] are clamped and counted.

    Returns:
        (panel, clamp_count); a nonzero count is also logged.
    """
    rows = _read_rows(path)
    header = rows[0]
    if not header or header[0] != "timestamp":
        raise InputError(f"{path} line 1: first column must be 'timestamp'")
    cols = [c.strip() for c in header[1:]]
    seen = set()
    for c in cols:
        if c in seen:
            raise InputError(f"{path} line 1: duplicate column {c!r}")
        seen.add(c)
    known = set(layout.ids)
    for c in cols:
        if c not in known:
            raise InputError(f"{path} line 1: unknown sensor column {c!r}")
    for sid in layout.ids:
        if sid not in seen:
            raise InputError(f"{path} line 1: missing sensor column {sid!r}")
    col_pos = {c: k for k, c in enumerate(cols)}
    order = [col_pos[sid] for sid in layout.ids]
    capacities = layout.capacities()

    t_len = len(rows) - 1
    if t_len == 0:
        raise InputError(f"{path}: panel has no data rows")
    n = layout.n
    values = np.full((t_len, n), np.nan)
    mask = np.zeros((t_len, n), dtype=bool)
    timestamps = []
    clamp_count = 0
    width = len(header)
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise InputError(
                f"{path} line {line}: expected {width} fields, got {len(row)}"
            )
        t = line - 2
        timestamps.append(row[0])
        for i, pos in enumerate(order):
            text = row[1 + pos].strip()
            if text == "":
                continue
            raw = _parse_float(text, path, line, f"value in column {cols[pos]!r}")
            norm = raw / capacities[i]
            if norm < 0.0:
                norm = 0.0
                clamp_count += 1
            elif norm > 1.0:
                norm = 1.0
                clamp_count += 1
            values[t, i] = norm
            mask[t, i] = True

    keys = timestamp_keys(timestamps)
    for k in range(1, len(keys)):
        if not keys[k - 1] < keys[k]:
            raise InputError(
                f"{path} line {k + 2}: timestamps must be strictly increasing"
            )
    panel = Panel(tuple(timestamps), layout.ids, values, mask)
    if clamp_count:
        logger.warning(
            "%s: clamped %d out-of-range values into [0, 1]", path, clamp_count
        )
    return panel, clamp_count


def _denormalize(value: float, capacity: float) -> float:
    """Raw reading whose re-normalization reproduces `value` exactly.

    value * capacity rounds, and dividing back can land one ulp off;
    nudge the raw value until the round trip is exact.  Values that came
    from a load always succeed; see `quantize_panel` for the rest.
    """
    raw = value * capacity
    if raw / capacity == value:
        return raw
    lo = hi = raw
    for _ in range(8):
        lo = math.nextafter(lo, -math.inf)
        if lo / capacity == value:
            return lo
        hi = math.nextafter(hi, math.inf)
        if hi / capacity == value:
            return hi
    raise InputError(
        f"cannot encode value {value!r} exactly at capacity {capacity!r}"
    )


def quantize_panel(panel: Panel, layout: FarmLayout) -> Panel:
    """Snap values onto what a raw file at these capacities can express.

    Dividing by a capacity does not reach every double in [0, 1]; a
    value that never came through a load (synthetic data, estimates) may
    sit between two reachable numbers and then no raw reading maps back
    to it.  One multiply-divide round trip moves each observed value to
    the nearest reachable one (at most one ulp away), after which
    writing and re-loading is exact.  Values that already round-trip are
    untouched.
    """
    if panel.sensor_ids != layout.ids:
        raise InputError("panel sensors do not match the layout")
    caps = layout.capacities()
    snapped = np.where(panel.mask, (panel.values * caps) / caps, np.nan)
    return Panel(panel.timestamps, panel.sensor_ids, snapped, panel.mask)


def panel_csv_text(panel: Panel, layout: FarmLayout) -> str:
    """A panel as raw readings (capacity times the stored values)."""
    if panel.sensor_ids != layout.ids:
        raise InputError("panel sensors do not match the layout")
    capacities = layout.capacities()
    rows = [("timestamp",) + panel.sensor_ids]
    for t in range(panel.t_len):
        row = [panel.timestamps[t]]
        for i in range(panel.n_sensors):
            if panel.mask[t, i]:
                row.append(_fmt(_denormalize(float(panel.values[t, i]), capacities[i])))
            else:
                row.append("")
        rows.append(row)
    return _csv_text(rows)


def write_panel(path, panel: Panel, layout: FarmLayout) -> None:
    atomic_write_text(path, panel_csv_text(panel, layout))


def imputation_to_panel(result: ImputationResult) -> Panel:
    """The filled values as a panel; still-missing cells stay masked."""
    mask = np.isfinite(result.filled)
    return Panel(result.timestamps, result.sensor_ids, result.filled, mask)


def provenance_csv_text(result: ImputationResult) -> str:
    """Per-cell provenance labels in panel layout."""
    rows = [("timestamp",) + result.sensor_ids]
    labels = {int(p): p.label for p in Provenance}
    for t, ts in enumerate(result.timestamps):
        row = [ts]
        for i in range(len(result.sensor_ids)):
            row.append(labels[int(result.provenance[t, i])])
        rows.append(row)
    return _csv_text(rows)


def write_provenance(path, result: ImputationResult) -> None:
    atomic_write_text(path, provenance_csv_text(result))


# ---------------------------------------------------------------------------
# Embeddings.


def embedding_csv_text(embeddings) -> str:
    """CSV of embedded nodes: node_id, component, coordinates.

    Components embed with possibly different effective dimensions;
    shorter rows are padded with empty cells.
    """
    width = max((e.r_eff for e in embeddings), default=0)
    header = ["node_id", "component"] + [f"coord_{k + 1}" for k in range(width)]
    rows = [header]
    for emb in embeddings:
        for node, coords in emb.coordinates.items():
            row = [node, str(emb.component_index)]
            row.extend(_fmt(c) for c in coords)
            row.extend([""] * (width - len(coords)))
            rows.append(row)
    return _csv_text(rows)


def embedding_svg_text(embeddings, size: int = 720, margin: int = 60) -> str:
    """Deterministic SVG scatter of the first two embedding coordinates.

    One-dimensional embeddings plot on a line.  Points carry their node
    id as a text label.
    """
    points = []
    for emb in embeddings:
        for node, coords in emb.coordinates.items():
            x = float(coords[0]) if len(coords) >= 1 else 0.0
            y = float(coords[1]) if len(coords) >= 2 else 0.0
            points.append((node, x, y))

    def scale(vals):
        lo, hi = min(vals), max(vals)
        span = hi - lo
        if span == 0.0:
            return lambda v: size / 2.0
        return lambda v: margin + (v - lo) / span * (size - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if points:
        sx = scale([p[1] for p in points])
        sy = scale([p[2] for p in points])
        for node, x, y in points:
            px = sx(x)
            py = size - sy(y)
            parts.append(
                f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="#1f5fa8"/>'
            )
            parts.append(
                f'<text x="{px + 6:.2f}" y="{py - 6:.2f}" font-family="monospace" '
                f'font-size="11">{node}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Reports.


def report_csv_text(report: EvalReport) -> str:
    rows = [("sensor", "scored", "rmse", "naive_rmse", "improvement")]
    for record in report.sensor_rows():
        rows.append(
            (
                record["sensor"],
                str(record["scored"]),
                _fmt(record["rmse"]),
                _fmt(record["naive_rmse"]),
                _fmt(record["improvement"]),
            )
        )
    return _csv_text(rows)


def report_json_text(report: EvalReport) -> str:
    payload = report.summary()
    payload["sensors"] = report.sensor_rows()
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


RANKED_COLUMNS = (
    "method",
    "kernel",
    "r",
    "learning_rate",
    "setup",
    "mean_rmse",
    "sd_rmse",
    "mean_improvement",
    "sd_improvement",
    "improvement_of_means",
    "scored_cells",
)


def ranked_csv_text(reports) -> str:
    rows = [RANKED_COLUMNS]
    for rep in reports:
        s = rep.summary()
        rows.append(
            (
                s["method"],
                s["kernel"],
                str(s["r"]),
                _fmt(s["learning_rate"]),
                s["setup"],
                _fmt(s["mean_rmse"]),
                _fmt(s["sd_rmse"]),
                _fmt(s["mean_improvement"]),
                _fmt(s["sd_improvement"]),
                _fmt(s["improvement_of_means"]),
                str(s["scored_cells"]),
            )
        )
    return _csv_text(rows)


def pivot_csv_text(reports, axis: str) -> str:
    """Mean improvement pivoted by kernel or by embedding dimension.

    Rows are (method, setup) pairs; columns are the distinct values of
    `axis` across the reports; each cell averages the mean improvement
    of the matching reports.
    """
    if axis == "kernel":
        key = lambda rep: rep.kernel
        columns = sorted({rep.kernel for rep in reports})
    elif axis == "r":
        key = lambda rep: rep.r
        columns = sorted({rep.r for rep in reports})
    else:
        raise InputError(f"unknown pivot axis {axis!r}")
    groups = sorted({(rep.method, rep.setup) for rep in reports})
    rows = [("method", "setup") + tuple(str(c) for c in columns)]
    for method, setup in groups:
        row = [method, setup]
        for c in columns:
            hits = [
                rep.mean_improvement
                for rep in reports
                if rep.method == method and rep.setup == setup and key(rep) == c
            ]
            row.append(_fmt(float(np.mean(hits))) if hits else "")
        rows.append(row)
    return _csv_text(rows)


def regret_csv_text(curve: RegretCurve) -> str:
    rows = [("t", "algorithm_loss", "best_constant_loss", "regret")]
    for k in range(curve.t.size):
        rows.append(
            (
                str(int(curve.t[k])),
                _fmt(curve.algorithm_loss[k]),
                _fmt(curve.best_constant_loss[k]),
                _fmt(curve.regret[k]),
            )
        )
    return _csv_text(rows)


def timing_csv_text(report) -> str:
    rows = [("n", "naive_per_row_s", "weighted_per_row_s")]
    for n, a, b in zip(report.n_values, report.naive_per_row, report.weighted_per_row):
        rows.append((str(n), _fmt(a), _fmt(b)))
    rows.append(("slope", _fmt(report.naive_slope), _fmt(report.weighted_slope)))
    return _csv_text(rows)


# ---------------------------------------------------------------------------
# Tracker checkpoints.


def checkpoint_csv_text(tracker: SimilarityTracker) -> str:
    rows = [CHECKPOINT_COLUMNS]
    for k, (a, b) in enumerate(tracker.edge_ids):
        rows.append(
            (
                a,
                b,
                _fmt(tracker.y[k]),
                _fmt(tracker.s_hat[k]),
                _fmt(tracker.cumulative_loss[k]),
                str(int(tracker.revealed_count[k])),
                _fmt(tracker.running_sum_revealed[k]),
            )
        )
    return _csv_text(rows)


def write_checkpoint(path, tracker: SimilarityTracker) -> None:
    atomic_write_text(path, checkpoint_csv_text(tracker))


def read_checkpoint(path, graph: FarmGraph, eta=0.5) -> SimilarityTracker:
    """Restore a tracker for `graph` from a checkpoint file.

    The learning rate is configuration, not state, so it is supplied by
    the caller rather than read from the file.

    Raises:
        InputError: on malformed rows, edges that do not match the
            graph, or a stored guess that is not the projection of its
            stored state.
    """
    rows = _read_rows(path)
    if tuple(rows[0]) != CHECKPOINT_COLUMNS:
        raise InputError(
            f"{path} line 1: expected header {','.join(CHECKPOINT_COLUMNS)}"
        )
    by_edge = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(CHECKPOINT_COLUMNS):
            raise InputError(
                f"{path} line {line}: expected {len(CHECKPOINT_COLUMNS)} fields, "
                f"got {len(row)}"
            )
        pair = (row[0].strip(), row[1].strip())
        if pair in by_edge:
            raise InputError(f"{path} line {line}: duplicate edge {pair}")
        count_text = row[5].strip()
        try:
            count = int(count_text)
        except ValueError:
            raise InputError(
                f"{path} line {line}: unparsable revealed count {count_text!r}"
            ) from None
        if count < 0:
            raise InputError(f"{path} line {line}: revealed count must be >= 0")
        by_edge[pair] = (
            _parse_float(row[2], path, line, "state y"),
            _parse_float(row[3], path, line, "guess s_hat"),
            _parse_float(row[4], path, line, "cumulative loss"),
            count,
            _parse_float(row[6], path, line, "revealed sum"),
            line,
        )
    missing = [e for e in graph.edge_ids if e not in by_edge]
    extra = [e for e in by_edge if e not in set(graph.edge_ids)]
    if missing or extra:
        raise InputError(
            f"{path}: checkpoint edges do not match the graph "
            f"(missing {len(missing)}, unexpected {len(extra)})"
        )
    tracker = SimilarityTracker(graph.edge_ids, eta=eta)
    for k, pair in enumerate(graph.edge_ids):
        y, s_hat, loss, count, total, line = by_edge[pair]
        if s_hat != min(max(y, 0.0), 1.0):
            raise InputError(
                f"{path} line {line}: guess {s_hat!r} is not the clamped state {y!r}"
            )
        if loss < 0:
            raise InputError(f"{path} line {line}: cumulative loss must be >= 0")
        tracker.y[k] = y
        tracker.s_hat[k] = s_hat
        tracker.cumulative_loss[k] = loss
        tracker.revealed_count[k] = count
        tracker.running_sum_revealed[k] = total
    return tracker


# ---------------------------------------------------------------------------
# Manifest.


def manifest_text(command: str, settings: dict) -> str:
    payload = {
        "command": command,
        "version": __version__,
        "settings": settings,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
