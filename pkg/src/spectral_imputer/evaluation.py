"""Leave-one-out evaluation, synthetic panels, and missingness simulation.

The evaluation hides one observed cell at a time, re-runs the configured
estimator on the modified row, and scores the estimate against the hidden
truth.  For the time-varying graph method the per-row similarity guesses
depend only on the rows before it, which the hide does not touch, so the
whole guess sequence can be replayed once up front and every (row, sensor)
score computed independently.  That is what makes the batched fast path
below possible.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, UndefinedScoreError
from .estimators import (
    EstimatorConfig,
    Panel,
    Provenance,
    _WeightedRowImputer,
    geo_distance_matrix,
    instantaneous_similarity,
    revealed_similarity_rows,
    static_embedding_distances,
)
from .graph import FarmGraph, FarmLayout, build_graph, propose_grid_edges
from .kernels import kernel_weight_rows
from .online import track_sequence
from .spectral import DEGENERACY_TOL

SETUPS = ("complete", "incomplete")

# Rows scored per batched eigendecomposition in the weighted fast path.
EVAL_CHUNK = 512


def thread_cap() -> int:
    """Worker cap for config sweeps, from SPECTRAL_IMPUTER_THREADS if set."""
    raw = os.environ.get("SPECTRAL_IMPUTER_THREADS", "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(
                f"SPECTRAL_IMPUTER_THREADS must be an integer, got {raw!r}"
            ) from None
        if cap < 1:
            raise ConfigError("SPECTRAL_IMPUTER_THREADS must be >= 1")
        return cap
    return os.cpu_count() or 1


def rmse(truth: np.ndarray, estimates: np.ndarray) -> float:
    """Root mean squared error over aligned arrays.

    Raises:
        UndefinedScoreError: if the arrays are empty.
    """
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truth.shape != estimates.shape:
        raise InputError(
            f"shape mismatch in rmse: {truth.shape} vs {estimates.shape}"
        )
    if truth.size == 0:
        raise UndefinedScoreError("rmse over an empty set is undefined")
    return float(np.sqrt(np.mean((truth - estimates) ** 2)))


SPLITS = ("all", "first", "second")


def split_rows(t_len: int, split: str, fraction: float = 0.5) -> np.ndarray:
    """(T,) bool mask selecting a row-index portion of a panel.

    "first" keeps the leading `fraction` of rows, "second" the rest, and
    "all" everything, so a validation/test boundary is just an index cut.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; choose from {', '.join(SPLITS)}")
    if not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)")
    keep = np.zeros(t_len, dtype=bool)
    cut = int(round(t_len * fraction))
    if split == "all":
        keep[:] = True
    elif split == "first":
        keep[:cut] = True
    else:
        keep[cut:] = True
    return keep


def scorable_rows(
    mask: np.ndarray, col: int, setup: str, within: np.ndarray | None = None
) -> np.ndarray:
    """Row indices where hiding `col` leaves a scorable estimate.

    complete: rows with every sensor observed.  incomplete: rows where
    `col` is observed alongside at least one other sensor; rows with no
    other observation are skipped for every method rather than scored as
    an automatic failure, so the comparison stays about estimator quality.
    `within` optionally restricts candidates to a row subset.
    """
    if setup not in SETUPS:
        raise ConfigError(f"unknown setup {setup!r}; choose from {', '.join(SETUPS)}")
    if setup == "complete":
        ok = mask.all(axis=1)
    else:
        others = mask.sum(axis=1) - mask[:, col]
        ok = mask[:, col] & (others > 0)
    if within is not None:
        ok = ok & np.asarray(within, dtype=bool)
    return np.flatnonzero(ok)


# ---------------------------------------------------------------------------
# Per-sensor scorers.  Each returns estimates aligned with `rows` plus a
# tally of provenance labels for the non-plain estimates it produced.


def _fixed_distance_estimates(panel, dist, kind, col, rows):
    """Scores for methods whose inter-sensor distances do not change by row.

    `dist` is the (N, N) distance matrix, or None for the plain
    equal-weight mean over observed sensors.
    """
    obs = panel.mask[rows].copy()
    obs[:, col] = False
    vals = np.where(panel.mask, panel.values, 0.0)[rows]
    tally: dict[str, int] = {}
    if dist is None:
        counts = obs.sum(axis=1)
        estimates = (vals * obs).sum(axis=1) / counts
        return estimates, tally
    weights, fallback = kernel_weight_rows(
        kind, np.broadcast_to(dist[col], (rows.size, panel.n_sensors)), obs
    )
    n_fb = int(fallback.sum())
    if n_fb:
        tally[Provenance.UNIFORM_FALLBACK.label] = n_fb
    tally[Provenance.WEIGHTED_KNN.label] = rows.size - n_fb
    estimates = (weights * vals).sum(axis=1)
    return estimates, tally


def _batched_embedding_distances(wch, ei, ej, n, col, r):
    """Distances from `col` to every node, one embedding per row of `wch`.

    Every weight in `wch` must be positive: each row is then one connected
    weighted graph over all n nodes, so the whole chunk reduces to a single
    batched symmetric eigendecomposition.  Per-row effective dimensions are
    widened to their degenerate group exactly as the scalar route does.
    """
    b = wch.shape[0]
    a = np.zeros((b, n, n))
    a[:, ei, ej] = wch
    a[:, ej, ei] = wch
    deg = a.sum(axis=2)
    s = 1.0 / np.sqrt(deg)
    m = -(a * (s[:, :, None] * s[:, None, :]))
    idx = np.arange(n)
    m[:, idx, idx] = 1.0
    m = (m + m.transpose(0, 2, 1)) / 2.0
    eigenvalues, u = np.linalg.eigh(m)
    vectors = u * s[:, :, None]
    base = min(r, n - 1)
    if base < n - 1:
        chained = np.diff(eigenvalues[:, base:], axis=1) <= DEGENERACY_TOL
        ext = np.where(chained.all(axis=1), chained.shape[1], np.argmin(chained, axis=1))
        r_eff = base + ext
    else:
        r_eff = np.full(b, base)
    sq = (vectors[:, :, 1:] - vectors[:, col : col + 1, 1:]) ** 2
    cum = np.cumsum(sq, axis=2)
    ind = np.broadcast_to((r_eff - 1)[:, None, None], (b, n, 1))
    d2 = np.take_along_axis(cum, ind, axis=2)[:, :, 0]
    return np.sqrt(np.maximum(d2, 0.0))


def _weighted_estimates(panel, graph, config, col, rows, guesses, worker):
    """Scores for the time-varying graph method at one hidden sensor.

    Rows whose similarity weights all clear the floor share batched
    eigendecompositions; rows where an edge drops out (splitting the
    graph) go one at a time through the same component logic the
    streaming imputer uses.
    """
    n = panel.n_sensors
    ei, ej = graph.edge_index_arrays()
    hidden = (ei == col) | (ej == col)
    sims = instantaneous_similarity(panel.values[rows][:, ei], panel.values[rows][:, ej])
    both = panel.mask[rows][:, ei] & panel.mask[rows][:, ej] & ~hidden
    w = np.where(both, sims, guesses[rows])
    obs = panel.mask[rows].copy()
    obs[:, col] = False
    vals = np.where(panel.mask, panel.values, 0.0)[rows]

    estimates = np.empty(rows.size)
    tally: dict[str, int] = {}
    fast = (w > config.weight_floor).all(axis=1)
    fast_idx = np.flatnonzero(fast)
    for start in range(0, fast_idx.size, EVAL_CHUNK):
        sel = fast_idx[start : start + EVAL_CHUNK]
        dist = _batched_embedding_distances(w[sel], ei, ej, n, col, config.r)
        weights, fallback = kernel_weight_rows(config.kernel, dist, obs[sel])
        estimates[sel] = (weights * vals[sel]).sum(axis=1)
        n_fb = int(fallback.sum())
        if n_fb:
            tally[Provenance.UNIFORM_FALLBACK.label] = (
                tally.get(Provenance.UNIFORM_FALLBACK.label, 0) + n_fb
            )
        tally[Provenance.WEIGHTED_KNN.label] = (
            tally.get(Provenance.WEIGHTED_KNN.label, 0) + sel.size - n_fb
        )
    for b in np.flatnonzero(~fast):
        row_vals = np.where(obs[b], vals[b], np.nan)
        est, codes = worker.impute_row(row_vals, obs[b], w[b])
        estimates[b] = est[col]
        label = Provenance(int(codes[col])).label
        tally[label] = tally.get(label, 0) + 1
    return estimates, tally


# ---------------------------------------------------------------------------
# Reports.


@dataclass
class EvalReport:
    """Leave-one-out scores for one estimator configuration.

    Per-sensor arrays are aligned with `sensor_ids`; sensors with no
    scorable rows under the setup carry NaN scores and are left out of
    the aggregates.  The equal-weight mean baseline is scored on exactly
    the same hidden cells, so improvements compare like with like.
    """

    method: str
    kernel: str
    r: int
    learning_rate: float
    setup: str
    sensor_ids: tuple[str, ...]
    rmse: np.ndarray
    naive_rmse: np.ndarray
    scored_counts: np.ndarray
    fallback_counts: dict[str, int]
    t_len: int
    complete_row_count: int

    @property
    def improvement(self) -> np.ndarray:
        """Per-sensor fractional improvement over the equal-weight mean."""
        with np.errstate(invalid="ignore", divide="ignore"):
            imp = (self.naive_rmse - self.rmse) / self.naive_rmse
        return np.where(self.naive_rmse == 0.0, 0.0, imp)

    def _scored(self, values: np.ndarray) -> np.ndarray:
        return values[~np.isnan(values)]

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self._scored(self.rmse)))

    @property
    def sd_rmse(self) -> float:
        scored = self._scored(self.rmse)
        return float(np.std(scored, ddof=1)) if scored.size > 1 else 0.0

    @property
    def mean_improvement(self) -> float:
        """Mean of the per-sensor improvements."""
        return float(np.mean(self._scored(self.improvement)))

    @property
    def sd_improvement(self) -> float:
        scored = self._scored(self.improvement)
        return float(np.std(scored, ddof=1)) if scored.size > 1 else 0.0

    @property
    def improvement_of_means(self) -> float:
        """Improvement of the mean RMSE itself; both aggregates are reported."""
        naive = float(np.mean(self._scored(self.naive_rmse)))
        if naive == 0.0:
            return 0.0
        return (naive - self.mean_rmse) / naive

    def summary(self) -> dict:
        return {
            "method": self.method,
            "kernel": self.kernel,
            "r": self.r,
            "learning_rate": self.learning_rate,
            "setup": self.setup,
            "mean_rmse": self.mean_rmse,
            "sd_rmse": self.sd_rmse,
            "mean_improvement": self.mean_improvement,
            "sd_improvement": self.sd_improvement,
            "improvement_of_means": self.improvement_of_means,
            "scored_cells": int(self.scored_counts.sum()),
            "complete_rows": self.complete_row_count,
            "t_len": self.t_len,
            "fallback_counts": dict(sorted(self.fallback_counts.items())),
        }

    def sensor_rows(self) -> list[dict]:
        """One record per sensor, for tabular output."""
        out = []
        for i, sid in enumerate(self.sensor_ids):
            out.append(
                {
                    "sensor": sid,
                    "scored": int(self.scored_counts[i]),
                    "rmse": float(self.rmse[i]),
                    "naive_rmse": float(self.naive_rmse[i]),
                    "improvement": float(self.improvement[i]),
                }
            )
        return out


def leave_one_out_eval(
    panel: Panel,
    config: EstimatorConfig,
    setup: str = "complete",
    layout: FarmLayout | None = None,
    graph: FarmGraph | None = None,
    within: np.ndarray | None = None,
) -> EvalReport:
    """Hide observed cells one at a time and score the estimates.

    The configured estimator and the equal-weight mean baseline are both
    scored on the same cells.  Which cells qualify depends on `setup`;
    see `scorable_rows`.  `within` restricts scoring to a row subset
    (for a validation/test boundary); the similarity tracker still runs
    over the whole stream, since restricting what is scored does not
    change what the estimator would have seen.
    """
    if setup not in SETUPS:
        raise ConfigError(f"unknown setup {setup!r}; choose from {', '.join(SETUPS)}")
    n = panel.n_sensors
    if n < 2:
        raise InputError("leave-one-out evaluation needs at least two sensors")

    dist = None
    worker = None
    guesses = None
    if config.method == "location":
        if layout is None:
            raise ConfigError("method 'location' needs a farm layout")
        if panel.sensor_ids != layout.ids:
            raise InputError("panel sensors do not match the layout")
        dist = geo_distance_matrix(layout)
    elif config.method == "unweighted_graph":
        if graph is None:
            raise ConfigError("method 'unweighted_graph' needs a sensor graph")
        if panel.sensor_ids != graph.node_ids:
            raise InputError("panel sensors do not match the graph")
        dist = static_embedding_distances(graph, config.r)
    elif config.method == "weighted_graph":
        if graph is None:
            raise ConfigError("method 'weighted_graph' needs a sensor graph")
        if panel.sensor_ids != graph.node_ids:
            raise InputError("panel sensors do not match the graph")
        worker = _WeightedRowImputer(graph, config.kernel, config.r, config.weight_floor)
        guesses, _ = track_sequence(
            revealed_similarity_rows(panel, graph), config.learning_rate
        )

    per_rmse = np.full(n, np.nan)
    per_naive = np.full(n, np.nan)
    counts = np.zeros(n, dtype=int)
    fallback_counts: dict[str, int] = {}
    for col in range(n):
        rows = scorable_rows(panel.mask, col, setup, within)
        counts[col] = rows.size
        if rows.size == 0:
            continue
        truth = panel.values[rows, col]
        if config.method == "naive":
            estimates, tally = _fixed_distance_estimates(panel, None, "naive", col, rows)
        elif config.method == "weighted_graph":
            estimates, tally = _weighted_estimates(
                panel, graph, config, col, rows, guesses, worker
            )
        else:
            estimates, tally = _fixed_distance_estimates(
                panel, dist, config.kernel, col, rows
            )
        baseline, _ = _fixed_distance_estimates(panel, None, "naive", col, rows)
        per_rmse[col] = rmse(truth, estimates)
        per_naive[col] = rmse(truth, baseline)
        for label, count in tally.items():
            fallback_counts[label] = fallback_counts.get(label, 0) + count
    return EvalReport(
        method=config.method,
        kernel=config.kernel,
        r=config.r,
        learning_rate=config.learning_rate,
        setup=setup,
        sensor_ids=panel.sensor_ids,
        rmse=per_rmse,
        naive_rmse=per_naive,
        scored_counts=counts,
        fallback_counts=fallback_counts,
        t_len=panel.t_len,
        complete_row_count=int(panel.complete_rows().sum()),
    )


def sweep(
    panel: Panel,
    configs,
    setups=SETUPS,
    layout: FarmLayout | None = None,
    graph: FarmGraph | None = None,
    within: np.ndarray | None = None,
) -> list[EvalReport]:
    """Evaluate many configurations, best mean improvement first.

    Runs configurations concurrently up to `thread_cap()` workers; the
    returned ordering is by score, ties broken by submission order, so the
    report is deterministic either way.
    """
    configs = list(configs)
    for setup in setups:
        if setup not in SETUPS:
            raise ConfigError(
                f"unknown setup {setup!r}; choose from {', '.join(SETUPS)}"
            )
    jobs = [(config, setup) for config in configs for setup in setups]
    cap = min(thread_cap(), len(jobs)) or 1
    if cap == 1:
        reports = [
            leave_one_out_eval(panel, config, setup, layout, graph, within)
            for config, setup in jobs
        ]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cap) as pool:
            futures = [
                pool.submit(
                    leave_one_out_eval, panel, config, setup, layout, graph, within
                )
                for config, setup in jobs
            ]
            reports = [f.result() for f in futures]
    order = sorted(
        range(len(reports)), key=lambda k: (-reports[k].mean_improvement, k)
    )
    return [reports[k] for k in order]


# ---------------------------------------------------------------------------
# Synthetic panels and missingness.


@dataclass(frozen=True)
class MissingnessSpec:
    """How to knock observations out of a fully observed panel.

    mechanism "mcar" drops each cell independently with probability
    `rate`.  mechanism "block" starts an outage at each cell with
    probability `rate` and extends it down the sensor's column for a
    geometric number of steps with mean `block_mean`.
    """

    mechanism: str = "mcar"
    rate: float = 0.1
    block_mean: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("mcar", "block"):
            raise ConfigError(
                f"unknown missingness mechanism {self.mechanism!r}; "
                "choose from mcar, block"
            )
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError("missingness rate must lie in [0, 1)")
        if self.block_mean < 1.0:
            raise ConfigError("mean outage length must be >= 1")


def apply_missingness(panel: Panel, spec: MissingnessSpec) -> Panel:
    """Drop cells from a fully observed panel per `spec`, reproducibly.

    Raises:
        InputError: if the panel already has missing cells; holes must
            come from one place so the ground truth stays known.
    """
    if not panel.mask.all():
        raise InputError("missingness is applied to fully observed panels only")
    rng = np.random.default_rng(spec.seed)
    t, n = panel.values.shape
    mask = np.ones((t, n), dtype=bool)
    if spec.mechanism == "mcar":
        mask = rng.random((t, n)) >= spec.rate
    else:
        for col in range(n):
            starts = np.flatnonzero(rng.random(t) < spec.rate)
            if starts.size == 0:
                continue
            lengths = rng.geometric(1.0 / spec.block_mean, size=starts.size)
            for start, length in zip(starts, lengths):
                mask[start : start + length, col] = False
    values = np.where(mask, panel.values, np.nan)
    return Panel(panel.timestamps, panel.sensor_ids, values, mask)


def synth_panel(
    layout: FarmLayout,
    t_len: int,
    spatial_scale: float,
    temporal_persistence: float,
    seed: int = 0,
    driver_scale: float = 1.2,
    noise_scale: float = 0.6,
) -> Panel:
    """Fully observed synthetic farm panel with tunable structure.

    A single farm-wide driver and a spatially correlated disturbance
    field, both first-order autoregressive with the same persistence,
    are squashed through a logistic so readings land in (0, 1).  The
    disturbance covariance decays with squared distance over
    `spatial_scale`, so nearby sensors disagree less than distant ones;
    larger `driver_scale` relative to `noise_scale` makes every sensor a
    better predictor of every other.
    """
    if t_len < 1:
        raise InputError("panel length must be >= 1")
    if spatial_scale <= 0:
        raise ConfigError("spatial scale must be > 0")
    if not 0.0 <= temporal_persistence < 1.0:
        raise ConfigError("temporal persistence must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n = layout.n
    d = geo_distance_matrix(layout)
    cov = np.exp(-((d / spatial_scale) ** 2))
    eigenvalues, vectors = np.linalg.eigh(cov)
    factor = vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    phi = temporal_persistence
    innovation = np.sqrt(1.0 - phi**2)
    driver = np.empty(t_len)
    field = np.empty((t_len, n))
    driver[0] = rng.standard_normal()
    field[0] = factor @ rng.standard_normal(n)
    for t in range(1, t_len):
        driver[t] = phi * driver[t - 1] + innovation * rng.standard_normal()
        field[t] = phi * field[t - 1] + innovation * (factor @ rng.standard_normal(n))
    signal = driver_scale * driver[:, None] + noise_scale * field
    values = 1.0 / (1.0 + np.exp(-signal))
    timestamps = tuple(str(float(t)) for t in range(t_len))
    return Panel(timestamps, layout.ids, values, np.ones((t_len, n), dtype=bool))


# ---------------------------------------------------------------------------
# Complexity probe.


@dataclass
class TimingReport:
    """Per-timestep cost of the cheapest and dearest methods by farm size.

    Slopes are log-log fits of cost against sensor count; the
    time-varying graph method pays an eigendecomposition per imputed row
    and should steepen visibly while the plain mean barely moves.
    """

    n_values: tuple[int, ...]
    naive_per_row: tuple[float, ...]
    weighted_per_row: tuple[float, ...]

    def _slope(self, times) -> float:
        return float(
            np.polyfit(np.log(np.asarray(self.n_values, dtype=float)), np.log(times), 1)[0]
        )

    @property
    def naive_slope(self) -> float:
        return self._slope(self.naive_per_row)

    @property
    def weighted_slope(self) -> float:
        return self._slope(self.weighted_per_row)

    def summary(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "naive_per_row_s": list(self.naive_per_row),
            "weighted_per_row_s": list(self.weighted_per_row),
            "naive_slope": self.naive_slope,
            "weighted_slope": self.weighted_slope,
        }


def _timing_layout(n: int) -> FarmLayout:
    side = int(np.ceil(np.sqrt(n)))
    coords = [(i % side, i // side) for i in range(n)]
    sensors = [
        (f"t{k:02d}", float(x), float(y), 1.0) for k, (x, y) in enumerate(coords)
    ]
    from .graph import Sensor

    return FarmLayout(tuple(Sensor(*s) for s in sensors))


def complexity_smoke(
    n_values=(10, 20, 40), t_len: int = 200, seed: int = 0, repeats: int = 3
) -> TimingReport:
    """Time the plain mean and the time-varying graph method by farm size.

    Each panel has exactly one missing sensor per row (rotating), so the
    weighted method pays one full-farm embedding per row.  The best of
    `repeats` runs is kept to damp scheduler noise.
    """
    from .estimators import impute_naive, impute_weighted_graph

    naive_times = []
    weighted_times = []
    for n in n_values:
        layout = _timing_layout(n)
        graph = build_graph(layout, propose_grid_edges(layout, "king"))
        full = synth_panel(layout, t_len, spatial_scale=1.5, temporal_persistence=0.6, seed=seed)
        values = full.values.copy()
        mask = np.ones_like(full.mask)
        cols = np.arange(t_len) % n
        mask[np.arange(t_len), cols] = False
        values[~mask] = np.nan
        panel = Panel(full.timestamps, full.sensor_ids, values, mask)

        best_naive = min(
            _timed(lambda: impute_naive(panel)) for _ in range(repeats)
        )
        best_weighted = min(
            _timed(lambda: impute_weighted_graph(panel, graph)) for _ in range(repeats)
        )
        naive_times.append(best_naive / t_len)
        weighted_times.append(best_weighted / t_len)
    return TimingReport(tuple(n_values), tuple(naive_times), tuple(weighted_times))


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start
