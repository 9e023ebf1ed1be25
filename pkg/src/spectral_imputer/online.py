"""Online tracking of per-edge similarities under partial feedback.

Each tracked edge plays a guess s_hat in [0, 1], pays squared error against
the revealed similarity when there is one, and moves its state by a
gradient step.  The carried state y is the pre-projection iterate: the
gradient is taken at the projected guess, but the step is applied to y
itself, so with a large learning rate y can leave [0, 1] while the played
guess stays clamped.  Rounds without a revealed value leave the state
untouched.

With learning_rate 0.5 the update lands exactly on the revealed value, so
the tracker degenerates to last-value persistence; 1/(2 sqrt(count)) is
the rate tuned to a known number of revealed rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, UndefinedBaselineError


def _as_similarity_row(values, n):
    r = np.asarray(values, dtype=float)
    if r.shape != (n,):
        raise InputError(f"expected {n} similarity entries, got shape {r.shape}")
    missing = np.isnan(r)
    present = r[~missing]
    if np.any(~np.isfinite(present)) or np.any(present < 0) or np.any(present > 1):
        raise InputError("revealed similarities must lie in [0, 1]")
    return r, ~missing


@dataclass(frozen=True)
class EdgeState:
    """Snapshot of one edge's tracker state."""

    edge: tuple[str, str]
    guess: float
    pre_projection: float
    cumulative_loss: float
    revealed_count: int
    running_sum_revealed: float


class SimilarityTracker:
    """Tracks one similarity guess per edge of a fixed edge set.

    Args:
        edge_ids: (from_id, to_id) pairs; order fixes the lane layout that
            `update` rows and checkpoints use.
        eta: learning rate, scalar > 0, or one rate per edge.
    """

    def __init__(self, edge_ids, eta=0.5):
        self.edge_ids = tuple((str(a), str(b)) for a, b in edge_ids)
        n = len(self.edge_ids)
        eta_arr = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
        if np.any(~np.isfinite(eta_arr)) or np.any(eta_arr <= 0):
            raise InputError("learning rate must be > 0")
        self.eta = eta_arr
        self.y = np.ones(n)
        self.s_hat = np.ones(n)
        self.cumulative_loss = np.zeros(n)
        self.revealed_count = np.zeros(n, dtype=np.int64)
        self.running_sum_revealed = np.zeros(n)

    @classmethod
    def for_graph(cls, graph, eta=0.5):
        return cls(graph.edge_ids, eta=eta)

    @property
    def edge_count(self) -> int:
        return len(self.edge_ids)

    @property
    def guesses(self) -> np.ndarray:
        """Current played guesses, one per edge."""
        return self.s_hat.copy()

    def update(self, revealed) -> np.ndarray:
        """Pay losses for one round, then take the gradient step.

        Args:
            revealed: one entry per edge; NaN (or None) marks an edge with
                nothing revealed this round, any other value must lie in
                [0, 1].

        Returns:
            Per-edge squared-error losses paid this round.
        """
        r, rev = _as_similarity_row(revealed, self.edge_count)
        err = np.where(rev, r - self.s_hat, 0.0)
        losses = err**2
        self.cumulative_loss += losses
        # Gradient of (s - s_hat)^2 at the played guess is -2 err; the
        # step lands on the carried pre-projection state.
        self.y = self.y + 2.0 * self.eta * err
        self.s_hat = np.clip(self.y, 0.0, 1.0)
        self.revealed_count += rev
        self.running_sum_revealed += np.where(rev, r, 0.0)
        return losses

    def edge_state(self, a: str, b: str) -> EdgeState:
        """Snapshot for the edge (a, b), order-insensitive.

        Raises:
            KeyError: if the pair is not tracked.
        """
        want = {a, b}
        for k, pair in enumerate(self.edge_ids):
            if set(pair) == want:
                return EdgeState(
                    edge=pair,
                    guess=float(self.s_hat[k]),
                    pre_projection=float(self.y[k]),
                    cumulative_loss=float(self.cumulative_loss[k]),
                    revealed_count=int(self.revealed_count[k]),
                    running_sum_revealed=float(self.running_sum_revealed[k]),
                )
        raise KeyError(f"edge ({a!r}, {b!r}) is not tracked")


def track_sequence(similarities, eta):
    """Run a fresh tracker over a (T, E) similarity history.

    NaN entries are rounds with nothing revealed on that edge.  Returns
    (guesses, losses), both (T, E): `guesses[t]` is what the tracker
    played at round t, before seeing row t.
    """
    sims = np.asarray(similarities, dtype=float)
    if sims.ndim == 1:
        sims = sims[:, None]
    t_len, n = sims.shape
    tracker = SimilarityTracker([("lane", str(k)) for k in range(n)], eta=eta)
    guesses = np.empty((t_len, n))
    losses = np.empty((t_len, n))
    for t in range(t_len):
        guesses[t] = tracker.s_hat
        losses[t] = tracker.update(sims[t])
    return guesses, losses


def best_constant(history) -> float:
    """Mean of the revealed values, the best fixed guess in hindsight.

    Raises:
        UndefinedBaselineError: with nothing revealed.
    """
    h = np.asarray(history, dtype=float)
    rev = ~np.isnan(h)
    if not np.any(rev):
        raise UndefinedBaselineError("no revealed values; baseline undefined")
    return float(np.clip(np.mean(h[rev]), 0.0, 1.0))


def regret(losses, history) -> float:
    """Total paid loss minus the best fixed guess's loss on `history`.

    Missing rounds contribute nothing to either side.  Can be negative.
    """
    losses = np.asarray(losses, dtype=float)
    h = np.asarray(history, dtype=float)
    if losses.shape != h.shape:
        raise InputError("losses and history must have the same length")
    c = best_constant(h)
    rev = ~np.isnan(h)
    best = float(np.sum((h[rev] - c) ** 2))
    return float(losses.sum()) - best


def theoretical_rate(count: int) -> float:
    """Learning rate tuned to a known revealed-round count."""
    if count < 1:
        raise InputError("revealed-round count must be >= 1")
    return 1.0 / (2.0 * np.sqrt(count))


@dataclass(frozen=True)
class RegretCurve:
    """Cumulative losses and regret against the prefix-best constant."""

    t: np.ndarray
    algorithm_loss: np.ndarray
    best_constant_loss: np.ndarray
    regret: np.ndarray


def prefix_best_losses(similarities) -> np.ndarray:
    """(T,) loss of the best constant per prefix, summed over edges.

    Entry t is what an oracle constant chosen after seeing the first
    t+1 rounds would have paid on them; the mean of each edge's revealed
    values minimizes squared loss, giving a closed form from running
    sums.
    """
    sims = np.asarray(similarities, dtype=float)
    if sims.ndim == 1:
        sims = sims[:, None]
    rev = ~np.isnan(sims)
    vals = np.where(rev, sims, 0.0)
    cum_n = np.cumsum(rev, axis=0)
    cum_s = np.cumsum(vals, axis=0)
    cum_s2 = np.cumsum(vals**2, axis=0)
    per_edge = np.where(cum_n > 0, cum_s2 - cum_s**2 / np.maximum(cum_n, 1), 0.0)
    return per_edge.sum(axis=1)


def regret_curve(similarities, eta) -> RegretCurve:
    """Per-round cumulative regret summed over edges.

    The baseline at round t is, per edge, the best fixed guess for the
    first t rounds, so the curve compares against hindsight that grows
    with the data seen so far.
    """
    sims = np.asarray(similarities, dtype=float)
    if sims.ndim == 1:
        sims = sims[:, None]
    _, losses = track_sequence(sims, eta)
    alg = np.cumsum(losses.sum(axis=1))
    best = prefix_best_losses(sims)
    t = np.arange(1, sims.shape[0] + 1)
    return RegretCurve(t, alg, best, alg - best)
