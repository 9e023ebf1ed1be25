"""Kernel functions and Nadaraya-Watson neighbor weights.

All kernels are nonincreasing on [0, inf) with K(0) = 1.  The compact ones
vanish beyond u = 1 but keep their boundary value at exactly u = 1, so the
support is closed.  The bandwidth is adaptive: distances are scaled by the
largest neighbor distance, which lands the furthest neighbor exactly on the
support boundary.  Consequence worth remembering: of the smooth kernels
only the gaussian leaves the furthest neighbor any weight, and the naive
kernel weights every neighbor equally, which turns the weighted mean into
a plain arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NoNeighborsError

# Below this, a kernel-weight sum is considered vanished and weights fall
# back to uniform over the neighbors.
KERNEL_SUM_FLOOR = 1e-12


def _naive(u):
    return (u <= 1.0).astype(float)


def _gaussian(u):
    return np.exp(-(u**2))


def _epanechnikov(u):
    return np.where(u <= 1.0, 1.0 - u**2, 0.0)


def _triangular(u):
    return np.where(u <= 1.0, 1.0 - u, 0.0)


def _quartic(u):
    return np.where(u <= 1.0, (1.0 - u**2) ** 2, 0.0)


def _triweight(u):
    return np.where(u <= 1.0, (1.0 - u**2) ** 3, 0.0)


def _tricube(u):
    return np.where(u <= 1.0, (1.0 - u**3) ** 3, 0.0)


_KERNELS = {
    "naive": _naive,
    "gaussian": _gaussian,
    "epanechnikov": _epanechnikov,
    "triangular": _triangular,
    "quartic": _quartic,
    "triweight": _triweight,
    "tricube": _tricube,
}

KERNEL_NAMES = tuple(_KERNELS)


def kernel_eval(kind: str, u):
    """Evaluate kernel `kind` at scaled distance(s) u >= 0.

    Accepts a scalar or an array; returns the same shape.

    Raises:
        InputError: on an unknown kernel or a negative/non-finite u.
    """
    if kind not in _KERNELS:
        raise InputError(
            f"unknown kernel {kind!r}; choose from {', '.join(KERNEL_NAMES)}"
        )
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise InputError("kernel argument must be finite and >= 0")
    out = _KERNELS[kind](arr)
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class WeightVector:
    """Normalized neighbor weights for one imputation.

    `fallback_used` marks that the kernel weights vanished (or every
    distance was zero) and uniform weights were substituted.
    """

    weights: dict[str, float]
    fallback_used: bool


def nadaraya_watson_weights(kind: str, distances: dict[str, float]) -> WeightVector:
    """Kernel weights over neighbors at the given distances.

    The bandwidth is the largest neighbor distance, so the furthest
    neighbor sits exactly on the support boundary.  If every kernel value
    vanishes (all-zero distances included), weights fall back to uniform.

    Raises:
        NoNeighborsError: on an empty neighbor set.
        InputError: on negative or non-finite distances.
    """
    if not distances:
        raise NoNeighborsError("no neighbors to weight")
    ids = list(distances)
    d = np.array([distances[i] for i in ids], dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise InputError("distances must be finite and >= 0")
    h = float(d.max())
    if h <= 0.0:
        w = np.full(len(ids), 1.0 / len(ids))
        return WeightVector(dict(zip(ids, w.tolist())), True)
    k = kernel_eval(kind, d / h)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    total = float(k.sum())
    if total < KERNEL_SUM_FLOOR:
        w = np.full(len(ids), 1.0 / len(ids))
        return WeightVector(dict(zip(ids, w.tolist())), True)
    w = k / total
    return WeightVector(dict(zip(ids, w.tolist())), False)


def kernel_weight_rows(kind: str, dist: np.ndarray, obs: np.ndarray):
    """Vectorized neighbor weights for a batch of imputations.

    Args:
        kind: kernel name.
        dist: (B, N) nonnegative distances from each row's target to every
            candidate neighbor; entries where `obs` is False are ignored.
        obs: (B, N) boolean neighbor availability; each row needs >= 1
            True entry.

    Returns:
        (weights, fallback): (B, N) weights summing to 1 over each row's
        observed entries (0 elsewhere), and a (B,) bool flag marking rows
        that fell back to uniform weights.
    """
    if kind not in _KERNELS:
        raise InputError(
            f"unknown kernel {kind!r}; choose from {', '.join(KERNEL_NAMES)}"
        )
    dist = np.asarray(dist, dtype=float)
    obs = np.asarray(obs, dtype=bool)
    counts = obs.sum(axis=1)
    if np.any(counts == 0):
        raise NoNeighborsError("a batch row has no observed neighbors")
    h = np.where(obs, dist, -np.inf).max(axis=1)
    safe_h = np.where(h > 0, h, 1.0)
    k = _KERNELS[kind](dist / safe_h[:, None]) * obs
    total = k.sum(axis=1)
    fallback = (h <= 0) | (total < KERNEL_SUM_FLOOR)
    uniform = obs / counts[:, None]
    safe_total = np.where(fallback, 1.0, total)
    weights = np.where(fallback[:, None], uniform, k / safe_total[:, None])
    return weights, fallback
