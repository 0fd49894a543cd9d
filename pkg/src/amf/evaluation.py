"""Segmentation metrics and the quasi-multi-label pipeline.

Multi-class segmentation is approximated by independent one-vs-rest AMF
solves whose per-pixel class probabilities are then projected back onto the
probability simplex.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .field import (as_label_field, as_probability_field, as_scalar_field,
                    check_same_shape)
from .likelihood import ClampRange, psi_from_probability
from .meanfield import AmfParams, amf_solve


def dice(a, b):
    """Dice overlap ``2|A & B| / (|A| + |B|)``; two empty sets score 1."""
    a = as_label_field(a).astype(bool)
    b = as_label_field(b).astype(bool)
    check_same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def multi_label_dice(scores: Sequence[float]) -> float:
    """Mean of the per-object Dice scores of one image."""
    scores = [float(s) for s in scores]
    if not scores:
        raise ValueError("need at least one Dice score")
    return float(np.mean(scores))


def simplex_project(v):
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` along the last axis.

    Sort-and-threshold algorithm: find the largest ``rho`` with
    ``u_rho > (sum_{i<=rho} u_i - 1) / rho`` for the descending sort ``u`` and
    shift by that threshold.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] < 1:
        raise ValueError("need a vector with at least one entry")
    k = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, k + 1)
    cond = u - css / idx > 0
    # cond holds on a prefix; rho is its length
    rho = cond.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(v - tau, 0.0)


def one_vs_rest(prob_maps, params=None, clamp=None, workers=1) -> List[np.ndarray]:
    """AMF label probabilities for each class against all others.

    Parameters
    ----------
    prob_maps : sequence of array_like or ndarray of shape (k, H, W)
        External per-class probability maps.
    params : AmfParams, optional
    clamp : ClampRange, optional
    workers : int
        Number of class solves run concurrently in threads.
    """
    maps = [as_scalar_field(m, "probability map") for m in prob_maps]
    if len(maps) < 2:
        raise ValueError("need at least two classes")
    for m in maps[1:]:
        check_same_shape(maps[0], m)
    params = params or AmfParams()

    def solve(m):
        return amf_solve(psi_from_probability(m, clamp), params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(maps))) as pool:
            return list(pool.map(solve, maps))
    return [solve(m) for m in maps]


def quasi_multilabel(thetas):
    """Project stacked class probabilities onto the simplex and take the argmax.

    Returns
    -------
    probs : ndarray, shape (k, H, W)
        Per-pixel class probabilities summing to one.
    labels : ndarray of int
        Class index per pixel; ties go to the lowest index.
    """
    fields = [as_scalar_field(t, "theta") for t in thetas]
    if len(fields) < 2:
        raise ValueError("need at least two classes")
    for t in fields[1:]:
        check_same_shape(fields[0], t)
    stack = np.stack(fields, axis=-1)
    probs = simplex_project(stack)
    labels = np.argmax(probs, axis=-1)
    return np.moveaxis(probs, -1, 0), labels


@dataclass(frozen=True)
class QArea:
    value: float
    empty_foreground: bool = False
    empty_background: bool = False

    @property
    def flagged(self):
        return self.empty_foreground or self.empty_background


def q_area(z, theta, clamp=None) -> QArea:
    """Area-normalised mass of labeling ``z`` under the Bernoulli field ``theta``.

    ``exp(mean_F ln theta + mean_B ln(1 - theta))`` with ``F``/``B`` the
    foreground/background of ``z``. An empty region drops its term and is
    flagged in the result.
    """
    clamp = clamp or ClampRange()
    z = as_label_field(z).astype(bool)
    th = clamp.apply(as_probability_field(theta))
    check_same_shape(z, th)
    log_mass = 0.0
    if z.any():
        log_mass += float(np.mean(np.log(th[z])))
    if not z.all():
        log_mass += float(np.mean(np.log1p(-th[~z])))
    return QArea(float(np.exp(log_mass)), not z.any(), bool(z.all()))
