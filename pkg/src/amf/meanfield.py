"""Active mean-field segmentation.

The label probabilities ``theta`` of the factorised Bernoulli field are
obtained by TV-denoising the logit likelihood field ``psi`` and mapping the
result back through the sigmoid.  With unit pixel area, ``lam`` is the
boundary-length prior weight and the ROF weight at the same time.
"""

import logging
import warnings
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import List, Optional, Union

import numpy as np
from scipy.special import expit, xlogy

from .field import (as_probability_field, as_scalar_field,
                    check_same_shape, total_variation)
from .likelihood import (GaussianClassModel, KdeModel, kde_fit, logit, psi_gaussian,
                         psi_kde)
from .rof import RofParams, RofResult, rof_solve

log = logging.getLogger(__name__)

# Representable interior of (0, 1); sigmoid saturates to 0.0 / 1.0 beyond |phi| ~ 37 / 745.
THETA_MIN = np.finfo(np.float64).tiny
THETA_MAX = 1.0 - 2.0 ** -53


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AmfParams:
    lam: float = 1.0
    rof: RofParams = dc_field(default_factory=RofParams)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def mode(self):
        return self.rof.mode


class Estimator(str, Enum):
    GAUSSIAN_MOMENTS = "gauss"
    KDE = "kde"


@dataclass(frozen=True)
class AlternatingConfig:
    max_outer: int = 20
    tol: float = 1e-3
    estimator: Estimator = Estimator.GAUSSIAN_MOMENTS

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        object.__setattr__(self, "estimator", Estimator(self.estimator))


def solve_logits(psi, params):
    """Return the ROF result whose ``u`` is the logit field ``phi``.

    For ``lam == 0`` no regularisation applies and ``phi = psi``.
    """
    psi = as_scalar_field(psi, "psi")
    if params.lam == 0:
        return RofResult(psi.copy(), 0, 0.0, True, np.zeros((2,) + psi.shape))
    result = rof_solve(psi, params.lam, params.rof)
    if not result.converged:
        warnings.warn(f"ROF solver stopped after {result.iterations} iterations "
                      "without reaching tolerance", ConvergenceWarning, stacklevel=3)
    return result


def amf_solve(psi, params=None):
    """Label probabilities ``theta = sigmoid(ROFsolve(psi, lam))``.

    Emits :class:`ConvergenceWarning` when the inner solver hits its
    iteration cap. Saturated values are kept strictly inside (0, 1).
    """
    params = params or AmfParams()
    return probabilities(solve_logits(psi, params).u)


def probabilities(phi):
    """``sigmoid(phi)`` clipped to the representable open unit interval."""
    return np.clip(expit(phi), THETA_MIN, THETA_MAX)


def amf_energy(theta, psi, params):
    """Mean-field free energy ``sum(-theta*psi + H(theta)) + lam * TV(theta)``.

    ``H`` is the negative Bernoulli entropy with ``0 ln 0 = 0``; the energy is
    strictly convex in ``theta``.
    """
    theta = as_probability_field(theta)
    psi = as_scalar_field(psi, "psi")
    check_same_shape(theta, psi)
    entropy = xlogy(theta, theta) + xlogy(1.0 - theta, 1.0 - theta)
    data = float(np.sum(-theta * psi + entropy))
    return data + params.lam * total_variation(theta, params.mode)


def map_labels(theta, threshold=0.5):
    """Most probable labeling of the Bernoulli field; ties go to background."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(theta) > threshold).astype(np.uint8)


def level_set_labels(phi, nu):
    """Superlevel set ``{phi > nu}``, the Chan-Vese solution with area weight ``nu``."""
    return (np.asarray(phi) > nu).astype(np.uint8)


def chan_vese_segment(y, model, params):
    """Gaussian two-class segmentation; returns ``(labels, theta)``."""
    theta = amf_solve(psi_gaussian(y, model), params)
    return map_labels(theta), theta


def otsu_init(y, bins=256):
    """Two-class Gaussian fit by exhaustive threshold search.

    Like Otsu's method but the classes keep separate variances: each candidate
    threshold (one per quantile bin) is scored by the maximised Gaussian
    log-likelihood ``-n0 ln s0 - n1 ln s1``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0 or np.all(y == y[0]):
        raise ValueError("otsu_init needs an image with at least two distinct values")
    ys = np.sort(y)
    n = ys.size
    csum = np.concatenate([[0.0], np.cumsum(ys)])
    csum2 = np.concatenate([[0.0], np.cumsum(ys * ys)])
    var_floor = 1e-12 * max(ys.var(), 1.0)

    thresholds = np.unique(np.quantile(ys, np.arange(1, bins) / bins))
    best = None
    for t in thresholds:
        k = int(np.searchsorted(ys, t, side="right"))
        if k == 0 or k == n:
            continue
        m0, m1 = csum[k] / k, (csum[n] - csum[k]) / (n - k)
        v0 = max(csum2[k] / k - m0 * m0, var_floor)
        v1 = max((csum2[n] - csum2[k]) / (n - k) - m1 * m1, var_floor)
        score = -0.5 * (k * np.log(v0) + (n - k) * np.log(v1))
        if best is None or score > best[0]:
            best = (score, m0, v0, m1, v1)
    if best is None:
        raise ValueError("no threshold splits the image into two classes")
    _, m0, v0, m1, v1 = best
    return GaussianClassModel(mu0=m0, sigma0=np.sqrt(v0), mu1=m1, sigma1=np.sqrt(v1))


@dataclass
class AlternatingResult:
    theta: np.ndarray
    model: Union[GaussianClassModel, tuple]
    outer_iterations: int
    changed_fractions: List[float]
    converged: bool
    degenerate: bool = False


def _psi_for(y, model):
    if isinstance(model, GaussianClassModel):
        return psi_gaussian(y, model)
    fg, bg = model
    return psi_kde(y, fg, bg)


def _estimate(y, z, estimator, scale):
    fg, bg = y[z == 1], y[z == 0]
    if fg.size < 2 or bg.size < 2:
        return None
    if estimator is Estimator.KDE:
        return kde_fit(fg), kde_fit(bg)
    floor = 1e-6 * scale
    return GaussianClassModel(mu0=float(bg.mean()), sigma0=max(float(bg.std()), floor),
                              mu1=float(fg.mean()), sigma1=max(float(fg.std()), floor))


def alternating_fit(y, init, params, cfg=None):
    """Alternate AMF solves with re-estimation of the class models.

    Each outer iteration re-fits the class models from the current MAP
    labeling, re-solves, and compares the new MAP with the previous one. The
    loop ends when fewer than ``cfg.tol`` of the pixels changed, after
    ``cfg.max_outer`` iterations, or when a class becomes (nearly) empty; in
    the last case the previous state is returned with ``degenerate=True``.

    Parameters
    ----------
    y : array_like
        Image.
    init : GaussianClassModel or (KdeModel, KdeModel)
        Starting models; the KDE pair is ``(foreground, background)``.
    """
    cfg = cfg or AlternatingConfig()
    y = as_scalar_field(y, "y")
    if not isinstance(init, GaussianClassModel):
        fg, bg = init
        if not (isinstance(fg, KdeModel) and isinstance(bg, KdeModel)):
            raise TypeError("init must be a GaussianClassModel or a (KdeModel, KdeModel) pair")
    scale = max(float(y.std()), 1.0)

    model = init
    theta = amf_solve(_psi_for(y, model), params)
    z = map_labels(theta)
    if z.all() or not z.any():
        raise ValueError("initial model yields an empty or full segmentation")

    changed = []
    converged = False
    degenerate = False
    k = 0
    for k in range(1, cfg.max_outer + 1):
        new_model = _estimate(y, z, cfg.estimator, scale)
        if new_model is None:
            degenerate = True
            break
        new_theta = amf_solve(_psi_for(y, new_model), params)
        new_z = map_labels(new_theta)
        if new_z.sum() < 2 or (1 - new_z).sum() < 2:
            degenerate = True
            break
        frac = float(np.mean(new_z != z))
        changed.append(frac)
        model, theta, z = new_model, new_theta, new_z
        log.debug("outer iteration %d: %.5f of pixels changed", k, frac)
        if frac < cfg.tol:
            converged = True
            break
    if degenerate:
        warnings.warn("alternating fit hit an empty class; returning last valid state",
                      ConvergenceWarning, stacklevel=2)
    return AlternatingResult(theta, model, k, changed, converged, degenerate)


def ising_vmf_fixed_point(psi, lam, max_iter=10000, tol=1e-10, damping=0.5,
                          periodic=False):
    """Mean-field stationary point of an Ising-regularised model.

    Iterates ``theta <- (1-d) theta + d sigmoid(psi + 4 n lam sum_j (theta_j - 1/2))``
    over 4-neighbours ``j`` (``n`` = neighbour count of the pixel) from the
    unregularised start ``sigmoid(psi)``. Unlike :func:`amf_solve`, the
    coupling biases constant regions away from ``sigmoid(psi)``.

    Returns
    -------
    theta : ndarray
    converged : bool
    """
    psi = as_scalar_field(psi, "psi")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    theta = expit(psi)
    if lam == 0:
        return theta, True

    if periodic:
        count = np.full(psi.shape, 4.0)
    else:
        count = np.zeros(psi.shape)
        count[1:, :] += 1
        count[:-1, :] += 1
        count[:, 1:] += 1
        count[:, :-1] += 1

    def neighbour_sum(c):
        if periodic:
            return (np.roll(c, 1, 0) + np.roll(c, -1, 0)
                    + np.roll(c, 1, 1) + np.roll(c, -1, 1))
        s = np.zeros_like(c)
        s[1:, :] += c[:-1, :]
        s[:-1, :] += c[1:, :]
        s[:, 1:] += c[:, :-1]
        s[:, :-1] += c[:, 1:]
        return s

    for _ in range(max_iter):
        target = expit(psi + 4.0 * count * lam * neighbour_sum(theta - 0.5))
        new = (1.0 - damping) * theta + damping * target
        delta = float(np.max(np.abs(new - theta)))
        theta = new
        if delta < tol:
            return theta, True
    warnings.warn("Ising mean-field iteration did not converge", ConvergenceWarning,
                  stacklevel=2)
    return theta, False


def logit_field(theta, eps: Optional[float] = None):
    """``logit(theta)``, optionally clamping to ``[eps, 1 - eps]`` first."""
    theta = np.asarray(theta, dtype=np.float64)
    if eps is not None:
        theta = np.clip(theta, eps, 1.0 - eps)
    return logit(theta)
