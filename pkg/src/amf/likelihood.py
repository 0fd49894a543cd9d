"""Logit likelihood fields.

Every builder returns ``psi = ln p(y | fg) - ln p(y | bg)`` per pixel, the
input field of the mean-field solver.
"""

import json
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit, logit as _logit, logsumexp

from .field import as_scalar_field

DENSITY_FLOOR = 1e-12
_LOG_FLOOR = math.log(DENSITY_FLOOR)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ClampRange:
    lo: float = 1e-5
    hi: float = 1.0 - 1e-5

    def __post_init__(self):
        if not 0.0 < self.lo < self.hi < 1.0:
            raise ValueError("clamp range needs 0 < lo < hi < 1")

    def apply(self, p):
        return np.clip(p, self.lo, self.hi)


@dataclass(frozen=True)
class GaussianClassModel:
    """Class-conditional Gaussians: background ``(mu0, sigma0)``, foreground ``(mu1, sigma1)``."""

    mu0: float
    sigma0: float
    mu1: float
    sigma1: float

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ValueError("standard deviations must be positive")

    @classmethod
    def parse(cls, text):
        """Parse ``"mu0,sigma0,mu1,sigma1"`` (an optional ``gauss:`` prefix is stripped)."""
        if text.startswith("gauss:"):
            text = text[len("gauss:"):]
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected mu0,sigma0,mu1,sigma1, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class MixtureModel:
    components: Tuple[Tuple[float, float, float], ...]  # (weight, mu, sigma)

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("mixture needs at least one component")
        if any(s <= 0 for _, _, s in comps):
            raise ValueError("mixture sigmas must be positive")
        if any(not 0.0 <= w <= 1.0 for w, _, _ in comps):
            raise ValueError("mixture weights must lie in [0, 1]")
        if abs(sum(w for w, _, _ in comps) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")

    def to_json(self):
        return {"components": [{"w": w, "mu": m, "sigma": s} for w, m, s in self.components]}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple((c["w"], c["mu"], c["sigma"]) for c in obj["components"]))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray
    bandwidth: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64).ravel()
        if s.size == 0:
            raise ValueError("KDE needs at least one sample")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "samples", s)


def logit(p):
    """Log-odds ``ln(p / (1 - p))``; raises for values outside (0, 1)."""
    a = np.asarray(p, dtype=np.float64)
    if np.any((a <= 0.0) | (a >= 1.0)):
        raise ValueError("logit is only defined on the open interval (0, 1)")
    out = _logit(a)
    return float(out) if out.ndim == 0 else out


def sigmoid(phi):
    out = expit(np.asarray(phi, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def gaussian_logpdf(y, mu, sigma):
    return -0.5 * ((y - mu) / sigma) ** 2 - math.log(sigma) - _LOG_SQRT_2PI


def _floored(logdens):
    return np.maximum(logdens, _LOG_FLOOR)


def psi_gaussian(y, model):
    """Log-likelihood ratio under Gaussian class models.

    Computed directly from the two log densities, so it reduces to a linear
    function of ``y`` when ``sigma0 == sigma1``.
    """
    y = as_scalar_field(y, "y")
    return (gaussian_logpdf(y, model.mu1, model.sigma1)
            - gaussian_logpdf(y, model.mu0, model.sigma0))


def mixture_logpdf(y, model):
    y = np.asarray(y, dtype=np.float64)
    terms = []
    weights = []
    for w, mu, sigma in model.components:
        if w > 0:
            terms.append(gaussian_logpdf(y, mu, sigma))
            weights.append(w)
    return logsumexp(np.stack(terms), axis=0, b=np.array(weights).reshape((-1,) + (1,) * y.ndim))


def psi_mixture(y, fg, bg):
    y = as_scalar_field(y, "y")
    return _floored(mixture_logpdf(y, fg)) - _floored(mixture_logpdf(y, bg))


def psi_from_probability(p, clamp=None):
    """Logit of an external foreground-probability map, after clamping."""
    clamp = clamp or ClampRange()
    p = as_scalar_field(p, "p")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return _logit(clamp.apply(p))


def silverman_bandwidth(samples):
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        return 1.0
    std = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(std, iqr / 1.349) if iqr > 0 else std
    if spread <= 0:
        return 1.0
    return 0.9 * spread * n ** (-0.2)


def kde_fit(samples, bandwidth=None):
    """Gaussian KDE; ``bandwidth=None`` selects Silverman's rule of thumb."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("KDE needs at least one sample")
    if bandwidth is None or bandwidth == "auto":
        bandwidth = silverman_bandwidth(x)
    return KdeModel(x, float(bandwidth))


def kde_logpdf(y, model, max_samples=2000):
    y = np.asarray(y, dtype=np.float64)
    s = model.samples
    if s.size > max_samples:
        # Evenly strided subset keeps the estimate deterministic.
        s = np.sort(s)[np.linspace(0, s.size - 1, max_samples).astype(int)]
    flat = y.ravel()
    z = (flat[:, None] - s[None, :]) / model.bandwidth
    logk = -0.5 * z * z
    out = logsumexp(logk, axis=1) - math.log(s.size * model.bandwidth) - _LOG_SQRT_2PI
    return out.reshape(y.shape)


def psi_kde(y, fg, bg):
    y = as_scalar_field(y, "y")
    return _floored(kde_logpdf(y, fg)) - _floored(kde_logpdf(y, bg))

