"""Synthetic test data: Matérn random-field label maps and the ambiguous circle."""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky
from scipy.spatial.distance import pdist, squareform

from .field import as_label_field, as_scalar_field
from .likelihood import MixtureModel

MAX_DENSE_SIZE = 64
CHOLESKY_JITTER = 1e-10

# Ambiguous-circle scene: (mean, noise std) per region.
CIRCLE_BACKGROUND = (30.0, 5.0)
CIRCLE_UPPER = (50.0, 10.0)
CIRCLE_LOWER = (70.0, 5.0)
CIRCLE_FOREGROUND_MODEL = MixtureModel(((0.5, 50.0, 10.0), (0.5, 70.0, 5.0)))
CIRCLE_BACKGROUND_MODEL = MixtureModel(((0.5, 30.0, 5.0), (0.5, 50.0, 10.0)))


@dataclass(frozen=True)
class MaternConfig:
    size: int = 64
    order_p: int = 1
    length_l: float = 3.0
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("size must be at least 2")
        if self.order_p < 0:
            raise ValueError("order_p must be nonnegative")
        if not self.length_l > 0:
            raise ValueError("length_l must be positive")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")


def matern_covariance(d, l, p=1):
    """Matérn correlation with smoothness ``nu = p + 1/2`` (closed form).

    ``p=0`` is the exponential kernel, ``p=1`` gives
    ``(1 + sqrt(3) d/l) exp(-sqrt(3) d/l)``.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if not l > 0:
        raise ValueError("length scale must be positive")
    p = int(p)
    nu = p + 0.5
    r = math.sqrt(2.0 * nu) * d / l
    # polynomial part of the half-integer Matérn kernel
    poly = np.zeros_like(r)
    fact_p = math.factorial(p)
    fact_2p = math.factorial(2 * p)
    for k in range(p + 1):
        coef = fact_p / fact_2p * math.factorial(p + k) / (math.factorial(k) * math.factorial(p - k))
        poly = poly + coef * (2.0 * r) ** (p - k)
    out = np.exp(-r) * poly
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=8)
def _cholesky_factor(size, l, p):
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    pts = np.column_stack([ii.ravel(), jj.ravel()]).astype(np.float64)
    cov = matern_covariance(squareform(pdist(pts)), l, p)
    cov[np.diag_indices_from(cov)] += CHOLESKY_JITTER
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"Matérn covariance (size={size}, l={l}, p={p}) is not positive definite "
            f"after jitter {CHOLESKY_JITTER}") from exc


def sample_gp_field(cfg, rng=None):
    """Zero-mean, unit-variance Gaussian field with Matérn covariance.

    Dense Cholesky sampling over all pixel pairs, so sizes are capped at 64.
    The factor is cached per ``(size, l, p)``.
    """
    if cfg.size > MAX_DENSE_SIZE:
        raise ValueError(f"dense GP sampling is limited to {MAX_DENSE_SIZE}x{MAX_DENSE_SIZE}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    factor = _cholesky_factor(cfg.size, float(cfg.length_l), int(cfg.order_p))
    return (factor @ rng.standard_normal(cfg.size * cfg.size)).reshape(cfg.size, cfg.size)


def make_ground_truth(f, quantile):
    """Label pixels above the empirical ``quantile`` of ``f`` as foreground."""
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    f = as_scalar_field(f, "f")
    return (f > np.quantile(f, quantile)).astype(np.uint8)


def add_gaussian_noise(z, sigma, seed=0):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    z = as_label_field(z)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return z + sigma * rng.standard_normal(z.shape)


def matern_instance(cfg, quantile=None):
    """Ground truth and noisy image for one Matérn scene.

    ``quantile=None`` draws it uniformly from [0.2, 0.8]; all randomness
    comes from ``cfg.seed``.

    Returns
    -------
    truth : ndarray of uint8
    noisy : ndarray of float64
    quantile : float
    """
    rng = np.random.default_rng(cfg.seed)
    f = sample_gp_field(cfg, rng)
    if quantile is None:
        quantile = float(rng.uniform(0.2, 0.8))
    truth = make_ground_truth(f, quantile)
    return truth, add_gaussian_noise(truth, cfg.noise_sigma, rng), quantile


def circle_regions(size):
    """Boolean masks ``(upper, lower)`` of the centred disc of diameter ``size/2``."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    inside = (yy - c) ** 2 + (xx - c) ** 2 <= (size / 4.0) ** 2
    upper = inside & (yy < c)
    return upper, inside & ~upper


def synth_ambiguous_circle(size=128, seed=0):
    """Circle whose upper half sits between the two class distributions.

    Returns
    -------
    clean, noisy : ndarray
    truth : ndarray of uint8
        The whole disc as foreground.
    fg, bg : MixtureModel
        Class-conditional intensity models.
    """
    if size < 32:
        raise ValueError("size must be at least 32")
    upper, lower = circle_regions(size)
    clean = np.full((size, size), CIRCLE_BACKGROUND[0])
    sigma = np.full((size, size), CIRCLE_BACKGROUND[1])
    clean[upper], sigma[upper] = CIRCLE_UPPER
    clean[lower], sigma[lower] = CIRCLE_LOWER
    rng = np.random.default_rng(seed)
    noisy = clean + sigma * rng.standard_normal((size, size))
    truth = (upper | lower).astype(np.uint8)
    return clean, noisy, truth, CIRCLE_FOREGROUND_MODEL, CIRCLE_BACKGROUND_MODEL
