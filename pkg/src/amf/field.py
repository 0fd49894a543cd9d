"""Grid containers and discrete differential operators.

Fields are plain numpy arrays indexed ``[row, col]`` = ``[y, x]``:

* scalar fields: ``(height, width)`` float64
* dual fields: ``(2, height, width)`` float64, ``[0]`` is the x-component
* label fields: ``(height, width)`` uint8 with values in {0, 1}

The gradient uses forward differences with Neumann boundary (the last
difference along each axis is zero); the divergence is its exact negative
adjoint, so ``<grad f, v> == -<f, div v>`` holds to rounding.
"""

from enum import Enum

import numpy as np


class TvMode(str, Enum):
    ISOTROPIC = "iso"
    ANISOTROPIC = "aniso"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"iso": cls.ISOTROPIC, "isotropic": cls.ISOTROPIC,
                   "aniso": cls.ANISOTROPIC, "anisotropic": cls.ANISOTROPIC}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown TV mode {value!r} (expected iso or aniso)") from None


def as_scalar_field(f, name="field"):
    """Validate and return ``f`` as a finite 2D float64 array."""
    a = np.asarray(f, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def as_label_field(z, name="labels"):
    """Validate and return ``z`` as a 2D uint8 array of zeros and ones."""
    a = np.asarray(z)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2D array, got shape {a.shape}")
    if a.dtype == bool:
        return a.astype(np.uint8)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return a.astype(np.uint8)


def as_probability_field(theta, name="theta"):
    a = as_scalar_field(theta, name)
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def check_same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def gradient(f):
    """Forward-difference gradient with Neumann boundary.

    Returns an array of shape ``(2, H, W)``; ``g[0]`` holds x-differences
    (along columns) and ``g[1]`` y-differences (along rows).
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.zeros((2,) + f.shape)
    g[0, :, :-1] = f[:, 1:] - f[:, :-1]
    g[1, :-1, :] = f[1:, :] - f[:-1, :]
    return g


def divergence(v):
    """Discrete divergence, the negative adjoint of :func:`gradient`."""
    v = np.asarray(v, dtype=np.float64)
    px, py = v[0], v[1]
    d = np.zeros(px.shape)
    # x part: backward differences, with px[:, -1] treated as zero
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    return d


def gradient_norm(g, mode=TvMode.ISOTROPIC):
    """Per-pixel norm of a dual field (l2 for isotropic, l1 for anisotropic)."""
    if TvMode.parse(mode) is TvMode.ISOTROPIC:
        return np.sqrt(g[0] ** 2 + g[1] ** 2)
    return np.abs(g[0]) + np.abs(g[1])


def total_variation(f, mode=TvMode.ISOTROPIC):
    return float(gradient_norm(gradient(f), mode).sum())


def boundary_length(z, mode=TvMode.ISOTROPIC):
    """Discrete boundary length of a binary labeling (its total variation)."""
    return total_variation(as_label_field(z).astype(np.float64), mode)


def curvature(f, eps=1e-8):
    """Smoothed curvature ``div(grad f / sqrt(|grad f|^2 + eps^2))``.

    Only meant for diagnostics (Euler-Lagrange residuals); the solvers never
    divide by the gradient magnitude.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = gradient(f)
    norm = np.sqrt(g[0] ** 2 + g[1] ** 2 + eps ** 2)
    return divergence(g / norm)
