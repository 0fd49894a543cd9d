"""Exact posterior of the boundary-length model and comparisons with AMF.

The unnormalised log posterior of a labeling ``z`` is

    ln P(z | y) = sum_i z_i psi_i - lam * L(z) + const

with ``L`` the discrete boundary length (total variation of ``z``).  This
module evaluates it, samples it with a Gibbs sampler, and compares it with
the factorised approximation ``Q(z; theta)``.

Functions that take labelings accept stacks of shape ``(..., H, W)``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .field import TvMode, as_scalar_field
from .likelihood import ClampRange, logit
from .meanfield import AmfParams, map_labels, probabilities, solve_logits
from .rof import RofParams

log = logging.getLogger(__name__)

# Largest grid enumerated exhaustively (2**16 labelings).
MAX_ENUMERATION_PIXELS = 16


def boundary_lengths(z, mode=TvMode.ISOTROPIC):
    """Boundary length of each labeling in a stack ``(..., H, W)``."""
    z = np.asarray(z, dtype=np.float64)
    gx = np.zeros(z.shape)
    gy = np.zeros(z.shape)
    gx[..., :, :-1] = np.diff(z, axis=-1)
    gy[..., :-1, :] = np.diff(z, axis=-2)
    if TvMode.parse(mode) is TvMode.ISOTROPIC:
        per_pixel = np.sqrt(gx * gx + gy * gy)
    else:
        per_pixel = np.abs(gx) + np.abs(gy)
    return per_pixel.sum(axis=(-2, -1))


def log_posterior_unnorm(z, psi, lam, mode=TvMode.ISOTROPIC):
    """``sum(z * psi) - lam * L(z)``, dropping the log-partition constant."""
    z = np.asarray(z)
    psi = as_scalar_field(psi, "psi")
    if z.shape[-2:] != psi.shape:
        raise ValueError(f"dimension mismatch: labels {z.shape[-2:]} vs psi {psi.shape}")
    data = np.tensordot(z.astype(np.float64), psi, axes=([-2, -1], [0, 1]))
    out = data - lam * boundary_lengths(z, mode)
    return float(out) if np.ndim(out) == 0 else out


def log_q(z, theta, clamp=None):
    """Log-probability of labelings under the independent Bernoulli field."""
    clamp = clamp or ClampRange()
    th = clamp.apply(np.asarray(theta, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2:] != th.shape:
        raise ValueError(f"dimension mismatch: labels {z.shape[-2:]} vs theta {th.shape}")
    out = (np.tensordot(z, np.log(th), axes=([-2, -1], [0, 1]))
           + np.tensordot(1.0 - z, np.log1p(-th), axes=([-2, -1], [0, 1])))
    return float(out) if np.ndim(out) == 0 else out


def all_labelings(shape):
    """Every binary labeling of a small grid, shape ``(2**N, H, W)``.

    Labeling ``k`` has pixel ``n`` (row-major) equal to bit ``n`` of ``k``.
    """
    h, w = shape
    n = h * w
    if n > MAX_ENUMERATION_PIXELS:
        raise ValueError(f"grid of {n} pixels is too large to enumerate")
    codes = np.arange(2 ** n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    return bits.reshape(-1, h, w).astype(np.uint8)


def labeling_index(z):
    """Inverse of :func:`all_labelings` for a single labeling."""
    flat = np.asarray(z, dtype=np.int64).ravel()
    return int(np.sum(flat << np.arange(flat.size)))


def boltzmann_distribution(psi, lam, mode=TvMode.ISOTROPIC, temperature=1.0):
    """Exact posterior over all labelings of a small grid (same order as :func:`all_labelings`)."""
    psi = as_scalar_field(psi, "psi")
    a = log_posterior_unnorm(all_labelings(psi.shape), psi, lam, mode) / temperature
    w = np.exp(a - a.max())
    return w / w.sum()


# --- Gibbs sampling -------------------------------------------------------

@dataclass(frozen=True)
class GibbsConfig:
    chains: int = 5
    samples_per_chain: int = 1000
    temperature: float = 1.0
    thin: int = 10
    burn_in: Optional[int] = None  # sweeps; None discards the first 20%
    seed: int = 0
    mode: TvMode = TvMode.ANISOTROPIC

    def __post_init__(self):
        if self.chains < 1 or self.samples_per_chain < 1 or self.thin < 1:
            raise ValueError("chains, samples_per_chain and thin must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        object.__setattr__(self, "mode", TvMode.parse(self.mode))

    @property
    def burn_in_sweeps(self):
        if self.burn_in is not None:
            return self.burn_in
        return (self.samples_per_chain * self.thin) // 4

    @property
    def total_sweeps(self):
        return self.burn_in_sweeps + self.samples_per_chain * self.thin


@dataclass
class SampleSet:
    """Retained Gibbs particles.

    ``labels[k]`` came from chain ``chain_ids[k]`` at sweep ``sweep_indices[k]``
    (1-based, counting burn-in). ``areas`` and ``energies`` are per-chain
    traces over the retained particles, shape ``(chains, samples_per_chain)``;
    energies are ``-log_posterior_unnorm``.
    """

    labels: np.ndarray
    chain_ids: np.ndarray
    sweep_indices: np.ndarray
    areas: np.ndarray
    energies: np.ndarray
    mode: TvMode
    temperature: float = 1.0

    def __len__(self):
        return len(self.labels)

    @property
    def chains(self):
        return self.areas.shape[0]


@numba.njit(cache=True)
def _iso_local_length(z, i, j, h):
    # Isotropic boundary-length terms that involve pixel (i, j) set to h:
    # its own forward differences and those of its left and upper neighbours.
    H, W = z.shape
    gx = z[i, j + 1] - h if j + 1 < W else 0.0
    gy = z[i + 1, j] - h if i + 1 < H else 0.0
    s = np.sqrt(gx * gx + gy * gy)
    if j > 0:
        gx = h - z[i, j - 1]
        gy = z[i + 1, j - 1] - z[i, j - 1] if i + 1 < H else 0.0
        s += np.sqrt(gx * gx + gy * gy)
    if i > 0:
        gx = z[i - 1, j + 1] - z[i - 1, j] if j + 1 < W else 0.0
        gy = h - z[i - 1, j]
        s += np.sqrt(gx * gx + gy * gy)
    return s


@numba.njit(cache=True, nogil=True)
def _gibbs_sweeps(z, psi, lam, inv_t, iso, uniforms):
    """Raster-order single-site updates of ``z`` (float64, in place).

    Runs one sweep per leading slice of ``uniforms``.
    """
    H, W = z.shape
    for s in range(uniforms.shape[0]):
        for i in range(H):
            for j in range(W):
                if iso:
                    dlen = _iso_local_length(z, i, j, 1.0) - _iso_local_length(z, i, j, 0.0)
                else:
                    # |1 - z_n| - |0 - z_n| summed over the 4-neighbours
                    count = 0
                    ones = 0.0
                    if i > 0:
                        count += 1
                        ones += z[i - 1, j]
                    if i + 1 < H:
                        count += 1
                        ones += z[i + 1, j]
                    if j > 0:
                        count += 1
                        ones += z[i, j - 1]
                    if j + 1 < W:
                        count += 1
                        ones += z[i, j + 1]
                    dlen = count - 2.0 * ones
                # energy e_h = -h * psi + lam * L; P(z = 1) = 1 / (1 + exp((e1 - e0) / T))
                x = (lam * dlen - psi[i, j]) * inv_t
                p1 = 1.0 / (1.0 + np.exp(x))
                z[i, j] = 1.0 if uniforms[s, i, j] < p1 else 0.0


def _run_chain(psi, lam, cfg, rng, block_values=1 << 20):
    h, w = psi.shape
    inv_t = 1.0 / cfg.temperature
    iso = cfg.mode is TvMode.ISOTROPIC
    lam = float(lam)
    block = max(1, block_values // (h * w))

    z = (rng.random((h, w)) < 0.5).astype(np.float64)
    remaining = cfg.burn_in_sweeps
    while remaining > 0:
        n = min(block, remaining)
        _gibbs_sweeps(z, psi, lam, inv_t, iso, rng.random((n, h, w)))
        remaining -= n

    out = np.empty((cfg.samples_per_chain, h, w), dtype=np.uint8)
    per_block = max(1, block // cfg.thin)
    k = 0
    while k < cfg.samples_per_chain:
        m = min(per_block, cfg.samples_per_chain - k)
        u = rng.random((m * cfg.thin, h, w))
        for r in range(m):
            _gibbs_sweeps(z, psi, lam, inv_t, iso, u[r * cfg.thin:(r + 1) * cfg.thin])
            out[k] = z
            k += 1
    return out


def gibbs_sample(psi, lam, cfg=None, workers=1):
    """Sample the exact posterior with independent single-site Gibbs chains.

    Each chain starts from i.i.d. fair coins and updates pixels in raster
    order from their two-state conditional at temperature ``cfg.temperature``.
    Chain ``c`` uses the ``c``-th child of ``SeedSequence(cfg.seed)``, so
    results are reproducible and do not depend on ``workers``, the number of
    chains run concurrently in threads.
    """
    cfg = cfg or GibbsConfig()
    psi = as_scalar_field(psi, "psi")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    rngs = [np.random.default_rng(ss) for ss in np.random.SeedSequence(cfg.seed).spawn(cfg.chains)]
    if workers > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=min(workers, cfg.chains)) as pool:
            labels = list(pool.map(lambda rng: _run_chain(psi, lam, cfg, rng), rngs))
    else:
        labels = [_run_chain(psi, lam, cfg, rng) for rng in rngs]
    retained_sweeps = cfg.burn_in_sweeps + cfg.thin * np.arange(1, cfg.samples_per_chain + 1)
    chain_ids = [np.full(cfg.samples_per_chain, c) for c in range(cfg.chains)]
    sweeps = [retained_sweeps] * cfg.chains
    labels = np.concatenate(labels)
    areas = labels.sum(axis=(1, 2), dtype=np.int64).reshape(cfg.chains, -1).astype(np.float64)
    energies = -log_posterior_unnorm(labels, psi, lam, cfg.mode).reshape(cfg.chains, -1)
    return SampleSet(labels, np.concatenate(chain_ids), np.concatenate(sweeps),
                     areas, energies, cfg.mode, cfg.temperature)


def gelman_rubin(traces):
    """Potential scale reduction factor of per-chain scalar traces.

    Parameters
    ----------
    traces : array_like, shape (chains, n)

    Returns
    -------
    float
        ``sqrt(V / W)`` with ``W`` the mean within-chain variance and ``V``
        the pooled variance estimate. Traces that are all constant and equal
        give 1; constant chains at different levels give ``inf``.
    """
    x = np.asarray(traces, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("gelman_rubin needs at least 2 chains of at least 10 points")
    n = x.shape[1]
    within = float(x.var(axis=1, ddof=1).mean())
    between = n * float(x.mean(axis=1).var(ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    pooled = (n - 1) / n * within + between / n
    return float(np.sqrt(pooled / within))


def gibbs_report(samples):
    """Summary statistics of a sample set (JSON-serialisable)."""
    rhat = gelman_rubin(samples.areas) if samples.areas.shape[1] >= 10 and samples.chains >= 2 else None
    mean, var = sample_area_moments(samples)
    return {
        "rhat": rhat,
        "converged": rhat is not None and rhat < 1.1,
        "retained": len(samples),
        "mean_area": mean,
        "var_area": var,
        "mode": samples.mode.value,
    }


# --- statistics -----------------------------------------------------------

def q_area_moments(theta):
    """Mean and variance of the foreground area under the Bernoulli field."""
    th = np.asarray(theta, dtype=np.float64)
    return float(th.sum()), float(np.sum(th * (1.0 - th)))


def sample_area_moments(samples):
    labels = samples.labels if isinstance(samples, SampleSet) else np.asarray(samples)
    if len(labels) == 0:
        raise ValueError("no samples")
    areas = labels.reshape(len(labels), -1).sum(axis=1).astype(np.float64)
    return float(areas.mean()), float(areas.var())


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("correlation undefined for zero-variance sequences")
    return float(np.dot(a, b) / (na * nb))


def compare_correlation(samples, psi, lam, theta, mode=None):
    """Pearson correlation between particle masses under ``P`` and ``Q``.

    Both log-masses are known only up to additive constants; each sequence is
    shifted by its maximum before exponentiation, which leaves the
    correlation unchanged.
    """
    labels = samples.labels if isinstance(samples, SampleSet) else np.asarray(samples)
    if mode is None:
        mode = samples.mode if isinstance(samples, SampleSet) else TvMode.ANISOTROPIC
    if len(labels) < 2:
        raise ValueError("need at least two particles")
    a = np.atleast_1d(log_posterior_unnorm(labels, psi, lam, mode))
    b = np.atleast_1d(log_q(labels, theta))
    return _pearson(np.exp(a - a.max()), np.exp(b - b.max()))


def log_ratio_gap(z, z0, psi, lam, theta, mode=TvMode.ANISOTROPIC, phi=None):
    """Difference of the log probability ratios of ``P`` and ``Q`` against ``z0``.

    ``D = [ln P(z) - ln P(z0)] - [ln Q(z) - ln Q(z0)]`` with ``Q`` written
    through its logits ``phi = logit(theta)`` (pass ``phi`` to skip the
    round trip). For an exact anisotropic AMF solution ``D <= 0`` for every
    ``z`` with equality on superlevel sets of ``phi``.
    """
    psi = as_scalar_field(psi, "psi")
    if phi is None:
        phi = logit(np.clip(np.asarray(theta, dtype=np.float64), 1e-300, 1.0 - 2 ** -53))
    z = np.asarray(z)
    z0 = np.asarray(z0)
    if z.shape[-2:] != psi.shape or z0.shape != psi.shape or np.shape(phi) != psi.shape:
        raise ValueError("dimension mismatch")
    diff = z.astype(np.float64) - z0.astype(np.float64)
    p_ratio = (np.tensordot(diff, psi, axes=([-2, -1], [0, 1]))
               - lam * (boundary_lengths(z, mode) - boundary_lengths(z0, mode)))
    q_ratio = np.tensordot(diff, phi, axes=([-2, -1], [0, 1]))
    out = p_ratio - q_ratio
    return float(out) if np.ndim(out) == 0 else out


def superlevel_sets(phi, atol=1e-7):
    """All distinct nonempty, non-full superlevel sets ``{phi > t}``.

    Values closer than ``atol`` are treated as one level, so solver noise in
    flat regions does not create spurious sets.
    """
    v = np.sort(np.asarray(phi, dtype=np.float64).ravel())
    cuts = np.nonzero(np.diff(v) > atol)[0]
    return [(np.asarray(phi) > 0.5 * (v[k] + v[k + 1])).astype(np.uint8) for k in cuts]


def _min_cut_map(psi, lam):
    """Exact MAP for anisotropic length via an s-t minimum cut."""
    import networkx as nx

    h, w = psi.shape
    g = nx.DiGraph()
    for i in range(h):
        for j in range(w):
            node = (i, j)
            v = float(psi[i, j])
            # source side = foreground; cutting s->n costs psi (label 0), n->t costs -psi
            if v > 0:
                g.add_edge("s", node, capacity=v)
            elif v < 0:
                g.add_edge(node, "t", capacity=-v)
            else:
                g.add_node(node)
            for nb in ((i + 1, j), (i, j + 1)):
                if nb[0] < h and nb[1] < w and lam > 0:
                    g.add_edge(node, nb, capacity=float(lam))
                    g.add_edge(nb, node, capacity=float(lam))
    g.add_node("s")
    g.add_node("t")
    _, (source_side, _) = nx.minimum_cut(g, "s", "t")
    z = np.zeros((h, w), dtype=np.uint8)
    for node in source_side:
        if node != "s":
            z[node] = 1
    return z


def exact_map(psi, lam, mode=TvMode.ANISOTROPIC, tie_atol=1e-12):
    """Most probable labeling under the exact posterior.

    Enumerates grids of up to 16 pixels (any mode); larger anisotropic grids
    are solved exactly by minimum cut. Returns ``(labels, tied)`` where
    ``tied`` is True if enumeration found another labeling within
    ``tie_atol`` of the maximum (always False for the cut).
    """
    psi = as_scalar_field(psi, "psi")
    mode = TvMode.parse(mode)
    if psi.size <= MAX_ENUMERATION_PIXELS:
        zs = all_labelings(psi.shape)
        lp = log_posterior_unnorm(zs, psi, lam, mode)
        k = int(np.argmax(lp))
        tied = int(np.sum(lp >= lp[k] - tie_atol)) > 1
        return zs[k], tied
    if mode is TvMode.ANISOTROPIC:
        return _min_cut_map(psi, lam), False
    raise ValueError("exact MAP for isotropic length is only available by enumeration; "
                     "use sampled_map for larger grids")


def sampled_map(samples, psi, lam):
    """Highest-posterior particle of a sample set."""
    lp = log_posterior_unnorm(samples.labels, psi, lam, samples.mode)
    return samples.labels[int(np.argmax(lp))]


def map_agreement(psi, lam, mode=TvMode.ANISOTROPIC, rof=None, samples=None):
    """Whether the exact-posterior MAP equals the thresholded AMF solution.

    The AMF side is solved to a tight tolerance. For isotropic grids too
    large to enumerate, pass ``samples`` to compare against the sampled
    argmax instead.
    """
    psi = as_scalar_field(psi, "psi")
    mode = TvMode.parse(mode)
    rof = rof or RofParams(tol=1e-12, max_iter=100000, mode=mode)
    theta = probabilities(solve_logits(psi, AmfParams(lam, rof)).u)
    if psi.size > MAX_ENUMERATION_PIXELS and mode is TvMode.ISOTROPIC:
        if samples is None:
            raise ValueError("isotropic grids above 16 pixels need Gibbs samples")
        z = sampled_map(samples, psi, lam)
    else:
        z, _ = exact_map(psi, lam, mode)
    return bool(np.array_equal(z, map_labels(theta)))
