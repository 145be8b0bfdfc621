"""Gaussian relevance between frame embeddings and the temporal redundancy study.

Temporal smoothness of the synthetic generator (the AR(1) coefficient) plays
the role of frame rate: rho near 1 means adjacent frames are nearly identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidArgumentError

HISTOGRAM_BINS = 20


class DegenerateBandwidthWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Isotropic (scalar) or diagonal bandwidth for the relevance kernel.

    ``sigma`` is a standard deviation, so the kernel covariance is
    ``diag(sigma**2)``.
    """

    sigma: float | tuple[float, ...] = 1.0
    normalize: bool = False
    fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if sig.ndim != 1 or not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise InvalidArgumentError(f"bandwidth must be positive in every dimension, got {self.sigma}")
        if isinstance(self.sigma, (list, np.ndarray)):
            object.__setattr__(self, "sigma", tuple(float(s) for s in sig))

    def sigma_vector(self, dim: int) -> np.ndarray:
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if sig.size == 1:
            return np.full(dim, sig[0])
        if sig.size != dim:
            raise InvalidArgumentError(f"diagonal bandwidth has {sig.size} entries, features have {dim}")
        return sig

    def log_normalizer(self, dim: int) -> float:
        """log Z with Z = 1 / sqrt(det(2 pi Sigma))."""
        sig = self.sigma_vector(dim)
        return float(-0.5 * dim * math.log(2 * math.pi) - np.sum(np.log(sig)))


def relevance(x_i, x_j, config: KernelConfig = KernelConfig()) -> float:
    """Gaussian-kernel relevance between two embeddings.

    Unnormalized values lie in (0, 1] and reach 1 only for identical inputs;
    with ``config.normalize`` the value is the Gaussian density (times Z).
    """
    a = np.asarray(x_i, dtype=np.float64)
    b = np.asarray(x_j, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sig = config.sigma_vector(a.size)
    # (a - b) vs (b - a) squares identically, so the kernel is exactly symmetric
    q = float(np.sum(((a - b) / sig) ** 2))
    log_val = -0.5 * q
    if config.normalize:
        log_val += config.log_normalizer(a.size)
    return math.exp(log_val)


def pairwise_relevance(frames: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Unnormalized relevance for every pair of rows of ``frames`` (K x K)."""
    x = frames / config.sigma_vector(frames.shape[1])
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    return np.exp(-0.5 * d2)


def consecutive_relevance(frames: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Unnormalized relevance of each adjacent pair (t, t+1)."""
    x = np.asarray(frames, dtype=np.float64)
    diff = (x[1:] - x[:-1]) / config.sigma_vector(x.shape[1])
    return np.exp(-0.5 * np.sum(diff * diff, axis=1))


def median_bandwidth(pairs) -> KernelConfig:
    """Fit a scalar bandwidth with the median heuristic.

    sigma = median pairwise distance / sqrt(2). If every distance is zero the
    fit falls back to sigma = 1 and the returned config has ``fallback`` set.
    """
    pairs = list(pairs)
    if len(pairs) < 1:
        raise InvalidArgumentError("median_bandwidth needs at least one pair")
    dists = np.array([np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)) for a, b in pairs])
    return bandwidth_from_distances(dists)


def bandwidth_from_distances(dists) -> KernelConfig:
    med = float(np.median(np.asarray(dists, dtype=np.float64)))
    if not med > 0:
        warnings.warn("all pair distances are zero; using sigma = 1", DegenerateBandwidthWarning, stacklevel=2)
        return KernelConfig(sigma=1.0, fallback=True)
    return KernelConfig(sigma=med / math.sqrt(2.0))


@dataclass
class SweepCell:
    rho: float
    values: np.ndarray

    def summary(self) -> dict:
        v = self.values
        hist, _ = np.histogram(v, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        p10, p50, p90 = np.percentile(v, [10, 50, 90])
        return {
            "rho": float(self.rho),
            "mean": float(v.mean()),
            "p10": float(p10),
            "p50": float(p50),
            "p90": float(p90),
            "n_pairs": int(v.size),
            "histogram": [int(h) for h in hist],
        }


@dataclass
class SweepResult:
    bandwidth: KernelConfig
    cells: list[SweepCell]
    dim: int

    def crossing_rho(self, threshold: float = 0.5) -> float | None:
        """Smallest rho at which mean relevance reaches ``threshold`` (linear interpolation)."""
        pts = sorted((c.rho, float(c.values.mean())) for c in self.cells)
        for k, (rho, m) in enumerate(pts):
            if m >= threshold:
                if k == 0:
                    return rho
                r0, m0 = pts[k - 1]
                return r0 + (threshold - m0) * (rho - r0) / (m - m0)
        return None

    def to_dict(self) -> dict:
        sig = self.bandwidth.sigma
        return {
            "bandwidth": sig if isinstance(sig, float) else list(sig),
            "bandwidth_fallback": self.bandwidth.fallback,
            "log_normalizer": self.bandwidth.log_normalizer(self.dim),
            "rho_at_mean_0.5": self.crossing_rho(0.5),
            "cells": [c.summary() for c in self.cells],
        }


def redundancy_sweep(base_config, rhos, videos_per_cell: int, seed: int) -> SweepResult:
    """Consecutive-frame relevance distribution for each smoothness value.

    The bandwidth is fitted once, on a rho = 0 calibration corpus drawn with
    the same seeds, and then frozen across all cells.
    """
    from dataclasses import replace

    from .classifier import corpus_seeds, generate_video

    rhos = [float(r) for r in rhos]
    if not rhos:
        raise InvalidArgumentError("redundancy sweep needs at least one rho value")
    if videos_per_cell < 1:
        raise InvalidArgumentError("videos_per_cell must be >= 1")
    for r in rhos:
        if not 0.0 <= r < 1.0:
            raise InvalidArgumentError(f"rho must be in [0, 1), got {r}")

    seeds = corpus_seeds(seed, videos_per_cell, tag="redundancy")

    def cell_frames(rho: float) -> list[np.ndarray]:
        cfg = replace(base_config, smoothness=rho)
        return [generate_video(replace(cfg, seed=s)).frames for s in seeds]

    calib = cell_frames(0.0)
    dists = np.concatenate([np.linalg.norm(f[1:] - f[:-1], axis=1) for f in calib])
    bandwidth = bandwidth_from_distances(dists)

    cells = []
    for rho in rhos:
        frames = calib if rho == 0.0 else cell_frames(rho)
        vals = np.concatenate([consecutive_relevance(f, bandwidth) for f in frames])
        cells.append(SweepCell(rho, vals))
    return SweepResult(bandwidth, cells, dim=base_config.D)
