"""Gaussian RBF kernel, bandwidth selection and Gram blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

FAMILIES = ("gaussian_rbf",)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth ``r`` in k(x, y) = exp(-|x - y|^2 / r^2)."""

    bandwidth: float
    family: str = "gaussian_rbf"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ValueError("bandwidth must be a positive finite number")

    @property
    def bound(self) -> float:
        """Supremum K of the kernel."""
        return 1.0

    def from_sqdist(self, sq):
        return np.exp(-np.asarray(sq) / self.bandwidth**2)

    def to_dict(self):
        return {"family": self.family, "bandwidth": float(self.bandwidth)}

    @classmethod
    def from_dict(cls, d):
        return cls(bandwidth=float(d["bandwidth"]), family=d.get("family", "gaussian_rbf"))


def as_points(a) -> np.ndarray:
    """Coerce a list of vectors (or 1-D sequence of scalars) to an (n, d) float array."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a list of vectors, got array with shape {arr.shape}")
    return arr


def eval_kernel(spec: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / spec.bandwidth**2))


def gram(spec: KernelSpec, block_a, block_b) -> np.ndarray:
    """Matrix of k(a_i, b_j)."""
    a = as_points(block_a)
    b = as_points(block_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return spec.from_sqdist(cdist(a, b, "sqeuclidean"))


def median_heuristic(samples, max_samples: int | None = None, seed: int = 0) -> float:
    """Lower median of the nonzero pairwise Euclidean distances.

    ``max_samples`` caps the number of points used (a seeded subsample), which
    keeps the pairwise computation bounded for large reference sets.
    """
    x = as_points(samples)
    if len(x) < 2:
        raise ValueError("median heuristic needs at least 2 samples")
    if max_samples is not None and len(x) > max_samples:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(len(x), size=max_samples, replace=False)]
    # rescale by the spread so squared differences neither underflow nor overflow
    x = x - x[0]
    spread = float(np.abs(x).max())
    dist = pdist(x / spread) * spread if spread > 0 else np.zeros(1)
    dist = dist[dist > 0]
    if dist.size == 0:
        raise ValueError("degenerate data: all pairwise distances are zero")
    k = (dist.size - 1) // 2
    return float(np.partition(dist, k)[k])
