"""Seeded samplers for the simulation settings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("gaussian", "gaussian_mixture", "laplace", "uniform", "exponential")


def _vec(v, dim):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise ValueError(f"parameter of shape {arr.shape} does not match dim={dim}")
    return arr


@dataclass(frozen=True)
class DistributionSpec:
    """A product-form or mixture law on R^dim.

    ``params`` by kind (scalars broadcast to all coordinates):

    * gaussian: ``mean``, ``var``
    * gaussian_mixture: ``components`` = list of {"weight", "mean", "var"}
    * laplace: ``loc``, ``scale``
    * uniform: ``low``, ``high``
    * exponential: ``scale``
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        p = self.params
        if self.kind == "gaussian":
            _vec(p.get("mean", 0.0), self.dim)
            if np.any(_vec(p.get("var", 1.0), self.dim) <= 0):
                raise ValueError("variances must be positive")
        elif self.kind == "gaussian_mixture":
            comps = p.get("components")
            if not comps:
                raise ValueError("gaussian_mixture needs at least one component")
            weights = np.array([c["weight"] for c in comps], dtype=float)
            if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            for c in comps:
                _vec(c.get("mean", 0.0), self.dim)
                if np.any(_vec(c.get("var", 1.0), self.dim) <= 0):
                    raise ValueError("variances must be positive")
        elif self.kind == "laplace":
            _vec(p.get("loc", 0.0), self.dim)
            if np.any(_vec(p.get("scale", 1.0), self.dim) <= 0):
                raise ValueError("laplace scale must be positive")
        elif self.kind == "uniform":
            if np.any(_vec(p["low"], self.dim) >= _vec(p["high"], self.dim)):
                raise ValueError("uniform requires low < high componentwise")
        elif self.kind == "exponential":
            if np.any(_vec(p.get("scale", 1.0), self.dim) <= 0):
                raise ValueError("exponential scale must be positive")

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "params": self.params}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["dim"]), dict(d.get("params", {})))


def gaussian(dim, mean=0.0, var=1.0):
    return DistributionSpec("gaussian", dim, {"mean": mean, "var": var})


def gaussian_mixture(dim, components):
    """``components`` is a sequence of (weight, mean, var) triples."""
    comps = [{"weight": w, "mean": m, "var": v} for w, m, v in components]
    return DistributionSpec("gaussian_mixture", dim, {"components": comps})


def laplace(dim, loc=0.0, scale=1.0):
    return DistributionSpec("laplace", dim, {"loc": loc, "scale": scale})


def uniform(dim, low, high):
    return DistributionSpec("uniform", dim, {"low": low, "high": high})


def exponential(dim, scale=1.0):
    return DistributionSpec("exponential", dim, {"scale": scale})


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(spec, n: int, seed=None) -> np.ndarray:
    """``n`` i.i.d. draws as an (n, dim) array; ``seed`` may also be a Generator.

    ``spec`` may also be an (M, d) array, in which case rows are drawn
    uniformly with replacement (bootstrap from an empirical sample).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    if not isinstance(spec, DistributionSpec):
        data = np.asarray(spec, dtype=float)
        if data.ndim != 2 or len(data) == 0:
            raise ValueError("empirical sample must be a non-empty (M, d) array")
        return data[rng.integers(0, len(data), size=n)]
    d, p = spec.dim, spec.params
    if spec.kind == "gaussian":
        mean, sd = _vec(p.get("mean", 0.0), d), np.sqrt(_vec(p.get("var", 1.0), d))
        return mean + sd * rng.standard_normal((n, d))
    if spec.kind == "gaussian_mixture":
        comps = p["components"]
        weights = np.array([c["weight"] for c in comps], dtype=float)
        labels = rng.choice(len(comps), size=n, p=weights / weights.sum())
        z = rng.standard_normal((n, d))
        means = np.stack([_vec(c.get("mean", 0.0), d) for c in comps])
        sds = np.stack([np.sqrt(_vec(c.get("var", 1.0), d)) for c in comps])
        return means[labels] + sds[labels] * z
    if spec.kind == "laplace":
        return rng.laplace(_vec(p.get("loc", 0.0), d), _vec(p.get("scale", 1.0), d), size=(n, d))
    if spec.kind == "uniform":
        return rng.uniform(_vec(p["low"], d), _vec(p["high"], d), size=(n, d))
    return rng.exponential(_vec(p.get("scale", 1.0), d), size=(n, d))
