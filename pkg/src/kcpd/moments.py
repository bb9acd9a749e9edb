"""H0 moment constants of the h-kernel and the closed forms built on them.

Notation: h(x1, x2, y1, y2) = k(x1, x2) + k(y1, y2) - k(x1, y2) - k(x2, y1).
With X, X', ... and Y, Y', ... i.i.d. from the pre-change law,

    C1 = E[h(X, X', Y, Y')^2]
    C2 = Cov[h(X, X', Y, Y'), h(X'', X''', Y, Y')]

and ``third_terms`` holds the six expectations entering E[D_B^3]
(see ``THIRD_TERM_LAYOUT``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from math import comb

import numpy as np

from .kernel import KernelSpec, as_points, gram

# Each term is a product of h(X_a, X_b, Y_c, Y_e) factors given as (a, b, c, e).
THIRD_TERM_LAYOUT = (
    ((0, 1, 0, 1), (1, 2, 1, 2), (2, 0, 2, 0)),  # h h' h'' on a shared triangle
    ((0, 1, 0, 1), (1, 2, 1, 2), (3, 4, 2, 0)),  # triangle, third factor from another block
    ((0, 1, 0, 1), (2, 3, 1, 2), (4, 5, 2, 0)),  # triangle, three different blocks
    ((0, 1, 0, 1), (0, 1, 0, 1), (0, 1, 0, 1)),  # h^3
    ((0, 1, 0, 1), (0, 1, 0, 1), (2, 3, 0, 1)),  # h^2 h'
    ((0, 1, 0, 1), (2, 3, 0, 1), (4, 5, 0, 1)),  # h h' h''
)
N_X, N_Y = 6, 3
MIN_REFERENCE = N_X + N_Y
CHUNK = 8192


@dataclass(frozen=True)
class MomentEstimates:
    C1: float
    C2: float
    third_terms: tuple
    N: int
    rho: float
    n_samples_used: int
    seed: int

    def __post_init__(self):
        if len(self.third_terms) != 6:
            raise ValueError("third_terms must hold six expectations")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @classmethod
    def build(cls, C1, C2, third_terms, N, n_samples_used=0, seed=0):
        """Clamp the raw estimates into C1 >= C2 >= 0 and derive rho."""
        C2 = max(float(C2), 0.0)
        C1 = max(float(C1), C2, np.finfo(float).eps)
        third = tuple(float(v) for v in third_terms)
        return cls(C1, C2, third, int(N), rho_from(C1, C2, N), int(n_samples_used), int(seed))

    def with_blocks(self, N: int) -> "MomentEstimates":
        """Same constants for a different number of pre-change blocks."""
        return replace(self, N=int(N), rho=rho_from(self.C1, self.C2, N))

    def to_dict(self):
        d = asdict(self)
        d["third_terms"] = list(self.third_terms)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(
            C1=float(d["C1"]),
            C2=float(d["C2"]),
            third_terms=tuple(float(v) for v in d["third_terms"]),
            N=int(d["N"]),
            rho=float(d["rho"]),
            n_samples_used=int(d["n_samples_used"]),
            seed=int(d["seed"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "MomentEstimates":
        return cls.from_dict(json.loads(text))


def rho_from(C1: float, C2: float, N: int) -> float:
    return float((C1 / (2 * N) + (N - 1) * C2 / (2 * N)) ** -0.5)


def _distinct_tuples(rng, M, n, k):
    """n rows of k distinct indices drawn uniformly from range(M)."""
    if M < 4 * k * k:
        return np.argsort(rng.random((n, M)), axis=1)[:, :k]
    idx = rng.integers(0, M, size=(n, k))
    while True:
        s = np.sort(idx, axis=1)
        bad = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, M, size=(int(bad.sum()), k))


def h_products(spec: KernelSpec, xs, ys):
    """Per-draw values of h(X0,X1,Y0,Y1)^2, the C2 product and the six third terms.

    ``xs`` has shape (n, 6, d) and ``ys`` (n, 3, d); each row is one draw.
    """

    def k(a, b):
        diff = a - b
        return spec.from_sqdist(np.einsum("nd,nd->n", diff, diff))

    cache = {}

    def h(a, b, c, e):
        key = (a, b, c, e)
        if key not in cache:
            cache[key] = (
                k(xs[:, a], xs[:, b]) + k(ys[:, c], ys[:, e])
                - k(xs[:, a], ys[:, e]) - k(xs[:, b], ys[:, c])
            )
        return cache[key]

    base = h(0, 1, 0, 1)
    c1 = base * base
    c2 = base * h(2, 3, 0, 1)
    third = [h(*f1) * h(*f2) * h(*f3) for f1, f2, f3 in THIRD_TERM_LAYOUT]
    return c1, c2, third


def estimate_moments(reference, spec: KernelSpec, N: int, n_draws: int = 100_000,
                     seed: int = 0) -> MomentEstimates:
    """Monte Carlo estimates of C1, C2 and the third-moment terms.

    Every draw takes nine distinct reference points (six playing X roles,
    three playing Y roles). Draws are generated in fixed chunks seeded by
    ``(seed, chunk_index)``, so results depend only on ``(seed, n_draws)``.
    """
    ref = as_points(reference)
    M = len(ref)
    if M < MIN_REFERENCE:
        raise ValueError(f"need at least {MIN_REFERENCE} reference samples, got {M}")
    if N < 1 or n_draws < 1:
        raise ValueError("N and n_draws must be positive")
    sums = np.zeros(8)
    for chunk, start in enumerate(range(0, n_draws, CHUNK)):
        n = min(CHUNK, n_draws - start)
        rng = np.random.default_rng([seed, chunk])
        idx = _distinct_tuples(rng, M, n, MIN_REFERENCE)
        c1, c2, third = h_products(spec, ref[idx[:, :N_X]], ref[idx[:, N_X:]])
        sums += [c1.sum(), c2.sum(), *(t.sum() for t in third)]
    means = sums / n_draws
    if means[0] <= 1e-300:
        raise ValueError("uninformative kernel/data: h vanishes on the reference sample")
    return MomentEstimates.build(means[0], means[1], means[2:], N, n_samples_used=M, seed=seed)


def _check_block(B):
    if B < 2:
        raise ValueError("block size must be >= 2")


def var_h0(m: MomentEstimates, B: int) -> float:
    """H0 variance of the block-averaged MMD estimate at block size B."""
    _check_block(B)
    return (m.C1 / m.N + (m.N - 1) / m.N * m.C2) / comb(B, 2)


def cov_h0(m: MomentEstimates, B1: int, B2: int, s: int) -> float:
    """H0 covariance between the size-B1 statistic at t and the size-B2 one at t + s."""
    _check_block(B1)
    _check_block(B2)
    if s < 0:
        raise ValueError("lag s must be >= 0")
    gap = B2 - s
    overlap = 0 if gap < 0 else (gap if gap < B1 else B1)
    return m.C2 * comb(overlap, 2) / (comb(B1, 2) * comb(B2, 2))


def third_moment_raw(m: MomentEstimates, B: int) -> float:
    """E[D_B^3] under H0 (unstandardized)."""
    _check_block(B)
    N = m.N
    t1, t2, t3, t4, t5, t6 = m.third_terms
    w1, w2, w3 = 1 / N**2, 3 * (N - 1) / N**2, (N - 1) * (N - 2) / N**2
    denom = B**2 * (B - 1) ** 2
    return (8 * (B - 2) / denom * (w1 * t1 + w2 * t2 + w3 * t3)
            + 4 / denom * (w1 * t4 + w2 * t5 + w3 * t6))


def third_moment_h0(m: MomentEstimates, B: int) -> float:
    """Standardized third moment E[Z_B^3] of the scan statistic under H0."""
    v = var_h0(m, B)
    if v <= 0:
        raise ValueError("zero H0 variance; skewness undefined")
    return third_moment_raw(m, B) / v**1.5


def mmd_population_estimate(sample_p, sample_q, spec: KernelSpec, chunk: int = 1024) -> float:
    """Unbiased (paired, i != j) MMD^2 estimate from two equal-size samples.

    Gram matrices are accumulated in row chunks so large samples stay cheap in memory.
    """
    x = as_points(sample_p)
    y = as_points(sample_q)
    if len(x) != len(y):
        raise ValueError("samples must have equal size")
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples per side")
    total = 0.0
    diag = 0.0
    for lo in range(0, n, chunk):
        xs, ys = x[lo:lo + chunk], y[lo:lo + chunk]
        kxy = gram(spec, xs, y)
        total += gram(spec, xs, x).sum() + gram(spec, ys, y).sum() - 2.0 * kxy.sum()
        diag += 2.0 * spec.bound * len(xs) - 2.0 * np.trace(kxy[:, lo:lo + chunk])
    return float((total - diag) / (n * (n - 1)))
