"""Streaming Online Kernel CUSUM.

The detector keeps N fixed pre-change blocks of length ``w`` and a ring of the
most recent ``w`` observations. Block position p of every pre-change block is
paired with the p-th most recent observation counted from the same end, so the
size-B statistic uses the last B positions of both.

Only sums over the N blocks enter the statistic, so the cached state is

* ``S_XX = sum_n k(X^n, X^n)``            static, w x w
* ``S_XY[p, s] = sum_n k(X^n_p, Y_slot s)`` rolling, one new column per step
* ``G_YY[s, s']``                        rolling, one new row/column per step

Ring slots rotate instead of shifting; a logical-order gather happens once per
step inside the O(w^2) statistic computation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelSpec, as_points, gram
from .moments import MomentEstimates, var_h0


@dataclass(frozen=True)
class DetectorConfig:
    w: int
    N: int
    spec: KernelSpec
    threshold: float
    moments: MomentEstimates
    b_min: int = 2

    def __post_init__(self):
        if self.w < 2:
            raise ValueError("window length w must be >= 2")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 2 <= self.b_min <= self.w:
            raise ValueError("b_min must satisfy 2 <= b_min <= w")
        if self.moments.N != self.N:
            raise ValueError(f"moments were computed for N={self.moments.N}, config has N={self.N}")

    def with_threshold(self, threshold: float) -> "DetectorConfig":
        return DetectorConfig(self.w, self.N, self.spec, threshold, self.moments, self.b_min)

    def to_dict(self):
        return {
            "w": self.w,
            "N": self.N,
            "b_min": self.b_min,
            "threshold": self.threshold,
            "kernel": self.spec.to_dict(),
            "moments": self.moments.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            w=int(d["w"]),
            N=int(d["N"]),
            spec=KernelSpec.from_dict(d["kernel"]),
            threshold=float(d["threshold"]),
            moments=MomentEstimates.from_dict(d["moments"]),
            b_min=int(d.get("b_min", 2)),
        )


@dataclass
class StepResult:
    t: int
    statistic: float
    argmax_b: int
    alarm: bool
    per_b: tuple | None = field(default=None, repr=False)

    def per_b_pairs(self):
        """Scanned (B, Z_B(t)) pairs as a list."""
        if self.per_b is None:
            return []
        return [(int(b), float(z)) for b, z in zip(*self.per_b)]


@dataclass
class StoppingReport:
    stopped_at: int | None
    statistic_at_stop: float
    argmax_b: int
    threshold: float
    horizon: int
    seed: int | None = None

    def to_dict(self):
        def finite(v):
            return float(v) if v is not None and math.isfinite(v) else None

        return {
            "stopped_at": self.stopped_at,
            "statistic_at_stop": finite(self.statistic_at_stop),
            "argmax_b": int(self.argmax_b),
            "threshold": finite(self.threshold),
            "horizon": int(self.horizon),
            "seed": self.seed,
        }


def h_statistic(spec: KernelSpec, x1, x2, y1, y2) -> float:
    x1, x2, y1, y2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x1, x2, y1, y2))
    if not (x1.shape == x2.shape == y1.shape == y2.shape):
        raise ValueError("dimension mismatch")

    def k(a, b):
        diff = a - b
        return math.exp(-float(diff @ diff) / spec.bandwidth**2)

    return k(x1, x2) + k(y1, y2) - k(x1, y2) - k(x2, y1)


def mmd_unbiased(spec: KernelSpec, X, Y) -> float:
    """Paired unbiased MMD^2 estimate between two blocks of equal size B >= 2."""
    x = as_points(X)
    y = as_points(Y)
    if x.shape != y.shape:
        raise ValueError(f"block shapes differ: {x.shape} vs {y.shape}")
    B = len(x)
    if B < 2:
        raise ValueError("block size must be >= 2")
    kxy = gram(spec, x, y)
    m = gram(spec, x, x) + gram(spec, y, y) - kxy - kxy.T
    np.fill_diagonal(m, 0.0)
    return float(m.sum() / (B * (B - 1)))


class KernelCusum:
    """Mutable detector state; one writer at a time.

    ``t`` counts observations passed to :meth:`step`. Observations passed to
    :meth:`prime` fill the window without advancing ``t`` or raising alarms,
    which models a window that already holds pre-change data when monitoring
    starts.
    """

    def __init__(self, config: DetectorConfig, ref_blocks):
        blocks = np.asarray(ref_blocks, dtype=float)
        if blocks.ndim == 2:
            blocks = blocks[:, :, None]
        if blocks.shape[:2] != (config.N, config.w):
            raise ValueError(f"expected reference blocks of shape ({config.N}, {config.w}, d)")
        self.config = config
        self.t = 0
        self._set_blocks(blocks)
        self._ring = np.zeros((self.capacity, self.dim))
        self._syy = np.zeros((self.capacity, self.capacity))
        self._sxy = np.zeros((self.capacity, self.capacity))
        self._head = 0
        self.n_avail = 0

    # -- construction helpers -------------------------------------------------
    def _set_blocks(self, blocks):
        self._x = np.ascontiguousarray(blocks)
        self.capacity = blocks.shape[1]
        self.dim = blocks.shape[2]
        self._x_flat = self._x.reshape(-1, self.dim)
        self._x_sq = np.einsum("ij,ij->i", self._x_flat, self._x_flat)
        spec = self.config.spec
        self._sxx = sum(gram(spec, xb, xb) for xb in self._x)
        self._upper = np.triu(np.ones((self.capacity, self.capacity)), 1)
        # strict upper-triangle row sums of S_XX; static for every suffix
        self._uxx = (self._sxx * self._upper).sum(axis=1)
        m = self.config.moments
        scale = np.zeros(self.capacity + 1)
        for B in range(2, self.capacity + 1):
            scale[B] = 1.0 / (self.config.N * B * (B - 1) * math.sqrt(var_h0(m, B)))
        self._scale = scale
        self._bs = np.arange(self.capacity + 1)

    @property
    def threshold(self) -> float:
        return self.config.threshold

    @property
    def ref_blocks(self) -> np.ndarray:
        return self._x

    def window(self) -> np.ndarray:
        """Observations currently held, oldest first."""
        return self._ring[self._slots()].copy()

    def _slots(self):
        return (self._head + np.arange(self.n_avail)) % self.capacity

    # -- updates ---------------------------------------------------------------
    def _push(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.dim:
            raise ValueError(f"observation has dimension {y.shape[0]}, expected {self.dim}")
        if self.n_avail == self.capacity:
            self._grow_or_evict()
        cap = self.capacity
        if self.n_avail < cap:
            slot = (self._head + self.n_avail) % cap
            self.n_avail += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % cap
        self._ring[slot] = y
        spec = self.config.spec
        y_sq = float(y @ y)
        kx = spec.from_sqdist(np.maximum(self._x_sq + y_sq - 2.0 * (self._x_flat @ y), 0.0))
        self._sxy[:, slot] = kx.reshape(self.config.N, cap).sum(axis=0)
        filled = self._slots()
        ky = spec.from_sqdist(_sqdist_to(self._ring[filled], y))
        self._syy[slot, filled] = ky
        self._syy[filled, slot] = ky

    def _grow_or_evict(self):
        """Hook for the unbounded variant; the windowed detector simply evicts."""

    def prime(self, observations):
        for y in as_points(observations):
            self._push(y)

    def scan(self):
        """Return (block sizes, Z_B) over the current scan region, or None during warm-up."""
        n = self.n_avail
        b_lo = self.config.b_min
        if n < max(2, b_lo):
            return None
        cap = self.capacity
        slots = self._slots()
        lo = cap - n
        sxy = self._sxy[lo:].take(slots, axis=1)
        a = self._syy.take(slots, axis=0).take(slots, axis=1)
        a *= self.config.N
        a -= sxy
        a -= sxy.T
        a *= self._upper[lo:, lo:]
        u = a.sum(axis=1)
        u += self._uxx[lo:]
        # numerator for block size B = sum over the trailing B x B block, off-diagonal
        num = 2.0 * np.cumsum(u[::-1])
        return self._bs[b_lo:n + 1], num[b_lo - 1:n] * self._scale[b_lo:n + 1]

    def step(self, y) -> StepResult:
        self._push(y)
        self.t += 1
        res = self.scan()
        if res is None:
            return StepResult(self.t, -math.inf, 0, False, None)
        bs, z = res
        i = int(np.argmax(z))
        stat = float(z[i])
        return StepResult(self.t, stat, int(bs[i]), stat >= self.config.threshold, (bs, z))

    # -- persistence -----------------------------------------------------------
    def snapshot(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "ref_blocks": self._x.tolist(),
            "window": self.window().tolist(),
            "t": self.t,
        }

    def to_json(self) -> str:
        return json.dumps(self.snapshot())

    @classmethod
    def restore(cls, snap: dict) -> "KernelCusum":
        state = cls(DetectorConfig.from_dict(snap["config"]), snap["ref_blocks"])
        window = np.asarray(snap["window"], dtype=float)
        if window.size:
            state.prime(window.reshape(len(window), -1))
        state.t = int(snap["t"])
        return state

    @classmethod
    def from_json(cls, text: str) -> "KernelCusum":
        return cls.restore(json.loads(text))


class OracleKernelCusum(KernelCusum):
    """Unbounded-window variant: scans B in [b_min, t] and keeps every observation.

    Pre-change blocks are extended at their old end with fresh reference points
    as the window outgrows them, so the trailing ``w`` positions coincide with
    the windowed detector built from the same seed.
    """

    def __init__(self, config: DetectorConfig, ref_blocks, pool):
        super().__init__(config, ref_blocks)
        self._pool = as_points(pool)
        self._pool_used = 0

    def _grow_or_evict(self):
        extra = self.capacity
        need = extra * self.config.N
        if self._pool_used + need > len(self._pool):
            raise ValueError("reference pool exhausted; the oracle needs N new points per step")
        fresh = self._pool[self._pool_used:self._pool_used + need].reshape(self.config.N, extra, self.dim)
        self._pool_used += need
        window = self.window()
        self._set_blocks(np.concatenate([fresh, self._x], axis=1))
        cap = self.capacity
        self._ring = np.zeros((cap, self.dim))
        self._syy = np.zeros((cap, cap))
        self._sxy = np.zeros((cap, cap))
        self._head = 0
        self.n_avail = 0
        t = self.t
        self.prime(window)
        self.t = t


def _sqdist_to(points, y):
    diff = points - y
    return np.einsum("ij,ij->i", diff, diff)


def _draw_blocks(reference, N, w, seed):
    ref = as_points(reference)
    if len(ref) < N * w:
        raise ValueError(f"insufficient reference data: need N*w = {N * w} samples, got {len(ref)}")
    perm = np.random.default_rng(seed).permutation(len(ref))
    return ref[perm[:N * w]].reshape(N, w, -1), ref[perm[N * w:]]


def init_detector(config: DetectorConfig, reference, seed=0) -> KernelCusum:
    """Draw N blocks of w reference points without replacement and build the caches."""
    blocks, _ = _draw_blocks(reference, config.N, config.w, seed)
    return KernelCusum(config, blocks)


def init_oracle(config: DetectorConfig, reference, seed=0) -> OracleKernelCusum:
    """Oracle detector whose first N*w reference draws match :func:`init_detector`."""
    blocks, rest = _draw_blocks(reference, config.N, config.w, seed)
    return OracleKernelCusum(config, blocks, rest)


def step(state, y) -> StepResult:
    return state.step(y)


def oracle_step(state: OracleKernelCusum, y) -> StepResult:
    return state.step(y)


def run_to_alarm(state, stream, horizon: int, seed=None) -> StoppingReport:
    """Feed observations until the first alarm or until ``horizon`` steps.

    Works for any state exposing ``step`` and ``threshold``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    last = StepResult(state.t, -math.inf, 0, False)
    for i, y in enumerate(stream):
        if i >= horizon:
            break
        last = state.step(y)
        if last.alarm:
            return StoppingReport(last.t, last.statistic, last.argmax_b, state.threshold, horizon, seed)
    return StoppingReport(None, last.statistic, last.argmax_b, state.threshold, horizon, seed)
