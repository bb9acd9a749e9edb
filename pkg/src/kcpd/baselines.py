"""Comparison procedures: fixed-block Scan-B, KCUSUM and Hotelling T^2.

Every state exposes ``step(y) -> StepResult``, ``threshold``, ``t`` and
``prime(observations)`` so :func:`kcpd.detector.run_to_alarm` and the bench
harness treat all procedures alike.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .detector import DetectorConfig, KernelCusum, StepResult, init_detector
from .kernel import KernelSpec, as_points


# -- Scan-B ----------------------------------------------------------------------
def scan_b_config(config: DetectorConfig) -> DetectorConfig:
    """Same detector restricted to the single block size B = w."""
    return DetectorConfig(config.w, config.N, config.spec, config.threshold, config.moments,
                          b_min=config.w)


def scan_b_fixed(config: DetectorConfig, reference, seed=0) -> KernelCusum:
    """Shewhart-type Scan-B: alarms when Z_w(t) crosses the threshold."""
    return init_detector(scan_b_config(config), reference, seed)


# -- KCUSUM ----------------------------------------------------------------------
class KcusumState:
    """Kernel CUSUM on paired increments.

    On even t, s <- max(0, s + h(x1, x2, y_{t-1}, y_t) - delta) with (x1, x2)
    the next two points of a shuffled reference pool; on odd t the statistic
    is frozen. The alarm is checked on every step.
    """

    def __init__(self, spec: KernelSpec, reference, threshold: float = math.inf,
                 delta: float = 1 / 50, seed=0, shuffle: bool = True):
        if delta <= 0:
            raise ValueError("delta must be positive")
        pool = as_points(reference)
        if shuffle:
            pool = pool[np.random.default_rng(seed).permutation(len(pool))]
        self.spec = spec
        self.delta = float(delta)
        self.threshold = float(threshold)
        self.s = 0.0
        self.t = 0
        self._pool = pool
        self._used = 0
        self._prev = None

    @property
    def remaining(self) -> int:
        return len(self._pool) - self._used

    def _k(self, a, b):
        diff = a - b
        return math.exp(-float(diff @ diff) / self.spec.bandwidth**2)

    def prime(self, observations):
        """No-op apart from validation; KCUSUM keeps no window."""
        as_points(observations)

    def step(self, y) -> StepResult:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self._pool.shape[1]:
            raise ValueError(f"observation has dimension {y.shape[0]}, expected {self._pool.shape[1]}")
        self.t += 1
        if self.t % 2 == 0:
            if self.remaining < 2:
                raise ValueError("KCUSUM reference pool exhausted")
            x1, x2 = self._pool[self._used], self._pool[self._used + 1]
            self._used += 2
            y1, y2 = self._prev, y
            h = self._k(x1, x2) + self._k(y1, y2) - self._k(x1, y2) - self._k(x2, y1)
            self.s = kcusum_update(self.s, h, self.delta)
        else:
            self._prev = y
        return StepResult(self.t, self.s, 0, self.s >= self.threshold)


def kcusum_update(s: float, h: float, delta: float) -> float:
    """One even-step KCUSUM recursion: max(0, s + h - delta)."""
    return max(0.0, s + h - delta)


def kcusum_step(state: KcusumState, y):
    """Advance one observation; returns (state, statistic)."""
    r = state.step(y)
    return state, r.statistic


# -- Hotelling T^2 -----------------------------------------------------------------
def hotelling_split(reference, ys, kappa: int, ridge: bool = True) -> float:
    """Two-sample T^2 for U = reference + ys[:kappa-1] against V = ys[kappa-1:].

    Direct computation with the pooled covariance; used as an oracle.
    """
    u = np.concatenate([as_points(reference), as_points(ys)[:kappa - 1]])
    v = as_points(ys)[kappa - 1:]
    nu_, nv = len(u), len(v)
    if nv < 1 or nu_ < 1 or nu_ + nv < 3:
        raise ValueError("split leaves too few points")
    diff = u.mean(0) - v.mean(0)
    w = (u - u.mean(0)).T @ (u - u.mean(0)) + (v - v.mean(0)).T @ (v - v.mean(0))
    cov = w / (nu_ + nv - 2)
    cov = _regularize(cov) if ridge else cov
    return float(nu_ * nv / (nu_ + nv) * diff @ np.linalg.solve(cov, diff))


def _regularize(a, cond_max=1e12):
    d = a.shape[0]
    if np.linalg.cond(a) > cond_max:
        a = a + (1e-8 * np.trace(a) / d) * np.eye(d)
        if np.linalg.cond(a) > 1e15:
            raise ValueError("pooled covariance singular after regularization")
    return a


def _cho(a, cond_max=1e12):
    """Cholesky factor of a symmetric PSD matrix, ridged when near-singular.

    The squared ratio of extreme Cholesky diagonal entries is a cheap lower
    bound on the condition number.
    """
    def factor(m):
        try:
            fac = cho_factor(m, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return None
        diag = np.abs(np.diag(fac[0]))
        if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > cond_max:
            return None
        return fac

    fac = factor(a)
    if fac is None:
        d = a.shape[0]
        fac = factor(a + (1e-8 * np.trace(a) / d) * np.eye(d))
        if fac is None:
            raise ValueError("pooled covariance singular after regularization")
    return fac


class HotellingState:
    """Max over split points of the two-sample Hotelling T^2.

    At time t and split kappa, U = (X_1..X_M, Y_1..Y_{kappa-1}) and
    V = (Y_kappa..Y_t). With S the total scatter of all M + t points about the
    grand mean and d = mean(U) - mean(V), the pooled within-group scatter is
    S - c d d^T, c = n_U n_V / n, so by Sherman-Morrison

        T^2 = c (n - 2) q / (1 - c q),    q = d^T S^{-1} d.

    Only running sums are stored, plus the last ``max_lag`` observations when
    the split range is capped (``max_lag=None`` keeps all of them).
    """

    def __init__(self, reference, threshold: float = math.inf, max_lag: int | None = None):
        ref = as_points(reference)
        if len(ref) < 1:
            raise ValueError("need at least 1 reference point")
        if max_lag is not None and max_lag < 1:
            raise ValueError("max_lag must be >= 1")
        self.threshold = float(threshold)
        self.max_lag = max_lag
        self.M = len(ref)
        self.dim = ref.shape[1]
        self._center = ref.mean(axis=0)
        c = ref - self._center
        self._ref_sum = c.sum(axis=0)
        self._sum = self._ref_sum.copy()
        self._outer = c.T @ c
        self._ys: deque = deque(maxlen=max_lag)
        self.t = 0

    def prime(self, observations):
        as_points(observations)

    def statistics(self):
        """(kappas, T^2 values) over the current split range."""
        t = self.t
        if t < 2:
            return np.array([], dtype=int), np.array([])
        n = self.M + t
        lo = 1 if self.max_lag is None else max(1, t - self.max_lag + 1)
        kappas = np.arange(lo, t)
        recent = np.asarray(self._ys)  # Y_{t-len+1} .. Y_t, centered
        first = t - len(recent) + 1
        # suffix sums over V = Y_kappa..Y_t
        suffix = np.cumsum(recent[::-1], axis=0)[::-1]
        v_sum = suffix[kappas - first]
        nv = (t - kappas + 1).astype(float)
        nu_ = n - nv
        diff = (self._sum - v_sum) / nu_[:, None] - v_sum / nv[:, None]
        mean = self._sum / n
        scatter = self._outer - n * np.outer(mean, mean)
        sol = cho_solve(_cho(scatter), diff.T, check_finite=False)
        q = np.einsum("ij,ji->i", diff, sol)
        c = nu_ * nv / n
        denom = np.maximum(1.0 - c * q, 1e-300)
        return kappas, c * (n - 2) * q / denom

    def step(self, y) -> StepResult:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.dim:
            raise ValueError(f"observation has dimension {y.shape[0]}, expected {self.dim}")
        yc = y - self._center
        self.t += 1
        self._sum += yc
        self._outer += np.outer(yc, yc)
        self._ys.append(yc)
        kappas, vals = self.statistics()
        if len(vals) == 0:
            return StepResult(self.t, -math.inf, 0, False)
        i = int(np.argmax(vals))
        stat = float(vals[i])
        return StepResult(self.t, stat, int(kappas[i]), stat >= self.threshold)


def hotelling_statistic(state: HotellingState) -> float:
    """Current max-over-splits T^2 (or -inf before two observations)."""
    _, vals = state.statistics()
    return float(vals.max()) if len(vals) else -math.inf
