"""
Resampling Module
Downsampling machinery for the upsampling-downsampling sampler:
- threshold solver for sum(min(c * w_i, 1)) = N
- optimal downsampling (keep the heavy candidates, systematic pass over the rest)
- multinomial downsampling for the case with fewer than N positive weights
- classical resamplers for the SISR baseline
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np
from scipy.special import logsumexp

from modules.errors import NoMass, TooFewPositive

logger = logging.getLogger(__name__)

SISR_SCHEMES = ("multinomial", "stratified", "residual", "systematic")

OPTIMAL = "i"
MULTINOMIAL = "ii"


@dataclass(frozen=True)
class ThresholdSolution:
    c: float
    L: int
    keep_all: bool = False


@dataclass(frozen=True, eq=False)
class DownsampleOutcome:
    """Survivors of one downsampling step.

    `selected` indexes the candidates, `log_weights` are the survivors' new
    weights on the normalized scale, and `inclusion_probs[i]` is the probability
    that candidate i survives.
    """
    selected: np.ndarray
    log_weights: np.ndarray
    inclusion_probs: np.ndarray
    case: str
    threshold: Optional[ThresholdSolution] = None

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def kept(self) -> int:
        return self.threshold.L if self.threshold is not None else 0


# ==================== WEIGHT HELPERS ====================

def normalized_weights(log_weights) -> np.ndarray:
    """Normalized weights gamma_i from log weights; -inf entries map to 0."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise NoMass("no positive weight among the candidates")
    return np.exp(lw - logsumexp(lw))


def _as_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ValueError("weights must be non-negative and not NaN")
    return w


# ==================== THRESHOLD ====================

def solve_threshold(weights, N: int) -> ThresholdSolution:
    """Solve sum_i min(c * w_i, 1) = N exactly.

    The map c -> sum min(c w_i, 1) is piecewise linear with breakpoints at 1/w_i.
    With the positive weights sorted in decreasing order and the first L of them
    capped, c = (N - L) / (sum of the remaining weights); the answer is the
    smallest L whose c leaves the (L+1)-th weight uncapped.
    """
    w = _as_weights(weights)
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    positive = np.sort(w[w > 0])[::-1]
    P = positive.size
    if P < N:
        raise TooFewPositive(f"{P} positive weights for N = {N}")
    if P == N:
        c = 1.0 / positive[-1]
        return ThresholdSolution(c=c, L=N, keep_all=True)

    # suffix[L] = sum of positive[L:], accumulated from the smallest weight up
    suffix = np.cumsum(positive[::-1])[::-1]
    L_range = np.arange(N)
    c_candidates = (N - L_range) / suffix[:N]
    uncapped = c_candidates * positive[:N] <= 1.0
    L0 = int(np.argmax(uncapped))
    c = float(c_candidates[L0])
    # ties at w = 1/c are kept
    L = int(np.count_nonzero(c * w >= 1.0))
    logger.debug(f"threshold solved: c={c:.6g}, L={L}, positive={P}, N={N}")
    return ThresholdSolution(c=c, L=L, keep_all=False)


def bisect_threshold(weights, N: int, tol: float = 1e-13, max_iter: int = 400) -> float:
    """Bisection on the monotone map c -> sum min(c w, 1); reference solver."""
    w = _as_weights(weights)
    positive = w[w > 0]
    if positive.size < N:
        raise TooFewPositive(f"{positive.size} positive weights for N = {N}")
    lo, hi = 0.0, 1.0 / positive.min()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if np.minimum(mid * positive, 1.0).sum() < N:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


# ==================== CASE (i): OPTIMAL ====================

def _systematic_without_replacement(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Select round(sum p) indices with inclusion probability exactly p_i (all p_i < 1)."""
    total = p.sum()
    n_draw = int(round(total))
    if n_draw == 0:
        return np.empty(0, dtype=np.int64)
    cum = np.cumsum(p)
    cum *= n_draw / cum[-1]
    cum[-1] = float(n_draw)
    points = rng.uniform() + np.arange(n_draw)
    picks = np.searchsorted(cum, points, side="right")
    return np.minimum(picks, p.size - 1)


def optimal_downsample_weights(log_weights, N: int, rng: np.random.Generator) -> DownsampleOutcome:
    """Optimal downsampling of K candidates to N distinct survivors."""
    w = normalized_weights(log_weights)
    K = w.size
    sol = solve_threshold(w, N)
    q = np.minimum(sol.c * w, 1.0)

    if sol.keep_all:
        selected = np.flatnonzero(w > 0)
        new_w = w[selected]
        q = (w > 0).astype(float)
        return DownsampleOutcome(selected, np.log(new_w), q, OPTIMAL, sol)

    kept_mask = sol.c * w >= 1.0
    kept = np.flatnonzero(kept_mask)
    rest = np.flatnonzero(~kept_mask & (w > 0))
    picks = rest[_systematic_without_replacement(sol.c * w[rest], rng)]

    selected = np.concatenate([kept, picks])
    order = np.argsort(selected, kind="stable")
    selected = selected[order]
    new_w = np.where(kept_mask[selected], w[selected], 1.0 / sol.c)
    if selected.size != N or np.unique(selected).size != N:
        raise RuntimeError(
            f"optimal downsampling produced {np.unique(selected).size} distinct of {selected.size} "
            f"survivors, expected {N} (K={K})"
        )
    return DownsampleOutcome(selected, np.log(new_w), q, OPTIMAL, sol)


def optimal_downsample(upsampled, N: int, rng: np.random.Generator) -> DownsampleOutcome:
    if upsampled.positive_count < N:
        raise TooFewPositive(f"{upsampled.positive_count} positive candidates for N = {N}")
    return optimal_downsample_weights(upsampled.log_weights, N, rng)


# ==================== CASE (ii): MULTINOMIAL ====================

def multinomial_downsample_weights(log_weights, N: int, rng: np.random.Generator) -> DownsampleOutcome:
    w = normalized_weights(log_weights)
    selected = np.sort(rng.choice(w.size, size=N, replace=True, p=w))
    log_w = np.full(N, -np.log(N))
    q = 1.0 - np.power(1.0 - w, N)
    return DownsampleOutcome(selected, log_w, q, MULTINOMIAL, None)


def multinomial_downsample(upsampled, N: int, rng: np.random.Generator) -> DownsampleOutcome:
    if upsampled.positive_count == 0:
        raise NoMass("no positive candidate to resample from")
    return multinomial_downsample_weights(upsampled.log_weights, N, rng)


def downsample(upsampled, N: int, rng: np.random.Generator) -> DownsampleOutcome:
    """Case (i) when at least N candidates carry weight, case (ii) otherwise."""
    if upsampled.positive_count >= N:
        return optimal_downsample(upsampled, N, rng)
    return multinomial_downsample(upsampled, N, rng)


# ==================== SISR RESAMPLERS ====================

def _stratified_points(N: int, rng: np.random.Generator) -> np.ndarray:
    return (np.arange(N) + rng.uniform(size=N)) / N


def _systematic_points(N: int, rng: np.random.Generator) -> np.ndarray:
    return (np.arange(N) + rng.uniform()) / N


def _invert_cdf(w: np.ndarray, points: np.ndarray) -> np.ndarray:
    cum = np.cumsum(w)
    cum /= cum[-1]
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, points, side="right"), w.size - 1)


def _residual(w: np.ndarray, N: int, rng: np.random.Generator) -> np.ndarray:
    expected = N * w
    copies = np.floor(expected).astype(np.int64)
    deterministic = np.repeat(np.arange(w.size), copies)
    remainder = N - int(copies.sum())
    if remainder == 0:
        return deterministic
    residual = expected - copies
    residual /= residual.sum()
    extra = rng.choice(w.size, size=remainder, replace=True, p=residual)
    return np.sort(np.concatenate([deterministic, extra]))


def resample_sisr(weights, N: int, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """N ancestor indices under the named scheme; survivors carry weight 1/N."""
    w = _as_weights(weights)
    if not np.any(w > 0):
        raise NoMass("no positive weight to resample from")
    w = w / w.sum()
    if scheme == "multinomial":
        return np.sort(rng.choice(w.size, size=N, replace=True, p=w))
    if scheme == "stratified":
        return _invert_cdf(w, _stratified_points(N, rng))
    if scheme == "systematic":
        return _invert_cdf(w, _systematic_points(N, rng))
    if scheme == "residual":
        return _residual(w, N, rng)
    raise ValueError(f"unknown resampling scheme '{scheme}', expected one of {SISR_SCHEMES}")


def effective_sample_size(weights) -> float:
    w = _as_weights(weights)
    s = w.sum()
    if s <= 0:
        return 0.0
    w = w / s
    return float(1.0 / np.sum(w * w))
