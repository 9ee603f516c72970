"""
Toy Models Module
Built-in SequentialModel instances with known answers:
- FiniteStateHMM: finite state space, exact enumeration available
- ConstrainedGaussianChain: random walk with hard shrinking bounds and a terminal window
"""
from typing import List, Optional, Sequence
import logging

import numpy as np

from smc_core import FunctionStatistic, SequentialModel, Statistic

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")


def _safe_log(values) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(values, dtype=float))


def _gauss_log_ratio(target_sd: float, proposal_sd: float) -> tuple:
    """(a, b) such that log N(x; m, target_sd) - log N(x; m, proposal_sd) = a (x - m)^2 + b."""
    return 0.5 * (proposal_sd ** -2 - target_sd ** -2), float(np.log(proposal_sd / target_sd))


def _stochastic_rows(matrix, name: str, shape=None) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if shape is not None and m.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be finite and non-negative")
    sums = m.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise ValueError(f"rows of {name} must sum to 1, got {sums}")
    return m


# ==================== FINITE-STATE HMM ====================

class FiniteStateHMM(SequentialModel):
    """Hidden Markov chain conditioned on a fixed observation sequence.

    p_t(x_{0:t}) = pi(x_0) e(y_0 | x_0) prod_s P(x_{s-1}, x_s) e(y_s | x_s).
    The proposal is either uniform over states or the prior transition.
    """

    def __init__(self, initial, transition, emission, observations: Sequence[int],
                 proposal: Optional[str] = None):
        self.initial = _stochastic_rows(initial, "initial")
        K = self.initial.size
        self.transition = _stochastic_rows(transition, "transition", (K, K))
        emission = np.asarray(emission, dtype=float)
        if emission.ndim != 2 or emission.shape[0] != K:
            raise ValueError(f"emission must have {K} rows, got shape {emission.shape}")
        self.emission = _stochastic_rows(emission, "emission")
        self.observations = tuple(int(y) for y in observations)
        if not self.observations:
            raise ValueError("at least one observation is required")
        if max(self.observations) >= self.emission.shape[1] or min(self.observations) < 0:
            raise ValueError("observation symbol out of range of the emission table")
        self.proposal = proposal or "uniform"
        if self.proposal not in ("uniform", "prior"):
            raise ValueError(f"unknown proposal '{self.proposal}'")

        self.horizon = len(self.observations) - 1
        self.n_states = K
        self._log_initial = _safe_log(self.initial)
        self._log_transition = _safe_log(self.transition)
        self._log_emission = _safe_log(self.emission)
        if self.proposal == "uniform":
            self._q0 = np.full(K, 1.0 / K)
            self._q = np.full((K, K), 1.0 / K)
        else:
            self._q0 = self.initial
            self._q = self.transition
        self._log_q0 = _safe_log(self._q0)
        self._log_q = _safe_log(self._q)

    @property
    def state_space(self) -> range:
        return range(self.n_states)

    def initial_propose(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self._q0))

    def initial_propose_many(self, M: int, rng: np.random.Generator) -> list:
        return rng.choice(self.n_states, size=M, p=self._q0).tolist()

    def initial_log_increment(self, x0) -> float:
        return float(self.initial_log_increments([x0])[0])

    def initial_log_increments(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=int)
        y0 = self.observations[0]
        return self._log_initial[xs] + self._log_emission[xs, y0] - self._log_q0[xs]

    def propose(self, prefix: tuple, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self._q[prefix[-1]]))

    def propose_many(self, prefix: tuple, M: int, rng: np.random.Generator) -> list:
        return rng.choice(self.n_states, size=M, p=self._q[prefix[-1]]).tolist()

    def log_increment(self, prefix: tuple, x) -> float:
        return float(self.log_increments(prefix, [x])[0])

    def log_increments(self, prefix: tuple, xs) -> np.ndarray:
        prev = prefix[-1]
        y = self.observations[len(prefix)]
        xs = np.asarray(xs, dtype=int)
        return self._log_transition[prev, xs] + self._log_emission[xs, y] - self._log_q[prev, xs]

    def log_target(self, path: Sequence[int]) -> float:
        """Unnormalized log p_T of a full path."""
        lp = self._log_initial[path[0]] + self._log_emission[path[0], self.observations[0]]
        for t in range(1, len(path)):
            lp += self._log_transition[path[t - 1], path[t]] + self._log_emission[path[t], self.observations[t]]
        return float(lp)

    @classmethod
    def from_dict(cls, params: dict) -> "FiniteStateHMM":
        return cls(
            params["initial"], params["transition"], params["emission"],
            params["observations"], params.get("proposal"),
        )


# ==================== CONSTRAINED GAUSSIAN CHAIN ====================

class ConstrainedGaussianChain(SequentialModel):
    """Gaussian random walk restricted to a shrinking tube and a terminal window.

    Smooth part: x_0 ~ N(0, target_sd), x_t | x_{t-1} ~ N(x_{t-1}, target_sd).
    Hard part at each step s: |x_s| <= bound0 * shrink**s and
    |x_s - target| <= window + (T - s) * reach. With reach = inf the window only
    binds at s = T. Proposals are N(0, initial_sd) then N(x_{t-1}, proposal_sd).
    """

    def __init__(self, horizon: int, target_sd: float = 0.8, initial_sd: float = 1.0,
                 proposal_sd: float = 1.0, bound0: float = 3.0, shrink: float = 0.9,
                 target: float = 0.0, window: float = 0.5, reach: float = float("inf")):
        if horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon}")
        for name, value in (("target_sd", target_sd), ("initial_sd", initial_sd),
                            ("proposal_sd", proposal_sd), ("bound0", bound0), ("shrink", shrink)):
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if window < 0 or reach < 0:
            raise ValueError("window and reach must be non-negative")
        self.horizon = int(horizon)
        self.target_sd = float(target_sd)
        self.initial_sd = float(initial_sd)
        self.proposal_sd = float(proposal_sd)
        self.bound0 = float(bound0)
        self.shrink = float(shrink)
        self.target = float(target)
        self.window = float(window)
        self.reach = float(reach)
        self._initial_coef, self._initial_const = _gauss_log_ratio(self.target_sd, self.initial_sd)
        self._step_coef, self._step_const = _gauss_log_ratio(self.target_sd, self.proposal_sd)

    def bound(self, step: int) -> float:
        return self.bound0 * self.shrink ** step

    def window_at(self, step: int) -> float:
        if step == self.horizon:
            return self.window
        if np.isinf(self.reach):
            return float("inf")
        return self.window + (self.horizon - step) * self.reach

    def feasible(self, step: int, x: float) -> bool:
        return abs(x) <= self.bound(step) and abs(x - self.target) <= self.window_at(step)

    def feasible_mask(self, step: int, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return (np.abs(xs) <= self.bound(step)) & (np.abs(xs - self.target) <= self.window_at(step))

    def initial_propose(self, rng: np.random.Generator) -> float:
        return float(rng.normal(0.0, self.initial_sd))

    def initial_propose_many(self, M: int, rng: np.random.Generator) -> list:
        return rng.normal(0.0, self.initial_sd, size=M).tolist()

    def initial_log_increment(self, x0) -> float:
        if not self.feasible(0, x0):
            return NEG_INF
        return float(self._initial_coef * x0 * x0 + self._initial_const)

    def initial_log_increments(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.where(self.feasible_mask(0, xs), self._initial_coef * xs * xs + self._initial_const, NEG_INF)

    def propose(self, prefix: tuple, rng: np.random.Generator) -> float:
        return float(prefix[-1] + rng.normal(0.0, self.proposal_sd))

    def propose_many(self, prefix: tuple, M: int, rng: np.random.Generator) -> list:
        return (prefix[-1] + rng.normal(0.0, self.proposal_sd, size=M)).tolist()

    def log_increment(self, prefix: tuple, x) -> float:
        if not self.feasible(len(prefix), x):
            return NEG_INF
        d = x - prefix[-1]
        return float(self._step_coef * d * d + self._step_const)

    def log_increments(self, prefix: tuple, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        d = xs - prefix[-1]
        return np.where(self.feasible_mask(len(prefix), xs), self._step_coef * d * d + self._step_const, NEG_INF)

    @classmethod
    def from_dict(cls, params: dict) -> "ConstrainedGaussianChain":
        allowed = ("horizon", "target_sd", "initial_sd", "proposal_sd", "bound0",
                   "shrink", "target", "window", "reach")
        unknown = set(params) - set(allowed)
        if unknown:
            raise ValueError(f"unknown chain parameters: {sorted(unknown)}")
        kwargs = dict(params)
        if isinstance(kwargs.get("reach"), str):
            kwargs["reach"] = float(kwargs["reach"])
        return cls(**kwargs)


# ==================== STATISTICS ====================

def path_sum() -> Statistic:
    return FunctionStatistic("path_sum", lambda path: float(np.sum(path)))


def terminal_value() -> Statistic:
    return FunctionStatistic("terminal", lambda path: float(path[-1]))


def state_indicator(step: int, state: int) -> Statistic:
    return FunctionStatistic(f"x{step}=={state}", lambda path: float(path[step] == state))


def state_count(state: int) -> Statistic:
    return FunctionStatistic(f"count_{state}", lambda path: float(sum(1 for x in path if x == state)))


def path_mean() -> Statistic:
    return FunctionStatistic("path_mean", lambda path: float(np.mean(path)))


def max_abs() -> Statistic:
    return FunctionStatistic("max_abs", lambda path: float(np.max(np.abs(path))))


def hmm_statistics() -> List[Statistic]:
    return [path_sum(), state_indicator(0, 0), state_count(1)]


def chain_statistics() -> List[Statistic]:
    return [terminal_value(), path_mean(), max_abs()]


STATISTIC_FACTORIES = {
    "path_sum": path_sum,
    "terminal": terminal_value,
    "path_mean": path_mean,
    "max_abs": max_abs,
}
