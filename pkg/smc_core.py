"""
SMC Core Module
Generic sequential Monte Carlo engine:
- SequentialModel abstraction (proposal, incremental weight, horizon)
- upsampling-downsampling driver with optimal downsampling
- SISR and plain importance sampling baselines
- self-normalized estimators and the exact enumeration oracle
"""
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import itertools
import logging
import time

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from modules.errors import AllParticlesDead, BudgetExhausted, NoMass, TooLarge
from modules.rng import RandomStreams, SeedLike
import resampling

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")
ENUMERATION_LIMIT = 10 ** 7
PARALLEL_CHUNKS = 32


# ==================== MODEL ====================

class SequentialModel(ABC):
    """Target p_T reached through p_0, ..., p_T with proposals eta.

    `log_increment(prefix, x)` returns log p_t(x_{0:t}) / (p_{t-1}(x_{0:t-1}) eta(x_t | x_{0:t-1}))
    and may return -inf; it must be deterministic.

    The `*_many` / `*_increments` methods are the batch forms used by the
    samplers: all M children of one parent come from a single generator.
    Models override them with vectorized versions; the defaults loop.
    """

    horizon: int = 0

    @abstractmethod
    def initial_propose(self, rng: np.random.Generator) -> Any:
        ...

    @abstractmethod
    def initial_log_increment(self, x0) -> float:
        ...

    @abstractmethod
    def propose(self, prefix: tuple, rng: np.random.Generator) -> Any:
        ...

    @abstractmethod
    def log_increment(self, prefix: tuple, x) -> float:
        ...

    def initial_propose_many(self, M: int, rng: np.random.Generator) -> list:
        return [self.initial_propose(rng) for _ in range(M)]

    def initial_log_increments(self, xs: Sequence) -> np.ndarray:
        return np.array([self.initial_log_increment(x) for x in xs], dtype=float)

    def propose_many(self, prefix: tuple, M: int, rng: np.random.Generator) -> list:
        return [self.propose(prefix, rng) for _ in range(M)]

    def log_increments(self, prefix: tuple, xs: Sequence) -> np.ndarray:
        return np.array([self.log_increment(prefix, x) for x in xs], dtype=float)


# ==================== PARTICLES ====================

@dataclass(frozen=True, eq=False)
class Particle:
    path: tuple
    log_weight: float

    @property
    def step(self) -> int:
        return len(self.path) - 1


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    particles: tuple
    step: int
    normalized: bool = True
    source_indices: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.particles)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([p.log_weight for p in self.particles], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def paths(self) -> List[tuple]:
        return [p.path for p in self.particles]

    @property
    def n_distinct(self) -> int:
        return len({id(p.path) for p in self.particles})

    @classmethod
    def from_log_weights(cls, paths: Sequence[tuple], log_weights, step: int,
                         normalize: bool = True, source_indices=None) -> "ParticleEnsemble":
        lw = np.asarray(log_weights, dtype=float)
        if normalize:
            if not np.any(np.isfinite(lw)):
                raise NoMass("cannot normalize an ensemble without positive weight")
            lw = lw - logsumexp(lw)
        particles = tuple(Particle(tuple(path), float(w)) for path, w in zip(paths, lw))
        return cls(particles, step, normalize, source_indices)


@dataclass(frozen=True, eq=False)
class UpsampledSet:
    """The M * N candidates of one step, stored column-wise.

    Candidate i extends `prefixes[parents[i]]` by `values[i]`; candidates of
    one parent are contiguous, in child order. Paths are only built for the
    candidates that survive downsampling.
    """
    prefixes: tuple
    parents: np.ndarray
    values: list
    log_weights: np.ndarray
    step: int
    M: int

    def __len__(self) -> int:
        return len(self.values)

    @cached_property
    def positive_count(self) -> int:
        return int(np.count_nonzero(self.log_weights > NEG_INF))

    @property
    def children(self) -> np.ndarray:
        """Child index of every candidate within its parent's block."""
        return np.arange(len(self)) % self.M

    def path(self, i: int) -> tuple:
        return self.prefixes[self.parents[i]] + (self.values[i],)

    def paths(self, indices: Optional[Sequence[int]] = None) -> List[tuple]:
        """Paths of `indices` (all candidates by default); a repeated index shares one tuple."""
        if indices is None:
            indices = range(len(self))
        built: Dict[int, tuple] = {}
        out = []
        for i in indices:
            i = int(i)
            if i not in built:
                built[i] = self.path(i)
            out.append(built[i])
        return out

    @classmethod
    def from_blocks(cls, prefixes: Sequence[tuple], blocks: Sequence[Tuple[list, np.ndarray]],
                    M: int, step: int) -> "UpsampledSet":
        """Assemble from one (values, log_weights) block of M children per parent, in parent order."""
        values = [x for xs, _ in blocks for x in xs]
        log_weights = np.concatenate([lw for _, lw in blocks]) if blocks else np.empty(0)
        parents = np.repeat(np.arange(len(prefixes)), M)
        return cls(tuple(prefixes), parents, values, log_weights, step, M)


# ==================== STATISTICS & REPORTS ====================

class Statistic(ABC):
    name: str = "statistic"

    @abstractmethod
    def eval(self, path: tuple) -> np.ndarray:
        ...

    def __call__(self, path: tuple) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.eval(path), dtype=float))


class FunctionStatistic(Statistic):
    """Statistic wrapping a plain callable on the path."""

    def __init__(self, name: str, fn: Callable[[tuple], Any]):
        self.name = name
        self._fn = fn

    def eval(self, path: tuple) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._fn(path), dtype=float))

    def __repr__(self) -> str:
        return f"FunctionStatistic({self.name!r})"


@dataclass(frozen=True, eq=False)
class EstimateReport:
    statistic: str
    point: np.ndarray
    n_particles: int
    n_distinct: int
    weight_entropy: float
    ess: float

    @property
    def value(self) -> float:
        """Scalar view of a one-component estimate."""
        if self.point.size != 1:
            raise ValueError(f"statistic '{self.statistic}' is vector-valued ({self.point.size} components)")
        return float(self.point[0])


@dataclass
class StepRecord:
    step: int
    n_candidates: int
    positive_count: int
    case: str
    threshold: float = float("nan")
    kept: int = 0
    ess: float = float("nan")
    wall_time: float = 0.0


@dataclass
class RunDiagnostics:
    method: str
    N: int
    M: int = 1
    records: List[StepRecord] = field(default_factory=list)
    cost: int = 0
    died_at: Optional[int] = None

    def add(self, record: StepRecord) -> None:
        self.records.append(record)

    @property
    def completed(self) -> bool:
        return self.died_at is None

    @property
    def wall_time(self) -> float:
        return float(sum(r.wall_time for r in self.records))

    def to_frame(self, include_timing: bool = True) -> pd.DataFrame:
        columns = ["step", "n_candidates", "positive_count", "case", "threshold", "kept", "ess"]
        if include_timing:
            columns.append("wall_time")
        rows = [{k: getattr(r, k) for k in columns} for r in self.records]
        return pd.DataFrame(rows, columns=columns)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "N": self.N,
            "M": self.M,
            "cost": self.cost,
            "died_at": self.died_at,
            "steps": self.to_frame().to_dict(orient="records"),
        }


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Importance sampling output: positive-weight full paths plus rejection accounting."""
    ensemble: Optional[ParticleEnsemble]
    n_drawn: int
    n_accepted: int
    death_steps: Dict[int, int]
    cost: int

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_drawn if self.n_drawn else 0.0


# ==================== UPSAMPLING ====================

def _executor(threads: int):
    if threads and threads > 1:
        return ThreadPoolExecutor(max_workers=threads)
    return nullcontext(None)


def _chunks(n: int, pool) -> List[range]:
    if pool is None or n <= 1:
        return [range(n)]
    n_chunks = min(n, PARALLEL_CHUNKS)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_ordered(pool, fn, chunks) -> list:
    if pool is None:
        results = [fn(c) for c in chunks]
    else:
        results = list(pool.map(fn, chunks))
    return [item for part in results for item in part]


def _extend_parents(model: SequentialModel, particles: tuple, parents: range, M: int,
                    step: int, streams: RandomStreams) -> List[Tuple[list, np.ndarray]]:
    blocks = []
    for n in parents:
        parent = particles[n]
        xs = model.propose_many(parent.path, M, streams.children(step, n))
        if parent.log_weight == NEG_INF:
            log_w = np.full(M, NEG_INF)
        else:
            log_w = parent.log_weight + np.asarray(model.log_increments(parent.path, xs), dtype=float)
        blocks.append((list(xs), log_w))
    return blocks


def _initial_draws(model: SequentialModel, parents: range, M: int,
                   streams: RandomStreams) -> List[Tuple[list, np.ndarray]]:
    blocks = []
    for n in parents:
        xs = model.initial_propose_many(M, streams.children(0, n))
        blocks.append((list(xs), np.asarray(model.initial_log_increments(xs), dtype=float)))
    return blocks


def upsample_step(ensemble: ParticleEnsemble, model: SequentialModel, M: int,
                  streams: RandomStreams, pool=None) -> UpsampledSet:
    """Propose M children per parent; child weight = parent weight + increment, unnormalized."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if ensemble.step >= model.horizon:
        raise ValueError(f"ensemble already at the horizon (step {ensemble.step})")
    step = ensemble.step + 1
    particles = ensemble.particles
    blocks = _map_ordered(
        pool,
        lambda parents: _extend_parents(model, particles, parents, M, step, streams),
        _chunks(len(particles), pool),
    )
    return UpsampledSet.from_blocks(ensemble.paths, blocks, M, step)


def initial_upsample(model: SequentialModel, N: int, M: int,
                     streams: RandomStreams, pool=None) -> UpsampledSet:
    blocks = _map_ordered(
        pool,
        lambda parents: _initial_draws(model, parents, M, streams),
        _chunks(N, pool),
    )
    return UpsampledSet.from_blocks([()] * N, blocks, M, 0)


# ==================== DOWNSAMPLING ====================

def _downsample_into(upsampled: UpsampledSet, N: int, streams: RandomStreams,
                     diagnostics: RunDiagnostics, started: float) -> ParticleEnsemble:
    step = upsampled.step
    diagnostics.cost += len(upsampled)
    if upsampled.positive_count == 0:
        diagnostics.add(StepRecord(step, len(upsampled), 0, resampling.MULTINOMIAL,
                                   wall_time=time.perf_counter() - started))
        diagnostics.died_at = step
        raise AllParticlesDead(step, diagnostics)

    outcome = resampling.downsample(upsampled, N, streams.resample(step))
    paths = upsampled.paths(outcome.selected)
    ensemble = ParticleEnsemble.from_log_weights(paths, outcome.log_weights, step,
                                                 source_indices=outcome.selected)
    record = StepRecord(
        step=step,
        n_candidates=len(upsampled),
        positive_count=upsampled.positive_count,
        case=outcome.case,
        threshold=outcome.threshold.c if outcome.threshold is not None else float("nan"),
        kept=outcome.kept,
        ess=resampling.effective_sample_size(ensemble.weights),
        wall_time=time.perf_counter() - started,
    )
    diagnostics.add(record)
    logger.debug(
        f"step {step}: {record.positive_count}/{record.n_candidates} positive, "
        f"case ({record.case}), kept {record.kept}"
    )
    return ensemble


def _check_counts(N: int, M: int) -> None:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")


# ==================== DRIVERS ====================

def run_updown_smc(model: SequentialModel, N: int, M: int, seed: SeedLike,
                   threads: int = 1) -> Tuple[ParticleEnsemble, RunDiagnostics]:
    """Upsampling-downsampling SMC: M children per particle, then back to N survivors.

    Case (i) (at least N positive candidates) uses optimal downsampling; case (ii)
    falls back to multinomial resampling. Raises AllParticlesDead when a step
    leaves no positive candidate.
    """
    _check_counts(N, M)
    streams = RandomStreams(seed)
    diagnostics = RunDiagnostics(method="updown", N=N, M=M)
    with _executor(threads) as pool:
        started = time.perf_counter()
        upsampled = initial_upsample(model, N, M, streams, pool)
        ensemble = _downsample_into(upsampled, N, streams, diagnostics, started)
        for _ in range(model.horizon):
            started = time.perf_counter()
            upsampled = upsample_step(ensemble, model, M, streams, pool)
            ensemble = _downsample_into(upsampled, N, streams, diagnostics, started)
    return ensemble, diagnostics


def run_sisr(model: SequentialModel, N: int, scheme: str, seed: SeedLike,
             threads: int = 1) -> Tuple[ParticleEnsemble, RunDiagnostics]:
    """Sequential importance sampling with resampling after every propagation."""
    _check_counts(N, 1)
    if scheme not in resampling.SISR_SCHEMES:
        raise ValueError(f"unknown resampling scheme '{scheme}', expected one of {resampling.SISR_SCHEMES}")
    streams = RandomStreams(seed)
    diagnostics = RunDiagnostics(method=f"sisr-{scheme}", N=N, M=1)
    with _executor(threads) as pool:
        started = time.perf_counter()
        initial = initial_upsample(model, N, 1, streams, pool)
        diagnostics.cost += len(initial)
        if initial.positive_count == 0:
            diagnostics.add(StepRecord(0, N, 0, scheme, wall_time=time.perf_counter() - started))
            diagnostics.died_at = 0
            raise AllParticlesDead(0, diagnostics)
        ensemble = ParticleEnsemble.from_log_weights(
            initial.paths(), initial.log_weights, 0
        )
        diagnostics.add(StepRecord(0, N, initial.positive_count, scheme,
                                   ess=resampling.effective_sample_size(ensemble.weights),
                                   wall_time=time.perf_counter() - started))

        for t in range(1, model.horizon + 1):
            started = time.perf_counter()
            propagated = upsample_step(ensemble, model, 1, streams, pool)
            diagnostics.cost += len(propagated)
            if propagated.positive_count == 0:
                diagnostics.add(StepRecord(t, N, 0, scheme, wall_time=time.perf_counter() - started))
                diagnostics.died_at = t
                raise AllParticlesDead(t, diagnostics)
            weights = resampling.normalized_weights(propagated.log_weights)
            ancestors = resampling.resample_sisr(weights, N, scheme, streams.resample(t))
            paths = propagated.paths(ancestors)
            ensemble = ParticleEnsemble.from_log_weights(paths, np.zeros(N), t, source_indices=ancestors)
            diagnostics.add(StepRecord(t, N, propagated.positive_count, scheme,
                                       ess=resampling.effective_sample_size(weights),
                                       wall_time=time.perf_counter() - started))
    return ensemble, diagnostics


def _draw_full_path(model: SequentialModel, streams: RandomStreams, index: int) -> Tuple[tuple, float, int, int]:
    """One full path from eta; stops at the first zero-weight step. Returns (path, log_w, died_at, proposals)."""
    rng = streams.draw(index)
    x0 = model.initial_propose(rng)
    path = (x0,)
    log_w = float(model.initial_log_increment(x0))
    proposals = 1
    if log_w == NEG_INF:
        return path, log_w, 0, proposals
    for t in range(1, model.horizon + 1):
        x = model.propose(path, rng)
        proposals += 1
        log_w += float(model.log_increment(path, x))
        path = path + (x,)
        if log_w == NEG_INF:
            return path, log_w, t, proposals
    return path, log_w, -1, proposals


def run_importance_sampling(model: SequentialModel, n_target: int, max_draws: int,
                            seed: SeedLike, threads: int = 1) -> Tuple[WeightedSampleSet, float]:
    """Draw whole paths from the proposal until n_target of them have positive weight."""
    if n_target < 1:
        raise ValueError(f"n_target must be >= 1, got {n_target}")
    streams = RandomStreams(seed)
    paths, log_weights = [], []
    death_steps: Dict[int, int] = {}
    drawn = cost = 0

    with _executor(threads) as pool:
        while len(paths) < n_target and drawn < max_draws:
            batch = min(max_draws - drawn, max(n_target - len(paths), 64))
            offset = drawn
            blocks = [range(offset + r.start, offset + r.stop) for r in _chunks(batch, pool)]
            results = _map_ordered(
                pool,
                lambda block: [_draw_full_path(model, streams, i) for i in block],
                blocks,
            )
            for path, log_w, died_at, proposals in results:
                drawn += 1
                cost += proposals
                if died_at >= 0:
                    death_steps[died_at] = death_steps.get(died_at, 0) + 1
                else:
                    paths.append(path)
                    log_weights.append(log_w)
                    if len(paths) == n_target:
                        break

    ensemble = None
    if paths:
        ensemble = ParticleEnsemble.from_log_weights(paths, log_weights, model.horizon)
    samples = WeightedSampleSet(ensemble, drawn, len(paths), dict(sorted(death_steps.items())), cost)
    rate = samples.acceptance_rate
    logger.debug(f"importance sampling: {samples.n_accepted}/{drawn} accepted")
    if len(paths) < n_target:
        raise BudgetExhausted(samples, rate)
    return samples, rate


# ==================== ESTIMATION ====================

def estimate(ensemble: ParticleEnsemble, stat: Statistic) -> EstimateReport:
    """Self-normalized estimate sum f(x) w / sum w over the positive-weight particles."""
    lw = ensemble.log_weights
    alive = np.flatnonzero(lw > NEG_INF)
    if alive.size == 0:
        raise NoMass(f"no positive weight when estimating '{stat.name}'")
    w = np.exp(lw[alive] - logsumexp(lw[alive]))
    values = np.vstack([stat(ensemble.particles[i].path) for i in alive])
    point = w @ values
    entropy = float(-np.sum(w * np.log(w, where=w > 0, out=np.zeros_like(w))))
    return EstimateReport(
        statistic=stat.name,
        point=point,
        n_particles=len(ensemble),
        n_distinct=ensemble.n_distinct,
        weight_entropy=entropy,
        ess=float(1.0 / np.sum(w * w)),
    )


def enumerate_exact(toy_model, stat: Statistic) -> np.ndarray:
    """E_{p_T}[f] by summing over every path of a finite-state model.

    The model must expose `state_space` and `log_target(path)` (unnormalized log p_T).
    """
    states = list(toy_model.state_space)
    n_paths = len(states) ** (toy_model.horizon + 1)
    if n_paths > ENUMERATION_LIMIT:
        raise TooLarge(f"{n_paths} paths exceed the enumeration limit {ENUMERATION_LIMIT}")
    log_p, values = [], []
    for path in itertools.product(states, repeat=toy_model.horizon + 1):
        lp = float(toy_model.log_target(path))
        if lp == NEG_INF:
            continue
        log_p.append(lp)
        values.append(stat(path))
    if not log_p:
        raise NoMass("the target puts no mass on any path")
    log_p = np.asarray(log_p)
    w = np.exp(log_p - logsumexp(log_p))
    return w @ np.vstack(values)


def split_stability(ensemble: ParticleEnsemble, stats: Sequence[Statistic], repeats: int,
                    seed: SeedLike) -> pd.DataFrame:
    """Half-sample stability of a large weighted sample.

    The sample is split at random into two halves `repeats` times; for each
    statistic the SD of the 2 * repeats half estimates is reported relative to
    the full-sample estimate.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    n = len(ensemble)
    if n < 2:
        raise ValueError("split_stability needs at least two particles")
    streams = RandomStreams(seed)
    halves = []
    for r in range(repeats):
        order = streams.split(r).permutation(n)
        for part in (order[: n // 2], order[n // 2:]):
            sub = [ensemble.particles[i] for i in part]
            halves.append(ParticleEnsemble(tuple(sub), ensemble.step, False))
    rows = []
    for stat in stats:
        full = estimate(ensemble, stat).point
        half_points = []
        for h in halves:
            try:
                half_points.append(estimate(h, stat).point)
            except NoMass:
                continue
        sd = np.std(np.vstack(half_points), axis=0, ddof=1) if len(half_points) > 1 else np.full(full.shape, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = sd / np.abs(full)
        for k in range(full.size):
            rows.append({
                "statistic": stat.name if full.size == 1 else f"{stat.name}[{k}]",
                "estimate": float(full[k]),
                "half_sd": float(sd[k]),
                "relative_sd": float(rel[k]),
                "n_groups": len(half_points),
            })
    return pd.DataFrame(rows)
