"""Bat Algorithm search over (log10 learning rate, batch size).

Classic echolocation dynamics: every candidate carries a frequency-driven
velocity toward the global best, a loudness that gates greedy acceptance and
decays by ``alpha`` on success, and a pulse rate that grows with iteration
count and gates a local random walk around the best solution. The learning
rate is searched in log10 space; batch size stays a continuous coordinate and
is decoded by round-half-to-even at evaluation time.

The fitness callback receives ``(position, seed)`` where the seed is derived
from (run seed, iteration, bat index), so evaluations could run on parallel
workers and still merge into an identical history. Fitness values are
memoized per decoded (learning rate to 6 significant figures, batch size)
pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FitnessError, InvalidConfigError, InvalidInputError
from .seeding import derive_seed
from .training import Hyperparams

FitnessFn = Callable[[np.ndarray, int], float]

DEFAULT_BOUNDS = ((-4.0, -3.0), (2.0, 4.0))


@dataclass(frozen=True)
class BatConfig:
    num_bats: int = 2
    max_iterations: int = 2
    freq_min: float = 0.0
    freq_max: float = 2.0
    alpha: float = 0.9
    gamma: float = 0.9
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    initial_loudness: float = 1.0
    initial_pulse_rate: float = 0.5
    walk_scale: float = 0.1
    seed: int = 0
    tol: float = 1e-6
    patience: int = 3

    def __post_init__(self):
        if self.num_bats < 1:
            raise InvalidConfigError("num_bats must be >= 1")
        if self.max_iterations < 0:
            raise InvalidConfigError("max_iterations must be >= 0")
        if self.freq_min > self.freq_max:
            raise InvalidConfigError("freq_min must not exceed freq_max")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError("alpha must lie in (0, 1)")
        if self.gamma <= 0.0:
            raise InvalidConfigError("gamma must be positive")
        if not 0.0 < self.initial_loudness:
            raise InvalidConfigError("initial loudness must be positive")
        if not 0.0 <= self.initial_pulse_rate <= 1.0:
            raise InvalidConfigError("initial pulse rate must lie in [0, 1]")
        if self.walk_scale <= 0.0:
            raise InvalidConfigError("walk_scale must be positive")
        if self.patience < 1:
            raise InvalidConfigError("patience must be >= 1")
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        for lo, hi in self.bounds:
            if not lo < hi:
                raise InvalidConfigError(f"bad bound [{lo}, {hi}]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def to_dict(self) -> dict:
        return {
            "num_bats": self.num_bats,
            "max_iterations": self.max_iterations,
            "freq_min": self.freq_min,
            "freq_max": self.freq_max,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "bounds": [list(b) for b in self.bounds],
            "initial_loudness": self.initial_loudness,
            "initial_pulse_rate": self.initial_pulse_rate,
            "walk_scale": self.walk_scale,
            "seed": self.seed,
            "tol": self.tol,
            "patience": self.patience,
        }


@dataclass
class EvalRecord:
    iteration: int  # 0 is the initial population
    bat: int
    position: tuple[float, ...]
    learning_rate: float
    batch_size: int
    fitness: float
    seed: int
    memoized: bool


@dataclass
class IterationRecord:
    iteration: int
    positions: np.ndarray
    fitness: np.ndarray
    best_position: np.ndarray
    best_fitness: float
    eval_count: int


@dataclass
class BatState:
    config: BatConfig
    positions: np.ndarray  # (num_bats, dims)
    velocities: np.ndarray
    frequencies: np.ndarray
    loudness: np.ndarray
    pulse_rate: np.ndarray
    fitness: np.ndarray
    best_position: np.ndarray
    best_fitness: float
    rng: np.random.Generator
    eval_count: int = 0
    memo: dict = field(default_factory=dict, repr=False)
    evals: list[EvalRecord] = field(default_factory=list, repr=False)


@dataclass
class BatRunHistory:
    iterations: list[IterationRecord]
    evals: list[EvalRecord]
    best_position: np.ndarray
    best_fitness: float
    eval_count: int
    stopped_early: bool


def _round_sig(x: float, digits: int = 6) -> float:
    return float(f"{x:.{digits}g}")


def decode_position(x: np.ndarray, bounds=DEFAULT_BOUNDS) -> Hyperparams:
    """Map a search position to concrete hyperparameters.

    Dimension 0 is log10 of the learning rate; dimension 1 rounds
    half-to-even to an integer batch size, clamped into its bounds.
    """
    x = np.asarray(x, dtype=np.float64)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    if np.any(x < lower) or np.any(x > upper):
        raise InvalidInputError(f"position {x.tolist()} outside bounds {list(bounds)}")
    lr = 10.0 ** float(x[0])
    batch = round(float(x[1]))
    batch = min(max(batch, math.ceil(bounds[1][0])), math.floor(bounds[1][1]))
    return Hyperparams(learning_rate=lr, batch_size=int(batch))


def _frequency(cfg: BatConfig, beta: float) -> float:
    return cfg.freq_min + (cfg.freq_max - cfg.freq_min) * beta


def _evaluate(state: BatState, fitness_fn: FitnessFn, position: np.ndarray, iteration: int, bat: int) -> float:
    """Memoized fitness lookup; every fresh value may update the global best."""
    cfg = state.config
    hp = decode_position(position, cfg.bounds)
    key = (_round_sig(hp.learning_rate), hp.batch_size)
    seed = derive_seed(cfg.seed, "bat-fitness", iteration, bat)
    memoized = key in state.memo
    if memoized:
        fit = state.memo[key]
    else:
        try:
            fit = float(fitness_fn(position.copy(), seed))
        except Exception as exc:
            raise FitnessError(bat, position, exc) from exc
        if not math.isfinite(fit):
            raise FitnessError(bat, position, ValueError(f"non-finite fitness {fit}"))
        state.memo[key] = fit
        state.eval_count += 1
        if fit < state.best_fitness:
            state.best_fitness = fit
            state.best_position = position.copy()
    state.evals.append(
        EvalRecord(
            iteration=iteration,
            bat=bat,
            position=tuple(float(v) for v in position),
            learning_rate=hp.learning_rate,
            batch_size=hp.batch_size,
            fitness=fit,
            seed=seed,
            memoized=memoized,
        )
    )
    return fit


def init_population(cfg: BatConfig, fitness_fn: FitnessFn) -> BatState:
    """Uniform positions inside the bounds, zero velocities, initial fitness."""
    rng = np.random.default_rng(cfg.seed)
    dims = len(cfg.bounds)
    positions = rng.uniform(cfg.lower, cfg.upper, size=(cfg.num_bats, dims))
    state = BatState(
        config=cfg,
        positions=positions,
        velocities=np.zeros((cfg.num_bats, dims)),
        frequencies=np.full(cfg.num_bats, cfg.freq_min),
        loudness=np.full(cfg.num_bats, cfg.initial_loudness),
        pulse_rate=np.zeros(cfg.num_bats),
        fitness=np.full(cfg.num_bats, np.inf),
        best_position=positions[0].copy(),
        best_fitness=np.inf,
        rng=rng,
    )
    for i in range(cfg.num_bats):
        state.fitness[i] = _evaluate(state, fitness_fn, positions[i], iteration=0, bat=i)
    best = int(np.argmin(state.fitness))
    if state.fitness[best] < state.best_fitness:  # pragma: no cover - best set during evals
        state.best_fitness = float(state.fitness[best])
        state.best_position = positions[best].copy()
    return state


def bat_step(state: BatState, fitness_fn: FitnessFn, t: int) -> BatState:
    """One iteration over the whole population (t counts from 1)."""
    if t < 1:
        raise InvalidInputError("iteration index t starts at 1")
    cfg = state.config
    rng = state.rng
    widths = cfg.upper - cfg.lower
    for i in range(cfg.num_bats):
        beta = float(rng.random())
        state.frequencies[i] = _frequency(cfg, beta)
        state.velocities[i] += (state.positions[i] - state.best_position) * state.frequencies[i]
        candidate = np.clip(state.positions[i] + state.velocities[i], cfg.lower, cfg.upper)
        if rng.random() > state.pulse_rate[i]:
            mean_loudness = float(np.mean(state.loudness))
            eps = rng.uniform(-1.0, 1.0, size=len(cfg.bounds))
            candidate = state.best_position + eps * cfg.walk_scale * widths * mean_loudness
            candidate = np.clip(candidate, cfg.lower, cfg.upper)
        fit = _evaluate(state, fitness_fn, candidate, iteration=t, bat=i)
        if rng.random() < state.loudness[i] and fit < state.fitness[i]:
            state.positions[i] = candidate
            state.fitness[i] = fit
            state.loudness[i] *= cfg.alpha
            state.pulse_rate[i] = cfg.initial_pulse_rate * (1.0 - math.exp(-cfg.gamma * t))
    return state


def _snapshot(state: BatState, iteration: int) -> IterationRecord:
    return IterationRecord(
        iteration=iteration,
        positions=state.positions.copy(),
        fitness=state.fitness.copy(),
        best_position=state.best_position.copy(),
        best_fitness=float(state.best_fitness),
        eval_count=state.eval_count,
    )


def optimize(cfg: BatConfig, fitness_fn: FitnessFn) -> tuple[Hyperparams, BatRunHistory]:
    """Full run: init, up to max_iterations steps, early stop on stagnation.

    Stops when the best fitness improves by less than ``cfg.tol`` for
    ``cfg.patience`` consecutive iterations.
    """
    iterations: list[IterationRecord] = []

    def _history(state: BatState, stopped_early: bool) -> BatRunHistory:
        return BatRunHistory(
            iterations=iterations,
            evals=state.evals,
            best_position=state.best_position.copy(),
            best_fitness=float(state.best_fitness),
            eval_count=state.eval_count,
            stopped_early=stopped_early,
        )

    try:
        state = init_population(cfg, fitness_fn)
    except FitnessError as exc:
        exc.history = BatRunHistory([], [], np.array([]), np.inf, 0, False)
        raise
    iterations.append(_snapshot(state, 0))

    stalled = 0
    stopped_early = False
    prev_best = state.best_fitness
    for t in range(1, cfg.max_iterations + 1):
        try:
            state = bat_step(state, fitness_fn, t)
        except FitnessError as exc:
            exc.history = _history(state, False)
            raise
        iterations.append(_snapshot(state, t))
        if prev_best - state.best_fitness < cfg.tol:
            stalled += 1
        else:
            stalled = 0
        prev_best = state.best_fitness
        if stalled >= cfg.patience:
            stopped_early = True
            break

    best_hp = decode_position(state.best_position, cfg.bounds)
    return best_hp, _history(state, stopped_early)
