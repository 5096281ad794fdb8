"""Particle swarm search over mixed continuous / integer / categorical spaces.

Every dimension is searched as a real coordinate. Integer coordinates are
rounded half-up when decoded; categorical ones live on [0, 1] and map to
``choices[min(floor(u * k), k - 1)]``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import model as M
from .errors import A2CLNetError, ConfigurationError, InternalError
from .init import InitScheme
from .tensor import Rng

log = logging.getLogger(__name__)

CONTINUOUS, INTEGER, CATEGORICAL = "continuous", "integer", "categorical"


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    choices: Tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INTEGER, CATEGORICAL):
            raise ConfigurationError(f"unknown dimension kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise ConfigurationError(f"categorical dimension {self.name!r} needs choices")
            object.__setattr__(self, "lo", 0.0)
            object.__setattr__(self, "hi", 1.0)
        elif not self.hi > self.lo:
            raise ConfigurationError(f"dimension {self.name!r} needs hi > lo")

    @classmethod
    def continuous(cls, name, lo, hi):
        return cls(name, CONTINUOUS, float(lo), float(hi))

    @classmethod
    def integer(cls, name, lo, hi):
        return cls(name, INTEGER, float(lo), float(hi))

    @classmethod
    def categorical(cls, name, choices):
        return cls(name, CATEGORICAL, choices=tuple(choices))

    def decode(self, u: float):
        if self.kind == CONTINUOUS:
            return float(u)
        if self.kind == INTEGER:
            v = math.floor(u + 0.5)  # half-up
            return int(min(max(v, self.lo), self.hi))
        k = len(self.choices)
        return self.choices[min(int(math.floor(u * k)), k - 1)]


@dataclass
class SearchSpace:
    dims: List[Dimension]
    # turns the decoded {name: value} dict into the object handed to the fitness
    decoder: Optional[Callable[[Dict[str, Any]], Any]] = None

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.dims]

    @property
    def lo(self) -> np.ndarray:
        return np.array([d.lo for d in self.dims])

    @property
    def hi(self) -> np.ndarray:
        return np.array([d.hi for d in self.dims])

    def __len__(self):
        return len(self.dims)

    def decode_values(self, position) -> Dict[str, Any]:
        position = np.asarray(position, dtype=np.float64)
        if position.shape != (len(self.dims),):
            raise InternalError(f"position has shape {position.shape}, expected ({len(self.dims)},)")
        if not (np.all(position >= self.lo) and np.all(position <= self.hi)):
            raise InternalError(f"position {position.tolist()} is outside the search bounds")
        return {d.name: d.decode(float(u)) for d, u in zip(self.dims, position)}

    @classmethod
    def continuous(cls, bounds: Sequence[Tuple[str, float, float]]) -> "SearchSpace":
        return cls([Dimension.continuous(n, lo, hi) for n, lo, hi in bounds])


def _hyperparams_from_values(values):
    from .training import HyperParams

    return HyperParams(**values)


def hyperparameter_space() -> SearchSpace:
    """The five searched hyperparameters with their fixed ranges and choice lists."""
    from .training import BATCH_RANGE, EPOCH_RANGE, LR_RANGE, LossMetric

    return SearchSpace(
        [
            Dimension.continuous("learning_rate", *LR_RANGE),
            Dimension.integer("batch_size", *BATCH_RANGE),
            Dimension.integer("epochs", *EPOCH_RANGE),
            Dimension.categorical("init_scheme", [m.value for m in InitScheme]),
            Dimension.categorical("loss_metric", [m.value for m in LossMetric]),
        ],
        decoder=_hyperparams_from_values,
    )


def decode(position, space: SearchSpace):
    """Decoded point: ``HyperParams`` for the hyperparameter space, else a dict."""
    values = space.decode_values(position)
    return space.decoder(values) if space.decoder else values


@dataclass
class SwarmConfig:
    swarm_size: int = 20
    max_iterations: int = 30
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.2  # fraction of each dimension's range
    initial_velocity: float = 0.1  # fraction of range for the initial uniform draw
    stall_window: Optional[int] = 20
    stall_tolerance: float = 1e-9
    seed: int = 0
    workers: int = 1

    def validate(self):
        if self.swarm_size < 2:
            raise ConfigurationError("swarm_size must be >= 2")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not (self.inertia > 0 and self.cognitive > 0 and self.social > 0):
            raise ConfigurationError("inertia, cognitive and social weights must be positive")
        if not self.velocity_clamp > 0:
            raise ConfigurationError("velocity_clamp must be positive")
        if self.stall_window is not None and self.stall_window < 1:
            raise ConfigurationError("stall_window must be >= 1 or None")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SwarmConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown swarm settings {sorted(unknown)}")
        return cls(**known)


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float = math.inf


@dataclass
class Swarm:
    space: SearchSpace
    particles: List[Particle]
    gbest_position: np.ndarray
    gbest_fitness: float = math.inf
    iteration: int = 0
    seed: int = 0

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.particles])


def init_swarm(space: SearchSpace, cfg: SwarmConfig) -> Swarm:
    rng = Rng(cfg.seed).child(0)
    lo, hi = space.lo, space.hi
    span = hi - lo
    particles = []
    for _ in range(cfg.swarm_size):
        x = rng.uniform(lo, hi)
        v = rng.uniform(-cfg.initial_velocity * span, cfg.initial_velocity * span)
        particles.append(Particle(x, v, x.copy()))
    return Swarm(space, particles, particles[0].position.copy(), seed=cfg.seed)


def _sanitize(f) -> float:
    try:
        f = float(f)
    except (TypeError, ValueError):
        return math.inf
    return math.inf if math.isnan(f) else f


def update_bests(swarm: Swarm, fitness: Sequence[float]) -> None:
    """Strict-improvement personal and global best update; NaN counts as +inf."""
    if len(fitness) != len(swarm.particles):
        raise InternalError(f"{len(fitness)} fitness values for {len(swarm.particles)} particles")
    for p, f in zip(swarm.particles, fitness):
        f = _sanitize(f)
        if f < p.best_fitness:
            p.best_fitness = f
            p.best_position = p.position.copy()
        if f < swarm.gbest_fitness:
            swarm.gbest_fitness = f
            swarm.gbest_position = p.position.copy()


def move(swarm: Swarm, cfg: SwarmConfig) -> None:
    """Velocity and position update with clamping; does not touch the bests."""
    rng = Rng(swarm.seed).child(1, swarm.iteration)
    lo, hi = swarm.space.lo, swarm.space.hi
    vmax = cfg.velocity_clamp * (hi - lo)
    for p in swarm.particles:
        r1 = rng.random(len(lo))
        r2 = rng.random(len(lo))
        v = (cfg.inertia * p.velocity
             + cfg.cognitive * r1 * (p.best_position - p.position)
             + cfg.social * r2 * (swarm.gbest_position - p.position))
        p.velocity = np.clip(v, -vmax, vmax)
        p.position = np.clip(p.position + p.velocity, lo, hi)
    swarm.iteration += 1


def step(swarm: Swarm, fitness: Sequence[float], cfg: SwarmConfig) -> Swarm:
    """One PSO iteration given the fitness of the current positions."""
    update_bests(swarm, fitness)
    move(swarm, cfg)
    return swarm


@dataclass
class SearchHistory:
    names: List[str]
    records: List[dict] = field(default_factory=list)  # iteration, particle, decoded values, fitness
    gbest: List[float] = field(default_factory=list)
    best: Any = None
    best_values: Dict[str, Any] = field(default_factory=dict)
    best_fitness: float = math.inf
    stopped_early: bool = False

    @property
    def iterations(self) -> int:
        return len(self.gbest)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "particle", *self.names, "fitness"])
        for r in self.records:
            w.writerow([r["iteration"], r["particle"], *(_fmt(r["values"][n]) for n in self.names), _fmt(r["fitness"])])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "best": {k: _jsonable(v) for k, v in self.best_values.items()},
            "best_fitness": _jsonable(self.best_fitness),
            "iterations": self.iterations,
            "gbest_trace": [_jsonable(v) for v in self.gbest],
            "stopped_early": self.stopped_early,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=1) + "\n"


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _evaluate_one(fitness, point):
    try:
        return _sanitize(fitness(point))
    except (A2CLNetError, ArithmeticError, ValueError) as exc:
        log.warning("fitness evaluation failed (%s); scored as +inf", exc)
        return math.inf


def optimize(space: SearchSpace, fitness: Callable[[Any], float], cfg: SwarmConfig,
             cache: bool = True):
    """Run the swarm; returns ``(best decoded point, SearchHistory)``.

    Fitness errors and NaNs score +inf for that particle only. With ``cache``
    identical decoded points (rounding collapses nearby positions) are
    evaluated once; this assumes ``fitness`` is deterministic.
    """
    cfg.validate()
    swarm = init_swarm(space, cfg)
    history = SearchHistory(space.names)
    memo: Dict[tuple, float] = {}
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(cfg.max_iterations):
            values = [space.decode_values(p.position) for p in swarm.particles]
            keys = [tuple(sorted(v.items())) for v in values]
            todo = [k for k in dict.fromkeys(keys) if not (cache and k in memo)]
            points = {k: (space.decoder(dict(k)) if space.decoder else dict(k)) for k in todo}
            if pool is not None:
                results = list(pool.map(_evaluate_one, [fitness] * len(todo), [points[k] for k in todo]))
            else:
                results = [_evaluate_one(fitness, points[k]) for k in todo]
            fresh = dict(zip(todo, results))
            fits = [fresh[k] if k in fresh else memo[k] for k in keys]
            if cache:
                memo.update(fresh)
            for i, (v, f) in enumerate(zip(values, fits)):
                history.records.append({"iteration": it, "particle": i, "values": v, "fitness": f})
            update_bests(swarm, fits)
            history.gbest.append(swarm.gbest_fitness)
            w = cfg.stall_window
            if w is not None and len(history.gbest) > w:
                gain = history.gbest[-1 - w] - history.gbest[-1]
                if gain < cfg.stall_tolerance:  # nan (inf - inf) never stops the run
                    history.stopped_early = it + 1 < cfg.max_iterations
                    break
            if it + 1 < cfg.max_iterations:
                move(swarm, cfg)
    finally:
        if pool is not None:
            pool.shutdown()
    history.best_values = space.decode_values(swarm.gbest_position)
    history.best_fitness = swarm.gbest_fitness
    history.best = space.decoder(history.best_values) if space.decoder else history.best_values
    return history.best, history


# --------------------------------------------------------------------------
# Hyperparameter fitness


@dataclass
class HyperparameterFitness:
    """Validation MSE (normalized scale) after training a fresh model.

    The seed is fixed per search so every candidate is judged with the same
    initialization and shuffling streams, making fitness a deterministic
    function of the hyperparameters.
    """

    dataset: Any
    architecture: M.ArchitectureConfig
    epoch_budget: Optional[int] = None
    seed: int = 0
    optimizer: str = "adam"

    def __call__(self, hp) -> float:
        return fitness_of_hyperparams(hp, self.dataset, self.architecture, self.epoch_budget,
                                      self.seed, self.optimizer)


def fitness_of_hyperparams(hp, dataset, architecture: M.ArchitectureConfig,
                           epoch_budget: Optional[int] = None, seed: int = 0,
                           optimizer: str = "adam") -> float:
    from .errors import DomainError, TrainingDiverged
    from .training import head_activation_for, mse_loss, predict, train

    if len(dataset.val_idx) == 0:
        raise ConfigurationError("fitness needs a nonempty validation split")
    rng = Rng(seed)
    model = M.build(architecture, hp.init_scheme, rng.child(0), head_activation_for(hp.loss_metric))
    try:
        train(model, dataset, hp, rng.child(1), epoch_budget=epoch_budget, optimizer=optimizer)
    except (TrainingDiverged, DomainError) as exc:
        log.info("candidate %s failed: %s", hp, exc)
        return math.inf
    Xv, yv = dataset.val
    return mse_loss(predict(model, Xv), yv)[0]
