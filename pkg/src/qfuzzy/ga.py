"""Real-coded genetic algorithm shared by every optimizer stage.

Tournament selection, uniform crossover, Gaussian mutation scaled per gene
by the bound width, and elitism. Fitness is minimized. Candidates are
evaluated one at a time in population order, which keeps runs reproducible
and lets a remote evaluator see exactly the same candidate stream as a
local one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class GAConfig:
    population: int = 20
    generations: int = 30
    tournament: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    mutation_scale: float = 0.1
    seed: int = 0
    budget: int | None = None
    elitism: int = 1

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if self.generations < 1:
            raise ValueError("need at least one generation")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.budget is not None and self.budget < 1:
            raise ValueError("fitness budget must be positive")
        if not 1 <= self.tournament <= self.population:
            raise ValueError("tournament size must be within the population")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GAConfig":
        return cls(**d)


@dataclass
class GAResult:
    best: np.ndarray
    fitness: float
    history: list[float] = field(default_factory=list)
    evaluations: list[tuple[np.ndarray, float]] = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return len(self.evaluations)


def run_ga(fitness: Callable[[np.ndarray], float], lower: Sequence[float], upper: Sequence[float],
           cfg: GAConfig, seeds: Sequence[Sequence[float]] = (),
           tiebreak: Callable[[np.ndarray], float] | None = None,
           repair: Callable[[np.ndarray], np.ndarray] | None = None) -> GAResult:
    """Minimize ``fitness`` over the box ``[lower, upper]``.

    ``seeds`` are placed at the front of the initial population (the rest is
    uniform random). ``tiebreak`` orders candidates with equal fitness
    (smaller wins). ``repair`` projects a genome back to feasibility; bounds
    are always enforced by clipping. ``history[g]`` is the best fitness seen
    after generation ``g``.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("invalid GA bounds")
    rng = np.random.default_rng(cfg.seed)
    width = hi - lo
    budget = cfg.budget if cfg.budget is not None else np.inf
    evals: list[tuple[np.ndarray, float]] = []

    def fix(g):
        g = np.clip(g, lo, hi)
        if repair is not None:
            g = np.clip(repair(g), lo, hi)
        return g

    def key(g, f):
        return (f, tiebreak(g) if tiebreak else 0.0)

    def evaluate(g):
        if len(evals) >= budget:
            raise BudgetExhausted
        f = float(fitness(g))
        if np.isnan(f):
            f = np.inf
        evals.append((g.copy(), f))
        return f

    pop = [fix(np.asarray(s, dtype=float)) for s in list(seeds)[: cfg.population]]
    while len(pop) < cfg.population:
        pop.append(fix(lo + rng.random(lo.shape) * width))

    history: list[float] = []
    best_g, best_f = None, np.inf
    fits: list[float] = []
    try:
        for g in pop:
            f = evaluate(g)
            fits.append(f)
            if best_g is None or key(g, f) < key(best_g, best_f):
                best_g, best_f = g, f
        history.append(best_f)
        for _ in range(1, cfg.generations):
            order = sorted(range(len(pop)), key=lambda i: key(pop[i], fits[i]))
            elite = [pop[i] for i in order[: cfg.elitism]]
            elite_f = [fits[i] for i in order[: cfg.elitism]]
            children = []
            while len(children) < cfg.population - len(elite):
                a = _tournament(rng, fits, cfg.tournament)
                b = _tournament(rng, fits, cfg.tournament)
                c = pop[a].copy()
                if rng.random() < cfg.crossover_rate:
                    mask = rng.random(lo.shape) < 0.5
                    c[mask] = pop[b][mask]
                mut = rng.random(lo.shape) < cfg.mutation_rate
                c = c + mut * rng.standard_normal(lo.shape) * cfg.mutation_scale * width
                children.append(fix(c))
            new_fits = list(elite_f)
            new_pop = list(elite)
            for c in children:
                new_pop.append(c)
                f = evaluate(c)
                new_fits.append(f)
                if key(c, f) < key(best_g, best_f):
                    best_g, best_f = c, f
            pop, fits = new_pop, new_fits
            history.append(best_f)
    except BudgetExhausted:
        history.append(best_f)
    return GAResult(best_g.copy(), best_f, history, evals)


def _tournament(rng: np.random.Generator, fits: Sequence[float], k: int) -> int:
    idx = rng.choice(len(fits), size=k, replace=False)
    return int(min(idx, key=lambda i: (fits[i], i)))
