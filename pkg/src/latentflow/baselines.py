"""Derivative-free baselines optimizing the flattened control schedule.

Both baselines spend an explicit simulator-call budget and return the best
schedule found, so their cost is directly comparable to the surrogate
pipeline's dataset budget.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .msdrl import EconomicSpec, npv_from_rates, simulate_schedule_npv
from .scenario import ControlSchedule, Dataset

__all__ = ["DeConfig", "differential_evolution", "optimize_schedule_de",
           "random_search_schedule"]


@dataclass(frozen=True)
class DeConfig:
    """rand/1/bin differential evolution with reflection repair at the box."""
    population: int = 20
    f_weight: float = 0.5
    cr: float = 0.9
    max_evals: int = 800
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ConfigError("rand/1/bin needs a population of at least 4")
        if not (0.0 < self.f_weight <= 2.0) or not (0.0 <= self.cr <= 1.0):
            raise ConfigError(f"bad DE coefficients in {self}")
        if self.max_evals < self.population:
            raise ConfigError("budget smaller than one population evaluation")


def _reflect(x, lo, hi):
    """Fold mutant coordinates back into [lo, hi]; point boxes stay put."""
    span = hi - lo
    with np.errstate(invalid="ignore"):
        y = np.where(span > 0, (x - lo) % (2.0 * span), 0.0)
    return lo + np.where(y > span, 2.0 * span - y, y)


def differential_evolution(objective, bounds, cfg: DeConfig):
    """Maximize ``objective(x)`` over a box.  Returns (best_x, best_f, history).

    Spends exactly ``cfg.max_evals`` objective calls (the final generation
    may be partial).  ``history`` records the best value seen so far after
    the initial population and after each generation, so it is monotone
    non-decreasing.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 1] < bounds[:, 0]):
        raise ConfigError("bounds must be (d, 2) with lo <= hi")
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = bounds.shape[0]
    rng = np.random.default_rng(cfg.seed)

    pop = lo + rng.random((cfg.population, d)) * (hi - lo)
    fit = np.array([objective(pop[i]) for i in range(cfg.population)])
    evals = cfg.population
    history = [float(fit.max())]

    while evals < cfg.max_evals:
        for i in range(cfg.population):
            if evals >= cfg.max_evals:
                break
            choices = [j for j in range(cfg.population) if j != i]
            r1, r2, r3 = rng.choice(choices, size=3, replace=False)
            mutant = _reflect(pop[r1] + cfg.f_weight * (pop[r2] - pop[r3]), lo, hi)
            cross = rng.random(d) < cfg.cr
            cross[rng.integers(d)] = True
            trial = np.where(cross, mutant, pop[i])
            f_trial = objective(trial)
            evals += 1
            if f_trial >= fit[i]:
                pop[i], fit[i] = trial, f_trial
        history.append(max(history[-1], float(fit.max())))

    k = int(np.argmax(fit))
    return pop[k].copy(), float(fit[k]), history


def _schedule_bounds(ds: Dataset) -> np.ndarray:
    b = ds.spec_dict["bounds"]
    n_prod = len(ds.wells()) - ds.n_injectors
    rows = ([list(b["injection_rate"])] * ds.n_injectors
            + [list(b["producer_bhp"])] * n_prod)
    return np.tile(np.asarray(rows, dtype=np.float64), (ds.horizon, 1))


def optimize_schedule_de(ds: Dataset, scenario_index: int, econ: EconomicSpec,
                         cfg: DeConfig):
    """DE directly against the simulator.  Returns (schedule, npv, history);
    consumes exactly ``cfg.max_evals`` simulator episodes."""
    bounds = _schedule_bounds(ds)
    n_actions = ds.n_injectors + (len(ds.wells()) - ds.n_injectors)

    def objective(x):
        acts = x.reshape(ds.horizon, n_actions)
        sched = ControlSchedule.from_action_matrix(acts, ds.n_injectors,
                                                   ds.dt_days)
        npv, _ = simulate_schedule_npv(ds, scenario_index, sched, econ)
        return npv

    x, f, history = differential_evolution(objective, bounds, cfg)
    sched = ControlSchedule.from_action_matrix(
        x.reshape(ds.horizon, n_actions), ds.n_injectors, ds.dt_days)
    return sched, f, history


def random_search_schedule(ds: Dataset, scenario_index: int,
                           econ: EconomicSpec, n_evals: int, seed: int = 0):
    """Uniform random schedules on the simulator; returns
    (best_schedule, best_npv, all_npvs)."""
    if n_evals < 1:
        raise ConfigError("need at least one evaluation")
    bounds = _schedule_bounds(ds)
    n_actions = ds.n_injectors + (len(ds.wells()) - ds.n_injectors)
    rng = np.random.default_rng(seed)
    best_sched, best_npv, npvs = None, -np.inf, []
    for _ in range(n_evals):
        x = bounds[:, 0] + rng.random(bounds.shape[0]) * (bounds[:, 1] - bounds[:, 0])
        sched = ControlSchedule.from_action_matrix(
            x.reshape(ds.horizon, n_actions), ds.n_injectors, ds.dt_days)
        npv, _ = simulate_schedule_npv(ds, scenario_index, sched, econ)
        npvs.append(npv)
        if npv > best_npv:
            best_sched, best_npv = sched, npv
    return best_sched, best_npv, np.asarray(npvs)
