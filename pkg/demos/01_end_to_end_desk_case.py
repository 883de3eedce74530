"""
Desk-scale end to end: data, surrogate, policy, simulator verification
======================================================================

Generates a small two-phase dataset with the reservoir proxy, trains the
latent surrogate on it, optimizes a well-control schedule with soft
actor-critic entirely inside the surrogate, then replays the derived
schedule on the simulator and compares against differential evolution
given the same total simulation budget.

Everything is scaled down to finish in a couple of minutes on one core;
tests/test_acceptance.py runs the full-size configurations.
"""
import time

import numpy as np

from latentflow.baselines import DeConfig, optimize_schedule_de
from latentflow.mld import MldConfig, evaluate, train_mld
from latentflow.msdrl import (EconomicSpec, LatentEnv, PolicyTrainConfig,
                              evaluate_policy, train_policy)
from latentflow.reservoir import (FluidSpec, GridSpec, RelpermParams,
                                  WellSpec)
from latentflow.sac import SacConfig
from latentflow.scenario import (ControlBounds, DatasetSpec, FieldSpec,
                                 generate_dataset)

t0 = time.time()

# one central injector, four corner producers, 24 x 24 heterogeneous field
spec = DatasetSpec(
    mode="deterministic", n_episodes=80, n_train=60, horizon=10, dt_days=36.5,
    grid=GridSpec(nx=24, ny=24), fluid=FluidSpec(),
    wells=(WellSpec("injector", 12, 12), WellSpec("producer", 3, 3),
           WellSpec("producer", 3, 20), WellSpec("producer", 20, 3),
           WellSpec("producer", 20, 20)),
    bounds=ControlBounds((1e5, 1.5e6), (150.0, 170.0)),
    field=FieldSpec(5.0, 1.0, 8.0),
    relperm=RelpermParams(0.9, 0.8, 0.1, 0.2, 2.0, 2.0), root_seed=7)
ds = generate_dataset(spec, None)
print(f"[{time.time()-t0:5.1f}s] dataset: {ds.n_episodes} episodes "
      f"({ds.n_train} train), {len(ds.failed)} failed")

# train the surrogate; at 60 episodes it will not match the full-size
# R2 >= 0.95, but it is plenty to steer the optimizer
model, logs = train_mld(ds, MldConfig(epochs=50, seed=0))
rep = evaluate(model, ds, split="test")
print(f"[{time.time()-t0:5.1f}s] surrogate: test R2 {rep['r2']:.3f}, "
      f"RMSE {rep['rmse']:.1f} m3/day over {len(ds.test_idx)} held-out episodes")

# optimize controls in latent space; the simulator is never called here
econ = EconomicSpec()
plan = PolicyTrainConfig(episodes=200, warmup_steps=200, eval_every=0,
                         sac=SacConfig(seed=0))
agent, curve = train_policy(model, ds, plan, econ)
print(f"[{time.time()-t0:5.1f}s] policy: {plan.episodes} latent episodes, "
      f"final temperature {curve[-1]['alpha']:.3f}")

# one verification run on the simulator = the only extra simulation
rec = evaluate_policy(LatentEnv(model, ds, econ), agent, [0],
                      on="simulator")[0]
print(f"[{time.time()-t0:5.1f}s] derived schedule: predicted NPV "
      f"{rec['npv_predicted']:.3e} USD, simulated {rec['npv_evaluated']:.3e} "
      f"USD (gap {rec['gap']*100:.1f}%)")
msdrl_budget = ds.n_episodes + len(ds.failed) + 1

# differential evolution gets the same number of simulator calls
_, de_npv, de_hist = optimize_schedule_de(ds, 0, econ,
                                          DeConfig(max_evals=msdrl_budget,
                                                   seed=0))
print(f"[{time.time()-t0:5.1f}s] DE baseline: best simulated NPV "
      f"{de_npv:.3e} USD after {msdrl_budget} simulations "
      f"({len(de_hist) - 1} generations)")

winner = "surrogate+SAC" if rec["npv_evaluated"] >= de_npv else "DE"
print(f"same budget ({msdrl_budget} simulations each): {winner} wins")
