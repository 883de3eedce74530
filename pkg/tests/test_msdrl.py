import numpy as np
import pytest

from latentflow.errors import ConfigError, DataError
from latentflow.mld import MldConfig, train_mld
from latentflow.msdrl import (EconomicSpec, LatentEnv, PolicyTrainConfig,
                              _to_unit, auto_reward_scale, derive_schedule,
                              evaluate_policy, npv_from_rates,
                              simulate_schedule_npv, step_cashflow,
                              train_policy)
from latentflow.reservoir import FluidSpec, GridSpec, RelpermParams, WellSpec
from latentflow.sac import SacConfig
from latentflow.scenario import (ControlBounds, ControlSchedule, Dataset,
                                 DatasetSpec, FieldSpec, NormStats,
                                 generate_dataset)

# ---------------------------------------------------------------------------
# cash-flow arithmetic, frozen by hand
# ---------------------------------------------------------------------------

def test_step_cashflow_frozen():
    # (0.0246 * 1e6 - 10 * 1000) * 36.5 = (24600 - 10000) * 36.5 = 532900
    cash = step_cashflow(1.0e6, [1000.0], 36.5, EconomicSpec())
    assert cash == 532900.0


def test_step_cashflow_sums_producers():
    cash = step_cashflow(0.0, [100.0, 200.0, 300.0], 2.0, EconomicSpec())
    assert cash == -(10.0 * 600.0) * 2.0


def test_npv_zero_discount_is_plain_sum():
    econ = EconomicSpec()
    co2 = np.array([1.0e6, 5.0e5])
    brine = np.array([[1000.0], [2000.0]])
    want = step_cashflow(co2[0], brine[0], 36.5, econ) \
        + step_cashflow(co2[1], brine[1], 36.5, econ)
    assert npv_from_rates(co2, brine, 36.5, econ) == want


def test_npv_single_year_discount():
    econ = EconomicSpec(discount_rate=0.1)
    # one 365-day step discounts exactly by 1/1.1
    got = npv_from_rates([1.0e6], [[1000.0]], 365.0, econ)
    assert got == pytest.approx(14600.0 * 365.0 / 1.1, rel=1e-14)


def test_npv_discount_compounds_per_step():
    econ = EconomicSpec(discount_rate=0.1)
    got = npv_from_rates([1.0e6, 1.0e6], [[1000.0], [1000.0]], 182.5, econ)
    cash = 14600.0 * 182.5
    want = cash * 1.1 ** -0.5 + cash * 1.1 ** -1.0
    assert got == pytest.approx(want, rel=1e-14)


def test_auto_reward_scale_frozen():
    bounds = ControlBounds((1e5, 1.5e6), (150.0, 170.0))
    got = auto_reward_scale(bounds, 1, 36.5, EconomicSpec())
    assert got == pytest.approx(1.0 / (0.0246 * 1.5e6 * 36.5), rel=1e-15)
    assert auto_reward_scale(bounds, 1, 36.5,
                             EconomicSpec(co2_price=0.0)) == 1.0


def test_economics_validation():
    with pytest.raises(ConfigError):
        EconomicSpec(co2_price=-0.1)
    with pytest.raises(ConfigError):
        EconomicSpec(discount_rate=-0.5)
    with pytest.raises(ConfigError):
        PolicyTrainConfig(episodes=0)
    with pytest.raises(ConfigError):
        PolicyTrainConfig(eval_every=-1)


# ---------------------------------------------------------------------------
# latent environment over a small trained surrogate
# ---------------------------------------------------------------------------

DESK_WELLS = (WellSpec("injector", 12, 12), WellSpec("producer", 3, 3),
              WellSpec("producer", 3, 20), WellSpec("producer", 20, 3),
              WellSpec("producer", 20, 20))


@pytest.fixture(scope="module")
def ds():
    spec = DatasetSpec(mode="deterministic", n_episodes=14, n_train=10,
                       horizon=5, dt_days=36.5, grid=GridSpec(nx=24, ny=24),
                       fluid=FluidSpec(), wells=DESK_WELLS,
                       bounds=ControlBounds((1e5, 1.5e6), (150.0, 170.0)),
                       field=FieldSpec(5.0, 1.0, 8.0),
                       relperm=RelpermParams(0.9, 0.8, 0.1, 0.2, 2.0, 2.0),
                       root_seed=7)
    return generate_dataset(spec, None)


@pytest.fixture(scope="module")
def model(ds):
    cfg = MldConfig(latent_dim=8, hidden_dim=32, relperm_features=16,
                    epochs=8, batch_episodes=5, seed=0)
    return train_mld(ds, cfg)[0]


@pytest.fixture(scope="module")
def env(model, ds):
    return LatentEnv(model, ds, EconomicSpec())


def test_reset_returns_latents(env):
    z = env.reset([0, 3])
    assert z.shape == (2, env.latent_dim)
    assert np.all(np.abs(z) <= 1.0)  # tanh head
    # deterministic wrt index
    z2 = env.reset([0, 3])
    np.testing.assert_array_equal(z, z2)


def test_action_box_mapping(env):
    lo, hi = env.box[:, 0], env.box[:, 1]
    np.testing.assert_allclose(env.to_physical(np.full(env.n_actions, -1.0)), lo)
    np.testing.assert_allclose(env.to_physical(np.full(env.n_actions, 1.0)), hi)
    np.testing.assert_allclose(env.to_physical(np.zeros(env.n_actions)),
                               0.5 * (lo + hi))
    # out-of-box actions clip rather than extrapolate
    np.testing.assert_allclose(env.to_physical(np.full(env.n_actions, 7.0)), hi)


def test_unit_roundtrip(env):
    rng = np.random.default_rng(5)
    lo, hi = env.box[:, 0], env.box[:, 1]
    phys = lo + rng.random((4, env.n_actions)) * (hi - lo)
    back = env.to_physical(_to_unit(env, phys))
    np.testing.assert_allclose(back, phys, rtol=1e-12)


def test_step_contract(env):
    rng = np.random.default_rng(0)
    z = env.reset([1, 2, 4])
    for t in range(env.horizon):
        a = rng.uniform(-1, 1, (3, env.n_actions))
        z, rew, done, info = env.step(a)
        assert z.shape == (3, env.latent_dim)
        assert rew.shape == (3,)
        assert done == (t == env.horizon - 1)
        assert info["brine_rates"].shape == (3, 4)
        assert np.all(info["brine_rates"] >= 0.0)
        assert info["physical"].shape == (3, env.n_actions)
    with pytest.raises(DataError):
        env.step(np.zeros((3, env.n_actions)))


def test_step_before_reset_raises(model, ds):
    fresh = LatentEnv(model, ds, EconomicSpec())
    with pytest.raises(DataError):
        fresh.step(np.zeros((1, fresh.n_actions)))


def test_rewards_are_scaled_discounted_cash(model, ds):
    econ = EconomicSpec(discount_rate=0.08)
    e = LatentEnv(model, ds, econ, reward_scale=2.5)
    rng = np.random.default_rng(3)
    e.reset([0])
    co2_rates, brine_rates, manual = [], [], []
    for t in range(e.horizon):
        a = rng.uniform(-1, 1, (1, e.n_actions))
        _, rew, _, info = e.step(a)
        disc = (1.0 + 0.08) ** (-(t + 1) * 36.5 / 365.0)
        np.testing.assert_allclose(rew, info["cash"] * disc * 2.5, rtol=1e-12)
        co2_rates.append(info["co2_rate"][0])
        brine_rates.append(info["brine_rates"][0])
        manual.append(info["cash"][0] * disc)
    # undiscounting the reward stream reproduces npv_from_rates
    np.testing.assert_allclose(np.sum(manual),
                               npv_from_rates(co2_rates, brine_rates, 36.5, econ),
                               rtol=1e-12)


def test_negative_brine_predictions_clip_to_zero(model, ds):
    ranges = dict(ds.norm_stats.ranges)
    ranges["responses"] = np.full_like(np.asarray(ranges["responses"],
                                                  dtype=np.float64),
                                       [-5.0, -1.0])
    ds2 = Dataset(ds.spec_dict, ds.perm, ds.poro, ds.relperm, ds.schedules,
                  ds.states, ds.responses, NormStats(ranges),
                  ds.episode_index, ds.failed)
    e = LatentEnv(model, ds2, EconomicSpec())
    e.reset([0])
    _, rew, _, info = e.step(np.zeros((1, e.n_actions)))
    np.testing.assert_array_equal(info["brine_rates"], 0.0)
    assert rew[0] > 0.0  # pure revenue once the bogus negatives are clipped


def test_auto_scale_used_by_default(env, ds):
    b = ControlBounds((1e5, 1.5e6), (150.0, 170.0))
    assert env.reward_scale == auto_reward_scale(b, 1, ds.dt_days,
                                                 EconomicSpec())


# ---------------------------------------------------------------------------
# schedule derivation and policy training
# ---------------------------------------------------------------------------

SMOKE_PLAN = PolicyTrainConfig(
    episodes=24, warmup_steps=40, eval_every=8,
    sac=SacConfig(seed=1, batch_size=32, hidden_dim=32, buffer_capacity=2000))


@pytest.fixture(scope="module")
def policy(model, ds):
    return train_policy(model, ds, SMOKE_PLAN)


def test_training_curve_contract(policy):
    _, curve = policy
    assert [row["episode"] for row in curve] == [8, 16, 24]
    for row in curve:
        for key in ("pred_npv", "alpha", "q_loss", "pi_loss", "mean_logp"):
            assert np.isfinite(row[key])


def test_training_is_deterministic(model, ds, policy):
    _, curve = policy
    _, again = train_policy(model, ds, SMOKE_PLAN)
    assert [r["pred_npv"] for r in again] == [r["pred_npv"] for r in curve]


def test_derived_schedule_within_bounds(env, policy):
    agent, _ = policy
    sched, npv_pred = derive_schedule(env, agent, 0)
    assert sched.injector_rates.shape == (env.horizon, 1)
    assert sched.producer_bhps.shape == (env.horizon, 4)
    assert np.all(sched.injector_rates >= 1e5 - 1e-9)
    assert np.all(sched.injector_rates <= 1.5e6 + 1e-9)
    assert np.all((sched.producer_bhps >= 150.0) & (sched.producer_bhps <= 170.0))
    assert np.isfinite(npv_pred)


def test_surrogate_self_replay_gap_is_zero(env, policy):
    agent, _ = policy
    for rec in evaluate_policy(env, agent, [0, 1], on="mld"):
        assert rec["gap"] == 0.0
        assert rec["npv_predicted"] == pytest.approx(rec["npv_evaluated"],
                                                     rel=1e-12)


def test_simulator_evaluation_records(env, policy):
    agent, _ = policy
    recs = evaluate_policy(env, agent, [0], on="simulator")
    assert len(recs) == 1
    rec = recs[0]
    assert rec["brine_rates"].shape == (env.horizon, 4)
    want_gap = abs(rec["npv_predicted"] - rec["npv_evaluated"]) \
        / abs(rec["npv_evaluated"])
    assert rec["gap"] == pytest.approx(want_gap, rel=1e-12)
    with pytest.raises(ConfigError):
        evaluate_policy(env, agent, [0], on="mystery")


def test_simulated_npv_matches_stored_responses(ds):
    # replaying a stored training schedule must reproduce the recorded brine
    econ = EconomicSpec()
    sched = ControlSchedule.from_action_matrix(ds.schedules[2], 1, ds.dt_days)
    npv, brine = simulate_schedule_npv(ds, 2, sched, econ)
    np.testing.assert_allclose(brine, ds.responses[2], rtol=2e-5, atol=1e-6)
    want = npv_from_rates(ds.schedules[2, :, 0], ds.responses[2],
                          ds.dt_days, econ)
    assert npv == pytest.approx(want, rel=1e-5)


def test_explicit_scenario_pool(model, ds):
    plan = PolicyTrainConfig(episodes=4, warmup_steps=10, eval_every=0,
                             sac=SacConfig(seed=0, batch_size=16,
                                           hidden_dim=32,
                                           buffer_capacity=500))
    agent, curve = train_policy(model, ds, plan, scenario_indices=[3])
    assert curve == []  # eval_every=0 disables the curve
    assert agent.sample_action(np.zeros(model.cfg.latent_dim)).shape == (5,)
