"""Soft actor-critic for continuous box actions in [-1, 1]^d.

Squashed-Gaussian policy with twin critics, polyak-averaged targets and
(optionally) automatic temperature tuning against a fixed entropy target.
Critic targets are computed gradient-free with plain numpy forwards; only
the loss graphs run on the autodiff tape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (RELU, ParamStore, Tensor, adam_step, apply_sequence,
                       concat, fc, grads_from_leaves, init_sequence,
                       load_checkpoint, minimum, save_checkpoint, tensor)
from .errors import ConfigError, DataError

__all__ = ["SacConfig", "ReplayBuffer", "SacAgent", "PointTargetEnv"]

_LOG_STD_MIN, _LOG_STD_MAX = -20.0, 2.0
_SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.95
    tau: float = 0.005
    lr: float = 3e-4
    alpha_lr: float | None = None        # default: 10 * lr (temperature tracks fast)
    batch_size: int = 128
    buffer_capacity: int = 20000
    hidden_dim: int = 256
    target_entropy: float | None = None  # default: -act_dim
    fixed_alpha: float | None = None     # set to disable autotuning
    init_alpha: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0) or not (0.0 < self.tau <= 1.0):
            raise ConfigError(f"bad gamma/tau in {self}")
        if self.lr <= 0 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ConfigError(f"bad optimizer settings in {self}")
        if self.alpha_lr is not None and self.alpha_lr <= 0:
            raise ConfigError("alpha_lr must be positive")
        if self.fixed_alpha is not None and self.fixed_alpha <= 0:
            raise ConfigError("fixed_alpha must be positive")
        if self.init_alpha <= 0:
            raise ConfigError("init_alpha must be positive")


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.nxt = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self._n = 0
        self._head = 0

    def __len__(self):
        return self._n

    def add(self, obs, act, rew, nxt, done):
        i = self._head
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.nxt[i] = nxt
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int) -> dict:
        if self._n == 0:
            raise DataError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._n, size=n)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "nxt": self.nxt[idx], "done": self.done[idx]}


class PointTargetEnv:
    """1-D sanity task with a known optimum: state x in [-1, 1], the action
    places the state directly (x' = a), reward is -(x - target)^2 on the
    pre-move state, episodes run a fixed number of steps."""

    def __init__(self, horizon: int = 12, start: float = -0.5,
                 target: float = 0.5):
        self.horizon, self.start, self.target = horizon, start, target
        self.x = start
        self.t = 0

    def reset(self) -> np.ndarray:
        self.x, self.t = self.start, 0
        return np.array([self.x], dtype=np.float32)

    def step(self, action):
        reward = -(self.x - self.target) ** 2
        self.x = float(np.clip(float(action), -1.0, 1.0))
        self.t += 1
        done = self.t >= self.horizon
        return np.array([self.x], dtype=np.float32), reward, done

    def optimal_return(self) -> float:
        """Return of the jump-to-target-then-hold policy."""
        x, total = self.start, 0.0
        for _ in range(self.horizon):
            total += -(x - self.target) ** 2
            x = self.target
        return total


def _np_relu(x):
    return np.maximum(x, 0.0)


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig):
        self.obs_dim, self.act_dim, self.cfg = obs_dim, act_dim, cfg
        h = cfg.hidden_dim
        self.trunk_specs = [fc(obs_dim, h), RELU, fc(h, h), RELU]
        self.head_specs = [fc(h, act_dim)]
        self.q_specs = [fc(obs_dim + act_dim, h), RELU, fc(h, h), RELU, fc(h, 1)]

        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 20)))
        self.actor = ParamStore()
        init_sequence(self.trunk_specs, self.actor, rng, "trunk.")
        init_sequence(self.head_specs, self.actor, rng, "mu.")
        init_sequence(self.head_specs, self.actor, rng, "ls.")
        self.q1 = ParamStore()
        init_sequence(self.q_specs, self.q1, rng, "q.")
        self.q2 = ParamStore()
        init_sequence(self.q_specs, self.q2, rng, "q.")
        self.q1_target = self.q1.raw_copy()
        self.q2_target = self.q2.raw_copy()

        self.log_alpha = ParamStore()
        self.log_alpha.add("log_alpha",
                           np.array([math.log(cfg.init_alpha)], dtype=np.float64))
        self.target_entropy = (-float(act_dim) if cfg.target_entropy is None
                               else float(cfg.target_entropy))
        self.rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 21)))
        self.update_count = 0

    # ------------------------------------------------------------- forwards

    @property
    def alpha(self) -> float:
        if self.cfg.fixed_alpha is not None:
            return float(self.cfg.fixed_alpha)
        return float(np.exp(self.log_alpha.values["log_alpha"][0]))

    def _np_actor(self, z):
        """(mu, log_std) without the tape; z is (B, obs_dim) float."""
        v = self.actor.values
        h = _np_relu(z @ v["trunk.0.weight"] + v["trunk.0.bias"])
        h = _np_relu(h @ v["trunk.2.weight"] + v["trunk.2.bias"])
        mu = h @ v["mu.0.weight"] + v["mu.0.bias"]
        ls = np.clip(h @ v["ls.0.weight"] + v["ls.0.bias"],
                     _LOG_STD_MIN, _LOG_STD_MAX)
        return mu, ls

    def _np_q(self, values, z, a):
        x = np.concatenate([z, a], axis=1)
        h = _np_relu(x @ values["q.0.weight"] + values["q.0.bias"])
        h = _np_relu(h @ values["q.2.weight"] + values["q.2.bias"])
        return (h @ values["q.4.weight"] + values["q.4.bias"])[:, 0]

    @staticmethod
    def _np_logprob(eps, ls, a):
        """Squashed-Gaussian log-density of a = tanh(mu + exp(ls) * eps)."""
        base = -0.5 * eps ** 2 - ls - 0.5 * math.log(2.0 * math.pi)
        return np.sum(base - np.log(1.0 - a ** 2 + _SQUASH_EPS), axis=1)

    def sample_action(self, z, deterministic: bool = False) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32).reshape(1, -1)
        mu, ls = self._np_actor(z)
        if deterministic:
            return np.tanh(mu)[0]
        eps = self.rng.standard_normal(mu.shape)
        return np.tanh(mu + np.exp(ls) * eps)[0]

    def actor_forward(self, leaves, z_t: Tensor, eps_t: Tensor):
        """Tape version; returns (action, per-sample log-prob (B,1) tensor)."""
        h = apply_sequence(self.trunk_specs, leaves, z_t, "trunk.")
        mu = apply_sequence(self.head_specs, leaves, h, "mu.")
        ls = apply_sequence(self.head_specs, leaves, h, "ls.").clip(
            _LOG_STD_MIN, _LOG_STD_MAX)
        a = (mu + ls.exp() * eps_t).tanh()
        base = eps_t * eps_t * (-0.5) - ls - 0.5 * math.log(2.0 * math.pi)
        logp = (base - ((1.0 + _SQUASH_EPS) - a * a).log()).sum(axis=1, keepdims=True)
        return a, logp

    def q_forward(self, leaves, z_t: Tensor, a_t: Tensor):
        return apply_sequence(self.q_specs, leaves, concat([z_t, a_t], axis=1), "q.")

    # -------------------------------------------------------------- updates

    def q_targets(self, batch) -> np.ndarray:
        """r + gamma * (1-done) * (min target Q(z', a') - alpha * logp')."""
        z2 = batch["nxt"].astype(np.float64)
        mu, ls = self._np_actor(z2)
        eps = self.rng.standard_normal(mu.shape)
        a2 = np.tanh(mu + np.exp(ls) * eps)
        logp2 = self._np_logprob(eps, ls, a2)
        qmin = np.minimum(self._np_q(self.q1_target, z2, a2),
                          self._np_q(self.q2_target, z2, a2))
        return (batch["rew"].astype(np.float64)
                + self.cfg.gamma * (1.0 - batch["done"].astype(np.float64))
                * (qmin - self.alpha * logp2))

    def critic_loss(self, leaves1, leaves2, batch, targets):
        z_t = tensor(batch["obs"].astype(np.float64))
        a_t = tensor(batch["act"].astype(np.float64))
        y = tensor(targets.reshape(-1, 1))
        d1 = self.q_forward(leaves1, z_t, a_t) - y
        d2 = self.q_forward(leaves2, z_t, a_t) - y
        return (d1 * d1).mean() + (d2 * d2).mean()

    def actor_loss(self, leaves, batch, eps):
        """mean(alpha * logp - min Q(z, a)); critics held constant."""
        z_t = tensor(batch["obs"].astype(np.float64))
        a, logp = self.actor_forward(leaves, z_t, tensor(eps))
        f1 = self.q1.leaves(np.float64, requires_grad=False)
        f2 = self.q2.leaves(np.float64, requires_grad=False)
        qmin = minimum(self.q_forward(f1, z_t, a), self.q_forward(f2, z_t, a))
        return (logp * self.alpha - qmin).mean(), logp

    def polyak(self):
        tau = self.cfg.tau
        for k, v in self.q1.values.items():
            self.q1_target[k] = (1.0 - tau) * self.q1_target[k] + tau * v
        for k, v in self.q2.values.items():
            self.q2_target[k] = (1.0 - tau) * self.q2_target[k] + tau * v

    def update(self, buffer: ReplayBuffer) -> dict:
        cfg = self.cfg
        batch = buffer.sample(self.rng, cfg.batch_size)
        targets = self.q_targets(batch)

        l1 = self.q1.leaves(np.float64)
        l2 = self.q2.leaves(np.float64)
        q_loss = self.critic_loss(l1, l2, batch, targets)
        q_loss.backward()
        adam_step(self.q1, grads_from_leaves(l1), lr=cfg.lr)
        adam_step(self.q2, grads_from_leaves(l2), lr=cfg.lr)

        la = self.actor.leaves(np.float64)
        eps = self.rng.standard_normal((cfg.batch_size, self.act_dim))
        pi_loss, logp = self.actor_loss(la, batch, eps)
        pi_loss.backward()
        adam_step(self.actor, grads_from_leaves(la), lr=cfg.lr)

        mean_logp = float(logp.data.mean())
        alpha_loss = 0.0
        if cfg.fixed_alpha is None:
            # d/d(log_alpha) of -log_alpha * (mean_logp + H0)
            alpha_lr = cfg.alpha_lr if cfg.alpha_lr is not None else 10.0 * cfg.lr
            lt = self.log_alpha.leaves(np.float64)
            a_loss = lt["log_alpha"].sum() * (-(mean_logp + self.target_entropy))
            a_loss.backward()
            adam_step(self.log_alpha, grads_from_leaves(lt), lr=alpha_lr)
            alpha_loss = float(a_loss.data)

        self.polyak()
        self.update_count += 1
        return {"q_loss": float(q_loss.data), "pi_loss": float(pi_loss.data),
                "alpha": self.alpha, "alpha_loss": alpha_loss,
                "mean_logp": mean_logp,
                "q_target_mean": float(targets.mean())}

    # -------------------------------------------------------- persistence

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "sac", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "config": asdict(self.cfg), "update_count": self.update_count}
        if extra_meta:
            meta.update(extra_meta)
        stores = {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                  "log_alpha": self.log_alpha}
        t1, t2 = ParamStore(), ParamStore()
        for k, v in self.q1_target.items():
            t1.add(k, v.copy())
        for k, v in self.q2_target.items():
            t2.add(k, v.copy())
        stores["q1_target"], stores["q2_target"] = t1, t2
        save_checkpoint(path, stores, meta)

    @classmethod
    def load(cls, path) -> "SacAgent":
        stores, meta = load_checkpoint(path)
        if meta.get("kind") != "sac":
            raise DataError(f"{path} is not an agent checkpoint")
        cfg = SacConfig(**meta["config"])
        agent = cls(meta["obs_dim"], meta["act_dim"], cfg)
        for name, store in (("actor", agent.actor), ("q1", agent.q1),
                            ("q2", agent.q2), ("log_alpha", agent.log_alpha)):
            src = stores[name]
            if sorted(src.values) != sorted(store.values):
                raise DataError(f"agent checkpoint store {name!r} mismatch")
            store.values = src.values
            store.m, store.v, store.step_count = src.m, src.v, src.step_count
        agent.q1_target = dict(stores["q1_target"].values)
        agent.q2_target = dict(stores["q2_target"].values)
        agent.update_count = int(meta.get("update_count", 0))
        return agent
