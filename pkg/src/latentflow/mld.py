"""Multimodal latent-dynamics surrogate of the reservoir simulator.

Three jointly trained networks over normalized ([-1, 1]) quantities:

* encoder  R: (state frame, static fields, relperm curve) -> latent z
* transition T: (z, controls) -> next z
* response  P: (z, controls) -> producer brine rates

Training rolls latents forward from the first frame only; the response and
consistency losses both see the rolled-out latent, and consistency targets
are re-encoded frames with gradients flowing through both branches.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (FLATTEN, RELU, TANH, ParamStore, Tensor, adam_step,
                       apply_sequence, concat, conv, conv_chain_sizes,
                       conv_out_size, fc, grads_from_leaves, init_sequence,
                       load_checkpoint, param_names, save_checkpoint, tensor)
from .errors import ConfigError, DataError, NumericError
from .scenario import Dataset, NormStats

__all__ = [
    "MldConfig", "MldModel", "TrainingArrays", "EpochLog", "prepare_arrays",
    "training_loss", "train_mld", "predict_responses", "evaluate", "r2_score",
    "rmse_score", "per_case_r2", "save_mld", "load_mld",
]


@dataclass(frozen=True)
class MldConfig:
    latent_dim: int = 64
    hidden_dim: int = 256
    relperm_features: int = 64
    conv_channels: tuple = (32, 32, 64, 64)  # truncated/extended to chain depth
    lambda_weight: float = 10.0
    learning_rate: float = 1e-3
    lr_final: float = 1e-4       # exponential anneal target; = lr disables
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_episodes: int = 25
    seed: int = 0
    unimodal: bool = False

    def __post_init__(self):
        if self.latent_dim < 1 or self.hidden_dim < 1 or self.relperm_features < 1:
            raise ConfigError(f"bad network widths in {self}")
        if self.lambda_weight < 0 or self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError(f"bad training scalars in {self}")
        if not (0.0 < self.lr_final <= self.learning_rate):
            raise ConfigError(f"need 0 < lr_final <= learning_rate in {self}")
        if self.epochs < 1 or self.batch_episodes < 1:
            raise ConfigError(f"bad schedule in {self}")
        if not self.conv_channels:
            raise ConfigError("need at least one conv channel width")

    def epoch_lr(self, epoch: int) -> float:
        """Exponential decay from learning_rate to lr_final over the run."""
        if self.epochs == 1 or self.lr_final == self.learning_rate:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return self.learning_rate * (self.lr_final / self.learning_rate) ** frac


def _conv_branch(in_channels: int, ny: int, nx: int, channels):
    """Conv/ReLU chain ending in Flatten; returns (specs, flat_features)."""
    n_convs = len(conv_chain_sizes(min(ny, nx)))
    if n_convs == 0:
        raise ConfigError(f"grid {ny}x{nx} too small for the conv encoder")
    channels = tuple(channels)
    if n_convs > len(channels):
        channels = channels + (channels[-1],) * (n_convs - len(channels))
    specs = []
    c_prev = in_channels
    sy, sx = ny, nx
    for i in range(n_convs):
        specs += [conv(c_prev, channels[i]), RELU]
        c_prev = channels[i]
        sy, sx = conv_out_size(sy), conv_out_size(sx)
    specs.append(FLATTEN)
    return specs, c_prev * sy * sx


class MldModel:
    """Parameter container + forward graphs; one ParamStore, prefixed names."""

    def __init__(self, cfg: MldConfig, ny: int, nx: int, n_actions: int,
                 n_responses: int, norm_stats: NormStats,
                 store: ParamStore | None = None):
        self.cfg = cfg
        self.ny, self.nx = ny, nx
        self.n_actions, self.n_responses = n_actions, n_responses
        self.norm_stats = norm_stats

        self.state_specs, state_feat = _conv_branch(2, ny, nx, cfg.conv_channels)
        if cfg.unimodal:
            self.static_specs = self.rp_specs = None
            trunk_in = state_feat
        else:
            self.static_specs, static_feat = _conv_branch(2, ny, nx, cfg.conv_channels)
            self.rp_specs = [fc(6, cfg.relperm_features), RELU]
            trunk_in = state_feat + static_feat + cfg.relperm_features
        self.trunk_specs = [fc(trunk_in, cfg.hidden_dim), RELU,
                            fc(cfg.hidden_dim, cfg.latent_dim), TANH]
        self.trans_specs = [fc(cfg.latent_dim + n_actions, cfg.hidden_dim), RELU,
                            fc(cfg.hidden_dim, cfg.latent_dim), TANH]
        self.pred_specs = [fc(cfg.latent_dim + n_actions, cfg.hidden_dim), RELU,
                           fc(cfg.hidden_dim, n_responses), TANH]

        if store is None:
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 10)))
            store = ParamStore()
            for specs, prefix in self._sequences():
                init_sequence(specs, store, rng, prefix)
        else:
            expect = sorted(n for specs, p in self._sequences()
                            for (_, w, b) in param_names(specs, p) for n in (w, b))
            if sorted(store.values) != expect:
                raise DataError("checkpoint parameters do not match architecture")
        self.store = store

    def _sequences(self):
        seqs = [(self.state_specs, "enc.state.")]
        if not self.cfg.unimodal:
            seqs += [(self.static_specs, "enc.static."), (self.rp_specs, "enc.rp.")]
        seqs += [(self.trunk_specs, "enc.trunk."), (self.trans_specs, "trn."),
                 (self.pred_specs, "prd.")]
        return seqs

    # ------------------------------------------------------------- forward

    def modal_features(self, leaves, static_t: Tensor | None, rp_t: Tensor | None):
        """Static-field + relperm branch outputs (computed once per batch)."""
        if self.cfg.unimodal:
            return None
        return (apply_sequence(self.static_specs, leaves, static_t, "enc.static."),
                apply_sequence(self.rp_specs, leaves, rp_t, "enc.rp."))

    def encode_from(self, leaves, state_t: Tensor, feats):
        h = apply_sequence(self.state_specs, leaves, state_t, "enc.state.")
        if feats is not None:
            h = concat([h, feats[0], feats[1]], axis=1)
        return apply_sequence(self.trunk_specs, leaves, h, "enc.trunk.")

    def encode(self, leaves, state_t: Tensor, static_t=None, rp_t=None):
        return self.encode_from(leaves, state_t,
                                self.modal_features(leaves, static_t, rp_t))

    def transition(self, leaves, z: Tensor, a: Tensor):
        return apply_sequence(self.trans_specs, leaves, concat([z, a], axis=1), "trn.")

    def predict(self, leaves, z: Tensor, a: Tensor):
        return apply_sequence(self.pred_specs, leaves, concat([z, a], axis=1), "prd.")


# ------------------------------------------------------------------ data prep

@dataclass
class TrainingArrays:
    """Whole-dataset normalized float32 views in model input layout."""
    static: np.ndarray     # (n, 2, ny, nx)   [log10 perm, porosity]
    relperm: np.ndarray    # (n, 6)
    states: np.ndarray     # (n, H+1, 2, ny, nx) [pressure, saturation]
    actions: np.ndarray    # (n, H, N_a)
    responses: np.ndarray  # (n, H, N_d)


def prepare_arrays(ds: Dataset) -> TrainingArrays:
    st = ds.norm_stats
    states = np.stack([st.norm("pressure", ds.states[:, :, 0]),
                       st.norm("saturation", ds.states[:, :, 1])], axis=2)
    static = np.stack([st.norm("log10_perm", np.log10(ds.perm)),
                       st.norm("porosity", ds.poro)], axis=1)
    return TrainingArrays(
        static=static.astype(np.float32),
        relperm=st.norm("relperm", ds.relperm).astype(np.float32),
        states=states.astype(np.float32),
        actions=st.norm("controls", ds.schedules).astype(np.float32),
        responses=st.norm("responses", ds.responses).astype(np.float32),
    )


# ---------------------------------------------------------------------- loss

def training_loss(model: MldModel, leaves, arr: TrainingArrays, idx,
                  dtype=np.float32):
    """One minibatch graph. Returns (total_tensor, mse_value, jec_value);
    the partial losses are squared-error sums normalized by batch * horizon."""
    idx = np.asarray(idx)
    b, horizon = len(idx), arr.actions.shape[1]
    static_t = tensor(arr.static[idx].astype(dtype))
    rp_t = tensor(arr.relperm[idx].astype(dtype))
    feats = model.modal_features(leaves, static_t, rp_t)

    zhat = model.encode_from(leaves, tensor(arr.states[idx, 0].astype(dtype)), feats)
    mse_sum = None
    jec_sum = None
    for t in range(horizon):
        a_t = tensor(arr.actions[idx, t].astype(dtype))
        d_t = tensor(arr.responses[idx, t].astype(dtype))
        diff = model.predict(leaves, zhat, a_t) - d_t
        term = (diff * diff).sum()
        mse_sum = term if mse_sum is None else mse_sum + term
        zhat = model.transition(leaves, zhat, a_t)
        zdiff = zhat - model.encode_from(
            leaves, tensor(arr.states[idx, t + 1].astype(dtype)), feats)
        jterm = (zdiff * zdiff).sum()
        jec_sum = jterm if jec_sum is None else jec_sum + jterm
    scale = 1.0 / (b * horizon)
    mse_n = mse_sum * scale
    jec_n = jec_sum * scale
    total = mse_n * model.cfg.lambda_weight + jec_n
    return total, float(mse_n.data), float(jec_n.data)


# ------------------------------------------------------------------- metrics

def r2_score(pred, obs) -> float:
    """1 - SS_res / SS_tot with the per-time-step split mean as reference."""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    ss_res = float(np.sum((pred - obs) ** 2))
    ss_tot = float(np.sum((obs.mean(axis=0, keepdims=True) - obs) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def per_case_r2(pred, obs) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    ref = obs.mean(axis=0, keepdims=True)
    ss_res = np.sum((pred - obs) ** 2, axis=tuple(range(1, obs.ndim)))
    ss_tot = np.sum((ref - obs) ** 2, axis=tuple(range(1, obs.ndim)))
    out = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0),
                   np.where(ss_res == 0, 1.0, 0.0))
    return out


def rmse_score(pred, obs) -> float:
    """sqrt of squared-error sum over time and channels, averaged over cases."""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    return math.sqrt(float(np.sum((pred - obs) ** 2)) / obs.shape[0])


# ------------------------------------------------------------------ training

@dataclass
class EpochLog:
    epoch: int
    loss: float       # lambda*mse + jec + (decay/2)*||theta||^2
    mse: float
    jec: float
    test_rmse: float  # physical units
    test_r2: float


def predict_responses(model: MldModel, arr: TrainingArrays, idx) -> np.ndarray:
    """Open-loop rollout from the first frame; normalized (n, H, N_d)."""
    idx = np.asarray(idx)
    leaves = model.store.leaves(requires_grad=False)
    static_t = tensor(arr.static[idx])
    rp_t = tensor(arr.relperm[idx])
    feats = model.modal_features(leaves, static_t, rp_t)
    z = model.encode_from(leaves, tensor(arr.states[idx, 0]), feats)
    outs = []
    for t in range(arr.actions.shape[1]):
        a_t = tensor(arr.actions[idx, t])
        outs.append(model.predict(leaves, z, a_t).data)
        z = model.transition(leaves, z, a_t)
    return np.stack(outs, axis=1)


def evaluate(model: MldModel, ds: Dataset, split: str = "test",
             arr: TrainingArrays | None = None) -> dict:
    """Physical-unit accuracy of the open-loop rollout on one split."""
    if split == "train":
        idx = ds.train_idx
    elif split == "test":
        idx = ds.test_idx
    elif split == "all":
        idx = np.arange(ds.n_episodes)
    else:
        raise ConfigError(f"unknown split {split!r}")
    if len(idx) == 0:
        raise DataError(f"empty {split!r} split")
    if arr is None:
        arr = prepare_arrays(ds)
    pred = ds.norm_stats.denorm("responses", predict_responses(model, arr, idx))
    obs = ds.responses[idx].astype(np.float64)
    return {"split": split, "rmse": rmse_score(pred, obs),
            "r2": r2_score(pred, obs), "per_case_r2": per_case_r2(pred, obs),
            "predictions": pred, "observations": obs}


def train_mld(ds: Dataset, cfg: MldConfig, out_path=None, callback=None,
              model: MldModel | None = None):
    """Full training run; keeps the epoch with the best test RMSE.

    Returns (model, list[EpochLog]). Pass ``model`` to resume/warm-start.
    """
    arr = prepare_arrays(ds)
    ny, nx = ds.states.shape[-2:]
    if model is None:
        model = MldModel(cfg, ny, nx, arr.actions.shape[-1],
                         arr.responses.shape[-1], ds.norm_stats)
    store = model.store
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 11)))
    train_idx = ds.train_idx
    if len(train_idx) == 0:
        raise DataError("empty training split")

    logs: list[EpochLog] = []
    best_rmse = math.inf
    best_values = store.raw_copy()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(train_idx)
        sums = np.zeros(2)
        n_steps = 0
        for lo in range(0, len(order), cfg.batch_episodes):
            batch = order[lo:lo + cfg.batch_episodes]
            leaves = store.leaves()
            total, mse_v, jec_v = training_loss(model, leaves, arr, batch)
            if not np.isfinite(total.data):
                raise NumericError(f"training loss diverged at epoch {epoch}")
            total.backward()
            adam_step(store, grads_from_leaves(leaves), lr=cfg.epoch_lr(epoch),
                      weight_decay=cfg.weight_decay)
            sums += (mse_v, jec_v)
            n_steps += 1
        mse_e, jec_e = sums / n_steps
        res = evaluate(model, ds, "test", arr=arr)
        loss_e = (cfg.lambda_weight * mse_e + jec_e
                  + 0.5 * cfg.weight_decay * store.sq_norm())
        log = EpochLog(epoch, loss_e, mse_e, jec_e, res["rmse"], res["r2"])
        logs.append(log)
        if callback is not None:
            callback(log)
        if res["rmse"] < best_rmse:
            best_rmse = res["rmse"]
            best_values = store.raw_copy()

    for k, v in best_values.items():
        store.values[k][...] = v
    if out_path is not None:
        save_mld(model, out_path, extra_meta={"epochs_run": cfg.epochs,
                                              "best_test_rmse": best_rmse})
    return model, logs


# ------------------------------------------------------------ persistence

def save_mld(model: MldModel, path, extra_meta: dict | None = None):
    cfg = asdict(model.cfg)
    cfg["conv_channels"] = list(cfg["conv_channels"])
    meta = {"kind": "mld", "config": cfg,
            "ny": model.ny, "nx": model.nx,
            "n_actions": model.n_actions, "n_responses": model.n_responses,
            "norm_stats": model.norm_stats.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, {"mld": model.store}, meta)


def load_mld(path) -> MldModel:
    stores, meta = load_checkpoint(path)
    if meta.get("kind") != "mld" or "mld" not in stores:
        raise DataError(f"{path} is not a latent-model checkpoint")
    cfg_d = dict(meta["config"])
    cfg_d["conv_channels"] = tuple(cfg_d["conv_channels"])
    cfg = MldConfig(**cfg_d)
    return MldModel(cfg, meta["ny"], meta["nx"], meta["n_actions"],
                    meta["n_responses"], NormStats.from_dict(meta["norm_stats"]),
                    store=stores["mld"])
