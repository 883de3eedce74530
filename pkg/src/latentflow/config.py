"""Strict JSON run configuration.

One file describes the whole pipeline (scenario family, dataset counts,
surrogate and agent hyperparameters, economics, baseline budgets); every
command consumes the same schema.  Unknown keys are rejected with the
offending path so typos fail loudly instead of silently using defaults.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .baselines import DeConfig
from .errors import ConfigError, DataError
from .mld import MldConfig
from .msdrl import EconomicSpec, PolicyTrainConfig
from .reservoir import FluidSpec, GridSpec, RelpermParams, WellSpec
from .sac import SacConfig
from .scenario import ControlBounds, DatasetSpec, FieldSpec

__all__ = ["RunConfig", "load_config", "resolve_config"]

_TOP_KEYS = {
    "mode", "output_dir", "root_seed", "grid", "fluid", "wells", "bounds",
    "field", "relperm", "relperm_ranges", "dataset", "init", "mld", "sac",
    "policy", "econ", "de", "random_evals", "eval_scenarios",
}
_DATASET_KEYS = {"n_episodes", "n_train", "horizon", "dt_days"}
_POLICY_KEYS = {"episodes", "scenarios_per_episode", "updates_per_step",
                "warmup_steps", "eval_every", "reward_scale"}


@dataclass(frozen=True)
class RunConfig:
    mode: str
    output_dir: str
    root_seed: int
    grid: GridSpec
    fluid: FluidSpec
    wells: tuple
    bounds: ControlBounds
    field: FieldSpec
    relperm: RelpermParams | None
    relperm_ranges: np.ndarray | None
    n_episodes: int
    n_train: int
    horizon: int
    dt_days: float
    init_pressure: float
    init_sw: float
    mld: MldConfig
    sac: SacConfig
    policy: PolicyTrainConfig
    econ: EconomicSpec
    de: DeConfig
    random_evals: int
    eval_scenarios: tuple | None

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            mode=self.mode, n_episodes=self.n_episodes, n_train=self.n_train,
            horizon=self.horizon, dt_days=self.dt_days, grid=self.grid,
            fluid=self.fluid, wells=self.wells, bounds=self.bounds,
            field=self.field, relperm=self.relperm,
            relperm_ranges=self.relperm_ranges,
            init_pressure=self.init_pressure, init_sw=self.init_sw,
            root_seed=self.root_seed)

    def to_dict(self) -> dict:
        """Fully resolved, JSON-ready echo of every setting in effect."""
        return {
            "mode": self.mode,
            "output_dir": self.output_dir,
            "root_seed": self.root_seed,
            "grid": dataclasses.asdict(self.grid),
            "fluid": dataclasses.asdict(self.fluid),
            "wells": [dataclasses.asdict(w) for w in self.wells],
            "bounds": {"injection_rate": list(self.bounds.injection_rate),
                       "producer_bhp": list(self.bounds.producer_bhp)},
            "field": dataclasses.asdict(self.field),
            "relperm": None if self.relperm is None
            else list(self.relperm.as_array()),
            "relperm_ranges": None if self.relperm_ranges is None
            else np.asarray(self.relperm_ranges).tolist(),
            "dataset": {"n_episodes": self.n_episodes, "n_train": self.n_train,
                        "horizon": self.horizon, "dt_days": self.dt_days},
            "init": {"pressure": self.init_pressure, "sw": self.init_sw},
            "mld": {**dataclasses.asdict(self.mld),
                    "conv_channels": list(self.mld.conv_channels)},
            "sac": dataclasses.asdict(self.sac),
            "policy": {k: getattr(self.policy, k) for k in sorted(_POLICY_KEYS)},
            "econ": dataclasses.asdict(self.econ),
            "de": dataclasses.asdict(self.de),
            "random_evals": self.random_evals,
            "eval_scenarios": None if self.eval_scenarios is None
            else list(self.eval_scenarios),
        }


def _expect_dict(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    return raw


def _reject_unknown(raw: dict, allowed, path):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")


def _build(cls, raw, path, **coerced):
    """Construct a config dataclass from a JSON object, strictly."""
    raw = dict(_expect_dict(raw, path))
    names = [f.name for f in dataclasses.fields(cls)]
    _reject_unknown(raw, names, path)
    raw.update(coerced)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def resolve_config(raw: dict, seed: int | None = None,
                   output_dir: str | None = None) -> RunConfig:
    """Validate a parsed JSON object and resolve every default and seed.

    Seed precedence: explicit ``seed`` argument (the CLI flag), then the
    config's ``root_seed``, then ``LATENTFLOW_SEED``, then 0.  Module seeds
    (``mld.seed``, ``sac.seed``) default to the resolved root seed.
    """
    raw = dict(_expect_dict(raw, "config"))
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "mode" not in raw or "wells" not in raw or "bounds" not in raw \
            or "grid" not in raw or "dataset" not in raw:
        missing = [k for k in ("mode", "grid", "wells", "bounds", "dataset")
                   if k not in raw]
        raise ConfigError(f"config: missing required key(s) {missing}")

    if seed is not None:
        root_seed = int(seed)
    elif "root_seed" in raw:
        root_seed = int(raw["root_seed"])
    elif os.environ.get("LATENTFLOW_SEED"):
        try:
            root_seed = int(os.environ["LATENTFLOW_SEED"])
        except ValueError as exc:
            raise ConfigError(f"LATENTFLOW_SEED is not an integer: "
                              f"{os.environ['LATENTFLOW_SEED']!r}") from exc
    else:
        root_seed = 0

    grid = _build(GridSpec, raw["grid"], "config.grid")
    fluid = _build(FluidSpec, raw.get("fluid", {}), "config.fluid")
    field = _build(FieldSpec, raw.get("field", {}), "config.field")

    wells_raw = raw["wells"]
    if not isinstance(wells_raw, list) or not wells_raw:
        raise ConfigError("config.wells: expected a non-empty array")
    wells = tuple(_build(WellSpec, w, f"config.wells[{k}]")
                  for k, w in enumerate(wells_raw))

    b = _expect_dict(raw["bounds"], "config.bounds")
    _reject_unknown(b, ("injection_rate", "producer_bhp"), "config.bounds")
    for key in ("injection_rate", "producer_bhp"):
        pair = b.get(key)
        if not isinstance(pair, list) or len(pair) != 2 or pair[0] > pair[1]:
            raise ConfigError(f"config.bounds.{key}: expected [lo, hi]")
    bounds = ControlBounds(tuple(b["injection_rate"]),
                           tuple(b["producer_bhp"]))

    relperm = None
    if raw.get("relperm") is not None:
        arr = raw["relperm"]
        if not isinstance(arr, list) or len(arr) != 6:
            raise ConfigError("config.relperm: expected 6 curve parameters")
        relperm = RelpermParams.from_array(np.asarray(arr, dtype=np.float64))
    relperm_ranges = None
    if raw.get("relperm_ranges") is not None:
        rr = np.asarray(raw["relperm_ranges"], dtype=np.float64)
        if rr.shape != (6, 2):
            raise ConfigError("config.relperm_ranges: expected a 6x2 array")
        relperm_ranges = rr

    dd = dict(_expect_dict(raw["dataset"], "config.dataset"))
    _reject_unknown(dd, _DATASET_KEYS, "config.dataset")
    for key in _DATASET_KEYS:
        if key not in dd:
            raise ConfigError(f"config.dataset: missing {key!r}")

    init = dict(_expect_dict(raw.get("init", {}), "config.init"))
    _reject_unknown(init, ("pressure", "sw"), "config.init")

    mld_raw = dict(_expect_dict(raw.get("mld", {}), "config.mld"))
    mld_raw.setdefault("seed", root_seed)
    if "conv_channels" in mld_raw:
        if not isinstance(mld_raw["conv_channels"], list):
            raise ConfigError("config.mld.conv_channels: expected an array")
        mld_raw["conv_channels"] = tuple(mld_raw["conv_channels"])
    mld = _build(MldConfig, mld_raw, "config.mld")

    sac_raw = dict(_expect_dict(raw.get("sac", {}), "config.sac"))
    sac_raw.setdefault("seed", root_seed)
    sac = _build(SacConfig, sac_raw, "config.sac")

    pol = dict(_expect_dict(raw.get("policy", {}), "config.policy"))
    _reject_unknown(pol, _POLICY_KEYS, "config.policy")
    policy = PolicyTrainConfig(sac=sac, **pol)

    econ = _build(EconomicSpec, raw.get("econ", {}), "config.econ")
    de = _build(DeConfig, raw.get("de", {}), "config.de",
                seed=raw.get("de", {}).get("seed", root_seed))

    scen = raw.get("eval_scenarios")
    if scen is not None:
        if not isinstance(scen, list):
            raise ConfigError("config.eval_scenarios: expected an array of ids")
        scen = tuple(int(i) for i in scen)

    cfg = RunConfig(
        mode=str(raw["mode"]), root_seed=root_seed,
        output_dir=str(output_dir if output_dir is not None
                       else raw.get("output_dir", "runs/latest")),
        grid=grid, fluid=fluid, wells=wells, bounds=bounds, field=field,
        relperm=relperm, relperm_ranges=relperm_ranges,
        n_episodes=int(dd["n_episodes"]), n_train=int(dd["n_train"]),
        horizon=int(dd["horizon"]), dt_days=float(dd["dt_days"]),
        init_pressure=float(init.get("pressure", 175.16)),
        init_sw=float(init.get("sw", 1.0)),
        mld=mld, sac=sac, policy=policy, econ=econ, de=de,
        random_evals=int(raw.get("random_evals", 20)),
        eval_scenarios=scen)
    cfg.dataset_spec()  # surface invariant violations now, not at first use
    return cfg


def load_config(path, seed: int | None = None,
                output_dir: str | None = None) -> RunConfig:
    """Read + resolve a JSON config file; errors carry file/line context."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    return resolve_config(raw, seed=seed, output_dir=output_dir)
