"""Scenario synthesis and dataset generation.

A scenario = heterogeneous permeability field (stationary log-normal,
exponential covariance, spectral/circulant sampling), porosity tied to
permeability, one relative-permeability curve set, and a well layout.
Episodes pair a scenario with a Latin-hypercube control schedule and the
simulated state/response trajectory; datasets persist as a JSON manifest
plus a flat little-endian float32 payload.

Seed derivation is hierarchical and platform-stable: purpose-tagged
``np.random.SeedSequence((root_seed, tag, index))`` streams.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, SolverError, StabilityError
from .reservoir import (FluidSpec, GridSpec, RelpermParams, Simulator, WellSpec,
                        relperm_eval)

__all__ = [
    "FieldSpec", "ControlBounds", "Scenario", "ControlSchedule", "DatasetSpec",
    "Dataset", "NormStats", "sample_log_perm_field", "porosity_from_perm",
    "latin_hypercube", "normalize", "denormalize", "compute_norm_stats",
    "scenario_for_index", "sample_schedules", "simulate_episode",
    "generate_dataset", "save_dataset", "load_dataset", "relperm_eval",
]

_TAG_FIELD, _TAG_SCHEDULE, _TAG_RELPERM = 0, 1, 2


# ------------------------------------------------------------ random field

@dataclass(frozen=True)
class FieldSpec:
    """Stationary Gaussian ln(k[mD]) field, isotropic exponential covariance."""
    mean_log: float = 5.0
    std_log: float = 1.0
    correlation_cells: float = 8.0

    def __post_init__(self):
        if self.std_log < 0 or self.correlation_cells <= 0:
            raise ConfigError(f"bad field spec {self}")


def _embedding_eigenvalues(ny: int, nx: int, corr: float, factor: int):
    m1, m2 = factor * ny, factor * nx
    dy = np.minimum(np.arange(m1), m1 - np.arange(m1))[:, None]
    dx = np.minimum(np.arange(m2), m2 - np.arange(m2))[None, :]
    cov = np.exp(-np.hypot(dy, dx) / corr)
    lam = np.fft.fft2(cov).real
    return lam, m1, m2


def sample_log_perm_field(ny: int, nx: int, spec: FieldSpec, seed) -> np.ndarray:
    """One ln(k) sample on an (ny, nx) grid: circulant embedding on the
    smallest PSD torus (2x..4x padding), dense-Cholesky fallback otherwise."""
    rng = np.random.default_rng(seed)
    if spec.std_log == 0.0:
        return np.full((ny, nx), spec.mean_log)
    for factor in (2, 3, 4):
        lam, m1, m2 = _embedding_eigenvalues(ny, nx, spec.correlation_cells, factor)
        if lam.min() >= -1e-10 * lam.max():
            lam = np.clip(lam, 0.0, None)
            eps = rng.standard_normal((m1, m2)) + 1j * rng.standard_normal((m1, m2))
            f = np.fft.fft2(eps * np.sqrt(lam / (m1 * m2)))
            return spec.mean_log + spec.std_log * f.real[:ny, :nx]
    # indefinite even at 4x (tiny grids / long correlation): exact dense covariance
    iy, ix = np.divmod(np.arange(ny * nx), nx)
    h = np.hypot(iy[:, None] - iy[None, :], ix[:, None] - ix[None, :])
    cov = np.exp(-h / spec.correlation_cells)
    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(ny * nx))
    z = chol @ rng.standard_normal(ny * nx)
    return spec.mean_log + spec.std_log * z.reshape(ny, nx)


def porosity_from_perm(perm_md) -> np.ndarray:
    """phi = 0.05*log10(k) + 0.1, clamped to [0.01, 0.4]."""
    return np.clip(0.05 * np.log10(np.asarray(perm_md, dtype=np.float64)) + 0.1, 0.01, 0.4)


# ------------------------------------------------------------ sampling plans

def latin_hypercube(n: int, bounds, seed) -> np.ndarray:
    """(n, d) maximin-free LHS: per dimension the n points occupy the n
    equal-width strata exactly once, uniformly jittered, order permuted."""
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ConfigError(f"bounds must be (d, 2), got {bounds.shape}")
    if np.any(bounds[:, 1] < bounds[:, 0]):
        raise ConfigError("bounds rows must satisfy lo <= hi")
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    d = bounds.shape[0]
    u = np.empty((n, d))
    for k in range(d):
        u[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


def normalize(x, lo, hi):
    """Min-max map onto [-1, 1]; degenerate ranges map to 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, 2.0 * (x - lo) / safe - 1.0, 0.0)


def denormalize(y, lo, hi):
    y = np.asarray(y, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo + 0.5 * (y + 1.0) * (hi - lo)


class NormStats:
    """Named per-feature (lo, hi) ranges; vector entries carry one row per channel."""

    def __init__(self, ranges: dict[str, np.ndarray]):
        self.ranges = {k: np.asarray(v, dtype=np.float64) for k, v in ranges.items()}

    def lo(self, name):
        return self.ranges[name][..., 0]

    def hi(self, name):
        return self.ranges[name][..., 1]

    def norm(self, name: str, x):
        return normalize(x, self.lo(name), self.hi(name))

    def denorm(self, name: str, y):
        return denormalize(y, self.lo(name), self.hi(name))

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.ranges.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls({k: np.asarray(v) for k, v in d.items()})


# ------------------------------------------------------------ scenario types

@dataclass(frozen=True, eq=False)
class Scenario:
    grid: GridSpec
    fluid: FluidSpec
    permeability: np.ndarray  # (ny, nx) mD
    porosity: np.ndarray      # (ny, nx)
    relperm: RelpermParams
    wells: tuple
    seed: int = 0
    init_pressure: float = 175.16
    init_sw: float = 1.0

    def simulator(self, **kw) -> Simulator:
        return Simulator(self.grid, self.fluid, self.permeability, self.porosity,
                         self.relperm, list(self.wells),
                         init_pressure=self.init_pressure, init_sw=self.init_sw, **kw)

    @property
    def n_injectors(self) -> int:
        return sum(1 for w in self.wells if w.kind == "injector")

    @property
    def n_producers(self) -> int:
        return sum(1 for w in self.wells if w.kind == "producer")

    @property
    def n_actions(self) -> int:
        return self.n_injectors + self.n_producers


@dataclass
class ControlSchedule:
    """Action channel order everywhere: injector rates first, then BHPs."""
    injector_rates: np.ndarray  # (H, n_inj) surface m3/day
    producer_bhps: np.ndarray   # (H, n_prod) bar
    dt_days: float

    @property
    def horizon(self) -> int:
        return self.injector_rates.shape[0]

    def as_action_matrix(self) -> np.ndarray:
        return np.concatenate([self.injector_rates, self.producer_bhps], axis=1)

    @classmethod
    def from_action_matrix(cls, acts, n_injectors: int, dt_days: float) -> "ControlSchedule":
        acts = np.asarray(acts, dtype=np.float64)
        return cls(acts[:, :n_injectors].copy(), acts[:, n_injectors:].copy(), dt_days)


@dataclass(frozen=True)
class ControlBounds:
    injection_rate: tuple    # (lo, hi) surface m3/day
    producer_bhp: tuple      # (lo, hi) bar

    def action_box(self, n_injectors: int, n_producers: int) -> np.ndarray:
        """(N_a, 2) bounds in action channel order."""
        rows = [list(self.injection_rate)] * n_injectors + [list(self.producer_bhp)] * n_producers
        return np.asarray(rows, dtype=np.float64)


# ------------------------------------------------------------ dataset build

@dataclass(frozen=True, eq=False)
class DatasetSpec:
    mode: str                    # "deterministic" | "generalizable"
    n_episodes: int
    n_train: int
    horizon: int
    dt_days: float
    grid: GridSpec
    fluid: FluidSpec
    wells: tuple
    bounds: ControlBounds
    field: FieldSpec
    relperm: RelpermParams | None = None        # fixed curves (deterministic mode)
    relperm_ranges: np.ndarray | None = None    # (6, 2) sampling box (generalizable)
    init_pressure: float = 175.16
    init_sw: float = 1.0
    root_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("deterministic", "generalizable"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        empty = self.n_episodes == 0 and self.n_train == 0
        if not empty and not (0 < self.n_train < self.n_episodes):
            raise ConfigError("need 0 < n_train < n_episodes (or 0/0 for empty)")
        if self.mode == "deterministic" and self.relperm is None:
            raise ConfigError("deterministic mode needs fixed relperm curves")
        if self.mode == "generalizable" and self.relperm_ranges is None:
            raise ConfigError("generalizable mode needs relperm sampling ranges")

    @property
    def n_injectors(self):
        return sum(1 for w in self.wells if w.kind == "injector")

    @property
    def n_producers(self):
        return sum(1 for w in self.wells if w.kind == "producer")


def _seed_for(spec_seed: int, tag: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence((spec_seed, tag, index))


def _relperm_rows(spec: DatasetSpec, n: int) -> np.ndarray:
    return latin_hypercube(n, spec.relperm_ranges, _seed_for(spec.root_seed, _TAG_RELPERM))


def scenario_for_index(spec: DatasetSpec, index: int,
                       relperm_rows: np.ndarray | None = None) -> Scenario:
    """Scenario for episode ``index``; deterministic mode pins index 0."""
    idx = 0 if spec.mode == "deterministic" else index
    seed = _seed_for(spec.root_seed, _TAG_FIELD, idx)
    lnk = sample_log_perm_field(spec.grid.ny, spec.grid.nx, spec.field, seed)
    perm = np.exp(lnk)
    if spec.mode == "deterministic":
        rp = spec.relperm
    else:
        if relperm_rows is None:
            relperm_rows = _relperm_rows(spec, max(idx + 1, spec.n_episodes))
        rp = RelpermParams.from_array(relperm_rows[idx])
    return Scenario(spec.grid, spec.fluid, perm, porosity_from_perm(perm), rp,
                    tuple(spec.wells), seed=idx, init_pressure=spec.init_pressure,
                    init_sw=spec.init_sw)


def sample_schedules(spec: DatasetSpec, n: int | None = None) -> np.ndarray:
    """(n, H, N_a) physical control schedules, two interleaved LHS designs.

    Even sample indices draw every step independently over the action box
    (step-to-step excitation for the dynamics).  Odd indices anchor the
    episode at an LHS base level plus +/-30%-of-span per-step jitter:
    per-step sampling concentrates cumulative totals near H*mean, so
    sustained near-bound trajectories - exactly where optimized schedules
    end up - would otherwise be several sigma outside the training data.
    """
    n = spec.n_episodes if n is None else n
    box = spec.bounds.action_box(spec.n_injectors, spec.n_producers)
    if n == 0:
        return np.zeros((0, spec.horizon, box.shape[0]))
    n_anchor = n // 2
    n_pure = n - n_anchor
    tiled = np.tile(box, (spec.horizon, 1))
    pure = latin_hypercube(n_pure, tiled,
                           _seed_for(spec.root_seed, _TAG_SCHEDULE))
    out = np.empty((n, spec.horizon, box.shape[0]))
    out[0::2] = pure.reshape(n_pure, spec.horizon, box.shape[0])
    if n_anchor:
        base = latin_hypercube(n_anchor, box,
                               _seed_for(spec.root_seed, _TAG_SCHEDULE, 1))
        span = box[:, 1] - box[:, 0]
        dev_box = np.tile(np.stack([-0.3 * span, 0.3 * span], axis=1),
                          (spec.horizon, 1))
        dev = latin_hypercube(n_anchor, dev_box,
                              _seed_for(spec.root_seed, _TAG_SCHEDULE, 2))
        anchored = base[:, None, :] + dev.reshape(n_anchor, spec.horizon,
                                                  box.shape[0])
        out[1::2] = np.clip(anchored, box[:, 0], box[:, 1])
    return out


def simulate_episode(scenario: Scenario, actions: np.ndarray, dt_days: float):
    """Run one schedule; returns (states (H+1,2,ny,nx), brine responses (H, n_prod))."""
    sim = scenario.simulator()
    sched = ControlSchedule.from_action_matrix(actions, scenario.n_injectors, dt_days)
    traj = sim.run_episode(sched)
    ny, nx = scenario.grid.ny, scenario.grid.nx
    states = np.stack([
        np.stack([st.pressure.reshape(ny, nx), st.sw.reshape(ny, nx)])
        for st in traj.states])
    resp = np.stack([r.brine_rates for r in traj.responses])
    return states, resp


def _episode_worker(args):
    spec, index, actions, relperm_row = args
    idx = 0 if spec.mode == "deterministic" else index
    seed = _seed_for(spec.root_seed, _TAG_FIELD, idx)
    lnk = sample_log_perm_field(spec.grid.ny, spec.grid.nx, spec.field, seed)
    perm = np.exp(lnk)
    rp = spec.relperm if relperm_row is None else RelpermParams.from_array(relperm_row)
    scn = Scenario(spec.grid, spec.fluid, perm, porosity_from_perm(perm), rp,
                   tuple(spec.wells), seed=idx, init_pressure=spec.init_pressure,
                   init_sw=spec.init_sw)
    try:
        states, resp = simulate_episode(scn, actions, spec.dt_days)
        return index, scn, states, resp, None
    except (SolverError, StabilityError, NumericError) as exc:
        return index, scn, None, None, f"{type(exc).__name__}: {exc}"


class Dataset:
    """In-memory view of a generated dataset (see ``generate_dataset``)."""

    def __init__(self, spec_dict: dict, perm, poro, relperm, schedules, states,
                 responses, norm_stats: NormStats, episode_index, failed):
        self.spec_dict = spec_dict
        self.perm = perm            # (n, ny, nx)
        self.poro = poro            # (n, ny, nx)
        self.relperm = relperm      # (n, 6)
        self.schedules = schedules  # (n, H, N_a) physical units
        self.states = states        # (n, H+1, 2, ny, nx) [pressure, sw]
        self.responses = responses  # (n, H, n_prod) brine m3/day
        self.norm_stats = norm_stats
        self.episode_index = episode_index  # original sample indices
        self.failed = failed

    @property
    def n_episodes(self):
        return self.states.shape[0]

    @property
    def n_train(self):
        return int(self.spec_dict["n_train"])

    @property
    def train_idx(self):
        return np.arange(0, min(self.n_train, self.n_episodes))

    @property
    def test_idx(self):
        return np.arange(min(self.n_train, self.n_episodes), self.n_episodes)

    @property
    def horizon(self):
        return self.schedules.shape[1]

    @property
    def n_injectors(self):
        return int(self.spec_dict["n_injectors"])

    @property
    def dt_days(self):
        return float(self.spec_dict["dt_days"])

    def grid(self) -> GridSpec:
        g = self.spec_dict["grid"]
        return GridSpec(**g)

    def fluid(self) -> FluidSpec:
        return FluidSpec(**self.spec_dict["fluid"])

    def wells(self):
        return tuple(WellSpec(**w) for w in self.spec_dict["wells"])

    def scenario(self, i: int) -> Scenario:
        """Rebuild episode i's scenario from the stored fields."""
        return Scenario(self.grid(), self.fluid(), self.perm[i], self.poro[i],
                        RelpermParams.from_array(self.relperm[i]), self.wells(),
                        seed=int(self.episode_index[i]),
                        init_pressure=float(self.spec_dict["init_pressure"]),
                        init_sw=float(self.spec_dict["init_sw"]))


def compute_norm_stats(perm, poro, relperm, schedules, states, responses,
                       train_idx) -> NormStats:
    """Per-feature min/max from the training split only."""
    tr = train_idx

    def rng1(x):
        if x.size == 0:
            return np.zeros(2)
        return np.array([float(np.min(x)), float(np.max(x))])

    def rng_cols(x):  # (..., C) -> (C, 2)
        flat = x.reshape(-1, x.shape[-1])
        if flat.shape[0] == 0:
            return np.zeros((x.shape[-1], 2))
        return np.stack([flat.min(axis=0), flat.max(axis=0)], axis=1)

    return NormStats({
        "pressure": rng1(states[tr][:, :, 0]),
        "saturation": rng1(states[tr][:, :, 1]),
        "log10_perm": rng1(np.log10(perm[tr])),
        "porosity": rng1(poro[tr]),
        "relperm": rng_cols(relperm[tr]),
        "controls": rng_cols(schedules[tr]),
        "responses": rng_cols(responses[tr]),
    })


def generate_dataset(spec: DatasetSpec, out_dir, jobs: int = 1) -> Dataset:
    """Simulate every LHS episode, fit norm stats on the training split, and
    persist manifest.json + data.bin (byte-stable for a fixed spec)."""
    schedules = sample_schedules(spec)
    rp_rows = _relperm_rows(spec, spec.n_episodes) if spec.mode == "generalizable" else None
    tasks = [(spec, i, schedules[i],
              None if rp_rows is None else rp_rows[i]) for i in range(spec.n_episodes)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_worker, tasks, chunksize=4))
    else:
        results = [_episode_worker(t) for t in tasks]

    kept, failed = [], []
    for index, scn, states, resp, err in results:
        if err is not None:
            failed.append({"index": index, "error": err})
        else:
            kept.append((index, scn, states, resp))
    if not kept and spec.n_episodes > 0:
        raise DataError("every episode simulation failed")

    ny, nx = spec.grid.ny, spec.grid.nx
    n_act, n_prod = spec.n_injectors + spec.n_producers, spec.n_producers

    def stack(rows, tail_shape):
        if rows:
            return np.stack(rows).astype(np.float32)
        return np.zeros((0, *tail_shape), dtype=np.float32)

    perm = stack([s.permeability for _, s, _, _ in kept], (ny, nx))
    poro = stack([s.porosity for _, s, _, _ in kept], (ny, nx))
    relperm = stack([s.relperm.as_array() for _, s, _, _ in kept], (6,))
    sched_arr = stack([schedules[i] for i, _, _, _ in kept],
                      (spec.horizon, n_act))
    states_arr = stack([st for _, _, st, _ in kept],
                       (spec.horizon + 1, 2, ny, nx))
    resp_arr = stack([r for _, _, _, r in kept], (spec.horizon, n_prod))
    episode_index = np.array([i for i, _, _, _ in kept], dtype=np.int64)

    train_idx = np.arange(min(spec.n_train, len(kept)))
    stats = compute_norm_stats(perm, poro, relperm, sched_arr, states_arr, resp_arr,
                               train_idx)

    spec_dict = {
        "mode": spec.mode,
        "n_episodes": spec.n_episodes,
        "n_train": spec.n_train,
        "horizon": spec.horizon,
        "dt_days": spec.dt_days,
        "grid": {"nx": spec.grid.nx, "ny": spec.grid.ny, "dx": spec.grid.dx,
                 "dy": spec.grid.dy, "dz": spec.grid.dz,
                 "datum_depth": spec.grid.datum_depth},
        "fluid": {"mu_water": spec.fluid.mu_water, "mu_gas": spec.fluid.mu_gas,
                  "gas_expansion": spec.fluid.gas_expansion},
        "wells": [{"kind": w.kind, "i": w.i, "j": w.j, "radius": w.radius}
                  for w in spec.wells],
        "bounds": {"injection_rate": list(spec.bounds.injection_rate),
                   "producer_bhp": list(spec.bounds.producer_bhp)},
        "field": {"mean_log": spec.field.mean_log, "std_log": spec.field.std_log,
                  "correlation_cells": spec.field.correlation_cells},
        "relperm": None if spec.relperm is None else spec.relperm.as_array().tolist(),
        "relperm_ranges": None if spec.relperm_ranges is None
        else np.asarray(spec.relperm_ranges).tolist(),
        "init_pressure": spec.init_pressure,
        "init_sw": spec.init_sw,
        "root_seed": spec.root_seed,
        "n_injectors": spec.n_injectors,
        "n_producers": spec.n_producers,
    }
    ds = Dataset(spec_dict, perm, poro, relperm, sched_arr, states_arr, resp_arr,
                 stats, episode_index, failed)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


_ARRAY_ORDER = ("perm", "poro", "relperm", "schedules", "states", "responses")


def save_dataset(ds: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format": "latentflow-dataset-v1",
        "dtype": "float32-le",
        "spec": ds.spec_dict,
        "n_kept": int(ds.n_episodes),
        "episode_index": ds.episode_index.tolist(),
        "failed": ds.failed,
        "norm_stats": ds.norm_stats.to_dict(),
        "arrays": {name: list(getattr(ds, name).shape) for name in _ARRAY_ORDER},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "data.bin"), "wb") as fh:
        for name in _ARRAY_ORDER:
            fh.write(np.ascontiguousarray(getattr(ds, name), dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    mpath = os.path.join(path, "manifest.json")
    bpath = os.path.join(path, "data.bin")
    if not os.path.exists(mpath) or not os.path.exists(bpath):
        raise DataError(f"no dataset at {path} (need manifest.json + data.bin)")
    with open(mpath) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format") != "latentflow-dataset-v1":
        raise DataError(f"{path} is not a dataset directory")
    blob = np.fromfile(bpath, dtype="<f4")
    arrays = {}
    offset = 0
    for name in _ARRAY_ORDER:
        shape = tuple(manifest["arrays"][name])
        n = int(np.prod(shape))
        if offset + n > blob.size:
            raise DataError(f"data.bin truncated at array {name!r}")
        arrays[name] = blob[offset:offset + n].reshape(shape).copy()
        offset += n
    if offset != blob.size:
        raise DataError(f"data.bin has {blob.size - offset} trailing floats")
    return Dataset(manifest["spec"], arrays["perm"], arrays["poro"], arrays["relperm"],
                   arrays["schedules"], arrays["states"], arrays["responses"],
                   NormStats.from_dict(manifest["norm_stats"]),
                   np.asarray(manifest["episode_index"], dtype=np.int64),
                   manifest["failed"])
