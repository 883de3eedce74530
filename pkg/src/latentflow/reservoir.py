"""Incompressible immiscible two-phase (water/gas) proxy simulator.

2-D areal grid, IMPES scheme: implicit pressure via direct sparse
factorization, explicit upwind saturation transport under a CFL cap.
Wells: rate-controlled gas injectors (commanded at surface conditions,
converted to reservoir volume by ``FluidSpec.gas_expansion``) and
BHP-controlled producers with a Peaceman well index; producer backflow is
clamped at zero by deactivating the well and re-solving.  No-flow outer
boundaries, no gravity or capillarity.

Units: length m, time days, pressure bar, viscosity cP, permeability mD,
rates m3/day.  All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError, StabilityError

# q[m3/day] = CONV * k[mD] * (A[m2]/L[m]) * (kr/mu[cP]) * dp[bar]
CONV = 9.869233e-16 * 1e5 * 86400.0 / 1e-3

_RATE_TOL = 1e-9  # m3/day; producer rates below this snap to zero


# ----------------------------------------------------------- relperm curves

@dataclass(frozen=True)
class RelpermParams:
    """Modified Brooks-Corey endpoints/exponents, one curve set per scenario."""
    krg0: float
    krw0: float
    sgr: float
    swc: float
    ng: float
    nw: float

    def __post_init__(self):
        if not (0.0 < self.krg0 <= 1.0 and 0.0 < self.krw0 <= 1.0):
            raise ConfigError(f"relperm endpoints out of (0,1]: {self}")
        if not (0.0 <= self.swc < 1.0 and 0.0 <= self.sgr < 1.0
                and self.swc + self.sgr < 1.0):
            raise ConfigError(f"residual saturations inconsistent: {self}")
        if self.ng < 1.0 or self.nw < 1.0:
            raise ConfigError(f"relperm exponents must be >= 1: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.krg0, self.krw0, self.sgr, self.swc, self.ng, self.nw])

    @classmethod
    def from_array(cls, arr) -> "RelpermParams":
        return cls(*[float(x) for x in arr])


def relperm_eval(sw, rp: RelpermParams):
    """(krw, krg) at water saturation ``sw``; effective saturation clamped to [0,1]."""
    sw = np.asarray(sw, dtype=np.float64)
    se = (sw - rp.swc) / (1.0 - rp.swc - rp.sgr)
    se = np.clip(se, 0.0, 1.0)
    return rp.krw0 * se ** rp.nw, rp.krg0 * (1.0 - se) ** rp.ng


def fractional_flow(sw, rp: RelpermParams, mu_w: float, mu_g: float):
    """Water fractional flow fw = (krw/mu_w) / (krw/mu_w + krg/mu_g)."""
    krw, krg = relperm_eval(sw, rp)
    lw = krw / mu_w
    return lw / (lw + krg / mu_g)


def max_fw_derivative(rp: RelpermParams, mu_w: float, mu_g: float, n: int = 4001) -> float:
    """Max |dfw/dSw| over the mobile range; CFL safety factor for transport."""
    sw = np.linspace(rp.swc, 1.0, n)
    fw = fractional_flow(sw, rp, mu_w, mu_g)
    return max(1.0, float(np.max(np.abs(np.diff(fw) / np.diff(sw)))))


# ----------------------------------------------------------- static specs

@dataclass(frozen=True)
class GridSpec:
    """Areal grid; an original 3-D stack is accepted via thickness-weighted
    collapse into ``dz`` before construction."""
    nx: int
    ny: int
    dx: float = 60.0
    dy: float = 60.0
    dz: float = 7.0
    datum_depth: float = 1411.7

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or min(self.dx, self.dy, self.dz) <= 0:
            raise ConfigError(f"bad grid {self}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ConfigError(f"well at ({ix},{iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix


@dataclass(frozen=True)
class FluidSpec:
    mu_water: float = 0.5
    mu_gas: float = 0.06
    # surface m3 of gas per reservoir m3; injector commands are surface volumes
    gas_expansion: float = 400.0

    def __post_init__(self):
        if self.mu_water <= 0 or self.mu_gas <= 0 or self.gas_expansion <= 0:
            raise ConfigError(f"bad fluid spec {self}")


@dataclass(frozen=True)
class WellSpec:
    kind: str  # "injector" | "producer"
    i: int
    j: int
    radius: float = 0.1

    def __post_init__(self):
        if self.kind not in ("injector", "producer"):
            raise ConfigError(f"unknown well kind {self.kind!r}")
        if self.radius <= 0:
            raise ConfigError("wellbore radius must be positive")


@dataclass
class SimState:
    pressure: np.ndarray  # (n_cells,) bar
    sw: np.ndarray        # (n_cells,) water saturation
    time_days: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.pressure.copy(), self.sw.copy(), self.time_days)


@dataclass
class FlowResponse:
    """Step-averaged well rates.  ``co2_injection_rate`` echoes the commanded
    surface rate; brine/gas producer rates are reservoir volumes per day."""
    brine_rates: np.ndarray       # (n_producers,)
    gas_rates: np.ndarray         # (n_producers,)
    co2_injection_rate: float


@dataclass
class Trajectory:
    states: list
    responses: list
    injector_rates: np.ndarray  # (H, n_injectors) surface m3/day
    producer_bhps: np.ndarray   # (H, n_producers) bar
    dt_days: float
    injected_gas_rv: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (H,)

    @property
    def horizon(self) -> int:
        return len(self.responses)


# ----------------------------------------------------------- simulator

class Simulator:
    def __init__(self, grid: GridSpec, fluid: FluidSpec, permeability, porosity,
                 relperm: RelpermParams, wells, init_pressure: float = 175.16,
                 init_sw: float = 1.0, cfl: float = 0.5, max_substeps: int = 10000):
        self.grid = grid
        self.fluid = fluid
        self.relperm = relperm
        self.perm = np.asarray(permeability, dtype=np.float64).reshape(grid.n_cells)
        self.poro = np.asarray(porosity, dtype=np.float64).reshape(grid.n_cells)
        if np.any(self.perm <= 0):
            raise ConfigError("permeability must be positive")
        if np.any((self.poro <= 0) | (self.poro > 1)):
            raise ConfigError("porosity must lie in (0, 1]")
        if cfl <= 0 or cfl > 1:
            raise ConfigError(f"cfl must be in (0,1], got {cfl}")
        self.cfl = cfl
        self.max_substeps = int(max_substeps)
        self.init_pressure = float(init_pressure)
        self.init_sw = float(init_sw)

        self.injectors = [w for w in wells if w.kind == "injector"]
        self.producers = [w for w in wells if w.kind == "producer"]
        cells = [grid.cell_index(w.i, w.j) for w in wells]
        if len(set(cells)) != len(cells):
            raise ConfigError("two wells share a cell")
        self.inj_cells = np.array([grid.cell_index(w.i, w.j) for w in self.injectors], dtype=int)
        self.prod_cells = np.array([grid.cell_index(w.i, w.j) for w in self.producers], dtype=int)

        # pore volumes and face transmissibility (geometric x harmonic perm)
        cell_vol = grid.dx * grid.dy * grid.dz
        self.pv = self.poro * cell_vol
        k2 = self.perm.reshape(grid.ny, grid.nx)
        ax, ay = [], []
        harm = lambda a, b: 2.0 * a * b / (a + b)
        tx = CONV * grid.dy * grid.dz / grid.dx
        ty = CONV * grid.dx * grid.dz / grid.dy
        idx = np.arange(grid.n_cells).reshape(grid.ny, grid.nx)
        fa = [idx[:, :-1].ravel(), idx[:-1, :].ravel()]
        fb = [idx[:, 1:].ravel(), idx[1:, :].ravel()]
        ft = [tx * harm(k2[:, :-1], k2[:, 1:]).ravel(),
              ty * harm(k2[:-1, :], k2[1:, :]).ravel()]
        self.face_a = np.concatenate(fa)
        self.face_b = np.concatenate(fb)
        self.face_t = np.concatenate(ft)

        # Peaceman index per producer: WI = CONV * 2 pi k dz / ln(re/rw)
        re = 0.14 * np.sqrt(grid.dx ** 2 + grid.dy ** 2)
        self.prod_wi = np.array([
            CONV * 2.0 * np.pi * self.perm[c] * grid.dz / np.log(re / w.radius)
            for w, c in zip(self.producers, self.prod_cells)])

        self.max_fprime = max_fw_derivative(relperm, fluid.mu_water, fluid.mu_gas)

    # -- pieces -----------------------------------------------------------

    def initial_state(self) -> SimState:
        n = self.grid.n_cells
        return SimState(np.full(n, self.init_pressure), np.full(n, self.init_sw), 0.0)

    def _mobilities(self, sw):
        krw, krg = relperm_eval(sw, self.relperm)
        lw = krw / self.fluid.mu_water
        lg = krg / self.fluid.mu_gas
        return lw, lg, lw + lg

    def _assemble_solve(self, lt_face, lt_cell, active, bhps, inj_rv):
        n = self.grid.n_cells
        tval = self.face_t * lt_face
        rows = np.concatenate([self.face_a, self.face_b, self.face_a, self.face_b])
        cols = np.concatenate([self.face_a, self.face_b, self.face_b, self.face_a])
        vals = np.concatenate([tval, tval, -tval, -tval])
        rhs = np.zeros(n)
        np.add.at(rhs, self.inj_cells, inj_rv)
        wrows, wvals = [], []
        for k in np.flatnonzero(active):
            c = self.prod_cells[k]
            g = self.prod_wi[k] * lt_cell[c]
            wrows.append(c)
            wvals.append(g)
            rhs[c] += g * bhps[k]
        if wrows:
            rows = np.concatenate([rows, wrows])
            cols = np.concatenate([cols, wrows])
            vals = np.concatenate([vals, wvals])
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        return spla.spsolve(mat, rhs)

    def _solve_pressure(self, state: SimState, inj_rv, bhps):
        """Two-pass upwinding inside a producer active-set loop.

        Returns (pressure, face_flux, producer_total_rates)."""
        lw, lg, lt = self._mobilities(state.sw)
        n_prod = len(self.producers)
        active = np.ones(n_prod, dtype=bool)
        total_inj = float(np.sum(inj_rv))
        for _ in range(n_prod + 1):
            if not np.any(active):
                if total_inj > _RATE_TOL:
                    raise SolverError("all producers sealed while injecting: no outlet")
                # stationary: nothing can flow
                return state.pressure.copy(), np.zeros_like(self.face_t), np.zeros(n_prod)
            # pass A: arithmetic face mobility fixes the upwind directions
            lt_arith = 0.5 * (lt[self.face_a] + lt[self.face_b])
            p = self._assemble_solve(lt_arith, lt, active, bhps, inj_rv)
            upwind = np.where(p[self.face_a] >= p[self.face_b], self.face_a, self.face_b)
            # pass B: single-point upstream mobility
            p = self._assemble_solve(lt[upwind], lt, active, bhps, inj_rv)
            q = np.zeros(n_prod)
            q[active] = (self.prod_wi * lt[self.prod_cells] * (p[self.prod_cells] - bhps))[active]
            if np.all(q >= -_RATE_TOL):
                q[np.abs(q) < _RATE_TOL] = 0.0
                flux = self.face_t * lt[upwind] * (p[self.face_a] - p[self.face_b])
                return p, flux, q
            active &= q >= -_RATE_TOL
        raise SolverError("producer active-set iteration did not settle")

    def _advance_saturation(self, sw, flux, q_prod, inj_rv, dt):
        """Explicit donor-cell transport with substeps; returns
        (sw, produced_water_vol, produced_gas_vol, injected_gas_rv)."""
        n = self.grid.n_cells
        donor = np.where(flux >= 0.0, self.face_a, self.face_b)
        absF = np.abs(flux)
        out_vol = np.bincount(donor, weights=absF, minlength=n)
        out_vol[self.prod_cells] += q_prod
        if np.max(out_vol, initial=0.0) < _RATE_TOL:
            # stationary field (roundoff-level fluxes): saturations untouched
            nprod = len(self.producers)
            return sw.copy(), np.zeros(nprod), np.zeros(nprod), np.sum(inj_rv) * dt
        busy = out_vol > 0
        dt_stable = self.cfl * np.min(self.pv[busy] / out_vol[busy]) / self.max_fprime
        n_sub = max(1, int(np.ceil(dt / dt_stable)))
        if n_sub > self.max_substeps:
            raise StabilityError(f"transport needs {n_sub} substeps (cap {self.max_substeps})")
        dts = dt / n_sub
        sw = sw.copy()
        rp, mu_w, mu_g = self.relperm, self.fluid.mu_water, self.fluid.mu_gas
        prod_w = np.zeros(len(self.producers))
        for _ in range(n_sub):
            krw, krg = relperm_eval(sw, rp)
            lw = krw / mu_w
            fw = lw / (lw + krg / mu_g)
            wf = fw[donor] * flux
            net_w = (np.bincount(self.face_b, weights=wf, minlength=n)
                     - np.bincount(self.face_a, weights=wf, minlength=n))
            pw = fw[self.prod_cells] * q_prod
            net_w[self.prod_cells] -= pw
            sw += (dts / self.pv) * net_w
            # cancelling fluxes leave roundoff on fully-saturated cells
            np.clip(sw, 0.0, 1.0, out=sw)
            prod_w += pw * dts
        total_prod = q_prod * dt
        injected = np.sum(inj_rv) * dt
        return sw, prod_w, total_prod - prod_w, injected

    # -- public stepping ----------------------------------------------------

    def step(self, state: SimState, inj_rates_surface, prod_bhps, dt: float):
        """One IMPES step of ``dt`` days.  Injector rates are surface m3/day."""
        inj_rates_surface = np.asarray(inj_rates_surface, dtype=np.float64).reshape(-1)
        prod_bhps = np.asarray(prod_bhps, dtype=np.float64).reshape(-1)
        if inj_rates_surface.shape[0] != len(self.injectors):
            raise ConfigError(f"expected {len(self.injectors)} injector rates")
        if prod_bhps.shape[0] != len(self.producers):
            raise ConfigError(f"expected {len(self.producers)} producer BHPs")
        if np.any(inj_rates_surface < 0):
            raise ConfigError("injection rates must be non-negative")
        if dt <= 0:
            raise ConfigError("dt must be positive")
        inj_rv = inj_rates_surface / self.fluid.gas_expansion
        p, flux, q_prod = self._solve_pressure(state, inj_rv, prod_bhps)
        sw, vol_w, vol_g, inj_vol = self._advance_saturation(state.sw, flux, q_prod, inj_rv, dt)
        resp = FlowResponse(brine_rates=vol_w / dt, gas_rates=vol_g / dt,
                            co2_injection_rate=float(np.sum(inj_rates_surface)))
        return SimState(p, sw, state.time_days + dt), resp

    def run_episode(self, schedule) -> Trajectory:
        """Roll a whole control schedule.  ``schedule`` needs ``injector_rates``
        (H, n_inj), ``producer_bhps`` (H, n_prod) and ``dt_days``."""
        rates = np.asarray(schedule.injector_rates, dtype=np.float64)
        bhps = np.asarray(schedule.producer_bhps, dtype=np.float64)
        if rates.ndim != 2 or bhps.ndim != 2 or rates.shape[0] != bhps.shape[0]:
            raise ConfigError(f"bad schedule shapes {rates.shape}, {bhps.shape}")
        dt = float(schedule.dt_days)
        state = self.initial_state()
        states, responses = [state.copy()], []
        injected = np.zeros(rates.shape[0])
        for t in range(rates.shape[0]):
            state, resp = self.step(state, rates[t], bhps[t], dt)
            states.append(state.copy())
            responses.append(resp)
            injected[t] = np.sum(rates[t]) / self.fluid.gas_expansion * dt
        return Trajectory(states, responses, rates, bhps, dt, injected)


def mass_balance_report(traj: Trajectory, sim: Simulator) -> dict:
    """Per-phase volumetric closure of a trajectory, as relative residuals.

    storage change + produced - injected should vanish for both phases."""
    pv = sim.pv
    sw0, sw1 = traj.states[0].sw, traj.states[-1].sw
    d_water = float(np.sum(pv * (sw1 - sw0)))
    d_gas = -d_water
    dt = traj.dt_days
    prod_w = sum(float(np.sum(r.brine_rates)) * dt for r in traj.responses)
    prod_g = sum(float(np.sum(r.gas_rates)) * dt for r in traj.responses)
    inj_g = float(np.sum(traj.injected_gas_rv))
    scale = max(inj_g, prod_w + prod_g, abs(d_water), 1.0)
    res_w = abs(d_water + prod_w) / scale
    res_g = abs(d_gas + prod_g - inj_g) / scale
    return {"water": res_w, "gas": res_g, "max": max(res_w, res_g)}
