"""Evolution of the macroscopic state (rho, Phi) and the velocity fields it defines.

Two classes are supported. The quantum class (xi = hbar^2/8) is advanced as
the linear Schroedinger flow by Strang splitting. The hybrid class (xi = 0)
evolves Phi by the classical Hamilton-Jacobi equation and rho by the
continuity equation, both with RK4 in time.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import (
    RHO_FLOOR,
    Grid,
    ModelParams,
    PotentialSpec,
    WaveState,
    complex_gradient,
    extend_from_support,
    fd_gradient,
    gradient,
    support_mask,
)

MAX_PHASE_PER_STEP = 0.1
# hybrid continuity: |v| k_max dt stays inside the RK4 stability interval
HYBRID_CFL = 2.0
CAUSTIC_LIMIT = 0.5
# rho above this fraction of max(rho) counts as bulk support for the caustic detector
BULK_FLOOR = 1e-6


class WrongClassError(ValueError):
    pass


class CausticError(RuntimeError):
    """Hybrid characteristics are about to cross; the field solution stops being single-valued."""

    def __init__(self, time: float, position, rate: float, dt: float):
        self.time = time
        self.position = position
        self.rate = rate
        self.dt = dt
        super().__init__(
            f"caustic imminent at t={time:.6g}, x={position}: |dv/dx| dt = {rate * dt:.3g} > {CAUSTIC_LIMIT}"
        )

    def diagnostic(self) -> dict:
        return {"error": "caustic", "time": self.time, "position": list(np.atleast_1d(self.position)),
                "compression_rate": self.rate, "dt": self.dt}


# ---------------------------------------------------------------- quantum class


def max_stable_dt(grid: Grid, params: ModelParams, potential: PotentialSpec) -> float:
    """Largest dt whose potential phase advance per step stays below 0.1 rad."""
    V = potential.evaluate(grid, params)
    span = float(V.max() - V.min())
    return math.inf if span == 0 else MAX_PHASE_PER_STEP * params.hbar / span


@lru_cache(maxsize=32)
def _split_operators(grid: Grid, params: ModelParams, potential: PotentialSpec, dt: float):
    V = potential.evaluate(grid, params)
    span = float(V.max() - V.min())
    if span * abs(dt) / params.hbar > MAX_PHASE_PER_STEP * (1 + 1e-12):
        raise ValueError(
            f"dt={dt:g} exceeds the phase budget: max|dV| dt / hbar = {span * abs(dt) / params.hbar:.3g} > {MAX_PHASE_PER_STEP}"
        )
    half_v = np.exp(-0.5j * V * dt / params.hbar)
    masses = params.mass_per_coord(grid.dims)
    kinetic = sum(k**2 / (2 * m) for k, m in zip(grid.wavenumbers_full, masses))
    kin = np.exp(-1j * params.hbar * kinetic * dt)
    return half_v, kin


def step_quantum(state: WaveState, params: ModelParams, potential: PotentialSpec, dt: float,
                 steps: int = 1) -> WaveState:
    """Advance psi by ``steps`` Strang split steps (half potential, kinetic, half potential).

    A negative dt runs the exact inverse map, so forward-then-backward
    stepping returns the initial state to round-off.
    """
    if not params.is_quantum:
        raise WrongClassError("step_quantum needs a quantum-class model (xi = hbar^2/8 > 0)")
    if not state.stores_psi:
        state = WaveState(state.grid, hbar=state.hbar, time=state.time, psi=state.psi)
    half_v, kin = _split_operators(state.grid, params, potential, float(dt))
    psi = state.psi * half_v
    for i in range(steps):
        psi = np.fft.ifftn(kin * np.fft.fftn(psi))
        psi *= half_v if i == steps - 1 else half_v * half_v
    return WaveState(state.grid, hbar=state.hbar, time=state.time + steps * dt, psi=psi)


# ---------------------------------------------------------------- hybrid class


def _phase_velocity(phase, grid, masses):
    return fd_gradient(phase, grid) / masses.reshape((-1,) + (1,) * grid.dims)


def _divergence(flux: np.ndarray, grid: Grid) -> np.ndarray:
    # conservative: the k = 0 mode of each derivative is zero, so sum(d rho) == 0
    out = np.zeros(grid.shape)
    for d, k in enumerate(grid.wavenumbers):
        out += np.fft.ifftn(1j * k * np.fft.fftn(flux[d])).real
    return out


def _hybrid_rhs(rho, phase, V, grid, masses):
    mshape = masses.reshape((-1,) + (1,) * grid.dims)
    dphi = fd_gradient(phase, grid)
    v = dphi / mshape
    drho = -_divergence(rho * v, grid)
    dphase = -0.5 * np.sum(dphi * v, axis=0) - V
    return drho, dphase


def caustic_rate(state: WaveState, params: ModelParams) -> tuple[float, tuple]:
    """Largest compression rate max_a |d v_a / d x_a| on the bulk support and where it occurs."""
    grid = state.grid
    masses = params.mass_per_coord(grid.dims)
    v = _phase_velocity(state.phase, grid, masses)
    rate = np.zeros(grid.shape)
    for d in range(grid.dims):
        rate = np.maximum(rate, np.abs(fd_gradient(v[d], grid)[d]))
    bulk = state.rho >= BULK_FLOOR * state.rho.max()
    rate = np.where(bulk, rate, 0.0)
    idx = np.unravel_index(np.argmax(rate), rate.shape)
    return float(rate[idx]), tuple(float(ax[i]) for ax, i in zip(grid.axes, idx))


def step_hybrid(state: WaveState, params: ModelParams, potential: PotentialSpec, dt: float) -> WaveState:
    """One RK4 step of the hybrid (xi = 0) flow for (rho, Phi).

    Phi follows the classical Hamilton-Jacobi equation with a non-periodic
    finite-difference gradient; rho follows the continuity equation in
    conservative flux-divergence form. The step is subdivided internally when
    the advection CFL number would leave the RK4 stability interval. Raises
    CausticError when characteristics are about to cross on the bulk support.
    """
    if params.xi != 0:
        raise WrongClassError("step_hybrid needs a hybrid-class model (xi = 0)")
    grid = state.grid
    rate, where = caustic_rate(state, params)
    if rate * abs(dt) > CAUSTIC_LIMIT:
        raise CausticError(state.time, where, rate, dt)
    masses = params.mass_per_coord(grid.dims)
    V = potential.evaluate(grid, params)
    rho = np.array(state.rho)
    phase = np.array(state.phase)

    v = _phase_velocity(phase, grid, masses)
    kmax = max(math.pi / h for h in grid.spacing)
    cfl = float(np.max(np.abs(v))) * kmax * abs(dt) * grid.dims
    n_sub = max(1, math.ceil(cfl / HYBRID_CFL))
    h = dt / n_sub
    for _ in range(n_sub):
        k1r, k1p = _hybrid_rhs(rho, phase, V, grid, masses)
        k2r, k2p = _hybrid_rhs(rho + 0.5 * h * k1r, phase + 0.5 * h * k1p, V, grid, masses)
        k3r, k3p = _hybrid_rhs(rho + 0.5 * h * k2r, phase + 0.5 * h * k2p, V, grid, masses)
        k4r, k4p = _hybrid_rhs(rho + h * k3r, phase + h * k3p, V, grid, masses)
        rho = rho + h / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
        phase = phase + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
    # round-off undershoots in the far tails; rho must stay non-negative
    rho = np.maximum(rho, 0.0)
    return WaveState(grid, hbar=state.hbar, time=state.time + dt, rho=rho, phase=phase)


def step(state: WaveState, params: ModelParams, potential: PotentialSpec, dt: float) -> WaveState:
    """Advance one step with the stepper matching the model class."""
    if params.is_quantum:
        return step_quantum(state, params, potential, dt)
    return step_hybrid(state, params, potential, dt)


# ---------------------------------------------------------------- derived fields


def flux_and_density_gradient(state: WaveState):
    """Probability current rho dPhi (action units) and d rho, shape (D, *grid) each.

    Psi-stored states use hbar Im(psi* dpsi) and 2 Re(psi* dpsi), which avoid
    dividing by rho; (rho, Phi) states use the finite-difference phase
    gradient and the spectral gradient of rho.
    """
    grid = state.grid
    if state.stores_psi:
        psi = state.psi
        w = np.conj(psi)[None] * complex_gradient(psi, grid)
        return state.hbar * w.imag, 2 * w.real
    return state.rho[None] * fd_gradient(state.phase, grid), gradient(state.rho, grid)


def fisher_density(state: WaveState) -> np.ndarray:
    """rho d_c ln rho d_d ln rho, shape (D, D, *grid)."""
    grid = state.grid
    if state.stores_psi:
        _, g = flux_and_density_gradient(state)
        rho = state.rho
        safe = np.where(rho > RHO_FLOOR * rho.max(), rho, np.inf)
        return g[:, None] * g[None, :] / safe
    ds = gradient(np.sqrt(state.rho), grid)
    return 4 * ds[:, None] * ds[None, :]


def phase_gradient(state: WaveState) -> np.ndarray:
    """dPhi on the support, extended by nearest-support values outside it."""
    grid = state.grid
    rho = state.rho
    sup = support_mask(rho)
    if state.stores_psi:
        j, _ = flux_and_density_gradient(state)
        p = np.where(sup, j / np.where(sup, rho, 1.0), 0.0)
    else:
        p = fd_gradient(state.phase, grid)
    return np.stack([extend_from_support(pd, sup) for pd in p])


def grad_log_rho(state: WaveState) -> np.ndarray:
    """d ln rho on the support and zero outside it."""
    rho = state.rho
    sup = support_mask(rho)
    _, g = flux_and_density_gradient(state)
    return np.where(sup, g / np.where(sup, rho, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class VelocityFields:
    """Current, osmotic and drift velocities at one instant, each (D, *grid).

    ``grad_log_rho`` is carried along because walkers assemble their drift as
    b = v + (epsilon / 2m) d ln rho at their own positions.
    """

    grid: Grid
    time: float
    epsilon: float
    current: np.ndarray
    osmotic: np.ndarray
    drift: np.ndarray
    grad_log_rho: np.ndarray
    support: np.ndarray


def velocity_fields(state: WaveState, params: ModelParams) -> VelocityFields:
    """v = m^-1 dPhi, u = -(epsilon / 2m) d ln rho, b = v - u.

    Outside the resolvable support the osmotic part is zero, so b = v there.
    """
    grid = state.grid
    mshape = params.mass_per_coord(grid.dims).reshape((-1,) + (1,) * grid.dims)
    v = phase_gradient(state) / mshape
    glr = grad_log_rho(state)
    u = -(params.epsilon / (2 * mshape)) * glr
    return VelocityFields(grid=grid, time=state.time, epsilon=params.epsilon, current=v,
                          osmotic=u, drift=v - u, grad_log_rho=glr, support=support_mask(state.rho))


def hamiltonian_terms(state: WaveState, params: ModelParams, potential: PotentialSpec) -> dict:
    """Kinetic, potential and Fisher (quantum-potential) parts of the ensemble Hamiltonian."""
    grid = state.grid
    masses = params.mass_per_coord(grid.dims)
    rho = state.rho
    mshape = masses.reshape((-1,) + (1,) * grid.dims)
    if state.stores_psi:
        j, _ = flux_and_density_gradient(state)
        safe = np.where(rho > RHO_FLOOR * rho.max(), rho, np.inf)
        kin_density = 0.5 * np.sum(j**2 / mshape, axis=0) / safe
    else:
        dphi = fd_gradient(state.phase, grid)
        kin_density = 0.5 * rho * np.sum(dphi**2 / mshape, axis=0)
    fisher = fisher_density(state)
    quantum_density = params.xi * sum(fisher[a, a] / masses[a] for a in range(grid.dims))
    V = potential.evaluate(grid, params)
    return {
        "kinetic": grid.integrate(kin_density),
        "potential": grid.integrate(rho * V),
        "quantum": grid.integrate(quantum_density),
    }


def ensemble_hamiltonian(state: WaveState, params: ModelParams, potential: PotentialSpec) -> float:
    terms = hamiltonian_terms(state, params, potential)
    return terms["kinetic"] + terms["potential"] + terms["quantum"]


# ---------------------------------------------------------------- export


def write_field_csv(path, state: WaveState, params: ModelParams) -> None:
    """Snapshot with columns x (one per coordinate), rho, phi, v, u (one per coordinate)."""
    grid = state.grid
    vf = velocity_fields(state, params)
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    cols = {f"x{d}" if grid.dims > 1 else "x": m.ravel() for d, m in enumerate(mesh)}
    cols["rho"] = state.rho.ravel()
    cols["phi"] = state.phase.ravel()
    for d in range(grid.dims):
        suffix = str(d) if grid.dims > 1 else ""
        cols["v" + suffix] = vf.current[d].ravel()
        cols["u" + suffix] = vf.osmotic[d].ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(zip(*[c.tolist() for c in cols.values()]))


def read_field_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
