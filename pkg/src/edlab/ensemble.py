"""Walker ensembles riding the (rho, Phi) fields.

For epsilon > 0 each walker moves by dx = b dt + sqrt(epsilon dt / m) * N(0, 1)
with drift b = v + (epsilon / 2m) d ln rho. For epsilon = 0 the walkers follow
the current velocity v exactly (RK4 with fields interpolated in time), which
is the Bohmian member of the family.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng
from .core import Grid, ModelParams, PotentialSpec, WaveState
from .fields import CausticError, VelocityFields, ensemble_hamiltonian, step, velocity_fields

MAX_SUBSTEPS = 16


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """Walker positions (M, D) at ``time``.

    ``step`` is the stream counter shared by all walkers: walker i draws its
    step-s noise from counter positions i*D .. i*D + D - 1 of stream
    (seed, s), so trajectories do not depend on evaluation order.
    """

    positions: np.ndarray
    time: float
    seed: int
    step: int = 0
    frozen: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (M, D) with M >= 1, got {pos.shape}")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        if self.frozen is None:
            object.__setattr__(self, "frozen", np.zeros(pos.shape[0], dtype=bool))

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dims(self) -> int:
        return self.positions.shape[1]


# ---------------------------------------------------------------- CDF model of a grid density


def _marginal(rho: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    other = tuple(d for d in range(grid.dims) if d != axis)
    vol = float(np.prod([grid.spacing[d] for d in other])) if other else 1.0
    return np.clip(rho, 0, None).sum(axis=other) * vol if other else np.clip(rho, 0, None)


def _cell_cumulative(nodes: np.ndarray, h: float) -> np.ndarray:
    """Cumulative mass at cell edges for the periodic piecewise-linear interpolant of ``nodes`` (..., N)."""
    nxt = np.roll(nodes, -1, axis=-1)
    cells = 0.5 * h * (nodes + nxt)
    zero = np.zeros(nodes.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(cells, axis=-1)], axis=-1)


def _invert_cell(r, a0, a1, h):
    """Offset s in [0, h] where the linear density a0 + (a1 - a0) s/h has accumulated mass r."""
    disc = np.sqrt(np.maximum(a0**2 + 2 * (a1 - a0) * r / h, 0.0))
    den = a0 + disc
    s = np.where(den > 0, 2 * r / np.where(den > 0, den, 1.0), 0.0)
    return np.clip(s, 0.0, h)


def marginal_cdf(rho: np.ndarray, grid: Grid, axis: int = 0):
    """Vectorized CDF of the marginal along ``axis`` of the grid-interpolated density."""
    nodes = _marginal(rho, grid, axis)
    h = grid.spacing[axis]
    x0 = grid.origin[axis]
    L = grid.extent[axis]
    C = _cell_cumulative(nodes, h)
    total = C[-1]
    nxt = np.roll(nodes, -1)
    n = nodes.size

    def cdf(x):
        s_all = np.mod(np.asarray(x, dtype=float) - x0, L)
        i = np.minimum((s_all // h).astype(int), n - 1)
        s = s_all - i * h
        a0, a1 = nodes[i], nxt[i]
        return (C[i] + a0 * s + (a1 - a0) * s**2 / (2 * h)) / total

    return cdf


def ks_distance(samples: np.ndarray, rho: np.ndarray, grid: Grid, axis: int = 0) -> float:
    """Kolmogorov-Smirnov distance between walker coordinates and the grid marginal of rho."""
    x = np.sort(np.asarray(samples, dtype=float))
    F = marginal_cdf(rho, grid, axis)(x)
    M = x.size
    i = np.arange(1, M + 1)
    return float(max(np.max(i / M - F), np.max(F - (i - 1) / M)))


def ks_critical(M: int, coefficient: float = 1.63) -> float:
    """Asymptotic 1% critical value of the one-sample KS statistic."""
    return coefficient / math.sqrt(M)


def sample_initial(rho: np.ndarray, grid: Grid, M: int, seed: int, chunk: int = 8192) -> EnsembleState:
    """M walkers i.i.d. from the grid-interpolated density (inverse CDF, conditional in 2-D)."""
    if M < 1:
        raise ValueError(f"need at least one walker, got M={M}")
    rho = np.clip(np.asarray(rho, dtype=float), 0, None)
    D = grid.dims
    u = rng.uniforms(seed, rng.INIT, 0, 0, M * D).reshape(M, D)
    pos = np.empty((M, D))
    h0 = grid.spacing[0]
    marg = _marginal(rho, grid, 0)
    i0, s0 = _sample_1d(marg, h0, u[:, 0])
    pos[:, 0] = grid.axes[0][i0] + s0
    if D == 2:
        h1 = grid.spacing[1]
        Crow = _cell_cumulative(rho, h1)
        n0 = rho.shape[0]
        for lo in range(0, M, chunk):
            sl = slice(lo, min(lo + chunk, M))
            i = i0[sl]
            ip = (i + 1) % n0
            w = (s0[sl] / h0)[:, None]
            C = (1 - w) * Crow[i] + w * Crow[ip]
            target = u[sl, 1] * C[:, -1]
            j = np.clip((C[:, 1:-1] <= target[:, None]).sum(axis=1), 0, rho.shape[1] - 1)
            jp = (j + 1) % rho.shape[1]
            a0 = (1 - w[:, 0]) * rho[i, j] + w[:, 0] * rho[ip, j]
            a1 = (1 - w[:, 0]) * rho[i, jp] + w[:, 0] * rho[ip, jp]
            r = target - C[np.arange(len(j)), j]
            pos[sl, 1] = grid.axes[1][j] + _invert_cell(r, a0, a1, h1)
    elif D != 1:
        raise ValueError("initial sampling supports 1 or 2 dimensions")
    return EnsembleState(positions=grid.wrap(pos), time=0.0, seed=int(seed))


def _sample_1d(nodes, h, u):
    C = _cell_cumulative(nodes, h)
    target = u * C[-1]
    i = np.clip(np.searchsorted(C, target, side="right") - 1, 0, nodes.size - 1)
    r = target - C[i]
    return i, _invert_cell(r, nodes[i], np.roll(nodes, -1)[i], h)


# ---------------------------------------------------------------- interpolation


class FieldInterpolator:
    """Cubic-spline current velocity and linear d ln rho at arbitrary positions (periodic)."""

    def __init__(self, fields: VelocityFields):
        self.fields = fields
        self.grid = fields.grid
        self.time = fields.time
        self.v_coef = np.stack([ndimage.spline_filter(c, order=3, mode="grid-wrap") for c in fields.current])

    def _coords(self, positions):
        return self.grid.fractional_index(positions)

    def velocity(self, positions, coef=None):
        coef = self.v_coef if coef is None else coef
        q = self._coords(positions)
        return np.stack([ndimage.map_coordinates(c, q, order=3, mode="grid-wrap", prefilter=False)
                         for c in coef], axis=-1)

    def grad_log_rho(self, positions):
        q = self._coords(positions)
        return np.stack([ndimage.map_coordinates(g, q, order=1, mode="grid-wrap")
                         for g in self.fields.grad_log_rho], axis=-1)

    def supported(self, positions, support=None):
        support = self.fields.support if support is None else support
        q = self._coords(positions)
        return ndimage.map_coordinates(support.astype(float), q, order=1, mode="grid-wrap") > 0.5


class SnapshotPair:
    """Current velocity linearly interpolated in time between two field snapshots."""

    def __init__(self, start: VelocityFields, end: VelocityFields):
        if end.time <= start.time:
            raise ValueError("snapshots must be in increasing time order")
        self.a = FieldInterpolator(start)
        self.b = FieldInterpolator(end)
        self.t0, self.t1 = start.time, end.time

    def _w(self, t):
        return (t - self.t0) / (self.t1 - self.t0)

    def velocity(self, positions, t):
        w = self._w(t)
        if w == 0:
            return self.a.velocity(positions)
        if w == 1:
            return self.b.velocity(positions)
        return self.a.velocity(positions, (1 - w) * self.a.v_coef + w * self.b.v_coef)

    def grad_log_rho(self, positions, t):
        w = self._w(t)
        if w == 0:
            return self.a.grad_log_rho(positions)
        if w == 1:
            return self.b.grad_log_rho(positions)
        return (1 - w) * self.a.grad_log_rho(positions) + w * self.b.grad_log_rho(positions)

    def supported(self, positions, t):
        src = self.a if self._w(t) < 0.5 else self.b
        return src.supported(positions)


# ---------------------------------------------------------------- steppers


SCHEMES = ("euler", "heun")


def step_walkers(ens: EnsembleState, fields: VelocityFields, params: ModelParams, dt: float,
                 substeps: int = 1, interpolator: FieldInterpolator | None = None, *,
                 scheme: str = "euler", end: VelocityFields | None = None) -> EnsembleState:
    """Drift-plus-fluctuation step dx = b dt + sqrt(epsilon dt / m) xi.

    ``euler`` holds the step-start fields over the whole step. ``heun`` is the
    additive-noise predictor-corrector: the drift is averaged between the
    current point and the predicted point, with fields interpolated linearly
    in time between ``fields`` and ``end``. Both schemes draw the same normals.
    """
    if params.epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not 1 <= substeps <= MAX_SUBSTEPS:
        raise ValueError(f"substeps must lie in [1, {MAX_SUBSTEPS}]")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if abs(ens.time - fields.time) > 1e-9 * max(1.0, abs(ens.time)):
        raise ValueError(f"fields at t={fields.time} but ensemble at t={ens.time}")
    grid = fields.grid
    M, D = ens.positions.shape
    m = params.mass_per_coord(D)
    eps = params.epsilon
    h = dt / substeps
    x = np.array(ens.positions)
    live = ~ens.frozen

    if scheme == "heun":
        if end is None:
            raise ValueError("the heun scheme needs the end-of-step fields")
        pair = SnapshotPair(fields, end)

        def drift(pos, t):
            b = pair.velocity(pos, t)
            return b + (eps / (2 * m)) * pair.grad_log_rho(pos, t) if eps > 0 else b
    else:
        interp = interpolator or FieldInterpolator(fields)

        def drift(pos, t):
            b = interp.velocity(pos)
            return b + (eps / (2 * m)) * interp.grad_log_rho(pos) if eps > 0 else b

    for j in range(substeps):
        t = ens.time + j * h
        noise = 0.0
        if eps > 0:
            xi = rng.normals(ens.seed, rng.NOISE, ens.step, j * M * D, M * D).reshape(M, D)
            noise = np.sqrt(eps * h / m) * xi
        b = drift(x, t)
        if scheme == "heun":
            t_next = ens.time + dt if j == substeps - 1 else t + h
            b = 0.5 * (b + drift(grid.wrap(x + b * h + noise), t_next))
        x = np.where(live[:, None], x + b * h + noise, x)
        x = grid.wrap(x)
    return replace(ens, positions=x, time=ens.time + dt, step=ens.step + 1)


def step_bohmian(positions: np.ndarray, provider: SnapshotPair, t: float, dt: float,
                 frozen: np.ndarray | None = None, grid: Grid | None = None):
    """RK4 step of dx/dt = v(x, t). Returns (new positions, frozen mask).

    Walkers whose path leaves the resolvable support (rho below the floor) are
    flagged and left where they were at the start of the step.
    """
    x = np.asarray(positions, dtype=float)
    frozen = np.zeros(len(x), dtype=bool) if frozen is None else np.array(frozen)
    grid = grid or provider.a.grid
    k1 = provider.velocity(x, t)
    k2 = provider.velocity(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = provider.velocity(x + 0.5 * dt * k2, t + 0.5 * dt)
    x_new = x + dt / 6 * (k1 + 2 * k2 + 2 * k3) + dt / 6 * provider.velocity(x + dt * k3, t + dt)
    x_new = grid.wrap(x_new)
    exited = ~provider.supported(x_new, t + dt)
    frozen = frozen | exited
    return np.where(frozen[:, None], x, x_new), frozen


# ---------------------------------------------------------------- coupled runs


@dataclass(eq=False)
class TrajectoryRecord:
    times: np.ndarray
    positions: np.ndarray  # (R, M, D)
    epsilon: float
    scenario: str
    seed: int
    cadence: float
    fine_times: np.ndarray | None = None
    fine_positions: np.ndarray | None = None  # (T, K, D) unwrapped, every step

    def write_csv(self, path) -> None:
        R, M, D = self.positions.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "walker"] + [f"x{d}" for d in range(D)])
            for r in range(R):
                t = repr(float(self.times[r]))
                for i in range(M):
                    w.writerow([t, i] + [repr(float(v)) for v in self.positions[r, i]])

    def write_binary(self, path) -> None:
        write_trajectory_binary(path, self.times, self.positions, self.cadence)


_MAGIC = b"EDTRAJ01"
_HEADER = struct.Struct("<8sQQdQ")


def write_trajectory_binary(path, times, positions, cadence) -> None:
    """Little-endian layout: magic, M, D, cadence, R; then per record the time and M*D positions."""
    positions = np.asarray(positions, dtype="<f8")
    R, M, D = positions.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, M, D, float(cadence), R))
        for r in range(R):
            fh.write(np.asarray([times[r]], dtype="<f8").tobytes())
            fh.write(positions[r].tobytes())


def read_trajectory_binary(path):
    data = Path(path).read_bytes()
    magic, M, D, cadence, R = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not an edlab trajectory file")
    off = _HEADER.size
    times = np.empty(R)
    pos = np.empty((R, M, D))
    for r in range(R):
        times[r] = np.frombuffer(data, "<f8", 1, off)[0]
        off += 8
        pos[r] = np.frombuffer(data, "<f8", M * D, off).reshape(M, D)
        off += 8 * M * D
    return times, pos, cadence


@dataclass(eq=False)
class CoupledRun:
    record: TrajectoryRecord
    snapshots: list[WaveState]
    norms: list[float]
    energies: list[float]
    halted: dict | None = None
    ensemble: EnsembleState | None = None
    extra: dict = field(default_factory=dict)


def run_coupled(state: WaveState, params: ModelParams, potential: PotentialSpec, T: float, M: int,
                record_every: int, seed: int, *, scenario: str = "custom", substeps: int = 1,
                track: int = 0, initial: EnsembleState | None = None, scheme: str = "euler") -> CoupledRun:
    """Interleaved evolution: fields advance one dt, then walkers advance one dt.

    Stochastic walkers use the fields at the start of the step (``scheme="euler"``)
    or both end snapshots (``scheme="heun"``); epsilon = 0
    walkers integrate v with RK4 between the start and end snapshots.
    Records walkers and field snapshots every ``record_every`` steps, plus the
    first ``track`` walkers (unwrapped) at every step.
    """
    dt = params.dt
    n_steps = round(T / dt)
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    ens = initial if initial is not None else sample_initial(state.rho, state.grid, M, seed)
    grid = state.grid
    times, recs, snaps, norms, energies = [], [], [], [], []
    fine_t, fine_x = [], []

    def record(s, e):
        times.append(s.time)
        recs.append(np.array(e.positions))
        snaps.append(s)
        norms.append(s.norm())
        energies.append(ensemble_hamiltonian(s, params, potential))

    record(state, ens)
    if track:
        fine_t.append(state.time)
        fine_x.append(np.array(ens.positions[:track]))
    fields_now = velocity_fields(state, params)
    halted = None
    for n in range(1, n_steps + 1):
        try:
            nxt = step(state, params, potential, dt)
        except CausticError as exc:
            halted = exc.diagnostic()
            break
        fields_next = velocity_fields(nxt, params)
        if params.epsilon == 0:
            pos, frozen = step_bohmian(ens.positions, SnapshotPair(fields_now, fields_next), ens.time, dt,
                                       ens.frozen, grid)
            ens = replace(ens, positions=pos, frozen=frozen, time=ens.time + dt, step=ens.step + 1)
        else:
            ens = step_walkers(ens, fields_now, params, dt, substeps, scheme=scheme, end=fields_next)
        # field and walker clocks advance by the same float additions
        ens = replace(ens, time=nxt.time)
        if track:
            prev = fine_x[-1]
            disp = ens.positions[:track] - prev
            L = np.asarray(grid.extent)
            disp -= L * np.round(disp / L)
            fine_t.append(nxt.time)
            fine_x.append(prev + disp)
        state, fields_now = nxt, fields_next
        if n % record_every == 0 or n == n_steps:
            record(state, ens)
    rec = TrajectoryRecord(
        times=np.array(times), positions=np.array(recs), epsilon=params.epsilon, scenario=scenario,
        seed=int(seed), cadence=record_every * dt,
        fine_times=np.array(fine_t) if track else None,
        fine_positions=np.array(fine_x) if track else None,
    )
    return CoupledRun(record=rec, snapshots=snaps, norms=norms, energies=energies, halted=halted, ensemble=ens)


def quadratic_variation(path: np.ndarray, start: int, length: int) -> np.ndarray:
    """Sum of squared increments over ``length`` steps from ``start``, per walker and coordinate."""
    seg = path[start:start + length + 1]
    return np.sum(np.diff(seg, axis=0) ** 2, axis=0)
