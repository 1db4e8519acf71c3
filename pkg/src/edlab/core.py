"""Domain types, periodic grids, scenarios and spectral primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import ndimage

# log rho and the phase of psi are evaluated with rho clamped here (relative to max rho)
RHO_FLOOR = 1e-300
# velocity-type fields are only trusted where rho exceeds this fraction of max rho
SUPPORT_FLOOR = 1e-14
MIN_POINTS = 8


def _as_tuple(value, n, cast=float):
    if np.ndim(value) == 0:
        return (cast(value),) * n
    out = tuple(cast(v) for v in value)
    if len(out) != n:
        raise ValueError(f"expected {n} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class ModelParams:
    """Physical constants and knobs of an entropic-dynamics model.

    ``xi`` is the quantum-potential coefficient. A positive value selects the
    quantum class and must equal ``hbar**2 / 8``; zero selects the hybrid
    class, where ``hbar`` is only a unit of action used to build psi.
    ``epsilon`` is the microscopic diffusion scale eta_tilde / alpha'.
    """

    masses: tuple[float, ...] = (1.0,)
    hbar: float = 1.0
    xi: float = 0.125
    epsilon: float = 1.0
    eta_tilde: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        object.__setattr__(self, "masses", masses)
        if not masses or any(not m > 0 for m in masses):
            raise ValueError(f"masses must be positive, got {masses}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.xi >= 0:
            raise ValueError(f"xi must be non-negative, got {self.xi}")
        if not self.eta_tilde > 0:
            raise ValueError(f"eta_tilde must be positive, got {self.eta_tilde}")
        if self.xi > 0 and not math.isclose(self.xi, self.hbar**2 / 8, rel_tol=1e-14):
            raise ValueError(
                f"quantum class requires xi = hbar^2/8 = {self.hbar**2 / 8!r}, got {self.xi!r}"
            )

    @classmethod
    def quantum(cls, hbar=1.0, **kwargs) -> "ModelParams":
        return cls(hbar=hbar, xi=hbar**2 / 8, **kwargs)

    @classmethod
    def hybrid(cls, hbar=1.0, **kwargs) -> "ModelParams":
        return cls(hbar=hbar, xi=0.0, **kwargs)

    @property
    def is_quantum(self) -> bool:
        return self.xi > 0

    @property
    def alpha_prime(self) -> float:
        """alpha' implied by eta_tilde and epsilon (inf in the Bohmian limit)."""
        return math.inf if self.epsilon == 0 else self.eta_tilde / self.epsilon

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return replace(self, epsilon=float(epsilon))

    def mass_per_coord(self, dims: int) -> np.ndarray:
        """Diagonal of the mass tensor m_AB for ``dims`` configuration coordinates.

        Masses are listed per particle; coordinates are particle-major, so with
        two masses and four coordinates the result is (m1, m1, m2, m2).
        """
        n = len(self.masses)
        if dims % n:
            raise ValueError(f"{n} masses do not divide {dims} coordinates")
        return np.repeat(np.asarray(self.masses), dims // n)


@dataclass(frozen=True, eq=False)
class Grid:
    """Periodic lattice over configuration space, centred on the origin."""

    points: tuple[int, ...]
    extent: tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.extent):
            raise ValueError("points and extent must have the same length")
        if any(n < MIN_POINTS for n in self.points):
            raise ValueError(f"need at least {MIN_POINTS} points per dimension, got {self.points}")
        if any(not L > 0 for L in self.extent):
            raise ValueError(f"extent must be positive, got {self.extent}")

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.points, self.extent) == (other.points, other.extent)

    def __hash__(self):
        return hash((self.points, self.extent))

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extent, self.points))

    @property
    def origin(self) -> tuple[float, ...]:
        return tuple(-L / 2 for L in self.extent)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(_frozen(x0 + h * np.arange(n)) for x0, h, n in zip(self.origin, self.spacing, self.points))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for d, x in enumerate(self.axes):
            shape = [1] * self.dims
            shape[d] = -1
            out.append(x.reshape(shape))
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Broadcastable angular wavenumbers with the Nyquist mode zeroed.

        Used for odd derivatives, where the Nyquist mode has no consistent sign.
        """
        out = []
        for d, (n, h) in enumerate(zip(self.points, self.spacing)):
            k = 2 * np.pi * np.fft.fftfreq(n, d=h)
            if n % 2 == 0:
                k[n // 2] = 0.0
            shape = [1] * self.dims
            shape[d] = -1
            out.append(_frozen(k.reshape(shape)))
        return tuple(out)

    @cached_property
    def wavenumbers_full(self) -> tuple[np.ndarray, ...]:
        out = []
        for d, (n, h) in enumerate(zip(self.points, self.spacing)):
            shape = [1] * self.dims
            shape[d] = -1
            out.append(_frozen((2 * np.pi * np.fft.fftfreq(n, d=h)).reshape(shape)))
        return tuple(out)

    def integrate(self, values) -> float:
        """Periodic rectangle-rule quadrature (spectrally accurate for smooth periodic data)."""
        return float(np.sum(values) * self.cell_volume)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.origin)
        L = np.asarray(self.extent)
        return lo + np.mod(positions - lo, L)

    def fractional_index(self, positions: np.ndarray) -> np.ndarray:
        """(D, M) array of fractional grid indices for (M, D) positions."""
        lo = np.asarray(self.origin)
        h = np.asarray(self.spacing)
        return ((positions - lo) / h).T


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def build_grid(dims: int, points, extent) -> Grid:
    """Periodic grid with ``points`` nodes over ``extent`` per dimension."""
    if dims not in (1, 2):
        raise ValueError(f"the field engine supports 1 or 2 dimensions, got {dims}")
    return Grid(points=_as_tuple(points, dims, int), extent=_as_tuple(extent, dims, float))


# ---------------------------------------------------------------- derivatives


def spectral_derivative(values: np.ndarray, grid: Grid, axis: int = 0) -> np.ndarray:
    """Fourier-collocation first derivative along ``axis`` (complex in, complex out)."""
    k = grid.wavenumbers[axis]
    return np.fft.ifftn(1j * k * np.fft.fftn(values))


def gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient of a real periodic field, shape (D, *grid.shape)."""
    spectrum = np.fft.fftn(values)
    return np.stack([np.fft.ifftn(1j * k * spectrum).real for k in grid.wavenumbers])


def complex_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    spectrum = np.fft.fftn(values)
    return np.stack([np.fft.ifftn(1j * k * spectrum) for k in grid.wavenumbers])


def fd_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Non-periodic gradient: fourth-order central inside, second-order one-sided at the ends.

    Used for fields that are smooth but not periodic on the box, such as the
    hybrid-class phase, which grows like -V t and carries linear boosts.
    """
    out = np.empty((grid.dims,) + values.shape)
    for d, h in enumerate(grid.spacing):
        g = np.gradient(values, h, axis=d, edge_order=2)
        f = np.moveaxis(values, d, 0)
        gi = np.moveaxis(g, d, 0)
        gi[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
        out[d] = g
    return out


# ---------------------------------------------------------------- floors and phase


def floor_mask(rho: np.ndarray, rel: float = RHO_FLOOR) -> np.ndarray:
    """True where rho is below ``rel`` times its maximum."""
    return rho < rel * np.max(rho)


def support_mask(rho: np.ndarray) -> np.ndarray:
    return ~floor_mask(rho, SUPPORT_FLOOR)


def clamped_log(rho: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(rho, RHO_FLOOR * np.max(rho)))


def extend_from_support(values: np.ndarray, supported: np.ndarray) -> np.ndarray:
    """Replace unsupported entries by the value at the nearest supported node."""
    if supported.all():
        return values
    _, idx = ndimage.distance_transform_edt(~supported, return_indices=True)
    return values[tuple(idx)]


def unwrap_phase(psi: np.ndarray, hbar: float) -> np.ndarray:
    """Phase Phi = hbar * arg(psi), unwrapped along grid lines from the density maximum."""
    angle = np.angle(psi)
    start = np.unravel_index(np.argmax(np.abs(psi)), psi.shape)
    if psi.ndim == 1:
        out = _unwrap_from(angle, start[0])
    elif psi.ndim == 2:
        i0, j0 = start
        row = _unwrap_from(angle[i0], j0)
        out = np.empty_like(angle)
        for j in range(angle.shape[1]):
            # shift the raw column so that np.unwrap keeps the anchor value
            col = angle[:, j] - angle[i0, j] + row[j]
            out[:, j] = _unwrap_from(col, i0)
    else:
        raise ValueError("phase unwrapping supports 1 or 2 dimensions")
    return hbar * out


def _unwrap_from(angle: np.ndarray, i0: int) -> np.ndarray:
    out = np.empty_like(angle)
    out[i0:] = np.unwrap(angle[i0:])
    out[: i0 + 1] = np.unwrap(angle[i0::-1])[::-1]
    return out


def winding_number(psi: np.ndarray) -> int:
    """Net 2*pi windings of arg(psi) around the periodic 1-D loop (diagnostic only)."""
    if psi.ndim != 1:
        raise ValueError("winding is defined along a 1-D loop")
    d = np.angle(np.roll(psi, -1) * np.conj(psi))
    return int(round(d.sum() / (2 * np.pi)))


# ---------------------------------------------------------------- states


class WaveState:
    """Macroscopic state (rho, Phi) on a grid.

    Quantum-class states store psi and derive rho and the unwrapped phase on
    demand. Hybrid-class states store (rho, Phi) and assemble psi with the
    independent hbar only when operator quantities need it. Arrays are
    read-only; steppers always return new states.
    """

    def __init__(self, grid: Grid, *, hbar: float, time: float = 0.0,
                 psi: np.ndarray | None = None, rho: np.ndarray | None = None,
                 phase: np.ndarray | None = None):
        if (psi is None) == (rho is None):
            raise ValueError("give either psi or (rho, phase)")
        self.grid = grid
        self.hbar = float(hbar)
        self.time = float(time)
        if psi is not None:
            psi = np.asarray(psi, dtype=complex)
            _check_shape(psi, grid)
            self._psi = _frozen(psi)
            self._rho = None
            self._phase = None
        else:
            rho = np.asarray(rho, dtype=float)
            phase = np.zeros_like(rho) if phase is None else np.asarray(phase, dtype=float)
            _check_shape(rho, grid)
            _check_shape(phase, grid)
            if np.any(rho < 0):
                raise ValueError("rho must be non-negative")
            self._psi = None
            self._rho = _frozen(rho)
            self._phase = _frozen(phase)

    @property
    def stores_psi(self) -> bool:
        return self._psi is not None

    @cached_property
    def psi(self) -> np.ndarray:
        if self._psi is not None:
            return self._psi
        return _frozen(np.sqrt(self._rho) * np.exp(1j * self._phase / self.hbar))

    @cached_property
    def rho(self) -> np.ndarray:
        if self._rho is not None:
            return self._rho
        return _frozen(np.abs(self._psi) ** 2)

    @cached_property
    def phase(self) -> np.ndarray:
        if self._phase is not None:
            return self._phase
        return _frozen(unwrap_phase(self._psi, self.hbar))

    def norm(self) -> float:
        return self.grid.integrate(self.rho)

    def replace(self, **kwargs) -> "WaveState":
        base = dict(grid=self.grid, hbar=self.hbar, time=self.time)
        if "psi" not in kwargs and "rho" not in kwargs:
            if self.stores_psi:
                base["psi"] = self._psi
            else:
                base["rho"], base["phase"] = self._rho, self._phase
        base.update(kwargs)
        return WaveState(**base)

    def __repr__(self):
        kind = "psi" if self.stores_psi else "rho/phase"
        return f"WaveState(grid={self.grid.points}, t={self.time:g}, storage={kind})"


def _check_shape(a, grid):
    if a.shape != grid.shape:
        raise ValueError(f"field shape {a.shape} does not match grid {grid.shape}")


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Static external potential V(x).

    kinds: ``free``; ``harmonic`` (omega per coordinate, V = m omega^2 x^2 / 2);
    ``barrier`` (height, width, center along the first coordinate);
    ``double-gaussian-slit`` (D = 2 wall at x0 = center with two Gaussian
    openings at x1 = +-separation/2); ``tabulated`` (values on the grid).
    """

    kind: str = "free"
    omega: float | tuple[float, ...] = 1.0
    height: float = 0.0
    width: float = 1.0
    center: float = 0.0
    separation: float = 2.0
    opening: float = 0.3
    values: np.ndarray | None = field(default=None, repr=False)

    KINDS = ("free", "harmonic", "barrier", "double-gaussian-slit", "tabulated")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "tabulated" and self.values is None:
            raise ValueError("tabulated potential needs values")

    def evaluate(self, grid: Grid, params: ModelParams | None = None) -> np.ndarray:
        if self.kind == "free":
            V = np.zeros(grid.shape)
        elif self.kind == "harmonic":
            masses = np.ones(grid.dims) if params is None else params.mass_per_coord(grid.dims)
            omegas = _as_tuple(self.omega, grid.dims)
            V = sum(0.5 * m * w**2 * x**2 for m, w, x in zip(masses, omegas, grid.coords))
            V = np.broadcast_to(V, grid.shape).copy()
        elif self.kind == "barrier":
            x = grid.coords[0]
            V = np.broadcast_to(np.where(np.abs(x - self.center) < self.width / 2, self.height, 0.0), grid.shape).copy()
        elif self.kind == "double-gaussian-slit":
            if grid.dims != 2:
                raise ValueError("double-gaussian-slit needs a 2-D grid")
            x0, x1 = grid.coords
            s = self.separation / 2
            holes = np.exp(-((x1 - s) ** 2) / (2 * self.opening**2)) + np.exp(-((x1 + s) ** 2) / (2 * self.opening**2))
            V = self.height * np.exp(-((x0 - self.center) ** 2) / (2 * self.width**2)) * (1 - holes)
        else:
            V = np.asarray(self.values, dtype=float)
            _check_shape(V, grid)
        if not np.all(np.isfinite(V)):
            raise ValueError("potential must be finite on the grid")
        return V

    def derivative(self, x: np.ndarray, params: ModelParams | None = None, axis: int = 0) -> np.ndarray:
        """Analytic dV/dx for harmonic and free kinds (used by the characteristics oracle)."""
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            m = 1.0 if params is None else params.masses[0]
            w = _as_tuple(self.omega, axis + 1)[axis]
            return m * w**2 * x
        raise NotImplementedError(f"no analytic derivative for {self.kind!r}")


# ---------------------------------------------------------------- scenarios

SCENARIOS = ("gaussian", "coherent", "two-gaussian-superposition", "two-particle-correlated-gaussian")


def init_scenario(name: str, grid: Grid, params: ModelParams, **kw) -> WaveState:
    """Normalized initial state for a named scenario.

    gaussian(x0=0, sigma0=1, k0=0): product Gaussian, rho = N(x0, sigma0^2), Phi = hbar k0 x.
    coherent(x0=1, omega=1): displaced harmonic ground state, sigma^2 = hbar / (2 m omega).
    two-gaussian-superposition(a=2, sigma0=0.5, k0=0): psi ~ g(x - a) + g(x + a).
    two-particle-correlated-gaussian(c=0.5, sigma0=1): D = 2 bivariate normal, Cov = c sigma0^2.

    Quantum-class params give psi storage; hybrid params give (rho, Phi) storage.
    """
    hbar = params.hbar
    X = grid.coords
    min_h = min(grid.spacing)
    if name == "gaussian":
        x0 = _as_tuple(kw.pop("x0", 0.0), grid.dims)
        sigma = _as_tuple(kw.pop("sigma0", 1.0), grid.dims)
        k0 = _as_tuple(kw.pop("k0", 0.0), grid.dims)
        _check_resolved(min(sigma), min_h)
        log_rho = sum(-((x - c) ** 2) / (2 * s**2) for x, c, s in zip(X, x0, sigma))
        phase = sum(hbar * k * x for k, x in zip(k0, X))
        rho = np.broadcast_to(np.exp(log_rho), grid.shape)
        phase = np.broadcast_to(phase, grid.shape)
        state = _from_rho_phase(grid, params, rho, phase)
    elif name == "coherent":
        x0 = _as_tuple(kw.pop("x0", 1.0), grid.dims)
        omega = _as_tuple(kw.pop("omega", 1.0), grid.dims)
        masses = params.mass_per_coord(grid.dims)
        sigma = [math.sqrt(hbar / (2 * m * w)) for m, w in zip(masses, omega)]
        _check_resolved(min(sigma), min_h)
        log_rho = sum(-((x - c) ** 2) / (2 * s**2) for x, c, s in zip(X, x0, sigma))
        rho = np.broadcast_to(np.exp(log_rho), grid.shape)
        state = _from_rho_phase(grid, params, rho, np.zeros(grid.shape))
    elif name == "two-gaussian-superposition":
        a = float(kw.pop("a", 2.0))
        sigma = float(kw.pop("sigma0", 0.5))
        k0 = float(kw.pop("k0", 0.0))
        _check_resolved(sigma, min_h)
        x = X[0]
        g = lambda c, k: np.exp(-((x - c) ** 2) / (4 * sigma**2) + 1j * k * x)  # noqa: E731
        psi = np.broadcast_to(g(a, -k0) + g(-a, k0), grid.shape)
        psi = psi / math.sqrt(grid.integrate(np.abs(psi) ** 2))
        if params.is_quantum:
            state = WaveState(grid, hbar=hbar, psi=psi)
        else:
            state = WaveState(grid, hbar=hbar, rho=np.abs(psi) ** 2, phase=unwrap_phase(psi, hbar))
    elif name == "two-particle-correlated-gaussian":
        if grid.dims != 2:
            raise ValueError("two-particle-correlated-gaussian needs a 2-D configuration space")
        c = float(kw.pop("c", 0.5))
        sigma = float(kw.pop("sigma0", 1.0))
        if not -1 < c < 1:
            raise ValueError(f"correlation must lie in (-1, 1), got {c}")
        _check_resolved(sigma * math.sqrt(1 - abs(c)), min_h)
        x1, x2 = X
        q = (x1**2 - 2 * c * x1 * x2 + x2**2) / (2 * sigma**2 * (1 - c**2))
        state = _from_rho_phase(grid, params, np.exp(-q), np.zeros(grid.shape))
    else:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    if kw:
        raise TypeError(f"unexpected parameters for {name!r}: {sorted(kw)}")
    return state


def _check_resolved(sigma, spacing):
    if sigma < 3 * spacing:
        raise ValueError(f"sigma0={sigma:g} is under-resolved (need >= 3 * spacing = {3 * spacing:g})")


def _from_rho_phase(grid, params, rho, phase):
    rho = np.array(rho, dtype=float)
    rho /= grid.integrate(rho)
    phase = np.array(phase, dtype=float)
    if params.is_quantum:
        return WaveState(grid, hbar=params.hbar, psi=np.sqrt(rho) * np.exp(1j * phase / params.hbar))
    return WaveState(grid, hbar=params.hbar, rho=rho, phase=phase)


def as_positions(x: Sequence[float] | np.ndarray, dims: int) -> np.ndarray:
    """Coerce to an (M, D) float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and dims == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[1] != dims:
        raise ValueError(f"positions must have shape (M, {dims}), got {a.shape}")
    return a
