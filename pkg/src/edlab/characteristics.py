"""Method-of-characteristics reference for the classical Hamilton-Jacobi flow.

Each grid node launches a characteristic (x, p) with p = dPhi_0/dx and
carries its initial probability mass rho_0 dx. The Jacobian dx/dx0 is
integrated alongside, and its first zero on the bulk support marks the
caustic. This is independent of the Eulerian hybrid solver in ``fields``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ModelParams, PotentialSpec, WaveState, fd_gradient


@dataclass(frozen=True)
class CharacteristicsSolution:
    times: np.ndarray
    x0: np.ndarray
    positions: np.ndarray  # (T, K)
    weights: np.ndarray  # (K,)
    caustic_time: float

    def mean(self) -> np.ndarray:
        return self.positions @ self.weights

    def variance(self) -> np.ndarray:
        m = self.mean()
        return (self.positions**2) @ self.weights - m**2

    def at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, col) for col in self.positions.T])


def _curvature(potential, x, params, h=1e-5):
    return (potential.derivative(x + h, params) - potential.derivative(x - h, params)) / (2 * h)


def integrate_characteristics(state: WaveState, params: ModelParams, potential: PotentialSpec,
                              t_end: float, dt: float = 1e-4, bulk: float = 1e-6) -> CharacteristicsSolution:
    """Launch characteristics from every bulk node of a 1-D (rho, Phi) state and integrate to ``t_end``.

    The returned caustic time is the first time any bulk characteristic's
    Jacobian reaches zero (``inf`` if none does before ``t_end``).
    """
    grid = state.grid
    if grid.dims != 1:
        raise ValueError("characteristics reference is 1-D only")
    m = params.masses[0]
    rho = state.rho
    keep = rho >= bulk * rho.max()
    x = grid.axes[0][keep].astype(float)
    p = fd_gradient(state.phase, grid)[0][keep]
    dp = fd_gradient(fd_gradient(state.phase, grid)[0], grid)[0][keep]
    w = rho[keep] / rho[keep].sum()
    J = np.ones_like(x)
    K = dp.copy()

    def rhs(x, p, J, K):
        return p / m, -potential.derivative(x, params), K / m, -_curvature(potential, x, params) * J

    n = int(np.ceil(t_end / dt))
    h = t_end / n
    times = [0.0]
    traj = [x.copy()]
    caustic = np.inf
    for i in range(n):
        y = (x, p, J, K)
        k1 = rhs(*y)
        k2 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k1)))
        k3 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k2)))
        k4 = rhs(*(a + h * b for a, b in zip(y, k3)))
        x, p, J, K = (a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        if not np.isfinite(caustic) and np.any(J <= 0):
            # linear interpolation of the first sign change of J
            j_prev = y[2]
            idx = np.where(J <= 0)[0]
            frac = np.min(j_prev[idx] / (j_prev[idx] - J[idx]))
            caustic = (i + frac) * h
        times.append((i + 1) * h)
        traj.append(x.copy())
    return CharacteristicsSolution(times=np.array(times), x0=traj[0], positions=np.array(traj),
                                   weights=w, caustic_time=caustic)


def caustic_time(state: WaveState, params: ModelParams, potential: PotentialSpec,
                 horizon: float = 20.0, dt: float = 1e-3) -> float:
    return integrate_characteristics(state, params, potential, horizon, dt).caustic_time
