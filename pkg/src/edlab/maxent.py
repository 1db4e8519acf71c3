"""Maximum-entropy short-step transition kernel.

The analytic kernel is the Gaussian obtained by completing the square in the
exponential-family solution. ``numeric_maxent`` solves the same problem on a
finite lattice of displacements by Newton iteration on the convex dual, and
serves as an independent check of the analytic form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ModelParams


class InfeasibleConstraints(ValueError):
    pass


class MaxEntConvergenceError(RuntimeError):
    pass


def _per_coord(alpha_n, dims: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha_n, dtype=float))
    if dims % a.size:
        raise ValueError(f"{a.size} particle multipliers do not divide {dims} coordinates")
    return np.repeat(a, dims // a.size)


@dataclass(frozen=True)
class TransitionKernel:
    mean_shift: np.ndarray
    covariance: np.ndarray
    alpha_n: np.ndarray
    alpha_prime: float

    @property
    def dims(self) -> int:
        return self.mean_shift.size

    def log_pdf(self, dx: np.ndarray) -> np.ndarray:
        """Log density at displacements ``dx`` of shape (..., D)."""
        var = np.diag(self.covariance)
        z = (dx - self.mean_shift) ** 2 / var
        return -0.5 * np.sum(z, axis=-1) - 0.5 * np.sum(np.log(2 * np.pi * var))

    def discretize(self, support: np.ndarray) -> np.ndarray:
        """Normalized probabilities of the kernel restricted to lattice points (K, D)."""
        lp = self.log_pdf(support)
        return np.exp(lp - logsumexp(lp))


def analytic_kernel(grad_phi, alpha_n, alpha_prime: float) -> TransitionKernel:
    """Gaussian short-step kernel with mean (alpha'/alpha_n) dphi and variance 1/alpha_n."""
    g = np.atleast_1d(np.asarray(grad_phi, dtype=float))
    a = _per_coord(alpha_n, g.size)
    if np.any(a <= 0):
        raise ValueError(f"alpha_n must be positive, got {alpha_n}")
    if not np.isfinite(alpha_prime):
        raise ValueError("alpha_prime must be finite")
    return TransitionKernel(
        mean_shift=alpha_prime * g / a,
        covariance=np.diag(1.0 / a),
        alpha_n=np.atleast_1d(np.asarray(alpha_n, dtype=float)),
        alpha_prime=float(alpha_prime),
    )


def kernel_moments(kernel: TransitionKernel, grad_phi, coords_per_particle: int | None = None):
    """Constraint values (kappa_n per particle, kappa') implied by a Gaussian kernel."""
    g = np.atleast_1d(np.asarray(grad_phi, dtype=float))
    mu = kernel.mean_shift
    second = np.diag(kernel.covariance) + mu**2
    n = kernel.alpha_n.size
    kappa_n = second.reshape(n, -1).sum(axis=1)
    return kappa_n, float(mu @ g)


@dataclass(frozen=True)
class LatticeSpec:
    """Tensor-product lattice of displacements: ``points`` nodes on [-half_width, half_width] per axis."""

    half_width: float | tuple[float, ...]
    points: int = 769

    def support(self, dims: int) -> tuple[np.ndarray, list[np.ndarray]]:
        hw = np.broadcast_to(np.asarray(self.half_width, dtype=float), (dims,))
        axes = [np.linspace(-w, w, self.points) for w in hw]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1), axes


@dataclass(frozen=True)
class DiscreteKernel:
    support: np.ndarray
    probabilities: np.ndarray
    alpha_n: np.ndarray
    alpha_prime: float
    second_moments: np.ndarray
    drift_moment: float
    iterations: int

    def mean(self) -> np.ndarray:
        return self.probabilities @ self.support


def _features(support, g, n_particles):
    dims = support.shape[1]
    per = dims // n_particles
    sq = (support**2).reshape(len(support), n_particles, per).sum(axis=2)
    return np.column_stack([-0.5 * sq, support @ g])


def numeric_maxent(grad_phi, kappa_n, kappa_prime: float, lattice: LatticeSpec,
                   *, tol: float = 1e-12, max_iter: int = 200) -> DiscreteKernel:
    """Discrete maximum-entropy distribution (uniform prior) matching the step constraints.

    Features are f_n = -|dx_n|^2 / 2 per particle and f' = dx . dphi, so that
    p ~ exp(sum_n alpha_n f_n + alpha' f'). The multipliers minimize the dual
    log Z(alpha) - alpha . target, whose gradient is the moment mismatch and
    whose Hessian is the feature covariance.
    """
    g = np.atleast_1d(np.asarray(grad_phi, dtype=float))
    dims = g.size
    kappa = np.atleast_1d(np.asarray(kappa_n, dtype=float))
    n = kappa.size
    if dims % n:
        raise ValueError(f"{n} particle constraints do not divide {dims} coordinates")
    if np.any(kappa <= 0):
        raise ValueError(f"kappa_n must be positive, got {kappa_n}")
    per = dims // n
    g_norm = np.sqrt((g**2).reshape(n, per).sum(axis=1))
    reach = float(np.sum(np.sqrt(kappa) * g_norm))
    if not abs(kappa_prime) < reach and not (reach == 0 and kappa_prime == 0):
        raise InfeasibleConstraints(f"kappa'={kappa_prime:g} unreachable (|kappa'| must be < {reach:g})")

    support, _ = lattice.support(dims)
    F = _features(support, g, n)
    target = np.concatenate([-0.5 * kappa, [kappa_prime]])
    active = np.ones(n + 1, dtype=bool)
    if reach == 0:
        active[-1] = False  # f' vanishes identically; alpha' is not identifiable
    Fa, ta = F[:, active], target[active]
    lam = np.concatenate([dims / n / kappa, [0.0]])[active]

    def dual(l):
        s = Fa @ l
        lz = logsumexp(s)
        return lz - l @ ta, np.exp(s - lz)

    val, p = dual(lam)
    for it in range(1, max_iter + 1):
        m = p @ Fa
        grad = m - ta
        if np.max(np.abs(grad) / np.maximum(np.abs(ta), 1.0)) < tol:
            break
        C = Fa - m
        H = (C * p[:, None]).T @ C
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            new_lam = lam - t * step
            new_val, new_p = dual(new_lam)
            if new_val <= val - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        lam, val, p = new_lam, new_val, new_p
    else:
        raise MaxEntConvergenceError(f"dual Newton did not converge in {max_iter} iterations")

    full = np.zeros(n + 1)
    full[active] = lam
    alpha_n, alpha_prime = full[:n], float(full[-1])
    if np.any(alpha_n <= 0):
        raise InfeasibleConstraints("recovered alpha_n is not positive")
    mean = p @ support
    sd = 1 / np.sqrt(_per_coord(alpha_n, dims))
    hw = np.abs(support).max(axis=0)
    if np.any(np.abs(mean) + 6 * sd > hw * (1 + 1e-12)):
        raise ValueError("lattice does not cover 6 standard deviations of the solution")
    sq = (support**2).reshape(len(support), n, per).sum(axis=2)
    return DiscreteKernel(
        support=support,
        probabilities=p,
        alpha_n=alpha_n,
        alpha_prime=alpha_prime,
        second_moments=p @ sq,
        drift_moment=float(p @ (support @ g)),
        iterations=it,
    )


def lattice_for(kernel: TransitionKernel, n_sigma: float = 6.5, points_per_sigma: int = 64) -> LatticeSpec:
    """Symmetric lattice covering ``n_sigma`` standard deviations around the kernel mean."""
    sd = np.sqrt(np.diag(kernel.covariance))
    hw = float(np.max(np.abs(kernel.mean_shift) + n_sigma * sd))
    points = int(math.ceil(2 * hw / float(sd.min()) * points_per_sigma)) | 1
    return LatticeSpec(half_width=hw, points=points)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def step_statistics(params: ModelParams, grad_phi):
    """Drift velocity and fluctuation covariance rate of a short step.

    drift = eta_tilde m^-1 dphi (independent of epsilon); covariance per unit
    time = epsilon m^-1 (diagonal), with epsilon = eta_tilde / alpha'.
    """
    g = np.atleast_1d(np.asarray(grad_phi, dtype=float))
    m = params.mass_per_coord(g.size)
    return params.eta_tilde * g / m, np.diag(params.epsilon / m)


def sample_steps(params: ModelParams, grad_phi, dt: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` displacements dx = b dt + dw from the short-step kernel."""
    drift, cov = step_statistics(params, grad_phi)
    noise = rng.standard_normal((n, drift.size)) * np.sqrt(np.diag(cov) * dt)
    return drift * dt + noise
