"""Momentum observables, Fisher information and the uncertainty-relation report.

Every quantity here is a function of (rho, Phi, hbar) only. The drift/osmotic
split of the local momentum depends on epsilon, but the report carries only
epsilon-free combinations, so it is identical for every member of the family.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import RHO_FLOOR, Grid, ModelParams, WaveState, gradient
from .fields import fisher_density, flux_and_density_gradient, phase_gradient

IDENTITY_TOL = 1e-9
RELATION_TOL = 1e-6


def local_momentum(state: WaveState) -> np.ndarray:
    """p_a(x) = d_a Phi, shape (D, *grid); clamped outside the resolvable support."""
    return phase_gradient(state)


def osmotic_momentum(state: WaveState, epsilon: float) -> np.ndarray:
    """p_o = -(epsilon / 2) d ln rho (zero outside the resolvable support)."""
    from .fields import grad_log_rho

    return -0.5 * epsilon * grad_log_rho(state)


def drift_momentum(state: WaveState, epsilon: float) -> np.ndarray:
    return local_momentum(state) - osmotic_momentum(state, epsilon)


def fisher_information(rho: np.ndarray, grid: Grid) -> np.ndarray:
    """I_cd = int rho d_c ln rho d_d ln rho, evaluated as 4 int d_c sqrt(rho) d_d sqrt(rho)."""
    ds = gradient(np.sqrt(np.clip(rho, 0, None)), grid)
    D = grid.dims
    return np.array([[4 * grid.integrate(ds[c] * ds[d]) for d in range(D)] for c in range(D)])


def _position_moments(state: WaveState):
    grid = state.grid
    rho = state.rho
    norm = grid.integrate(rho)
    X = [np.broadcast_to(x, grid.shape) for x in grid.coords]
    mean = np.array([grid.integrate(rho * x) for x in X]) / norm
    cov = np.array([[grid.integrate(rho * (xa - ma) * (xb - mb)) for xb, mb in zip(X, mean)]
                    for xa, ma in zip(X, mean)]) / norm
    return mean, cov, X


def operator_momentum_stats(state: WaveState, params: ModelParams | None = None):
    """Mean, variance and symmetrized covariance with x of p = -i hbar d, per coordinate.

    Mean and variance are momentum-space quadratures of |psi_k|^2; the
    covariance applies p to psi spectrally and takes Re <psi| x p |psi>.
    Returns (mean (D,), var (D,), cov_px (D, D)) with cov_px[a, b] = Cov(p_a, x_b).
    """
    grid = state.grid
    hbar = state.hbar
    psi = state.psi
    spec = np.fft.fftn(psi)
    weight = np.abs(spec) ** 2
    total = weight.sum()
    k = [np.broadcast_to(kk, grid.shape) for kk in grid.wavenumbers]
    mean = np.array([hbar * np.sum(kk * weight) / total for kk in k])
    var = np.array([hbar**2 * np.sum(kk**2 * weight) / total for kk in k]) - mean**2
    x_mean, _, X = _position_moments(state)
    norm = grid.integrate(np.abs(psi) ** 2)
    D = grid.dims
    cov = np.empty((D, D))
    for a in range(D):
        p_psi = np.fft.ifftn(-1j * hbar * 1j * k[a] * spec)
        for b in range(D):
            sym = grid.integrate((np.conj(psi) * X[b] * p_psi).real) / norm
            cov[a, b] = sym - mean[a] * x_mean[b]
    return mean, var, cov


@dataclass
class UncertaintyReport:
    """Moments, covariances and uncertainty-relation checks for one state.

    Per-coordinate arrays are indexed by a. ``mean_p_osmotic_per_epsilon`` is
    <p_o>/epsilon = -<d ln rho>/2, the epsilon-free part of the osmotic mean.
    """

    time: float
    hbar: float
    mean_x: np.ndarray
    var_x: np.ndarray
    mean_p_local: np.ndarray
    var_p_local: np.ndarray
    mean_p_operator: np.ndarray
    var_p_operator: np.ndarray
    mean_p_osmotic_per_epsilon: np.ndarray
    fisher_I: np.ndarray
    var_dlnrho: np.ndarray
    cov_p_x: np.ndarray
    cov_p_local_x: np.ndarray
    cov_dlnrho_x: np.ndarray
    schrodinger_lhs: np.ndarray
    schrodinger_rhs: np.ndarray
    schrodinger_slack: np.ndarray
    heisenberg_product: np.ndarray
    checks: dict = field(default_factory=dict)
    ensemble: dict | None = None

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c["passed"]]

    def to_json(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out["passed"] = self.passed
        out["tolerances"] = {"identity": IDENTITY_TOL, "relation": RELATION_TOL}
        return _plain(out)


def _plain(o):
    if isinstance(o, dict):
        return {k: _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return o


def _check(value, passed) -> dict:
    return {"value": _plain(value), "passed": bool(np.all(passed))}


def uncertainty_report(state: WaveState, params: ModelParams | None = None, ensemble=None) -> UncertaintyReport:
    """Assemble the full report for ``state``.

    ``params`` is accepted for interface symmetry; only hbar (carried by the
    state) enters. If an ensemble is given, its position moments are attached
    for cross-checking and do not affect the pass flags.
    """
    grid = state.grid
    hbar = state.hbar
    D = grid.dims
    rho = state.rho
    norm = grid.integrate(rho)
    x_mean, x_cov, X = _position_moments(state)
    var_x = np.diag(x_cov).copy()

    j, g = flux_and_density_gradient(state)
    safe = np.where(rho > RHO_FLOOR * rho.max(), rho, np.inf)
    mean_p = np.array([grid.integrate(j[a]) for a in range(D)]) / norm
    second_p = np.array([grid.integrate(j[a] ** 2 / safe) for a in range(D)]) / norm
    var_p = second_p - mean_p**2
    mean_dl = np.array([grid.integrate(g[a]) for a in range(D)]) / norm
    fd = fisher_density(state)
    fisher = np.array([[grid.integrate(fd[c, d]) for d in range(D)] for c in range(D)]) / norm
    var_dl = np.diag(fisher) - mean_dl**2
    cov_dl_x = np.array([[grid.integrate(g[a] * X[b]) / norm - mean_dl[a] * x_mean[b] for b in range(D)]
                         for a in range(D)])
    cov_pl_x = np.array([[grid.integrate(j[a] * X[b]) / norm - mean_p[a] * x_mean[b] for b in range(D)]
                         for a in range(D)])

    op_mean, op_var, op_cov = operator_momentum_stats(state)
    diag_cov = np.diag(op_cov)
    lhs = op_var * var_x
    rhs = diag_cov**2 + hbar**2 / 4
    slack = lhs - rhs
    quarter = hbar**2 / 4

    # intermediate Cauchy-Schwarz steps; these hold for any discrete measure
    assert np.all(var_p * var_x >= np.diag(cov_pl_x) ** 2 * (1 - 1e-9) - 1e-14)
    assert np.all(var_dl * var_x >= np.diag(cov_dl_x) ** 2 * (1 - 1e-9) - 1e-14)

    var_rel = np.abs(op_var - (var_p + quarter * var_dl)) / np.maximum(np.abs(op_var), 1e-300)
    checks = {
        "osmotic_mean_zero": _check(mean_dl, np.abs(mean_dl) * np.sqrt(var_x) < IDENTITY_TOL),
        "operator_mean_equals_local": _check(op_mean - mean_p, np.abs(op_mean - mean_p) <= IDENTITY_TOL * np.maximum(1.0, np.abs(mean_p))),
        "variance_identity": _check(var_rel, var_rel < RELATION_TOL),
        "cov_dlnrho_x_minus_identity": _check(cov_dl_x, np.abs(cov_dl_x + np.eye(D)) < IDENTITY_TOL),
        "cov_operator_equals_local": _check(op_cov - cov_pl_x, np.abs(op_cov - cov_pl_x) <= RELATION_TOL * np.maximum(1.0, np.abs(op_cov))),
        "schrodinger_relation": _check(slack, slack >= -IDENTITY_TOL * rhs),
        "heisenberg_relation": _check(lhs / quarter, lhs >= quarter * (1 - IDENTITY_TOL)),
    }
    extra = None
    if ensemble is not None:
        pos = np.asarray(ensemble.positions if hasattr(ensemble, "positions") else ensemble)
        extra = {"mean_x": pos.mean(axis=0).tolist(), "var_x": pos.var(axis=0).tolist(), "walkers": len(pos)}
    return UncertaintyReport(
        time=state.time, hbar=hbar, mean_x=x_mean, var_x=var_x, mean_p_local=mean_p, var_p_local=var_p,
        mean_p_operator=op_mean, var_p_operator=op_var, mean_p_osmotic_per_epsilon=-0.5 * mean_dl,
        fisher_I=fisher, var_dlnrho=var_dl, cov_p_x=op_cov, cov_p_local_x=cov_pl_x, cov_dlnrho_x=cov_dl_x,
        schrodinger_lhs=lhs, schrodinger_rhs=rhs, schrodinger_slack=slack, heisenberg_product=lhs,
        checks=checks, ensemble=extra,
    )


def ensemble_momentum(state: WaveState) -> np.ndarray:
    """P_a = int rho d_a Phi = <p_a>."""
    j, _ = flux_and_density_gradient(state)
    return np.array([state.grid.integrate(ja) for ja in j]) / state.norm()
