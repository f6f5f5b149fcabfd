"""Kalman filter on the linearized shallow-water dynamics.

The nonlinear flux is linearized around a constant reference state
(water level h_ref, velocity u_ref, default at rest); the transition matrix
is one explicit Euler step of the linearized system with periodic central
differences plus first-order upwind-equivalent dissipation
mu = (|u_ref| + c) dx / 2, which keeps the spectral radius at or below one
whenever (|u_ref| + c) dt / dx <= 1. The filter observes the water-level
cells and reconstructs the momentum block through the wave coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigurationError, NumericalError
from .grid import Field, Grid

PSD_TOLERANCE = -1e-9


def linearize_swe(h_ref: float, u_ref: float, g: float, grid: Grid) -> sparse.csr_matrix:
    """One-step transition matrix for stacked (h, hu) deviations (2n x 2n)."""
    if h_ref <= 0:
        raise ConfigurationError(f"reference water level must be positive, got {h_ref}")
    n = grid.n_space
    dx = grid.dx
    dt = grid.dt
    c = np.sqrt(g * h_ref)
    speed = abs(u_ref) + c
    if speed * dt / dx > 1.0 + 1e-12:
        raise ConfigurationError(
            f"explicit step unstable: dt={dt:.4g} exceeds stable bound {dx / speed:.4g}"
        )

    idx = np.arange(n)
    central = sparse.csr_matrix(
        (
            np.concatenate([np.full(n, 0.5 / dx), np.full(n, -0.5 / dx)]),
            (np.concatenate([idx, idx]), np.concatenate([(idx + 1) % n, (idx - 1) % n])),
        ),
        shape=(n, n),
    )
    laplace = sparse.csr_matrix(
        (
            np.concatenate([np.full(n, 1.0), np.full(n, 1.0), np.full(n, -2.0)]) / dx**2,
            (
                np.concatenate([idx, idx, idx]),
                np.concatenate([(idx + 1) % n, (idx - 1) % n, idx]),
            ),
        ),
        shape=(n, n),
    )
    eye = sparse.identity(n, format="csr")
    mu = 0.5 * speed * dx
    smooth = eye + dt * mu * laplace
    # Flux Jacobian [[0, 1], [c^2 - u^2, 2 u]] applied through the gradient.
    m_hh = smooth
    m_hq = -dt * central
    m_qh = -dt * (c**2 - u_ref**2) * central
    m_qq = smooth - dt * 2.0 * u_ref * central
    return sparse.bmat([[m_hh, m_hq], [m_qh, m_qq]], format="csr")


@dataclass
class KfDiagnostics:
    innovation_lag1_autocorr: float
    innovation_rms: float
    min_covariance_eigenvalue: float


def kf_reconstruct(
    observations: np.ndarray,
    grid: Grid,
    g: float = 1.0,
    h_ref: float | None = None,
    u_ref: float = 0.0,
    q_noise: float = 1e-4,
    r_noise: float = 1e-4,
    p0: float = 1.0,
) -> tuple[Field, KfDiagnostics]:
    """Filter water-level observations into a full (h, u) field.

    ``observations`` is [n_time, n_space] of h values aligned with the grid
    snapshots. Standard predict/update recursion with Q = q I, R = r I and a
    Joseph-form covariance update; the covariance is symmetrized every step
    and must stay positive semi-definite within tolerance.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.shape != (grid.n_time, grid.n_space):
        raise ConfigurationError(f"observations {obs.shape} != {(grid.n_time, grid.n_space)}")
    n = grid.n_space
    reference = float(obs.mean()) if h_ref is None else float(h_ref)
    transition = linearize_swe(reference, u_ref, g, grid).toarray()

    radius = float(np.max(np.abs(np.linalg.eigvals(transition))))
    if radius > 1.0 + 1e-9:
        raise ConfigurationError(f"transition spectral radius {radius:.6f} > 1")

    state = np.zeros(2 * n)
    cov = p0 * np.eye(2 * n)
    q_mat = q_noise * np.eye(2 * n)
    r_mat = r_noise * np.eye(n)

    filtered = np.empty((grid.n_time, 2 * n))
    innovations = np.empty((grid.n_time, n))
    min_eig = np.inf
    for k in range(grid.n_time):
        innovation = (obs[k] - reference) - state[:n]
        innovations[k] = innovation
        s_mat = cov[:n, :n] + r_mat
        gain = np.linalg.solve(s_mat, cov[:n, :]).T  # (2n, n)
        state = state + gain @ innovation
        left = np.eye(2 * n) - np.hstack([gain, np.zeros((2 * n, n))])
        cov = left @ cov @ left.T + gain @ r_mat @ gain.T
        cov = 0.5 * (cov + cov.T)
        smallest = float(np.linalg.eigvalsh(cov).min())
        min_eig = min(min_eig, smallest)
        if smallest < PSD_TOLERANCE:
            raise NumericalError(f"covariance lost positive semi-definiteness: eig {smallest:.3e}")
        filtered[k] = state
        state = transition @ state
        cov = transition @ cov @ transition.T + q_mat
        cov = 0.5 * (cov + cov.T)

    h = reference + filtered[:, :n]
    momentum = filtered[:, n:]
    base = reference * u_ref
    u = (base + momentum) / h
    field = Field(grid, ("h", "u"), np.stack([h, u])).require_finite("kf_reconstruct")

    head = innovations[:-1].ravel()
    tail = innovations[1:].ravel()
    denom = float(np.sqrt((head**2).sum() * (tail**2).sum()))
    lag1 = float((head * tail).sum() / denom) if denom > 0 else 0.0
    diagnostics = KfDiagnostics(
        innovation_lag1_autocorr=lag1,
        innovation_rms=float(np.sqrt((innovations**2).mean())),
        min_covariance_eigenvalue=min_eig,
    )
    return field, diagnostics
