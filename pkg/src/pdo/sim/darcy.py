"""Steady Darcy flow on the unit square.

The diffusion coefficient is piecewise constant: a smoothed Gaussian random
field thresholded at its median, taking the two configured values. The
pressure solves div(a grad u) = f with u = 0 on the boundary, discretized
with the 5-point flux stencil and harmonic-mean face coefficients, and the
symmetric system is solved by Jacobi-preconditioned conjugate gradients.

Arrays are laid out [rows, cols] = [time axis reused as y, x]; the outer
ring of entries is the Dirichlet boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigurationError, NumericalError, SimulationError
from ..grid import Field, Grid


@dataclass(frozen=True)
class DarcyConfig:
    a_low: float = 3.0
    a_high: float = 12.0
    grf_length_scale: float = 0.1
    forcing: float = 1.0
    cg_tol: float = 1e-8
    cg_max_iter: int = 20_000
    min_occupancy: float = 0.10

    def __post_init__(self) -> None:
        if not 0 < self.a_low < self.a_high:
            raise ConfigurationError(f"need 0 < a_low < a_high, got {self.a_low}, {self.a_high}")
        if self.grf_length_scale <= 0:
            raise ConfigurationError("grf_length_scale must be positive")


def darcy_sample_coefficient(seed: int, config: DarcyConfig, grid: Grid) -> Field:
    """Two-valued coefficient field from a median-thresholded smoothed GRF."""
    extent_x = grid.x_max - grid.x_min
    extent_y = grid.t_max - grid.t_min
    sigma = (
        config.grf_length_scale / extent_y * grid.n_time,
        config.grf_length_scale / extent_x * grid.n_space,
    )
    rng = np.random.default_rng(seed)
    for _ in range(100):
        white = rng.standard_normal((grid.n_time, grid.n_space))
        smooth = gaussian_filter(white, sigma=sigma, mode="reflect")
        high = smooth >= np.median(smooth)
        frac = high.mean()
        if config.min_occupancy <= frac <= 1 - config.min_occupancy:
            a = np.where(high, config.a_high, config.a_low)
            return Field(grid, ("a",), a[None])
    raise NumericalError(f"could not reach {config.min_occupancy:.0%} occupancy in 100 attempts")


def _face_coefficients(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic means on vertical (row-adjacent) and horizontal faces."""
    ay = 2.0 * a[:-1, :] * a[1:, :] / (a[:-1, :] + a[1:, :])
    ax = 2.0 * a[:, :-1] * a[:, 1:] / (a[:, :-1] + a[:, 1:])
    return ay, ax


def _apply_operator(u: np.ndarray, ay: np.ndarray, ax: np.ndarray, hy: float, hx: float) -> np.ndarray:
    """Flux-form div(a grad u) on the full node array (boundary rows kept 0)."""
    out = np.zeros_like(u)
    flux_y = ay * (u[1:, :] - u[:-1, :]) / hy
    flux_x = ax * (u[:, 1:] - u[:, :-1]) / hx
    out[1:-1, :] += (flux_y[1:, :] - flux_y[:-1, :])[:, :] / hy
    out[:, 1:-1] += (flux_x[:, 1:] - flux_x[:, :-1]) / hx
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def darcy_solve_arrays(
    a: np.ndarray,
    forcing: float,
    hy: float,
    hx: float,
    tol: float = 1e-8,
    max_iter: int = 20_000,
) -> np.ndarray:
    """Solve div(a grad u) = forcing with zero Dirichlet boundary.

    Conjugate gradients on the negated (positive definite) operator with
    Jacobi preconditioning; converges to relative residual <= tol.
    """
    a = np.asarray(a, dtype=np.float64)
    if not (a > 0).all():
        raise SimulationError("darcy coefficient must be positive everywhere")
    ny, nx = a.shape
    ay, ax = _face_coefficients(a)
    interior = np.zeros_like(a, dtype=bool)
    interior[1:-1, 1:-1] = True

    diag = np.zeros_like(a)
    diag[1:-1, :] += (ay[1:, :] + ay[:-1, :]) / hy**2
    diag[:, 1:-1] += (ax[:, 1:] + ax[:, :-1]) / hx**2
    inv_diag = np.where(interior, 1.0 / np.where(diag == 0, 1.0, diag), 0.0)

    def mat_vec(u: np.ndarray) -> np.ndarray:
        return np.where(interior, -_apply_operator(u, ay, ax, hy, hx), 0.0)

    b = np.where(interior, -float(forcing), 0.0)
    b_norm = float(np.linalg.norm(b))
    u = np.zeros_like(a)
    r = b - mat_vec(u)
    z = inv_diag * r
    p = z.copy()
    rz = float((r * z).sum())
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol * b_norm:
            return u
        ap = mat_vec(p)
        alpha = rz / float((p * ap).sum())
        u = u + alpha * p
        r = r - alpha * ap
        z = inv_diag * r
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = float(np.linalg.norm(r) / b_norm)
    raise NumericalError(f"conjugate gradients stalled: relative residual {final:.3e} > {tol:.1e}")


def darcy_solve(a: Field, config: DarcyConfig, grid: Grid) -> Field:
    """Pressure field for a coefficient field on the same grid."""
    u = darcy_solve_arrays(
        a.channel("a"),
        config.forcing,
        hy=grid.dt,
        hx=grid.dx,
        tol=config.cg_tol,
        max_iter=config.cg_max_iter,
    )
    return Field(grid, ("u",), u[None]).require_finite("darcy_solve")
