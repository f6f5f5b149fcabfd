"""Discrete PDE residuals, MAE over generated entries, and sample selection.

Residual operators evaluate the governing equations on candidate fields in
physical units (denormalize first) with the same constitutive forms as the
solvers. Each returns the pointwise residual on the valid interior cells;
the scalar metric is its mean absolute value.

``evaluate_samples`` scores a batch of generated samples against a target:
per-sample MAE over the generated region, per-sample residual, the
pointwise mean prediction and its MAE, and the rank correlation between the
two per-sample metrics. Selection strategies pick one sample per case:
lowest residual, closest agreement with a few extra measured points, or
(oracle mode) lowest MAE; ties break to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .errors import ConfigurationError
from .grid import Field
from .masks import TaskMask
from .sim.darcy import _apply_operator, _face_coefficients
from .sim.reactor import ReactorConfig, _rates

# ---------------------------------------------------------------------------
# residual operators


def darcy_residual(a: np.ndarray, u: np.ndarray, forcing: float, hy: float, hx: float) -> np.ndarray:
    """div(a grad u) - f on interior nodes (flux form, harmonic-mean faces)."""
    a = np.asarray(a, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    ay, ax = _face_coefficients(a)
    return _apply_operator(u, ay, ax, hy, hx)[1:-1, 1:-1] - float(forcing)


def swe_residual(h: np.ndarray, u: np.ndarray, g: float, dt: float, dx: float) -> np.ndarray:
    """[2, T-1, X-2] mass and momentum residuals.

    Forward difference in time, central differences in space:
        d h/dt + d(hu)/dx            (mass)
        d(hu)/dt + d(u^2 h + g h^2 / 2)/dx   (momentum)
    """
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    q = h * u
    flux = u * u * h + 0.5 * g * h * h
    dh_dt = (h[1:, :] - h[:-1, :]) / dt
    dq_dt = (q[1:, :] - q[:-1, :]) / dt
    dq_dx = (q[:-1, 2:] - q[:-1, :-2]) / (2.0 * dx)
    df_dx = (flux[:-1, 2:] - flux[:-1, :-2]) / (2.0 * dx)
    mass = dh_dt[:, 1:-1] + dq_dx
    momentum = dq_dt[:, 1:-1] + df_dx
    return np.stack([mass, momentum])


def reactor_residual(fields: Field, config: ReactorConfig) -> np.ndarray:
    """[4, T-1, X-1] residuals of the four reactor equations.

    Forward difference in time, first-order upwind in space (inlet cell
    excluded), rates evaluated at the interval start, matching the solver's
    constitutive forms.
    """
    dz = fields.grid.dx
    dt = fields.grid.dt
    state = np.stack(
        [np.asarray(fields.channel(name), dtype=np.float64) for name in ("x_a", "x_p", "T", "theta")]
    )  # [4, T, X]
    sources, beta = _rates(state, config)

    ddt = (state[:, 1:, :] - state[:, :-1, :]) / dt  # [4, T-1, X]
    grad = (state[:, :, 1:] - state[:, :, :-1]) / dz  # [4, T, X-1], upwind at cells 1..X-1
    residual = np.empty((4, state.shape[1] - 1, state.shape[2] - 1))
    residual[0] = ddt[0][:, 1:] + config.U * grad[0][:-1, :] - sources[0][:-1, 1:]
    residual[1] = ddt[1][:, 1:] + config.U * grad[1][:-1, :] - sources[1][:-1, 1:]
    residual[2] = ddt[2][:, 1:] + beta[:-1, 1:] * config.U * grad[2][:-1, :] - sources[2][:-1, 1:]
    residual[3] = ddt[3][:, 1:] - sources[3][:-1, 1:]
    return residual


def mean_abs(residual: np.ndarray) -> float:
    return float(np.mean(np.abs(residual)))


def residual_metric_fn(system: str, system_params: dict):
    """Scalar residual metric for denormalized fields of one system."""
    if system in ("swe_orig", "swe_init"):
        g = float(system_params.get("g", 1.0))

        def metric(f: Field) -> float:
            return mean_abs(swe_residual(f.channel("h"), f.channel("u"), g, f.grid.dt, f.grid.dx))

    elif system == "darcy":
        forcing = float(system_params.get("forcing", 1.0))

        def metric(f: Field) -> float:
            return mean_abs(
                darcy_residual(f.channel("a"), f.channel("u"), forcing, f.grid.dt, f.grid.dx)
            )

    elif system == "reactor":
        keys = (
            "U", "gamma", "k_reaction", "activation_temp", "k_poison",
            "k_deactivation", "beta_slope", "inlet_T",
        )
        config = ReactorConfig(**{k: system_params[k] for k in keys if k in system_params})

        def metric(f: Field) -> float:
            return mean_abs(reactor_residual(f, config))

    else:
        raise ConfigurationError(f"no residual metric for system {system!r}")
    return metric


# ---------------------------------------------------------------------------
# sample evaluation and selection


@dataclass
class SampleReport:
    case_id: int
    mae: np.ndarray  # [S] per-sample MAE over generated entries
    residual: np.ndarray  # [S] per-sample mean absolute residual
    mean_prediction_mae: float
    spearman: float
    selected: dict[str, int] = field(default_factory=dict)
    selected_mae: dict[str, float] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.mae)

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "n_samples": self.n_samples,
            "mae": [float(v) for v in self.mae],
            "residual": [float(v) for v in self.residual],
            "mae_mean": float(self.mae.mean()),
            "residual_mean": float(self.residual.mean()),
            "mean_prediction_mae": self.mean_prediction_mae,
            "spearman": self.spearman,
            "selected": dict(self.selected),
            "selected_mae": {k: float(v) for k, v in self.selected_mae.items()},
        }


def mae_over_generated(candidate: np.ndarray, target: np.ndarray, mask: TaskMask) -> float:
    gen = mask.generated
    if not gen.any():
        raise ConfigurationError("mask has no generated entries to score")
    return float(np.mean(np.abs(np.asarray(candidate, dtype=np.float64) - target)[..., gen]))


def spearman_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation; 0.0 for degenerate (constant) inputs."""
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    rho = scipy_stats.spearmanr(a, b).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def evaluate_samples(
    samples: np.ndarray,
    target: np.ndarray,
    mask: TaskMask,
    residual_of_sample,
    case_id: int = 0,
) -> SampleReport:
    """Score [S, C, T, X] samples against a [C, T, X] target.

    ``residual_of_sample`` maps one [C, T, X] sample array to its scalar
    residual metric (in whatever units the caller fixed; physical units via
    denormalization in the evaluation pipeline).
    """
    samples = np.asarray(samples, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if samples.ndim != 4 or samples.shape[1:] != target.shape:
        raise ConfigurationError(f"samples {samples.shape} incompatible with target {target.shape}")
    if samples.shape[0] < 2:
        raise ConfigurationError("need at least 2 samples")
    mae = np.array([mae_over_generated(s, target, mask) for s in samples])
    residual = np.array([float(residual_of_sample(s)) for s in samples])
    mean_prediction = samples.mean(axis=0)
    report = SampleReport(
        case_id=case_id,
        mae=mae,
        residual=residual,
        mean_prediction_mae=mae_over_generated(mean_prediction, target, mask),
        spearman=spearman_correlation(mae, residual),
    )
    return report


def default_corner_points(mask: TaskMask) -> list[tuple[int, int, int]]:
    """Two extreme spatial cells of the first generated row (sign probes)."""
    gen = mask.generated
    channels, times, cells = np.nonzero(gen)
    if len(channels) == 0:
        raise ConfigurationError("mask has no generated entries")
    c = int(channels.min())
    t = int(times[channels == c].min())
    row = np.nonzero(gen[c, t])[0]
    return [(c, t, int(row[0])), (c, t, int(row[-1]))]


def select_sample(
    report: SampleReport,
    strategy: str,
    samples: np.ndarray | None = None,
    target: np.ndarray | None = None,
    points: list[tuple[int, int, int]] | None = None,
    mask: TaskMask | None = None,
) -> int:
    """Pick one sample index per the strategy; ties break to lowest index.

    * ``by_pde``    lowest residual metric
    * ``by_points`` lowest summed absolute error at the given points,
                    measured against the target (defaults to the two corner
                    points of the generated region)
    * ``closest``   lowest MAE; oracle mode, needs the target
    """
    if strategy == "by_pde":
        return int(np.argmin(report.residual))
    if strategy == "closest":
        return int(np.argmin(report.mae))
    if strategy == "by_points":
        if samples is None or target is None:
            raise ConfigurationError("by_points needs samples and target")
        if points is None:
            if mask is None:
                raise ConfigurationError("by_points needs explicit points or a mask")
            points = default_corner_points(mask)
        if len(points) == 0:
            raise ConfigurationError("by_points needs a non-empty point set")
        idx = tuple(np.array(p) for p in zip(*points))
        errors = np.abs(samples[:, idx[0], idx[1], idx[2]] - target[idx]).sum(axis=1)
        return int(np.argmin(errors))
    raise ConfigurationError(f"unknown selection strategy {strategy!r}")
