"""Acceptance gate: one test per criterion, each printing a PASS line.

The model-based criteria share four trained checkpoints built once per
session (two mixed models, one single-task conditional, one unconditional).
Desk-scale sizes: the periodic shallow-water dataset is 500 instances at
64x64; the dam-break dataset is 300 instances at 32x32. Run with ``-s`` to
see the per-criterion lines while they execute.
"""

import json

import numpy as np
import pytest
import torch

from pdo.cli import main as cli_main
from pdo.diffusion import EdmConfig, SamplerConfig, heun_sample_from, karras_sigmas, repaint_sample
from pdo.experiment import ExperimentConfig, evaluate_case
from pdo.grid import Grid, normalize
from pdo.masks import TaskId, TaskMask, mask_for_task, unconditional_mask
from pdo.metrics import darcy_residual, mae_over_generated, mean_abs, reactor_residual, swe_residual
from pdo.kalman import kf_reconstruct, linearize_swe
from pdo.sim.darcy import darcy_solve_arrays
from pdo.sim.generate import generate_dataset
from pdo.sim.reactor import ReactorConfig, reactor_solve
from pdo.sim.swe import Boundary, IcFamily, SweConfig, SweInitParams, swe_init_initial, swe_orig_initial, swe_solve, SweOrigIcParams
from pdo.training import TrainConfig, draw_samples, train
from pdo.unet import NetConfig, UNet
from pdo.util import derive_rng

SEED = 7
EDM_DESK = EdmConfig(sigma_data=1.0)
HEUN = SamplerConfig(n_steps=32)


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"criterion {criterion:02d}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, detail


def eval_config(manifest_system: str, n_samples: int, sampler: SamplerConfig) -> ExperimentConfig:
    return ExperimentConfig(
        {
            "system": manifest_system,
            "seed": SEED,
            "sampler": {
                "mode": sampler.mode,
                "n_steps": sampler.n_steps,
                "jump_length": sampler.jump_length,
                "n_resample": sampler.n_resample,
            },
            "evaluate": {"n_samples": n_samples},
        }
    )


def evaluate_task(ckpt, fields, manifest, task, case_indices, n_samples, sampler=HEUN, stream=0):
    config = eval_config(manifest.system, n_samples, sampler)
    cases = []
    for pos, index in enumerate(case_indices):
        rng = derive_rng(SEED, 30 + stream, task_stream(task), pos)
        cases.append(evaluate_case(ckpt, fields[index], manifest, task, config, index, rng))
    return cases


def task_stream(task: TaskId) -> int:
    return int(task.value[-1])


# ---------------------------------------------------------------------------
# shared datasets and checkpoints


@pytest.fixture(scope="module")
def swe_orig_data():
    return generate_dataset("swe_orig", 500, master_seed=SEED, workers=2)


@pytest.fixture(scope="module")
def swe_init_data():
    grid = Grid(32, 32, -2.5, 2.5, 0.0, 1.28)
    return generate_dataset("swe_init", 300, master_seed=13, grid=grid, workers=2)


def train_on(manifest_fields, mode, objective, iterations, seed, base_width=32, depth=3):
    fields, manifest = manifest_fields
    stats = manifest.stats
    train_fields = [normalize(fields[i], stats) for i in manifest.splits["train"]]
    n_ch = len(manifest.channels)
    from pdo.training import input_channel_count

    net = NetConfig(
        in_channels=input_channel_count(n_ch, mode, True),
        out_channels=n_ch, base_width=base_width, depth=depth,
    )
    config = TrainConfig(iterations=iterations, batch_size=8, ema_decay=0.99)
    result = train(
        train_fields, stats, mode, objective, config, master_seed=seed,
        net_config=net, edm_config=EDM_DESK,
    )
    return result.checkpoint


@pytest.fixture(scope="module")
def mixed_ckpt(swe_orig_data):
    return train_on(swe_orig_data, "mixed", "edm", iterations=1500, seed=SEED)


@pytest.fixture(scope="module")
def conditional_ckpt(swe_orig_data):
    return train_on(swe_orig_data, "conditional:task1", "edm", iterations=1500, seed=SEED + 1)


@pytest.fixture(scope="module")
def unconditional_ckpt(swe_orig_data):
    return train_on(swe_orig_data, "unconditional", "ddpm", iterations=1200, seed=SEED + 2)


@pytest.fixture(scope="module")
def init_ckpt(swe_init_data):
    return train_on(swe_init_data, "mixed", "edm", iterations=1500, seed=13)


@pytest.fixture(scope="module")
def init_task1_cases(swe_init_data, init_ckpt):
    """Shared dam-break evaluation: 12 test cases, 100 samples each."""
    fields, manifest = swe_init_data
    case_indices = manifest.splits["test"][:12]
    return evaluate_task(init_ckpt, fields, manifest, TaskId.TASK1, case_indices, 100, stream=3)


@pytest.fixture(scope="module")
def pixel_mean_predictor(swe_orig_data):
    fields, manifest = swe_orig_data
    stack = np.stack(
        [normalize(fields[i], manifest.stats).data for i in manifest.splits["train"]]
    )
    return stack.mean(axis=0).astype(np.float64)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_simulator_conservation():
    grid = Grid(64, 64, -0.5, 0.5, 0.0, 0.128)
    worst_mass, worst_momentum = 0.0, 0.0
    for i in range(100):
        params = SweOrigIcParams.sample(derive_rng(SEED, 100, i))
        field = swe_solve(SweConfig(), swe_orig_initial(params, grid), grid)
        h = field.channel("h").astype(np.float64)
        q = h * field.channel("u").astype(np.float64)
        worst_mass = max(worst_mass, abs(h[-1].sum() - h[0].sum()) / h[0].sum())
        worst_momentum = max(
            worst_momentum,
            abs(q[-1].sum() - q[0].sum()) / max(abs(q[0].sum()), np.abs(q[-1]).sum(), 1e-12),
        )
    ok = worst_mass <= 1e-6 and worst_momentum <= 1e-6
    report(1, ok, f"mass drift {worst_mass:.2e}, momentum drift {worst_momentum:.2e} over 100 runs")


def test_criterion_02_solver_convergence():
    # Darcy: coarse vs 4x refined reference for a = 1.
    n = 64
    h = 1.0 / n
    coarse = darcy_solve_arrays(np.ones((n, n)), 1.0, h, h)
    n_fine = 4 * (n - 1) + 1
    fine = darcy_solve_arrays(np.ones((n_fine, n_fine)), 1.0, h / 4, h / 4, max_iter=100_000)
    darcy_err = np.abs(coarse - fine[::4, ::4]).max() / np.abs(fine).max()

    # Shallow water: solver-output residual shrinks at first order.
    params = SweOrigIcParams.sample(derive_rng(SEED, 101, 0))
    swe_vals = []
    for res in (128, 256):
        grid = Grid(res, res, -0.5, 0.5, 0.0, 0.128)
        field = swe_solve(SweConfig(), swe_orig_initial(params, grid), grid)
        swe_vals.append(
            mean_abs(swe_residual(field.channel("h"), field.channel("u"), 1.0, grid.dt, grid.dx))
        )
    swe_factor = swe_vals[0] / swe_vals[1]

    config = ReactorConfig()
    reactor_vals = []
    for res in (64, 128):
        grid = Grid(res, res, 0.0, 1.0, 0.0, 1.0)
        reactor_vals.append(mean_abs(reactor_residual(reactor_solve(config, grid), config)))
    reactor_factor = reactor_vals[0] / reactor_vals[1]

    ok = darcy_err < 0.02 and swe_factor >= 1.8 and reactor_factor >= 1.8
    report(
        2, ok,
        f"darcy refinement err {darcy_err:.4f}, swe factor {swe_factor:.2f}, "
        f"reactor factor {reactor_factor:.2f}",
    )


def test_criterion_03_sampler_order_and_moments():
    mu, s = 1.7, 0.6
    config = EdmConfig()

    def denoiser(x, sigma):
        return (s * s * x + sigma * sigma * mu) / (s * s + sigma * sigma)

    shape = (1, 1, 10_000)
    mask = unconditional_mask(shape)
    x_init = config.sigma_max * derive_rng(99, 0).standard_normal(shape)
    exact = mu + s * (x_init - mu) / np.sqrt(config.sigma_max**2 + s**2)
    errors = [
        np.abs(
            heun_sample_from(denoiser, x_init.copy(), np.zeros(shape), mask, SamplerConfig(n_steps=n), config)
            - exact
        ).mean()
        for n in (16, 32, 64)
    ]
    slope = -np.polyfit(np.log2([16, 32, 64]), np.log2(errors), 1)[0]

    big = (1, 1, 40_000)
    x_big = config.sigma_max * derive_rng(99, 1).standard_normal(big)
    out = heun_sample_from(
        denoiser, x_big, np.zeros(big), unconditional_mask(big), SamplerConfig(n_steps=32), config
    )
    mean_err = abs(out.mean() - mu) / mu
    std_err = abs(out.std() - s) / s
    ok = 1.7 <= slope <= 2.3 and mean_err < 0.02 and std_err < 0.02
    report(3, ok, f"order {slope:.2f}, mean err {mean_err:.3f}, std err {std_err:.3f} at 32 steps")


def test_criterion_04_conditioning_fidelity(mixed_ckpt, unconditional_ckpt):
    shape = (2, 16, 16)
    rng = derive_rng(SEED, 104)
    schedule = unconditional_ckpt.schedule()

    def analytic(x, sigma):
        return x / (1.0 + sigma * sigma)

    def eps_double(x, t):
        ab = float(schedule.alpha_bar(int(t)))
        return x * np.sqrt(1.0 - ab)

    checked = 0
    for trial in range(10):
        task = list(TaskId)[trial % 5]
        prefix = float(rng.uniform(0.25, 0.75))
        mask = mask_for_task(task, shape, prefix if task_stream(task) >= 3 else 1.0)
        conditioning = rng.standard_normal(shape).astype(np.float32).astype(np.float64)
        heun_out = heun_sample_from(
            analytic,
            EdmConfig().sigma_max * rng.standard_normal((3, *shape)),
            conditioning, mask, SamplerConfig(n_steps=6), EdmConfig(),
        )
        repaint_out = repaint_sample(
            eps_double, conditioning, mask,
            SamplerConfig(mode="repaint", n_steps=25, jump_length=5, n_resample=2),
            schedule, derive_rng(SEED, 105, trial), n_samples=3,
        )
        for out in (heun_out, repaint_out):
            assert np.array_equal(
                out[:, mask.observed], np.broadcast_to(conditioning, out.shape)[:, mask.observed]
            )
        checked += 2

    # Trained checkpoints through the full sampling adapters.
    shape64 = (2, 64, 64)
    conditioning = rng.standard_normal(shape64).astype(np.float32).astype(np.float64)
    for task in TaskId:
        mask = mask_for_task(task, shape64, 0.5 if task_stream(task) >= 3 else 1.0)
        samples = draw_samples(mixed_ckpt, conditioning, mask, SamplerConfig(n_steps=4), derive_rng(SEED, 106, task_stream(task)), 2)
        assert np.array_equal(
            samples[:, mask.observed], np.broadcast_to(conditioning, samples.shape)[:, mask.observed]
        )
        uncond = draw_samples(
            unconditional_ckpt, conditioning, mask,
            SamplerConfig(mode="repaint", n_steps=20, jump_length=5, n_resample=2),
            derive_rng(SEED, 107, task_stream(task)), 2,
        )
        assert np.array_equal(
            uncond[:, mask.observed], np.broadcast_to(conditioning, uncond.shape)[:, mask.observed]
        )
        checked += 2
    report(4, True, f"bit-exact conditioning on {checked} sampler runs across tasks and masks")


def test_criterion_05_gradient_correctness():
    torch.manual_seed(3)
    net = UNet(NetConfig(in_channels=6, out_channels=2, base_width=32, depth=3)).double()
    with torch.no_grad():
        for p in net.parameters():
            if float(p.abs().max()) == 0.0:
                p.add_(0.05 * torch.randn_like(p))
    x = torch.randn(2, 6, 16, 16, dtype=torch.float64)
    labels = torch.rand(2, dtype=torch.float64)
    target = torch.randn(2, 2, 16, 16, dtype=torch.float64)

    def loss_fn():
        return ((net(x, labels) - target) ** 2).mean()

    loss = loss_fn()
    net.zero_grad()
    loss.backward()
    params = list(net.parameters())
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        p = params[int(rng.integers(len(params)))]
        flat = int(rng.integers(p.numel()))
        autograd = p.grad.reshape(-1)[flat].item()
        step = 1e-6
        with torch.no_grad():
            p.reshape(-1)[flat] += step
            up = loss_fn().item()
            p.reshape(-1)[flat] -= 2 * step
            down = loss_fn().item()
            p.reshape(-1)[flat] += step
        central = (up - down) / (2 * step)
        worst = max(worst, abs(autograd - central) / max(abs(autograd), abs(central), 1e-12))
    report(5, worst <= 1e-3, f"worst backprop vs central-difference relative error {worst:.2e}")


def test_criterion_06_mixed_conditional_learning(swe_orig_data, mixed_ckpt, pixel_mean_predictor):
    fields, manifest = swe_orig_data
    case_indices = manifest.splits["test"][:6]
    cases = evaluate_task(mixed_ckpt, fields, manifest, TaskId.TASK1, case_indices, 100)
    mask = mask_for_task(TaskId.TASK1, (2, 64, 64))
    ratios = []
    for case, index in zip(cases, case_indices):
        target = normalize(fields[index], manifest.stats).data.astype(np.float64)
        baseline = mae_over_generated(pixel_mean_predictor, target, mask)
        ratios.append(case["mean_prediction_mae"] / baseline)
    ratio = float(np.mean(ratios))

    # The single mixed model serves all five tasks without retraining.
    all_tasks_ok = True
    for task in (TaskId.TASK2, TaskId.TASK3, TaskId.TASK4, TaskId.TASK5):
        extra = evaluate_task(mixed_ckpt, fields, manifest, task, case_indices[:1], 4, stream=1)
        all_tasks_ok &= np.isfinite(extra[0]["mae_mean"])
    ok = ratio <= 0.5 and all_tasks_ok
    report(6, ok, f"mean-prediction MAE ratio vs pixel-mean predictor {ratio:.3f} (<= 0.5)")


def test_criterion_07_cross_task_degradation(swe_orig_data, mixed_ckpt, conditional_ckpt):
    fields, manifest = swe_orig_data
    case_indices = manifest.splits["test"][:6]
    cond_t1 = evaluate_task(conditional_ckpt, fields, manifest, TaskId.TASK1, case_indices, 24, stream=2)
    cond_t5 = evaluate_task(conditional_ckpt, fields, manifest, TaskId.TASK5, case_indices, 24, stream=2)
    mixed_t5 = evaluate_task(mixed_ckpt, fields, manifest, TaskId.TASK5, case_indices, 24, stream=2)
    mae_cond_t1 = float(np.mean([c["mae_mean"] for c in cond_t1]))
    mae_cond_t5 = float(np.mean([c["mae_mean"] for c in cond_t5]))
    mae_mixed_t5 = float(np.mean([c["mae_mean"] for c in mixed_t5]))
    ok = mae_cond_t5 >= 2.0 * mae_cond_t1 and mae_mixed_t5 < mae_cond_t5
    report(
        7, ok,
        f"single-task model: task1 {mae_cond_t1:.4f} -> task5 {mae_cond_t5:.4f}; "
        f"mixed task5 {mae_mixed_t5:.4f}",
    )


def test_criterion_08_non_identifiability(swe_init_data, init_ckpt, init_task1_cases):
    fields, manifest = swe_init_data
    grid = manifest.grid
    cases = init_task1_cases
    closest_wins = sum(c["selected_mae"]["closest"] < c["mean_prediction_mae"] for c in cases)
    closest_mean = float(np.mean([c["selected_mae"]["closest"] for c in cases]))
    corner_mean = float(np.mean([c["selected_mae"]["by_points"] for c in cases]))
    mean_pred = float(np.mean([c["mean_prediction_mae"] for c in cases]))

    # Symmetric bumps: both velocity signs must appear among the samples.
    mask = mask_for_task(TaskId.TASK1, (2, grid.n_time, grid.n_space))
    both_signs = 0
    n_symmetric = 10
    for i in range(n_symmetric):
        rng = derive_rng(SEED, 108, i)
        params = SweInitParams(
            h_in=float(rng.uniform(1.2, 5.2)),
            epsilon=float(rng.uniform(0.3, 1.0)),
            x0=0.0,
            sigma=float(rng.uniform(0.4, 2.0)),
            hu0=float(rng.uniform(-2.2, 2.2)),
        )
        config = SweConfig(boundary=Boundary.OUTFLOW, ic_family=IcFamily.DAM_BREAK)
        truth = swe_solve(config, swe_init_initial(params, grid), grid)
        target = normalize(truth, manifest.stats).data.astype(np.float32)
        samples = draw_samples(init_ckpt, target, mask, HEUN, derive_rng(SEED, 109, i), 100)
        denorm_u = samples[:, 1] * manifest.stats.std[1] + manifest.stats.mean[1]
        initial_velocity = denorm_u[:, 0, :].mean(axis=1)
        if initial_velocity.min() < 0.0 < initial_velocity.max():
            both_signs += 1

    ok = (
        closest_wins >= int(np.ceil(0.9 * len(cases)))
        and both_signs >= int(np.ceil(0.8 * n_symmetric))
        and closest_mean < corner_mean < mean_pred
    )
    report(
        8, ok,
        f"closest<mean on {closest_wins}/{len(cases)} cases; both signs in "
        f"{both_signs}/{n_symmetric} symmetric cases; closest {closest_mean:.4f} "
        f"< corners {corner_mean:.4f} < mean {mean_pred:.4f}",
    )


def test_criterion_09_mae_pde_correlation(init_task1_cases):
    cases = init_task1_cases
    median_spearman = float(np.median([c["spearman"] for c in cases]))
    pde_wins = sum(c["selected_mae"]["by_pde"] < c["mean_prediction_mae"] for c in cases)
    ok = median_spearman > 0.3 and pde_wins >= int(np.ceil(0.7 * len(cases)))
    report(
        9, ok,
        f"median spearman {median_spearman:.3f} (> 0.3); residual-selected beats mean "
        f"prediction on {pde_wins}/{len(cases)} cases",
    )


def test_criterion_10_repaint_vs_conditional(swe_orig_data, mixed_ckpt, unconditional_ckpt):
    fields, manifest = swe_orig_data
    case_indices = manifest.splits["test"][:4]
    repaint = SamplerConfig(mode="repaint", n_steps=100, jump_length=10, n_resample=3)
    mixed_cases = evaluate_task(mixed_ckpt, fields, manifest, TaskId.TASK1, case_indices, 16, stream=4)
    repaint_cases = evaluate_task(
        unconditional_ckpt, fields, manifest, TaskId.TASK1, case_indices, 16,
        sampler=repaint, stream=4,
    )
    mixed_mae = float(np.mean([c["mae_mean"] for c in mixed_cases]))
    repaint_mae = float(np.mean([c["mae_mean"] for c in repaint_cases]))
    ok = mixed_mae <= repaint_mae
    report(10, ok, f"mixed-conditional MAE {mixed_mae:.4f} <= inference-only MAE {repaint_mae:.4f}")


def test_criterion_11_kalman_sanity():
    grid = Grid(64, 64, -0.5, 0.5, 0.0, 0.128)
    g, h_ref = 1.0, 1.5
    m = linearize_swe(h_ref, 0.0, g, grid).toarray()
    n = grid.n_space
    rng = derive_rng(SEED, 111)
    momentum = 0.01 * rng.standard_normal(n)
    momentum -= momentum.mean()
    state = np.concatenate([0.01 * rng.standard_normal(n), momentum])
    states = [state]
    for _ in range(grid.n_time - 1):
        states.append(m @ states[-1])
    trajectory = np.stack(states)
    observations = h_ref + trajectory[:, :n]
    field, diag = kf_reconstruct(observations, grid, g=g, h_ref=h_ref, q_noise=0.0, r_noise=1e-12)
    u_true = trajectory[:, n:] / (h_ref + trajectory[:, :n])
    linear_err = float(np.abs(field.channel("u")[grid.n_time // 2 :] - u_true[grid.n_time // 2 :]).max())

    mask = mask_for_task(TaskId.TASK1, (2, grid.n_time, grid.n_space))
    kf_wins = 0
    min_eig = diag.min_covariance_eigenvalue
    for trial in range(5):
        bump = 0.02 * np.sin(2 * np.pi * (np.arange(n) / n) * (1 + trial % 3))
        h0 = 1.5 + bump + 0.005 * rng.standard_normal(n)
        truth = swe_solve(SweConfig(g=g), (h0, np.zeros(n)), grid)
        target = truth.data.astype(np.float64)
        reconstructed, d2 = kf_reconstruct(truth.channel("h"), grid, g=g)
        min_eig = min(min_eig, d2.min_covariance_eigenvalue)
        kf_mae = mae_over_generated(reconstructed.data, target, mask)
        mean_mae = mae_over_generated(np.stack([target[0], np.zeros_like(target[1])]), target, mask)
        kf_wins += kf_mae < mean_mae
    ok = linear_err < 1e-6 and kf_wins == 5 and min_eig >= -1e-9
    report(
        11, ok,
        f"linear-data error {linear_err:.2e}, beats mean predictor {kf_wins}/5, "
        f"min covariance eig {min_eig:.1e}",
    )


def test_criterion_12_reproducibility(tmp_path):
    doc = {
        "system": "swe_orig",
        "seed": 21,
        "out_dir": str(tmp_path / "a"),
        "grid": {"n_space": 16, "n_time": 16, "x_min": -0.5, "x_max": 0.5, "t_min": 0.0, "t_max": 0.128},
        "dataset": {"n_instances": 10, "split_fractions": [0.6, 0.2, 0.2]},
        "model": {"base_width": 16, "depth": 2, "embedding_dim": 32},
        "train": {"iterations": 20, "batch_size": 4, "ema_decay": 0.99},
        "diffusion": {"edm": {"sigma_data": 1.0}},
        "sampler": {"n_steps": 4},
        "evaluate": {"n_samples": 3, "max_cases": 2},
    }
    hashes = []
    for run in ("a", "b"):
        doc["out_dir"] = str(tmp_path / run)
        config_path = tmp_path / f"{run}.json"
        config_path.write_text(json.dumps(doc))
        assert cli_main(["generate", "--config", str(config_path)]) == 0
        assert cli_main(["train", "--config", str(config_path)]) == 0
        assert cli_main(["evaluate", "--config", str(config_path)]) == 0
        payload = b"".join(
            (tmp_path / run / name).read_bytes()
            for name in (
                "report.json", "per_case_metrics.csv", "telemetry.jsonl",
                "sample_scatter.csv", "correlation_histogram.csv", "residual_distribution.csv",
            )
        )
        hashes.append(payload)
    ok = hashes[0] == hashes[1]
    report(12, ok, "independent re-runs produced byte-identical reports and telemetry")
