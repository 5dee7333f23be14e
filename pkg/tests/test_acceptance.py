"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see conftest.py).
Training runs are cached for the session so the generalisation and ablation
criteria share them.
"""
import time

import numpy as np
import pytest

from dipv.cli import run_bench
from dipv.geometry import PointCloud, apply_rotation, build_knn, center_and_scale, random_rotation_so3
from dipv.local import local_dot_products
from dipv.pipeline import ExperimentConfig, evaluate, generate_dataset, make_splits, train
from dipv.spectrum import (
    SpectrumGrid,
    cost_model,
    energy_spectrum,
    error_report,
    fibonacci_directions,
    frequency_grid,
    normalize_profile,
)

from gradcheck import OPERATIONS, TOLERANCE, worst_over_trials

pytestmark = pytest.mark.acceptance

DIRS = fibonacci_directions(36)
FREQS = frequency_grid(0.0, 12.0, 32)


def _random_clouds(seed, count, n=512):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield center_and_scale(PointCloud(rng.normal(size=(n, 3)))), random_rotation_so3(rng)


def test_c1_exact_local_invariance(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for cloud, rot in _random_clouds(101, 200):
        moved = apply_rotation(cloud, rot)
        a = local_dot_products(cloud, build_knn(cloud, 12)).values
        b = local_dot_products(moved, build_knn(moved, 12)).values
        worst = max(worst, float(np.max(np.abs(a - b))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 30
    record_criterion(1, "exact local invariance", ok, f"max dev {worst:.2e} (<= 1e-9), {secs:.1f}s (< 30s)")
    assert ok


def test_c2_spectral_covariance(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for cloud, rot in _random_clouds(102, 100):
        e_rot = energy_spectrum(apply_rotation(cloud, rot), DIRS, FREQS)
        e_back = energy_spectrum(cloud, DIRS.rotated(rot), FREQS)
        worst = max(worst, float(np.max(np.abs(e_rot - e_back)) / np.max(np.abs(e_back))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 60
    record_criterion(2, "spectral covariance", ok, f"max rel dev {worst:.2e} (<= 1e-9), {secs:.1f}s (< 60s)")
    assert ok


N_DIR_SWEEP = (12, 24, 36, 60, 144)


def monte_carlo_deviations(clouds, rotations):
    """Median over clouds of max_r |G_hat(R P) - G_hat(P)| for each direction count."""
    medians = []
    for n_dir in N_DIR_SWEEP:
        dirs = fibonacci_directions(n_dir)
        devs = []
        for cloud, rot in zip(clouds, rotations):
            a = normalize_profile(energy_spectrum(cloud, dirs, FREQS).mean(axis=1))
            b = normalize_profile(energy_spectrum(apply_rotation(cloud, rot), dirs, FREQS).mean(axis=1))
            devs.append(np.max(np.abs(a - b)))
        medians.append(float(np.median(devs)))
    return np.array(medians)


def test_c3_monte_carlo_scaling(record_criterion):
    t0 = time.perf_counter()
    clouds = [s.cloud for s in generate_dataset(5, 512, 0.01, seed=103)]
    rng = np.random.default_rng(103)
    rotations = [random_rotation_so3(rng) for _ in clouds]
    med = monte_carlo_deviations(clouds, rotations)
    slope = float(np.polyfit(np.log(N_DIR_SWEEP), np.log(med), 1)[0])
    secs = time.perf_counter() - t0
    ok = -0.75 <= slope <= -0.25 and secs < 300
    record_criterion(
        3, "Monte Carlo scaling", ok,
        f"slope {slope:.3f} (want [-0.75, -0.25]); medians "
        + " ".join(f"{m:.2e}" for m in med) + f"; {secs:.1f}s",
    )
    assert ok


def test_c4_reference_arithmetic(record_criterion):
    # a 36-direction grid whose first radius spans [0.487548, 1048576] and
    # whose radial profile has population std 26573496
    row = np.linspace(0.487548, 1048576.0, 36)
    energies = np.vstack([row, np.full(36, 1.0)])
    sigma = 26573496.0
    spec = SpectrumGrid(np.array([0.0, 1.0]), energies, np.array([-sigma, sigma]))
    bound = float(error_report(spec, 36).bound_normalized[0])
    dasft, sh, ratio = cost_model(1, 32, 60, 60)
    ok = f"{bound:.4g}" == "0.003288" and (dasft, sh) == (2100, 7442) and abs(100 * ratio - 28.2) <= 0.1
    record_criterion(
        4, "reference arithmetic", ok,
        f"|dG_hat| = {bound:.6f}; flops {dasft} / {sh}; ratio {100 * ratio:.2f}%",
    )
    assert ok


def _test_clouds():
    data = generate_dataset(5, 512, 0.01, seed=105)
    return [s.cloud for s in data] + [c for c, _ in _random_clouds(105, 10)]


def test_c5_zero_frequency_law(record_criterion):
    worst = 0.0
    for cloud in _test_clouds():
        e0 = energy_spectrum(cloud, DIRS, np.array([0.0]))
        n2 = len(cloud) ** 2
        worst = max(worst, float(np.max(np.abs(e0 - n2)) / n2))
    ok = worst <= 1e-6
    record_criterion(5, "zero-frequency law", ok, f"max rel dev from N^2 {worst:.2e} (<= 1e-6)")
    assert ok


def test_c6_chunked_equivalence(record_criterion):
    worst = 0.0
    for grid in ("linear", "log"):
        freqs = frequency_grid(0.0, 12.0, 32, grid)
        for cloud in _test_clouds()[::4]:
            ref = energy_spectrum(cloud, DIRS, freqs, chunk_size=len(DIRS))
            for chunk in (1, 7, 16):
                worst = max(worst, float(np.max(np.abs(energy_spectrum(cloud, DIRS, freqs, chunk) - ref))))
    ok = worst <= 1e-12
    record_criterion(6, "chunked equivalence", ok, f"max abs dev {worst:.2e} (<= 1e-12) over chunks 1/7/16/36")
    assert ok


def test_c7_gradient_correctness(record_criterion):
    errors = {name: worst_over_trials(name, trials=50, seed=7) for name in OPERATIONS}
    worst_name = max(errors, key=errors.get)
    ok = errors[worst_name] <= TOLERANCE
    record_criterion(
        7, "gradient correctness", ok,
        f"{len(errors)} ops x 50 trials, worst {worst_name} rel err {errors[worst_name]:.2e} (<= 1e-4)",
    )
    assert ok


# ------------------------------------------------------------- training runs

_RUNS = {}


def trained(fusion, train_rotation):
    """Train once per (fusion, train rotation); returns (state, cfg, test set, seconds)."""
    key = (fusion, train_rotation)
    if key not in _RUNS:
        protocol = "z/SO(3)" if train_rotation == "z" else "SO(3)/SO(3)"
        cfg = ExperimentConfig(fusion=fusion, protocol=protocol)
        t0 = time.perf_counter()
        train_set, test_set = make_splits(cfg)
        state = train(cfg, train_set)
        _RUNS[key] = (state, cfg, test_set, time.perf_counter() - t0)
    return _RUNS[key]


def accuracy(fusion, protocol):
    train_rot = "so3" if protocol == "SO(3)/SO(3)" else "z"
    state, cfg, test_set, _ = trained(fusion, train_rot)
    t0 = time.perf_counter()
    acc = evaluate(state, cfg.replace(protocol=protocol), test_set).accuracy
    return acc, time.perf_counter() - t0


def test_c8_desk_scale_generalisation(record_criterion):
    accs, seconds = {}, {"z": 0.0, "so3": 0.0}
    for protocol in ("z/z", "z/SO(3)", "SO(3)/SO(3)"):
        accs[protocol], secs = accuracy("ca", protocol)
        seconds["so3" if protocol == "SO(3)/SO(3)" else "z"] += secs
    seconds["z"] += trained("ca", "z")[3]
    seconds["so3"] += trained("ca", "so3")[3]
    spread = 100 * (max(accs.values()) - min(accs.values()))
    ok = accs["z/SO(3)"] >= 0.90 and spread <= 3.0 and max(seconds.values()) <= 600
    record_criterion(
        8, "desk-scale generalisation", ok,
        "acc " + " / ".join(f"{p} {a:.4f}" for p, a in accs.items())
        + f"; spread {spread:.2f} pts (<= 3); runtime z-trained {seconds['z']:.0f}s, "
        f"SO(3)-trained {seconds['so3']:.0f}s (<= 600s each)",
    )
    assert ok


def test_c9_ablation_direction(record_criterion):
    acc = {f: accuracy(f, "z/SO(3)")[0] for f in ("ca", "gate", "dasft")}
    tie = 0.005
    ok = acc["ca"] + tie >= acc["gate"] and acc["gate"] + tie >= acc["dasft"]
    record_criterion(
        9, "ablation direction", ok,
        f"z/SO(3) CA {acc['ca']:.4f} >= gate {acc['gate']:.4f} >= DASFT-only {acc['dasft']:.4f} "
        "(ties within 0.5 pt)",
    )
    assert ok


def test_c10_linear_scaling(record_criterion):
    _, slopes, chunks_ok = run_bench(
        [1024, 2048, 4096, 8192], [64, 128, 256, 512], [64, 128, 256, 512], [1, 7, 16, 64], repeats=5
    )
    ok = all(abs(s - 1.0) <= 0.2 for s in slopes.values())
    record_criterion(
        10, "linear scaling", ok,
        ", ".join(f"slope[{k.upper()}] {v:.3f}" for k, v in slopes.items()) + " (1.0 +/- 0.2)"
        + f"; chunk checksums {'identical' if chunks_ok else 'differ'}",
    )
    assert ok
