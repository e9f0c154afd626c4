"""Acceptance criteria 1-9.

Each test prints one ``criterion N: PASS|FAIL`` line (also repeated in the
terminal summary).  The Monte Carlo studies behind criteria 4-7 run once per
session with one worker; criterion 9 reruns them with two workers and
compares the CSV artifacts byte for byte.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from homog.config import RunConfig
from homog.langevin_core import DriftSpec, ModelParams, eval_potential
from homog.mc_estimator import wasserstein_1d
from homog.presets import get_preset
from homog.spectral.basis import Basis
from homog.spectral.operator import assemble_generator, embed
from homog.spectral.solver import (invariant_density, smoluchowski_diffusivity_1d,
                                   solve_diffusivity, velocity_mean)
from homog import studies

REPORT = []

SEED = 20241014
CROSS_METHOD = dict(eps=0.05, T_final=100.0, records=20)
MARTINGALE = dict(eps=0.1, T=1.0, records=100)


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    REPORT.append(line)
    return ok


def configs():
    return {
        "cross_method": {"schema": 1, "model": {"preset": "cosine-gradient"},
                         "mc": {"dt": 0.01, "paths": 10000, "seed": SEED}},
        "tau_sweep": {"schema": 1, "model": {"preset": "cosine-gradient"},
                      "tau_ladder": [1.0, 0.1, 0.01, 0.001]},
        "rate_study": {"schema": 1, "model": {"preset": "flat"},
                       "mc": {"dt": 0.01, "paths": 10000, "seed": SEED, "p": 2, "k": [1.0],
                              "eps_grid": [0.4, 0.2, 0.1, 0.05]}},
        "martingale": {"schema": 1, "model": {"preset": "flat"},
                       "mc": {"dt": 0.01, "paths": 10000, "seed": SEED, "k": [1.0]}},
    }


def run_studies(root: Path, workers: int) -> dict:
    out = {}
    for name, doc in configs().items():
        cfg = RunConfig.from_dict(doc, workers=workers, out=str(root / name))
        t0 = time.perf_counter()
        if name == "cross_method":
            res = studies.cross_method_study(cfg, cfg.output_dir, **CROSS_METHOD)
        elif name == "tau_sweep":
            res = studies.tau_sweep(cfg, cfg.output_dir)
        elif name == "rate_study":
            res = studies.rate_study(cfg, cfg.output_dir)
        else:
            res = studies.martingale_study(cfg, cfg.output_dir, **MARTINGALE)
        res["runtime"] = time.perf_counter() - t0
        out[name] = res
    return out


@pytest.fixture(scope="module")
def study_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def single_worker(study_root):
    return run_studies(study_root / "workers1", workers=1)


def test_criterion_1_zero_drift_exactness():
    t0 = time.perf_counter()
    worst_k2 = worst_phi = 0.0
    for n, cut in ((1, (16, 128)), (2, (2, 4))):
        p = ModelParams(0.5, 1.3, n)
        sol = solve_diffusivity(DriftSpec.zero(n), p, *cut)
        b = sol.operator.basis
        k0 = int(b.fourier_index(np.zeros(n, dtype=np.int64)))
        worst_k2 = max(worst_k2, float(np.max(np.abs(sol.K2 - p.sigma**2 * np.eye(n)))))
        for j, phi in enumerate(sol.cell.phi):
            a = np.zeros(n, dtype=np.int64)
            a[j] = 1
            exact = np.zeros(b.shape, dtype=complex)
            exact[k0, int(b.hermite_index(a))] = np.sqrt(p.tau) * b.scale  # sqrt(tau) y_j
            worst_phi = max(worst_phi, float(np.max(np.abs(phi.coeffs - exact))))
    elapsed = time.perf_counter() - t0
    ok = worst_k2 < 1e-12 and worst_phi < 1e-12 and elapsed < 1.0
    assert record(1, ok, f"K2 err {worst_k2:.1e}, Phi err {worst_phi:.1e}, {elapsed:.2f} s")


def test_criterion_2_gibbs_density():
    t0 = time.perf_counter()
    drift = get_preset("cosine-gradient")
    p = ModelParams(1.0, 1.0, 1)
    rho = invariant_density(assemble_generator(drift, p, Basis(1, 16, 30, p.sigma)))
    xs = (np.arange(64) + 0.5) / 64
    ys = np.linspace(-3.0, 3.0, 64)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    x, y = X.reshape(-1, 1), Y.reshape(-1, 1)
    zm, _ = integrate.quad(lambda t: np.exp(-2 * eval_potential(drift, np.array([[t]]))[0]),
                           0, 1, epsabs=0, epsrel=1e-13)
    gibbs = np.exp(-(2 * eval_potential(drift, x) + y[:, 0] ** 2)) / (zm * np.sqrt(np.pi))
    err = float(np.max(np.abs(rho.density(x, y) - gibbs)) / np.max(gibbs))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-6 and elapsed < 10.0
    assert record(2, ok, f"relative Linf {err:.1e}, {elapsed:.2f} s")


PRESET_CASES = [("flat", 1), ("flat", 2), ("cosine-gradient", 1), ("two-mode-nongradient", 2)]
DOUBLING = {1: ((16, 128), (32, 256)), 2: ((4, 40), (8, 80))}


def test_criterion_3_solver_self_consistency():
    centering = residual = cauchy = 0.0
    details = []
    for name, n in PRESET_CASES:
        drift = get_preset(name, n)
        p = ModelParams(1.0, 1.0, n)
        base, doubled = DOUBLING[n]
        a = solve_diffusivity(drift, p, *base, check_gap=False)
        b = solve_diffusivity(drift, p, *doubled, check_gap=False)
        for sol in (a, b):
            centering = max(centering, float(np.linalg.norm(
                velocity_mean(sol.rho) - np.sqrt(p.tau) * sol.v_bar)))
            residual = max(residual, float(sol.result.residual))
        diff = float(np.max(np.abs(a.K2 - b.K2)))
        cauchy = max(cauchy, diff)
        details.append(f"{name}/{n}d {diff:.1e}")
    ok = centering < 1e-10 and residual < 1e-9 and cauchy < 1e-8
    assert record(3, ok, f"centering {centering:.1e}, cell residual {residual:.1e}, "
                         f"Cauchy {', '.join(details)}")


def test_criterion_4_cross_method(single_worker):
    res = single_worker["cross_method"]
    est = res["estimate"]
    k2 = float(res["spectral"][0, 0])
    z = (float(est.K2[0, 0]) - k2) / float(est.stderr[0, 0])
    ok = abs(z) <= 3.0 and res["runtime"] <= 600
    assert record(4, ok, f"spectral {k2:.6f}, MC {est.K2[0, 0]:.6f} +- {est.stderr[0, 0]:.6f}, "
                         f"z {z:+.2f}, {res['runtime']:.0f} s")


def test_criterion_5_smoluchowski_limit(single_worker):
    res = single_worker["tau_sweep"]
    tau, k2, ref, rel = res["rows"][-1][:4]
    direct = smoluchowski_diffusivity_1d(get_preset("cosine-gradient"), 1.0)
    ok = tau == 1e-3 and rel < 0.02 and ref == direct and res["runtime"] < 60
    assert record(5, ok, f"K2(tau=1e-3) {k2:.6f} vs {ref:.6f}, rel {rel:.2e}, {res['runtime']:.1f} s")


def test_criterion_6_rate_study(single_worker):
    res = single_worker["rate_study"]
    r = res["result"]
    ok = r.monotone and r.alpha_hat >= 0.3 and all(s == 10000 for s in r.sample_sizes) \
        and res["runtime"] <= 1800
    dists = ", ".join(f"{e:g}:{d:.4f}" for e, d in zip(r.eps_grid, r.distances))
    assert record(6, ok, f"W2 {dists}; alpha_hat {r.alpha_hat:.2f} "
                         f"CI [{r.alpha_ci[0]:.2f}, {r.alpha_ci[1]:.2f}], {res['runtime']:.0f} s")


def test_criterion_7_martingale(single_worker):
    rep = single_worker["martingale"]["report"]
    ens = single_worker["martingale"]["ensemble"]
    ok = rep.qv_relative_error < 0.05 and rep.identity_error < 1e-12 and ens.path_count == 10000
    assert record(7, ok, f"QV {rep.qv:.4f} vs {rep.qv_target:.4f} (rel {rep.qv_relative_error:.2e}), "
                         f"identity residual {rep.identity_error:.1e}")


def test_criterion_8_distance_kernel(rng=np.random.default_rng(8)):
    m, s = 0.35, 0.8
    point = wasserstein_1d(np.full(100_000, m), 0.0, s**2, p=2)
    err_point = abs(point - np.sqrt(m**2 + s**2))
    x = rng.normal(0.0, s, 100_000)
    c = 1.7
    err_shift = abs(wasserstein_1d(x + c, c, s**2) - wasserstein_1d(x, 0.0, s**2))
    ok = err_point < 1e-3 and err_shift < 1e-12
    assert record(8, ok, f"point-mass err {err_point:.1e}, translation err {err_shift:.1e}")


def test_criterion_9_determinism(single_worker, study_root):
    run_studies(study_root / "workers2", workers=2)
    a, b = study_root / "workers1", study_root / "workers2"
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    same = [(a / f).read_bytes() == (b / f).read_bytes() for f in files]
    other = sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    ok = bool(files) and files == other and all(same)
    assert record(9, ok, f"{sum(same)}/{len(files)} CSV artifacts byte-identical across 1 and 2 workers")
