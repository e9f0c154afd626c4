"""Monte Carlo provenance run for the overdamped reference diffusivity.

Simulates dz = v(z) dt + sigma dbeta for the cosine-gradient preset with a
stochastic Heun scheme, starting from the Gibbs law exp(-2V/sigma^2), and
records the mean squared displacement slope with its standard error in
tests/fixtures/smoluchowski_mc.json.  Run once; the tests only read the
result.

    python3 scripts/smoluchowski_mc.py [--paths 10000] [--T 1000] [--dt 2e-3]
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from homog.langevin_core import eval_drift, eval_potential
from homog.presets import cosine_gradient
from homog.rng import stream


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=10000)
    ap.add_argument("--T", type=float, default=1000.0)
    ap.add_argument("--dt", type=float, default=2e-3)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"
                                         / "smoluchowski_mc.json"))
    args = ap.parse_args()
    drift = cosine_gradient()
    sigma = args.sigma
    rng = stream(args.seed)

    # closed form of the preset drift, v = -V' = pi sin(2 pi z); checked
    # against the general evaluator once, then used in the hot loop
    def v(z):
        return np.pi * np.sin(2 * np.pi * z)

    probe = np.linspace(0.0, 1.0, 101)
    assert np.allclose(v(probe), eval_drift(drift, probe[:, None])[:, 0], atol=1e-12)

    # Gibbs start by rejection from uniform: exp(-2V/sigma^2) <= exp(2 max|V| / sigma^2)
    vmax = 0.5
    z = np.empty(0)
    while z.size < args.paths:
        cand = rng.random(4 * args.paths)
        w = np.exp(-2.0 * eval_potential(drift, cand[:, None]) / sigma**2) / np.exp(2 * vmax / sigma**2)
        z = np.concatenate([z, cand[rng.random(cand.size) < w]])
    z0 = z[: args.paths].copy()
    z = z0.copy()
    steps = int(round(args.T / args.dt))
    h = args.T / steps
    sq = np.sqrt(h) * sigma
    t0 = time.time()
    for _ in range(steps):
        dw = sq * rng.standard_normal(args.paths)
        f0 = v(z)
        pred = z + h * f0 + dw
        z = z + 0.5 * h * (f0 + v(pred)) + dw
    disp2 = (z - z0) ** 2 / args.T
    est = float(disp2.mean())
    se = float(disp2.std(ddof=1) / np.sqrt(args.paths))
    doc = {"drift": "cosine-gradient", "sigma": sigma, "paths": args.paths, "T": args.T, "dt": h,
           "scheme": "stochastic Heun", "seed": args.seed, "initial_law": "Gibbs",
           "K2_mc": est, "stderr": se, "runtime_s": time.time() - t0}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()
