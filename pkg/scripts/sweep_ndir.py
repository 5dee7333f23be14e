"""Rotational deviation of the standardised radial profile versus N_dir.

For each direction count the script reports the median, over synthetic
clouds with one random rotation each, of max_r |G_hat(R P) - G_hat(P)|, for
the Fibonacci lattice and for i.i.d. uniform directions, together with the
log-log slope of each column.

    python scripts/sweep_ndir.py --out results/ndir.csv
"""
import argparse
from pathlib import Path

import numpy as np

from dipv.geometry import apply_rotation, random_rotation_so3
from dipv.pipeline import generate_dataset
from dipv.spectrum import DirectionSet, energy_spectrum, fibonacci_directions, frequency_grid, normalize_profile


def deviation(cloud, rot, dirs, freqs):
    a = normalize_profile(energy_spectrum(cloud, dirs, freqs).mean(axis=1))
    b = normalize_profile(energy_spectrum(apply_rotation(cloud, rot), dirs, freqs).mean(axis=1))
    return float(np.max(np.abs(a - b)))


def iid_directions(n, seed):
    w = np.random.default_rng(seed).normal(size=(n, 3))
    return DirectionSet(w / np.linalg.norm(w, axis=1, keepdims=True))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-dir", type=int, nargs="+", default=[12, 24, 36, 60, 144, 288])
    ap.add_argument("--per-class", type=int, default=5)
    ap.add_argument("--iid-repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=103)
    ap.add_argument("--out", default="results/ndir.csv")
    args = ap.parse_args()

    clouds = [s.cloud for s in generate_dataset(args.per_class, 512, 0.01, seed=args.seed)]
    rng = np.random.default_rng(args.seed)
    rotations = [random_rotation_so3(rng) for _ in clouds]
    freqs = frequency_grid(0.0, 12.0, 32)

    rows = ["n_dir,median_fibonacci,median_iid"]
    fib, iid = [], []
    for n in args.n_dir:
        dirs = fibonacci_directions(n)
        fib.append(np.median([deviation(c, r, dirs, freqs) for c, r in zip(clouds, rotations)]))
        iid.append(np.median([
            deviation(c, r, iid_directions(n, [n, i, k]), freqs)
            for i, (c, r) in enumerate(zip(clouds, rotations))
            for k in range(args.iid_repeats)
        ]))
        rows.append(f"{n},{fib[-1]:.6e},{iid[-1]:.6e}")
        print(rows[-1], flush=True)
    logn = np.log(args.n_dir)
    print(f"slope fibonacci {np.polyfit(logn, np.log(fib), 1)[0]:.3f}, iid {np.polyfit(logn, np.log(iid), 1)[0]:.3f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
