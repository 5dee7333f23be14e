"""Command-line front end: ``dipv {descriptor,verify,bench,experiment}``.

Exit codes: 0 success, 1 verification failure, 2 I/O error, 64 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from dipv.errors import ConfigError, InvalidInput
from dipv.geometry import (
    PointCloud,
    Rotation,
    apply_rotation,
    build_knn,
    center_and_scale,
    random_rotation_so3,
)
from dipv.io import CloudFileError, read_cloud
from dipv.local import local_dot_products
from dipv.spectrum import (
    DEFAULT_CHUNK,
    DEFAULT_F_RANGE,
    DEFAULT_M,
    DEFAULT_N_DIR,
    cost_model,
    energy_spectrum,
    error_report,
    fibonacci_directions,
    frequency_grid,
    normalize_profile,
    spectrum_csv,
    spherical_fourier,
)

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64

INVARIANT_TOL = 1e-9

log = logging.getLogger("dipv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _spectrum_flags(p):
    p.add_argument("--n-dir", type=int, default=DEFAULT_N_DIR, help="number of sphere directions")
    p.add_argument("--f-min", type=float, default=DEFAULT_F_RANGE[0])
    p.add_argument("--f-max", type=float, default=DEFAULT_F_RANGE[1])
    p.add_argument("--m", type=int, default=DEFAULT_M, help="number of frequency radii")
    p.add_argument("--grid", choices=("linear", "log"), default="linear")
    p.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dipv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("descriptor", help="write the energy spectrum and G(r) of a cloud as CSV")
    p.add_argument("input", help="point file (.xyz, .off, .ply)")
    _spectrum_flags(p)
    p.add_argument("--raw", action="store_true", help="skip centring and unit-radius scaling")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("verify", help="check rotation invariance of the local and global descriptors")
    p.add_argument("input")
    _spectrum_flags(p)
    p.add_argument("--k", type=int, default=12, help="neighbours per point")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--self-test", action="store_true", help="inject a non-orthogonal 'rotation' (must fail)")
    p.add_argument("--out", help="also write the per-trial table as CSV")

    p = sub.add_parser("bench", help="time spherical_fourier and check linear scaling")
    p.add_argument("--n-list", type=_int_list, default=[1024, 2048, 4096, 8192])
    p.add_argument("--m-list", type=_int_list, default=[64, 128, 256, 512])
    p.add_argument("--l-list", type=_int_list, default=[64, 128, 256, 512])
    p.add_argument("--chunk-list", type=_int_list, default=[1, 7, 16, 64])
    p.add_argument("--l-max", type=int, default=None, help="harmonic order for the flop model (default: L)")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing CSV (default: stdout)")

    p = sub.add_parser("experiment", help="train and evaluate from a JSON config")
    p.add_argument("config", help="ExperimentConfig JSON file")
    p.add_argument("--k", type=int, dest="k_neighbors")
    p.add_argument("--agg", choices=("dlp", "sap"), dest="aggregation")
    p.add_argument("--fusion", choices=("ca", "gate", "concat"))
    p.add_argument("--protocol", choices=("zz", "zso3", "so3so3"))
    p.add_argument("--n-dir", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--grid", choices=("linear", "log"))
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results", help="output directory")
    return parser


def _spectrum_setup(args):
    for name in ("n_dir", "m", "chunk_size"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    try:
        freqs = frequency_grid(args.f_min, args.f_max, args.m, args.grid)
    except InvalidInput as exc:
        raise UsageError(str(exc)) from None
    return fibonacci_directions(args.n_dir), freqs


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


# ------------------------------------------------------------------ commands


def cmd_descriptor(args) -> int:
    dirs, freqs = _spectrum_setup(args)
    cloud = read_cloud(args.input)
    if not args.raw:
        cloud = center_and_scale(cloud)
    spec = spherical_fourier(cloud, dirs, freqs, args.chunk_size)
    _write(spectrum_csv(spec, dirs), args.out)
    return EXIT_OK


def _corrupt(rot: Rotation) -> Rotation:
    return Rotation(rot.matrix @ np.diag([1.0, 1.0, 1.1]), validate=False)


def cmd_verify(args) -> int:
    dirs, freqs = _spectrum_setup(args)
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    cloud = center_and_scale(read_cloud(args.input))
    if args.trials == 0:
        print("warning: trials=0, nothing to check (vacuous pass)", file=sys.stderr)
        return EXIT_OK
    k = min(args.k, len(cloud) - 1)
    if k != args.k:
        print(f"warning: cloud has {len(cloud)} points, using k={k}", file=sys.stderr)

    graph = build_knn(cloud, k) if k >= 1 else None
    inv0 = local_dot_products(cloud, graph).values if graph else None
    spec0 = spherical_fourier(cloud, dirs, freqs, args.chunk_size)
    g0 = normalize_profile(spec0.radial_profile)
    report = error_report(spec0, len(dirs))
    # both estimates lie within the bound of the same continuum profile
    g_tol = 2.0 * float(np.nanmax(report.bound_normalized)) if np.any(np.isfinite(report.bound_normalized)) else 0.0

    rng = np.random.default_rng(np.uint64(args.seed))
    rows = ["trial,l2dp_max_dev,g_hat_max_dev,g_hat_bound,pass"]
    failures = 0
    for t in range(args.trials):
        rot = random_rotation_so3(rng)
        if args.self_test:
            rot = _corrupt(rot)
        moved = apply_rotation(cloud, rot)
        dev_inv = 0.0
        if graph is not None:
            dev_inv = float(np.max(np.abs(local_dot_products(moved, graph).values - inv0)))
        e1 = energy_spectrum(moved, dirs, freqs, args.chunk_size)
        g1 = normalize_profile(e1.mean(axis=1))
        finite = np.isfinite(g0) & np.isfinite(g1)
        dev_g = float(np.max(np.abs(g1 - g0)[finite])) if np.any(finite) else 0.0
        ok = dev_inv <= INVARIANT_TOL and dev_g <= g_tol
        failures += not ok
        rows.append(f"{t},{dev_inv:.6e},{dev_g:.6e},{g_tol:.6e},{int(ok)}")
    table = "\n".join(rows) + "\n"
    if args.out:
        _write(table, args.out)
    status = "PASS" if failures == 0 else "FAIL"
    if failures or args.verbose:
        sys.stdout.write(table)
    print(f"{status}: {args.trials - failures}/{args.trials} trials within tolerance "
          f"(L2DP <= {INVARIANT_TOL:g}, normalized G <= {g_tol:.3e})")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def _time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def loglog_slope(xs, ts) -> float:
    return float(np.polyfit(np.log(xs), np.log(ts), 1)[0])


def run_bench(n_list, m_list, l_list, chunk_list, l_max=None, repeats=5, seed=0):
    """One-factor sweeps around the lower median of each list.

    Returns (csv text, {axis: slope}, chunk checksums agree).
    """
    for name, vals in (("n", n_list), ("m", m_list), ("l", l_list), ("chunk", chunk_list)):
        if not vals or min(vals) < 1:
            raise UsageError(f"--{name}-list needs positive entries")
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")
    rng = np.random.default_rng(np.uint64(seed))
    base = {"n": sorted(n_list)[(len(n_list) - 1) // 2], "m": sorted(m_list)[(len(m_list) - 1) // 2],
            "l": sorted(l_list)[(len(l_list) - 1) // 2]}
    clouds = {}

    def cloud_of(n):
        if n not in clouds:
            clouds[n] = center_and_scale(PointCloud(rng.normal(size=(n, 3))))
        return clouds[n]

    rows = ["sweep,n,m,l,chunk_size,seconds,flops_dasft,flops_sh,spectrum_sha256"]
    times = {"n": [], "m": [], "l": []}

    def measure(sweep, n, m, l, chunk):
        cloud, dirs, freqs = cloud_of(n), fibonacci_directions(l), frequency_grid(0.0, 12.0, m)
        sec = _time_call(lambda: spherical_fourier(cloud, dirs, freqs, chunk), repeats)
        e = spherical_fourier(cloud, dirs, freqs, chunk).energies
        digest = hashlib.sha256(np.ascontiguousarray(e).tobytes()).hexdigest()
        fd, fs, _ = cost_model(n, m, l, l if l_max is None else l_max)
        rows.append(f"{sweep},{n},{m},{l},{chunk},{sec:.6e},{fd},{fs},{digest}")
        return sec, digest

    for axis, vals in (("n", n_list), ("m", m_list), ("l", l_list)):
        for v in vals:
            size = dict(base, **{axis: v})
            times[axis].append(measure(axis, size["n"], size["m"], size["l"], DEFAULT_CHUNK)[0])
    digests = {measure("chunk", base["n"], base["m"], base["l"], c)[1] for c in chunk_list}
    slopes = {
        axis: loglog_slope(vals, times[axis]) if len(set(vals)) > 1 else float("nan")
        for axis, vals in (("n", n_list), ("m", m_list), ("l", l_list))
    }
    return "\n".join(rows) + "\n", slopes, len(digests) == 1


def cmd_bench(args) -> int:
    if args.l_max is not None and args.l_max < 0:
        raise UsageError("--l-max must be >= 0")
    text, slopes, chunks_ok = run_bench(
        args.n_list, args.m_list, args.l_list, args.chunk_list, args.l_max, args.repeats, args.seed
    )
    _write(text, args.out)
    ok = chunks_ok
    for axis, s in slopes.items():
        good = bool(np.isnan(s) or abs(s - 1.0) <= 0.2)
        ok &= good
        print(f"slope[{axis.upper()}] = {s:.3f} {'ok' if good else 'outside 1.0 +/- 0.2'}", file=sys.stderr)
    print(f"chunk checksums {'identical' if chunks_ok else 'DIFFER'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_experiment(args) -> int:
    from dipv.pipeline import ExperimentConfig, run_experiment

    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError({"<root>": f"not valid JSON: {exc}"}) from None
    if not isinstance(data, dict):
        raise ConfigError({"<root>": "config must be a JSON object"})
    overrides = {
        k: getattr(args, k)
        for k in ("k_neighbors", "aggregation", "fusion", "protocol", "n_dir", "m", "grid", "chunk_size", "seed")
        if getattr(args, k) is not None
    }
    cfg = ExperimentConfig.from_dict({**data, **overrides})
    result = run_experiment(cfg, progress=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": cfg.to_dict(),
        "metrics": result.metrics.to_dict(),
        "seconds": round(result.seconds, 3),
        "params_sha256": result.state.params.checksum(),
        "final_loss": result.state.losses[-1] if result.state.losses else None,
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / "confusion.csv").write_text(result.metrics.confusion_csv())
    print(f"{cfg.protocol} {cfg.fusion}: accuracy {result.metrics.accuracy:.4f} ({result.seconds:.1f}s) -> {out}")
    return EXIT_OK


COMMANDS = {
    "descriptor": cmd_descriptor,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dipv: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CloudFileError, OSError) as exc:
        print(f"dipv: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, InvalidInput) as exc:
        print(f"dipv: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
