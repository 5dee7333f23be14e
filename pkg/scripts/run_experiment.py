"""Train fusion variants and evaluate them under every protocol.

    python scripts/run_experiment.py --config configs/default.json \
        --fusions ca gate dasft --out results/ablation.json

Each fusion is trained twice (z and SO(3) training rotations); the z model is
evaluated under z/z and z/SO(3), the SO(3) model under SO(3)/SO(3). The
training-free 1-NN descriptor baseline is added with --baseline.
"""
import argparse
import json
import time
from pathlib import Path

from dipv.pipeline import ExperimentConfig, evaluate, knn_descriptor_baseline, make_splits, train


def run(cfg, fusions, baseline):
    rows = []
    for fusion in fusions:
        for protocols in (("z/z", "z/SO(3)"), ("SO(3)/SO(3)",)):
            run_cfg = cfg.replace(fusion=fusion, protocol=protocols[-1])
            train_set, test_set = make_splits(run_cfg)
            t0 = time.perf_counter()
            state = train(run_cfg, train_set)
            train_secs = time.perf_counter() - t0
            for protocol in protocols:
                t0 = time.perf_counter()
                m = evaluate(state, run_cfg.replace(protocol=protocol), test_set)
                rows.append({
                    "fusion": fusion, "protocol": protocol, "accuracy": m.accuracy,
                    "train_seconds": round(train_secs, 1), "eval_seconds": round(time.perf_counter() - t0, 1),
                    "confusion": m.confusion.tolist(),
                })
                print(f"{fusion:6s} {protocol:12s} acc {m.accuracy:.4f}  (train {train_secs:.0f}s)", flush=True)
    if baseline:
        for protocol in ("z/z", "z/SO(3)", "SO(3)/SO(3)"):
            run_cfg = cfg.replace(protocol=protocol)
            train_set, test_set = make_splits(run_cfg)
            m = knn_descriptor_baseline(train_set, test_set, run_cfg)
            rows.append({"fusion": "1nn-descriptor", "protocol": protocol, "accuracy": m.accuracy})
            print(f"1-NN   {protocol:12s} acc {m.accuracy:.4f}", flush=True)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.json")
    ap.add_argument("--fusions", nargs="+", default=["ca", "gate", "dasft"])
    ap.add_argument("--seed", type=int)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--baseline", action="store_true")
    ap.add_argument("--out", default="results/experiment.json")
    args = ap.parse_args()
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    rows = run(cfg, args.fusions, args.baseline)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"config": cfg.to_dict(), "runs": rows}, indent=2) + "\n")


if __name__ == "__main__":
    main()
