"""Head recovery and top-k / coefficient-sign ablation on planted synthetic traces.

    python3 scripts/synthetic_recovery.py --seed 0 --n-traces 2000
"""

import argparse
import json

import numpy as np

from lookback.classifier import FeatureLayout, TrainConfig, auroc, predict_many, select_heads, train_arrays
from lookback.features import trace_lookback
from lookback.errors import InsufficientHeadsError
from lookback.synthetic import planted_head_dataset


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-traces", type=int, default=2000)
    ap.add_argument("--num-layers", type=int, default=4)
    ap.add_argument("--num-heads", type=int, default=8)
    ap.add_argument("--shift", type=float, default=0.08)
    args = ap.parse_args()

    L, H = args.num_layers, args.num_heads
    ds = planted_head_dataset(args.n_traces, L, H, shift=args.shift, seed=args.seed)
    X = np.stack([trace_lookback(t).mean(axis=0) for t in ds.traces])
    y = ds.labels.astype(float)
    half = len(y) // 2
    Xtr, ytr, Xte, yte = X[:half], y[:half], X[half:], y[half:]

    clf = train_arrays(Xtr, ytr, TrainConfig(), FeatureLayout.full(L, H))
    planted = set(ds.positive_heads) | set(ds.negative_heads)
    top = select_heads(clf, len(planted), "largest_magnitude").indices
    print(f"all heads      AUROC {auroc(predict_many(clf, Xte), yte):.4f}")
    print(f"planted heads  {sorted(planted)}")
    print(f"recovered      {len(set(top) & planted)}/{len(planted)} in top-{len(planted)}")

    results = {}
    for mode in ("largest_magnitude", "most_positive", "most_negative"):
        for k in (1, 3, 5, 8, 10, 16):
            try:
                idx = list(select_heads(clf, k, mode).indices)
            except InsufficientHeadsError:
                continue
            sub = train_arrays(Xtr[:, idx], ytr, TrainConfig(), FeatureLayout(L, H, tuple(idx)))
            results[f"{mode}@{k}"] = auroc(predict_many(sub, Xte[:, idx]), yte)
    for key, val in results.items():
        print(f"{key:24s} {val:.4f}")
    print(json.dumps({"seed": args.seed, "ablation": results}, sort_keys=True))


if __name__ == "__main__":
    main()
