"""Sweep chunk size and candidate count for guided decoding on the toy model.

Trains a detector on a toy corpus, then reports the mean detector score of the
chosen chunks versus the plain (k=1) baseline for each setting. The toy model
is randomly initialized, so the numbers only exercise the machinery.

    python3 scripts/chunk_size_sweep.py --prompts 8
"""

import argparse

import numpy as np

from lookback.classifier import FeatureLayout, train_arrays
from lookback.decoding import DecodeConfig, guided_decode
from lookback.features import trace_lookback
from lookback.toy_model import SamplerConfig, ToyModelConfig, ToyTransformer, generate


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--prompts", type=int, default=8)
    ap.add_argument("--max-new-tokens", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ToyModelConfig(vocab_size=48, d_model=16, num_layers=2, num_heads=4, max_seq_len=128, seed=args.seed)
    model = ToyTransformer(cfg)
    rng = np.random.default_rng(args.seed)
    prompts = [[int(t) for t in rng.integers(1, cfg.vocab_size, size=16)] for _ in range(args.prompts)]

    # detector: label each training generation by whether its mean lookback ratio is above the median
    feats = []
    for i in range(60):
        p = [int(t) for t in rng.integers(1, cfg.vocab_size, size=16)]
        g = generate(model, p, SamplerConfig(seed=1000 + i), args.max_new_tokens)
        feats.append(trace_lookback(g.trace).mean(axis=0))
    X = np.stack(feats)
    y = (X.mean(axis=1) > np.median(X.mean(axis=1))).astype(float)
    clf = train_arrays(X, y, layout=FeatureLayout.full(cfg.num_layers, cfg.num_heads))

    print(f"{'chunk':>5} {'k':>3} {'mean chosen score':>18}")
    for chunk in (2, 4, 8, 16):
        for k in (1, 4, 8):
            scores = []
            for j, p in enumerate(prompts):
                dc = DecodeConfig(chunk, k, args.max_new_tokens, SamplerConfig(seed=j))
                res = guided_decode(model, clf, p, dc)
                scores += [r.candidates[r.chosen_index].score for r in res.rounds]
            print(f"{chunk:>5} {k:>3} {np.mean(scores):>18.4f}")


if __name__ == "__main__":
    main()
