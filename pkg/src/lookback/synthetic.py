"""Synthetic traces with prescribed lookback ratios.

Given a target ratio r at step t with N context tokens, the aggregates
a = 1 / (N + (t-1) (1-r)/r) and b = a (1-r)/r satisfy both r = a/(a+b) and
N a + (t-1) b = 1, so the traces pass full validation. Step 1 always has
ratio 1 (there are no generated tokens to attend to).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import AttentionTrace, TraceMeta


def aggregates_from_ratios(ratios: np.ndarray, context_len: int) -> tuple[np.ndarray, np.ndarray]:
    """(A_context, A_new) arrays of shape (T, F) realizing ``ratios`` (T, F).

    Ratios must lie in (0, 1]; the first row is forced to 1.
    """
    r = np.array(ratios, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError("ratios must be (T, F)")
    if r.size and (np.any(r <= 0.0) or np.any(r > 1.0)):
        raise ValueError("ratios must lie in (0, 1]")
    T = r.shape[0]
    if T:
        r[0] = 1.0
    prev = np.arange(T, dtype=np.float64)[:, None]  # t - 1
    odds = (1.0 - r) / r
    a_ctx = 1.0 / (context_len + prev * odds)
    a_new = a_ctx * odds
    return a_ctx, a_new


def trace_from_ratios(
    ratios: np.ndarray,
    num_layers: int,
    num_heads: int,
    context_len: int,
    example_id: str = "synthetic",
    model_id: str = "synthetic",
    tokens: list[int] | None = None,
) -> AttentionTrace:
    ctx, new = aggregates_from_ratios(ratios, context_len)
    meta = TraceMeta(example_id, model_id, num_layers, num_heads, context_len, ctx.shape[0])
    texts = None if tokens is None else [f"w{t}" for t in tokens]
    return AttentionTrace.from_arrays(meta, ctx, new, tokens, texts)


@dataclass
class PlantedDataset:
    traces: list[AttentionTrace]
    labels: np.ndarray
    positive_heads: tuple[int, ...]
    negative_heads: tuple[int, ...]


def planted_head_dataset(
    n_traces: int = 2000,
    num_layers: int = 4,
    num_heads: int = 8,
    n_positive: int = 5,
    n_negative: int = 3,
    n_steps: int = 16,
    context_len: int = 32,
    shift: float = 0.08,
    step_noise: float = 0.15,
    example_noise: float = 0.05,
    seed: int = 0,
) -> PlantedDataset:
    """Traces labeled 1/0 where hallucinated (0) traces depress the ratios of
    the planted positive heads and raise the planted negative heads.

    Per-head baselines and per-example offsets are random; per-step noise is
    added on top, then ratios are clipped into [0.02, 0.98].
    """
    rng = np.random.default_rng(seed)
    F = num_layers * num_heads
    planted = rng.choice(F, size=n_positive + n_negative, replace=False)
    pos = tuple(sorted(int(i) for i in planted[:n_positive]))
    neg = tuple(sorted(int(i) for i in planted[n_positive:]))
    base = rng.uniform(0.3, 0.7, size=F)
    labels = rng.permutation(np.arange(n_traces) % 2)
    direction = np.zeros(F)
    direction[list(pos)] = -1.0
    direction[list(neg)] = 1.0
    traces = []
    for i in range(n_traces):
        mean = base + example_noise * rng.standard_normal(F)
        if labels[i] == 0:
            mean = mean + shift * direction
        r = mean + step_noise * rng.standard_normal((n_steps, F))
        r = np.clip(r, 0.02, 0.98)
        traces.append(trace_from_ratios(r, num_layers, num_heads, context_len, f"ex{i:05d}"))
    return PlantedDataset(traces, labels.astype(int), pos, neg)
