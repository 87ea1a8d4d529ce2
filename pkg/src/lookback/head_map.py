"""Linear maps between two models' per-head lookback activations.

A map reconstructs every source-model head from all target-model heads,
``source ~= transform @ target + intercept``, fit per example on response-
averaged lookback ratios. Both trace sets must cover the same token
sequences (decode with the source model, re-run the target model on those
outputs) and share example ids.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    EmptyDatasetError,
    LayoutError,
    RankDeficiencyError,
    ShapeError,
    TraceFormatError,
)
from .features import SpanFeatureVector, trace_lookback
from .trace import AttentionTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeadActivationMatrix:
    """Response-averaged lookback ratios, shape [num_heads_total, num_examples]."""

    matrix: np.ndarray
    example_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(self.example_ids):
            raise ShapeError(f"matrix shape {m.shape} vs {len(self.example_ids)} example ids")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "example_ids", tuple(self.example_ids))

    @property
    def num_heads(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class HeadMap:
    transform: np.ndarray  # [source_heads, target_heads]
    intercept: np.ndarray  # [source_heads]
    fit_r2: np.ndarray  # [source_heads]
    ridge: float = 0.0

    @property
    def source_heads(self) -> int:
        return self.transform.shape[0]

    @property
    def target_heads(self) -> int:
        return self.transform.shape[1]


def head_matrix(traces: Sequence[AttentionTrace]) -> HeadActivationMatrix:
    if not traces:
        raise EmptyDatasetError("head_matrix needs at least one trace")
    shape = (traces[0].meta.num_layers, traces[0].meta.num_heads)
    cols = []
    for tr in traces:
        if (tr.meta.num_layers, tr.meta.num_heads) != shape:
            raise ShapeError(
                f"trace {tr.meta.example_id!r} is {tr.meta.num_layers}x{tr.meta.num_heads}, "
                f"expected {shape[0]}x{shape[1]}"
            )
        if tr.num_steps < 1:
            raise ShapeError(f"trace {tr.meta.example_id!r} has no generated steps")
        cols.append(trace_lookback(tr).mean(axis=0))
    return HeadActivationMatrix(np.stack(cols, axis=1), [t.meta.example_id for t in traces])


def fit_head_map(
    source: HeadActivationMatrix,
    target: HeadActivationMatrix,
    ridge: float = 0.0,
    fit_intercept: bool = True,
) -> HeadMap:
    """Least squares per source head; ``ridge`` penalizes the transform only."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if source.example_ids != target.example_ids:
        diff = next(
            (i for i, (a, b) in enumerate(zip(source.example_ids, target.example_ids)) if a != b),
            min(len(source.example_ids), len(target.example_ids)),
        )
        raise AlignmentError(f"example ids differ first at column {diff}")
    n = len(source.example_ids)
    if n < 2:
        raise EmptyDatasetError(f"need at least 2 aligned examples, got {n}")

    X = target.matrix.T  # [n, target_heads]
    Y = source.matrix.T  # [n, source_heads]
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    else:
        x_mean, y_mean = np.zeros(X.shape[1]), np.zeros(Y.shape[1])
    Xc, Yc = X - x_mean, Y - y_mean

    p = X.shape[1]
    if ridge > 0:
        A = np.vstack([Xc, np.sqrt(ridge) * np.eye(p)])
        B = np.vstack([Yc, np.zeros((p, Y.shape[1]))])
    else:
        A, B = Xc, Yc
    coef, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if ridge == 0 and rank < p:
        raise RankDeficiencyError(
            f"design has rank {rank} < {p} target heads with {n} examples; use ridge > 0"
        )
    transform = coef.T
    intercept = y_mean - transform @ x_mean

    resid = Y - (X @ transform.T + intercept)
    ss_res = (resid**2).sum(axis=0)
    ss_tot = ((Y - Y.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0), 1.0)
    r2 = np.where((ss_tot == 0) & (ss_res > 0), 0.0, r2)
    return HeadMap(transform, intercept, r2, float(ridge))


def apply_head_map_raw(hmap: HeadMap, values: np.ndarray) -> np.ndarray:
    """transform @ values + intercept, without clamping. ``values``: [..., target_heads]."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != hmap.target_heads:
        raise LayoutError(f"feature dimension {values.shape[-1]} != {hmap.target_heads} target heads")
    return values @ hmap.transform.T + hmap.intercept


def apply_head_map(hmap: HeadMap, fv: SpanFeatureVector) -> SpanFeatureVector:
    """Map target-space features into source head space, clamped to [0, 1]."""
    raw = apply_head_map_raw(hmap, fv.values)
    clipped = np.clip(raw, 0.0, 1.0)
    n_clipped = int((clipped != raw).sum())
    if n_clipped:
        logger.debug("head map clamped %d of %d entries", n_clipped, raw.size)
    return SpanFeatureVector(clipped, fv.span, fv.label, fv.example_id, fv.origin)


def save_head_map(path: str | Path, hmap: HeadMap) -> None:
    rec = {
        "source_heads": hmap.source_heads,
        "target_heads": hmap.target_heads,
        "transform": hmap.transform.reshape(-1).tolist(),
        "intercept": hmap.intercept.tolist(),
        "fit_r2": hmap.fit_r2.tolist(),
        "ridge": hmap.ridge,
    }
    Path(path).write_text(json.dumps(rec) + "\n", encoding="utf-8")


def load_head_map(path: str | Path) -> HeadMap:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        S, T = int(rec["source_heads"]), int(rec["target_heads"])
        return HeadMap(
            np.asarray(rec["transform"], dtype=np.float64).reshape(S, T),
            np.asarray(rec["intercept"], dtype=np.float64),
            np.asarray(rec["fit_r2"], dtype=np.float64),
            float(rec.get("ridge", 0.0)),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"{path}: cannot load head map ({exc})") from exc
