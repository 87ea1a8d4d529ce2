"""Lookback-ratio features: per step, per span, and the feature-matrix file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from .errors import InvalidSpanError, TraceFormatError
from .trace import AttentionTrace, StepAttention, dumps_record, iter_jsonl

if TYPE_CHECKING:
    from .spans import LabeledSpan


def lookback_ratio(a_context: np.ndarray, a_new: np.ndarray) -> np.ndarray:
    """Elementwise A_context / (A_context + A_new), defined as 1 where both are 0."""
    a_context = np.asarray(a_context, dtype=np.float64)
    a_new = np.asarray(a_new, dtype=np.float64)
    denom = a_context + a_new
    zero = denom == 0.0
    return np.where(zero, 1.0, a_context / np.where(zero, 1.0, denom))


@dataclass(frozen=True)
class StepFeatureVector:
    step_index: int
    values: np.ndarray


@dataclass(frozen=True)
class SpanFeatureVector:
    """Lookback ratios averaged over the token range ``span`` = [start, end)."""

    values: np.ndarray
    span: tuple[int, int]
    label: int | None = None
    example_id: str | None = None
    origin: str | None = None

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "span", (int(self.span[0]), int(self.span[1])))

    @property
    def dim(self) -> int:
        return self.values.size


def step_lookback(step: StepAttention) -> StepFeatureVector:
    return StepFeatureVector(step.step_index, lookback_ratio(step.a_context, step.a_new))


def trace_lookback(trace: AttentionTrace) -> np.ndarray:
    """Per-step lookback ratios stacked to shape (T, L*H)."""
    return lookback_ratio(trace.context_matrix(), trace.new_matrix())


def average_span(
    features: Sequence[StepFeatureVector], span: tuple[int, int], label: int | None = None
) -> SpanFeatureVector:
    """Mean of the step vectors whose token index (step_index - 1) lies in ``span``."""
    start, end = span
    if end <= start:
        raise InvalidSpanError(f"empty span [{start}, {end})")
    picked = [f.values for f in features if start <= f.step_index - 1 < end]
    if not picked:
        raise InvalidSpanError(f"span [{start}, {end}) covers no available step")
    return SpanFeatureVector(np.mean(np.stack(picked), axis=0), (start, end), label)


def extract_features(
    trace: AttentionTrace, spans: Sequence[LabeledSpan]
) -> list[SpanFeatureVector]:
    """One averaged feature row per labeled span, labels and origin carried through."""
    if not spans:
        return []
    lr = trace_lookback(trace)
    n_steps = lr.shape[0]
    rows = []
    for sp in spans:
        if not 0 <= sp.start < sp.end <= n_steps:
            raise InvalidSpanError(
                f"span [{sp.start}, {sp.end}) out of bounds for {trace.meta.example_id!r} "
                f"with {n_steps} steps"
            )
        rows.append(
            SpanFeatureVector(
                lr[sp.start : sp.end].mean(axis=0),
                (sp.start, sp.end),
                sp.label,
                trace.meta.example_id,
                sp.origin,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Feature matrix file: JSONL rows


@dataclass(frozen=True)
class FeatureRow:
    """A SpanFeatureVector as stored on disk, with the head layout it came from."""

    features: SpanFeatureVector
    num_layers: int
    num_heads: int


def feature_row_record(fv: SpanFeatureVector, num_layers: int, num_heads: int) -> dict[str, Any]:
    return {
        "example_id": fv.example_id,
        "span": list(fv.span),
        "label": fv.label,
        "origin": fv.origin,
        "num_layers": num_layers,
        "num_heads": num_heads,
        "values": fv.values.tolist(),
    }


def write_feature_rows(path: str | Path, rows: Iterable[FeatureRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_record(feature_row_record(row.features, row.num_layers, row.num_heads)))
            fh.write("\n")


def read_feature_rows(path: str | Path) -> list[FeatureRow]:
    out = []
    for n, line in iter_jsonl(path):
        where = f"{path}:{n}"
        try:
            rec = json.loads(line)
            span = rec["span"]
            values = rec["values"]
            label = rec.get("label")
            if label not in (None, 0, 1):
                raise TraceFormatError(f"{where}: label must be 0, 1 or null")
            if not (isinstance(span, list) and len(span) == 2):
                raise TraceFormatError(f"{where}: span must be [start, end]")
            fv = SpanFeatureVector(
                np.asarray(values, dtype=np.float64),
                (span[0], span[1]),
                label,
                rec.get("example_id"),
                rec.get("origin"),
            )
            L = int(rec.get("num_layers", 1))
            H = int(rec.get("num_heads", fv.dim))
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"{where}: malformed feature row ({exc})") from exc
        out.append(FeatureRow(fv, L, H))
    return out
