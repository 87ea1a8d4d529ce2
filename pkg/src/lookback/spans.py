"""Labeled spans from annotations: predefined spans and fixed-size chunks."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyResponseError, InvalidSpanError
from .trace import HALLUCINATED, SpanAnnotation

FACTUAL_LABEL = 1
HALLUCINATED_LABEL = 0

ORIGINS = ("prefix", "suffix", "clean_response", "annotated_hallucination", "chunk")


@dataclass(frozen=True)
class LabeledSpan:
    start: int
    end: int
    label: int
    origin: str

    def __post_init__(self) -> None:
        if self.end <= self.start or self.start < 0:
            raise InvalidSpanError(f"invalid span [{self.start}, {self.end})")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def range(self) -> tuple[int, int]:
        return (self.start, self.end)


def _hallucinated_ranges(annotation: SpanAnnotation, total: int) -> list[tuple[int, int]]:
    if annotation.verdict == HALLUCINATED and not annotation.problematic_spans:
        raise InvalidSpanError(
            f"annotation {annotation.example_id!r} is hallucinated but has no resolved spans"
        )
    for s, e in annotation.problematic_spans:
        if not 0 <= s < e <= total:
            raise InvalidSpanError(
                f"annotated range [{s}, {e}) outside response of {total} tokens"
            )
    return sorted(annotation.problematic_spans)


def predefined_spans(annotation: SpanAnnotation, total: int) -> list[LabeledSpan]:
    """Prefix / suffix / clean-response positives plus every annotated negative, sorted."""
    if total <= 0:
        raise EmptyResponseError(f"response {annotation.example_id!r} has no tokens")
    bad = _hallucinated_ranges(annotation, total)
    if not bad:
        return [LabeledSpan(0, total, FACTUAL_LABEL, "clean_response")]
    out = []
    if bad[0][0] > 0:
        out.append(LabeledSpan(0, bad[0][0], FACTUAL_LABEL, "prefix"))
    out.extend(LabeledSpan(s, e, HALLUCINATED_LABEL, "annotated_hallucination") for s, e in bad)
    last_end = max(e for _, e in bad)
    if last_end < total:
        out.append(LabeledSpan(last_end, total, FACTUAL_LABEL, "suffix"))
    return sorted(out, key=lambda sp: (sp.start, sp.end))


def sliding_window_spans(
    annotation: SpanAnnotation, total: int, window_size: int
) -> list[LabeledSpan]:
    """Non-overlapping chunks of ``window_size`` tokens; a short final chunk is kept.

    A chunk is labeled hallucinated iff it overlaps any annotated range.
    """
    if window_size < 1:
        raise ValueError(f"window_size must be >= 1, got {window_size}")
    bad = _hallucinated_ranges(annotation, total) if total > 0 else []
    out = []
    for start in range(0, max(total, 0), window_size):
        end = min(start + window_size, total)
        hit = any(s < end and e > start for s, e in bad)
        out.append(LabeledSpan(start, end, HALLUCINATED_LABEL if hit else FACTUAL_LABEL, "chunk"))
    return out
