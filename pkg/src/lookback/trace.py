"""Attention-trace and span-annotation data model, validation and JSONL I/O.

A trace stores, for every generated token y_t and every (layer, head), the mean
attention mass the query predicting y_t puts on the N context tokens and on
the t-1 previously generated tokens. Head entries are flat, layer-major:
index = layer * H + head (0-based).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import TraceFormatError

logger = logging.getLogger(__name__)

FACTUAL = "factual"
HALLUCINATED = "hallucinated"

MASS_TOLERANCE = 1e-5


def _frozen(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TraceMeta:
    example_id: str
    model_id: str
    num_layers: int
    num_heads: int
    context_len: int
    gen_len: int

    @property
    def num_features(self) -> int:
        return self.num_layers * self.num_heads


@dataclass(frozen=True)
class StepAttention:
    """Per-head (A_context, A_new) aggregates for one generated token.

    ``step_index`` is 1-based. Both arrays are flat and layer-major.
    """

    step_index: int
    a_context: np.ndarray
    a_new: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_context", _frozen(self.a_context).reshape(-1))
        object.__setattr__(self, "a_new", _frozen(self.a_new).reshape(-1))


@dataclass(frozen=True)
class AttentionTrace:
    meta: TraceMeta
    steps: tuple[StepAttention, ...]
    tokens: tuple[int, ...] | None = None
    token_texts: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.token_texts is not None:
            object.__setattr__(self, "token_texts", tuple(str(t) for t in self.token_texts))

    @classmethod
    def from_arrays(
        cls,
        meta: TraceMeta,
        a_context: np.ndarray,
        a_new: np.ndarray,
        tokens: Sequence[int] | None = None,
        token_texts: Sequence[str] | None = None,
    ) -> AttentionTrace:
        """Build a trace from arrays shaped (T, L, H) or (T, L*H)."""
        a_context = np.asarray(a_context, dtype=np.float64)
        a_new = np.asarray(a_new, dtype=np.float64)
        n_steps = a_context.shape[0]
        F = meta.num_layers * meta.num_heads
        ctx = a_context.reshape(n_steps, F)
        new = a_new.reshape(n_steps, F)
        steps = tuple(StepAttention(t + 1, ctx[t], new[t]) for t in range(n_steps))
        return cls(
            meta,
            steps,
            None if tokens is None else tuple(tokens),
            None if token_texts is None else tuple(token_texts),
        )

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    def context_matrix(self) -> np.ndarray:
        """A_context stacked to shape (T, L*H). Requires uniform head counts."""
        if not self.steps:
            return np.zeros((0, self.meta.num_features))
        return np.stack([s.a_context for s in self.steps])

    def new_matrix(self) -> np.ndarray:
        if not self.steps:
            return np.zeros((0, self.meta.num_features))
        return np.stack([s.a_new for s in self.steps])


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    step: int | None = None
    head: int | None = None

    def __str__(self) -> str:
        where = []
        if self.step is not None:
            where.append(f"step={self.step}")
        if self.head is not None:
            where.append(f"head={self.head}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"{self.message}{suffix}"


def _head_coords(flat: int, num_heads: int) -> str:
    return f"layer {flat // num_heads + 1}, head {flat % num_heads + 1}"


def validate_trace(
    trace: AttentionTrace, check_mass: bool = True, mass_tol: float = MASS_TOLERANCE
) -> list[Violation]:
    """Return every invariant violation in ``trace``; an empty list means valid.

    ``check_mass`` enables the N*A_context + (t-1)*A_new = 1 check, which only
    holds when the producing model attends over exactly context + generated
    tokens.
    """
    out: list[Violation] = []
    m = trace.meta
    if m.num_layers < 1:
        out.append(Violation("meta", f"num_layers must be >= 1, got {m.num_layers}"))
    if m.num_heads < 1:
        out.append(Violation("meta", f"num_heads must be >= 1, got {m.num_heads}"))
    if m.context_len < 1:
        out.append(Violation("meta", f"context_len must be >= 1, got {m.context_len}"))
    if m.gen_len < 0:
        out.append(Violation("meta", f"gen_len must be >= 0, got {m.gen_len}"))
    if m.gen_len != len(trace.steps):
        out.append(
            Violation("step_count", f"gen_len {m.gen_len} != number of steps {len(trace.steps)}")
        )
    if trace.tokens is not None and len(trace.tokens) != len(trace.steps):
        out.append(Violation("tokens", f"{len(trace.tokens)} tokens for {len(trace.steps)} steps"))
    if trace.token_texts is not None and len(trace.token_texts) != len(trace.steps):
        out.append(
            Violation(
                "token_texts", f"{len(trace.token_texts)} token texts for {len(trace.steps)} steps"
            )
        )

    expected = m.num_layers * m.num_heads
    H = max(m.num_heads, 1)
    for pos, step in enumerate(trace.steps):
        t = step.step_index
        if t != pos + 1:
            out.append(Violation("step_index", f"expected step_index {pos + 1}, got {t}", step=t))
        ctx, new = step.a_context, step.a_new
        if ctx.size != expected or new.size != expected:
            out.append(
                Violation(
                    "head_count",
                    f"head count mismatch: expected {expected}, got {ctx.size}/{new.size}",
                    step=t,
                )
            )
            continue
        for name, arr in (("A_context", ctx), ("A_new", new)):
            bad = np.flatnonzero(~np.isfinite(arr) | (arr < 0.0) | (arr > 1.0))
            for h in bad:
                out.append(
                    Violation(
                        "range",
                        f"{name}={arr[h]!r} outside [0,1] at {_head_coords(int(h), H)}",
                        step=t,
                        head=int(h),
                    )
                )
        if t == 1:
            for h in np.flatnonzero(new != 0.0):
                out.append(
                    Violation(
                        "new_at_first_step",
                        f"A_new nonzero at t=1 ({new[h]!r}) at {_head_coords(int(h), H)}",
                        step=t,
                        head=int(h),
                    )
                )
        if check_mass and m.context_len >= 1:
            mass = m.context_len * ctx + (t - 1) * new
            for h in np.flatnonzero(~(np.abs(mass - 1.0) <= mass_tol)):
                out.append(
                    Violation(
                        "mass",
                        f"attention mass {mass[h]!r} != 1 at {_head_coords(int(h), H)}",
                        step=t,
                        head=int(h),
                    )
                )
    return out


# ---------------------------------------------------------------------------
# Trace JSONL encoding

_TRACE_KEYS = ("example_id", "model_id", "num_layers", "num_heads", "context_len", "gen_len")


def trace_to_record(trace: AttentionTrace) -> dict[str, Any]:
    m = trace.meta
    L, H = m.num_layers, m.num_heads
    attention = []
    for step in trace.steps:
        if step.a_context.size != L * H or step.a_new.size != L * H:
            raise TraceFormatError(
                f"example {m.example_id!r} step {step.step_index}: cannot serialize "
                f"{step.a_context.size} head entries as [{L}][{H}]"
            )
        pairs = np.stack([step.a_context, step.a_new], axis=-1).reshape(L, H, 2)
        attention.append(pairs.tolist())
    rec: dict[str, Any] = {
        "example_id": m.example_id,
        "model_id": m.model_id,
        "num_layers": L,
        "num_heads": H,
        "context_len": m.context_len,
        "gen_len": m.gen_len,
        "attention": attention,
    }
    if trace.tokens is not None:
        rec["tokens"] = list(trace.tokens)
    if trace.token_texts is not None:
        rec["token_texts"] = list(trace.token_texts)
    return rec


def dumps_record(rec: Mapping[str, Any]) -> str:
    """Canonical single-line JSON: insertion key order, compact separators, repr floats."""
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def trace_to_json(trace: AttentionTrace) -> str:
    return dumps_record(trace_to_record(trace))


def _require_int(rec: Mapping[str, Any], key: str, where: str) -> int:
    val = rec.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise TraceFormatError(f"{where}: field {key!r} must be an integer, got {val!r}")
    return val


def trace_from_record(rec: Any, where: str = "record") -> AttentionTrace:
    if not isinstance(rec, dict):
        raise TraceFormatError(f"{where}: expected a JSON object")
    for key in ("example_id", "model_id"):
        if not isinstance(rec.get(key), str):
            raise TraceFormatError(f"{where}: field {key!r} must be a string")
    ints = {k: _require_int(rec, k, where) for k in _TRACE_KEYS[2:]}
    meta = TraceMeta(rec["example_id"], rec["model_id"], **ints)
    attention = rec.get("attention")
    if not isinstance(attention, list):
        raise TraceFormatError(f"{where}: field 'attention' must be a list")
    steps = []
    for t, step in enumerate(attention, start=1):
        if not isinstance(step, list) or not all(isinstance(layer, list) for layer in step):
            raise TraceFormatError(f"{where}: attention step {t} must be a [L][H][2] list")
        pairs = [pair for layer in step for pair in layer]
        for pair in pairs:
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pair)
            ):
                raise TraceFormatError(
                    f"{where}: attention step {t} has a malformed head entry {pair!r}"
                )
        arr = np.array(pairs, dtype=np.float64).reshape(-1, 2)
        steps.append(StepAttention(t, arr[:, 0], arr[:, 1]))
    tokens = rec.get("tokens")
    if tokens is not None and (
        not isinstance(tokens, list) or not all(isinstance(x, int) for x in tokens)
    ):
        raise TraceFormatError(f"{where}: 'tokens' must be a list of integers")
    texts = rec.get("token_texts")
    if texts is not None and (
        not isinstance(texts, list) or not all(isinstance(x, str) for x in texts)
    ):
        raise TraceFormatError(f"{where}: 'token_texts' must be a list of strings")
    return AttentionTrace(
        meta,
        tuple(steps),
        None if tokens is None else tuple(tokens),
        None if texts is None else tuple(texts),
    )


def parse_trace(line: str, where: str = "record") -> AttentionTrace:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
    return trace_from_record(rec, where)


def iter_jsonl(path: str | Path) -> Iterable[tuple[int, str]]:
    """Yield (1-based line number, line) for non-blank lines."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise TraceFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def read_traces(path: str | Path) -> list[AttentionTrace]:
    return [parse_trace(line, f"{path}:{n}") for n, line in iter_jsonl(path)]


def write_traces(path: str | Path, traces: Iterable[AttentionTrace]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(trace_to_json(trace))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Annotations


@dataclass(frozen=True)
class SpanAnnotation:
    """Token-level hallucination annotation for one response.

    ``unresolved`` lists annotated spans that could not be placed on the
    response; a hallucinated verdict whose spans were all unresolved has an
    empty ``problematic_spans`` and is not ``usable``.
    """

    example_id: str
    verdict: str
    problematic_spans: tuple[tuple[int, int], ...] = ()
    unresolved: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.verdict not in (FACTUAL, HALLUCINATED):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        spans = tuple((int(s), int(e)) for s, e in self.problematic_spans)
        object.__setattr__(self, "problematic_spans", spans)
        if self.verdict == FACTUAL and spans:
            raise ValueError("factual annotation cannot carry problematic spans")

    @property
    def usable(self) -> bool:
        return self.verdict == FACTUAL or bool(self.problematic_spans)


def merge_ranges(ranges: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Sort ranges and merge the overlapping ones (adjacent ranges are kept apart)."""
    merged: list[list[int]] = []
    for s, e in sorted(ranges):
        if merged and s < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def detokenize(token_texts: Sequence[str]) -> tuple[str, list[tuple[int, int]]]:
    """Whitespace-join tokens; return the text and each token's char offsets."""
    offsets = []
    pos = 0
    for i, tok in enumerate(token_texts):
        if i:
            pos += 1
        offsets.append((pos, pos + len(tok)))
        pos += len(tok)
    return " ".join(token_texts), offsets


def char_to_token_range(
    start: int, end: int, offsets: Sequence[tuple[int, int]]
) -> tuple[int, int] | None:
    hit = [i for i, (a, b) in enumerate(offsets) if a < end and b > start]
    if not hit:
        return None
    return hit[0], hit[-1] + 1


def parse_verdict(value: Any) -> str:
    if isinstance(value, bool):
        return FACTUAL if value else HALLUCINATED
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("true", FACTUAL):
            return FACTUAL
        if v in ("false", HALLUCINATED):
            return HALLUCINATED
    raise TraceFormatError(f"unrecognized verdict {value!r}")


def ingest_annotation(record: Mapping[str, Any], trace: AttentionTrace) -> SpanAnnotation:
    """Turn one raw annotation record into token ranges over ``trace``'s response.

    String spans are located by exact substring search in the whitespace-
    detokenized response, first occurrence wins. Spans that cannot be placed
    are logged and kept in ``unresolved``.
    """
    example_id = record.get("example_id")
    if not isinstance(example_id, str):
        raise TraceFormatError("annotation: field 'example_id' must be a string")
    verdict = parse_verdict(record.get("verdict"))
    raw = record.get("problematic_spans") or []
    if not isinstance(raw, list):
        raise TraceFormatError(f"annotation {example_id!r}: 'problematic_spans' must be a list")

    n_tokens = trace.meta.gen_len
    if verdict == FACTUAL:
        if raw:
            logger.warning("annotation %r: factual verdict, ignoring %d spans", example_id, len(raw))
        return SpanAnnotation(example_id, FACTUAL, (), tuple(str(s) for s in raw) if raw else ())

    ranges: list[tuple[int, int]] = []
    unresolved: list[str] = []
    text = offsets = None
    for span in raw:
        if isinstance(span, str):
            if trace.token_texts is None:
                raise TraceFormatError(
                    f"annotation {example_id!r}: string spans need token_texts in the trace"
                )
            if text is None:
                text, offsets = detokenize(trace.token_texts)
            idx = text.find(span) if span else -1
            rng = None if idx < 0 else char_to_token_range(idx, idx + len(span), offsets)
            if rng is None:
                unresolved.append(span)
                continue
            ranges.append(rng)
        elif (
            isinstance(span, list)
            and len(span) == 2
            and all(isinstance(x, int) and not isinstance(x, bool) for x in span)
        ):
            s, e = span
            if not 0 <= s < e <= n_tokens:
                unresolved.append(json.dumps(span))
                continue
            ranges.append((s, e))
        else:
            raise TraceFormatError(f"annotation {example_id!r}: malformed span {span!r}")
    for span in unresolved:
        logger.warning("annotation %r: unresolved span %r", example_id, span)
    return SpanAnnotation(example_id, HALLUCINATED, tuple(merge_ranges(ranges)), tuple(unresolved))


def read_annotation_records(path: str | Path) -> list[dict[str, Any]]:
    out = []
    for n, line in iter_jsonl(path):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict) or not isinstance(rec.get("example_id"), str):
            raise TraceFormatError(f"{path}:{n}: annotation needs a string 'example_id'")
        out.append(rec)
    return out


def write_annotation_records(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec))
            fh.write("\n")
