"""Classifier-guided chunk decoding.

Each round samples k candidate chunks from the same generator state, scores
each candidate's averaged lookback-ratio vector with the detector, appends
the highest-scoring chunk (lowest index on ties) and replays its tokens to
rebuild the base state.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .classifier import LensClassifier, predict
from .errors import LayoutError
from .features import SpanFeatureVector, lookback_ratio
from .toy_model import (
    GeneratorState,
    SamplerConfig,
    ToyTransformer,
    aggregate_attention,
    sample_token,
)
from .trace import dumps_record

Scorer = Callable[[SpanFeatureVector], float]


@dataclass(frozen=True)
class DecodeConfig:
    chunk_size: int = 8
    num_candidates: int = 8
    max_new_tokens: int = 256
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eos_token: int | None = None

    def __post_init__(self) -> None:
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be >= 0")


@dataclass(frozen=True)
class ChunkCandidate:
    tokens: tuple[int, ...]
    features: SpanFeatureVector
    terminal: bool
    eos: bool = False
    score: float | None = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    candidates: tuple[ChunkCandidate, ...]
    chosen_index: int

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "candidates": [
                {"tokens": list(c.tokens), "score": c.score, "terminal": c.terminal}
                for c in self.candidates
            ],
            "chosen_index": self.chosen_index,
        }


@dataclass
class DecodeResult:
    tokens: list[int]
    rounds: list[RoundRecord]
    final_state: GeneratorState
    ended_with_eos: bool


def candidate_rng(master_seed: int, round_index: int, candidate: int) -> np.random.Generator:
    """Independent stream for candidate ``candidate`` of round ``round_index``."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, round_index, candidate]))


def sample_candidate(
    model: ToyTransformer,
    base_state: GeneratorState,
    context_len: int,
    response_len: int,
    config: DecodeConfig,
    rng: np.random.Generator,
) -> tuple[ChunkCandidate, GeneratorState]:
    """Sample up to ``chunk_size`` tokens from ``base_state`` (which is left untouched).

    Returns the unscored candidate and the clone state after its last fed token.
    """
    budget = min(config.chunk_size, config.max_new_tokens - response_len)
    if budget < 1:
        raise ValueError("no token budget left for a candidate chunk")
    state = base_state
    tokens: list[int] = []
    ratios = []
    eos = False
    while True:
        ctx, new = aggregate_attention(state.attention, context_len)
        ratios.append(lookback_ratio(ctx, new))
        tok = sample_token(state.logits, config.sampler, rng)
        tokens.append(tok)
        if config.eos_token is not None and tok == config.eos_token:
            eos = True
            break
        if len(tokens) == budget:
            break
        _, _, state = model.forward_step(state, tok)
    terminal = eos or response_len + len(tokens) >= config.max_new_tokens
    feats = SpanFeatureVector(
        np.mean(np.stack(ratios), axis=0), (response_len, response_len + len(tokens))
    )
    return ChunkCandidate(tuple(tokens), feats, terminal, eos), state


def make_scorer(clf: LensClassifier) -> Scorer:
    return lambda fv: predict(clf, fv)


def check_layout(clf: LensClassifier, model: ToyTransformer) -> None:
    c = model.config
    lay = clf.layout
    if (lay.num_layers, lay.num_heads) != (c.num_layers, c.num_heads):
        raise LayoutError(
            f"classifier layout {lay.num_layers}x{lay.num_heads} does not match "
            f"generator {c.num_layers}x{c.num_heads}"
        )


def select_candidate(scores: Sequence[float]) -> int:
    """Argmax with lowest-index tie-break."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def guided_decode(
    model: ToyTransformer,
    scorer: Union[LensClassifier, Scorer],
    prompt: Sequence[int],
    config: DecodeConfig = DecodeConfig(),
    threads: int = 1,
) -> DecodeResult:
    if isinstance(scorer, LensClassifier):
        check_layout(scorer, model)
        score_fn = make_scorer(scorer)
    else:
        score_fn = scorer
    context_len = len(prompt)
    state = model.prefill(prompt)
    seed = config.sampler.seed
    response: list[int] = []
    rounds: list[RoundRecord] = []
    ended_with_eos = False
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while len(response) < config.max_new_tokens:
            r = len(rounds)

            def draw(j: int, base=state, r=r, n=len(response)) -> ChunkCandidate:
                return sample_candidate(
                    model, base, context_len, n, config, candidate_rng(seed, r, j)
                )[0]

            js = range(config.num_candidates)
            cands = list(pool.map(draw, js)) if pool else [draw(j) for j in js]
            scored = tuple(
                ChunkCandidate(c.tokens, c.features, c.terminal, c.eos, float(score_fn(c.features)))
                for c in cands
            )
            chosen = select_candidate([c.score for c in scored])
            rounds.append(RoundRecord(r, scored, chosen))
            best = scored[chosen]
            response.extend(best.tokens)
            state = model.replay(state, best.tokens)
            if best.terminal:
                ended_with_eos = best.eos
                break
    finally:
        if pool:
            pool.shutdown()
    return DecodeResult(response, rounds, state, ended_with_eos)


def chunked_sample(
    model: ToyTransformer, prompt: Sequence[int], config: DecodeConfig
) -> list[int]:
    """Plain chunk-by-chunk sampling with the per-round candidate-0 streams.

    Keeps the sampled clone state instead of replaying; no classifier involved.
    """
    context_len = len(prompt)
    state = model.prefill(prompt)
    out: list[int] = []
    r = 0
    while len(out) < config.max_new_tokens:
        rng = candidate_rng(config.sampler.seed, r, 0)
        cand, state = sample_candidate(model, state, context_len, len(out), config, rng)
        out.extend(cand.tokens)
        if cand.terminal:
            break
        _, _, state = model.forward_step(state, cand.tokens[-1])
        r += 1
    return out


def write_audit_log(path: str | Path, rounds: Iterable[RoundRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in rounds:
            fh.write(dumps_record(rec.to_record()))
            fh.write("\n")


def read_audit_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
