"""A seeded desk-scale decoder-only transformer that exposes its attention.

Weights are drawn from ``ToyModelConfig.seed``; there is no training. Each
forward step consumes one token, appends its keys/values to an immutable
per-layer cache and returns the logits for the next token together with every
head's softmax attention row (current position included, future excluded).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, TraceFormatError
from .trace import AttentionTrace, TraceMeta


@dataclass(frozen=True)
class ToyModelConfig:
    vocab_size: int = 64
    d_model: int = 32
    num_layers: int = 2
    num_heads: int = 4
    max_seq_len: int = 512
    seed: int = 0
    positional: str = "learned"

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "num_layers", "num_heads", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if self.positional != "learned":
            raise ValueError("only learned positional embeddings are supported")

    @property
    def model_id(self) -> str:
        c = self
        return f"toy-V{c.vocab_size}-d{c.d_model}-L{c.num_layers}-H{c.num_heads}-s{c.seed}"


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "nucleus"
    temperature: float = 0.9
    top_p: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("greedy", "nucleus"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class GeneratorState:
    """Tokens consumed so far plus cached keys/values.

    ``logits`` / ``attention`` hold the output of the last forward step (the
    prediction for the next token), or None before any token was consumed.
    States are never mutated, so cloning one is free.
    """

    tokens: tuple[int, ...] = ()
    keys: tuple[np.ndarray, ...] = ()
    values: tuple[np.ndarray, ...] = ()
    logits: np.ndarray | None = field(default=None, compare=False)
    attention: np.ndarray | None = field(default=None, compare=False)

    @property
    def position(self) -> int:
        return len(self.tokens)


def _layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class ToyTransformer:
    def __init__(self, config: ToyModelConfig = ToyModelConfig()):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        d, V = c.d_model, c.vocab_size

        def mat(n_in: int, n_out: int) -> np.ndarray:
            return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

        self.embed = rng.standard_normal((V, d))
        self.pos = rng.standard_normal((c.max_seq_len, d)) * 0.5
        self.layers = [
            {
                "wq": mat(d, d) * 2.0,
                "wk": mat(d, d) * 2.0,
                "wv": mat(d, d),
                "wo": mat(d, d),
                "w1": mat(d, 4 * d),
                "w2": mat(4 * d, d),
            }
            for _ in range(c.num_layers)
        ]
        self.unembed = mat(d, V) * 3.0
        self.head_dim = d // c.num_heads

    def initial_state(self) -> GeneratorState:
        L, H, dh = self.config.num_layers, self.config.num_heads, self.head_dim
        empty = tuple(np.zeros((H, 0, dh)) for _ in range(L))
        return GeneratorState((), empty, empty)

    def forward_step(
        self, state: GeneratorState, token: int
    ) -> tuple[np.ndarray, np.ndarray, GeneratorState]:
        """Consume ``token`` at position ``state.position``.

        Returns (logits [V], attention [L, H, position + 1], new state).
        """
        c = self.config
        p = state.position
        if p >= c.max_seq_len:
            raise CapacityError(f"position {p} exceeds max_seq_len {c.max_seq_len}")
        if not 0 <= token < c.vocab_size:
            raise ValueError(f"token {token} outside vocabulary of {c.vocab_size}")
        H, dh = c.num_heads, self.head_dim
        x = self.embed[token] + self.pos[p]
        keys, values, rows = [], [], []
        for li, W in enumerate(self.layers):
            h = _layer_norm(x)
            q = (h @ W["wq"]).reshape(H, dh)
            k = (h @ W["wk"]).reshape(H, 1, dh)
            v = (h @ W["wv"]).reshape(H, 1, dh)
            K = np.concatenate([state.keys[li], k], axis=1)
            Vc = np.concatenate([state.values[li], v], axis=1)
            scores = np.einsum("hd,hpd->hp", q, K) / math.sqrt(dh)
            attn = softmax(scores)
            mixed = np.einsum("hp,hpd->hd", attn, Vc).reshape(-1)
            x = x + mixed @ W["wo"]
            x = x + _gelu(_layer_norm(x) @ W["w1"]) @ W["w2"]
            keys.append(K)
            values.append(Vc)
            rows.append(attn)
        logits = _layer_norm(x) @ self.unembed
        attention = np.stack(rows)
        new_state = GeneratorState(
            state.tokens + (int(token),), tuple(keys), tuple(values), logits, attention
        )
        return logits, attention, new_state

    def prefill(self, prompt: Sequence[int]) -> GeneratorState:
        if len(prompt) == 0:
            raise ValueError("prompt must be non-empty")
        state = self.initial_state()
        for tok in prompt:
            _, _, state = self.forward_step(state, int(tok))
        return state

    def replay(self, state: GeneratorState, tokens: Sequence[int]) -> GeneratorState:
        for tok in tokens:
            _, _, state = self.forward_step(state, int(tok))
        return state


# ---------------------------------------------------------------------------
# Sampling


def nucleus_distribution(logits: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Full-vocabulary probabilities after temperature and top-p truncation.

    Keeps the smallest probability-sorted prefix whose mass reaches ``top_p``
    (stable sort, so equal probabilities keep lower indices first).
    """
    probs = softmax(np.asarray(logits, dtype=np.float64) / temperature)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    keep = min(int(np.searchsorted(cum, top_p, side="left")) + 1, probs.size)
    if top_p >= 1.0:
        keep = probs.size
    out = np.zeros_like(probs)
    out[order[:keep]] = probs[order[:keep]]
    return out / out.sum()


def sample_token(logits: np.ndarray, sampler: SamplerConfig, rng: np.random.Generator) -> int:
    logits = np.asarray(logits, dtype=np.float64)
    if sampler.mode == "greedy":
        return int(np.argmax(logits))
    probs = nucleus_distribution(logits, sampler.temperature, sampler.top_p)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    u = rng.random() * cum[-1]
    j = min(int(np.searchsorted(cum, u, side="right")), probs.size - 1)
    return int(order[j])


def aggregate_attention(attention: np.ndarray, context_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Reduce [L, H, N + t - 1] rows to flat layer-major (A_context, A_new)."""
    L, H, width = attention.shape
    n_new = width - context_len
    if n_new < 0:
        raise ValueError("attention row shorter than the context")
    ctx = attention[:, :, :context_len].mean(axis=-1).reshape(L * H)
    if n_new == 0:
        new = np.zeros(L * H)
    else:
        new = attention[:, :, context_len:].mean(axis=-1).reshape(L * H)
    return ctx, new


def token_text(token: int) -> str:
    """Surface string of the demo whitespace vocabulary."""
    return f"w{token}"


@dataclass
class Generation:
    tokens: list[int]
    trace: AttentionTrace
    full_attention: list[np.ndarray] | None = None
    final_state: GeneratorState | None = None


def generate(
    model: ToyTransformer,
    prompt: Sequence[int],
    sampler: SamplerConfig,
    max_new_tokens: int,
    eos_token: int | None = None,
    rng: np.random.Generator | None = None,
    example_id: str = "example",
    retain_full_attention: bool = False,
) -> Generation:
    """Sample until ``eos_token`` or ``max_new_tokens``, recording a trace.

    The step for y_t records the attention rows of the query that predicts
    y_t; the context boundary is the prompt length.
    """
    if max_new_tokens < 0:
        raise ValueError("max_new_tokens must be >= 0")
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    N = len(prompt)
    state = model.prefill(prompt)
    tokens: list[int] = []
    ctx_rows, new_rows, full = [], [], []
    while len(tokens) < max_new_tokens:
        attn = state.attention
        tok = sample_token(state.logits, sampler, rng)
        c, n = aggregate_attention(attn, N)
        ctx_rows.append(c)
        new_rows.append(n)
        if retain_full_attention:
            full.append(attn.copy())
        tokens.append(tok)
        if tok == eos_token or len(tokens) == max_new_tokens:
            break
        _, _, state = model.forward_step(state, tok)
    cfg = model.config
    F = cfg.num_layers * cfg.num_heads
    meta = TraceMeta(example_id, cfg.model_id, cfg.num_layers, cfg.num_heads, N, len(tokens))
    trace = AttentionTrace.from_arrays(
        meta,
        np.array(ctx_rows).reshape(-1, F),
        np.array(new_rows).reshape(-1, F),
        tokens,
        [token_text(t) for t in tokens],
    )
    return Generation(tokens, trace, full if retain_full_attention else None, state)


def save_model_config(path: str | Path, config: ToyModelConfig) -> None:
    Path(path).write_text(json.dumps({"config": asdict(config)}, indent=1) + "\n", encoding="utf-8")


def load_model_config(path: str | Path) -> ToyModelConfig:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        return ToyModelConfig(**rec["config"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"{path}: cannot load model config ({exc})") from exc
