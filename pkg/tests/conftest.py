import numpy as np
import pytest

from lookback.synthetic import trace_from_ratios
from lookback.toy_model import ToyModelConfig, ToyTransformer
from lookback.trace import AttentionTrace, TraceMeta


@pytest.fixture(scope="session")
def small_model():
    return ToyTransformer(ToyModelConfig(vocab_size=32, d_model=16, num_layers=2, num_heads=4,
                                         max_seq_len=128, seed=3))


def uniform_trace(L=2, H=2, N=4, T=3, example_id="u"):
    """Trace whose attention is uniform over all visible positions."""
    ctx = np.zeros((T, L * H))
    new = np.zeros((T, L * H))
    for t in range(1, T + 1):
        ctx[t - 1] = 1.0 / (N + t - 1)
        new[t - 1] = 0.0 if t == 1 else 1.0 / (N + t - 1)
    meta = TraceMeta(example_id, "test", L, H, N, T)
    return AttentionTrace.from_arrays(meta, ctx, new, list(range(T)), [f"w{i}" for i in range(T)])


def constant_ratio_trace(value, T=6, L=1, H=2, N=5, example_id="c"):
    r = np.full((T, L * H), value)
    return trace_from_ratios(r, L, H, N, example_id)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
