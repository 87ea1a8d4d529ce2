import numpy as np
import pytest
from scipy.stats import chisquare

from lookback.errors import CapacityError
from lookback.features import trace_lookback
from lookback.toy_model import (
    SamplerConfig,
    ToyModelConfig,
    ToyTransformer,
    generate,
    load_model_config,
    nucleus_distribution,
    sample_token,
    save_model_config,
)
from lookback.trace import validate_trace


def test_attention_rows_are_causal_and_normalized(small_model):
    state = small_model.initial_state()
    for p, tok in enumerate([3, 1, 4, 1, 5, 9, 2, 6]):
        logits, attn, state = small_model.forward_step(state, tok)
        assert attn.shape == (2, 4, p + 1)
        assert np.all(attn >= 0)
        assert np.allclose(attn.sum(-1), 1.0, atol=1e-5)
        assert logits.shape == (32,)
        assert state.position == p + 1


def test_forward_is_deterministic():
    cfg = ToyModelConfig(vocab_size=20, d_model=8, num_layers=2, num_heads=2, seed=11)
    a, b = ToyTransformer(cfg), ToyTransformer(cfg)
    sa, sb = a.initial_state(), b.initial_state()
    for tok in [1, 2, 3]:
        la, _, sa = a.forward_step(sa, tok)
        lb, _, sb = b.forward_step(sb, tok)
        assert np.array_equal(la, lb)


def test_states_are_not_mutated(small_model):
    base = small_model.prefill([1, 2, 3])
    logits_before = base.logits.copy()
    _, _, s1 = small_model.forward_step(base, 4)
    _, _, s2 = small_model.forward_step(base, 4)
    assert np.array_equal(s1.logits, s2.logits)
    assert np.array_equal(base.logits, logits_before)
    assert base.position == 3


def test_capacity_error():
    m = ToyTransformer(ToyModelConfig(vocab_size=8, d_model=4, num_layers=1, num_heads=1, max_seq_len=3))
    with pytest.raises(CapacityError):
        m.replay(m.initial_state(), [1, 2, 3, 4])


def test_greedy_argmax():
    rng = np.random.default_rng(0)
    assert sample_token(np.array([1.0, 3.0, 2.0]), SamplerConfig("greedy"), rng) == 1
    assert sample_token(np.array([2.0, 2.0, 1.0]), SamplerConfig("greedy"), rng) == 0


def test_nucleus_full_distribution_chi_square():
    logits = np.array([0.3, -1.0, 2.0, 0.0, 1.1, -0.4])
    probs = np.exp(logits) / np.exp(logits).sum()
    rng = np.random.default_rng(12345)
    sampler = SamplerConfig("nucleus", temperature=1.0, top_p=1.0)
    n = 100_000
    draws = [sample_token(logits, sampler, rng) for _ in range(n)]
    counts = np.bincount(draws, minlength=logits.size)
    assert chisquare(counts, probs * n).pvalue > 0.01


def test_nucleus_cutoff_only_top_token():
    logits = np.log(np.array([0.6, 0.3, 0.1]))
    sampler = SamplerConfig("nucleus", temperature=1.0, top_p=0.5)
    rng = np.random.default_rng(0)
    assert {sample_token(logits, sampler, rng) for _ in range(2000)} == {0}


def test_nucleus_distribution_prefix_rule():
    logits = np.log(np.array([0.1, 0.6, 0.3]))
    d = nucleus_distribution(logits, 1.0, 0.85)
    assert np.allclose(d, [0.0, 2 / 3, 1 / 3])
    assert np.allclose(nucleus_distribution(logits, 1.0, 0.9), [0.1, 0.6, 0.3])


def test_temperature_sharpens():
    logits = np.array([1.0, 0.0])
    hot = nucleus_distribution(logits, 2.0, 1.0)
    cold = nucleus_distribution(logits, 0.5, 1.0)
    assert cold[0] > hot[0]


def test_generate_zero_tokens(small_model):
    gen = generate(small_model, [1, 2], SamplerConfig(), 0)
    assert gen.tokens == [] and gen.trace.num_steps == 0
    assert validate_trace(gen.trace) == []


def test_generate_stops_at_eos(small_model):
    first = generate(small_model, [5, 6, 7], SamplerConfig("greedy"), 1).tokens[0]
    gen = generate(small_model, [5, 6, 7], SamplerConfig("greedy"), 10, eos_token=first)
    assert gen.tokens == [first]
    assert gen.trace.num_steps == 1


def test_generate_trace_is_valid_and_matches_full_rows(small_model):
    prompt = [4, 8, 15, 16, 23]
    gen = generate(small_model, prompt, SamplerConfig(seed=5), 20, retain_full_attention=True)
    assert validate_trace(gen.trace) == []
    N = len(prompt)
    for t, rows in enumerate(gen.full_attention, start=1):
        assert rows.shape[-1] == N + t - 1
        ctx = rows[:, :, :N].sum(-1) / N
        new = rows[:, :, N:].sum(-1) / (t - 1) if t > 1 else np.zeros_like(ctx)
        step = gen.trace.steps[t - 1]
        assert np.allclose(step.a_context, ctx.reshape(-1), atol=1e-12)
        assert np.allclose(step.a_new, new.reshape(-1), atol=1e-12)
    assert np.all(trace_lookback(gen.trace)[0] == 1.0)


def test_greedy_generation_deterministic(small_model):
    a = generate(small_model, [1, 2, 3], SamplerConfig("greedy"), 15)
    b = generate(ToyTransformer(small_model.config), [1, 2, 3], SamplerConfig("greedy"), 15)
    assert a.tokens == b.tokens
    assert np.array_equal(a.trace.context_matrix(), b.trace.context_matrix())


def test_model_file_round_trip(tmp_path):
    cfg = ToyModelConfig(vocab_size=10, d_model=6, num_layers=3, num_heads=2, seed=9)
    save_model_config(tmp_path / "m.json", cfg)
    assert load_model_config(tmp_path / "m.json") == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ToyModelConfig(d_model=10, num_heads=4)
    with pytest.raises(ValueError):
        SamplerConfig(top_p=0.0)
