from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import EchoHeads, ScriptedModel, brute_force_accepts, naive_beam_search, random_toy_model
from specretro.decode import (
    BeamSet,
    CacheHandle,
    DecodeConfig,
    DecodeMetrics,
    DecodeSession,
    Draft,
    DraftSource,
    Hypothesis,
    Retrosynthesizer,
    Strategy,
    beam_search,
    cumulative_mass,
    extract_query_drafts,
    generate,
    hsbs_settings,
    medusa_draft,
    sbs_cycle,
    sbs_generate,
    select_top,
    speculative_children,
    verify_draft,
)
from specretro.model import ModelConfig, init_model
from specretro.model.network import DecoderCache
from specretro.smiles_tok import EOS_ID, PAD_ID, build_vocab

# --- verification -------------------------------------------------------------


def test_verify_hand_fixture():
    dist = np.array([[0.5, 0.3, 0.15, 0.05]] * 3)
    # cumulative masses: token 1 -> 0.8, token 2 -> 0.95, token 3 -> 1.0
    assert verify_draft(dist, [1, 2, 3], 0.9975).accepted == 2
    assert verify_draft(dist, [1, 2, 3], 0.9975).flags == (True, True, False)
    assert verify_draft(dist, [3], 1.0).accepted == 0
    assert verify_draft(dist, [2], 0.95).accepted == 0  # boundary is strict
    assert verify_draft(dist, [2], 0.9500001).accepted == 1
    assert abs(cumulative_mass(dist[0], 2) - 0.95) < 1e-12


def test_verify_p_zero_is_greedy_agreement():
    dist = np.array([[0.1, 0.6, 0.3], [0.7, 0.2, 0.1], [0.2, 0.2, 0.6]])
    assert verify_draft(dist, [1, 0, 2], 0.0).accepted == 3
    assert verify_draft(dist, [1, 1, 2], 0.0).accepted == 1


def test_verify_argmax_always_accepted_and_bonus():
    dist = np.array([[0.4, 0.35, 0.25], [0.1, 0.1, 0.8], [0.3, 0.6, 0.1]])
    result = verify_draft(dist, [0, 2], 0.0)
    assert result.accepted == 2 and result.bonus == 1
    assert verify_draft(dist[:2], [0, 2], 0.0).bonus is None
    assert verify_draft(dist, [], 0.5).bonus == 0


def test_verify_ties_favour_lowest_index_as_argmax():
    dist = np.array([[0.5, 0.5, 0.0]])
    assert verify_draft(dist, [0], 0.0).accepted == 1
    assert verify_draft(dist, [1], 0.0).accepted == 0
    # token 1 is not argmax; strictly greater mass is 0 so cum = 0.5
    assert verify_draft(dist, [1], 0.6).accepted == 1


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 6).flatmap(
        lambda v: st.tuples(
            st.lists(st.lists(st.floats(0, 1), min_size=v, max_size=v).filter(lambda r: sum(r) > 0), min_size=1, max_size=5),
            st.lists(st.integers(0, v - 1), min_size=1, max_size=5),
            st.sampled_from([0.0, 0.5, 0.9975, 1.0]),
        )
    )
)
def test_verify_matches_brute_force_property(args):
    rows, draft, p = args
    draft = draft[: len(rows)]
    dist = np.array([np.array(r) / sum(r) for r in rows])
    result = verify_draft(dist, draft, p)
    assert result.accepted == brute_force_accepts(dist, draft, p)
    assert list(result.flags) == [True] * result.accepted + [False] * (len(draft) - result.accepted)


# --- drafts -------------------------------------------------------------------


def test_hsbs_table():
    assert hsbs_settings(1) == (10, 10)
    assert hsbs_settings(4) == (3, 10)
    assert hsbs_settings(32) == (1, 20)


def test_query_drafts_after_tail_token():
    src = [5, 6, 7, 5, 8, 9, 5, 6, 7]
    drafts = extract_query_drafts(src, 5, 10, 3)
    assert [d.tokens for d in drafts[:2]] == [(6, 7, 5), (8, 9, 5)]
    assert all(d.source is DraftSource.QUERY for d in drafts)
    assert len({d.tokens for d in drafts}) == len(drafts) <= 10


def test_query_drafts_short_source_gives_single_truncated_fragment():
    assert [d.tokens for d in extract_query_drafts([5, 6, 7], None, 10, 10)] == [(5, 6, 7)]


def test_query_drafts_fallback_offsets():
    src = list(range(4, 24))  # 20 distinct tokens
    drafts = extract_query_drafts(src, 99, 4, 5)
    # offsets 0, 5, 10, 15 over span 15
    assert [d.tokens[0] for d in drafts] == [4, 9, 14, 19]
    assert len(extract_query_drafts(src, 99, 30, 5)) <= 30


def test_query_drafts_tail_at_end_and_empty_source():
    assert extract_query_drafts([], 5, 3, 4) == []
    drafts = extract_query_drafts([6, 7, 5], 5, 1, 2)
    assert drafts[0].tokens == (6, 7)


def test_medusa_draft_lengths_and_planted_tokens():
    planted = [7, 3, 9, 4]
    scores = np.full((5, 12), -5.0)
    for k, t in enumerate(planted + [11]):
        scores[k, t] = 5.0
    assert medusa_draft(scores).tokens == tuple(planted)
    assert len(medusa_draft(np.zeros((21, 30)))) == 20
    assert medusa_draft(np.zeros((1, 30))).tokens == ()


# --- candidate construction ------------------------------------------------------


def _logprobs(rows):
    arr = np.log(np.array(rows, dtype=np.float64))
    return arr - np.log(np.exp(arr).sum(axis=1, keepdims=True))


def test_candidate_pool_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    v, k = 5, 2
    lp = _logprobs(rng.dirichlet(np.ones(v), size=3))
    draft = (int(np.argmax(lp[0])), int(np.argmax(lp[1])))
    parent = Hypothesis((4,), -0.7, False, CacheHandle(None, 0, 2))
    accepted = verify_draft(np.exp(lp), draft, 0.0).accepted
    assert accepted == 2
    got = speculative_children(parent, draft, lp, accepted, k, None, 0, 50)

    # Oracle: every sequence that follows the draft for j tokens and then
    # takes one of the top-k tokens at that point, except the draft token
    # itself while the draft continues.
    expected = []
    for j in range(accepted + 1):
        prefix_score = parent.logp + sum(lp[i, draft[i]] for i in range(j))
        ranked = sorted(range(v), key=lambda t: (-lp[j, t], t))[:k]
        for t in ranked:
            if j < accepted and t == draft[j]:
                continue
            expected.append((parent.tokens + draft[:j] + (t,), prefix_score + lp[j, t]))
    assert sorted((h.tokens, round(h.logp, 12)) for h in got) == sorted((t, round(s, 12)) for t, s in expected)
    top = select_top(got, k)
    oracle_top = sorted(expected, key=lambda c: (-c[1], c[0]))[:k]
    assert [h.tokens for h in top] == [t for t, _ in oracle_top]


def test_two_beams_with_twenty_accepted_tokens_pool_44_candidates():
    v, k = 30, 2
    pool = []
    for b in range(2):
        draft = tuple(5 + (b + i) % 20 for i in range(20))
        lp = np.full((21, v), -8.0)
        for j, t in enumerate(draft):
            lp[j, t] = -0.01
        lp[20, 4] = -0.01
        parent = Hypothesis((4 + b,), -0.1 * b, False, CacheHandle(None, b, 2))
        accepted = verify_draft(np.exp(lp), draft, 0.9975).accepted
        assert accepted == 20
        pool += speculative_children(parent, draft, lp, accepted, k, None, b, 100)
    assert len(pool) == 44


def test_accepted_eos_finishes_candidate():
    lp = _logprobs([[0.1, 0.1, 0.6, 0.1, 0.1], [0.2] * 5])
    parent = Hypothesis((4,), 0.0, False, CacheHandle(None, 0, 2))
    out = speculative_children(parent, (EOS_ID,), lp, 1, 2, None, 0, 50)
    finished = [h for h in out if h.finished]
    assert (4, EOS_ID) in [h.tokens for h in finished]
    assert all(len(h.tokens) <= 2 for h in out)


def test_candidate_scores_never_exceed_parent():
    rng = np.random.default_rng(1)
    lp = _logprobs(rng.dirichlet(np.ones(6), size=4))
    parent = Hypothesis((5, 6), -1.3, False, CacheHandle(None, 0, 3))
    draft = tuple(int(np.argmax(r)) for r in lp[:3])
    for h in speculative_children(parent, draft, lp, 3, 3, None, 0, 50):
        assert h.logp <= parent.logp


# --- beam search ------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_models():
    return [random_toy_model(seed, vocab_size=8, d_model=16) for seed in range(6)]


def test_beam_search_matches_naive_reference(toy_models):
    for model in toy_models:
        for src in ([4, 5, 6], [7, 7]):
            got, _ = beam_search(model, [src], DecodeConfig(beam_size=3, max_len=5))
            ref = naive_beam_search(model, src, 3, 5)
            assert [h.tokens for h in got[0]] == [t for t, _ in ref]
            assert np.allclose([h.logp for h in got[0]], [s for _, s in ref], atol=1e-6)


def test_beam_size_one_is_greedy(toy_models):
    model = toy_models[0]
    hyps, metrics = beam_search(model, [[4, 5, 6]], DecodeConfig(beam_size=1, max_len=10))
    tokens = []
    with torch.no_grad():
        cache = DecodeSession(model).encode([[4, 5, 6]])
        step = torch.tensor([[1]])
        for _ in range(10):
            logits, cache = model.decode(step, cache, medusa=False)
            t = int(np.argmax(logits[0, -1, 0].numpy()))
            tokens.append(t)
            if t == EOS_ID:
                break
            step = torch.tensor([[t]])
    assert hyps[0][0].tokens == tuple(tokens)
    assert metrics.model_calls == len(tokens)


def test_standard_and_optimized_agree(toy_models):
    cfg = DecodeConfig(beam_size=3, max_len=8)
    for model in toy_models:
        srcs = [[4, 5, 6, 7], [6, 5]]
        std, m_std = beam_search(model, srcs, cfg, optimized=False)
        opt, m_opt = beam_search(model, srcs, cfg, optimized=True)
        assert [[h.tokens for h in s] for s in std] == [[h.tokens for h in s] for s in opt]
        assert np.allclose([h.logp for s in std for h in s], [h.logp for s in opt for h in s])
        assert m_opt.mean_batch_size < m_std.mean_batch_size
        assert m_std.batch_sizes[0] == 3 * len(srcs)


def test_batched_sources_match_single_source(toy_models):
    model = toy_models[1]
    cfg = DecodeConfig(beam_size=3, max_len=7, strategy="msbs")
    srcs = [[4, 5], [6, 7, 4, 5], [5]]
    together, _ = generate(model, srcs, cfg)
    for src, hyps in zip(srcs, together):
        alone, _ = generate(model, [src], cfg)
        assert [h.tokens for h in alone[0]] == [h.tokens for h in hyps]


def test_decoding_is_deterministic(toy_models):
    cfg = DecodeConfig(beam_size=4, max_len=9, strategy="hsbs", n_drafts=3, draft_len=3)
    a, ma = generate(toy_models[2], [[4, 5, 6, 4, 7]], cfg)
    b, mb = generate(toy_models[2], [[4, 5, 6, 4, 7]], cfg)
    assert [(h.tokens, h.logp) for h in a[0]] == [(h.tokens, h.logp) for h in b[0]]
    assert ma.to_dict() | {"wall_time": 0} == mb.to_dict() | {"wall_time": 0}


def test_outputs_sorted_and_finished(toy_models):
    for strategy in Strategy:
        hyps, metrics = generate(toy_models[3], [[4, 5, 6]], DecodeConfig(beam_size=3, max_len=6, strategy=strategy))
        keys = [h.sort_key for h in hyps[0]]
        assert keys == sorted(keys) and all(h.finished for h in hyps[0])
        assert metrics.accepted_tokens <= metrics.drafted_tokens and metrics.model_calls >= 1


def test_msbs_without_extra_heads_equals_beam_search():
    model = init_model(ModelConfig(vocab_size=10, d_model=16, d_ff=32, attn_heads=2, medusa_heads=0, dtype="float64"), 4)
    cfg = DecodeConfig(beam_size=3, max_len=7, nucleus=0.0)
    bs, m_bs = beam_search(model, [[4, 5, 6]], cfg)
    sbs, m_sbs = sbs_generate(model, [[4, 5, 6]], DecodeConfig(beam_size=3, max_len=7, nucleus=0.0, strategy="msbs"))
    assert [h.tokens for h in bs[0]] == [h.tokens for h in sbs[0]]
    assert m_sbs.model_calls == m_bs.model_calls == m_sbs.cycles
    assert m_sbs.drafted_tokens == 0


def test_single_sbs_cycle_with_empty_drafts_is_one_beam_step():
    model = init_model(ModelConfig(vocab_size=10, d_model=16, d_ff=32, attn_heads=2, medusa_heads=0, dtype="float64"), 2)
    session = DecodeSession(model)
    enc = session.encode([[4, 5]])
    sets = [BeamSet((4, 5), [Hypothesis((), 0.0, False, CacheHandle(enc, 0, 0))])]
    sbs_cycle(session, sets, DecodeConfig(beam_size=3, nucleus=0.0, strategy="msbs"))
    with torch.no_grad():
        logits, _ = model.decode(torch.tensor([[1]]), model.encode(torch.tensor([[4, 5, EOS_ID]])), medusa=False)
    lp = torch.log_softmax(logits[0, 0, 0], -1).numpy()
    top = sorted(range(10), key=lambda t: (-lp[t], t))[:3]
    assert [h.tokens for h in sets[0].beams] == [(t,) for t in top]
    assert session.metrics.model_calls == 1


# --- call accounting --------------------------------------------------------------

SCRIPT = [5 + (i % 10) for i in range(51)]


def test_classic_beam_search_needs_52_calls_for_51_tokens():
    model = ScriptedModel(SCRIPT, 16, 20, heads_correct=False)
    for k in (1, 2):
        hyps, metrics = beam_search(model, [[5, 6]], DecodeConfig(beam_size=k, max_len=100), optimized=False)
        assert hyps[0][0].tokens == tuple(SCRIPT) + (EOS_ID,)
        assert metrics.model_calls == 52


def test_msbs_worst_case_two_tokens_per_two_calls():
    model = ScriptedModel(SCRIPT, 16, 20, heads_correct=False)
    hyps, metrics = sbs_generate(model, [[5, 6]], DecodeConfig(beam_size=1, max_len=100, strategy="msbs"))
    assert hyps[0][0].tokens == tuple(SCRIPT) + (EOS_ID,)
    assert metrics.model_calls == 2 * metrics.cycles == 52


def test_msbs_best_case_commits_m_plus_one_tokens_per_cycle():
    model = ScriptedModel(SCRIPT, 16, 20, heads_correct=True)
    hyps, metrics = sbs_generate(model, [[5, 6]], DecodeConfig(beam_size=1, max_len=100, strategy="msbs"))
    assert hyps[0][0].tokens == tuple(SCRIPT) + (EOS_ID,)
    # 21 + 21 + 10 tokens
    assert metrics.cycles == 3 and metrics.model_calls == 6
    assert metrics.acceptance_rate == 1.0


def test_msbs_two_calls_per_cycle_with_two_beams():
    model = ScriptedModel(SCRIPT, 16, 20, heads_correct=True)
    hyps, metrics = sbs_generate(model, [[5, 6]], DecodeConfig(beam_size=2, max_len=100, strategy="msbs"))
    assert hyps[0][0].tokens == tuple(SCRIPT) + (EOS_ID,)
    assert metrics.model_calls == 2 * metrics.cycles


def test_hsbs_uses_one_call_per_cycle_and_counts_rows():
    src = SCRIPT[:30]
    model = ScriptedModel(SCRIPT, 16, 0, heads_correct=False)
    cfg = DecodeConfig(beam_size=1, max_len=100, strategy="hsbs", n_drafts=3, draft_len=10)
    hyps, metrics = sbs_generate(model, [src], cfg)
    assert hyps[0][0].tokens == tuple(SCRIPT) + (EOS_ID,)
    assert metrics.model_calls == metrics.cycles
    assert max(metrics.batch_sizes) == 3
    assert metrics.accepted_tokens > 0


# --- echo-head equivalence (informational subset; the full check lives in the acceptance suite)


def test_echo_heads_produce_fully_accepted_drafts():
    model = random_toy_model(0)
    _, metrics = sbs_generate(EchoHeads(model), [[4, 5, 6]], DecodeConfig(beam_size=2, max_len=8, nucleus=0.0, strategy="msbs"))
    assert metrics.acceptance_rate == 1.0


# --- predictor --------------------------------------------------------------------


def test_retrosynthesizer_ranks_and_counts_calls():
    vocab = build_vocab(["CC(=O)O", "CN"])
    cfg = ModelConfig(vocab_size=len(vocab), d_model=16, d_ff=32, attn_heads=2, medusa_heads=2, max_len=20)
    predictor = Retrosynthesizer(init_model(cfg), vocab, DecodeConfig(beam_size=3, max_len=6, strategy="msbs"))
    out = predictor.predict(["CC(=O)N", "", "C&"])
    assert predictor.model_calls == 1
    assert len(out[0]) == 3 and out[1] == [] and out[2] == []
    assert [s for _, s in out[0]] == sorted((s for _, s in out[0]), reverse=True)
    assert predictor.metrics.model_calls >= 1


def test_metrics_merge_and_rates():
    a = DecodeMetrics(model_calls=2, drafted_tokens=10, accepted_tokens=7, batch_sizes=[1, 3])
    b = DecodeMetrics(model_calls=1, drafted_tokens=0, accepted_tokens=0, batch_sizes=[2])
    m = a.merge(b)
    assert m.model_calls == 3 and m.acceptance_rate == 0.7 and m.mean_batch_size == 2.0


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ValueError):
        DecodeConfig(nucleus=1.5)
    with pytest.raises(ValueError):
        DecodeConfig(draft_len=0)
    assert DecodeConfig(strategy="msbs").strategy is Strategy.MSBS


def test_draft_types():
    d = Draft((5, 6), DraftSource.MEDUSA)
    assert len(d) == 2
    with pytest.raises(ValueError):
        from specretro.decode import VerificationResult

        VerificationResult(1, None, (False, True))
    assert math.isfinite(0.0) and PAD_ID == 0 and isinstance(DecoderCache, type)
