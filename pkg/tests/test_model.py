"""Architecture contracts: what each encoder must be invariant to, what the
conditioning scale must control, and that the whole graph differentiates
correctly and round-trips through checkpoints."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transtok import autodiff
from transtok.model import (
    ModelDims,
    ModelParams,
    adam_step,
    backprop,
    build_graph,
    decode_step,
    encode_reference,
    encode_text,
    forward_outputs,
    full_logits_lattice,
    init_adam,
    init_params,
    initial_decoder_state,
    joiner,
    load_checkpoint,
    param_specs,
    save_checkpoint,
)

SMALL = ModelDims(d_model=6, d_joiner=8, d_ref=4, ref_frame_dim=3, text_vocab=5, token_vocab=6)


@pytest.fixture
def params():
    return init_params(SMALL, seed=0)


def rand_frames(rng, n=3):
    return rng.normal(size=(n, SMALL.ref_frame_dim))


# -- dims and initialization ----------------------------------------------


def test_special_ids_follow_token_vocab():
    dims = ModelDims()
    assert dims.blank_id == 32
    assert dims.sos_id == 33
    assert SMALL.blank_id == 6
    assert SMALL.sos_id == 7


def test_dims_reject_nonpositive():
    with pytest.raises(ValueError):
        ModelDims(d_model=0).validate()


def test_init_respects_specs(params):
    for name, shape, kind in param_specs(SMALL):
        arr = params.tensors[name]
        assert arr.shape == shape
        if kind == "weight":
            bound = 1.0 / np.sqrt(shape[0])
            assert np.all(np.abs(arr) <= bound)
            assert arr.std() > 0
        elif kind == "zero":
            assert np.all(arr == 0.0)
        else:
            assert np.all(arr == 1.0)


def test_init_deterministic_per_seed():
    a = init_params(SMALL, seed=7)
    b = init_params(SMALL, seed=7)
    c = init_params(SMALL, seed=8)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    assert any(not np.array_equal(a.tensors[k], c.tensors[k]) for k in a.tensors)


# -- text encoder -----------------------------------------------------------


def test_zeroed_blocks_pass_embeddings_through(params):
    for i in (1, 2):
        params.tensors[f"enc{i}_w2"][:] = 0.0
    out = encode_text(params, [0, 3, 1])
    np.testing.assert_array_equal(out, params.tensors["text_emb"][[0, 3, 1]])


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(5))))
def test_encoder_is_position_equivariant(perm):
    params = init_params(SMALL, seed=1)
    text = [0, 1, 2, 3, 4]
    base = encode_text(params, text)
    permuted = encode_text(params, [text[i] for i in perm])
    np.testing.assert_allclose(permuted, base[perm], rtol=0, atol=0)


def test_encoder_rejects_bad_ids(params):
    with pytest.raises(ValueError):
        encode_text(params, [])
    with pytest.raises(ValueError):
        encode_text(params, [SMALL.text_vocab])
    with pytest.raises(ValueError):
        encode_text(params, [-1])


# -- reference encoder ------------------------------------------------------


def test_reference_ignores_frame_order_and_duplication(params):
    rng = np.random.default_rng(2)
    frames = rand_frames(rng, n=4)
    base = encode_reference(params, frames)
    np.testing.assert_allclose(encode_reference(params, frames[::-1]), base, atol=1e-12)
    np.testing.assert_allclose(
        encode_reference(params, np.tile(frames, (3, 1))), base, atol=1e-12
    )


def test_reference_responds_to_frame_values(params):
    rng = np.random.default_rng(3)
    frames = rand_frames(rng)
    assert not np.allclose(encode_reference(params, frames), encode_reference(params, 2 * frames))


def test_reference_rejects_bad_frames(params):
    with pytest.raises(ValueError):
        encode_reference(params, np.zeros((0, SMALL.ref_frame_dim)))
    with pytest.raises(ValueError):
        encode_reference(params, np.zeros((2, SMALL.ref_frame_dim + 1)))
    with pytest.raises(ValueError):
        encode_reference(params, np.full((2, SMALL.ref_frame_dim), np.nan))


# -- decoder ------------------------------------------------------------------


def test_decoder_rejects_blank_and_out_of_range(params):
    state = initial_decoder_state(SMALL)
    with pytest.raises(ValueError):
        decode_step(params, SMALL.blank_id, state)
    with pytest.raises(ValueError):
        decode_step(params, SMALL.sos_id + 1, state)
    with pytest.raises(ValueError):
        decode_step(params, -1, state)


def test_decoder_consumes_tokens_and_sos(params):
    state = initial_decoder_state(SMALL)
    assert state.last_token == SMALL.sos_id
    assert np.all(state.hidden == 0.0)
    h, state = decode_step(params, SMALL.sos_id, state)
    assert h.shape == (SMALL.d_model,)
    h2, state = decode_step(params, 0, state)
    assert state.last_token == 0
    assert not np.allclose(h, h2)


def test_zero_candidate_weights_freeze_hidden_at_zero(params):
    # h' = (1 - z) h + z tanh(...); a zero candidate map keeps h' = 0 from h = 0
    params.tensors["dec_wh"][:] = 0.0
    params.tensors["dec_bh"][:] = 0.0
    state = initial_decoder_state(SMALL)
    for tok in (SMALL.sos_id, 1, 4, 2):
        h, state = decode_step(params, tok, state)
        assert np.all(h == 0.0)


def test_decoder_state_depends_on_history(params):
    s0 = initial_decoder_state(SMALL)
    _, sa = decode_step(params, 0, s0)
    _, sb = decode_step(params, 1, s0)
    ha, _ = decode_step(params, 2, sa)
    hb, _ = decode_step(params, 2, sb)
    assert not np.allclose(ha, hb)


# -- joiner -------------------------------------------------------------------


def teacher_decoder_rows(params, y):
    """Hidden row per lattice time index: row 0 after the start symbol,
    row t after the first t target tokens."""
    state = initial_decoder_state(params.dims)
    h, state = decode_step(params, params.dims.sos_id, state)
    rows = [h]
    for tok in y:
        h, state = decode_step(params, int(tok), state)
        rows.append(h)
    return np.stack(rows, axis=0)


def test_full_lattice_matches_per_node_joiner(params):
    rng = np.random.default_rng(4)
    text = [0, 2, 4]
    y = [1, 5, 0]
    frames = rand_frames(rng)
    lat = full_logits_lattice(params, text, y, frames)
    h_enc = encode_text(params, text)
    h_ref = encode_reference(params, frames)
    h_dec = teacher_decoder_rows(params, y)
    for u in range(len(text)):
        for t in range(len(y) + 1):
            np.testing.assert_allclose(
                lat.logits[u, t], joiner(params, h_enc[u], h_dec[t], h_ref), atol=1e-12
            )


def test_zero_gamma_removes_reference_influence(params):
    rng = np.random.default_rng(5)
    params.tensors["join_w_gamma"][:] = 0.0
    h_enc = encode_text(params, [1])[0]
    state = initial_decoder_state(SMALL)
    h_dec, _ = decode_step(params, SMALL.sos_id, state)
    a = joiner(params, h_enc, h_dec, encode_reference(params, rand_frames(rng)))
    b = joiner(params, h_enc, h_dec, encode_reference(params, rand_frames(rng) + 5.0))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_reference_shifts_logits_through_gamma(params):
    rng = np.random.default_rng(6)
    h_enc = encode_text(params, [1])[0]
    state = initial_decoder_state(SMALL)
    h_dec, _ = decode_step(params, SMALL.sos_id, state)
    h_ref = encode_reference(params, rand_frames(rng))
    assert not np.allclose(
        joiner(params, h_enc, h_dec, h_ref), joiner(params, h_enc, h_dec, 2.0 * h_ref)
    )


def test_layer_norm_centers_and_scales():
    rng = np.random.default_rng(7)
    x = rng.normal(3.0, 5.0, size=(4, 9))
    out = autodiff.layer_norm(x, 1e-5)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_logits_lattice_shape(params):
    lat = full_logits_lattice(params, [0, 1], [2, 3, 4], np.zeros((2, SMALL.ref_frame_dim)))
    assert lat.logits.shape == (2, 4, SMALL.token_vocab + 1)


# -- gradients -----------------------------------------------------------------


def test_backprop_zeroes_blank_row_and_simple_head(params):
    rng = np.random.default_rng(8)
    text, y = [0, 1, 2], np.asarray([3, 4])
    frames = rand_frames(rng)
    seed = rng.normal(size=(3, 3, SMALL.token_vocab + 1))
    grads = backprop(params, text, y, frames, seed)
    assert set(grads) == set(params.tensors)
    assert np.all(grads["dec_emb"][SMALL.blank_id] == 0.0)
    for name in ("simple_enc_w", "simple_enc_b", "simple_dec_w", "simple_dec_b"):
        assert np.all(grads[name] == 0.0)
    assert any(np.any(grads[k] != 0.0) for k in grads)


def test_backprop_matches_finite_differences(params):
    rng = np.random.default_rng(9)
    text, y = [2, 0], np.asarray([1, 5])
    frames = rand_frames(rng, n=2)
    seed = rng.normal(size=(2, 3, SMALL.token_vocab + 1))
    grads = backprop(params, text, y, frames, seed)

    def objective():
        main, _, _ = forward_outputs(params, text, y, frames)
        return float(np.sum(main * seed))

    h = 1e-6
    rng2 = np.random.default_rng(10)
    checked = 0
    for name in ("text_emb", "enc1_w1", "dec_wz", "dec_emb", "ref_w", "join_w_gamma", "join_w_out"):
        arr = params.tensors[name]
        for _ in range(5):
            idx = tuple(int(rng2.integers(0, s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            lp = objective()
            arr[idx] = old - h
            lm = objective()
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            scale = max(abs(fd), abs(grads[name][idx]), 1e-3)
            assert abs(fd - grads[name][idx]) / scale < 1e-4, (name, idx)
            checked += 1
    assert checked == 35


def test_graph_exposes_both_heads(params):
    rng = np.random.default_rng(11)
    g = build_graph(params, [0, 1], np.asarray([2]), rand_frames(rng))
    assert g.main_logits.data.shape == (2, 2, SMALL.token_vocab + 1)
    assert g.enc_proj.data.shape == (2, SMALL.token_vocab + 1)
    assert g.dec_proj.data.shape == (2, SMALL.token_vocab + 1)
    main, enc_proj, dec_proj = forward_outputs(params, [0, 1], np.asarray([2]), rand_frames(np.random.default_rng(11)))
    np.testing.assert_allclose(g.main_logits.data, main, atol=1e-12)
    np.testing.assert_allclose(g.enc_proj.data, enc_proj, atol=1e-12)
    np.testing.assert_allclose(g.dec_proj.data, dec_proj, atol=1e-12)


# -- optimizer -----------------------------------------------------------------


def test_adam_zero_gradient_leaves_params(params):
    before = {k: v.copy() for k, v in params.tensors.items()}
    opt = init_adam(params)
    zero = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    adam_step(params, zero, opt, lr=0.1)
    assert opt.step == 1
    for k in before:
        np.testing.assert_array_equal(params.tensors[k], before[k])


def test_adam_first_step_magnitude(params):
    # with bias correction the first update is lr * g / (|g| + eps)
    opt = init_adam(params)
    ones = {k: np.ones_like(v) for k, v in params.tensors.items()}
    before = {k: v.copy() for k, v in params.tensors.items()}
    adam_step(params, ones, opt, lr=1e-2)
    for k in before:
        step = before[k] - params.tensors[k]
        np.testing.assert_allclose(step, 1e-2, rtol=1e-6)


def test_adam_rejects_bad_lr(params):
    opt = init_adam(params)
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    with pytest.raises(ValueError):
        adam_step(params, grads, opt, lr=0.0)


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, params):
    path = str(tmp_path / "ck.json")
    save_checkpoint(params, path, step=17)
    loaded, step = load_checkpoint(path)
    assert step == 17
    assert loaded.dims == SMALL
    for k, v in params.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[k], v)


def test_checkpoint_rejects_bad_payloads(tmp_path, params):
    path = str(tmp_path / "ck.json")
    save_checkpoint(params, path)
    payload = json.loads(open(path).read())

    bad = dict(payload, version=99)
    p1 = tmp_path / "v.json"
    p1.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_checkpoint(str(p1))

    bad = json.loads(json.dumps(payload))
    name = next(iter(bad["tensors"]))
    bad["tensors"][name] = bad["tensors"][name][:-1]
    p2 = tmp_path / "t.json"
    p2.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_checkpoint(str(p2))

    bad = json.loads(json.dumps(payload))
    bad["tensors"].popitem()
    p3 = tmp_path / "m.json"
    p3.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_checkpoint(str(p3))


def test_params_validate_catches_shape_drift(params):
    params.tensors["ref_b"] = np.zeros(SMALL.d_ref + 1)
    with pytest.raises(ValueError):
        params.validate()
