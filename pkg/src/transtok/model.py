"""Desk-scale text-to-token transducer.

Three encoders feed one joint network:

  * text encoder: embedding table plus two position-wise feed-forward
    blocks (width d -> 4d -> d, pre-norm residual), standing in for a
    conformer stack at this scale;
  * decoder: a single-gate recurrent cell over previously emitted tokens,
    standing in for stacked LSTM layers;
  * reference encoder: mean pool over condition frames plus a linear
    projection, standing in for a full speaker-embedding network.

The joint network projects the concatenated text/decoder states to a hidden
vector, applies conditional layer normalization whose per-unit scale is
1 + W_gamma h_ref (scale only, no shift), a tanh, and a linear map to
token-plus-blank logits.  A second, additive head projects text and decoder
states straight to logits for the window-search loss.

Forward functions are written against the operator surface shared by
ndarrays and autodiff Tensors, so the same code serves inference and
gradient computation.  All math is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tensor, cat, layer_norm, sigmoid, stack, tanh
from .loss import LogitsLattice

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelDims:
    """d_model: embedding and recurrent width.  d_joiner: joint hidden
    width.  d_ref: conditioning embedding width.  ref_frame_dim: raw
    condition frame width.  text_vocab: input symbol count.  token_vocab:
    output token count, excluding blank."""

    d_model: int = 32
    d_joiner: int = 64
    d_ref: int = 16
    ref_frame_dim: int = 8
    text_vocab: int = 16
    token_vocab: int = 32

    @property
    def blank_id(self) -> int:
        return self.token_vocab

    @property
    def sos_id(self) -> int:
        # decoder-embedding row after the (never fed) blank row
        return self.token_vocab + 1

    def validate(self) -> None:
        for name in ("d_model", "d_joiner", "d_ref", "ref_frame_dim", "text_vocab", "token_vocab"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "d_joiner": self.d_joiner,
            "d_ref": self.d_ref,
            "ref_frame_dim": self.ref_frame_dim,
            "text_vocab": self.text_vocab,
            "token_vocab": self.token_vocab,
        }


def param_specs(dims: ModelDims) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every tensor, in checkpoint order.
    Decoder embeddings hold token rows, one unused blank row, then the
    start-of-sequence row."""
    d, h = dims.d_model, dims.d_joiner
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("text_emb", (dims.text_vocab, d), "weight"),
    ]
    for i in (1, 2):
        specs += [
            (f"enc{i}_ln_g", (d,), "one"),
            (f"enc{i}_ln_b", (d,), "zero"),
            (f"enc{i}_w1", (d, 4 * d), "weight"),
            (f"enc{i}_b1", (4 * d,), "zero"),
            (f"enc{i}_w2", (4 * d, d), "weight"),
            (f"enc{i}_b2", (d,), "zero"),
        ]
    specs += [
        ("dec_emb", (dims.token_vocab + 2, d), "weight"),
        ("dec_wz", (2 * d, d), "weight"),
        ("dec_bz", (d,), "zero"),
        ("dec_wh", (2 * d, d), "weight"),
        ("dec_bh", (d,), "zero"),
        ("ref_w", (dims.ref_frame_dim, dims.d_ref), "weight"),
        ("ref_b", (dims.d_ref,), "zero"),
        ("join_w_enc", (d, h), "weight"),
        ("join_w_dec", (d, h), "weight"),
        ("join_b_in", (h,), "zero"),
        ("join_w_gamma", (dims.d_ref, h), "weight"),
        ("join_w_out", (h, dims.token_vocab + 1), "weight"),
        ("join_b_out", (dims.token_vocab + 1,), "zero"),
        ("simple_enc_w", (d, dims.token_vocab + 1), "weight"),
        ("simple_enc_b", (dims.token_vocab + 1,), "zero"),
        ("simple_dec_w", (d, dims.token_vocab + 1), "weight"),
        ("simple_dec_b", (dims.token_vocab + 1,), "zero"),
    ]
    return specs


@dataclass
class ModelParams:
    dims: ModelDims
    tensors: dict[str, np.ndarray]

    def validate(self) -> None:
        self.dims.validate()
        expected = {name: shape for name, shape, _ in param_specs(self.dims)}
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ValueError(f"tensor set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"tensor {name} has shape {self.tensors[name].shape}, expected {shape}"
                )


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in) with fan_in the leading axis;
    biases start at zero and layer-norm gains at one so normalization is
    the identity transform at initialization."""
    dims.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in param_specs(dims):
        if kind == "weight":
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "zero":
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = np.ones(shape)
    return ModelParams(dims=dims, tensors=tensors)


# -- forward pieces, generic over ndarray / Tensor backends -------------


def _encode_text(p, text_ids: np.ndarray):
    x = p["text_emb"][text_ids]
    for i in (1, 2):
        normed = layer_norm(x, LN_EPS) * p[f"enc{i}_ln_g"] + p[f"enc{i}_ln_b"]
        hidden = tanh(normed @ p[f"enc{i}_w1"] + p[f"enc{i}_b1"])
        x = x + (hidden @ p[f"enc{i}_w2"] + p[f"enc{i}_b2"])
    return x


def _encode_reference(p, frames: np.ndarray):
    pooled = np.mean(frames, axis=0)
    return pooled @ p["ref_w"] + p["ref_b"]


def _cell(p, x, h):
    joint = cat([x, h], axis=-1)
    z = sigmoid(joint @ p["dec_wz"] + p["dec_bz"])
    candidate = tanh(joint @ p["dec_wh"] + p["dec_bh"])
    return (1.0 - z) * h + z * candidate


def _decode_states(p, prev_tokens: np.ndarray, d_model: int):
    """Hidden state after consuming each of the T+1 inputs (start symbol
    followed by the target tokens)."""
    embs = p["dec_emb"][prev_tokens]
    h = np.zeros(d_model)
    rows = []
    for t in range(len(prev_tokens)):
        h = _cell(p, embs[t], h)
        rows.append(h)
    return stack(rows, axis=0)


def _joiner_hidden(p, z, h_ref):
    scale = 1.0 + h_ref @ p["join_w_gamma"]
    return tanh(layer_norm(z, LN_EPS) * scale)


def _joiner_lattice(p, h_enc, h_dec, h_ref):
    U = h_enc.shape[0]
    T1 = h_dec.shape[0]
    e = (h_enc @ p["join_w_enc"]).reshape(U, 1, -1)
    d = (h_dec @ p["join_w_dec"]).reshape(1, T1, -1)
    z = e + d + p["join_b_in"]
    return _joiner_hidden(p, z, h_ref) @ p["join_w_out"] + p["join_b_out"]


def _simple_projections(p, h_enc, h_dec):
    enc_proj = h_enc @ p["simple_enc_w"] + p["simple_enc_b"]
    dec_proj = h_dec @ p["simple_dec_w"] + p["simple_dec_b"]
    return enc_proj, dec_proj


# -- public inference API -----------------------------------------------


def _check_text(dims: ModelDims, text) -> np.ndarray:
    ids = np.asarray(text, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] < 1:
        raise ValueError("text must be a non-empty 1-d id sequence")
    if ids.min() < 0 or ids.max() >= dims.text_vocab:
        raise ValueError("text symbol id out of range")
    return ids


def _check_frames(dims: ModelDims, frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != dims.ref_frame_dim:
        raise ValueError(
            f"reference frames must have shape (n >= 1, {dims.ref_frame_dim}), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("reference frames must be finite")
    return arr


def _check_target(dims: ModelDims, target) -> np.ndarray:
    y = np.asarray(target, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("target must be 1-d")
    if y.size and (y.min() < 0 or y.max() >= dims.token_vocab):
        raise ValueError("target token id out of range")
    return y


def encode_text(params: ModelParams, text) -> np.ndarray:
    ids = _check_text(params.dims, text)
    return _encode_text(params.tensors, ids)


def encode_reference(params: ModelParams, frames) -> np.ndarray:
    return _encode_reference(params.tensors, _check_frames(params.dims, frames))


@dataclass
class DecoderState:
    """Recurrent hidden vector plus the id of the last consumed token."""

    hidden: np.ndarray
    last_token: int


def initial_decoder_state(dims: ModelDims) -> DecoderState:
    return DecoderState(hidden=np.zeros(dims.d_model), last_token=dims.sos_id)


def decode_step(params: ModelParams, prev_token: int, state: DecoderState):
    """Advance the decoder by one consumed token; blank is not a valid
    input because blank arcs never feed the decoder."""
    dims = params.dims
    if prev_token == dims.blank_id:
        raise ValueError("blank cannot be fed to the decoder")
    if not (0 <= prev_token < dims.token_vocab or prev_token == dims.sos_id):
        raise ValueError(f"token id {prev_token} out of decoder range")
    p = params.tensors
    h = _cell(p, p["dec_emb"][prev_token], state.hidden)
    return h, DecoderState(hidden=h, last_token=prev_token)


def joiner(params: ModelParams, h_enc_u, h_dec_t, h_ref) -> np.ndarray:
    """Logits over tokens plus blank for a single lattice node."""
    p = params.tensors
    z = h_enc_u @ p["join_w_enc"] + h_dec_t @ p["join_w_dec"] + p["join_b_in"]
    return _joiner_hidden(p, z, h_ref) @ p["join_w_out"] + p["join_b_out"]


def forward_outputs(params: ModelParams, text, target, ref_frames):
    """Teacher-forced forward pass on plain arrays: the main logits lattice
    plus the additive head's two projections."""
    dims = params.dims
    ids = _check_text(dims, text)
    y = _check_target(dims, target)
    frames = _check_frames(dims, ref_frames)
    p = params.tensors
    h_enc = _encode_text(p, ids)
    h_ref = _encode_reference(p, frames)
    prev = np.concatenate([[dims.sos_id], y])
    h_dec = _decode_states(p, prev, dims.d_model)
    main = _joiner_lattice(p, h_enc, h_dec, h_ref)
    enc_proj, dec_proj = _simple_projections(p, h_enc, h_dec)
    return main, enc_proj, dec_proj


def full_logits_lattice(params: ModelParams, text, target, ref_frames) -> LogitsLattice:
    """Teacher-forced logits for every node (u, t)."""
    main, _, _ = forward_outputs(params, text, target, ref_frames)
    return LogitsLattice(logits=main)


# -- training graph ------------------------------------------------------


@dataclass
class ForwardGraph:
    """One utterance's forward pass on the Tensor backend.  Gradients are
    seeded on main_logits / enc_proj / dec_proj and swept back to params."""

    params: dict[str, Tensor]
    h_enc: Tensor
    h_dec: Tensor
    h_ref: Tensor
    main_logits: Tensor
    enc_proj: Tensor
    dec_proj: Tensor

    def outputs(self) -> list[Tensor]:
        return [self.main_logits, self.enc_proj, self.dec_proj]

    def param_grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.params.items()}


def build_graph(params: ModelParams, text, target, ref_frames) -> ForwardGraph:
    dims = params.dims
    ids = _check_text(dims, text)
    y = _check_target(dims, target)
    frames = _check_frames(dims, ref_frames)
    pt = {name: Tensor(arr) for name, arr in params.tensors.items()}
    h_enc = _encode_text(pt, ids)
    h_ref = _encode_reference(pt, frames)
    prev = np.concatenate([[dims.sos_id], y])
    h_dec = _decode_states(pt, prev, dims.d_model)
    main_logits = _joiner_lattice(pt, h_enc, h_dec, h_ref)
    enc_proj, dec_proj = _simple_projections(pt, h_enc, h_dec)
    return ForwardGraph(
        params=pt,
        h_enc=h_enc,
        h_dec=h_dec,
        h_ref=h_ref,
        main_logits=main_logits,
        enc_proj=enc_proj,
        dec_proj=dec_proj,
    )


def backprop(params: ModelParams, text, target, ref_frames, grad_logits) -> dict[str, np.ndarray]:
    """Parameter gradients of sum(grad_logits * main logits).  The additive
    head is not part of this path, so its tensors get zero gradient, as
    does the unused blank row of the decoder embedding."""
    g = build_graph(params, text, target, ref_frames)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != g.main_logits.data.shape:
        raise ValueError(
            f"grad shape {grad_logits.shape} does not match logits {g.main_logits.data.shape}"
        )
    g.main_logits.grad += grad_logits
    autodiff.backward([g.main_logits])
    return g.param_grads()


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    """First and second moment accumulators plus the shared step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.tensors.items()},
        v={k: np.zeros_like(a) for k, a in params.tensors.items()},
        step=0,
    )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected update, in place, elementwise."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("moment decays must lie in [0, 1)")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, arr in params.tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- persistence ----------------------------------------------------------


def save_checkpoint(params: ModelParams, path: str, step: int = 0) -> None:
    params.validate()
    payload = {
        "version": CHECKPOINT_VERSION,
        "dims": params.dims.to_dict(),
        "tensors": {name: params.tensors[name].ravel().tolist() for name, _, _ in param_specs(params.dims)},
        "step": step,
    }
    with open(path, "w") as f:
        json.dump(payload, f)
        f.write("\n")


def load_checkpoint(path: str) -> tuple[ModelParams, int]:
    with open(path) as f:
        payload = json.load(f)
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')!r}")
    try:
        dims = ModelDims(**payload["dims"])
        raw = payload["tensors"]
        step = int(payload["step"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for name, shape, _ in param_specs(dims):
        if name not in raw:
            raise ValueError(f"checkpoint missing tensor {name}")
        flat = np.asarray(raw[name], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"tensor {name} has {flat.size} values, expected {np.prod(shape)}")
        tensors[name] = flat.reshape(shape)
    params = ModelParams(dims=dims, tensors=tensors)
    params.validate()
    return params, step
